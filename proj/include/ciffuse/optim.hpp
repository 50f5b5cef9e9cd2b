// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ciffuse/nn.hpp"
#include "ciffuse/tensor.hpp"

namespace ciffuse::optim {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;  // one buffer per parameter, same order
  std::vector<std::vector<double>> v;

  void reset(std::span<Parameter* const> params);
};

// p -= lr * m_hat / (sqrt(v_hat) + eps), with bias-corrected moments.
// Throws NumericDomainError (before touching anything) on a NaN/Inf gradient.
void adam_step(std::span<Parameter* const> params, AdamState& state, double lr);

// Rescales gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping. max_norm <= 0 disables clipping.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

// Per-item loss on its own tape. The Binder places parameters on that tape.
using ItemLoss = std::function<Tensor(Tape&, nn::Binder&, std::size_t item)>;

struct BatchResult {
  std::vector<double> losses;  // per item, unscaled
};

// Adds d(mean item loss)/d(params) into Parameter::grad. Items run on
// independent tapes; with `parallel` they are spread over OpenMP threads.
// Gradients are always reduced in item order, so the serial and parallel
// paths produce bit-identical results.
BatchResult accumulate_batch_gradients(nn::ParamStore& store, std::size_t items,
                                       const ItemLoss& loss, bool parallel);

}  // namespace ciffuse::optim
