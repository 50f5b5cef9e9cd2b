// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
#pragma once

#include <span>
#include <vector>

#include "ciffuse/tensor.hpp"

namespace ciffuse::ctc {

struct Target {
  std::vector<int> tokens;  // without blanks
  int blank = 0;
};

struct LossResult {
  Tensor loss;            // scalar; +inf when no alignment exists
  bool feasible = true;   // false => loss is +inf and its gradient is zero
};

// Negative log-likelihood of `target` under per-frame log-probabilities
// log_probs[T×V] (rows already log-softmax normalised), summed over every
// blank-augmented monotonic alignment. Log-space forward recursion; the
// backward pass uses the matching beta recursion.
LossResult ctc_loss(Tensor log_probs, const Target& target);

// Per-frame argmax (first index on ties), collapse repeats, drop blanks.
std::vector<int> greedy_decode(std::span<const double> log_probs, std::size_t frames,
                               std::size_t vocab, int blank);

}  // namespace ciffuse::ctc
