// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
//
// Parameter storage and the layers shared by both encoders.
#pragma once

#include <cstddef>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "ciffuse/rng.hpp"
#include "ciffuse/tensor.hpp"

namespace ciffuse::nn {

// Owns parameters with stable addresses, kept in registration order.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Parameter& add(std::string name, Shape shape);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  Parameter& get(const std::string& name);

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t total_size() const;
  void zero_grad();

 private:
  std::deque<Parameter> params_;
  std::unordered_map<std::string, Parameter*> by_name_;
};

void init_uniform(Parameter& p, Rng& rng, double limit);
void init_normal(Parameter& p, Rng& rng, double stddev);
void init_constant(Parameter& p, double v);

// Places parameters on a tape once per forward pass. With grad disabled the
// values enter as constants, so inference builds no backward closures.
class Binder {
 public:
  explicit Binder(Tape& tape, bool grad_enabled = true) : tape_(tape), grad_(grad_enabled) {}
  Tensor operator()(Parameter& p);
  Tape& tape() const { return tape_; }
  bool grad_enabled() const { return grad_; }

 private:
  Tape& tape_;
  bool grad_;
  std::unordered_map<const Parameter*, Tensor> cache_;
};

struct Linear {
  Parameter* weight = nullptr;  // [in × out]
  Parameter* bias = nullptr;    // [out]

  Linear() = default;
  Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out);
  void init(Rng& rng, double limit = 0.08);
  Tensor operator()(Binder& bind, Tensor x) const;
  std::size_t in() const { return weight->shape[0]; }
  std::size_t out() const { return weight->shape[1]; }
};

struct LayerNorm {
  Parameter* gain = nullptr;
  Parameter* bias = nullptr;

  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, std::size_t dim);
  void init();
  Tensor operator()(Binder& bind, Tensor x) const;
};

// Pre-norm transformer block: x + MHA(LN(x)), then + FFN(LN(.)).
// No causal mask: every position attends to every position.
struct TransformerBlock {
  std::size_t dim = 0;
  std::size_t heads = 1;
  LayerNorm ln_attn, ln_ffn;
  Linear q, k, v, o;
  Linear ffn_in, ffn_out;

  TransformerBlock() = default;
  TransformerBlock(ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads,
                   std::size_t ffn_dim);
  void init(Rng& rng);
  Tensor operator()(Binder& bind, Tensor x) const;
};

// Sinusoidal position table [rows × dim].
std::vector<double> sinusoidal_positions(std::size_t rows, std::size_t dim);

}  // namespace ciffuse::nn
