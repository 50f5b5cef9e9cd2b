// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
#include "ciffuse/nn.hpp"

#include <cmath>

#include "ciffuse/errors.hpp"

namespace ciffuse::nn {

Parameter& ParamStore::add(std::string name, Shape shape) {
  if (by_name_.count(name)) throw ConfigError("duplicate parameter name " + name);
  params_.emplace_back(name, std::move(shape));
  by_name_[std::move(name)] = &params_.back();
  return params_.back();
}

Parameter* ParamStore::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

const Parameter* ParamStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

Parameter& ParamStore::get(const std::string& name) {
  Parameter* p = find(name);
  if (!p) throw ConfigError("unknown parameter " + name);
  return *p;
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> ParamStore::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void init_uniform(Parameter& p, Rng& rng, double limit) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& x : p.value) x = dist(rng);
}

void init_normal(Parameter& p, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& x : p.value) x = dist(rng);
}

void init_constant(Parameter& p, double v) { std::fill(p.value.begin(), p.value.end(), v); }

Tensor Binder::operator()(Parameter& p) {
  auto it = cache_.find(&p);
  if (it != cache_.end()) return it->second;
  Tensor t = grad_ ? tape_.param(p) : tape_.constant(p.shape, p.value);
  cache_.emplace(&p, t);
  return t;
}

Linear::Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out)
    : weight(&store.add(name + ".weight", {in, out})), bias(&store.add(name + ".bias", {out})) {}

void Linear::init(Rng& rng, double limit) {
  init_uniform(*weight, rng, limit);
  init_constant(*bias, 0.0);
}

Tensor Linear::operator()(Binder& bind, Tensor x) const {
  return add(matmul(x, bind(*weight)), bind(*bias));
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, std::size_t dim)
    : gain(&store.add(name + ".gain", {dim})), bias(&store.add(name + ".bias", {dim})) {
  init();
}

void LayerNorm::init() {
  init_constant(*gain, 1.0);
  init_constant(*bias, 0.0);
}

Tensor LayerNorm::operator()(Binder& bind, Tensor x) const {
  return layer_norm(x, bind(*gain), bind(*bias));
}

TransformerBlock::TransformerBlock(ParamStore& store, const std::string& name, std::size_t dim_,
                                   std::size_t heads_, std::size_t ffn_dim)
    : dim(dim_),
      heads(heads_),
      ln_attn(store, name + ".ln_attn", dim_),
      ln_ffn(store, name + ".ln_ffn", dim_),
      q(store, name + ".attn.q", dim_, dim_),
      k(store, name + ".attn.k", dim_, dim_),
      v(store, name + ".attn.v", dim_, dim_),
      o(store, name + ".attn.o", dim_, dim_),
      ffn_in(store, name + ".ffn.in", dim_, ffn_dim),
      ffn_out(store, name + ".ffn.out", ffn_dim, dim_) {
  if (heads == 0 || dim % heads != 0)
    throw ConfigError(name + ": width " + std::to_string(dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
}

void TransformerBlock::init(Rng& rng) {
  ln_attn.init();
  ln_ffn.init();
  for (Linear* l : {&q, &k, &v, &o, &ffn_in, &ffn_out}) l->init(rng);
}

Tensor TransformerBlock::operator()(Binder& bind, Tensor x) const {
  Tensor h = ln_attn(bind, x);
  Tensor qs = q(bind, h), ks = k(bind, h), vs = v(bind, h);
  const std::size_t dh = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor attn;
  if (heads == 1) {
    attn = matmul(softmax_rows(scale(matmul(qs, transpose(ks)), inv_sqrt)), vs);
  } else {
    std::vector<Tensor> parts;
    for (std::size_t i = 0; i < heads; ++i) {
      Tensor qh = slice_cols(qs, i * dh, (i + 1) * dh);
      Tensor kh = slice_cols(ks, i * dh, (i + 1) * dh);
      Tensor vh = slice_cols(vs, i * dh, (i + 1) * dh);
      parts.push_back(matmul(softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt)), vh));
    }
    attn = concat_cols(parts);
  }
  Tensor x1 = add(x, o(bind, attn));
  Tensor f = ffn_out(bind, relu(ffn_in(bind, ln_ffn(bind, x1))));
  return add(x1, f);
}

std::vector<double> sinusoidal_positions(std::size_t rows, std::size_t dim) {
  std::vector<double> pe(rows * dim);
  for (std::size_t pos = 0; pos < rows; ++pos)
    for (std::size_t i = 0; i < dim; ++i) {
      const double expo = static_cast<double>(2 * (i / 2)) / static_cast<double>(dim);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, expo);
      pe[pos * dim + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

}  // namespace ciffuse::nn
