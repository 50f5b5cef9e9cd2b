// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
#include "ciffuse/optim.hpp"

#include <cmath>
#include <exception>
#include <unordered_map>

#include "ciffuse/errors.hpp"

namespace ciffuse::optim {

void AdamState::reset(std::span<Parameter* const> params) {
  step = 0;
  m.clear();
  v.clear();
  for (auto* p : params) {
    m.emplace_back(p->size(), 0.0);
    v.emplace_back(p->size(), 0.0);
  }
}

void adam_step(std::span<Parameter* const> params, AdamState& state, double lr) {
  if (state.m.size() != params.size()) state.reset(params);
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (state.m[k].size() != params[k]->size())
      throw ShapeError("adam_step: moment buffer does not match " + params[k]->name);
    for (double g : params[k]->grad)
      if (!std::isfinite(g))
        throw NumericDomainError("adam_step: non-finite gradient in " + params[k]->name);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p.value[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  double sq = 0.0;
  for (auto* p : params)
    for (double g : p->grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto* p : params)
      for (double& g : p->grad) g *= f;
  }
  return norm;
}

BatchResult accumulate_batch_gradients(nn::ParamStore& store, std::size_t items,
                                       const ItemLoss& loss, bool parallel) {
  BatchResult result;
  result.losses.assign(items, 0.0);
  if (items == 0) return result;
  auto params = store.all();
  std::unordered_map<const Parameter*, std::size_t> index;
  for (std::size_t k = 0; k < params.size(); ++k) index[params[k]] = k;
  const double inv = 1.0 / static_cast<double>(items);

  // grads[item][param] (empty when the item never touched that parameter)
  std::vector<std::vector<std::vector<double>>> grads(items);
  std::vector<std::exception_ptr> errors(items);

  auto run_item = [&](std::size_t i) {
    try {
      Tape tape;
      nn::Binder bind(tape, true);
      Tensor l = loss(tape, bind, i);
      result.losses[i] = l.item();
      tape.backward(scale(l, inv));
      grads[i].resize(params.size());
      for (auto& [p, g] : tape.param_grads()) {
        auto& dst = grads[i][index.at(p)];
        if (dst.empty()) dst.assign(g.size(), 0.0);
        for (std::size_t j = 0; j < g.size(); ++j) dst[j] += g[j];
      }
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  if (parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (long long i = 0; i < static_cast<long long>(items); ++i) run_item(static_cast<std::size_t>(i));
  } else {
    for (std::size_t i = 0; i < items; ++i) run_item(i);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (std::size_t i = 0; i < items; ++i)
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto& g = grads[i][k];
      if (g.empty()) continue;
      auto& dst = params[k]->grad;
      for (std::size_t j = 0; j < g.size(); ++j) dst[j] += g[j];
    }
  return result;
}

}  // namespace ciffuse::optim
