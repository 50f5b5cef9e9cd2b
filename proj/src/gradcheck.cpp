// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
#include "ciffuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ciffuse/rng.hpp"

namespace ciffuse {

namespace {

std::vector<std::size_t> pick_coords(std::size_t n, const GradCheckOptions& opts,
                                     std::uint64_t salt) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (opts.max_coords == 0 || opts.max_coords >= n) return idx;
  Rng rng = make_rng(opts.seed, {salt});
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(opts.max_coords);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void score(GradCheckReport& r, double analytic, double numeric, const GradCheckOptions& opts) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), opts.floor});
  const double rel = std::fabs(analytic - numeric) / denom;
  ++r.coords;
  if (!(rel <= r.max_rel_err)) {  // also catches NaN
    r.max_rel_err = std::isnan(rel) ? INFINITY : rel;
    r.worst_analytic = analytic;
    r.worst_numeric = numeric;
  }
  if (!(rel < opts.tolerance)) r.passed = false;
}

}  // namespace

GradCheckReport check_gradients(std::string name, const LossFn& loss, std::vector<GradInput> inputs,
                                const GradCheckOptions& opts) {
  GradCheckReport report;
  report.name = std::move(name);

  auto evaluate = [&](bool with_grad, std::vector<std::vector<double>>* grads) {
    Tape tape;
    std::vector<Tensor> vars;
    vars.reserve(inputs.size());
    for (const auto& in : inputs) vars.push_back(tape.variable(in.shape, in.values));
    Tensor l = loss(tape, vars);
    const double v = l.item();
    if (with_grad) {
      tape.backward(l);
      for (const auto& x : vars) grads->emplace_back(x.grad().begin(), x.grad().end());
    }
    return v;
  };

  std::vector<std::vector<double>> analytic;
  evaluate(true, &analytic);

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i : pick_coords(inputs[k].values.size(), opts, k)) {
      const double orig = inputs[k].values[i];
      inputs[k].values[i] = orig + opts.eps;
      const double up = evaluate(false, nullptr);
      inputs[k].values[i] = orig - opts.eps;
      const double down = evaluate(false, nullptr);
      inputs[k].values[i] = orig;
      score(report, analytic[k][i], (up - down) / (2.0 * opts.eps), opts);
    }
  }
  return report;
}

GradCheckReport check_param_gradients(std::string name, const std::function<Tensor(Tape&)>& loss,
                                      std::span<Parameter* const> params,
                                      const GradCheckOptions& opts) {
  GradCheckReport report;
  report.name = std::move(name);

  std::vector<std::vector<double>> analytic;
  {
    for (auto* p : params) p->zero_grad();
    Tape tape;
    Tensor l = loss(tape);
    tape.backward(l);
    tape.accumulate_param_grads();
    for (auto* p : params) analytic.push_back(p->grad);
  }
  auto evaluate = [&] {
    Tape tape;
    return loss(tape).item();
  };

  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& values = params[k]->value;
    for (std::size_t i : pick_coords(values.size(), opts, k)) {
      const double orig = values[i];
      values[i] = orig + opts.eps;
      const double up = evaluate();
      values[i] = orig - opts.eps;
      const double down = evaluate();
      values[i] = orig;
      score(report, analytic[k][i], (up - down) / (2.0 * opts.eps), opts);
    }
  }
  return report;
}

}  // namespace ciffuse
