// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
//
// Central finite-difference gradient checking. Only forward evaluations are
// used on the numeric side, so the check is independent of every backward
// rule it verifies.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ciffuse/tensor.hpp"

namespace ciffuse {

struct GradCheckOptions {
  double eps = 1e-6;
  double tolerance = 1e-4;  // on the relative error below
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  // Below the floor it degrades to an absolute error scaled by 1/floor.
  double floor = 1e-3;
  // Coordinates checked per input (all when 0); a seeded random subset otherwise.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  std::string name;
  std::size_t coords = 0;
  double max_rel_err = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = true;
};

struct GradInput {
  Shape shape;
  std::vector<double> values;
};

using LossFn = std::function<Tensor(Tape&, std::span<const Tensor>)>;

// Checks d loss / d inputs for a loss built from freshly created variables.
GradCheckReport check_gradients(std::string name, const LossFn& loss, std::vector<GradInput> inputs,
                                const GradCheckOptions& opts = {});

// Checks d loss / d params where `loss` reads the parameters through Tape::param.
// Parameter values are perturbed in place and restored afterwards.
GradCheckReport check_param_gradients(std::string name, const std::function<Tensor(Tape&)>& loss,
                                      std::span<Parameter* const> params,
                                      const GradCheckOptions& opts = {});

}  // namespace ciffuse
