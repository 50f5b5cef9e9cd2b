// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ciffuse/gradcheck.hpp"

namespace ciffuse {

struct GradSuiteEntry {
  std::string op;
  std::size_t instances = 0;
  std::size_t coords = 0;
  double max_rel_err = 0.0;
  bool passed = true;
};

// Finite-difference checks of every differentiable op, the CIF and CTC
// losses, both encoders and the full fused training loss, each on
// `instances` seeded random instances.
std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed, std::size_t instances = 10,
                                               const GradCheckOptions& opts = {});

}  // namespace ciffuse
