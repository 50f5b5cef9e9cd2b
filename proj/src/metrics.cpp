// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
#include "ciffuse/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace ciffuse::metrics {

std::size_t edit_distance(std::span<const int> hyp, std::span<const int> ref) {
  std::vector<std::size_t> row(ref.size() + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  for (std::size_t i = 1; i <= hyp.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= ref.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({up + 1, row[j - 1] + 1, diag + (hyp[i - 1] == ref[j - 1] ? 0u : 1u)});
      diag = up;
    }
  }
  return row[ref.size()];
}

double corpus_error_rate(std::span<const Pair> pairs) {
  std::size_t errors = 0, total = 0;
  for (const auto& p : pairs) {
    errors += edit_distance(p.hyp, p.ref);
    total += p.ref.size();
  }
  if (total == 0) throw std::invalid_argument("corpus_error_rate: zero total reference length");
  return 100.0 * static_cast<double>(errors) / static_cast<double>(total);
}

}  // namespace ciffuse::metrics
