// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace ciffuse::metrics {

// Levenshtein distance with unit costs.
std::size_t edit_distance(std::span<const int> hyp, std::span<const int> ref);

struct Pair {
  std::vector<int> hyp;
  std::vector<int> ref;
};

// 100 * sum(edit distance) / sum(reference length), pooled over the corpus.
// Throws std::invalid_argument when the pooled reference length is zero.
double corpus_error_rate(std::span<const Pair> pairs);

}  // namespace ciffuse::metrics
