// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
#include <doctest.h>

#include <algorithm>
#include <deque>
#include <map>
#include <stdexcept>
#include <vector>

#include "ciffuse/metrics.hpp"
#include "ciffuse/rng.hpp"
#include "oracles.hpp"

using namespace ciffuse;
using namespace ciffuse::oracle;

namespace {

std::vector<int> random_seq(Rng& rng, std::size_t max_len, int alphabet) {
  std::vector<int> s(rng() % (max_len + 1));
  for (auto& x : s) x = static_cast<int>(rng() % static_cast<std::uint64_t>(alphabet));
  return s;
}

}  // namespace

TEST_CASE("edit distance basics") {
  std::vector<int> a = {1, 2, 3};
  CHECK(metrics::edit_distance(a, a) == 0);
  CHECK(metrics::edit_distance({}, a) == 3);
  CHECK(metrics::edit_distance(a, {}) == 3);
  CHECK(metrics::edit_distance(std::vector<int>{1, 3}, a) == 1);
  CHECK(metrics::edit_distance(std::vector<int>{3, 2, 1}, a) == 2);
}

TEST_CASE("edit distance matches exhaustive edit-script search") {
  Rng rng(101);
  for (int rep = 0; rep < 200; ++rep) {
    auto a = random_seq(rng, 6, 3);
    auto b = random_seq(rng, 6, 3);
    INFO("rep " << rep);
    CHECK(metrics::edit_distance(a, b) == edit_search(a, b, 3));
  }
}

TEST_CASE("edit distance is a metric") {
  Rng rng(7);
  for (int rep = 0; rep < 300; ++rep) {
    auto a = random_seq(rng, 9, 4), b = random_seq(rng, 9, 4), c = random_seq(rng, 9, 4);
    CHECK(metrics::edit_distance(a, b) == metrics::edit_distance(b, a));
    CHECK(metrics::edit_distance(a, c) <= metrics::edit_distance(a, b) + metrics::edit_distance(b, c));
  }
}

TEST_CASE("corpus error rate pools edits over reference length") {
  std::vector<metrics::Pair> perfect = {{{1, 2}, {1, 2}}, {{3}, {3}}};
  CHECK(metrics::corpus_error_rate(perfect) == 0.0);
  std::vector<metrics::Pair> one = {{{1, 9, 3, 4}, {1, 2, 3, 4}}};
  CHECK(metrics::corpus_error_rate(one) == 25.0);

  Rng rng(3);
  std::vector<metrics::Pair> pairs;
  for (int i = 0; i < 50; ++i) {
    auto ref = random_seq(rng, 8, 5);
    if (ref.empty()) ref.push_back(1);
    pairs.push_back({random_seq(rng, 8, 5), ref});
  }
  double weighted = 0.0, total = 0.0;
  for (const auto& p : pairs) {
    const double n = static_cast<double>(p.ref.size());
    weighted += n * (100.0 * static_cast<double>(metrics::edit_distance(p.hyp, p.ref)) / n);
    total += n;
  }
  CHECK(metrics::corpus_error_rate(pairs) == doctest::Approx(weighted / total).epsilon(1e-12));

  std::vector<metrics::Pair> empty_refs = {{{1}, {}}};
  CHECK_THROWS_AS(metrics::corpus_error_rate(empty_refs), std::invalid_argument);
  CHECK_THROWS_AS(metrics::corpus_error_rate({}), std::invalid_argument);
}
