// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "ciffuse/data.hpp"
#include "ciffuse/errors.hpp"

using namespace ciffuse;

namespace {

std::string serialize(const data::Dataset& ds) {
  std::ostringstream os;
  data::write_dataset(os, ds);
  return os.str();
}

}  // namespace

TEST_CASE("noiseless frames are exactly the prototypes") {
  data::TaskSpec spec;
  spec.noise = 0.0;
  spec.repeat_min = spec.repeat_max = 1;
  const auto world = data::make_world(spec);
  const auto utts = data::generate(spec, 50, 3);
  std::size_t errors = 0;
  for (const auto& u : utts) {
    CHECK(u.frames == u.tokens.size());
    for (std::size_t t = 0; t < u.frames; ++t) {
      // Nearest-prototype classification.
      int best = -1;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t v = 0; v < spec.vocab_size; ++v) {
        double d = 0.0;
        for (std::size_t f = 0; f < spec.feature_dim; ++f) {
          const double diff = u.feats[t * spec.feature_dim + f] - world.prototypes[v * spec.feature_dim + f];
          d += diff * diff;
        }
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(v);
        }
      }
      CHECK(best_d == 0.0);
      if (best != u.tokens[t]) ++errors;
    }
  }
  CHECK(errors == 0);
}

TEST_CASE("generation is deterministic and respects the length bounds") {
  data::TaskSpec spec;
  const auto a = data::generate_dataset(spec, 40, 9);
  const auto b = data::generate_dataset(spec, 40, 9);
  CHECK(a == b);
  CHECK_FALSE(a == data::generate_dataset(spec, 40, 10));
  for (const auto& u : a.utterances) {
    const auto n = u.tokens.size();
    CHECK(n >= spec.length_min);
    CHECK(n <= spec.length_max);
    CHECK(u.frames >= spec.repeat_min * n);
    CHECK(u.frames <= spec.repeat_max * n);
    CHECK(u.feats.size() == u.frames * spec.feature_dim);
    for (std::size_t i = 1; i < n; ++i) CHECK(u.tokens[i] != u.tokens[i - 1]);
  }
  // Utterance i depends only on its index.
  const auto prefix = data::generate(spec, 10, 9);
  for (std::size_t i = 0; i < 10; ++i) CHECK(prefix[i] == a.utterances[i]);
}

TEST_CASE("token frequencies are close to uniform") {
  data::TaskSpec spec;
  const auto ds = data::generate_dataset(spec, 2000, 4);
  std::vector<double> counts(spec.vocab_size, 0.0);
  double total = 0.0;
  for (const auto& u : ds.utterances)
    for (int t : u.tokens) {
      counts[static_cast<std::size_t>(t)] += 1.0;
      total += 1.0;
    }
  REQUIRE(total >= 10000.0);
  const double p = 1.0 / static_cast<double>(spec.vocab_size);
  const double sd = std::sqrt(total * p * (1.0 - p));
  for (double c : counts) CHECK(std::fabs(c - total * p) < 3.0 * sd);
}

TEST_CASE("deterministic successor corpus") {
  data::TaskSpec spec;
  spec.successor_prob = 1.0;
  const auto world = data::make_world(spec);
  for (std::size_t v = 0; v < spec.vocab_size; ++v) CHECK(world.successor[v] != static_cast<int>(v));
  for (const auto& u : data::generate(spec, 30, 2))
    for (std::size_t i = 1; i < u.tokens.size(); ++i)
      CHECK(u.tokens[i] == world.successor[static_cast<std::size_t>(u.tokens[i - 1])]);
}

TEST_CASE("homophone pairs share prototypes") {
  data::TaskSpec spec;
  spec.homophone_pairs = 3;
  const auto w = data::make_world(spec);
  const auto plain = data::make_world(data::TaskSpec{});
  const std::size_t f = spec.feature_dim;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < f; ++j) CHECK(w.prototypes[2 * i * f + j] == w.prototypes[(2 * i + 1) * f + j]);
  CHECK(w.successor == plain.successor);
  spec.homophone_pairs = 9;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("spec validation") {
  data::TaskSpec spec;
  spec.vocab_size = 1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = {};
  spec.repeat_min = 0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = {};
  spec.stride = 4;  // repeat_min 2 would leave tokens without an encoder frame
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.repeat_min = 4;
  spec.repeat_max = 8;
  CHECK_NOTHROW(spec.validate());
  for (const auto& u : data::generate(spec, 20, 1)) CHECK(u.frames >= 4 * u.tokens.size());
  CHECK_THROWS_AS(data::generate(data::TaskSpec{}, 0, 1), ConfigError);
}

TEST_CASE("task spec files") {
  std::istringstream is("# task\nvocab_size = 8\nnoise = 0.25  # louder\nhomophone_pairs = 2\n");
  const auto spec = data::parse_task_spec(is);
  CHECK(spec.vocab_size == 8);
  CHECK(spec.noise == 0.25);
  CHECK(spec.homophone_pairs == 2);
  std::istringstream bad("vocab_size = 8\nvocab = 3\n");
  CHECK_THROWS_WITH_AS(data::parse_task_spec(bad), doctest::Contains("line 2"), ConfigError);
}

TEST_CASE("save and load round-trip bit-exactly") {
  data::TaskSpec spec;
  spec.noise = 0.37;
  const auto ds = data::generate_dataset(spec, 25, 5);
  std::istringstream is(serialize(ds));
  CHECK(data::read_dataset(is) == ds);

  data::Dataset empty{16, 8, {}};
  std::istringstream es(serialize(empty));
  const auto back = data::read_dataset(es);
  CHECK(back.utterances.empty());
  CHECK(back.vocab_size == 16);

  const auto path = std::filesystem::temp_directory_path() / "ciffuse_test_data.txt";
  data::save_dataset(path, ds);
  CHECK(data::load_dataset(path) == ds);
  std::filesystem::remove(path);
}

TEST_CASE("malformed files raise parse errors naming the record") {
  const auto ds = data::generate_dataset(data::TaskSpec{}, 3, 5);
  const std::string text = serialize(ds);
  // Cut in the middle of the last record.
  std::istringstream trunc(text.substr(0, text.size() - 40));
  CHECK_THROWS_WITH_AS(data::read_dataset(trunc), doctest::Contains("record 2"), ParseError);

  std::istringstream wrong_version("cif-fuse-data v9\nvocab 16 features 8 count 0\n");
  CHECK_THROWS_AS(data::read_dataset(wrong_version), ParseError);

  std::string bad = text;
  bad.replace(bad.find("utt utt1"), 3, "xxx");
  std::istringstream bs(bad);
  CHECK_THROWS_WITH_AS(data::read_dataset(bs), doctest::Contains("record 1"), ParseError);

  CHECK_THROWS(data::load_dataset("/nonexistent/dir/file.txt"));
}
