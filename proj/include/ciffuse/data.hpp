// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
//
// Synthetic monotonic-alignment transduction tasks.
//
// Every token v has a fixed prototype feature vector. An utterance is a token
// sequence where each token's prototype is repeated r ~ U[repeat_min,
// repeat_max] times with Gaussian noise. Token sequences follow a fixed
// successor permutation with probability successor_prob, otherwise they are
// uniform; either way every token is equally frequent.
//
// File format (UTF-8, line oriented):
//   cif-fuse-data v1
//   vocab <V> features <F> count <N>
//   utt <id> <T> <F> <n*>        (per record)
//   <n* token ids>
//   <T lines of F values>
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace ciffuse::data {

struct Utterance {
  std::string id;
  std::size_t frames = 0;    // T
  std::size_t features = 0;  // F
  std::vector<double> feats;  // row-major [T×F]
  std::vector<int> tokens;    // n* ids

  bool operator==(const Utterance&) const = default;
};

struct Dataset {
  std::size_t vocab_size = 0;
  std::size_t feature_dim = 0;
  std::vector<Utterance> utterances;

  bool operator==(const Dataset&) const = default;
  std::vector<std::vector<int>> token_sequences() const;
};

struct TaskSpec {
  std::size_t vocab_size = 16;
  std::size_t feature_dim = 8;
  std::size_t repeat_min = 2;
  std::size_t repeat_max = 6;
  double noise = 0.1;
  std::size_t length_min = 3;
  std::size_t length_max = 10;
  double successor_prob = 0.8;
  // Frames per token never drop below this, so the encoder output after
  // downsampling by `stride` keeps at least one frame per token.
  std::size_t stride = 1;
  // Tokens 2i and 2i+1 (i < homophone_pairs) share one prototype, so only
  // context tells them apart.
  std::size_t homophone_pairs = 0;
  std::uint64_t seed = 7;  // fixes prototypes and the successor permutation

  void validate() const;  // throws ConfigError
  void apply(const std::string& key, const std::string& value);
};

// `key = value` task description; keys are the TaskSpec field names.
TaskSpec parse_task_spec(std::istream& is);
TaskSpec load_task_spec(const std::filesystem::path& path);

// Prototype table [V×F] and successor permutation, both derived from spec.seed.
struct TaskWorld {
  std::vector<double> prototypes;
  std::vector<int> successor;
};
TaskWorld make_world(const TaskSpec& spec);

// Utterance i depends only on (spec, sample_seed, i).
std::vector<Utterance> generate(const TaskSpec& spec, std::size_t count,
                                std::uint64_t sample_seed, const std::string& id_prefix = "utt");
Dataset generate_dataset(const TaskSpec& spec, std::size_t count, std::uint64_t sample_seed,
                         const std::string& id_prefix = "utt");

void write_dataset(std::ostream& os, const Dataset& ds);
Dataset read_dataset(std::istream& is);  // throws ParseError
void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace ciffuse::data
