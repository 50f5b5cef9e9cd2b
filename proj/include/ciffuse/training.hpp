// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ciffuse/data.hpp"
#include "ciffuse/fusion.hpp"
#include "ciffuse/optim.hpp"

namespace ciffuse::training {

// Linear warmup to peak, hold, then peak * decay_rate^(steps past hold).
// Defaults are sized for the toy models; large() is the big-model preset.
struct LrSchedule {
  std::uint64_t warmup_steps = 200;
  double peak_lr = 3e-3;
  std::uint64_t hold_steps = 2000;
  double decay_rate = 0.9998;

  static LrSchedule large();
  void validate() const;
};

enum class Phase { warmup, hold, decay };

double lr_at(const LrSchedule& s, std::uint64_t step);
Phase phase_at(const LrSchedule& s, std::uint64_t step);
const char* phase_name(Phase p);

struct TrainOptions {
  std::uint64_t steps = 10000;
  std::size_t batch_size = 16;
  std::uint64_t eval_every = 500;
  std::uint64_t checkpoint_every = 0;  // 0: only at the end
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
  double th = 0.8;
  bool parallel = true;
};

struct ExperimentConfig {
  fusion::ModelConfig model;
  fusion::GoldRateSchedule gold;
  LrSchedule lr;
  TrainOptions train;

  // `key = value` lines, '#' comments. Unknown keys are errors.
  void apply(const std::string& key, const std::string& value);
  void validate() const;
  std::vector<std::pair<std::string, std::string>> entries() const;
};

ExperimentConfig parse_config(std::istream& is);
ExperimentConfig load_config(const std::string& path);

struct EvalReport {
  double cer = 0.0;                  // percent, pooled
  double mean_length_error = 0.0;    // mean |n_hat - n*|
  std::vector<std::vector<int>> hyps;
};

EvalReport evaluate(const fusion::FusionModel& model, const data::Dataset& ds, double th,
                    bool parallel = true);

struct MetricsRow {
  std::uint64_t step = 0;
  double loss = 0.0, l_ce = 0.0, l_qua = 0.0, l_ctc = 0.0;
  double gold_rate = 0.0, lr = 0.0;
  std::optional<double> cer;
};

void write_metrics_header(std::ostream& os, const ExperimentConfig& cfg);
void write_metrics_row(std::ostream& os, const MetricsRow& row);

struct TrainState {
  std::uint64_t step = 0;  // completed updates
  optim::AdamState adam;
};

struct TrainHooks {
  std::ostream* metrics = nullptr;
  // Called with the state after checkpoint_every updates and at the end.
  std::function<void(const TrainState&)> checkpoint;
  // Stop after this many completed updates (defaults to cfg.train.steps).
  std::optional<std::uint64_t> stop_at;
};

struct TrainResult {
  std::vector<MetricsRow> log;
  double last_batch_loss = 0.0;
};

// Seeded and resumable: batch composition and gold-token masks derive only
// from (seed, step, item), so resuming from a saved TrainState replays the
// uninterrupted run exactly.
TrainResult train(fusion::FusionModel& model, TrainState& state, const data::Dataset& train_set,
                  const data::Dataset* dev_set, const ExperimentConfig& cfg,
                  const TrainHooks& hooks = {});

// Indices of the utterances used at `step`.
std::vector<std::size_t> batch_indices(std::size_t dataset_size, std::size_t batch_size,
                                       std::uint64_t seed, std::uint64_t step);

// Throws ConfigError if any token id falls outside the model vocabulary or
// the feature dimension differs.
void check_compatible(const fusion::FusionModel& model, const data::Dataset& ds);

}  // namespace ciffuse::training
