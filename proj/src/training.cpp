// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
#include "ciffuse/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>

#include "ciffuse/errors.hpp"
#include "ciffuse/metrics.hpp"
#include "ciffuse/text_io.hpp"

namespace ciffuse::training {

// ---------------------------------------------------------------------------
// Learning-rate schedule

LrSchedule LrSchedule::large() { return {8000, 4e-5, 42000, 0.9998}; }

void LrSchedule::validate() const {
  if (!(peak_lr > 0.0)) throw ConfigError("peak_lr must be positive");
  if (!(decay_rate > 0.0 && decay_rate <= 1.0)) throw ConfigError("decay_rate must lie in (0,1]");
}

double lr_at(const LrSchedule& s, std::uint64_t step) {
  if (step < s.warmup_steps)
    return s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  if (step < s.warmup_steps + s.hold_steps) return s.peak_lr;
  const auto k = static_cast<double>(step - s.warmup_steps - s.hold_steps);
  return s.peak_lr * std::pow(s.decay_rate, k);
}

Phase phase_at(const LrSchedule& s, std::uint64_t step) {
  if (step < s.warmup_steps) return Phase::warmup;
  if (step < s.warmup_steps + s.hold_steps) return Phase::hold;
  return Phase::decay;
}

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::warmup: return "warmup";
    case Phase::hold: return "hold";
    case Phase::decay: return "decay";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  auto x = text::parse_uint(v);
  if (!x) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return *x;
}

double to_double(const std::string& key, const std::string& v) {
  auto x = text::parse_double(v);
  if (!x || std::isnan(*x)) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return *x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::string fmt(double v) { return text::format_double(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

}  // namespace

void ExperimentConfig::apply(const std::string& key, const std::string& value) {
  auto& a = model.acoustic;
  auto& l = model.linguistic;
  auto& w = model.weights;
  const std::map<std::string, std::function<void()>> setters = {
      {"vocab_size", [&] { l.vocab_size = to_uint(key, value); }},
      {"feature_dim", [&] { a.feature_dim = to_uint(key, value); }},
      {"d", [&] { a.content_dim = to_uint(key, value); }},
      {"d_l", [&] { l.dim = to_uint(key, value); }},
      {"stride", [&] { a.stride = to_uint(key, value); }},
      {"kernel", [&] { a.kernel = to_uint(key, value); }},
      {"acoustic_blocks", [&] { a.blocks = to_uint(key, value); }},
      {"acoustic_heads", [&] { a.heads = to_uint(key, value); }},
      {"linguistic_blocks", [&] { l.blocks = to_uint(key, value); }},
      {"linguistic_heads", [&] { l.heads = to_uint(key, value); }},
      {"ffn_mult", [&] { a.ffn_mult = l.ffn_mult = to_uint(key, value); }},
      {"mu1", [&] { w.mu1 = to_double(key, value); }},
      {"mu2", [&] { w.mu2 = to_double(key, value); }},
      {"lambda_ac", [&] { w.lambda_ac = to_double(key, value); }},
      {"lambda_lm", [&] { w.lambda_lm = to_double(key, value); }},
      {"gold_start", [&] { gold.start_p = to_double(key, value); }},
      {"gold_end", [&] { gold.end_p = to_double(key, value); }},
      {"gold_steps",
       [&] {
         gold.decay_steps =
             (value == "inf") ? fusion::GoldRateSchedule::kNever : to_uint(key, value);
       }},
      {"warmup_steps", [&] { lr.warmup_steps = to_uint(key, value); }},
      {"peak_lr", [&] { lr.peak_lr = to_double(key, value); }},
      {"hold_steps", [&] { lr.hold_steps = to_uint(key, value); }},
      {"decay_rate", [&] { lr.decay_rate = to_double(key, value); }},
      {"steps", [&] { train.steps = to_uint(key, value); }},
      {"batch_size", [&] { train.batch_size = to_uint(key, value); }},
      {"eval_every", [&] { train.eval_every = to_uint(key, value); }},
      {"checkpoint_every", [&] { train.checkpoint_every = to_uint(key, value); }},
      {"clip_norm", [&] { train.clip_norm = to_double(key, value); }},
      {"seed", [&] { train.seed = to_uint(key, value); }},
      {"th", [&] { train.th = to_double(key, value); }},
      {"parallel", [&] { train.parallel = to_bool(key, value); }},
      {"lr_preset",
       [&] {
         if (value == "large")
           lr = LrSchedule::large();
         else if (value == "toy")
           lr = LrSchedule{};
         else
           throw ConfigError("lr_preset: expected 'large' or 'toy'");
       }},
  };
  auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second();
}

void ExperimentConfig::validate() const {
  model.weights.validate();
  gold.validate();
  lr.validate();
  if (train.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (train.eval_every == 0) throw ConfigError("eval_every must be positive");
  if (!(train.th >= 0.0 && train.th <= 1.0)) throw ConfigError("th must lie in [0,1]");
  if (model.linguistic.vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::entries() const {
  const auto& a = model.acoustic;
  const auto& l = model.linguistic;
  const auto& w = model.weights;
  return {
      {"vocab_size", fmt(std::uint64_t{l.vocab_size})},
      {"feature_dim", fmt(std::uint64_t{a.feature_dim})},
      {"d", fmt(std::uint64_t{a.content_dim})},
      {"d_l", fmt(std::uint64_t{l.dim})},
      {"stride", fmt(std::uint64_t{a.stride})},
      {"kernel", fmt(std::uint64_t{a.kernel})},
      {"acoustic_blocks", fmt(std::uint64_t{a.blocks})},
      {"acoustic_heads", fmt(std::uint64_t{a.heads})},
      {"linguistic_blocks", fmt(std::uint64_t{l.blocks})},
      {"linguistic_heads", fmt(std::uint64_t{l.heads})},
      {"ffn_mult", fmt(std::uint64_t{a.ffn_mult})},
      {"mu1", fmt(w.mu1)},
      {"mu2", fmt(w.mu2)},
      {"lambda_ac", fmt(w.lambda_ac)},
      {"lambda_lm", fmt(w.lambda_lm)},
      {"gold_start", fmt(gold.start_p)},
      {"gold_end", fmt(gold.end_p)},
      {"gold_steps",
       gold.decay_steps == fusion::GoldRateSchedule::kNever ? "inf" : fmt(gold.decay_steps)},
      {"warmup_steps", fmt(lr.warmup_steps)},
      {"peak_lr", fmt(lr.peak_lr)},
      {"hold_steps", fmt(lr.hold_steps)},
      {"decay_rate", fmt(lr.decay_rate)},
      {"steps", fmt(train.steps)},
      {"batch_size", fmt(std::uint64_t{train.batch_size})},
      {"eval_every", fmt(train.eval_every)},
      {"checkpoint_every", fmt(train.checkpoint_every)},
      {"clip_norm", fmt(train.clip_norm)},
      {"seed", fmt(train.seed)},
      {"th", fmt(train.th)},
      {"parallel", fmt(train.parallel)},
  };
}

ExperimentConfig parse_config(std::istream& is) {
  ExperimentConfig cfg;
  text::read_key_values(is, [&](const std::string& k, const std::string& v) { cfg.apply(k, v); });
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path);
  return parse_config(is);
}

// ---------------------------------------------------------------------------
// Evaluation and logging

EvalReport evaluate(const fusion::FusionModel& model, const data::Dataset& ds, double th,
                    bool parallel) {
  EvalReport rep;
  const std::size_t n = ds.utterances.size();
  rep.hyps.resize(n);
  std::vector<double> len_err(n, 0.0);
  auto run = [&](std::size_t i) {
    const auto& u = ds.utterances[i];
    auto res = model.forward_infer(u.feats, u.frames, th);
    rep.hyps[i] = std::move(res.tokens);
    len_err[i] = std::fabs(res.n_hat - static_cast<double>(u.tokens.size()));
  };
  if (parallel) {
#pragma omp parallel for schedule(dynamic, 4)
    for (long long i = 0; i < static_cast<long long>(n); ++i) run(static_cast<std::size_t>(i));
  } else {
    for (std::size_t i = 0; i < n; ++i) run(i);
  }
  std::vector<metrics::Pair> pairs;
  pairs.reserve(n);
  double err_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    pairs.push_back({rep.hyps[i], ds.utterances[i].tokens});
    err_sum += len_err[i];
  }
  rep.cer = metrics::corpus_error_rate(pairs);
  rep.mean_length_error = err_sum / static_cast<double>(n);
  return rep;
}

void write_metrics_header(std::ostream& os, const ExperimentConfig& cfg) {
  for (const auto& [k, v] : cfg.entries()) os << "# " << k << " = " << v << '\n';
  os << "step\tL\tL_ce\tL_qua\tL_ctc\tgold_rate\tlr\tCER\n";
}

void write_metrics_row(std::ostream& os, const MetricsRow& r) {
  using text::format_double;
  os << r.step << '\t' << format_double(r.loss) << '\t' << format_double(r.l_ce) << '\t'
     << format_double(r.l_qua) << '\t' << format_double(r.l_ctc) << '\t'
     << format_double(r.gold_rate) << '\t' << format_double(r.lr) << '\t'
     << (r.cer ? format_double(*r.cer) : std::string("-")) << '\n';
  os.flush();
}

// ---------------------------------------------------------------------------
// Training loop

std::vector<std::size_t> batch_indices(std::size_t dataset_size, std::size_t batch_size,
                                       std::uint64_t seed, std::uint64_t step) {
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  std::uint64_t cached_epoch = ~std::uint64_t{0};
  std::vector<std::size_t> perm(dataset_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const std::uint64_t pos = step * batch_size + b;
    const std::uint64_t epoch = pos / dataset_size;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng rng = make_rng(seed, {0x65706f6368, epoch});
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[pos % dataset_size]);
  }
  return out;
}

void check_compatible(const fusion::FusionModel& model, const data::Dataset& ds) {
  if (ds.feature_dim != model.config().acoustic.feature_dim)
    throw ConfigError("dataset feature_dim " + std::to_string(ds.feature_dim) +
                      " != model feature_dim " +
                      std::to_string(model.config().acoustic.feature_dim));
  if (ds.vocab_size > model.vocab_size())
    throw ConfigError("dataset vocabulary (" + std::to_string(ds.vocab_size) +
                      ") exceeds model vocabulary (" + std::to_string(model.vocab_size()) + ")");
  for (const auto& u : ds.utterances)
    for (int t : u.tokens)
      if (t < 0 || static_cast<std::size_t>(t) >= model.vocab_size())
        throw ConfigError("utterance " + u.id + ": token " + std::to_string(t) +
                          " outside model vocabulary");
}

TrainResult train(fusion::FusionModel& model, TrainState& state, const data::Dataset& train_set,
                  const data::Dataset* dev_set, const ExperimentConfig& cfg,
                  const TrainHooks& hooks) {
  cfg.validate();
  check_compatible(model, train_set);
  if (dev_set) check_compatible(model, *dev_set);
  if (train_set.utterances.empty()) throw ConfigError("training set is empty");

  auto params = model.params().all();
  if (state.adam.m.size() != params.size()) state.adam.reset(params);
  const std::uint64_t stop = hooks.stop_at.value_or(cfg.train.steps);
  const std::size_t batch = cfg.train.batch_size;
  TrainResult result;

  for (std::uint64_t step = state.step; step < stop; ++step) {
    const double p = fusion::gold_rate(cfg.gold, step);
    const double lr = lr_at(cfg.lr, step + 1);
    const auto idx = batch_indices(train_set.utterances.size(), batch, cfg.train.seed, step);
    std::vector<double> ce(batch), qua(batch), ctc(batch);

    model.params().zero_grad();
    auto res = optim::accumulate_batch_gradients(
        model.params(), batch,
        [&](Tape&, nn::Binder& bind, std::size_t i) {
          Rng rng = make_rng(cfg.train.seed, {0x676f6c64, step, i});
          auto out = model.forward_train(bind, train_set.utterances[idx[i]], p, rng);
          ce[i] = out.l_ce.item();
          qua[i] = out.l_qua.item();
          ctc[i] = out.l_ctc.item();
          return out.loss;
        },
        cfg.train.parallel);
    optim::clip_grad_norm(params, cfg.train.clip_norm);
    optim::adam_step(params, state.adam, lr);
    state.step = step + 1;

    auto avg = [](const std::vector<double>& v) {
      return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    result.last_batch_loss = avg(res.losses);

    if (state.step % cfg.train.eval_every == 0 || state.step == stop) {
      MetricsRow row{state.step, result.last_batch_loss, avg(ce), avg(qua), avg(ctc), p, lr, {}};
      if (dev_set) row.cer = evaluate(model, *dev_set, cfg.train.th, cfg.train.parallel).cer;
      if (hooks.metrics) write_metrics_row(*hooks.metrics, row);
      result.log.push_back(row);
    }
    if (hooks.checkpoint && cfg.train.checkpoint_every != 0 &&
        state.step % cfg.train.checkpoint_every == 0 && state.step != stop)
      hooks.checkpoint(state);
  }
  if (hooks.checkpoint) hooks.checkpoint(state);
  return result;
}

}  // namespace ciffuse::training
