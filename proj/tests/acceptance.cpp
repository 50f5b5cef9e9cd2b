// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
//
// Runs every acceptance criterion and prints one PASS/FAIL line each.
// Exit status is non-zero when any criterion fails.
#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ciffuse/checkpoint.hpp"
#include "ciffuse/cif.hpp"
#include "ciffuse/ctc.hpp"
#include "ciffuse/data.hpp"
#include "ciffuse/encoders.hpp"
#include "ciffuse/fusion.hpp"
#include "ciffuse/grad_suite.hpp"
#include "ciffuse/metrics.hpp"
#include "ciffuse/rng.hpp"
#include "ciffuse/training.hpp"
#include "oracles.hpp"

using namespace ciffuse;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::vector<std::pair<int, bool>> g_results;

void report(int id, const std::string& name, const Outcome& o) {
  std::printf("[%s] %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
  std::fflush(stdout);
  g_results.emplace_back(id, o.pass);
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto entries = run_gradient_suite(20260101, 10);
  const double secs = seconds_since(t0);
  bool ok = secs < 60.0;
  double worst = 0.0;
  std::string worst_op, failed;
  std::size_t min_instances = entries.empty() ? 0 : entries.front().instances;
  for (const auto& e : entries) {
    ok = ok && e.passed;
    if (!e.passed) failed += " " + e.op;
    min_instances = std::min(min_instances, e.instances);
    if (e.max_rel_err > worst) {
      worst = e.max_rel_err;
      worst_op = e.op;
    }
  }
  ok = ok && min_instances >= 10 && !entries.empty();
  return {ok, fmt("%zu ops x >=%zu instances, worst rel err %.2e (%s), %.1f s%s", entries.size(),
                  min_instances, worst, worst_op.c_str(), secs,
                  failed.empty() ? "" : (", failed:" + failed).c_str())};
}

std::vector<double> uniform(Rng& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

Outcome cif_oracle() {
  Rng rng(2);
  std::uniform_int_distribution<std::size_t> tlen(1, 20), dlen(1, 8);
  double worst = 0.0, worst_sum = 0.0;
  bool counts_ok = true;
  for (int rep = 0; rep < 500; ++rep) {
    const std::size_t t = tlen(rng), d = dlen(rng);
    auto h = uniform(rng, t * (d + 1), -4.0, 4.0);
    Tape tape;
    auto ht = tape.constant({t, d + 1}, h);

    // Raw weights fire floor(sum) cells; compare against the scalar walk.
    auto alpha = cif::attention_weights(ht);
    std::vector<double> w(alpha.value().begin(), alpha.value().end());
    oracle::Matrix content(t, std::vector<double>(d));
    for (std::size_t f = 0; f < t; ++f)
      for (std::size_t j = 0; j < d; ++j) content[f][j] = h[f * (d + 1) + j];
    const auto cells = static_cast<std::size_t>(std::floor(std::accumulate(w.begin(), w.end(), 0.0)));
    auto ct = tape.constant({t, d}, [&] {
      std::vector<double> v;
      for (const auto& r : content) v.insert(v.end(), r.begin(), r.end());
      return v;
    }());
    auto got = cif::integrate_and_fire(alpha, ct, cells);
    const auto expect = oracle::simulate(w, content, cells);
    if (cells == 0) {
      counts_ok = counts_ok && !got.has_value();
    } else {
      for (std::size_t u = 0; u < cells; ++u)
        for (std::size_t j = 0; j < d; ++j)
          worst = std::max(worst, std::fabs(got->value()[u * d + j] - expect[u][j]));
    }

    // Training mode: exactly n* cells, resized weights sum to n*.
    std::uniform_int_distribution<std::size_t> nlen(1, t);
    const std::size_t n_star = nlen(rng);
    auto r = cif::run_training(ht, n_star);
    counts_ok = counts_ok && r.fired_count == n_star && r.integrated && r.integrated->shape()[0] == n_star;
    const auto ar = r.alpha_resized.value();
    worst_sum = std::max(worst_sum, std::fabs(std::accumulate(ar.begin(), ar.end(), 0.0) - static_cast<double>(n_star)));
    // And the resized weights through the simulator as well.
    std::vector<double> wr(ar.begin(), ar.end());
    const auto expect_r = oracle::simulate(wr, content, n_star);
    for (std::size_t u = 0; u < n_star; ++u)
      for (std::size_t j = 0; j < d; ++j)
        worst = std::max(worst, std::fabs(r.integrated->value()[u * d + j] - expect_r[u][j]));
  }
  const bool ok = worst < 1e-9 && worst_sum < 1e-9 && counts_ok;
  return {ok, fmt("500 instances, max |diff| %.2e, max |sum alpha' - n*| %.2e, fired counts %s", worst,
                  worst_sum, counts_ok ? "exact" : "WRONG")};
}

Outcome ctc_oracle() {
  Rng rng(3);
  std::uniform_int_distribution<std::size_t> tlen(1, 6), vlen(2, 4), nlen(1, 3);
  std::normal_distribution<double> gauss(0.0, 1.5);
  double worst = 0.0;
  std::size_t infeasible = 0;
  bool ok = true;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t t = tlen(rng), v = vlen(rng);
    const int blank = static_cast<int>(v) - 1;
    std::vector<int> target(nlen(rng));
    for (auto& y : target) y = static_cast<int>(rng() % (v - 1));
    std::vector<double> logits(t * v);
    for (auto& x : logits) x = gauss(rng);
    const auto lp = oracle::log_softmax(logits, t, v);
    const double bf = oracle::brute_force(lp, t, v, target, blank);
    Tape tape;
    auto res = ctc::ctc_loss(tape.constant({t, v}, lp), {target, blank});
    if (!std::isfinite(bf)) {
      ++infeasible;
      ok = ok && !res.feasible && std::isinf(res.loss.item());
    } else {
      ok = ok && res.feasible;
      worst = std::max(worst, std::fabs(res.loss.item() - bf));
    }
  }
  ok = ok && worst < 1e-9;
  return {ok, fmt("100 instances (%zu infeasible, all flagged), max |diff| %.2e", infeasible, worst)};
}

Outcome edit_distance_oracle() {
  Rng rng(4);
  std::size_t mismatches = 0;
  for (int rep = 0; rep < 200; ++rep) {
    auto seq = [&] {
      std::vector<int> s(rng() % 7);
      for (auto& x : s) x = static_cast<int>(rng() % 3);
      return s;
    };
    const auto a = seq(), b = seq();
    if (metrics::edit_distance(a, b) != oracle::edit_search(a, b, 3)) ++mismatches;
  }
  return {mismatches == 0, fmt("200 pairs, %zu mismatches", mismatches)};
}

Outcome schedules() {
  const fusion::GoldRateSchedule g{0.9, 0.2, 4000};
  bool ok = fusion::gold_rate(g, 0) == 0.9;
  for (std::uint64_t s : {4000ull, 4001ull, 5000ull, 100000ull, 1ull << 40}) ok = ok && fusion::gold_rate(g, s) == 0.2;
  ok = ok && std::fabs(fusion::gold_rate(g, 2000) - 0.55) < 1e-15;
  const auto large = training::LrSchedule::large();
  const double at_peak = training::lr_at(large, large.warmup_steps);
  ok = ok && at_peak == 4e-5 && training::lr_at(large, large.warmup_steps - 1) < 4e-5;
  const training::LrSchedule toy;
  ok = ok && training::lr_at(toy, toy.warmup_steps) == toy.peak_lr;
  return {ok, fmt("gold_rate(0)=%.17g, gold_rate(>=4000)=%.17g, large lr at step %llu = %.17g", fusion::gold_rate(g, 0),
                  fusion::gold_rate(g, 4000), static_cast<unsigned long long>(large.warmup_steps), at_peak)};
}

std::vector<std::vector<double>> snapshot(const fusion::FusionModel& model) {
  std::vector<std::vector<double>> out;
  for (const auto* p : model.params().all()) out.push_back(p->value);
  return out;
}

Outcome determinism(const data::Dataset& train_set, const data::Dataset& dev_set) {
  training::ExperimentConfig cfg;
  cfg.train.steps = 200;
  cfg.train.eval_every = 50;
  const data::Dataset small{train_set.vocab_size, train_set.feature_dim,
                            {train_set.utterances.begin(), train_set.utterances.begin() + 200}};
  const data::Dataset dev{dev_set.vocab_size, dev_set.feature_dim,
                          {dev_set.utterances.begin(), dev_set.utterances.begin() + 40}};
  auto full_run = [&] {
    fusion::FusionModel model(cfg.model, cfg.train.seed);
    training::TrainState st;
    std::ostringstream log;
    training::write_metrics_header(log, cfg);
    training::TrainHooks hooks;
    hooks.metrics = &log;
    training::train(model, st, small, &dev, cfg, hooks);
    return std::make_pair(log.str(), snapshot(model));
  };
  const auto a = full_run();
  const auto b = full_run();
  const bool identical = a.first == b.first && a.second == b.second;

  // Interrupted at step 100, serialized, restored into a fresh model.
  fusion::FusionModel first(cfg.model, cfg.train.seed);
  training::TrainState st;
  std::ostringstream log;
  training::write_metrics_header(log, cfg);
  training::TrainHooks hooks;
  hooks.metrics = &log;
  hooks.stop_at = 100;
  std::string saved;
  hooks.checkpoint = [&](const training::TrainState& s) {
    std::ostringstream os;
    checkpoint::write(os, checkpoint::capture(cfg.entries(), s.step, "hold", first.params(), &s.adam));
    saved = os.str();
  };
  training::train(first, st, small, &dev, cfg, hooks);
  std::istringstream is(saved);
  const auto ck = checkpoint::read(is);
  training::ExperimentConfig cfg2;
  for (const auto& [k, v] : ck.config) cfg2.apply(k, v);
  fusion::FusionModel resumed(cfg2.model, 99);
  checkpoint::restore_params(ck, resumed.params());
  training::TrainState st2;
  st2.step = ck.step;
  st2.adam = checkpoint::restore_adam(ck, resumed.params());
  training::TrainHooks h2;
  h2.metrics = &log;
  training::train(resumed, st2, small, &dev, cfg2, h2);
  const auto c = snapshot(resumed);
  double worst = 0.0;
  for (std::size_t k = 0; k < c.size(); ++k)
    for (std::size_t i = 0; i < c[k].size(); ++i) worst = std::max(worst, std::fabs(c[k][i] - a.second[k][i]));
  const bool logs_match = log.str() == a.first;
  const bool ok = identical && logs_match && worst <= 1e-12;
  return {ok, fmt("repeat run %s; resume at 100/200: log %s, max |param diff| %.2e", identical ? "bit-identical" : "DIFFERS",
                  logs_match ? "identical" : "DIFFERS", worst)};
}

struct RunResult {
  training::EvalReport dev;
  double seconds = 0.0;
};

RunResult full_run(const std::string& label, training::ExperimentConfig cfg, const data::Dataset& train_set,
                   const data::Dataset& dev_set, const nn::ParamStore& lm, const std::string& log_dir) {
  const auto t0 = Clock::now();
  fusion::FusionModel model(cfg.model, cfg.train.seed);
  model.load_linguistic(lm);
  training::TrainState st;
  std::ofstream log;
  training::TrainHooks hooks;
  if (!log_dir.empty()) {
    log.open(std::filesystem::path(log_dir) / (label + ".tsv"));
    training::write_metrics_header(log, cfg);
    hooks.metrics = &log;
  }
  auto res = training::train(model, st, train_set, &dev_set, cfg, hooks);
  RunResult out;
  out.dev = training::evaluate(model, dev_set, cfg.train.th);
  out.seconds = seconds_since(t0);
  std::fprintf(stderr, "  run %-10s dev CER %.3f%%, mean |n_hat - n*| %.4f, %.0f s\n", label.c_str(), out.dev.cer,
               out.dev.mean_length_error, out.seconds);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ciffuse acceptance criteria"};
  std::uint64_t steps = 10000;
  std::string log_dir;
  bool quick = false;
  app.add_option("--steps", steps, "Training budget for the ablation runs");
  app.add_option("--log-dir", log_dir, "Write per-run metrics here");
  app.add_flag("--quick", quick, "Skip the training runs (criteria 5-7)");
  CLI11_PARSE(app, argc, argv);
  if (!log_dir.empty()) std::filesystem::create_directories(log_dir);

  report(1, "gradient suite", gradient_suite());
  report(2, "CIF oracle", cif_oracle());
  report(3, "CTC oracle", ctc_oracle());
  report(4, "edit-distance oracle", edit_distance_oracle());

  const data::TaskSpec spec;
  const auto train_set = data::generate_dataset(spec, 2000, 1);
  const auto dev_set = data::generate_dataset(spec, 200, 2);

  if (!quick) {
    const auto t0 = Clock::now();
    training::ExperimentConfig base;
    base.train.steps = steps;
    encoders::LanguageModel lm(base.model.linguistic, 1);
    encoders::PretrainConfig pc;
    pc.steps = 1500;
    const auto corpus = train_set.token_sequences();
    encoders::pretrain_mask_predict(lm, corpus, pc);
    const double pre_secs = seconds_since(t0);
    std::fprintf(stderr, "  pretrained LM in %.0f s\n", pre_secs);

    const auto ref = full_run("default", base, train_set, dev_set, lm.store, log_dir);
    const double total = pre_secs + ref.seconds;
    report(5, "convergence",
           {ref.dev.cer < 10.0 && total < 3600.0 && steps <= 10000,
            fmt("dev CER %.3f%% after %llu steps, %.1f min including LM pretraining", ref.dev.cer,
                static_cast<unsigned long long>(steps), total / 60.0)});

    auto no_qua = base;
    no_qua.model.weights.mu1 = 0.0;
    const auto q = full_run("mu1=0", no_qua, train_set, dev_set, lm.store, log_dir);
    auto ratio = [](double a, double b) { return b > 0.0 ? fmt("x%.2f", a / b) : std::string(a > 0.0 ? "x inf" : "x 1"); };
    report(6, "ablation mu1=0",
           {q.dev.mean_length_error >= 5.0 * ref.dev.mean_length_error && q.dev.cer >= 2.0 * ref.dev.cer &&
                q.dev.cer > ref.dev.cer,
            fmt("mean |n_hat - n*| %.4f vs %.4f (%s), CER %.3f%% vs %.3f%% (%s)", q.dev.mean_length_error,
                ref.dev.mean_length_error, ratio(q.dev.mean_length_error, ref.dev.mean_length_error).c_str(),
                q.dev.cer, ref.dev.cer, ratio(q.dev.cer, ref.dev.cer).c_str())});

    auto no_gold = base;
    no_gold.gold = {0.0, 0.0, fusion::GoldRateSchedule::kNever};
    const auto p0 = full_run("p=0", no_gold, train_set, dev_set, lm.store, log_dir);
    report(7, "ablation p=0",
           {p0.dev.cer >= 1.1 * ref.dev.cer && p0.dev.cer > ref.dev.cer,
            fmt("p=0 CER %.3f%% vs scheduled 0.9->0.2 CER %.3f%% (%s, need >= x1.10)", p0.dev.cer, ref.dev.cer,
                ratio(p0.dev.cer, ref.dev.cer).c_str())});
  }

  report(8, "schedule contract", schedules());
  report(9, "determinism and resumption", determinism(train_set, dev_set));

  std::size_t failed = 0;
  for (const auto& [id, ok] : g_results) failed += !ok;
  std::printf("%zu/%zu criteria passed\n", g_results.size() - failed, g_results.size());
  return failed == 0 ? 0 : 1;
}
