// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
#include <doctest.h>
#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "ciffuse/checkpoint.hpp"
#include "ciffuse/data.hpp"
#include "ciffuse/errors.hpp"
#include "ciffuse/fusion.hpp"
#include "ciffuse/optim.hpp"
#include "ciffuse/training.hpp"

using namespace ciffuse;

namespace {

training::ExperimentConfig tiny_config() {
  training::ExperimentConfig cfg;
  auto& m = cfg.model;
  m.acoustic.content_dim = 7;
  m.acoustic.heads = 2;
  m.acoustic.blocks = 1;
  m.linguistic.dim = 8;
  m.linguistic.heads = 2;
  m.linguistic.blocks = 1;
  cfg.train.batch_size = 4;
  cfg.train.eval_every = 10;
  cfg.lr.warmup_steps = 10;
  cfg.lr.hold_steps = 30;
  return cfg;
}

const data::Dataset& train_set() {
  static const auto ds = data::generate_dataset(data::TaskSpec{}, 40, 1);
  return ds;
}
const data::Dataset& dev_set() {
  static const auto ds = data::generate_dataset(data::TaskSpec{}, 12, 2);
  return ds;
}

std::vector<std::vector<double>> snapshot(fusion::FusionModel& model) {
  std::vector<std::vector<double>> out;
  for (auto* p : model.params().all()) out.push_back(p->value);
  return out;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  training::LrSchedule s{100, 0.01, 50, 0.99};
  CHECK(training::lr_at(s, 0) == 0.0);
  CHECK(training::lr_at(s, 50) == 0.005);
  CHECK(training::lr_at(s, 100) == 0.01);
  CHECK(training::lr_at(s, 149) == 0.01);
  CHECK(training::lr_at(s, 150) == 0.01);
  CHECK(training::lr_at(s, 153) == doctest::Approx(0.01 * std::pow(0.99, 3)).epsilon(1e-15));
  for (std::uint64_t t = 150; t < 300; ++t) CHECK(training::lr_at(s, t + 1) < training::lr_at(s, t));
  CHECK(training::phase_at(s, 99) == training::Phase::warmup);
  CHECK(training::phase_at(s, 100) == training::Phase::hold);
  CHECK(training::phase_at(s, 150) == training::Phase::decay);

  const auto large = training::LrSchedule::large();
  CHECK(large.warmup_steps == 8000);
  CHECK(large.hold_steps == 42000);
  CHECK(training::lr_at(large, 8000) == 4e-5);
  CHECK(training::lr_at(large, 4000) == 2e-5);
}

TEST_CASE("adam: zero gradient is a fixed point") {
  Parameter p("w", {3});
  p.value = {1, -2, 3};
  p.grad = {0, 0, 0};
  Parameter* ps[] = {&p};
  optim::AdamState st;
  for (int i = 0; i < 5; ++i) optim::adam_step(ps, st, 0.1);
  CHECK(p.value == std::vector<double>{1, -2, 3});
}

TEST_CASE("adam: closed-form first step and constant-gradient limit") {
  Parameter p("w", {4});
  p.value = {0, 0, 0, 0};
  p.grad = {0.5, -2.0, 1e-3, 7.0};
  Parameter* ps[] = {&p};
  optim::AdamState st;
  const double lr = 0.01;
  optim::adam_step(ps, st, lr);
  for (std::size_t i = 0; i < 4; ++i) {
    const double g = p.grad[i];
    // m_hat = g, v_hat = g^2 after bias correction.
    CHECK(p.value[i] == doctest::Approx(-lr * g / (std::fabs(g) + st.eps)).epsilon(1e-12));
  }
  for (int i = 0; i < 2000; ++i) {
    const auto before = p.value;
    optim::adam_step(ps, st, lr);
    if (i == 1999)
      for (std::size_t k = 0; k < 4; ++k) CHECK(std::fabs(before[k] - p.value[k]) == doctest::Approx(lr).epsilon(1e-3));
  }
}

TEST_CASE("adam refuses non-finite gradients without touching anything") {
  Parameter a("a", {2}), b("b", {1});
  a.value = {1, 2};
  a.grad = {0.1, 0.1};
  b.value = {3};
  b.grad = {std::numeric_limits<double>::quiet_NaN()};
  Parameter* ps[] = {&a, &b};
  optim::AdamState st;
  CHECK_THROWS_AS(optim::adam_step(ps, st, 0.1), NumericDomainError);
  CHECK(a.value == std::vector<double>{1, 2});
  CHECK(st.step == 0);
  b.grad = {std::numeric_limits<double>::infinity()};
  CHECK_THROWS_AS(optim::adam_step(ps, st, 0.1), NumericDomainError);
}

TEST_CASE("global norm clipping") {
  Parameter a("a", {2}), b("b", {1});
  a.grad = {3, 0};
  b.grad = {4};
  Parameter* ps[] = {&a, &b};
  CHECK(optim::clip_grad_norm(ps, 10.0) == 5.0);
  CHECK(a.grad[0] == 3.0);
  CHECK(optim::clip_grad_norm(ps, 1.0) == 5.0);
  CHECK(a.grad[0] == doctest::Approx(0.6));
  CHECK(b.grad[0] == doctest::Approx(0.8));
}

TEST_CASE("config parsing") {
  std::istringstream is(
      "# ablation\n"
      "mu1 = 0\n"
      "gold_start = 0.2   # constant\n"
      "gold_end = 0.2\n"
      "gold_steps = inf\n"
      "\n"
      "steps = 123\n"
      "parallel = false\n");
  const auto cfg = training::parse_config(is);
  CHECK(cfg.model.weights.mu1 == 0.0);
  CHECK(cfg.gold.decay_steps == fusion::GoldRateSchedule::kNever);
  CHECK(fusion::gold_rate(cfg.gold, 123456) == 0.2);
  CHECK(cfg.train.steps == 123);
  CHECK_FALSE(cfg.train.parallel);

  std::istringstream typo("mu1 = 0\nmu_1 = 0.3\n");
  CHECK_THROWS_WITH_AS(training::parse_config(typo), doctest::Contains("line 2"), ConfigError);
  std::istringstream bad_value("steps = many\n");
  CHECK_THROWS_AS(training::parse_config(bad_value), ConfigError);
  std::istringstream no_eq("steps 10\n");
  CHECK_THROWS_AS(training::parse_config(no_eq), ConfigError);
  std::istringstream negative("mu2 = -1\n");
  CHECK_THROWS_AS(training::parse_config(negative), ConfigError);

  std::istringstream preset("lr_preset = large\n");
  CHECK(training::parse_config(preset).lr.peak_lr == 4e-5);

  // entries() round-trips through apply().
  training::ExperimentConfig round;
  for (const auto& [k, v] : cfg.entries()) round.apply(k, v);
  CHECK(round.entries() == cfg.entries());
}

TEST_CASE("metrics log header echoes the configuration") {
  auto cfg = tiny_config();
  std::ostringstream os;
  training::write_metrics_header(os, cfg);
  training::write_metrics_row(os, {10, 1.5, 1.0, 0.5, 2.0, 0.9, 1e-3, 12.5});
  training::write_metrics_row(os, {20, 1.5, 1.0, 0.5, 2.0, 0.9, 1e-3, {}});
  const auto text = os.str();
  CHECK(text.find("# mu1 = 0.2\n") != std::string::npos);
  CHECK(text.find("# gold_steps = 4000\n") != std::string::npos);
  CHECK(text.find("step\tL\tL_ce\tL_qua\tL_ctc\tgold_rate\tlr\tCER\n") != std::string::npos);
  CHECK(text.find("10\t1.5\t1\t0.5\t2\t0.9\t0.001\t12.5\n") != std::string::npos);
  CHECK(text.find("20\t1.5\t1\t0.5\t2\t0.9\t0.001\t-\n") != std::string::npos);
}

TEST_CASE("batch indices cover each epoch once") {
  std::multiset<std::size_t> seen;
  for (std::uint64_t step = 0; step < 10; ++step)
    for (auto i : training::batch_indices(40, 4, 3, step)) seen.insert(i);
  CHECK(seen.size() == 40);
  for (std::size_t i = 0; i < 40; ++i) CHECK(seen.count(i) == 1);
  CHECK(training::batch_indices(40, 4, 3, 7) == training::batch_indices(40, 4, 3, 7));
  CHECK(training::batch_indices(40, 4, 3, 7) != training::batch_indices(40, 4, 4, 7));
  CHECK(training::batch_indices(3, 5, 1, 0).size() == 5);
}

TEST_CASE("serial and parallel batch gradients are bit-identical") {
  const int saved = omp_get_max_threads();
  omp_set_num_threads(4);
  auto cfg = tiny_config();
  fusion::FusionModel model(cfg.model, 5);
  const auto& ds = train_set();
  auto run = [&](bool parallel) {
    model.params().zero_grad();
    auto res = optim::accumulate_batch_gradients(
        model.params(), 8,
        [&](Tape&, nn::Binder& bind, std::size_t i) {
          Rng rng = make_rng(1, {i});
          return model.forward_train(bind, ds.utterances[i], 0.5, rng).loss;
        },
        parallel);
    std::vector<std::vector<double>> g;
    for (auto* p : model.params().all()) g.push_back(p->grad);
    return std::make_pair(res.losses, g);
  };
  const auto serial = run(false);
  const auto parallel = run(true);
  omp_set_num_threads(saved);
  CHECK(serial.first == parallel.first);
  CHECK(serial.second == parallel.second);
}

TEST_CASE("zero steps writes the initial checkpoint and changes nothing") {
  auto cfg = tiny_config();
  cfg.train.steps = 0;
  fusion::FusionModel model(cfg.model, 1);
  const auto before = snapshot(model);
  training::TrainState st;
  int saves = 0;
  training::TrainHooks hooks;
  hooks.checkpoint = [&](const training::TrainState& s) {
    ++saves;
    CHECK(s.step == 0);
  };
  auto res = training::train(model, st, train_set(), nullptr, cfg, hooks);
  CHECK(saves == 1);
  CHECK(res.log.empty());
  CHECK(snapshot(model) == before);
}

TEST_CASE("training lowers the loss on a frozen batch") {
  auto cfg = tiny_config();
  cfg.train.steps = 50;
  fusion::FusionModel model(cfg.model, 2);
  data::Dataset frozen{train_set().vocab_size, train_set().feature_dim,
                       {train_set().utterances.begin(), train_set().utterances.begin() + 4}};
  auto batch_loss = [&] {
    double total = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      Tape tape;
      nn::Binder bind(tape, false);
      total += model.forward_train(bind, frozen.utterances[i].feats, frozen.utterances[i].frames,
                                   frozen.utterances[i].tokens,
                                   std::vector<char>(frozen.utterances[i].tokens.size(), 0))
                   .loss.item();
    }
    return total;
  };
  const double before = batch_loss();
  training::TrainState st;
  training::train(model, st, frozen, nullptr, cfg);
  CHECK(batch_loss() < 0.5 * before);
}

TEST_CASE("identical seeds give identical logs") {
  auto cfg = tiny_config();
  cfg.train.steps = 30;
  auto run = [&] {
    fusion::FusionModel model(cfg.model, cfg.train.seed);
    training::TrainState st;
    std::ostringstream os;
    training::TrainHooks hooks;
    hooks.metrics = &os;
    training::write_metrics_header(os, cfg);
    training::train(model, st, train_set(), &dev_set(), cfg, hooks);
    return std::make_pair(os.str(), snapshot(model));
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  auto other = cfg;
  other.train.seed = 2;
  fusion::FusionModel m2(other.model, other.train.seed);
  training::TrainState st;
  training::train(m2, st, train_set(), nullptr, other);
  CHECK(snapshot(m2) != a.second);
}

TEST_CASE("checkpoint and resume equals uninterrupted training") {
  auto cfg = tiny_config();
  cfg.train.steps = 100;
  cfg.train.eval_every = 25;

  fusion::FusionModel straight(cfg.model, 1);
  training::TrainState s1;
  std::ostringstream log1;
  training::TrainHooks h1;
  h1.metrics = &log1;
  training::train(straight, s1, train_set(), &dev_set(), cfg, h1);

  fusion::FusionModel first(cfg.model, 1);
  training::TrainState s2;
  std::ostringstream log2;
  training::TrainHooks h2;
  h2.metrics = &log2;
  h2.stop_at = 50;
  std::string saved;
  h2.checkpoint = [&](const training::TrainState& st) {
    std::ostringstream os;
    checkpoint::write(os, checkpoint::capture(cfg.entries(), st.step, "hold", first.params(), &st.adam));
    saved = os.str();
  };
  training::train(first, s2, train_set(), &dev_set(), cfg, h2);
  REQUIRE_FALSE(saved.empty());

  std::istringstream is(saved);
  const auto ck = checkpoint::read(is);
  CHECK(ck.step == 50);
  training::ExperimentConfig restored_cfg;
  for (const auto& [k, v] : ck.config) restored_cfg.apply(k, v);
  CHECK(restored_cfg.entries() == cfg.entries());
  fusion::FusionModel resumed(restored_cfg.model, 777);  // init is overwritten
  checkpoint::restore_params(ck, resumed.params());
  training::TrainState s3;
  s3.step = ck.step;
  s3.adam = checkpoint::restore_adam(ck, resumed.params());
  training::TrainHooks h3;
  h3.metrics = &log2;
  training::train(resumed, s3, train_set(), &dev_set(), restored_cfg, h3);

  CHECK(s3.step == 100);
  CHECK(log1.str() == log2.str());
  const auto a = snapshot(straight), b = snapshot(resumed);
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < a[k].size(); ++i) worst = std::max(worst, std::fabs(a[k][i] - b[k][i]));
  CHECK(worst <= 1e-12);
}

TEST_CASE("checkpoint format errors") {
  auto cfg = tiny_config();
  fusion::FusionModel model(cfg.model, 1);
  std::ostringstream os;
  checkpoint::write(os, checkpoint::capture(cfg.entries(), 3, "warmup", model.params(), nullptr));
  const std::string text = os.str();
  CHECK(text.rfind("cif-fuse-ckpt v1\n", 0) == 0);

  std::istringstream trunc(text.substr(0, text.size() / 2));
  CHECK_THROWS_AS(checkpoint::read(trunc), ParseError);
  std::istringstream ver("cif-fuse-ckpt v2\n");
  CHECK_THROWS_WITH_AS(checkpoint::read(ver), doctest::Contains("version"), ParseError);

  std::istringstream ok(text);
  const auto ck = checkpoint::read(ok);
  auto other = cfg;
  other.model.linguistic.dim = 12;
  fusion::FusionModel mismatched(other.model, 1);
  CHECK_THROWS_AS(checkpoint::restore_params(ck, mismatched.params()), ConfigError);
  CHECK_THROWS(checkpoint::load("/nonexistent/model.ckpt"));
}

TEST_CASE("vocabulary mismatch is rejected") {
  auto cfg = tiny_config();
  cfg.model.linguistic.vocab_size = 8;
  fusion::FusionModel model(cfg.model, 1);
  CHECK_THROWS_AS(training::check_compatible(model, train_set()), ConfigError);
  training::TrainState st;
  CHECK_THROWS_AS(training::train(model, st, train_set(), nullptr, cfg), ConfigError);
}
