// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
#include "ciffuse/grad_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "ciffuse/cif.hpp"
#include "ciffuse/ctc.hpp"
#include "ciffuse/encoders.hpp"
#include "ciffuse/fusion.hpp"
#include "ciffuse/rng.hpp"

namespace ciffuse {

namespace {

std::vector<double> uniform(Rng& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Values bounded away from zero, with random sign.
std::vector<double> off_zero(Rng& rng, std::size_t n) {
  auto v = uniform(rng, n, 0.2, 2.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& x : v)
    if (sign(rng)) x = -x;
  return v;
}

// Scalar loss = <out, W> with a fixed random W, so every output entry matters.
Tensor project(Tensor out, std::uint64_t seed) {
  Rng rng(seed);
  auto w = uniform(rng, out.size(), -1.0, 1.0);
  return sum(mul(out, out.tape()->constant(out.shape(), std::move(w))));
}

struct Case {
  std::string op;
  // Builds one instance: fills inputs and returns the loss function.
  std::function<LossFn(Rng&, std::vector<GradInput>&)> make;
};

std::vector<Case> op_cases() {
  std::vector<Case> cases;
  auto unary = [&](std::string name, std::function<Tensor(Tensor)> f, bool positive) {
    cases.push_back({name, [f, positive](Rng& rng, std::vector<GradInput>& in) {
                       in.push_back({{3, 4}, positive ? uniform(rng, 12, 0.2, 3.0) : off_zero(rng, 12)});
                       const auto s = rng();
                       return LossFn([f, s](Tape&, std::span<const Tensor> x) { return project(f(x[0]), s); });
                     }});
  };
  cases.push_back({"matmul", [](Rng& rng, std::vector<GradInput>& in) {
                     in.push_back({{3, 4}, uniform(rng, 12, -1, 1)});
                     in.push_back({{4, 2}, uniform(rng, 8, -1, 1)});
                     const auto s = rng();
                     return LossFn([s](Tape&, std::span<const Tensor> x) { return project(matmul(x[0], x[1]), s); });
                   }});
  cases.push_back({"add_broadcast", [](Rng& rng, std::vector<GradInput>& in) {
                     in.push_back({{3, 4}, uniform(rng, 12, -1, 1)});
                     in.push_back({{4}, uniform(rng, 4, -1, 1)});
                     in.push_back({{1}, uniform(rng, 1, -1, 1)});
                     const auto s = rng();
                     return LossFn([s](Tape&, std::span<const Tensor> x) {
                       return project(add(add(x[0], x[1]), x[2]), s);
                     });
                   }});
  cases.push_back({"mul_broadcast", [](Rng& rng, std::vector<GradInput>& in) {
                     in.push_back({{3, 4}, uniform(rng, 12, -1, 1)});
                     in.push_back({{3, 4}, uniform(rng, 12, -1, 1)});
                     in.push_back({{4}, uniform(rng, 4, -1, 1)});
                     const auto s = rng();
                     return LossFn([s](Tape&, std::span<const Tensor> x) {
                       return project(mul(mul(x[0], x[1]), x[2]), s);
                     });
                   }});
  cases.push_back({"sub_scale", [](Rng& rng, std::vector<GradInput>& in) {
                     in.push_back({{3, 4}, uniform(rng, 12, -1, 1)});
                     in.push_back({{3, 4}, uniform(rng, 12, -1, 1)});
                     const auto s = rng();
                     return LossFn([s](Tape&, std::span<const Tensor> x) {
                       return project(add_scalar(scale(sub(x[0], x[1]), -1.7), 0.3), s);
                     });
                   }});
  unary("sigmoid", [](Tensor t) { return sigmoid(t); }, false);
  unary("tanh", [](Tensor t) { return tanh(t); }, false);
  unary("relu", [](Tensor t) { return relu(t); }, false);
  unary("exp", [](Tensor t) { return exp(t); }, false);
  unary("log", [](Tensor t) { return log(t); }, true);
  unary("abs", [](Tensor t) { return abs(t); }, false);
  unary("reciprocal", [](Tensor t) { return reciprocal(t); }, false);
  unary("softmax_rows", [](Tensor t) { return softmax_rows(t); }, false);
  unary("log_softmax_rows", [](Tensor t) { return log_softmax_rows(t); }, false);
  unary("transpose", [](Tensor t) { return transpose(t); }, false);
  unary("reshape_mean", [](Tensor t) { return mul(mean(t), sum(reshape(t, {12}))); }, false);
  unary("slice_concat", [](Tensor t) {
    Tensor parts[] = {slice_cols(t, 2, 4), slice_cols(t, 0, 3)};
    return concat_cols(parts);
  }, false);
  cases.push_back({"softmax_cross_entropy", [](Rng& rng, std::vector<GradInput>& in) {
                     in.push_back({{4, 5}, uniform(rng, 20, -2, 2)});
                     std::uniform_int_distribution<int> tok(0, 4);
                     std::vector<int> tg = {tok(rng), tok(rng), -1, tok(rng)};
                     return LossFn([tg](Tape&, std::span<const Tensor> x) {
                       return softmax_cross_entropy(x[0], tg, -1);
                     });
                   }});
  cases.push_back({"layer_norm", [](Rng& rng, std::vector<GradInput>& in) {
                     in.push_back({{3, 4}, uniform(rng, 12, -2, 2)});
                     in.push_back({{4}, uniform(rng, 4, 0.5, 1.5)});
                     in.push_back({{4}, uniform(rng, 4, -0.5, 0.5)});
                     const auto s = rng();
                     return LossFn([s](Tape&, std::span<const Tensor> x) {
                       return project(layer_norm(x[0], x[1], x[2]), s);
                     });
                   }});
  cases.push_back({"gather_select_rows", [](Rng& rng, std::vector<GradInput>& in) {
                     in.push_back({{5, 3}, uniform(rng, 15, -1, 1)});
                     in.push_back({{4, 3}, uniform(rng, 12, -1, 1)});
                     std::uniform_int_distribution<int> tok(0, 4);
                     std::vector<int> ids = {tok(rng), tok(rng), tok(rng), tok(rng)};
                     std::vector<char> mask = {1, 0, 1, 0};
                     const auto s = rng();
                     return LossFn([ids, mask, s](Tape&, std::span<const Tensor> x) {
                       return project(select_rows(mask, x[1], gather_rows(x[0], ids)), s);
                     });
                   }});
  cases.push_back({"unfold_time", [](Rng& rng, std::vector<GradInput>& in) {
                     in.push_back({{7, 2}, uniform(rng, 14, -1, 1)});
                     const auto s = rng();
                     return LossFn([s](Tape&, std::span<const Tensor> x) {
                       return project(unfold_time(x[0], 3, 2), s);
                     });
                   }});
  return cases;
}

std::vector<Case> cif_ctc_cases() {
  std::vector<Case> cases;
  cases.push_back({"cif.attention_weights", [](Rng& rng, std::vector<GradInput>& in) {
                     in.push_back({{5, 4}, uniform(rng, 20, -2, 2)});
                     const auto s = rng();
                     return LossFn([s](Tape&, std::span<const Tensor> x) {
                       return project(cif::attention_weights(x[0]), s);
                     });
                   }});
  cases.push_back({"cif.resize_weights", [](Rng& rng, std::vector<GradInput>& in) {
                     in.push_back({{6}, uniform(rng, 6, 0.1, 0.9)});
                     const auto s = rng();
                     return LossFn([s](Tape&, std::span<const Tensor> x) {
                       return project(cif::resize_weights(x[0], 3), s);
                     });
                   }});
  cases.push_back({"cif.integrate_and_fire", [](Rng& rng, std::vector<GradInput>& in) {
                     std::uniform_int_distribution<std::size_t> tlen(2, 8), dd(1, 4);
                     const std::size_t t = tlen(rng), d = dd(rng);
                     auto w = uniform(rng, t, 0.05, 0.95);
                     double total = 0;
                     for (double v : w) total += v;
                     const auto cells = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(total)));
                     in.push_back({{t}, w});
                     in.push_back({{t, d}, uniform(rng, t * d, -1, 1)});
                     const auto s = rng();
                     return LossFn([s, cells](Tape&, std::span<const Tensor> x) {
                       return project(*cif::integrate_and_fire(x[0], x[1], cells), s);
                     });
                   }});
  cases.push_back({"cif.quantity_loss", [](Rng& rng, std::vector<GradInput>& in) {
                     std::uniform_int_distribution<std::size_t> tlen(2, 8);
                     const std::size_t t = tlen(rng);
                     in.push_back({{t, 3}, uniform(rng, t * 3, -2, 2)});
                     std::uniform_int_distribution<std::size_t> n(1, 6);
                     const std::size_t n_star = n(rng);
                     return LossFn([n_star](Tape&, std::span<const Tensor> x) {
                       return cif::quantity_loss(cif::attention_weights(x[0]), n_star);
                     });
                   }});
  cases.push_back({"cif.pipeline", [](Rng& rng, std::vector<GradInput>& in) {
                     std::uniform_int_distribution<std::size_t> tlen(2, 8), dd(1, 4);
                     const std::size_t t = tlen(rng), d = dd(rng);
                     std::uniform_int_distribution<std::size_t> n(1, t);
                     const std::size_t n_star = n(rng);
                     in.push_back({{t, d + 1}, uniform(rng, t * (d + 1), -2, 2)});
                     const auto s = rng();
                     return LossFn([s, n_star](Tape&, std::span<const Tensor> x) {
                       auto r = cif::run_training(x[0], n_star);
                       return project(*r.integrated, s);
                     });
                   }});
  cases.push_back({"ctc_loss", [](Rng& rng, std::vector<GradInput>& in) {
                     std::uniform_int_distribution<std::size_t> tlen(2, 5), vv(2, 4);
                     const std::size_t t = tlen(rng), v = vv(rng);
                     const int blank = static_cast<int>(v) - 1;
                     std::uniform_int_distribution<int> tok(0, blank - 1);
                     std::uniform_int_distribution<std::size_t> n(1, std::min<std::size_t>(3, (t + 1) / 2));
                     std::vector<int> target(n(rng));
                     for (auto& y : target) y = tok(rng);
                     in.push_back({{t, v}, uniform(rng, t * v, -2, 2)});
                     return LossFn([target, blank](Tape&, std::span<const Tensor> x) {
                       return ctc::ctc_loss(log_softmax_rows(x[0]), {target, blank}).loss;
                     });
                   }});
  return cases;
}

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed, std::size_t instances,
                                               const GradCheckOptions& opts) {
  std::vector<GradSuiteEntry> out;
  auto cases = op_cases();
  auto more = cif_ctc_cases();
  cases.insert(cases.end(), more.begin(), more.end());

  for (std::size_t c = 0; c < cases.size(); ++c) {
    GradSuiteEntry e{cases[c].op};
    for (std::size_t k = 0; k < instances; ++k) {
      Rng rng = make_rng(seed, {c, k});
      std::vector<GradInput> inputs;
      LossFn loss = cases[c].make(rng, inputs);
      auto r = check_gradients(cases[c].op, loss, std::move(inputs), opts);
      ++e.instances;
      e.coords += r.coords;
      e.max_rel_err = std::max(e.max_rel_err, r.max_rel_err);
      e.passed = e.passed && r.passed;
    }
    out.push_back(e);
  }

  // Parameterised modules: gradients w.r.t. every parameter.
  auto model_case = [&](const std::string& name, std::size_t salt,
                        const std::function<GradCheckReport(std::uint64_t)>& run) {
    GradSuiteEntry e{name};
    for (std::size_t k = 0; k < instances; ++k) {
      auto r = run(derive_seed(seed, {salt, k}));
      ++e.instances;
      e.coords += r.coords;
      e.max_rel_err = std::max(e.max_rel_err, r.max_rel_err);
      e.passed = e.passed && r.passed;
    }
    out.push_back(e);
  };

  model_case("encode_acoustic", 1001, [&](std::uint64_t s) {
    encoders::AcousticConfig cfg{4, 3, 1, 3, 1, 2, 2, true};
    nn::ParamStore store;
    encoders::AcousticEncoder enc(store, "acoustic", cfg);
    Rng rng(s);
    enc.init(rng);
    for (auto* p : store.all())
      if (p->name.find(".out.") != std::string::npos) nn::init_uniform(*p, rng, 0.3);
    auto frames = uniform(rng, 8 * 4, -1, 1);
    const auto ps = rng();
    auto params = store.all();
    return check_param_gradients(
        "encode_acoustic",
        [&](Tape& tape) {
          nn::Binder bind(tape);
          return project(enc.encode(bind, tape.constant({8, 4}, frames)), ps);
        },
        params, opts);
  });

  model_case("encode_linguistic", 1002, [&](std::uint64_t s) {
    encoders::LinguisticConfig cfg{5, 4, 1, 2, 2};
    nn::ParamStore store;
    encoders::LinguisticEncoder enc(store, "linguistic", cfg);
    Rng rng(s);
    enc.init(rng);
    for (auto* p : store.all())
      if (p->name.find("embedding") != std::string::npos) nn::init_uniform(*p, rng, 0.5);
    std::uniform_int_distribution<int> tok(0, 5);
    std::vector<int> ids = {tok(rng), tok(rng), tok(rng)};
    const auto ps = rng();
    auto params = store.all();
    return check_param_gradients(
        "encode_linguistic",
        [&](Tape& tape) {
          nn::Binder bind(tape);
          return project(enc.to_vocab(bind, enc.encode(bind, enc.embed(bind, ids))), ps);
        },
        params, opts);
  });

  model_case("fused_loss", 1003, [&](std::uint64_t s) {
    fusion::ModelConfig cfg;
    cfg.acoustic = {3, 3, 1, 3, 1, 1, 2, true};
    cfg.linguistic = {4, 4, 1, 2, 2};
    fusion::FusionModel model(cfg, s);
    Rng rng(s ^ 0x5eed);
    // Break the zero init of the weight channel so every path is exercised.
    nn::init_uniform(model.params().get("acoustic.out.weight"), rng, 0.3);
    auto frames = uniform(rng, 2 * 3, -1, 1);
    std::uniform_int_distribution<int> tok(0, 3);
    std::vector<int> tokens = {tok(rng), 0};
    tokens[1] = (tokens[0] + 1 + tok(rng) % 3) % 4;  // distinct, so CTC fits in 2 frames
    std::vector<char> mask = {static_cast<char>(rng() % 2), static_cast<char>(rng() % 2)};
    auto params = model.params().all();
    return check_param_gradients(
        "fused_loss",
        [&](Tape& tape) {
          nn::Binder bind(tape);
          return model.forward_train(bind, frames, 2, tokens, mask).loss;
        },
        params, opts);
  });
  return out;
}

}  // namespace ciffuse
