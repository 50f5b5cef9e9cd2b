// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
#include "ciffuse/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "ciffuse/cif.hpp"
#include "ciffuse/ctc.hpp"
#include "ciffuse/errors.hpp"

namespace ciffuse::fusion {

void LossWeights::validate() const {
  for (double w : {mu1, mu2, lambda_ac, lambda_lm})
    if (!(w >= 0.0)) throw ConfigError("loss weights must be non-negative");
}

void GoldRateSchedule::validate() const {
  if (!(start_p >= 0.0 && start_p <= 1.0 && end_p >= 0.0 && end_p <= 1.0))
    throw ConfigError("gold rate must lie in [0,1]");
  if (decay_steps == 0) throw ConfigError("gold rate decay_steps must be positive");
}

double gold_rate(const GoldRateSchedule& s, std::uint64_t step) {
  if (s.decay_steps == GoldRateSchedule::kNever) return s.start_p;
  if (step >= s.decay_steps) return s.end_p;
  const double frac = static_cast<double>(step) / static_cast<double>(s.decay_steps);
  return s.start_p + (s.end_p - s.start_p) * frac;
}

Tensor fuse_logits(Tensor logits_ac, Tensor logits_lm, double lambda_ac, double lambda_lm) {
  if (logits_ac.shape() != logits_lm.shape())
    throw ShapeError("fuse_logits: " + shape_str(logits_ac.shape()) + " vs " +
                     shape_str(logits_lm.shape()));
  return add(scale(logits_ac, lambda_ac), scale(logits_lm, lambda_lm));
}

std::vector<char> anchor_positions(std::span<const double> logits_ac, std::size_t vocab,
                                   double th) {
  const std::size_t rows = logits_ac.size() / vocab;
  std::vector<char> anchors(rows, 0);
  for (std::size_t u = 0; u < rows; ++u) {
    const double* row = logits_ac.data() + u * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
    anchors[u] = (1.0 / z) > th ? 1 : 0;  // max prob = exp(0)/z
  }
  return anchors;
}

namespace {
std::vector<int> row_argmax(std::span<const double> m, std::size_t cols) {
  std::vector<int> out(m.size() / cols);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double* row = m.data() + i * cols;
    out[i] = static_cast<int>(std::max_element(row, row + cols) - row);
  }
  return out;
}
}  // namespace

FusionModel::FusionModel(ModelConfig cfg, std::uint64_t seed)
    : cfg_(cfg),
      acoustic_(store_, "acoustic", cfg.acoustic),
      linguistic_(store_, "linguistic", cfg.linguistic),
      modality_fc_(store_, "modality_fc", cfg.acoustic.content_dim, cfg.linguistic.dim),
      to_vocab_1_(store_, "to_vocab_1", cfg.linguistic.dim, cfg.linguistic.vocab_size),
      to_vocab_2_(store_, "to_vocab_2", cfg.acoustic.width(), cfg.linguistic.vocab_size + 1) {
  cfg_.weights.validate();
  Rng rng = make_rng(seed, {0x4655});
  acoustic_.init(rng);
  linguistic_.init(rng);
  modality_fc_.init(rng);
  to_vocab_1_.init(rng);
  to_vocab_2_.init(rng);
  sync_output_projections();
}

void FusionModel::set_weights(const LossWeights& w) {
  w.validate();
  cfg_.weights = w;
}

void FusionModel::sync_output_projections() {
  const nn::Linear& src = linguistic_.to_vocab_0();
  const std::size_t v = cfg_.linguistic.vocab_size;
  const std::size_t dl = cfg_.linguistic.dim;
  to_vocab_1_.weight->value = src.weight->value;
  to_vocab_1_.bias->value = src.bias->value;
  const std::size_t rows = std::min(dl, cfg_.acoustic.width());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < v; ++c)
      to_vocab_2_.weight->value[r * (v + 1) + c] = src.weight->value[r * v + c];
  for (std::size_t c = 0; c < v; ++c) to_vocab_2_.bias->value[c] = src.bias->value[c];
}

void FusionModel::load_linguistic(const nn::ParamStore& pretrained) {
  std::size_t copied = 0;
  for (const Parameter* p : pretrained.all()) {
    if (p->name.rfind("linguistic.", 0) != 0) continue;
    Parameter* dst = store_.find(p->name);
    if (!dst) throw ConfigError("pretrained parameter " + p->name + " has no counterpart");
    if (dst->shape != p->shape)
      throw ConfigError("shape mismatch for " + p->name + ": " + shape_str(p->shape) + " vs " +
                        shape_str(dst->shape));
    dst->value = p->value;
    ++copied;
  }
  if (copied == 0) throw ConfigError("no linguistic parameters found in pretrained checkpoint");
  sync_output_projections();
}

FusionOutput FusionModel::forward_train(nn::Binder& bind, std::span<const double> feats,
                                        std::size_t frames, std::span<const int> tokens,
                                        std::span<const char> replace) const {
  const std::size_t n_star = tokens.size();
  if (n_star == 0) throw ShapeError("forward_train: empty target");
  if (replace.size() != n_star) throw ShapeError("forward_train: mask length != n*");
  if (feats.size() != frames * cfg_.acoustic.feature_dim)
    throw ShapeError("forward_train: feature buffer size mismatch");
  const auto& w = cfg_.weights;
  Tape& tape = bind.tape();

  FusionOutput out;
  out.replaced.assign(replace.begin(), replace.end());
  Tensor x = tape.constant({frames, cfg_.acoustic.feature_dim}, {feats.begin(), feats.end()});
  out.h_ac = acoustic_.encode(bind, x);

  cif::CifResult cif = cif::run_training(out.h_ac, n_star);
  out.alpha = cif.alpha;
  out.n_hat = cif.predicted_length;
  out.l_qua = cif::quantity_loss(cif.alpha, n_star);

  Tensor ctc_lp = log_softmax_rows(to_vocab_2_(bind, out.h_ac));
  ctc::LossResult ctc = ctc::ctc_loss(ctc_lp, {std::vector<int>(tokens.begin(), tokens.end()),
                                               blank_id()});
  out.l_ctc = ctc.loss;
  out.ctc_feasible = ctc.feasible;

  out.h_lm = modality_fc_(bind, *cif.integrated);
  Tensor gold = linguistic_.embed(bind, tokens);
  Tensor mixed = select_rows(replace, out.h_lm, gold);
  out.logits_lm = linguistic_.to_vocab(bind, linguistic_.encode(bind, mixed));
  out.logits_ac = to_vocab_1_(bind, out.h_lm);
  out.logits = fuse_logits(out.logits_ac, out.logits_lm, w.lambda_ac, w.lambda_lm);
  out.l_ce = softmax_cross_entropy(out.logits, tokens, -1);

  Tensor total = add(out.l_ce, scale(out.l_qua, w.mu1));
  if (ctc.feasible) total = add(total, scale(out.l_ctc, w.mu2));
  out.loss = total;
  return out;
}

FusionOutput FusionModel::forward_train(nn::Binder& bind, const data::Utterance& utt, double p,
                                        Rng& rng) const {
  std::bernoulli_distribution coin(p);
  std::vector<char> replace(utt.tokens.size());
  for (auto& r : replace) r = coin(rng) ? 1 : 0;
  return forward_train(bind, utt.feats, utt.frames, utt.tokens, replace);
}

InferenceResult FusionModel::forward_infer(std::span<const double> feats, std::size_t frames,
                                           double th) const {
  if (feats.size() != frames * cfg_.acoustic.feature_dim)
    throw ShapeError("forward_infer: feature buffer size mismatch");
  Tape tape;
  nn::Binder bind(tape, false);
  const auto& w = cfg_.weights;
  const std::size_t v = cfg_.linguistic.vocab_size;

  Tensor x = tape.constant({frames, cfg_.acoustic.feature_dim}, {feats.begin(), feats.end()});
  Tensor h_ac = acoustic_.encode(bind, x);
  cif::CifResult cif = cif::run_inference(h_ac);
  InferenceResult res;
  res.n_hat = cif.predicted_length;
  res.fired = cif.fired_count;
  if (!cif.integrated) return res;

  Tensor h_lm = modality_fc_(bind, *cif.integrated);
  Tensor logits_ac = to_vocab_1_(bind, h_lm);
  res.acoustic_tokens = row_argmax(logits_ac.value(), v);
  res.anchors = anchor_positions(logits_ac.value(), v, th);
  Tensor anchor_emb = linguistic_.embed(bind, res.acoustic_tokens);
  Tensor mixed = select_rows(res.anchors, h_lm, anchor_emb);
  Tensor logits_lm = linguistic_.to_vocab(bind, linguistic_.encode(bind, mixed));
  Tensor logits = fuse_logits(logits_ac, logits_lm, w.lambda_ac, w.lambda_lm);
  res.tokens = row_argmax(logits.value(), v);
  return res;
}

}  // namespace ciffuse::fusion
