// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
#include "ciffuse/encoders.hpp"

#include <algorithm>
#include <cmath>

#include "ciffuse/errors.hpp"
#include "ciffuse/optim.hpp"

namespace ciffuse::encoders {

// ---------------------------------------------------------------------------
// Acoustic

AcousticEncoder::AcousticEncoder(nn::ParamStore& store, const std::string& prefix,
                                 AcousticConfig cfg)
    : cfg_(cfg),
      front_(store, prefix + ".front", cfg.kernel * cfg.feature_dim, cfg.width()),
      ln_final_(store, prefix + ".ln_final", cfg.width()),
      out_(store, prefix + ".out", cfg.width(), cfg.width()) {
  if (cfg.feature_dim == 0 || cfg.content_dim == 0 || cfg.stride == 0 || cfg.kernel == 0)
    throw ConfigError("acoustic encoder: feature_dim, content_dim, stride, kernel must be >= 1");
  for (std::size_t b = 0; b < cfg.blocks; ++b)
    blocks_.emplace_back(store, prefix + ".block" + std::to_string(b), cfg.width(), cfg.heads,
                         cfg.ffn_mult * cfg.width());
}

void AcousticEncoder::init(Rng& rng) {
  front_.init(rng);
  for (auto& b : blocks_) b.init(rng);
  ln_final_.init();
  out_.init(rng);
  const std::size_t w = cfg_.width();
  for (std::size_t i = 0; i < w; ++i) out_.weight->value[i * w + (w - 1)] = 0.0;
  out_.bias->value[w - 1] = 0.0;
}

std::size_t AcousticEncoder::output_length(std::size_t frames) const {
  return (frames + cfg_.stride - 1) / cfg_.stride;
}

Tensor AcousticEncoder::encode(nn::Binder& bind, Tensor frames) const {
  if (frames.rank() != 2 || frames.cols() != cfg_.feature_dim)
    throw ShapeError("encode_acoustic: expected [T x " + std::to_string(cfg_.feature_dim) +
                     "], got " + shape_str(frames.shape()));
  Tensor h = relu(front_(bind, unfold_time(frames, cfg_.kernel, cfg_.stride)));
  if (cfg_.positional)
    h = add(h, bind.tape().constant(h.shape(), nn::sinusoidal_positions(h.rows(), h.cols())));
  for (const auto& b : blocks_) h = b(bind, h);
  return out_(bind, ln_final_(bind, h));
}

// ---------------------------------------------------------------------------
// Linguistic

LinguisticEncoder::LinguisticEncoder(nn::ParamStore& store, const std::string& prefix,
                                     LinguisticConfig cfg)
    : cfg_(cfg),
      embedding_(&store.add(prefix + ".embedding", {cfg.vocab_size + 1, cfg.dim})),
      ln_final_(store, prefix + ".ln_final", cfg.dim),
      to_vocab_0_(store, prefix + ".to_vocab_0", cfg.dim, cfg.vocab_size) {
  if (cfg.vocab_size < 2 || cfg.dim == 0) throw ConfigError("linguistic encoder: bad sizes");
  for (std::size_t b = 0; b < cfg.blocks; ++b)
    blocks_.emplace_back(store, prefix + ".block" + std::to_string(b), cfg.dim, cfg.heads,
                         cfg.ffn_mult * cfg.dim);
}

void LinguisticEncoder::init(Rng& rng) {
  nn::init_normal(*embedding_, rng, 0.02);
  for (auto& b : blocks_) b.init(rng);
  ln_final_.init();
  to_vocab_0_.init(rng);
}

Tensor LinguisticEncoder::embed(nn::Binder& bind, std::span<const int> ids) const {
  return gather_rows(bind(*embedding_), ids);
}

Tensor LinguisticEncoder::encode(nn::Binder& bind, Tensor inputs, bool positional) const {
  if (inputs.rank() != 2 || inputs.cols() != cfg_.dim)
    throw ShapeError("encode_linguistic: expected [U x " + std::to_string(cfg_.dim) + "], got " +
                     shape_str(inputs.shape()));
  Tensor h = inputs;
  if (positional)
    h = add(h, bind.tape().constant(h.shape(), nn::sinusoidal_positions(h.rows(), h.cols())));
  for (const auto& b : blocks_) h = b(bind, h);
  return ln_final_(bind, h);
}

LanguageModel::LanguageModel(LinguisticConfig cfg, std::uint64_t seed)
    : encoder(store, "linguistic", cfg) {
  Rng rng = make_rng(seed, {0x4c4d});
  encoder.init(rng);
}

// ---------------------------------------------------------------------------
// Mask-predict

namespace {

struct MaskedExample {
  std::vector<int> input;   // with mask ids substituted
  std::vector<int> target;  // -1 where not masked
};

constexpr int kIgnore = -1;

MaskedExample mask_sequence(const std::vector<int>& seq, double rate, int mask_id, Rng& rng) {
  MaskedExample ex{seq, std::vector<int>(seq.size(), kIgnore)};
  std::bernoulli_distribution coin(rate);
  bool any = false;
  for (std::size_t i = 0; i < seq.size(); ++i)
    if (coin(rng)) {
      ex.target[i] = seq[i];
      ex.input[i] = mask_id;
      any = true;
    }
  if (!any) {
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, seq.size() - 1)(rng);
    ex.target[i] = seq[i];
    ex.input[i] = mask_id;
  }
  return ex;
}

void validate_corpus(std::span<const std::vector<int>> corpus, std::size_t vocab) {
  if (corpus.empty()) throw ConfigError("mask-predict: empty corpus");
  for (const auto& seq : corpus) {
    if (seq.empty()) throw ConfigError("mask-predict: empty sequence in corpus");
    for (int t : seq)
      if (t < 0 || static_cast<std::size_t>(t) >= vocab)
        throw ConfigError("mask-predict: token " + std::to_string(t) +
                          " outside vocabulary of " + std::to_string(vocab));
  }
}

Tensor masked_logits(const LinguisticEncoder& enc, nn::Binder& bind, const MaskedExample& ex) {
  return enc.to_vocab(bind, enc.encode(bind, enc.embed(bind, ex.input)));
}

}  // namespace

std::vector<double> pretrain_mask_predict(LanguageModel& lm,
                                          std::span<const std::vector<int>> corpus,
                                          const PretrainConfig& cfg) {
  if (cfg.mask_rate <= 0.0) throw EmptyTargetError();
  validate_corpus(corpus, lm.encoder.config().vocab_size);
  auto params = lm.store.all();
  optim::AdamState adam;
  adam.reset(params);
  std::vector<double> losses;
  losses.reserve(cfg.steps);
  const int mask_id = lm.encoder.mask_token_id();

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Rng pick = make_rng(cfg.seed, {step});
    std::uniform_int_distribution<std::size_t> which(0, corpus.size() - 1);
    std::vector<MaskedExample> batch;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      Rng mrng = make_rng(cfg.seed, {step, b, 1});
      batch.push_back(mask_sequence(corpus[which(pick)], cfg.mask_rate, mask_id, mrng));
    }
    lm.store.zero_grad();
    auto res = optim::accumulate_batch_gradients(
        lm.store, batch.size(),
        [&](Tape&, nn::Binder& bind, std::size_t i) {
          return softmax_cross_entropy(masked_logits(lm.encoder, bind, batch[i]), batch[i].target,
                                       kIgnore);
        },
        cfg.parallel);
    optim::clip_grad_norm(params, cfg.clip_norm);
    const double warm = cfg.warmup_steps == 0
                            ? 1.0
                            : std::min(1.0, static_cast<double>(step + 1) /
                                                static_cast<double>(cfg.warmup_steps));
    optim::adam_step(params, adam, cfg.lr * warm);
    double mean = 0.0;
    for (double l : res.losses) mean += l;
    losses.push_back(mean / static_cast<double>(res.losses.size()));
  }
  return losses;
}

MaskedEval evaluate_mask_predict(LanguageModel& lm, std::span<const std::vector<int>> corpus,
                                 double mask_rate, std::uint64_t seed) {
  if (mask_rate <= 0.0) throw EmptyTargetError();
  validate_corpus(corpus, lm.encoder.config().vocab_size);
  MaskedEval ev;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  const std::size_t v = lm.encoder.config().vocab_size;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    Rng mrng = make_rng(seed, {i});
    MaskedExample ex = mask_sequence(corpus[i], mask_rate, lm.encoder.mask_token_id(), mrng);
    Tape tape;
    nn::Binder bind(tape, false);
    Tensor logits = masked_logits(lm.encoder, bind, ex);
    auto lv = logits.value();
    for (std::size_t u = 0; u < ex.target.size(); ++u) {
      if (ex.target[u] == kIgnore) continue;
      const double* row = lv.data() + u * v;
      const double mx = *std::max_element(row, row + v);
      double z = 0.0;
      for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
      loss_sum += mx + std::log(z) - row[ex.target[u]];
      if (std::max_element(row, row + v) - row == ex.target[u]) ++correct;
      ++ev.masked;
    }
  }
  ev.loss = loss_sum / static_cast<double>(ev.masked);
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(ev.masked);
  return ev;
}

}  // namespace ciffuse::encoders
