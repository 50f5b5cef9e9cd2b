// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
//
// Small transformer encoders standing in for a pre-trained speech encoder and
// a pre-trained masked language model.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ciffuse/nn.hpp"

namespace ciffuse::encoders {

struct AcousticConfig {
  std::size_t feature_dim = 8;  // F
  std::size_t content_dim = 32;  // d; the encoder emits d+1 channels
  std::size_t stride = 1;
  std::size_t kernel = 3;
  std::size_t blocks = 2;
  std::size_t heads = 3;
  std::size_t ffn_mult = 2;
  bool positional = true;

  std::size_t width() const { return content_dim + 1; }
};

// Strided 1-D convolution front-end, then self-attention blocks of width d+1
// and a final projection. The weight channel (last column) of the final
// projection starts at zero, so every frame's CIF weight starts at 0.5.
class AcousticEncoder {
 public:
  AcousticEncoder(nn::ParamStore& store, const std::string& prefix, AcousticConfig cfg);
  void init(Rng& rng);

  // frames[T×F] -> [ceil(T/stride) × (d+1)]
  Tensor encode(nn::Binder& bind, Tensor frames) const;
  std::size_t output_length(std::size_t frames) const;
  const AcousticConfig& config() const { return cfg_; }

 private:
  AcousticConfig cfg_;
  nn::Linear front_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm ln_final_;
  nn::Linear out_;
};

struct LinguisticConfig {
  std::size_t vocab_size = 16;  // V; the embedding table has one extra mask row
  std::size_t dim = 32;         // d_l
  std::size_t blocks = 2;
  std::size_t heads = 4;
  std::size_t ffn_mult = 2;
};

// Embedding table, bidirectional self-attention stack and an output
// projection (to_vocab_0). Embedding and projection are separate parameters.
class LinguisticEncoder {
 public:
  LinguisticEncoder(nn::ParamStore& store, const std::string& prefix, LinguisticConfig cfg);
  void init(Rng& rng);

  Tensor embed(nn::Binder& bind, std::span<const int> ids) const;
  // inputs[U×d_l] -> hidden[U×d_l]
  Tensor encode(nn::Binder& bind, Tensor inputs, bool positional = true) const;
  // hidden[U×d_l] -> logits[U×V]
  Tensor to_vocab(nn::Binder& bind, Tensor hidden) const { return to_vocab_0_(bind, hidden); }

  int mask_token_id() const { return static_cast<int>(cfg_.vocab_size); }
  const LinguisticConfig& config() const { return cfg_; }
  const nn::Linear& to_vocab_0() const { return to_vocab_0_; }

 private:
  LinguisticConfig cfg_;
  Parameter* embedding_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm ln_final_;
  nn::Linear to_vocab_0_;
};

// Stand-alone linguistic encoder with its own parameters, as pretrained by
// mask-predict before being fused. Parameter names carry the "linguistic."
// prefix so they load directly into a fused model.
struct LanguageModel {
  nn::ParamStore store;
  LinguisticEncoder encoder;

  explicit LanguageModel(LinguisticConfig cfg, std::uint64_t seed = 1);
};

struct PretrainConfig {
  std::size_t steps = 1000;
  double mask_rate = 0.15;
  std::size_t batch_size = 16;
  double lr = 3e-3;
  std::size_t warmup_steps = 100;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
  bool parallel = true;
};

struct MaskedEval {
  double loss = 0.0;      // mean CE over masked positions
  double accuracy = 0.0;  // top-1 on masked positions
  std::size_t masked = 0;
};

// Masks positions with probability mask_rate (at least one per sequence),
// replaces them by the mask embedding and trains by cross-entropy on the
// masked positions only. Throws EmptyTargetError when mask_rate <= 0 and
// ConfigError on a token outside the vocabulary.
std::vector<double> pretrain_mask_predict(LanguageModel& lm,
                                          std::span<const std::vector<int>> corpus,
                                          const PretrainConfig& cfg);

// Masked-prediction loss/accuracy with a seeded mask; no parameter updates.
MaskedEval evaluate_mask_predict(LanguageModel& lm, std::span<const std::vector<int>> corpus,
                                 double mask_rate, std::uint64_t seed);

}  // namespace ciffuse::encoders
