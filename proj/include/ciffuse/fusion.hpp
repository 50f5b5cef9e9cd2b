// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
//
// The fused recogniser: acoustic encoder -> CIF -> modality projection ->
// (scheduled gold-token mixing) -> linguistic encoder, with an acoustic
// highway into the output and an auxiliary CTC branch on the encoder.
//
//   logits = lambda_ac * logits_ac + lambda_lm * logits_lm
//   L      = L_ce + mu1 * L_qua + mu2 * L_ctc
#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "ciffuse/data.hpp"
#include "ciffuse/encoders.hpp"
#include "ciffuse/nn.hpp"
#include "ciffuse/rng.hpp"

namespace ciffuse::fusion {

struct LossWeights {
  double mu1 = 0.2;        // quantity loss
  double mu2 = 1.0;        // CTC loss
  double lambda_ac = 1.0;  // acoustic highway logits
  double lambda_lm = 0.2;  // linguistic encoder logits

  void validate() const;  // all >= 0, throws ConfigError
};

struct ModelConfig {
  encoders::AcousticConfig acoustic;
  encoders::LinguisticConfig linguistic;
  LossWeights weights;
};

struct GoldRateSchedule {
  static constexpr std::uint64_t kNever = std::numeric_limits<std::uint64_t>::max();

  double start_p = 0.9;
  double end_p = 0.2;
  std::uint64_t decay_steps = 4000;  // kNever keeps start_p forever

  void validate() const;
};

// Linear from start_p at step 0 to end_p at decay_steps, constant afterwards.
double gold_rate(const GoldRateSchedule& schedule, std::uint64_t step);

Tensor fuse_logits(Tensor logits_ac, Tensor logits_lm, double lambda_ac, double lambda_lm);

// Positions whose acoustic-branch confidence max softmax(row) exceeds `th`.
std::vector<char> anchor_positions(std::span<const double> logits_ac, std::size_t vocab, double th);

struct FusionOutput {
  Tensor h_ac;
  Tensor alpha;
  Tensor h_lm;  // modality-projected CIF output, before mixing
  Tensor logits_ac;
  Tensor logits_lm;
  Tensor logits;
  Tensor loss;
  Tensor l_ce;
  Tensor l_qua;
  Tensor l_ctc;
  bool ctc_feasible = true;
  double n_hat = 0.0;
  std::vector<char> replaced;  // gold-token positions fed to the linguistic encoder
};

struct InferenceResult {
  std::vector<int> tokens;
  std::vector<int> acoustic_tokens;  // argmax of logits_ac
  std::vector<char> anchors;
  double n_hat = 0.0;
  std::size_t fired = 0;
};

class FusionModel {
 public:
  FusionModel(ModelConfig cfg, std::uint64_t seed);

  // Training pass with an explicit replacement mask (size n*).
  FusionOutput forward_train(nn::Binder& bind, std::span<const double> feats, std::size_t frames,
                             std::span<const int> tokens, std::span<const char> replace) const;
  // Training pass drawing an independent Bernoulli(p) replacement per position.
  FusionOutput forward_train(nn::Binder& bind, const data::Utterance& utt, double p,
                             Rng& rng) const;

  // Greedy non-autoregressive decoding with confidence anchors; deterministic.
  InferenceResult forward_infer(std::span<const double> feats, std::size_t frames,
                                double th) const;

  // to_vocab_1 and the first V columns of to_vocab_2 become value copies of
  // to_vocab_0 (rows shared by both widths; the rest keep their init).
  void sync_output_projections();
  // Copies every "linguistic.*" parameter from a pretrained model, then syncs.
  void load_linguistic(const nn::ParamStore& pretrained);

  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }
  const ModelConfig& config() const { return cfg_; }
  void set_weights(const LossWeights& w);
  std::size_t vocab_size() const { return cfg_.linguistic.vocab_size; }
  int blank_id() const { return static_cast<int>(cfg_.linguistic.vocab_size); }

 private:
  ModelConfig cfg_;
  nn::ParamStore store_;
  encoders::AcousticEncoder acoustic_;
  encoders::LinguisticEncoder linguistic_;
  nn::Linear modality_fc_;
  nn::Linear to_vocab_1_;
  nn::Linear to_vocab_2_;
};

}  // namespace ciffuse::fusion
