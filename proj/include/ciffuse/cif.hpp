// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
//
// Parameter-free continuous integrate-and-fire (CIF).
//
// The last channel of the acoustic representation h[T×(d+1)] is a raw scalar
// weight per frame; the remaining d channels are the content that gets
// integrated. Weights are accumulated left to right and a token-level vector
// is emitted every time the running sum reaches 1.0. A frame that crosses the
// boundary is split: the part that fills the current cell closes it, the rest
// opens the next one (possibly several cells for weights > 1).
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "ciffuse/tensor.hpp"

namespace ciffuse::cif {

// alpha[t] = sigmoid(h[t, last]) ; returns a [T] vector.
Tensor attention_weights(Tensor h_ac);

// alpha * n_star / sum(alpha). Gradient flows through numerator and denominator.
// Throws NumericDomainError when sum(alpha) == 0.
Tensor resize_weights(Tensor alpha, std::size_t n_star);

// Portion of frame t's weight assigned to cell u, as a dense row-major
// [cells × T] matrix. Cell u covers the cumulative-weight interval [u, u+1);
// mass past the last cell is discarded.
std::vector<double> firing_matrix(std::span<const double> weights, std::size_t cells);

// Integrates content[T×d] into exactly `firing_target` token vectors.
// Returns nullopt (an empty result) when firing_target == 0.
std::optional<Tensor> integrate_and_fire(Tensor weights, Tensor content,
                                         std::size_t firing_target);

// |n_star - sum(alpha)|, subgradient 0 at the kink.
Tensor quantity_loss(Tensor alpha, std::size_t n_star);

struct LengthPrediction {
  double n_hat = 0.0;
  std::size_t fired = 0;
};

// Round half up, floored at 0.
std::size_t round_half_up(double x);
LengthPrediction predict_length(std::span<const double> alpha);

struct CifResult {
  Tensor alpha;
  Tensor alpha_resized;             // training mode only
  std::optional<Tensor> integrated;  // [U×d]; nullopt when nothing fires
  double predicted_length = 0.0;
  std::size_t fired_count = 0;
};

// Training mode: weights resized to n_star, exactly n_star cells fire.
CifResult run_training(Tensor h_ac, std::size_t n_star);
// Inference mode: raw weights, round(sum alpha) cells fire.
CifResult run_inference(Tensor h_ac);

}  // namespace ciffuse::cif
