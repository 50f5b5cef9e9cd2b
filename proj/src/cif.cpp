// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
#include "ciffuse/cif.hpp"

#include <algorithm>
#include <cmath>

#include "ciffuse/errors.hpp"
#include "ciffuse/kernels.hpp"

namespace ciffuse::cif {

Tensor attention_weights(Tensor h_ac) {
  if (h_ac.rank() != 2 || h_ac.cols() < 2)
    throw ShapeError("attention_weights: expected [T x (d+1)] with d >= 1, got " +
                     shape_str(h_ac.shape()));
  const std::size_t w = h_ac.cols();
  Tensor raw = slice_cols(h_ac, w - 1, w);
  return sigmoid(reshape(raw, {h_ac.rows()}));
}

Tensor resize_weights(Tensor alpha, std::size_t n_star) {
  if (n_star == 0) throw ShapeError("resize_weights: n_star must be positive");
  Tensor total = sum(alpha);
  if (total.item() == 0.0) throw NumericDomainError("resize_weights: sum(alpha) == 0");
  return mul(alpha, scale(reciprocal(total), static_cast<double>(n_star)));
}

// Cell u collects the overlap of frame t's cumulative interval [c_{t-1}, c_t]
// with [u, u+1].
std::vector<double> firing_matrix(std::span<const double> weights, std::size_t cells) {
  const std::size_t t_len = weights.size();
  std::vector<double> m(cells * t_len, 0.0);
  double prev = 0.0;
  for (std::size_t t = 0; t < t_len; ++t) {
    const double cur = prev + weights[t];
    const auto first = static_cast<std::size_t>(std::max(0.0, std::floor(prev)));
    for (std::size_t u = first; u < cells && static_cast<double>(u) < cur; ++u) {
      const double lo = std::max(prev, static_cast<double>(u));
      const double hi = std::min(cur, static_cast<double>(u + 1));
      if (hi > lo) m[u * t_len + t] = hi - lo;
    }
    prev = cur;
  }
  return m;
}

std::optional<Tensor> integrate_and_fire(Tensor weights, Tensor content,
                                         std::size_t firing_target) {
  if (weights.tape() != content.tape()) throw ShapeError("integrate_and_fire: different tapes");
  if (content.rank() != 2) throw ShapeError("integrate_and_fire: content must be [T x d]");
  const std::size_t t_len = content.rows(), d = content.cols();
  if (weights.size() != t_len)
    throw ShapeError("integrate_and_fire: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(t_len) + " frames");
  for (double w : weights.value())
    if (!(w >= 0.0)) throw NumericDomainError("integrate_and_fire: negative weight");
  if (firing_target == 0) return std::nullopt;

  const std::size_t cells = firing_target;
  std::vector<double> fire = firing_matrix(weights.value(), cells);
  std::vector<double> out(cells * d, 0.0);
  kernels::gemm_nn(fire.data(), content.value().data(), out.data(), cells, t_len, d);

  const std::size_t iw = weights.id(), ic = content.id();
  return weights.tape()->record(
      "integrate_and_fire", {cells, d}, std::move(out), {iw, ic},
      [iw, ic, cells, t_len, d, fire = std::move(fire)](Tape& t, std::size_t self) {
        const double* g = t.out_grad(self).data();
        if (t.requires_grad(ic)) kernels::gemm_tn(fire.data(), g, t.grad(ic).data(), cells, t_len, d);
        if (!t.requires_grad(iw)) return;

        // d loss / d fire[u, t]
        std::vector<double> gfire(cells * t_len, 0.0);
        kernels::gemm_nt(g, t.value(ic).data(), gfire.data(), cells, d, t_len);

        // Each entry is min(c_t, u+1) - max(c_{t-1}, u) where positive.
        auto w = t.value(iw);
        std::vector<double> gcum(t_len, 0.0);  // d loss / d c_t
        double prev = 0.0;
        for (std::size_t tt = 0; tt < t_len; ++tt) {
          const double cur = prev + w[tt];
          for (std::size_t u = 0; u < cells; ++u) {
            if (fire[u * t_len + tt] <= 0.0) continue;
            const double gu = gfire[u * t_len + tt];
            if (cur < static_cast<double>(u + 1)) gcum[tt] += gu;
            if (tt > 0 && prev > static_cast<double>(u)) gcum[tt - 1] -= gu;
          }
          prev = cur;
        }
        // c_t = sum_{j<=t} w_j, so d/dw_j is a suffix sum.
        auto gw = t.grad(iw);
        double acc = 0.0;
        for (std::size_t tt = t_len; tt-- > 0;) {
          acc += gcum[tt];
          gw[tt] += acc;
        }
      });
}

Tensor quantity_loss(Tensor alpha, std::size_t n_star) {
  Tensor diff = add_scalar(scale(sum(alpha), -1.0), static_cast<double>(n_star));
  return abs(diff);
}

std::size_t round_half_up(double x) {
  if (!(x >= 0.5)) return 0;
  return static_cast<std::size_t>(std::floor(x + 0.5));
}

LengthPrediction predict_length(std::span<const double> alpha) {
  LengthPrediction p;
  for (double a : alpha) p.n_hat += a;
  p.fired = round_half_up(p.n_hat);
  return p;
}

namespace {
Tensor content_of(Tensor h_ac) { return slice_cols(h_ac, 0, h_ac.cols() - 1); }
}  // namespace

CifResult run_training(Tensor h_ac, std::size_t n_star) {
  CifResult r;
  r.alpha = attention_weights(h_ac);
  r.predicted_length = predict_length(r.alpha.value()).n_hat;
  r.alpha_resized = resize_weights(r.alpha, n_star);
  r.integrated = integrate_and_fire(r.alpha_resized, content_of(h_ac), n_star);
  r.fired_count = n_star;
  return r;
}

CifResult run_inference(Tensor h_ac) {
  CifResult r;
  r.alpha = attention_weights(h_ac);
  const LengthPrediction len = predict_length(r.alpha.value());
  r.predicted_length = len.n_hat;
  r.fired_count = len.fired;
  r.integrated = integrate_and_fire(r.alpha, content_of(h_ac), len.fired);
  return r;
}

}  // namespace ciffuse::cif
