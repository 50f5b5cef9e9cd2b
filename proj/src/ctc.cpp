// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
#include "ciffuse/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ciffuse/errors.hpp"

namespace ciffuse::ctc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::fabs(a - b)));
}

std::vector<int> extend(const Target& target) {
  std::vector<int> ext;
  ext.reserve(2 * target.tokens.size() + 1);
  ext.push_back(target.blank);
  for (int tok : target.tokens) {
    ext.push_back(tok);
    ext.push_back(target.blank);
  }
  return ext;
}

// State s may be entered from s-2 (skipping a blank) when it holds a label
// that differs from the label two states back.
bool can_skip(const std::vector<int>& ext, std::size_t s, int blank) {
  return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
}

}  // namespace

LossResult ctc_loss(Tensor log_probs, const Target& target) {
  if (log_probs.rank() != 2) throw ShapeError("ctc_loss: log_probs must be [T x V]");
  const std::size_t t_len = log_probs.rows(), v = log_probs.cols();
  if (target.blank < 0 || static_cast<std::size_t>(target.blank) >= v)
    throw ShapeError("ctc_loss: blank id outside vocabulary");
  for (int tok : target.tokens)
    if (tok == target.blank || tok < 0 || static_cast<std::size_t>(tok) >= v)
      throw ShapeError("ctc_loss: invalid target token " + std::to_string(tok));

  const std::vector<int> ext = extend(target);
  const std::size_t s_len = ext.size();
  auto lp = log_probs.value();
  auto emit = [&](std::size_t t, std::size_t s) { return lp[t * v + static_cast<std::size_t>(ext[s])]; };

  std::vector<double> alpha(t_len * s_len, kNegInf);
  alpha[0] = emit(0, 0);
  if (s_len > 1) alpha[1] = emit(0, 1);
  for (std::size_t t = 1; t < t_len; ++t) {
    const double* prev = alpha.data() + (t - 1) * s_len;
    double* cur = alpha.data() + t * s_len;
    for (std::size_t s = 0; s < s_len; ++s) {
      double acc = prev[s];
      if (s >= 1) acc = log_add(acc, prev[s - 1]);
      if (can_skip(ext, s, target.blank)) acc = log_add(acc, prev[s - 2]);
      if (acc != kNegInf) cur[s] = acc + emit(t, s);
    }
  }
  const double* last = alpha.data() + (t_len - 1) * s_len;
  const double log_total = s_len > 1 ? log_add(last[s_len - 1], last[s_len - 2]) : last[0];

  Tape& tape = *log_probs.tape();
  const std::size_t il = log_probs.id();
  if (log_total == kNegInf) {
    Tensor loss = tape.record("ctc_loss", {1}, {std::numeric_limits<double>::infinity()}, {il},
                              [](Tape&, std::size_t) {});
    return {loss, false};
  }

  // beta[t][s]: log prob of frames t+1.. given state s at frame t.
  std::vector<double> beta(t_len * s_len, kNegInf);
  double* bl = beta.data() + (t_len - 1) * s_len;
  bl[s_len - 1] = 0.0;
  if (s_len > 1) bl[s_len - 2] = 0.0;
  for (std::size_t t = t_len - 1; t-- > 0;) {
    const double* next = beta.data() + (t + 1) * s_len;
    double* cur = beta.data() + t * s_len;
    for (std::size_t s = 0; s < s_len; ++s) {
      double acc = next[s] == kNegInf ? kNegInf : next[s] + emit(t + 1, s);
      if (s + 1 < s_len && next[s + 1] != kNegInf) acc = log_add(acc, next[s + 1] + emit(t + 1, s + 1));
      if (s + 2 < s_len && can_skip(ext, s + 2, target.blank) && next[s + 2] != kNegInf)
        acc = log_add(acc, next[s + 2] + emit(t + 1, s + 2));
      cur[s] = acc;
    }
  }

  // d(-log P)/d lp[t,k] = -sum_{s: ext[s]=k} exp(alpha + beta - log P)
  std::vector<double> dlp(t_len * v, 0.0);
  for (std::size_t t = 0; t < t_len; ++t)
    for (std::size_t s = 0; s < s_len; ++s) {
      const double a = alpha[t * s_len + s], b = beta[t * s_len + s];
      if (a == kNegInf || b == kNegInf) continue;
      dlp[t * v + static_cast<std::size_t>(ext[s])] -= std::exp(a + b - log_total);
    }

  Tensor loss = tape.record("ctc_loss", {1}, {-log_total}, {il},
                            [il, dlp = std::move(dlp)](Tape& t, std::size_t self) {
                              const double g = t.out_grad(self)[0];
                              auto gl = t.grad(il);
                              for (std::size_t i = 0; i < dlp.size(); ++i) gl[i] += g * dlp[i];
                            });
  return {loss, true};
}

std::vector<int> greedy_decode(std::span<const double> log_probs, std::size_t frames,
                               std::size_t vocab, int blank) {
  if (log_probs.size() != frames * vocab) throw ShapeError("greedy_decode: size mismatch");
  std::vector<int> out;
  int prev = -1;
  for (std::size_t t = 0; t < frames; ++t) {
    const double* row = log_probs.data() + t * vocab;
    const int best = static_cast<int>(std::max_element(row, row + vocab) - row);
    if (best != prev && best != blank) out.push_back(best);
    prev = best;
  }
  return out;
}

}  // namespace ciffuse::ctc
