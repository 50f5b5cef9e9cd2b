// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
//
// Independent reference implementations used by the unit tests and the
// acceptance binary. Deliberately naive; none of them share code with the
// library.
#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <stdexcept>
#include <vector>

namespace ciffuse::oracle {

using Matrix = std::vector<std::vector<double>>;

// Scalar integrate-and-fire: walk frames left to right, pouring each frame's
// weight into the open cell and closing it whenever it holds 1.0.
inline Matrix simulate(const std::vector<double>& w, const Matrix& content, std::size_t cells) {
  const std::size_t d = content.empty() ? 0 : content[0].size();
  Matrix out(cells, std::vector<double>(d, 0.0));
  std::size_t u = 0;
  double filled = 0.0;
  for (std::size_t t = 0; t < w.size() && u < cells; ++t) {
    double left = w[t];
    while (left > 0.0 && u < cells) {
      const double room = 1.0 - filled;
      const double take = std::min(left, room);
      for (std::size_t j = 0; j < d; ++j) out[u][j] += take * content[t][j];
      left -= take;
      filled += take;
      if (take == room) {
        ++u;
        filled = 0.0;
      }
    }
  }
  return out;
}

inline std::vector<int> collapse(const std::vector<int>& path, int blank) {
  std::vector<int> out;
  int prev = -1;
  for (int s : path) {
    if (s != prev && s != blank) out.push_back(s);
    prev = s;
  }
  return out;
}

// -log of the summed probability of every frame labelling that collapses to target.
inline double brute_force(const std::vector<double>& log_probs, std::size_t t, std::size_t v,
                   const std::vector<int>& target, int blank) {
  std::vector<int> path(t, 0);
  double total = 0.0;
  while (true) {
    if (collapse(path, blank) == target) {
      double lp = 0.0;
      for (std::size_t f = 0; f < t; ++f) lp += log_probs[f * v + static_cast<std::size_t>(path[f])];
      total += std::exp(lp);
    }
    std::size_t i = 0;
    while (i < t && path[i] == static_cast<int>(v) - 1) path[i++] = 0;
    if (i == t) break;
    ++path[i];
  }
  return -std::log(total);
}

inline std::vector<double> log_softmax(const std::vector<double>& logits, std::size_t t, std::size_t v) {
  std::vector<double> out(logits.size());
  for (std::size_t f = 0; f < t; ++f) {
    const double mx = *std::max_element(logits.begin() + static_cast<long>(f * v),
                                        logits.begin() + static_cast<long>((f + 1) * v));
    double s = 0.0;
    for (std::size_t c = 0; c < v; ++c) s += std::exp(logits[f * v + c] - mx);
    for (std::size_t c = 0; c < v; ++c) out[f * v + c] = logits[f * v + c] - mx - std::log(s);
  }
  return out;
}

// Breadth-first search over single-symbol edits (insert, delete, substitute)
// applied to `from`, returning the fewest edits that produce `to`.
inline std::size_t edit_search(const std::vector<int>& from, const std::vector<int>& to, int alphabet) {
  const std::size_t cap = std::max(from.size(), to.size()) + 1;
  std::map<std::vector<int>, std::size_t> dist{{from, 0}};
  std::deque<std::vector<int>> queue{from};
  while (!queue.empty()) {
    auto s = queue.front();
    queue.pop_front();
    const std::size_t d = dist[s];
    if (s == to) return d;
    std::vector<std::vector<int>> next;
    for (std::size_t i = 0; i <= s.size(); ++i) {
      if (s.size() < cap)
        for (int a = 0; a < alphabet; ++a) {
          auto n = s;
          n.insert(n.begin() + static_cast<long>(i), a);
          next.push_back(std::move(n));
        }
      if (i < s.size()) {
        auto del = s;
        del.erase(del.begin() + static_cast<long>(i));
        next.push_back(std::move(del));
        for (int a = 0; a < alphabet; ++a) {
          if (a == s[i]) continue;
          auto sub = s;
          sub[i] = a;
          next.push_back(std::move(sub));
        }
      }
    }
    for (auto& n : next)
      if (dist.emplace(n, d + 1).second) queue.push_back(std::move(n));
  }
  throw std::logic_error("unreachable");
}

}  // namespace ciffuse::oracle
