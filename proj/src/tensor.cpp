// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
#include "ciffuse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ciffuse/errors.hpp"
#include "ciffuse/kernels.hpp"

namespace ciffuse {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Parameter::Parameter(std::string n, Shape s)
    : name(std::move(n)), shape(std::move(s)), value(numel(shape), 0.0), grad(numel(shape), 0.0) {}

void Parameter::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

// ---------------------------------------------------------------------------
// Tensor handle

const Shape& Tensor::shape() const { return tape_->shape(id_); }
std::size_t Tensor::size() const { return tape_->value(id_).size(); }
std::size_t Tensor::rows() const { return shape().empty() ? 1 : shape()[0]; }
std::size_t Tensor::cols() const { return rows() == 0 ? 0 : size() / rows(); }
std::span<const double> Tensor::value() const { return tape_->value(id_); }
std::span<const double> Tensor::grad() const { return tape_->out_grad(id_); }
bool Tensor::requires_grad() const { return tape_->requires_grad(id_); }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return value()[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return value()[r * cols() + c]; }

// ---------------------------------------------------------------------------
// Tape

namespace {
void check_size(const Shape& shape, std::size_t n) {
  if (numel(shape) != n)
    throw ShapeError("shape " + shape_str(shape) + " does not hold " + std::to_string(n) +
                     " values");
  for (auto e : shape)
    if (e == 0) throw ShapeError("zero extent in shape " + shape_str(shape));
}
}  // namespace

Tensor Tape::constant(Shape shape, std::vector<double> values) {
  check_size(shape, values.size());
  Node n;
  n.op = "const";
  n.shape = std::move(shape);
  n.value = std::move(values);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Tensor Tape::variable(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  nodes_.back().op = "var";
  nodes_.back().requires_grad = true;
  return t;
}

Tensor Tape::param(Parameter& p) {
  Tensor t = variable(p.shape, p.value);
  nodes_.back().op = "param";
  nodes_.back().param = &p;
  return t;
}

Tensor Tape::record(std::string_view op, Shape shape, std::vector<double> value,
                    std::vector<std::size_t> inputs, BackwardFn backward) {
  if (numel(shape) != value.size())
    throw ShapeError(std::string(op) + ": output shape " + shape_str(shape) + " vs " +
                     std::to_string(value.size()) + " values");
  Node n;
  n.op = op;
  n.shape = std::move(shape);
  n.value = std::move(value);
  for (auto in : inputs) {
    if (in >= nodes_.size()) throw ShapeError(std::string(op) + ": input not on this tape");
    n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  }
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

std::span<double> Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(Tensor loss) {
  if (loss.tape() != this) throw ShapeError("backward: loss is not on this tape");
  if (loss.size() != 1) throw ShapeError("backward: loss must be scalar, got " +
                                         shape_str(loss.shape()));
  for (auto& n : nodes_)
    if (n.requires_grad && n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad[0] += 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward) n.backward(*this, i);
  }
}

void Tape::accumulate_param_grads() {
  for (auto& n : nodes_) {
    if (!n.param || n.grad.empty()) continue;
    for (std::size_t i = 0; i < n.grad.size(); ++i) n.param->grad[i] += n.grad[i];
  }
}

std::vector<std::pair<Parameter*, std::span<const double>>> Tape::param_grads() const {
  std::vector<std::pair<Parameter*, std::span<const double>>> out;
  for (const auto& n : nodes_)
    if (n.param && !n.grad.empty()) out.emplace_back(n.param, n.grad);
  return out;
}

// ---------------------------------------------------------------------------
// Operations

namespace {

Tape& same_tape(Tensor a, Tensor b, const char* op) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape())
    throw ShapeError(std::string(op) + ": operands on different tapes");
  return *a.tape();
}

std::size_t need_rank2(Tensor a, const char* op) {
  if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " +
                                      shape_str(a.shape()));
  return a.shape()[1];
}

// How an operand maps onto the output index space of a broadcast binary op.
enum class Bcast { full, trailing, scalar };

struct BinaryPlan {
  Shape out;
  Bcast a, b;
  std::size_t a_len, b_len;
};

Bcast classify(const Shape& s, const Shape& out) {
  if (s == out) return Bcast::full;
  if (numel(s) == 1) return Bcast::scalar;
  if (s.size() == 1 && !out.empty() && s[0] == out.back()) return Bcast::trailing;
  throw ShapeError("cannot broadcast " + shape_str(s) + " to " + shape_str(out));
}

BinaryPlan plan_binary(Tensor a, Tensor b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  Shape out = numel(sa) > numel(sb) || (numel(sa) == numel(sb) && sa.size() >= sb.size()) ? sa : sb;
  // A single-row matrix against a vector of its width is a trailing broadcast.
  if (numel(sa) == numel(sb) && sa != sb && !(numel(sa) == 1) &&
      !((sa.size() == 1 || sb.size() == 1) && out.size() == 2 && out[0] == 1))
    throw ShapeError("shape mismatch " + shape_str(sa) + " vs " + shape_str(sb));
  return {out, classify(sa, out), classify(sb, out), numel(sa), numel(sb)};
}

inline std::size_t bidx(Bcast m, std::size_t i, std::size_t len) {
  switch (m) {
    case Bcast::full: return i;
    case Bcast::trailing: return i % len;
    case Bcast::scalar: return 0;
  }
  return 0;
}

template <typename Fwd, typename DA, typename DB>
Tensor binary(const char* op, Tensor a, Tensor b, Fwd fwd, DA da, DB db) {
  Tape& tape = same_tape(a, b, op);
  BinaryPlan plan = plan_binary(a, b);
  const std::size_t n = numel(plan.out);
  auto va = a.value();
  auto vb = b.value();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = fwd(va[bidx(plan.a, i, plan.a_len)], vb[bidx(plan.b, i, plan.b_len)]);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(op, plan.out, std::move(out), {ia, ib},
                     [plan, ia, ib, da, db](Tape& t, std::size_t self) {
                       auto g = t.out_grad(self);
                       auto xa = t.value(ia);
                       auto xb = t.value(ib);
                       if (t.requires_grad(ia)) {
                         auto ga = t.grad(ia);
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           const double av = xa[bidx(plan.a, i, plan.a_len)];
                           const double bv = xb[bidx(plan.b, i, plan.b_len)];
                           ga[bidx(plan.a, i, plan.a_len)] += g[i] * da(av, bv);
                         }
                       }
                       if (t.requires_grad(ib)) {
                         auto gb = t.grad(ib);
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           const double av = xa[bidx(plan.a, i, plan.a_len)];
                           const double bv = xb[bidx(plan.b, i, plan.b_len)];
                           gb[bidx(plan.b, i, plan.b_len)] += g[i] * db(av, bv);
                         }
                       }
                     });
}

// Unary op whose derivative is expressed in terms of input x and output y.
template <typename Fwd, typename Deriv>
Tensor unary(const char* op, Tensor a, Fwd fwd, Deriv deriv) {
  Tape& tape = *a.tape();
  auto va = a.value();
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = fwd(va[i]);
  const std::size_t ia = a.id();
  return tape.record(op, a.shape(), std::move(out), {ia},
                     [ia, deriv](Tape& t, std::size_t self) {
                       auto g = t.out_grad(self);
                       auto x = t.value(ia);
                       auto y = t.value(self);
                       auto ga = t.grad(ia);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
                     });
}

}  // namespace

Tensor matmul(Tensor a, Tensor b) {
  Tape& tape = same_tape(a, b, "matmul");
  const std::size_t k = need_rank2(a, "matmul");
  const std::size_t n = need_rank2(b, "matmul");
  const std::size_t m = a.shape()[0];
  if (b.shape()[0] != k)
    throw ShapeError("matmul: inner extents differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  kernels::gemm_nn(a.value().data(), b.value().data(), out.data(), m, k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record("matmul", {m, n}, std::move(out), {ia, ib},
                     [ia, ib, m, k, n](Tape& t, std::size_t self) {
                       const double* g = t.out_grad(self).data();
                       if (t.requires_grad(ia))  // dA = G·Bᵀ
                         kernels::gemm_nt(g, t.value(ib).data(), t.grad(ia).data(), m, n, k);
                       if (t.requires_grad(ib))  // dB = Aᵀ·G
                         kernels::gemm_tn(t.value(ia).data(), g, t.grad(ib).data(), m, k, n);
                     });
}

Tensor transpose(Tensor a) {
  const std::size_t n = need_rank2(a, "transpose");
  const std::size_t m = a.shape()[0];
  auto va = a.value();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = va[i * n + j];
  const std::size_t ia = a.id();
  return a.tape()->record("transpose", {n, m}, std::move(out), {ia},
                          [ia, m, n](Tape& t, std::size_t self) {
                            auto g = t.out_grad(self);
                            auto ga = t.grad(ia);
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
                          });
}

Tensor reshape(Tensor a, Shape shape) {
  if (numel(shape) != a.size())
    throw ShapeError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  auto va = a.value();
  const std::size_t ia = a.id();
  return a.tape()->record("reshape", std::move(shape), {va.begin(), va.end()}, {ia},
                          [ia](Tape& t, std::size_t self) {
                            auto g = t.out_grad(self);
                            auto ga = t.grad(ia);
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                          });
}

Tensor add(Tensor a, Tensor b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(Tensor a, Tensor b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(Tensor a, Tensor b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(Tensor a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(Tensor a, double offset) {
  return unary(
      "add_scalar", a, [offset](double x) { return x + offset; },
      [](double, double) { return 1.0; });
}

Tensor sigmoid(Tensor a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(Tensor a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(Tensor a) {
  return unary(
      "relu", a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor exp(Tensor a) {
  for (double x : a.value())
    if (!std::isfinite(std::exp(x)))
      throw NumericDomainError("exp: overflow at x = " + std::to_string(x));
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(Tensor a) {
  for (double x : a.value())
    if (!(x > 0)) throw NumericDomainError("log: non-positive argument " + std::to_string(x));
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor abs(Tensor a) {
  return unary(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor reciprocal(Tensor a) {
  for (double x : a.value())
    if (x == 0.0) throw NumericDomainError("reciprocal: division by zero");
  return unary(
      "reciprocal", a, [](double x) { return 1.0 / x; },
      [](double, double y) { return -y * y; });
}

Tensor elementwise(Elementwise kind, Tensor a) {
  switch (kind) {
    case Elementwise::sigmoid: return sigmoid(a);
    case Elementwise::tanh: return tanh(a);
    case Elementwise::relu: return relu(a);
    case Elementwise::exp: return exp(a);
    case Elementwise::log: return log(a);
    default: throw ShapeError("elementwise: binary kind needs two operands");
  }
}

Tensor elementwise(Elementwise kind, Tensor a, Tensor b) {
  switch (kind) {
    case Elementwise::add: return add(a, b);
    case Elementwise::mul: return mul(a, b);
    default: throw ShapeError("elementwise: unary kind takes one operand");
  }
}

Tensor sum(Tensor a) {
  double s = 0.0;
  for (double x : a.value()) s += x;
  const std::size_t ia = a.id();
  return a.tape()->record("sum", {1}, {s}, {ia}, [ia](Tape& t, std::size_t self) {
    const double g = t.out_grad(self)[0];
    for (auto& x : t.grad(ia)) x += g;
  });
}

Tensor mean(Tensor a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor softmax_rows(Tensor a) {
  const std::size_t m = a.rows(), n = a.cols();
  auto va = a.value();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = va.data() + i * n;
    double* y = out.data() + i * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  const std::size_t ia = a.id();
  return a.tape()->record("softmax", a.shape(), std::move(out), {ia},
                          [ia, m, n](Tape& t, std::size_t self) {
                            auto g = t.out_grad(self);
                            auto y = t.value(self);
                            auto ga = t.grad(ia);
                            for (std::size_t i = 0; i < m; ++i) {
                              double dot = 0.0;
                              for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
                              for (std::size_t j = 0; j < n; ++j)
                                ga[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
                            }
                          });
}

Tensor log_softmax_rows(Tensor a) {
  const std::size_t m = a.rows(), n = a.cols();
  auto va = a.value();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = va.data() + i * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[j] - lse;
  }
  const std::size_t ia = a.id();
  return a.tape()->record("log_softmax", a.shape(), std::move(out), {ia},
                          [ia, m, n](Tape& t, std::size_t self) {
                            auto g = t.out_grad(self);
                            auto y = t.value(self);
                            auto ga = t.grad(ia);
                            for (std::size_t i = 0; i < m; ++i) {
                              double gs = 0.0;
                              for (std::size_t j = 0; j < n; ++j) gs += g[i * n + j];
                              for (std::size_t j = 0; j < n; ++j)
                                ga[i * n + j] += g[i * n + j] - std::exp(y[i * n + j]) * gs;
                            }
                          });
}

Tensor softmax_cross_entropy(Tensor logits, std::span<const int> targets, int ignore_index) {
  const std::size_t v = need_rank2(logits, "softmax_cross_entropy");
  const std::size_t u = logits.shape()[0];
  if (targets.size() != u)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(u) + " rows");
  std::size_t count = 0;
  for (int y : targets) {
    if (y == ignore_index) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= v)
      throw ShapeError("softmax_cross_entropy: target " + std::to_string(y) +
                       " outside vocabulary of " + std::to_string(v));
    ++count;
  }
  if (count == 0) throw EmptyTargetError();

  auto x = logits.value();
  std::vector<double> probs(u * v, 0.0);  // saved softmax for backward
  double total = 0.0;
  for (std::size_t i = 0; i < u; ++i) {
    if (targets[i] == ignore_index) continue;
    const double* row = x.data() + i * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += (probs[i * v + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] /= z;
    total += mx + std::log(z) - row[targets[i]];
  }
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<int> tg(targets.begin(), targets.end());
  const std::size_t il = logits.id();
  return logits.tape()->record(
      "cross_entropy", {1}, {total * inv}, {il},
      [il, u, v, inv, ignore_index, tg = std::move(tg), probs = std::move(probs)](
          Tape& t, std::size_t self) {
        const double g = t.out_grad(self)[0] * inv;
        auto gl = t.grad(il);
        for (std::size_t i = 0; i < u; ++i) {
          if (tg[i] == ignore_index) continue;
          for (std::size_t j = 0; j < v; ++j) gl[i * v + j] += g * probs[i * v + j];
          gl[i * v + static_cast<std::size_t>(tg[i])] -= g;
        }
      });
}

Tensor layer_norm(Tensor x, Tensor gain, Tensor bias) {
  same_tape(x, gain, "layer_norm");
  same_tape(x, bias, "layer_norm");
  const std::size_t d = x.shape().back();
  if (gain.size() != d || bias.size() != d)
    throw ShapeError("layer_norm: affine params must have " + std::to_string(d) + " entries");
  const std::size_t m = x.size() / d;
  auto vx = x.value();
  auto vg = gain.value();
  auto vb = bias.value();
  std::vector<double> out(m * d), xhat(m * d), inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = vx.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mu) * inv_std[i];
      out[i * d + j] = vg[j] * xhat[i * d + j] + vb[j];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape()->record(
      "layer_norm", x.shape(), std::move(out), {ix, ig, ib},
      [ix, ig, ib, m, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t,
                                                                              std::size_t self) {
        auto g = t.out_grad(self);
        auto vg = t.value(ig);
        if (t.requires_grad(ig)) {
          auto gg = t.grad(ig);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * xhat[i * d + j];
        }
        if (t.requires_grad(ib)) {
          auto gb = t.grad(ib);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
        }
        if (t.requires_grad(ix)) {
          auto gx = t.grad(ix);
          const double dd = static_cast<double>(d);
          for (std::size_t i = 0; i < m; ++i) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = g[i * d + j] * vg[j];
              s1 += dxh;
              s2 += dxh * xhat[i * d + j];
            }
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = g[i * d + j] * vg[j];
              gx[i * d + j] += inv_std[i] / dd * (dd * dxh - s1 - xhat[i * d + j] * s2);
            }
          }
        }
      });
}

Tensor slice_cols(Tensor a, std::size_t begin, std::size_t end) {
  const std::size_t n = need_rank2(a, "slice_cols");
  if (begin >= end || end > n)
    throw ShapeError("slice_cols: bad range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") of " + std::to_string(n));
  const std::size_t m = a.shape()[0], w = end - begin;
  auto va = a.value();
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(va.data() + i * n + begin, w, out.data() + i * w);
  const std::size_t ia = a.id();
  return a.tape()->record("slice_cols", {m, w}, std::move(out), {ia},
                          [ia, m, n, w, begin](Tape& t, std::size_t self) {
                            auto g = t.out_grad(self);
                            auto ga = t.grad(ia);
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < w; ++j)
                                ga[i * n + begin + j] += g[i * w + j];
                          });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> ids, widths;
  for (const auto& p : parts) {
    same_tape(parts[0], p, "concat_cols");
    if (p.rank() != 2 || p.rows() != m) throw ShapeError("concat_cols: row count mismatch");
    ids.push_back(p.id());
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(m * total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    auto vp = p.value();
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(vp.data() + i * w, w, out.data() + i * total + off);
    off += w;
  }
  return parts[0].tape()->record("concat_cols", {m, total}, std::move(out), ids,
                                 [ids, widths, m, total](Tape& t, std::size_t self) {
                                   auto g = t.out_grad(self);
                                   std::size_t off = 0;
                                   for (std::size_t k = 0; k < ids.size(); ++k) {
                                     const std::size_t w = widths[k];
                                     if (t.requires_grad(ids[k])) {
                                       auto gp = t.grad(ids[k]);
                                       for (std::size_t i = 0; i < m; ++i)
                                         for (std::size_t j = 0; j < w; ++j)
                                           gp[i * w + j] += g[i * total + off + j];
                                     }
                                     off += w;
                                   }
                                 });
}

Tensor gather_rows(Tensor table, std::span<const int> ids) {
  const std::size_t d = need_rank2(table, "gather_rows");
  const std::size_t v = table.shape()[0];
  if (ids.empty()) throw ShapeError("gather_rows: no ids");
  auto vt = table.value();
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v)
      throw ShapeError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                       std::to_string(v));
    std::copy_n(vt.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  const std::size_t it = table.id();
  return table.tape()->record("gather_rows", {ids.size(), d}, std::move(out), {it},
                              [it, d, idv = std::move(idv)](Tape& t, std::size_t self) {
                                auto g = t.out_grad(self);
                                auto gt = t.grad(it);
                                for (std::size_t i = 0; i < idv.size(); ++i)
                                  for (std::size_t j = 0; j < d; ++j)
                                    gt[static_cast<std::size_t>(idv[i]) * d + j] += g[i * d + j];
                              });
}

Tensor select_rows(std::span<const char> replace, Tensor a, Tensor b) {
  Tape& tape = same_tape(a, b, "select_rows");
  if (a.shape() != b.shape() || a.rank() != 2)
    throw ShapeError("select_rows: operands must be equal-shape matrices");
  const std::size_t m = a.rows(), n = a.cols();
  if (replace.size() != m) throw ShapeError("select_rows: mask length mismatch");
  auto va = a.value();
  auto vb = b.value();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n((replace[i] ? vb : va).data() + i * n, n, out.data() + i * n);
  std::vector<char> mask(replace.begin(), replace.end());
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record("select_rows", a.shape(), std::move(out), {ia, ib},
                     [ia, ib, m, n, mask = std::move(mask)](Tape& t, std::size_t self) {
                       auto g = t.out_grad(self);
                       for (std::size_t i = 0; i < m; ++i) {
                         const std::size_t src = mask[i] ? ib : ia;
                         if (!t.requires_grad(src)) continue;
                         auto gs = t.grad(src);
                         for (std::size_t j = 0; j < n; ++j) gs[i * n + j] += g[i * n + j];
                       }
                     });
}

Tensor unfold_time(Tensor x, std::size_t kernel, std::size_t stride) {
  const std::size_t f = need_rank2(x, "unfold_time");
  if (kernel == 0 || stride == 0) throw ShapeError("unfold_time: kernel and stride must be >= 1");
  const std::size_t t_in = x.shape()[0];
  const std::size_t t_out = (t_in + stride - 1) / stride;
  const std::size_t pad = (kernel - 1) / 2;
  const std::size_t w = kernel * f;
  auto vx = x.value();
  std::vector<double> out(t_out * w, 0.0);
  for (std::size_t t = 0; t < t_out; ++t)
    for (std::size_t j = 0; j < kernel; ++j) {
      const std::size_t pos = t * stride + j;  // offset by pad
      if (pos < pad || pos - pad >= t_in) continue;
      std::copy_n(vx.data() + (pos - pad) * f, f, out.data() + t * w + j * f);
    }
  const std::size_t ix = x.id();
  return x.tape()->record("unfold_time", {t_out, w}, std::move(out), {ix},
                          [ix, t_in, t_out, kernel, stride, pad, f, w](Tape& t, std::size_t self) {
                            auto g = t.out_grad(self);
                            auto gx = t.grad(ix);
                            for (std::size_t r = 0; r < t_out; ++r)
                              for (std::size_t j = 0; j < kernel; ++j) {
                                const std::size_t pos = r * stride + j;
                                if (pos < pad || pos - pad >= t_in) continue;
                                for (std::size_t c = 0; c < f; ++c)
                                  gx[(pos - pad) * f + c] += g[r * w + j * f + c];
                              }
                          });
}

}  // namespace ciffuse
