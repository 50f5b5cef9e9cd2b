// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
//
// Minimal reverse-mode automatic differentiation over dense row-major
// double tensors.
//
// A Tape owns every node created during one forward pass. Nodes are appended
// in creation order, which is a topological order, so backward() is a single
// reverse sweep. Tensor is a lightweight handle (tape pointer + node index).
// Parameters live outside any tape; Tape::param() snapshots their values into
// a leaf node, so a tape never observes a later optimizer update.
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ciffuse {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;

  Parameter() = default;
  Parameter(std::string n, Shape s);

  std::size_t size() const { return value.size(); }
  void zero_grad();
};

class Tape;

class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  // Leading extent, and product of the remaining extents (1 for vectors).
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> value() const;
  // Empty until backward() has run on a tape containing this tensor.
  std::span<const double> grad() const;
  bool requires_grad() const;

  double item() const;
  double at(std::size_t r, std::size_t c) const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  struct Node {
    std::string_view op;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<std::size_t> inputs;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor constant(Shape shape, std::vector<double> values);
  Tensor variable(Shape shape, std::vector<double> values);
  Tensor scalar(double v) { return constant({1}, {v}); }
  Tensor param(Parameter& p);

  // Appends a node computed by a custom op. `backward` receives the tape and
  // the new node's index and must add into the grads of inputs that require
  // them. Inputs must already be on this tape.
  Tensor record(std::string_view op, Shape shape, std::vector<double> value,
                std::vector<std::size_t> inputs, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. Every node that
  // requires grad ends with a grad buffer (zeros if off the loss path).
  // Grads accumulate across repeated calls.
  void backward(Tensor loss);

  // Adds the grads of parameter leaves into Parameter::grad.
  void accumulate_param_grads();
  // (parameter, grad) for every parameter leaf, in creation order.
  std::vector<std::pair<Parameter*, std::span<const double>>> param_grads() const;

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  std::span<const double> value(std::size_t id) const { return nodes_[id].value; }
  const Shape& shape(std::size_t id) const { return nodes_[id].shape; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Mutable grad buffer of a node that requires grad (allocated on demand).
  std::span<double> grad(std::size_t id);
  std::span<const double> out_grad(std::size_t id) const { return nodes_[id].grad; }

 private:
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Differentiable operations. Binary ops broadcast only when one operand is a
// scalar (one element) or a vector matching the other operand's last extent.

Tensor matmul(Tensor a, Tensor b);
Tensor transpose(Tensor a);
Tensor reshape(Tensor a, Shape shape);

Tensor add(Tensor a, Tensor b);
Tensor sub(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);
Tensor scale(Tensor a, double factor);
Tensor add_scalar(Tensor a, double offset);

Tensor sigmoid(Tensor a);
Tensor tanh(Tensor a);
Tensor relu(Tensor a);
Tensor exp(Tensor a);
Tensor log(Tensor a);
Tensor abs(Tensor a);  // subgradient 0 at 0
Tensor reciprocal(Tensor a);

enum class Elementwise { add, mul, sigmoid, tanh, relu, exp, log };
Tensor elementwise(Elementwise kind, Tensor a);
Tensor elementwise(Elementwise kind, Tensor a, Tensor b);

Tensor sum(Tensor a);
Tensor mean(Tensor a);

Tensor softmax_rows(Tensor a);
Tensor log_softmax_rows(Tensor a);

// Mean over non-ignored rows of -log softmax(logits)[target].
// Throws EmptyTargetError if every row is ignored.
Tensor softmax_cross_entropy(Tensor logits, std::span<const int> targets, int ignore_index);

inline constexpr double kLayerNormEps = 1e-5;
Tensor layer_norm(Tensor x, Tensor gain, Tensor bias);

Tensor slice_cols(Tensor a, std::size_t begin, std::size_t end);
Tensor concat_cols(std::span<const Tensor> parts);

// Embedding lookup: out[i] = table[ids[i]].
Tensor gather_rows(Tensor table, std::span<const int> ids);
// out[u] = replace[u] ? b[u] : a[u]
Tensor select_rows(std::span<const char> replace, Tensor a, Tensor b);

// Sliding windows over the time axis of x[T×F]: row t holds frames
// t·stride - (kernel-1)/2 ... + kernel-1 concatenated (zero padded), giving
// ceil(T/stride) rows of width kernel·F.
Tensor unfold_time(Tensor x, std::size_t kernel, std::size_t stride);

}  // namespace ciffuse
