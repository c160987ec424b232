#pragma once

// Minimal define-by-run reverse-mode differentiation over Tensor.
//
// Every op returns a fresh Var; inputs are never modified. When gradient
// recording is enabled and at least one input requires a gradient, the result
// keeps references to its inputs plus a closure that maps the output gradient
// onto them. Rank-0 results additionally carry their double-precision value,
// so losses assembled from reductions keep 64-bit accuracy end to end.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "s4t/tensor.hpp"

namespace s4t {

struct Node {
  Tensor value;
  Tensor grad;  // empty until materialized
  double scalar = 0.0;
  bool has_scalar = false;  // set for op results; leaves read `value`
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  bool has_grad() const { return !grad.empty(); }
  Tensor& grad_buffer();
  void accumulate(std::span<const float> g);
  void accumulate(std::span<const double> g);
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  static Var parameter(Tensor value) { return Var(std::move(value), true); }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }

  // Only meaningful for leaves (parameters). Ops never call this.
  Tensor& mutable_value();

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  bool has_grad() const { return node_->has_grad(); }
  const Tensor& grad() const;
  void zero_grad();

  // Scalar value of a rank-0 (or single element) Var, in double precision.
  double item() const;

  Var detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  friend Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds an op result. `backward` is dropped when no input needs a gradient.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

// Cross-correlation of N×Cin×H×W with Cout×Cin×kH×kW; bias may be undefined.
Var conv2d(const Var& input, const Var& weight, const Var& bias, std::size_t stride, std::size_t padding);

// Per-channel normalization with statistics of the current batch, then γ·x̂+β.
Var batchnorm2d(const Var& input, const Var& gamma, const Var& beta, double eps = 1e-5);

Var relu(const Var& x);

// Softmax over the channel axis of an N×C×H×W tensor.
Var softmax_channels(const Var& logits);

Var log_eps(const Var& x, double eps);
Var mul(const Var& a, const Var& b);

// Σ_i weights_i · x_i as a rank-0 Var; weights are constants.
Var weighted_sum(const Var& x, const Tensor& weights);
Var sum(const Var& x);

// Σ_i coefs_i · terms_i over rank-0 terms.
Var linear_combination(std::span<const Var> terms, std::span<const double> coefs);

// Accumulates d(loss)/d(leaf) into every leaf that requires a gradient.
void backward(const Var& loss);

}  // namespace s4t
