#ifndef METAFG_AUTODIFF_HPP
#define METAFG_AUTODIFF_HPP

// Reverse-mode differentiation over a dynamically recorded graph.
//
// Every backward rule is itself written with the traced operations below, so
// running `gradients(..., create_graph = true)` yields gradient values that
// are again differentiable. Differentiating such a gradient (double backprop)
// is how exact Hessian-vector products are produced.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "metafg/tensor.hpp"

namespace metafg::ad {

struct Node;

/// Handle to a value in the computation graph.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Node* node() const { return node_.get(); }

 private:
  std::shared_ptr<Node> node_;
};

/// Maps the gradient flowing into a node to one gradient per input. Entries
/// may be left undefined for inputs that do not require a gradient.
using BackwardFn = std::function<std::vector<Var>(const Node& self, const Var& grad_out)>;

struct Node {
  Tensor value;
  std::vector<Var> inputs;
  BackwardFn backward;
  std::string op;
  bool requires_grad = false;
  // False for operations whose backward rule is not itself traced; such
  // nodes cannot take part in a create_graph backward pass.
  bool twice_differentiable = true;
};

/// Disables recording on the current thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

Var constant(Tensor value);
Var parameter(Tensor value);
Var detach(const Var& v);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

// Row broadcasting for biases: `row` has shape (1, cols).
Var add_row(const Var& x, const Var& row);
Var sum_rows(const Var& x);
Var broadcast_rows(const Var& row, std::size_t rows);

/// Rectifier; the derivative at exactly 0 is taken to be 0.
Var relu(const Var& x);
/// Elementwise product with a constant 0/1 (or arbitrary) mask.
Var mask_mul(const Var& x, Tensor mask);

/// Sum of the elementwise product, as a rank-0 value.
Var dot(const Var& a, const Var& b);
/// Rank-0 `s` times every entry of `x`.
Var scalar_mul(const Var& s, const Var& x);

/**
 * Mean softmax cross-entropy of the rows of `logits` against `labels`.
 *
 * Per-row losses use log-sum-exp, and are summed pairwise in ascending order
 * of value, so the result is independent of row order.
 */
Var softmax_cross_entropy(const Var& logits, std::span<const std::size_t> labels);
/// Derivative of the mean cross-entropy with respect to the logits:
/// (softmax(logits) - onehot(labels)) / rows. Its own backward is not traced.
Var softmax_cross_entropy_grad(const Var& logits, std::span<const std::size_t> labels);

/// Reads `shape` consecutive values of a flat vector starting at `offset`.
Var slice(const Var& flat, std::size_t offset, Shape shape);
/// Places `x` at `offset` inside a zero vector of the given shape.
Var embed(const Var& x, std::size_t offset, Shape flat_shape);

/// Elementwise map with a user-supplied first derivative. Supports first-order
/// differentiation only.
Var elementwise(const Var& x, std::function<double(double)> f, std::function<double(double)> df,
                std::string name);

/**
 * Gradients of a rank-0 `output` with respect to each of `wrt`.
 *
 * With `create_graph` the returned gradients are recorded and can themselves
 * be differentiated. Inputs that `output` does not depend on receive zeros.
 */
std::vector<Var> gradients(const Var& output, std::span<const Var> wrt, bool create_graph = false);

}  // namespace metafg::ad

#endif  // METAFG_AUTODIFF_HPP
