#include "metafg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>
#include <utility>

namespace metafg::ad {

namespace {

thread_local bool t_grad_enabled = true;

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled) : previous_(t_grad_enabled) { t_grad_enabled = enabled; }
  ~GradModeGuard() { t_grad_enabled = previous_; }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

Var make_op(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward,
            bool twice_differentiable = true) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = std::move(op);
  bool needs = false;
  if (t_grad_enabled)
    for (const Var& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    node->twice_differentiable = twice_differentiable;
  }
  return Var(std::move(node));
}

void require_matrix(const Var& v, const char* op) {
  if (v.value().rank() != 2)
    throw std::invalid_argument(std::string(op) + ": expected a matrix, got shape " + shape_string(v.shape()));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
}

void require_scalar(const Var& v, const char* op) {
  if (v.value().rank() != 0)
    throw std::invalid_argument(std::string(op) + ": expected a scalar, got shape " + shape_string(v.shape()));
}

bool wants(const Node& self, std::size_t i) { return self.inputs[i].requires_grad(); }

// Pairwise summation; `v` is consumed in its given order.
double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

void softmax_row(std::span<const double> z, std::span<double> out) {
  const double m = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (std::size_t c = 0; c < z.size(); ++c) {
    out[c] = std::exp(z[c] - m);
    total += out[c];
  }
  for (double& o : out) o /= total;
}

void check_labels(const Tensor& logits, std::span<const std::size_t> labels, const char* op) {
  if (logits.rank() != 2)
    throw std::invalid_argument(std::string(op) + ": logits must be a matrix, got " + shape_string(logits.shape()));
  if (labels.size() != logits.rows())
    throw std::invalid_argument(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(logits.rows()) + " rows");
  for (std::size_t y : labels)
    if (y >= logits.cols())
      throw std::out_of_range(std::string(op) + ": label " + std::to_string(y) + " outside [0, " +
                              std::to_string(logits.cols()) + ")");
}

}  // namespace

const Tensor& Var::value() const {
  if (!node_) throw std::logic_error("access to an undefined Var");
  return node_->value;
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = "constant";
  return Var(std::move(node));
}

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = "parameter";
  node->requires_grad = true;
  return Var(std::move(node));
}

Var detach(const Var& v) { return constant(v.value()); }

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_op("add", std::move(out), {a, b}, [](const Node& self, const Var& g) {
    return std::vector<Var>{wants(self, 0) ? g : Var(), wants(self, 1) ? g : Var()};
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_op("sub", std::move(out), {a, b}, [](const Node& self, const Var& g) {
    return std::vector<Var>{wants(self, 0) ? g : Var(), wants(self, 1) ? scale(g, -1.0) : Var()};
  });
}

Var scale(const Var& a, double c) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= c;
  return make_op("scale", std::move(out), {a},
                 [c](const Node&, const Var& g) { return std::vector<Var>{scale(g, c)}; });
}

Var matmul(const Var& a, const Var& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  if (B.rows() != k)
    throw std::invalid_argument("matmul: inner dimensions differ, " + shape_string(A.shape()) + " x " +
                                shape_string(B.shape()));
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* row = &out[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &B[p * n];
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  return make_op("matmul", std::move(out), {a, b}, [](const Node& self, const Var& g) {
    const Var& lhs = self.inputs[0];
    const Var& rhs = self.inputs[1];
    return std::vector<Var>{wants(self, 0) ? matmul(g, transpose(rhs)) : Var(),
                            wants(self, 1) ? matmul(transpose(lhs), g) : Var()};
  });
}

Var transpose(const Var& a) {
  require_matrix(a, "transpose");
  const Tensor& A = a.value();
  const std::size_t r = A.rows(), c = A.cols();
  Tensor out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = A[i * c + j];
  return make_op("transpose", std::move(out), {a},
                 [](const Node&, const Var& g) { return std::vector<Var>{transpose(g)}; });
}

Var add_row(const Var& x, const Var& row) {
  require_matrix(x, "add_row");
  require_matrix(row, "add_row");
  const Tensor& bv = row.value();
  if (bv.rows() != 1 || bv.cols() != x.value().cols())
    throw std::invalid_argument("add_row: row of shape " + shape_string(bv.shape()) + " does not fit " +
                                shape_string(x.shape()));
  Tensor out = x.value();
  const std::size_t c = out.cols();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bv[j];
  return make_op("add_row", std::move(out), {x, row}, [](const Node& self, const Var& g) {
    return std::vector<Var>{wants(self, 0) ? g : Var(), wants(self, 1) ? sum_rows(g) : Var()};
  });
}

Var sum_rows(const Var& x) {
  require_matrix(x, "sum_rows");
  const Tensor& X = x.value();
  const std::size_t r = X.rows(), c = X.cols();
  Tensor out(Shape{1, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += X[i * c + j];
  return make_op("sum_rows", std::move(out), {x},
                 [r](const Node&, const Var& g) { return std::vector<Var>{broadcast_rows(g, r)}; });
}

Var broadcast_rows(const Var& row, std::size_t rows) {
  require_matrix(row, "broadcast_rows");
  const Tensor& R = row.value();
  if (R.rows() != 1) throw std::invalid_argument("broadcast_rows: expected a single row");
  const std::size_t c = R.cols();
  Tensor out(Shape{rows, c});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = R[j];
  return make_op("broadcast_rows", std::move(out), {row},
                 [](const Node&, const Var& g) { return std::vector<Var>{sum_rows(g)}; });
}

Var relu(const Var& x) {
  const Tensor& X = x.value();
  Tensor mask(X.shape());
  Tensor out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) {
    if (X[i] > 0.0) {
      mask[i] = 1.0;
      out[i] = X[i];
    }
  }
  return make_op("relu", std::move(out), {x}, [mask = std::move(mask)](const Node&, const Var& g) {
    return std::vector<Var>{mask_mul(g, mask)};
  });
}

Var mask_mul(const Var& x, Tensor mask) {
  if (!x.value().same_shape(mask))
    throw std::invalid_argument("mask_mul: mask shape " + shape_string(mask.shape()) + " vs " +
                                shape_string(x.shape()));
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_op("mask_mul", std::move(out), {x}, [mask = std::move(mask)](const Node&, const Var& g) {
    return std::vector<Var>{mask_mul(g, mask)};
  });
}

Var dot(const Var& a, const Var& b) {
  if (a.value().size() != b.value().size())
    throw std::invalid_argument("dot: sizes differ, " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  double s = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) s += A[i] * B[i];
  return make_op("dot", Tensor::scalar(s), {a, b}, [](const Node& self, const Var& g) {
    return std::vector<Var>{wants(self, 0) ? scalar_mul(g, self.inputs[1]) : Var(),
                            wants(self, 1) ? scalar_mul(g, self.inputs[0]) : Var()};
  });
}

Var scalar_mul(const Var& s, const Var& x) {
  require_scalar(s, "scalar_mul");
  const double c = s.value()[0];
  Tensor out = x.value();
  for (double& v : out.data()) v *= c;
  return make_op("scalar_mul", std::move(out), {s, x}, [](const Node& self, const Var& g) {
    const Var& sv = self.inputs[0];
    const Var& xv = self.inputs[1];
    return std::vector<Var>{wants(self, 0) ? dot(g, xv) : Var(), wants(self, 1) ? scalar_mul(sv, g) : Var()};
  });
}

Var softmax_cross_entropy(const Var& logits, std::span<const std::size_t> labels) {
  const Tensor& Z = logits.value();
  check_labels(Z, labels, "softmax_cross_entropy");
  const std::size_t n = Z.rows(), c = Z.cols();
  std::vector<double> per_row(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::span<const double> z(&Z[i * c], c);
    const double m = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (double v : z) total += std::exp(v - m);
    per_row[i] = m + std::log(total) - z[labels[i]];
  }
  std::sort(per_row.begin(), per_row.end());
  const double mean = pairwise_sum(per_row) / static_cast<double>(n);
  std::vector<std::size_t> y(labels.begin(), labels.end());
  return make_op("softmax_cross_entropy", Tensor::scalar(mean), {logits},
                 [y = std::move(y)](const Node& self, const Var& g) {
                   return std::vector<Var>{scalar_mul(g, softmax_cross_entropy_grad(self.inputs[0], y))};
                 });
}

Var softmax_cross_entropy_grad(const Var& logits, std::span<const std::size_t> labels) {
  const Tensor& Z = logits.value();
  check_labels(Z, labels, "softmax_cross_entropy_grad");
  const std::size_t n = Z.rows(), c = Z.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  Tensor probs(Z.shape());
  for (std::size_t i = 0; i < n; ++i)
    softmax_row(std::span<const double>(&Z[i * c], c), std::span<double>(&probs[i * c], c));
  Tensor out = probs;
  for (std::size_t i = 0; i < n; ++i) {
    out[i * c + labels[i]] -= 1.0;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= inv_n;
  }
  // d/dz of (softmax(z) - y)/n applied to an upstream u: s * (u - <s, u>) / n.
  auto backward = [probs = std::move(probs), n, c, inv_n](const Node&, const Var& g) {
    const Tensor& U = g.value();
    Tensor dz(U.shape());
    for (std::size_t i = 0; i < n; ++i) {
      double su = 0.0;
      for (std::size_t j = 0; j < c; ++j) su += probs[i * c + j] * U[i * c + j];
      for (std::size_t j = 0; j < c; ++j) dz[i * c + j] = probs[i * c + j] * (U[i * c + j] - su) * inv_n;
    }
    return std::vector<Var>{constant(std::move(dz))};
  };
  return make_op("softmax_cross_entropy_grad", std::move(out), {logits}, std::move(backward),
                 /*twice_differentiable=*/false);
}

Var slice(const Var& flat, std::size_t offset, Shape shape) {
  const Tensor& F = flat.value();
  const std::size_t len = shape_size(shape);
  if (offset + len > F.size())
    throw std::out_of_range("slice: [" + std::to_string(offset) + ", " + std::to_string(offset + len) +
                            ") exceeds size " + std::to_string(F.size()));
  std::vector<double> vals(F.values().begin() + static_cast<std::ptrdiff_t>(offset),
                           F.values().begin() + static_cast<std::ptrdiff_t>(offset + len));
  Shape flat_shape = F.shape();
  return make_op("slice", Tensor(std::move(shape), std::move(vals)), {flat},
                 [offset, flat_shape = std::move(flat_shape)](const Node&, const Var& g) {
                   return std::vector<Var>{embed(g, offset, flat_shape)};
                 });
}

Var embed(const Var& x, std::size_t offset, Shape flat_shape) {
  const Tensor& X = x.value();
  Tensor out(flat_shape);
  if (offset + X.size() > out.size())
    throw std::out_of_range("embed: value of size " + std::to_string(X.size()) + " at offset " +
                            std::to_string(offset) + " exceeds " + std::to_string(out.size()));
  std::copy(X.values().begin(), X.values().end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset));
  Shape piece = X.shape();
  return make_op("embed", std::move(out), {x}, [offset, piece = std::move(piece)](const Node&, const Var& g) {
    return std::vector<Var>{slice(g, offset, piece)};
  });
}

Var elementwise(const Var& x, std::function<double(double)> f, std::function<double(double)> df,
                std::string name) {
  const Tensor& X = x.value();
  Tensor out(X.shape());
  Tensor slope(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) {
    out[i] = f(X[i]);
    slope[i] = df(X[i]);
  }
  return make_op(std::move(name), std::move(out), {x},
                 [slope = std::move(slope)](const Node&, const Var& g) {
                   return std::vector<Var>{mask_mul(g, slope)};
                 },
                 /*twice_differentiable=*/false);
}

std::vector<Var> gradients(const Var& output, std::span<const Var> wrt, bool create_graph) {
  require_scalar(output, "gradients");

  // Post-order DFS gives inputs before consumers; iterate it in reverse.
  std::vector<Node*> order;
  if (output.requires_grad()) {
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{output.node(), 0}};
    visited.insert(output.node());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node* child = node->inputs[next++].node();
        if (child && child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::unordered_map<Node*, Var> grads;
  GradModeGuard mode(create_graph);
  grads.emplace(output.node(), constant(Tensor(output.shape(), 1.0)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    auto found = grads.find(node);
    if (found == grads.end() || !node->backward) continue;
    if (create_graph && !node->twice_differentiable)
      throw std::domain_error("operation '" + node->op + "' has no registered second derivative");
    std::vector<Var> in_grads = node->backward(*node, found->second);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const Var& in = node->inputs[i];
      if (!in.requires_grad() || i >= in_grads.size() || !in_grads[i].defined()) continue;
      auto [slot, inserted] = grads.try_emplace(in.node(), in_grads[i]);
      if (!inserted) slot->second = add(slot->second, in_grads[i]);
    }
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const Var& w : wrt) {
    auto found = grads.find(w.node());
    if (found != grads.end())
      result.push_back(found->second);
    else
      result.push_back(constant(Tensor(w.shape())));
  }
  return result;
}

}  // namespace metafg::ad
