#ifndef METAFG_DIFFERENTIATE_HPP
#define METAFG_DIFFERENTIATE_HPP

#include <optional>

#include "metafg/autodiff.hpp"
#include "metafg/batch.hpp"
#include "metafg/params.hpp"

namespace metafg {

/**
 * A scalar loss of a parameter vector and a batch.
 *
 * `build` records the computation on the graph rooted at `params` (a rank-1
 * Var holding the flat parameter vector) and returns a rank-0 Var.
 * Implementations must be deterministic and free of shared mutable state.
 */
class ScalarFn {
 public:
  virtual ~ScalarFn() = default;
  virtual const Layout& layout() const = 0;
  virtual ad::Var build(const ad::Var& params, const Batch& batch) const = 0;
};

enum class HvpBackend { exact, finite_difference };

struct HvpOptions {
  HvpBackend backend = HvpBackend::exact;
  /// Central-difference step; defaults to `default_fd_epsilon(p)`.
  std::optional<double> epsilon;
};

struct ValueGrad {
  double value = 0.0;
  ParamVector gradient;
};

double value(const ScalarFn& f, const ParamVector& p, const Batch& batch);
ValueGrad value_and_grad(const ScalarFn& f, const ParamVector& p, const Batch& batch);
ParamVector grad(const ScalarFn& f, const ParamVector& p, const Batch& batch);
ParamVector hvp(const ScalarFn& f, const ParamVector& p, const Batch& batch, const ParamVector& v,
                const HvpOptions& options = {});

/// 1e-4 * (1 + max|p_i|).
double default_fd_epsilon(const ParamVector& p);

/**
 * Gradient of `f` at `p` kept as a differentiable trace, so one or more
 * Hessian-vector products at the same point reuse the forward pass.
 */
class TracedGradient {
 public:
  TracedGradient(const ScalarFn& f, const ParamVector& p, const Batch& batch);

  double value() const { return value_; }
  const ParamVector& gradient() const { return gradient_; }
  /// H(p) * v by differentiating <grad f(p), v>.
  ParamVector hvp(const ParamVector& v) const;

 private:
  ad::Var params_;
  ad::Var grad_var_;
  ParamVector gradient_;
  double value_ = 0.0;
};

}  // namespace metafg

#endif  // METAFG_DIFFERENTIATE_HPP
