#include "metafg/differentiate.hpp"

#include <stdexcept>
#include <vector>

namespace metafg {

namespace {

void require_layout(const ScalarFn& f, const ParamVector& p) {
  if (p.size() != f.layout().size() || !(p.layout() == f.layout()))
    throw std::invalid_argument("parameter layout does not match the function (" + std::to_string(p.size()) +
                                " values, expected " + std::to_string(f.layout().size()) + ")");
}

ad::Var build_checked(const ScalarFn& f, const ad::Var& params, const Batch& batch) {
  ad::Var out = f.build(params, batch);
  if (out.value().rank() != 0)
    throw std::logic_error("ScalarFn returned a value of shape " + shape_string(out.shape()));
  return out;
}

ParamVector from_tensor(const ParamVector& like, const Tensor& t) {
  return ParamVector(like.layout_ptr(), t.values());
}

}  // namespace

double value(const ScalarFn& f, const ParamVector& p, const Batch& batch) {
  require_layout(f, p);
  ad::NoGradGuard no_grad;
  return build_checked(f, ad::constant(p.to_tensor()), batch).value().item();
}

ValueGrad value_and_grad(const ScalarFn& f, const ParamVector& p, const Batch& batch) {
  require_layout(f, p);
  ad::Var params = ad::parameter(p.to_tensor());
  ad::Var out = build_checked(f, params, batch);
  std::vector<ad::Var> wrt{params};
  return {out.value().item(), from_tensor(p, ad::gradients(out, wrt).front().value())};
}

ParamVector grad(const ScalarFn& f, const ParamVector& p, const Batch& batch) {
  return value_and_grad(f, p, batch).gradient;
}

double default_fd_epsilon(const ParamVector& p) { return 1e-4 * (1.0 + p.max_abs()); }

ParamVector hvp(const ScalarFn& f, const ParamVector& p, const Batch& batch, const ParamVector& v,
                const HvpOptions& options) {
  require_layout(f, p);
  p.require_compatible(v, "hvp");
  if (options.backend == HvpBackend::exact) return TracedGradient(f, p, batch).hvp(v);

  const double eps = options.epsilon.value_or(default_fd_epsilon(p));
  if (!(eps > 0.0)) throw std::invalid_argument("finite-difference hvp needs a positive epsilon");
  ParamVector plus = p;
  plus.axpy(eps, v);
  ParamVector minus = p;
  minus.axpy(-eps, v);
  ParamVector out = grad(f, plus, batch);
  out -= grad(f, minus, batch);
  out *= 1.0 / (2.0 * eps);
  return out;
}

TracedGradient::TracedGradient(const ScalarFn& f, const ParamVector& p, const Batch& batch) {
  require_layout(f, p);
  params_ = ad::parameter(p.to_tensor());
  ad::Var out = build_checked(f, params_, batch);
  value_ = out.value().item();
  std::vector<ad::Var> wrt{params_};
  grad_var_ = ad::gradients(out, wrt, /*create_graph=*/true).front();
  gradient_ = from_tensor(p, grad_var_.value());
}

ParamVector TracedGradient::hvp(const ParamVector& v) const {
  gradient_.require_compatible(v, "TracedGradient::hvp");
  ad::Var directional = ad::dot(grad_var_, ad::constant(v.to_tensor()));
  std::vector<ad::Var> wrt{params_};
  return from_tensor(gradient_, ad::gradients(directional, wrt).front().value());
}

}  // namespace metafg
