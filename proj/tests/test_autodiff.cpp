#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "metafg/autodiff.hpp"
#include "metafg/data.hpp"
#include "metafg/differentiate.hpp"
#include "support.hpp"

using namespace metafg;
using ad::Var;
using testing_support::LambdaFn;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> normal;
  for (double& v : t.data()) v = normal(rng);
  return t;
}

// Checks d(loss(x))/dx from the engine against central differences.
void expect_grad_matches_fd(const Tensor& x0, const std::function<Var(const Var&)>& loss, double tol = 1e-7) {
  Var x = ad::parameter(x0);
  const std::vector<Var> wrt{x};
  const Tensor g = ad::gradients(loss(x), wrt)[0].value();
  ASSERT_EQ(g.shape(), x0.shape());
  const double h = 1e-6;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    Tensor up = x0, down = x0;
    up[i] += h;
    down[i] -= h;
    const double fd = (loss(ad::constant(up)).value().item() - loss(ad::constant(down)).value().item()) / (2 * h);
    EXPECT_LE(oracle::rel_err(g[i], fd, 1e-3), tol) << "coordinate " << i;
  }
}

}  // namespace

TEST(Tensor, ShapeAndSizeAgree) {
  Tensor t(Shape{2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(Tensor::scalar(4.0).item(), 4.0);
  EXPECT_THROW(Tensor(Shape{2, 0}), std::invalid_argument);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
}

TEST(Tensor, FiniteCheck) {
  Tensor t(Shape{2}, 0.0);
  EXPECT_TRUE(t.all_finite());
  t[1] = NAN;
  EXPECT_FALSE(t.all_finite());
}

TEST(Autodiff, ElementaryGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  const Tensor a = random_tensor({3, 4}, rng);
  const Tensor b = random_tensor({4, 2}, rng);
  const Tensor row = random_tensor({1, 4}, rng);
  const Tensor w = random_tensor({3, 4}, rng);
  auto weighted = [&](const Var& y) {
    // Contract with fixed weights so every output entry matters.
    Tensor c(y.shape());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = std::sin(1.0 + static_cast<double>(i));
    return ad::dot(y, ad::constant(c));
  };
  expect_grad_matches_fd(a, [&](const Var& x) { return weighted(ad::add(x, ad::constant(w))); });
  expect_grad_matches_fd(a, [&](const Var& x) { return weighted(ad::sub(ad::constant(w), x)); });
  expect_grad_matches_fd(a, [&](const Var& x) { return weighted(ad::scale(x, -2.5)); });
  expect_grad_matches_fd(a, [&](const Var& x) { return weighted(ad::matmul(x, ad::constant(b))); });
  expect_grad_matches_fd(b, [&](const Var& x) { return weighted(ad::matmul(ad::constant(a), x)); });
  expect_grad_matches_fd(a, [&](const Var& x) { return weighted(ad::transpose(x)); });
  expect_grad_matches_fd(row, [&](const Var& r) { return weighted(ad::add_row(ad::constant(a), r)); });
  expect_grad_matches_fd(a, [&](const Var& x) { return weighted(ad::sum_rows(x)); });
  expect_grad_matches_fd(row, [&](const Var& r) { return weighted(ad::broadcast_rows(r, 3)); });
  expect_grad_matches_fd(a, [&](const Var& x) { return ad::dot(x, x); });
  expect_grad_matches_fd(a, [&](const Var& x) { return weighted(ad::mask_mul(x, w)); });
  expect_grad_matches_fd(a, [&](const Var& x) { return weighted(ad::slice(ad::transpose(x), 2, {2, 3})); });
  expect_grad_matches_fd(row, [&](const Var& r) { return weighted(ad::embed(r, 3, {12})); });
  expect_grad_matches_fd(a, [&](const Var& x) {
    return weighted(ad::elementwise(x, [](double v) { return std::tanh(v); },
                                    [](double v) { return 1.0 - std::tanh(v) * std::tanh(v); }, "tanh"));
  });
}

TEST(Autodiff, ScalarMulGradientsBothSides) {
  std::mt19937_64 rng(3);
  const Tensor x0 = random_tensor({2, 3}, rng);
  const Tensor c = random_tensor({2, 3}, rng);
  expect_grad_matches_fd(Tensor::scalar(0.7), [&](const Var& s) {
    return ad::dot(ad::scalar_mul(s, ad::constant(x0)), ad::constant(c));
  });
  expect_grad_matches_fd(x0, [&](const Var& x) {
    return ad::dot(ad::scalar_mul(ad::constant(Tensor::scalar(-1.3)), x), ad::constant(c));
  });
  EXPECT_THROW(ad::scalar_mul(ad::constant(x0), ad::constant(x0)), std::invalid_argument);
}

TEST(Autodiff, RectifierAwayFromKinkAndAtZero) {
  std::mt19937_64 rng(11);
  Tensor x0 = random_tensor({3, 3}, rng);
  for (double& v : x0.data())
    if (std::abs(v) < 0.1) v = 0.5;
  expect_grad_matches_fd(x0, [](const Var& x) { return ad::dot(ad::relu(x), ad::relu(x)); });

  // Subgradient at exactly zero is 0.
  Var z = ad::parameter(Tensor(Shape{3}, std::vector<double>{0.0, -1.0, 2.0}));
  const std::vector<Var> wrt{z};
  const Tensor g = ad::gradients(ad::dot(ad::relu(z), ad::constant(Tensor(Shape{3}, 1.0))), wrt)[0].value();
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 0.0);
  EXPECT_EQ(g[2], 1.0);
}

TEST(Autodiff, SoftmaxCrossEntropy) {
  std::mt19937_64 rng(5);
  const Tensor z0 = random_tensor({5, 4}, rng);
  const std::vector<std::size_t> y{0, 3, 1, 1, 2};
  expect_grad_matches_fd(z0, [&](const Var& z) { return ad::softmax_cross_entropy(z, y); });

  // Uniform logits give ln(C) for any labels.
  EXPECT_NEAR(ad::softmax_cross_entropy(ad::constant(Tensor(Shape{5, 4}, 2.0)), y).value().item(), std::log(4.0),
              1e-15);
  // Huge logits stay finite.
  Tensor big(Shape{1, 3}, std::vector<double>{1000.0, -1000.0, 999.0});
  const double l = ad::softmax_cross_entropy(ad::constant(big), std::vector<std::size_t>{0}).value().item();
  EXPECT_NEAR(l, std::log1p(std::exp(-1.0)), 1e-12);
  EXPECT_THROW(ad::softmax_cross_entropy(ad::constant(z0), std::vector<std::size_t>{0, 1}), std::invalid_argument);
  EXPECT_THROW(ad::softmax_cross_entropy(ad::constant(z0), std::vector<std::size_t>{0, 1, 2, 3, 4}), std::out_of_range);
}

TEST(Autodiff, CrossEntropyIsRowOrderInvariantBitExact) {
  std::mt19937_64 rng(9);
  const Tensor z = random_tensor({37, 6}, rng);
  std::vector<std::size_t> y(37);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = (i * 7) % 6;
  std::vector<std::size_t> perm(37);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor zp(z.shape());
  std::vector<std::size_t> yp(37);
  for (std::size_t i = 0; i < 37; ++i) {
    for (std::size_t c = 0; c < 6; ++c) zp.at(i, c) = z.at(perm[i], c);
    yp[i] = y[perm[i]];
  }
  EXPECT_EQ(ad::softmax_cross_entropy(ad::constant(z), y).value().item(),
            ad::softmax_cross_entropy(ad::constant(zp), yp).value().item());
}

TEST(Autodiff, SecondOrderOfCrossEntropyMatchesDifferencedGradient) {
  std::mt19937_64 rng(13);
  const Tensor z0 = random_tensor({4, 3}, rng);
  const Tensor v = random_tensor({4, 3}, rng);
  const std::vector<std::size_t> y{2, 0, 1, 2};
  auto grad_at = [&](const Tensor& z, bool create, Var* keep) {
    Var zv = ad::parameter(z);
    if (keep) *keep = zv;
    const std::vector<Var> wrt{zv};
    return ad::gradients(ad::softmax_cross_entropy(zv, y), wrt, create)[0];
  };
  Var zvar;
  const Var g = grad_at(z0, true, &zvar);
  const std::vector<Var> wrt{zvar};
  const Tensor hv = ad::gradients(ad::dot(g, ad::constant(v)), wrt)[0].value();
  const double h = 1e-5;
  Tensor up = z0, down = z0;
  for (std::size_t i = 0; i < z0.size(); ++i) {
    up[i] += h * v[i];
    down[i] -= h * v[i];
  }
  const Tensor gu = grad_at(up, false, nullptr).value(), gd = grad_at(down, false, nullptr).value();
  for (std::size_t i = 0; i < z0.size(); ++i) EXPECT_LE(oracle::rel_err(hv[i], (gu[i] - gd[i]) / (2 * h), 1e-4), 1e-6);
}

TEST(Autodiff, CreateGraphRejectsFirstOrderOnlyOps) {
  Var x = ad::parameter(Tensor(Shape{3}, 0.5));
  Var y = ad::elementwise(x, [](double v) { return v * v * v; }, [](double v) { return 3 * v * v; }, "cube");
  const std::vector<Var> wrt{x};
  Var s = ad::dot(y, ad::constant(Tensor(Shape{3}, 1.0)));
  EXPECT_NO_THROW(ad::gradients(s, wrt, false));
  try {
    ad::gradients(s, wrt, true);
    FAIL() << "expected a domain_error";
  } catch (const std::domain_error& e) {
    EXPECT_NE(std::string(e.what()).find("cube"), std::string::npos);
  }
}

TEST(Autodiff, NoGradGuardStopsRecording) {
  Var x = ad::parameter(Tensor(Shape{2}, 1.0));
  {
    ad::NoGradGuard guard;
    EXPECT_FALSE(ad::grad_enabled());
    Var y = ad::scale(x, 2.0);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.node()->inputs.empty());
  }
  EXPECT_TRUE(ad::grad_enabled());
  EXPECT_TRUE(ad::scale(x, 2.0).requires_grad());
}

TEST(Autodiff, UnusedInputsGetZeroGradient) {
  Var x = ad::parameter(Tensor(Shape{2}, 1.0));
  Var unused = ad::parameter(Tensor(Shape{3}, 4.0));
  const std::vector<Var> wrt{x, unused};
  const auto g = ad::gradients(ad::dot(x, x), wrt);
  EXPECT_EQ(g[1].value(), Tensor(Shape{3}, 0.0));
  EXPECT_THROW(ad::gradients(ad::scale(x, 1.0), wrt), std::invalid_argument);
}

TEST(Autodiff, ShapeErrors) {
  Var a = ad::constant(Tensor(Shape{2, 3}));
  EXPECT_THROW(ad::matmul(a, a), std::invalid_argument);
  EXPECT_THROW(ad::add(a, ad::constant(Tensor(Shape{3, 2}))), std::invalid_argument);
  EXPECT_THROW(ad::slice(ad::constant(Tensor(Shape{4})), 2, {3}), std::out_of_range);
}

// ---- value / grad / hvp over ScalarFn ----

namespace {

LambdaFn sum_of_squares(std::size_t n) {
  return LambdaFn(n, [](const Var& p, const Batch&) { return ad::dot(p, p); });
}

LambdaFn half_norm(std::size_t n) {
  return LambdaFn(n, [](const Var& p, const Batch&) { return ad::scale(ad::dot(p, p), 0.5); });
}

// 0.5 p^T A p for a fixed symmetric A.
LambdaFn quadratic(const Tensor& A) {
  return LambdaFn(A.rows(), [A](const Var& p, const Batch&) {
    Var col = ad::transpose(ad::slice(p, 0, {1, A.rows()}));
    return ad::scale(ad::dot(col, ad::matmul(ad::constant(A), col)), 0.5);
  });
}

Tensor symmetric4() {
  return Tensor::matrix(4, 4, {4, 1, 0, -2, 1, 3, 0.5, 0, 0, 0.5, 2, 1, -2, 0, 1, 5});
}

const Batch kNoBatch{};

}  // namespace

TEST(Differentiate, ValueExamples) {
  auto f = sum_of_squares(2);
  EXPECT_EQ(value(f, f.point({0, 0}), kNoBatch), 0.0);
  EXPECT_EQ(value(f, f.point({3, 4}), kNoBatch), 25.0);
  auto other = sum_of_squares(3);
  EXPECT_THROW(value(f, other.point({1, 2, 3}), kNoBatch), std::invalid_argument);
}

TEST(Differentiate, GradExamples) {
  auto f = half_norm(3);
  const ParamVector p = f.point({1.5, -2, 0.25});
  EXPECT_EQ(grad(f, p, kNoBatch), p);
  LambdaFn constant(3, [](const Var&, const Batch&) { return ad::constant(Tensor::scalar(7.0)); });
  EXPECT_EQ(grad(constant, constant.point({1, 2, 3}), kNoBatch), ParamVector(constant.layout_ptr(), 0.0));
}

TEST(Differentiate, HvpExamples) {
  auto f = half_norm(3);
  const ParamVector p = f.point({1, 2, 3});
  const ParamVector v = f.point({-1, 0.5, 2});
  EXPECT_EQ(hvp(f, p, kNoBatch, v), v);

  const Tensor A = symmetric4();
  auto q = quadratic(A);
  const ParamVector pq = q.point({0.3, -1, 2, 0.5});
  const ParamVector vq = q.point({1, -2, 0.25, 3});
  const ParamVector hv = hvp(q, pq, kNoBatch, vq);
  for (std::size_t i = 0; i < 4; ++i) {
    double av = 0.0;
    for (std::size_t j = 0; j < 4; ++j) av += A.at(i, j) * vq[j];
    EXPECT_NEAR(hv[i], av, 1e-10);
  }
  const ParamVector fd = hvp(q, pq, kNoBatch, vq, {HvpBackend::finite_difference, std::nullopt});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(fd[i], hv[i], 1e-8);
}

TEST(Differentiate, FiniteDifferenceEpsilonDefault) {
  auto f = half_norm(2);
  EXPECT_DOUBLE_EQ(default_fd_epsilon(f.point({0.5, -3})), 4e-4);
}

TEST(Differentiate, NetworkGradientMatchesOracleAndFiniteDifferences) {
  const ModelConfig cfg = testing_support::small_model();
  const HeadLoss f(cfg, Head::target);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    const TwoHeadParams p = TwoHeadParams::initialized(cfg, seed);
    const oracle::Vec x = testing_support::to_vec(p.flat());
    const Batch b = testing_support::batch_clear_of_kinks(cfg, x, 7, cfg.n_target, rng);
    const oracle::Vec feats(b.features.data().begin(), b.features.data().end());

    const ValueGrad vg = value_and_grad(f, p.flat(), b);
    EXPECT_NEAR(vg.value, oracle::loss(cfg, x, feats, b.labels, true), 1e-13);
    const oracle::Vec hand = oracle::loss_grad(cfg, x, feats, b.labels, true);
    EXPECT_LE(oracle::max_rel_err(testing_support::to_vec(vg.gradient), hand, 1e-12), 1e-10);

    // 50 sampled coordinates against step-1e-5 central differences.
    const std::vector<std::size_t> coords = sample_indices(p.partition().target_model(), 50, rng);
    const oracle::Vec fd = oracle::central_diff(
        [&](const oracle::Vec& y) { return oracle::loss(cfg, y, feats, b.labels, true); }, x, 1e-5, coords);
    for (std::size_t k = 0; k < coords.size(); ++k)
      EXPECT_LE(oracle::rel_err(vg.gradient[coords[k]], fd[k], 1e-4), 1e-6) << "coordinate " << coords[k];
  }
}

TEST(Differentiate, LinearityOfGradAndHvp) {
  const ModelConfig cfg = testing_support::small_model();
  const HeadLoss target(cfg, Head::target), source(cfg, Head::source);
  std::mt19937_64 rng(21);
  const TwoHeadParams p = TwoHeadParams::initialized(cfg, 4);
  Batch b = testing_support::random_batch(6, cfg.input_dim, cfg.n_target, rng);
  const double a = 0.37, c = -1.9;
  LambdaFn combo(p.flat().size(), [&](const Var& x, const Batch& batch) {
    return ad::add(ad::scale(target.build(x, batch), a), ad::scale(source.build(x, batch), c));
  });
  const ParamVector x = combo.point(testing_support::to_vec(p.flat()));
  const ParamVector lhs = grad(combo, x, b);
  const ParamVector rhs = a * grad(target, p.flat(), b) + c * grad(source, p.flat(), b);
  for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-12);

  const ParamVector v1(p.flat().layout_ptr(), oracle::random_vec(p.flat().size(), rng));
  const ParamVector v2(p.flat().layout_ptr(), oracle::random_vec(p.flat().size(), rng));
  const ParamVector h1 = hvp(target, p.flat(), b, v1), h2 = hvp(target, p.flat(), b, v2);
  const ParamVector h12 = hvp(target, p.flat(), b, 2.5 * v1 + v2);
  const ParamVector expect = 2.5 * h1 + h2;
  for (std::size_t i = 0; i < h12.size(); ++i) EXPECT_NEAR(h12[i], expect[i], 1e-10);
  EXPECT_NEAR(v1.dot(h2), v2.dot(h1), 1e-9);
}

TEST(Differentiate, ExactAndFiniteDifferenceHvpAgree) {
  const ModelConfig cfg = testing_support::small_model();
  const HeadLoss f(cfg, Head::target);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const TwoHeadParams p = TwoHeadParams::initialized(cfg, seed);
    const Batch b = testing_support::random_batch(8, cfg.input_dim, cfg.n_target, rng);
    ParamVector v(p.flat().layout_ptr(), oracle::random_vec(p.flat().size(), rng));
    v *= 1.0 / std::sqrt(v.dot(v));  // unit direction keeps eps*v within the truncation budget
    const ParamVector exact = hvp(f, p.flat(), b, v);
    const ParamVector fd = hvp(f, p.flat(), b, v, {HvpBackend::finite_difference, std::nullopt});
    EXPECT_LE(oracle::max_rel_err(testing_support::to_vec(exact), testing_support::to_vec(fd), 1e-3), 1e-5);
  }
}

TEST(Differentiate, TracedGradientReusesForwardPass) {
  const Tensor A = symmetric4();
  auto q = quadratic(A);
  const ParamVector p = q.point({1, 2, 3, 4});
  const TracedGradient tg(q, p, kNoBatch);
  EXPECT_EQ(tg.value(), value(q, p, kNoBatch));
  EXPECT_EQ(tg.gradient(), grad(q, p, kNoBatch));
  const ParamVector e0 = q.point({1, 0, 0, 0});
  const ParamVector h = tg.hvp(e0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(h[i], A.at(i, 0), 1e-12);
}

TEST(Differentiate, DeterministicRepeatedEvaluation) {
  const ModelConfig cfg = testing_support::small_model();
  const HeadLoss f(cfg, Head::source);
  std::mt19937_64 rng(2);
  const TwoHeadParams p = TwoHeadParams::initialized(cfg, 9);
  const Batch b = testing_support::random_batch(9, cfg.input_dim, cfg.n_source, rng);
  const ValueGrad a = value_and_grad(f, p.flat(), b), c = value_and_grad(f, p.flat(), b);
  EXPECT_EQ(a.value, c.value);
  EXPECT_EQ(a.gradient, c.gradient);
}
