// Straight-line reference implementations used to check the library. Nothing
// here calls into the autodiff engine.
#ifndef METAFG_TESTS_ORACLES_HPP
#define METAFG_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "metafg/model.hpp"

namespace oracle {

using Vec = std::vector<double>;

struct Dense {
  std::size_t in = 0, out = 0;
  std::size_t w_offset = 0, b_offset = 0;  // positions in the flat vector
};

struct Net {
  std::vector<Dense> base;
  Dense target, source;
};

inline Net describe(const metafg::ModelConfig& cfg) {
  // Flat order: base layers (weight then bias), target head, source head.
  Net net;
  std::size_t offset = 0, width = cfg.input_dim;
  auto dense = [&](std::size_t out) {
    Dense d{width, out, offset, offset + width * out};
    offset += width * out + out;
    return d;
  };
  for (std::size_t h : cfg.hidden) {
    net.base.push_back(dense(h));
    width = h;
  }
  const std::size_t feat = width;
  net.target = dense(cfg.n_target);
  width = feat;
  net.source = dense(cfg.n_source);
  return net;
}

// y = x W + b for W stored (in x out) row-major.
inline Vec affine(const Vec& p, const Dense& d, const Vec& x) {
  Vec y(d.out);
  for (std::size_t j = 0; j < d.out; ++j) {
    double s = p[d.b_offset + j];
    for (std::size_t i = 0; i < d.in; ++i) s += x[i] * p[d.w_offset + i * d.out + j];
    y[j] = s;
  }
  return y;
}

inline Vec forward(const metafg::ModelConfig& cfg, const Vec& p, const Vec& x, bool target) {
  const Net net = describe(cfg);
  Vec a = x;
  for (const Dense& d : net.base) {
    a = affine(p, d, a);
    for (double& v : a) v = v > 0.0 ? v : 0.0;
  }
  return affine(p, target ? net.target : net.source, a);
}

inline double cross_entropy(const Vec& z, std::size_t label) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s) - z[label];
}

/// Mean cross-entropy of one head over rows of a row-major feature matrix.
inline double loss(const metafg::ModelConfig& cfg, const Vec& p, const Vec& features,
                   const std::vector<std::size_t>& labels, bool target) {
  double total = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    Vec x(features.begin() + static_cast<long>(r * cfg.input_dim),
          features.begin() + static_cast<long>((r + 1) * cfg.input_dim));
    total += cross_entropy(forward(cfg, p, x, target), labels[r]);
  }
  return total / static_cast<double>(labels.size());
}

/// Hand-written backprop of `loss`.
inline Vec loss_grad(const metafg::ModelConfig& cfg, const Vec& p, const Vec& features,
                     const std::vector<std::size_t>& labels, bool target) {
  const Net net = describe(cfg);
  const Dense& head = target ? net.target : net.source;
  Vec g(p.size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  for (std::size_t r = 0; r < labels.size(); ++r) {
    std::vector<Vec> acts{Vec(features.begin() + static_cast<long>(r * cfg.input_dim),
                              features.begin() + static_cast<long>((r + 1) * cfg.input_dim))};
    std::vector<Vec> pre;
    for (const Dense& d : net.base) {
      pre.push_back(affine(p, d, acts.back()));
      Vec a = pre.back();
      for (double& v : a) v = v > 0.0 ? v : 0.0;
      acts.push_back(a);
    }
    const Vec z = affine(p, head, acts.back());
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    Vec delta(z.size());
    for (std::size_t c = 0; c < z.size(); ++c)
      delta[c] = (std::exp(z[c] - m) / s - (c == labels[r] ? 1.0 : 0.0)) * inv_n;

    auto backward = [&](const Dense& d, const Vec& input, const Vec& dout) {
      Vec din(d.in, 0.0);
      for (std::size_t i = 0; i < d.in; ++i)
        for (std::size_t j = 0; j < d.out; ++j) {
          g[d.w_offset + i * d.out + j] += input[i] * dout[j];
          din[i] += p[d.w_offset + i * d.out + j] * dout[j];
        }
      for (std::size_t j = 0; j < d.out; ++j) g[d.b_offset + j] += dout[j];
      return din;
    };
    Vec da = backward(head, acts.back(), delta);
    for (std::size_t l = net.base.size(); l-- > 0;) {
      for (std::size_t j = 0; j < da.size(); ++j)
        if (!(pre[l][j] > 0.0)) da[j] = 0.0;
      da = backward(net.base[l], acts[l], da);
    }
  }
  return g;
}

/// Central differences of f at x, one coordinate at a time.
inline Vec central_diff(const std::function<double(const Vec&)>& f, const Vec& x, double h,
                        const std::vector<std::size_t>& coords) {
  Vec out;
  Vec y = x;
  for (std::size_t i : coords) {
    y[i] = x[i] + h;
    const double up = f(y);
    y[i] = x[i] - h;
    const double down = f(y);
    y[i] = x[i];
    out.push_back((up - down) / (2.0 * h));
  }
  return out;
}

inline std::vector<std::size_t> all_coords(std::size_t n) {
  std::vector<std::size_t> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = i;
  return c;
}

/// |a - b| / max(|a|, |b|, floor).
inline double rel_err(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_rel_err(const Vec& a, const Vec& b, double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i], floor));
  return worst;
}

inline Vec random_vec(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Vec v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

/// Keeps drawn inputs away from rectifier kinks so finite differences stay
/// on one linear piece.
inline double min_abs_preactivation(const metafg::ModelConfig& cfg, const Vec& p, const Vec& features,
                                    std::size_t rows) {
  const Net net = describe(cfg);
  double worst = INFINITY;
  for (std::size_t r = 0; r < rows; ++r) {
    Vec a(features.begin() + static_cast<long>(r * cfg.input_dim),
          features.begin() + static_cast<long>((r + 1) * cfg.input_dim));
    for (const Dense& d : net.base) {
      a = affine(p, d, a);
      for (double& v : a) {
        worst = std::min(worst, std::abs(v));
        v = v > 0.0 ? v : 0.0;
      }
    }
  }
  return worst;
}

}  // namespace oracle

#endif  // METAFG_TESTS_ORACLES_HPP
