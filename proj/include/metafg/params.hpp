#ifndef METAFG_PARAMS_HPP
#define METAFG_PARAMS_HPP

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metafg/tensor.hpp"

namespace metafg {

/// A named contiguous run of a flat parameter vector, viewed with `shape`.
struct Segment {
  std::string name;
  std::size_t offset = 0;
  Shape shape;

  std::size_t length() const { return shape_size(shape); }
  friend bool operator==(const Segment&, const Segment&) = default;
};

/**
 * Ordered, gap-free partition of a flat vector into named segments.
 *
 * Segments are appended in order so disjointness and exact coverage hold by
 * construction; `from_segments` re-checks both for externally read layouts.
 */
class Layout {
 public:
  Layout() = default;

  Layout& add(std::string name, Shape shape);
  static Layout from_segments(std::vector<Segment> segments);

  std::size_t size() const { return size_; }
  const std::vector<Segment>& segments() const { return segments_; }
  const Segment& segment(const std::string& name) const;
  std::optional<std::size_t> find(const std::string& name) const;

  friend bool operator==(const Layout&, const Layout&) = default;

 private:
  std::vector<Segment> segments_;
  std::size_t size_ = 0;
};

/// Flat parameter values tagged with their layout.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::shared_ptr<const Layout> layout, double fill = 0.0);
  ParamVector(std::shared_ptr<const Layout> layout, std::vector<double> values);

  const Layout& layout() const { return *layout_; }
  const std::shared_ptr<const Layout>& layout_ptr() const { return layout_; }
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> segment(const std::string& name);
  std::span<const double> segment(const std::string& name) const;

  /// Flat rank-1 tensor copy of the values.
  Tensor to_tensor() const;

  bool compatible(const ParamVector& other) const;
  /// Throws std::invalid_argument unless `other` has the same layout.
  void require_compatible(const ParamVector& other, const char* context) const;

  // Elementwise combinations; both operands must share a layout.
  ParamVector& operator+=(const ParamVector& other);
  ParamVector& operator-=(const ParamVector& other);
  ParamVector& operator*=(double c);
  /// this += c * other
  ParamVector& axpy(double c, const ParamVector& other);
  double dot(const ParamVector& other) const;
  double max_abs() const;

  friend bool operator==(const ParamVector& a, const ParamVector& b) {
    return a.values_ == b.values_ && (a.layout_ == b.layout_ || (a.layout_ && b.layout_ && *a.layout_ == *b.layout_));
  }

 private:
  std::shared_ptr<const Layout> layout_;
  std::vector<double> values_;
};

ParamVector operator+(ParamVector a, const ParamVector& b);
ParamVector operator-(ParamVector a, const ParamVector& b);
ParamVector operator*(double c, ParamVector a);

}  // namespace metafg

#endif  // METAFG_PARAMS_HPP
