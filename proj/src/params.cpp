#include "metafg/params.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace metafg {

Layout& Layout::add(std::string name, Shape shape) {
  if (find(name)) throw std::invalid_argument("duplicate segment name '" + name + "'");
  Segment seg{std::move(name), size_, std::move(shape)};
  for (std::size_t d : seg.shape)
    if (d == 0) throw std::invalid_argument("segment '" + seg.name + "' has a zero dimension");
  size_ += seg.length();
  segments_.push_back(std::move(seg));
  return *this;
}

Layout Layout::from_segments(std::vector<Segment> segments) {
  Layout layout;
  for (Segment& seg : segments) {
    if (seg.offset != layout.size_)
      throw std::invalid_argument("segment '" + seg.name + "' at offset " + std::to_string(seg.offset) +
                                  " leaves a gap or overlap (expected " + std::to_string(layout.size_) + ")");
    layout.add(std::move(seg.name), std::move(seg.shape));
  }
  return layout;
}

const Segment& Layout::segment(const std::string& name) const {
  auto idx = find(name);
  if (!idx) throw std::out_of_range("no parameter segment named '" + name + "'");
  return segments_[*idx];
}

std::optional<std::size_t> Layout::find(const std::string& name) const {
  for (std::size_t i = 0; i < segments_.size(); ++i)
    if (segments_[i].name == name) return i;
  return std::nullopt;
}

ParamVector::ParamVector(std::shared_ptr<const Layout> layout, double fill) : layout_(std::move(layout)) {
  if (!layout_) throw std::invalid_argument("ParamVector requires a layout");
  values_.assign(layout_->size(), fill);
}

ParamVector::ParamVector(std::shared_ptr<const Layout> layout, std::vector<double> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (!layout_) throw std::invalid_argument("ParamVector requires a layout");
  if (values_.size() != layout_->size())
    throw std::invalid_argument("layout expects " + std::to_string(layout_->size()) + " values, got " +
                                std::to_string(values_.size()));
}

std::span<double> ParamVector::segment(const std::string& name) {
  const Segment& seg = layout_->segment(name);
  return std::span<double>(values_).subspan(seg.offset, seg.length());
}

std::span<const double> ParamVector::segment(const std::string& name) const {
  const Segment& seg = layout_->segment(name);
  return std::span<const double>(values_).subspan(seg.offset, seg.length());
}

Tensor ParamVector::to_tensor() const { return Tensor::vector(values_); }

bool ParamVector::compatible(const ParamVector& other) const {
  if (!layout_ || !other.layout_) return false;
  return layout_ == other.layout_ || *layout_ == *other.layout_;
}

void ParamVector::require_compatible(const ParamVector& other, const char* context) const {
  if (!compatible(other))
    throw std::invalid_argument(std::string(context) + ": parameter layouts differ (" + std::to_string(size()) +
                                " vs " + std::to_string(other.size()) + " values)");
}

ParamVector& ParamVector::operator+=(const ParamVector& other) { return axpy(1.0, other); }

ParamVector& ParamVector::operator-=(const ParamVector& other) {
  require_compatible(other, "operator-=");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
  return *this;
}

ParamVector& ParamVector::operator*=(double c) {
  for (double& v : values_) v *= c;
  return *this;
}

ParamVector& ParamVector::axpy(double c, const ParamVector& other) {
  require_compatible(other, "axpy");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += c * other.values_[i];
  return *this;
}

double ParamVector::dot(const ParamVector& other) const {
  require_compatible(other, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < values_.size(); ++i) s += values_[i] * other.values_[i];
  return s;
}

double ParamVector::max_abs() const {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

ParamVector operator+(ParamVector a, const ParamVector& b) { return a += b; }
ParamVector operator-(ParamVector a, const ParamVector& b) { return a -= b; }
ParamVector operator*(double c, ParamVector a) { return a *= c; }

}  // namespace metafg
