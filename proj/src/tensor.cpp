#include "metafg/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace metafg {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace {
void check_dims(const Shape& shape) {
  for (std::size_t d : shape)
    if (d == 0) throw std::invalid_argument("tensor dimensions must be positive, got " + shape_string(shape));
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_dims(shape_);
  values_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
  check_dims(shape_);
  if (values_.size() != shape_size(shape_))
    throw std::invalid_argument("tensor of shape " + shape_string(shape_) + " cannot hold " +
                                std::to_string(values_.size()) + " values");
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (rank() == 2) return shape_[0];
  if (rank() <= 1) return 1;
  throw std::logic_error("rows() on tensor of rank " + std::to_string(rank()));
}

std::size_t Tensor::cols() const {
  if (rank() == 2) return shape_[1];
  if (rank() == 1) return shape_[0];
  if (rank() == 0) return 1;
  throw std::logic_error("cols() on tensor of rank " + std::to_string(rank()));
}

double Tensor::item() const {
  if (values_.size() != 1)
    throw std::logic_error("item() on tensor of shape " + shape_string(shape_));
  return values_[0];
}

bool Tensor::all_finite() const {
  for (double v : values_)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace metafg
