#ifndef METAFG_TENSOR_HPP
#define METAFG_TENSOR_HPP

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace metafg {

using Shape = std::vector<std::size_t>;

/// Number of elements described by a shape (1 for rank 0).
std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/**
 * Dense row-major array of doubles.
 *
 * Rank 0 is a scalar, rank 1 a flat vector and rank 2 a matrix. Higher ranks
 * are storable but no arithmetic is defined on them.
 */
class Tensor {
 public:
  Tensor() : values_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }

  // Matrix accessors; a rank-1 tensor is viewed as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return values_[i]; }
  const double& operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  /// Value of a rank-0 (or single element) tensor.
  double item() const;

  std::span<double> data() { return values_; }
  std::span<const double> data() const { return values_; }
  const std::vector<double>& values() const { return values_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

}  // namespace metafg

#endif  // METAFG_TENSOR_HPP
