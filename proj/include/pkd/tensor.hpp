#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace pkd {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles. Rank 0 is a scalar, rank 2 is used for
// batches ([batch, features]).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values) {
    return Tensor(Shape{rows, cols}, std::move(values));
  }
  static Tensor row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(Shape{1, n}, std::move(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  const std::vector<double>& data() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const {
    return values_[r * cols() + c];
  }

  std::span<const double> row_span(std::size_t r) const {
    return std::span<const double>(values_).subspan(r * cols(), cols());
  }

  bool all_finite() const;
  double item() const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

}  // namespace pkd
