#include "pkd/tensor.hpp"

#include <cmath>
#include <sstream>

#include "pkd/error.hpp"

namespace pkd {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_size(shape_) != values_.size()) {
    throw ShapeError("tensor: shape " + shape_string(shape_) + " needs " +
                     std::to_string(shape_size(shape_)) + " values, got " +
                     std::to_string(values_.size()));
  }
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("tensor: rows() on rank " + std::to_string(rank()));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("tensor: cols() on rank " + std::to_string(rank()));
  return shape_[1];
}

bool Tensor::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::item() const {
  if (values_.size() != 1) {
    throw ShapeError("tensor: item() on shape " + shape_string(shape_));
  }
  return values_[0];
}

}  // namespace pkd
