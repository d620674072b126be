#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fewgen {

/// Base error type for everything thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

/// Dense row-major tensor of doubles. Values are fixed at construction and
/// must all be finite; copies share the underlying buffer.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor scalar(double v);
  static Tensor row(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_->size(); }
  std::size_t rank() const { return shape_.size(); }

  // Matrix view: rank 0 is 1x1, rank 1 is 1xn.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return *values_; }
  const std::vector<double>& data() const { return *values_; }
  double operator[](std::size_t i) const { return (*values_)[i]; }
  double at(std::size_t r, std::size_t c) const { return (*values_)[r * cols() + c]; }
  double item() const;

  bool operator==(const Tensor& other) const;

 private:
  Shape shape_{0};
  std::shared_ptr<const std::vector<double>> values_ = std::make_shared<const std::vector<double>>();
};

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Numerically stable softmax. Throws on empty input.
std::vector<double> softmax_stable(std::span<const double> logits);
std::vector<double> log_softmax_stable(std::span<const double> logits);

/// ||a - b||_2 / max(||a||_2, ||b||_2); 0 when both are zero.
double relative_error(std::span<const double> a, std::span<const double> b);

}  // namespace fewgen
