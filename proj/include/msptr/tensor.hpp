#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace msptr {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dense row-major array. Parameter tensors hold float32-representable values
// (see round_to_float32); arithmetic on them runs in 64-bit.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor from_vector(std::vector<double> values);
  static Tensor from_matrix(std::initializer_list<std::initializer_list<double>> rows);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }

  bool all_finite() const;
  void round_to_float32();

  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

std::string shape_string(std::span<const std::size_t> shape);

enum class Activation { kSigmoid, kTanh, kRelu };

double sigmoid(double x);

// out = W x + b. Throws ShapeError naming both shapes on mismatch.
Tensor linear_map(const Tensor& x, const Tensor& W, const Tensor& b);

Tensor activation(const Tensor& x, Activation kind);

// Softmax over positions with mask[i] != 0. Masked outputs are exactly zero.
// An empty mask means every position is live. Throws if nothing is live.
std::vector<double> masked_softmax(std::span<const double> u, std::span<const unsigned char> mask = {});

// Global l2 norm over a set of gradient buffers, accumulated in 64-bit.
double l2_norm(std::span<const std::vector<double>> grads);

}  // namespace msptr
