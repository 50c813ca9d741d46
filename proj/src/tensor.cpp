#include "msptr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <functional>
#include <numeric>
#include <sstream>

namespace msptr {

namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
    n *= extent;
  }
  return n;
}

}  // namespace

std::string shape_string(std::span<const std::size_t> shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
  values_.assign(element_count(shape_), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (element_count(shape_) != values_.size()) {
    throw ShapeError("tensor of shape " + msptr::shape_string(shape_) + " given " +
                     std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::from_vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::from_matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<double> values;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& row : rows) {
    if (row.size() != cols) throw ShapeError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({rows.size(), cols}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 1;
  return shape_.size() == 1 ? shape_[0] : shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() < 2) return 1;
  return values_.size() / shape_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::round_to_float32() {
  for (auto& v : values_) v = static_cast<double>(static_cast<float>(v));
}

std::string Tensor::shape_string() const { return msptr::shape_string(shape_); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor linear_map(const Tensor& x, const Tensor& W, const Tensor& b) {
  if (W.rank() != 2 || x.rank() != 1 || b.rank() != 1 || W.shape()[1] != x.size() ||
      W.shape()[0] != b.size()) {
    throw ShapeError("linear_map: W " + W.shape_string() + " incompatible with x " + x.shape_string() +
                     " and b " + b.shape_string());
  }
  const std::size_t r = W.shape()[0], c = W.shape()[1];
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    double acc = b[i];
    for (std::size_t j = 0; j < c; ++j) acc += W.at(i, j) * x[j];
    out[i] = acc;
  }
  return Tensor::from_vector(std::move(out));
}

Tensor activation(const Tensor& x, Activation kind) {
  Tensor out = x;
  for (auto& v : out.values()) {
    switch (kind) {
      case Activation::kSigmoid: v = sigmoid(v); break;
      case Activation::kTanh: v = std::tanh(v); break;
      case Activation::kRelu: v = v > 0 ? v : 0.0; break;
    }
  }
  return out;
}

std::vector<double> masked_softmax(std::span<const double> u, std::span<const unsigned char> mask) {
  if (!mask.empty() && mask.size() != u.size()) {
    throw ShapeError("masked_softmax: mask length " + std::to_string(mask.size()) + " vs input length " +
                     std::to_string(u.size()));
  }
  auto live = [&](std::size_t i) { return mask.empty() || mask[i] != 0; };
  double max_u = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (live(i)) {
      max_u = std::max(max_u, u[i]);
      any = true;
    }
  }
  if (!any) throw std::invalid_argument("masked_softmax: every position is masked");
  std::vector<double> out(u.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (live(i)) {
      out[i] = std::exp(u[i] - max_u);
      total += out[i];
    }
  }
  for (auto& v : out) v /= total;
  return out;
}

double l2_norm(std::span<const std::vector<double>> grads) {
  double sum = 0.0;
  for (const auto& g : grads)
    for (double v : g) sum += v * v;
  return std::sqrt(sum);
}

}  // namespace msptr
