#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "msptr/tensor.hpp"

namespace msptr {

struct NamedTensor {
  std::string name;
  Tensor tensor;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

// Ordered, named collection of learned tensors. Slot order is the checkpoint order.
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor tensor);

  std::size_t size() const { return entries_.size(); }
  Tensor& operator[](std::size_t slot) { return entries_[slot].tensor; }
  const Tensor& operator[](std::size_t slot) const { return entries_[slot].tensor; }
  const std::string& name(std::size_t slot) const { return entries_[slot].name; }
  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t slot(std::string_view name) const;  // throws if absent
  std::size_t total_elements() const;
  const std::vector<NamedTensor>& entries() const { return entries_; }

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  std::vector<NamedTensor> entries_;
};

// One 64-bit accumulator buffer per parameter slot.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParameterSet& params);

  std::vector<double>& operator[](std::size_t slot) { return buffers_[slot]; }
  const std::vector<double>& operator[](std::size_t slot) const { return buffers_[slot]; }
  std::size_t size() const { return buffers_.size(); }
  std::span<const std::vector<double>> buffers() const { return buffers_; }

  void zero();
  void add(const Gradients& other);
  void scale(double factor);
  double norm() const { return l2_norm(buffers_); }
  bool all_finite() const;

 private:
  std::vector<std::vector<double>> buffers_;
};

struct ParamRef {
  const Tensor* tensor = nullptr;
  std::size_t slot = 0;
};

inline ParamRef param_ref(const ParameterSet& params, std::size_t slot) { return {&params[slot], slot}; }

// Handle to a node of a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Dynamic reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order; backward() walks it once in reverse. Values and
// gradients live in flat 64-bit arenas so clear() keeps capacity for reuse.
class Tape {
 public:
  Tape();

  void clear();
  std::size_t node_count() const { return nodes_.size(); }

  // Leaves.
  Var input(std::span<const double> values, std::size_t rows = 0, std::size_t cols = 0);
  Var scalar(double value);
  Var zeros(std::size_t n);
  Var param(ParamRef p);
  Var embed(ParamRef table, std::size_t row);

  // Linear algebra. W is always a parameter.
  Var affine(ParamRef W, Var x, std::optional<ParamRef> b = std::nullopt);  // W x (+ b)
  Var affine_rows(ParamRef W, Var rows);                                      // each row r -> W r

  // Elementwise on equal sizes.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var one_minus(Var a);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var relu(Var a);

  // Structure.
  Var concat(std::span<const Var> parts);
  Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }
  Var stack(std::span<const Var> rows);  // n equal-length vectors -> n x k
  Var slice(Var a, std::size_t offset, std::size_t length);
  Var row(Var matrix, std::size_t r);

  // Reductions.
  Var dot(Var a, Var b);
  Var dot_param(ParamRef w, Var x);
  Var sum(std::span<const Var> scalars);

  // Attention pieces: u_i = v . tanh(keys_i + query); a = masked softmax(u);
  // context = sum_i a_i rows_i.
  Var attention_scores(Var keys, Var query, ParamRef v);
  Var masked_softmax(Var u, std::span<const unsigned char> mask);
  Var weighted_sum(Var weights, Var rows);
  Var gather_sum(Var a, std::span<const int> positions);

  // -log(max(p, floor)); derivative is zero below the floor.
  Var neg_log(Var p, double floor);

  std::span<const double> value(Var v) const;
  double scalar_value(Var v) const;
  std::size_t size(Var v) const { return nodes_[v.id].size; }
  std::size_t rows(Var v) const { return nodes_[v.id].rows; }
  std::size_t cols(Var v) const { return nodes_[v.id].cols; }

  // Accumulates d(loss)/d(param) into grads. loss must be a scalar node.
  void backward(Var loss, Gradients& grads);

 private:
  enum class Op : std::uint8_t {
    kInput, kParam, kEmbed, kAffine, kAffineRows, kAdd, kSub, kMul, kScale, kOneMinus,
    kSigmoid, kTanh, kRelu, kConcat, kSlice, kDot, kDotParam, kSum, kAttnScores,
    kMaskedSoftmax, kWeightedSum, kGatherSum, kNegLog,
  };

  struct Node {
    Op op;
    bool needs_grad = false;
    std::size_t size = 0, rows = 0, cols = 0;
    std::size_t value = 0;  // offset into values_
    int a = -1, b = -1;
    const Tensor* tensor = nullptr;
    const Tensor* bias = nullptr;
    std::size_t slot = 0, bias_slot = 0;
    std::size_t aux = 0, aux_len = 0;  // offset into ints_ or values_ depending on op
    double scalar = 0.0;
  };

  Var push(Node node);
  Node make(Op op, std::size_t size, std::size_t rows = 0, std::size_t cols = 0);
  double* val(const Node& n) { return values_.data() + n.value; }
  const double* val(const Node& n) const { return values_.data() + n.value; }
  const Node& node(Var v) const;
  void require_same_size(Var a, Var b, const char* what) const;
  void backward_node(const Node& n, const double* g, Gradients& grads);

  std::vector<Node> nodes_;
  std::vector<double> values_;
  std::vector<double> grads_;
  std::vector<int> ints_;
};

}  // namespace msptr
