#include "msptr/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace msptr {

// ---------------------------------------------------------------------------
// ParameterSet / Gradients

std::size_t ParameterSet::add(std::string name, Tensor tensor) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  entries_.push_back({std::move(name), std::move(tensor)});
  return entries_.size() - 1;
}

std::optional<std::size_t> ParameterSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  return std::nullopt;
}

std::size_t ParameterSet::slot(std::string_view name) const {
  auto s = find(name);
  if (!s) throw std::out_of_range("no parameter named " + std::string(name));
  return *s;
}

std::size_t ParameterSet::total_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

Gradients::Gradients(const ParameterSet& params) {
  buffers_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) buffers_.emplace_back(params[i].size(), 0.0);
}

void Gradients::zero() {
  for (auto& b : buffers_) std::fill(b.begin(), b.end(), 0.0);
}

void Gradients::add(const Gradients& other) {
  if (other.buffers_.size() != buffers_.size()) throw ShapeError("Gradients::add: slot count mismatch");
  for (std::size_t s = 0; s < buffers_.size(); ++s) {
    auto& dst = buffers_[s];
    const auto& src = other.buffers_[s];
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

void Gradients::scale(double factor) {
  for (auto& b : buffers_)
    for (auto& v : b) v *= factor;
}

bool Gradients::all_finite() const {
  for (const auto& b : buffers_)
    for (double v : b)
      if (!std::isfinite(v)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Tape construction

Tape::Tape() {
  nodes_.reserve(1 << 12);
  values_.reserve(1 << 16);
}

void Tape::clear() {
  nodes_.clear();
  values_.clear();
  ints_.clear();
}

Tape::Node Tape::make(Op op, std::size_t size, std::size_t rows, std::size_t cols) {
  Node n;
  n.op = op;
  n.size = size;
  n.rows = rows ? rows : size;
  n.cols = cols ? cols : 1;
  return n;
}

Var Tape::push(Node n) {
  n.value = values_.size();
  values_.resize(values_.size() + n.size, 0.0);
  nodes_.push_back(n);
  return Var{static_cast<int>(nodes_.size() - 1)};
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) throw std::out_of_range("invalid tape variable");
  return nodes_[v.id];
}

void Tape::require_same_size(Var a, Var b, const char* what) const {
  if (node(a).size != node(b).size) {
    throw ShapeError(std::string(what) + ": operand sizes " + std::to_string(node(a).size) + " and " +
                     std::to_string(node(b).size) + " differ");
  }
}

std::span<const double> Tape::value(Var v) const {
  const Node& n = node(v);
  return {values_.data() + n.value, n.size};
}

double Tape::scalar_value(Var v) const {
  const Node& n = node(v);
  if (n.size != 1) throw ShapeError("scalar_value on node of size " + std::to_string(n.size));
  return values_[n.value];
}

Var Tape::input(std::span<const double> values, std::size_t rows, std::size_t cols) {
  if (rows && cols && rows * cols != values.size()) throw ShapeError("Tape::input: shape/value count mismatch");
  Var out = push(make(Op::kInput, values.size(), rows, cols));
  std::copy(values.begin(), values.end(), val(nodes_[out.id]));
  return out;
}

Var Tape::scalar(double value) { return input(std::span<const double>(&value, 1)); }

Var Tape::zeros(std::size_t n) { return push(make(Op::kInput, n)); }

Var Tape::param(ParamRef p) {
  Node n = make(Op::kParam, p.tensor->size());
  n.tensor = p.tensor;
  n.slot = p.slot;
  n.needs_grad = true;
  Var out = push(n);
  std::copy(p.tensor->values().begin(), p.tensor->values().end(), val(nodes_[out.id]));
  return out;
}

Var Tape::embed(ParamRef table, std::size_t row) {
  const Tensor& t = *table.tensor;
  if (t.rank() != 2 || row >= t.shape()[0]) {
    throw ShapeError("embed: row " + std::to_string(row) + " outside table " + t.shape_string());
  }
  const std::size_t dim = t.shape()[1];
  Node n = make(Op::kEmbed, dim);
  n.tensor = table.tensor;
  n.slot = table.slot;
  n.aux = row;
  n.needs_grad = true;
  Var out = push(n);
  const double* src = t.values().data() + row * dim;
  std::copy(src, src + dim, val(nodes_[out.id]));
  return out;
}

Var Tape::affine(ParamRef W, Var x, std::optional<ParamRef> b) {
  const Tensor& w = *W.tensor;
  const std::size_t xs = node(x).size;
  if (w.rank() != 2 || w.shape()[1] != xs || (b && b->tensor->size() != w.shape()[0])) {
    throw ShapeError("affine: W " + w.shape_string() + " incompatible with x [" + std::to_string(xs) + "]" +
                     (b ? " and b " + b->tensor->shape_string() : std::string()));
  }
  const std::size_t r = w.shape()[0], c = w.shape()[1];
  Node n = make(Op::kAffine, r);
  n.tensor = W.tensor;
  n.slot = W.slot;
  if (b) {
    n.bias = b->tensor;
    n.bias_slot = b->slot;
  }
  n.a = x.id;
  n.needs_grad = true;
  Var out = push(n);
  double* o = val(nodes_[out.id]);
  const double* xv = val(nodes_[x.id]);
  const double* wv = w.values().data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* wr = wv + i * c;
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += wr[j] * xv[j];
    o[i] = acc + (b ? (*b->tensor)[i] : 0.0);
  }
  return out;
}

Var Tape::affine_rows(ParamRef W, Var rows_var) {
  const Tensor& w = *W.tensor;
  const Node& in = node(rows_var);
  if (w.rank() != 2 || w.shape()[1] != in.cols) {
    throw ShapeError("affine_rows: W " + w.shape_string() + " incompatible with rows of width " +
                     std::to_string(in.cols));
  }
  const std::size_t r = w.shape()[0], c = w.shape()[1], count = in.rows;
  Node n = make(Op::kAffineRows, count * r, count, r);
  n.tensor = W.tensor;
  n.slot = W.slot;
  n.a = rows_var.id;
  n.needs_grad = true;
  Var out = push(n);
  double* o = val(nodes_[out.id]);
  const double* xv = val(nodes_[rows_var.id]);
  const double* wv = w.values().data();
  for (std::size_t t = 0; t < count; ++t) {
    const double* xt = xv + t * c;
    for (std::size_t i = 0; i < r; ++i) {
      const double* wr = wv + i * c;
      double acc = 0.0;
      for (std::size_t j = 0; j < c; ++j) acc += wr[j] * xt[j];
      o[t * r + i] = acc;
    }
  }
  return out;
}

namespace {
template <typename F>
void map_binary(const double* a, const double* b, double* o, std::size_t n, F f) {
  for (std::size_t i = 0; i < n; ++i) o[i] = f(a[i], b[i]);
}
}  // namespace

#define MSPTR_BINARY(NAME, OP, EXPR)                                          \
  Var Tape::NAME(Var a, Var b) {                                              \
    require_same_size(a, b, #NAME);                                           \
    Node n = make(OP, node(a).size, node(a).rows, node(a).cols);              \
    n.a = a.id;                                                               \
    n.b = b.id;                                                               \
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;                  \
    Var out = push(n);                                                        \
    map_binary(val(nodes_[a.id]), val(nodes_[b.id]), val(nodes_[out.id]),     \
               nodes_[out.id].size, [](double x, double y) { return EXPR; }); \
    return out;                                                               \
  }

MSPTR_BINARY(add, Op::kAdd, x + y)
MSPTR_BINARY(sub, Op::kSub, x - y)
MSPTR_BINARY(mul, Op::kMul, x* y)
#undef MSPTR_BINARY

#define MSPTR_UNARY(NAME, OP, EXPR)                                  \
  Var Tape::NAME(Var a) {                                            \
    Node n = make(OP, node(a).size, node(a).rows, node(a).cols);     \
    n.a = a.id;                                                      \
    n.needs_grad = node(a).needs_grad;                               \
    Var out = push(n);                                               \
    const double* in = val(nodes_[a.id]);                            \
    double* o = val(nodes_[out.id]);                                 \
    for (std::size_t i = 0; i < nodes_[out.id].size; ++i) {          \
      const double x = in[i];                                        \
      o[i] = EXPR;                                                   \
    }                                                                \
    return out;                                                      \
  }

MSPTR_UNARY(one_minus, Op::kOneMinus, 1.0 - x)
MSPTR_UNARY(sigmoid, Op::kSigmoid, msptr::sigmoid(x))
MSPTR_UNARY(tanh, Op::kTanh, std::tanh(x))
MSPTR_UNARY(relu, Op::kRelu, x > 0.0 ? x : 0.0)
#undef MSPTR_UNARY

Var Tape::scale(Var a, double factor) {
  Node n = make(Op::kScale, node(a).size, node(a).rows, node(a).cols);
  n.a = a.id;
  n.scalar = factor;
  n.needs_grad = node(a).needs_grad;
  Var out = push(n);
  const double* in = val(nodes_[a.id]);
  double* o = val(nodes_[out.id]);
  for (std::size_t i = 0; i < nodes_[out.id].size; ++i) o[i] = factor * in[i];
  return out;
}

Var Tape::concat(std::span<const Var> parts) {
  std::size_t total = 0;
  bool needs = false;
  for (Var p : parts) {
    total += node(p).size;
    needs = needs || node(p).needs_grad;
  }
  Node n = make(Op::kConcat, total);
  n.aux = ints_.size();
  n.aux_len = parts.size();
  n.needs_grad = needs;
  for (Var p : parts) ints_.push_back(p.id);
  Var out = push(n);
  double* o = val(nodes_[out.id]);
  for (Var p : parts) {
    const Node& pn = nodes_[p.id];
    std::copy(val(pn), val(pn) + pn.size, o);
    o += pn.size;
  }
  return out;
}

Var Tape::stack(std::span<const Var> rows_in) {
  if (rows_in.empty()) throw ShapeError("stack: no rows");
  const std::size_t k = node(rows_in[0]).size;
  for (Var r : rows_in)
    if (node(r).size != k) throw ShapeError("stack: rows of unequal length");
  Var out = concat(rows_in);
  nodes_[out.id].rows = rows_in.size();
  nodes_[out.id].cols = k;
  return out;
}

Var Tape::slice(Var a, std::size_t offset, std::size_t length) {
  if (offset + length > node(a).size || length == 0) {
    throw ShapeError("slice [" + std::to_string(offset) + ", +" + std::to_string(length) + ") of size " +
                     std::to_string(node(a).size));
  }
  Node n = make(Op::kSlice, length);
  n.a = a.id;
  n.aux = offset;
  n.needs_grad = node(a).needs_grad;
  Var out = push(n);
  const double* in = val(nodes_[a.id]) + offset;
  std::copy(in, in + length, val(nodes_[out.id]));
  return out;
}

Var Tape::row(Var matrix, std::size_t r) {
  const Node& m = node(matrix);
  if (r >= m.rows) throw ShapeError("row index out of range");
  return slice(matrix, r * m.cols, m.cols);
}

Var Tape::dot(Var a, Var b) {
  require_same_size(a, b, "dot");
  Node n = make(Op::kDot, 1);
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  Var out = push(n);
  const double* x = val(nodes_[a.id]);
  const double* y = val(nodes_[b.id]);
  double acc = 0.0;
  for (std::size_t i = 0; i < nodes_[a.id].size; ++i) acc += x[i] * y[i];
  val(nodes_[out.id])[0] = acc;
  return out;
}

Var Tape::dot_param(ParamRef w, Var x) {
  if (w.tensor->size() != node(x).size) {
    throw ShapeError("dot_param: weight " + w.tensor->shape_string() + " vs input [" +
                     std::to_string(node(x).size) + "]");
  }
  Node n = make(Op::kDotParam, 1);
  n.tensor = w.tensor;
  n.slot = w.slot;
  n.a = x.id;
  n.needs_grad = true;
  Var out = push(n);
  const double* xv = val(nodes_[x.id]);
  const auto wv = w.tensor->values();
  double acc = 0.0;
  for (std::size_t i = 0; i < wv.size(); ++i) acc += wv[i] * xv[i];
  val(nodes_[out.id])[0] = acc;
  return out;
}

Var Tape::sum(std::span<const Var> scalars) {
  Node n = make(Op::kSum, 1);
  n.aux = ints_.size();
  n.aux_len = scalars.size();
  double acc = 0.0;
  for (Var s : scalars) {
    if (node(s).size != 1) throw ShapeError("sum: operands must be scalars");
    n.needs_grad = n.needs_grad || node(s).needs_grad;
    ints_.push_back(s.id);
    acc += values_[node(s).value];
  }
  Var out = push(n);
  val(nodes_[out.id])[0] = acc;
  return out;
}

Var Tape::attention_scores(Var keys, Var query, ParamRef v) {
  const Node& kn = node(keys);
  const std::size_t count = kn.rows, width = kn.cols;
  if (node(query).size != width || v.tensor->size() != width) {
    throw ShapeError("attention_scores: keys " + std::to_string(count) + "x" + std::to_string(width) +
                     ", query [" + std::to_string(node(query).size) + "], v " + v.tensor->shape_string());
  }
  Node n = make(Op::kAttnScores, count);
  n.a = keys.id;
  n.b = query.id;
  n.tensor = v.tensor;
  n.slot = v.slot;
  n.needs_grad = true;
  Var out = push(n);
  // tanh cache lives right after the output in the value arena.
  const std::size_t cache = values_.size();
  values_.resize(cache + count * width);
  nodes_[out.id].aux = cache;
  const double* kv = values_.data() + nodes_[keys.id].value;
  const double* qv = values_.data() + nodes_[query.id].value;
  const double* vv = v.tensor->values().data();
  double* t = values_.data() + cache;
  double* o = values_.data() + nodes_[out.id].value;
  for (std::size_t i = 0; i < count; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < width; ++k) {
      const double th = std::tanh(kv[i * width + k] + qv[k]);
      t[i * width + k] = th;
      acc += vv[k] * th;
    }
    o[i] = acc;
  }
  return out;
}

Var Tape::masked_softmax(Var u, std::span<const unsigned char> mask) {
  const std::size_t count = node(u).size;
  if (mask.size() != count) throw ShapeError("masked_softmax: mask length mismatch");
  Node n = make(Op::kMaskedSoftmax, count);
  n.a = u.id;
  n.aux = ints_.size();
  n.aux_len = count;
  n.needs_grad = node(u).needs_grad;
  for (auto m : mask) ints_.push_back(m ? 1 : 0);
  Var out = push(n);
  auto probs = msptr::masked_softmax(value(u), mask);
  std::copy(probs.begin(), probs.end(), val(nodes_[out.id]));
  return out;
}

Var Tape::weighted_sum(Var weights, Var rows_var) {
  const Node& w = node(weights);
  const Node& r = node(rows_var);
  if (r.rows != w.size) {
    throw ShapeError("weighted_sum: " + std::to_string(w.size) + " weights for " + std::to_string(r.rows) + " rows");
  }
  Node n = make(Op::kWeightedSum, r.cols);
  n.a = weights.id;
  n.b = rows_var.id;
  n.needs_grad = w.needs_grad || r.needs_grad;
  Var out = push(n);
  const double* wv = values_.data() + nodes_[weights.id].value;
  const double* rv = values_.data() + nodes_[rows_var.id].value;
  double* o = values_.data() + nodes_[out.id].value;
  const std::size_t count = nodes_[rows_var.id].rows, width = nodes_[rows_var.id].cols;
  for (std::size_t i = 0; i < count; ++i) {
    if (wv[i] == 0.0) continue;
    for (std::size_t k = 0; k < width; ++k) o[k] += wv[i] * rv[i * width + k];
  }
  return out;
}

Var Tape::gather_sum(Var a, std::span<const int> positions) {
  const std::size_t count = node(a).size;
  Node n = make(Op::kGatherSum, 1);
  n.a = a.id;
  n.aux = ints_.size();
  n.aux_len = positions.size();
  n.needs_grad = node(a).needs_grad;
  double acc = 0.0;
  const double* av = values_.data() + node(a).value;
  for (int p : positions) {
    if (p < 0 || static_cast<std::size_t>(p) >= count) throw ShapeError("gather_sum: position out of range");
    ints_.push_back(p);
    acc += av[p];
  }
  Var out = push(n);
  val(nodes_[out.id])[0] = acc;
  return out;
}

Var Tape::neg_log(Var p, double floor) {
  if (node(p).size != 1) throw ShapeError("neg_log expects a scalar");
  Node n = make(Op::kNegLog, 1);
  n.a = p.id;
  n.scalar = floor;
  n.needs_grad = node(p).needs_grad;
  Var out = push(n);
  const double x = values_[nodes_[p.id].value];
  val(nodes_[out.id])[0] = -std::log(std::max(x, floor));
  return out;
}

// ---------------------------------------------------------------------------
// Backward

void Tape::backward(Var loss, Gradients& grads) {
  const Node& ln = node(loss);
  if (ln.size != 1) throw ShapeError("backward: loss must be a scalar");
  grads_.assign(values_.size(), 0.0);
  grads_[ln.value] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    const Node& n = nodes_[i];
    if (!n.needs_grad) continue;
    const double* g = grads_.data() + n.value;
    bool any = false;
    for (std::size_t k = 0; k < n.size && !any; ++k) any = g[k] != 0.0;
    if (any) backward_node(n, g, grads);
  }
}

void Tape::backward_node(const Node& n, const double* g, Gradients& grads) {
  auto child_grad = [&](int id) -> double* {
    return nodes_[id].needs_grad ? grads_.data() + nodes_[id].value : nullptr;
  };
  auto child_val = [&](int id) -> const double* { return values_.data() + nodes_[id].value; };
  const std::size_t size = n.size;

  switch (n.op) {
    case Op::kInput:
      break;
    case Op::kParam: {
      auto& gp = grads[n.slot];
      for (std::size_t i = 0; i < size; ++i) gp[i] += g[i];
      break;
    }
    case Op::kEmbed: {
      double* gp = grads[n.slot].data() + n.aux * size;
      for (std::size_t i = 0; i < size; ++i) gp[i] += g[i];
      break;
    }
    case Op::kAffine: {
      const std::size_t r = n.tensor->shape()[0], c = n.tensor->shape()[1];
      const double* x = child_val(n.a);
      double* gx = child_grad(n.a);
      const double* w = n.tensor->values().data();
      double* gw = grads[n.slot].data();
      for (std::size_t i = 0; i < r; ++i) {
        const double gi = g[i];
        if (gi == 0.0) continue;
        double* gwr = gw + i * c;
        const double* wr = w + i * c;
        for (std::size_t j = 0; j < c; ++j) gwr[j] += gi * x[j];
        if (gx)
          for (std::size_t j = 0; j < c; ++j) gx[j] += gi * wr[j];
      }
      if (n.bias) {
        auto& gb = grads[n.bias_slot];
        for (std::size_t i = 0; i < r; ++i) gb[i] += g[i];
      }
      break;
    }
    case Op::kAffineRows: {
      const std::size_t r = n.tensor->shape()[0], c = n.tensor->shape()[1], count = n.rows;
      const double* x = child_val(n.a);
      double* gx = child_grad(n.a);
      const double* w = n.tensor->values().data();
      double* gw = grads[n.slot].data();
      for (std::size_t t = 0; t < count; ++t) {
        for (std::size_t i = 0; i < r; ++i) {
          const double gi = g[t * r + i];
          if (gi == 0.0) continue;
          double* gwr = gw + i * c;
          const double* wr = w + i * c;
          const double* xt = x + t * c;
          for (std::size_t j = 0; j < c; ++j) gwr[j] += gi * xt[j];
          if (gx)
            for (std::size_t j = 0; j < c; ++j) gx[t * c + j] += gi * wr[j];
        }
      }
      break;
    }
    case Op::kAdd:
    case Op::kSub: {
      const double sign = n.op == Op::kAdd ? 1.0 : -1.0;
      if (double* ga = child_grad(n.a))
        for (std::size_t i = 0; i < size; ++i) ga[i] += g[i];
      if (double* gb = child_grad(n.b))
        for (std::size_t i = 0; i < size; ++i) gb[i] += sign * g[i];
      break;
    }
    case Op::kMul: {
      const double* a = child_val(n.a);
      const double* b = child_val(n.b);
      if (double* ga = child_grad(n.a))
        for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] * b[i];
      if (double* gb = child_grad(n.b))
        for (std::size_t i = 0; i < size; ++i) gb[i] += g[i] * a[i];
      break;
    }
    case Op::kScale:
      if (double* ga = child_grad(n.a))
        for (std::size_t i = 0; i < size; ++i) ga[i] += n.scalar * g[i];
      break;
    case Op::kOneMinus:
      if (double* ga = child_grad(n.a))
        for (std::size_t i = 0; i < size; ++i) ga[i] -= g[i];
      break;
    case Op::kSigmoid: {
      const double* y = values_.data() + n.value;
      if (double* ga = child_grad(n.a))
        for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
      break;
    }
    case Op::kTanh: {
      const double* y = values_.data() + n.value;
      if (double* ga = child_grad(n.a))
        for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
      break;
    }
    case Op::kRelu: {
      const double* x = child_val(n.a);
      if (double* ga = child_grad(n.a))
        for (std::size_t i = 0; i < size; ++i)
          if (x[i] > 0.0) ga[i] += g[i];
      break;
    }
    case Op::kConcat: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.aux_len; ++k) {
        const int id = ints_[n.aux + k];
        const std::size_t len = nodes_[id].size;
        if (double* gp = child_grad(id))
          for (std::size_t i = 0; i < len; ++i) gp[i] += g[offset + i];
        offset += len;
      }
      break;
    }
    case Op::kSlice:
      if (double* ga = child_grad(n.a))
        for (std::size_t i = 0; i < size; ++i) ga[n.aux + i] += g[i];
      break;
    case Op::kDot: {
      const std::size_t len = nodes_[n.a].size;
      const double* a = child_val(n.a);
      const double* b = child_val(n.b);
      if (double* ga = child_grad(n.a))
        for (std::size_t i = 0; i < len; ++i) ga[i] += g[0] * b[i];
      if (double* gb = child_grad(n.b))
        for (std::size_t i = 0; i < len; ++i) gb[i] += g[0] * a[i];
      break;
    }
    case Op::kDotParam: {
      const auto w = n.tensor->values();
      const double* x = child_val(n.a);
      auto& gw = grads[n.slot];
      for (std::size_t i = 0; i < w.size(); ++i) gw[i] += g[0] * x[i];
      if (double* gx = child_grad(n.a))
        for (std::size_t i = 0; i < w.size(); ++i) gx[i] += g[0] * w[i];
      break;
    }
    case Op::kSum:
      for (std::size_t k = 0; k < n.aux_len; ++k)
        if (double* gp = child_grad(ints_[n.aux + k])) gp[0] += g[0];
      break;
    case Op::kAttnScores: {
      const std::size_t count = n.size, width = nodes_[n.a].cols;
      const double* t = values_.data() + n.aux;
      const double* v = n.tensor->values().data();
      double* gk = child_grad(n.a);
      double* gq = child_grad(n.b);
      auto& gv = grads[n.slot];
      for (std::size_t i = 0; i < count; ++i) {
        const double gi = g[i];
        if (gi == 0.0) continue;
        for (std::size_t k = 0; k < width; ++k) {
          const double th = t[i * width + k];
          gv[k] += gi * th;
          const double d = gi * v[k] * (1.0 - th * th);
          if (gk) gk[i * width + k] += d;
          if (gq) gq[k] += d;
        }
      }
      break;
    }
    case Op::kMaskedSoftmax: {
      const double* y = values_.data() + n.value;
      double inner = 0.0;
      for (std::size_t i = 0; i < size; ++i) inner += y[i] * g[i];
      if (double* ga = child_grad(n.a))
        for (std::size_t i = 0; i < size; ++i)
          if (ints_[n.aux + i]) ga[i] += y[i] * (g[i] - inner);
      break;
    }
    case Op::kWeightedSum: {
      const std::size_t count = nodes_[n.b].rows, width = nodes_[n.b].cols;
      const double* w = child_val(n.a);
      const double* r = child_val(n.b);
      double* gw = child_grad(n.a);
      double* gr = child_grad(n.b);
      for (std::size_t i = 0; i < count; ++i) {
        if (gw) {
          double acc = 0.0;
          for (std::size_t k = 0; k < width; ++k) acc += g[k] * r[i * width + k];
          gw[i] += acc;
        }
        if (gr && w[i] != 0.0)
          for (std::size_t k = 0; k < width; ++k) gr[i * width + k] += w[i] * g[k];
      }
      break;
    }
    case Op::kGatherSum:
      if (double* ga = child_grad(n.a))
        for (std::size_t k = 0; k < n.aux_len; ++k) ga[ints_[n.aux + k]] += g[0];
      break;
    case Op::kNegLog: {
      const double p = child_val(n.a)[0];
      if (double* ga = child_grad(n.a))
        if (p > n.scalar) ga[0] -= g[0] / p;
      break;
    }
  }
}

}  // namespace msptr
