#include "elicit/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "elicit/errors.hpp"

namespace elicit::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

// For every element of `out`, the flat offset of the broadcast source element
// in `in`. Empty result means the shapes are identical.
std::vector<std::size_t> broadcast_map(const Shape& in, const Shape& out) {
  if (in == out) return {};
  const std::size_t rank = out.size();
  const std::size_t lead = rank - in.size();
  std::vector<std::size_t> in_stride(rank, 0);
  std::size_t stride = 1;
  for (std::size_t d = rank; d-- > lead;) {
    const std::size_t len = in[d - lead];
    in_stride[d] = (len == 1) ? 0 : stride;
    stride *= len;
  }
  const std::size_t n = numel(out);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map[i] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      offset += in_stride[d];
      if (counter[d] < out[d]) break;
      offset -= in_stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return map;
}

inline std::size_t src(const std::vector<std::size_t>& map, std::size_t i) {
  return map.empty() ? i : map[i];
}

double softplus_value(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t d = 0; d < axis; ++d) s.outer *= shape[d];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) s.inner *= shape[d];
  return s;
}

Tensor constant(double v) { return Tensor::scalar(v); }

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
    out[i] = (da == 1) ? db : da;
  }
  return out;
}

// ------------------------------------------------------------------- Node

void Node::accumulate(std::size_t i, double g) { grad_buffer()[i] += g; }

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(values.size(), 0.0);
  return grad;
}

// ----------------------------------------------------------------- Tensor

Tensor::Tensor() : node_(std::make_shared<Node>()) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel(shape) != values.size()) {
    throw ShapeError("shape " + to_string(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape s{values.size()};
  return from(std::move(s), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

Tensor::Tensor(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
               std::function<void(const Node&)> backward_fn)
    : node_(std::make_shared<Node>()) {
  node_->shape = std::move(shape);
  node_->values = std::move(values);
  const bool any = std::any_of(parents.begin(), parents.end(),
                               [](const Tensor& p) { return p.requires_grad(); });
  node_->requires_grad = any;
  if (any) {
    node_->parents = std::move(parents);
    node_->backward_fn = std::move(backward_fn);
  }
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->values.size(); }
std::size_t Tensor::size(int axis) const {
  return node_->shape[normalize_axis(axis, node_->shape.size())];
}

std::span<const double> Tensor::values() const { return node_->values; }
std::span<double> Tensor::mutable_values() { return node_->values; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->values[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != dim()) throw ShapeError("index rank mismatch");
  std::size_t flat = 0;
  std::size_t d = 0;
  for (std::size_t i : index) {
    if (i >= shape()[d]) throw ShapeError("index out of range");
    flat = flat * shape()[d] + i;
    ++d;
  }
  return node_->values[flat];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->parents.empty(); }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  return Tensor::from(shape(), node_->values, false);
}

void Tensor::backward() const {
  if (size() != 1) {
    throw ShapeError("backward() needs a scalar, got shape " + to_string(shape()));
  }
  if (!requires_grad()) return;

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].node().get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients are allocated lazily as they receive contributions.
  for (Node* n : order) {
    if (!n->parents.empty()) std::vector<double>().swap(n->grad);
  }
  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    // Interior gradients are not observable after the sweep; release them
    // early to bound peak memory on large graphs.
    if (n != node_.get() && !n->parents.empty()) std::vector<double>().swap(n->grad);
  }
}

// ------------------------------------------------------------ elementwise

Tensor apply_elementwise(ElementwiseOp op, const Tensor& x) {
  const auto xv = x.values();
  const std::size_t n = xv.size();
  std::vector<double> out(n);
  switch (op) {
    case ElementwiseOp::exp:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(xv[i]);
      break;
    case ElementwiseOp::log:
      for (std::size_t i = 0; i < n; ++i) {
        if (xv[i] < 0) throw DomainError("log of negative value", 0);
        out[i] = std::log(xv[i]);
      }
      break;
    case ElementwiseOp::sigmoid:
      for (std::size_t i = 0; i < n; ++i) out[i] = sigmoid_value(xv[i]);
      break;
    case ElementwiseOp::relu:
      for (std::size_t i = 0; i < n; ++i) out[i] = xv[i] > 0 ? xv[i] : 0.0;
      break;
    case ElementwiseOp::softplus:
      for (std::size_t i = 0; i < n; ++i) out[i] = softplus_value(xv[i]);
      break;
    case ElementwiseOp::atan:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::atan(xv[i]);
      break;
    case ElementwiseOp::square:
      for (std::size_t i = 0; i < n; ++i) out[i] = xv[i] * xv[i];
      break;
    case ElementwiseOp::sqrt:
      for (std::size_t i = 0; i < n; ++i) {
        if (xv[i] < 0) throw DomainError("sqrt of negative value", 0);
        out[i] = std::sqrt(xv[i]);
      }
      break;
    case ElementwiseOp::negate:
      for (std::size_t i = 0; i < n; ++i) out[i] = -xv[i];
      break;
    default:
      throw ShapeError("binary elementwise op called with one operand");
  }

  return Tensor(x.shape(), std::move(out), {x}, [op, x](const Node& self) {
    auto& gx = x.node()->grad_buffer();
    const auto& g = self.grad;
    const auto& y = self.values;
    const auto& xv = x.node()->values;
    const std::size_t n = g.size();
    switch (op) {
      case ElementwiseOp::exp:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * y[i];
        break;
      case ElementwiseOp::log:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] / xv[i];
        break;
      case ElementwiseOp::sigmoid:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
        break;
      case ElementwiseOp::relu:
        for (std::size_t i = 0; i < n; ++i) gx[i] += xv[i] > 0 ? g[i] : 0.0;
        break;
      case ElementwiseOp::softplus:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * sigmoid_value(xv[i]);
        break;
      case ElementwiseOp::atan:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] / (1.0 + xv[i] * xv[i]);
        break;
      case ElementwiseOp::square:
        for (std::size_t i = 0; i < n; ++i) gx[i] += 2.0 * g[i] * xv[i];
        break;
      case ElementwiseOp::sqrt:
        for (std::size_t i = 0; i < n; ++i) gx[i] += 0.5 * g[i] / y[i];
        break;
      case ElementwiseOp::negate:
        for (std::size_t i = 0; i < n; ++i) gx[i] -= g[i];
        break;
      default:
        break;
    }
  });
}

Tensor apply_elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  auto map_a = broadcast_map(a.shape(), out_shape);
  auto map_b = broadcast_map(b.shape(), out_shape);
  const auto av = a.values();
  const auto bv = b.values();
  const std::size_t n = numel(out_shape);
  std::vector<double> out(n);
  switch (op) {
    case ElementwiseOp::add:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[src(map_a, i)] + bv[src(map_b, i)];
      break;
    case ElementwiseOp::sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[src(map_a, i)] - bv[src(map_b, i)];
      break;
    case ElementwiseOp::mul:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[src(map_a, i)] * bv[src(map_b, i)];
      break;
    case ElementwiseOp::div:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[src(map_a, i)] / bv[src(map_b, i)];
      break;
    default:
      throw ShapeError("unary elementwise op called with two operands");
  }

  return Tensor(out_shape, std::move(out), {a, b},
                [op, a, b, map_a = std::move(map_a), map_b = std::move(map_b)](const Node& self) {
                  const auto& g = self.grad;
                  const auto& av = a.node()->values;
                  const auto& bv = b.node()->values;
                  const std::size_t n = g.size();
                  if (a.requires_grad()) {
                    auto& ga = a.node()->grad_buffer();
                    for (std::size_t i = 0; i < n; ++i) {
                      const std::size_t ia = src(map_a, i);
                      switch (op) {
                        case ElementwiseOp::add:
                        case ElementwiseOp::sub: ga[ia] += g[i]; break;
                        case ElementwiseOp::mul: ga[ia] += g[i] * bv[src(map_b, i)]; break;
                        case ElementwiseOp::div: ga[ia] += g[i] / bv[src(map_b, i)]; break;
                        default: break;
                      }
                    }
                  }
                  if (b.requires_grad()) {
                    auto& gb = b.node()->grad_buffer();
                    for (std::size_t i = 0; i < n; ++i) {
                      const std::size_t ib = src(map_b, i);
                      switch (op) {
                        case ElementwiseOp::add: gb[ib] += g[i]; break;
                        case ElementwiseOp::sub: gb[ib] -= g[i]; break;
                        case ElementwiseOp::mul: gb[ib] += g[i] * av[src(map_a, i)]; break;
                        case ElementwiseOp::div: {
                          const double bvi = bv[ib];
                          gb[ib] -= g[i] * av[src(map_a, i)] / (bvi * bvi);
                          break;
                        }
                        default: break;
                      }
                    }
                  }
                });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return apply_elementwise(ElementwiseOp::add, a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return apply_elementwise(ElementwiseOp::sub, a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return apply_elementwise(ElementwiseOp::mul, a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return apply_elementwise(ElementwiseOp::div, a, b); }
Tensor operator-(const Tensor& x) { return apply_elementwise(ElementwiseOp::negate, x); }
Tensor operator+(const Tensor& a, double b) { return a + constant(b); }
Tensor operator-(const Tensor& a, double b) { return a - constant(b); }
Tensor operator*(const Tensor& a, double b) { return a * constant(b); }
Tensor operator/(const Tensor& a, double b) { return a / constant(b); }
Tensor operator+(double a, const Tensor& b) { return constant(a) + b; }
Tensor operator-(double a, const Tensor& b) { return constant(a) - b; }
Tensor operator*(double a, const Tensor& b) { return constant(a) * b; }
Tensor operator/(double a, const Tensor& b) { return constant(a) / b; }

Tensor exp(const Tensor& x) { return apply_elementwise(ElementwiseOp::exp, x); }
Tensor log(const Tensor& x) { return apply_elementwise(ElementwiseOp::log, x); }
Tensor sigmoid(const Tensor& x) { return apply_elementwise(ElementwiseOp::sigmoid, x); }
Tensor relu(const Tensor& x) { return apply_elementwise(ElementwiseOp::relu, x); }
Tensor softplus(const Tensor& x) { return apply_elementwise(ElementwiseOp::softplus, x); }
Tensor atan(const Tensor& x) { return apply_elementwise(ElementwiseOp::atan, x); }
Tensor square(const Tensor& x) { return apply_elementwise(ElementwiseOp::square, x); }
Tensor sqrt(const Tensor& x) { return apply_elementwise(ElementwiseOp::sqrt, x); }

Tensor log_sigmoid(const Tensor& x) {
  return -softplus(-x);
}

// ---------------------------------------------------------------- products

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() < 2 || b.dim() < 2) throw ShapeError("matmul needs rank >= 2 operands");
  const std::size_t m = a.shape()[a.dim() - 2];
  const std::size_t k = a.shape()[a.dim() - 1];
  const std::size_t kb = b.shape()[b.dim() - 2];
  const std::size_t n = b.shape()[b.dim() - 1];
  if (k != kb) {
    throw ShapeError("matmul inner dimensions differ: " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  const bool shared_b = batch_b.empty();
  if (!shared_b && batch_a != batch_b) {
    throw ShapeError("matmul batch dimensions differ: " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  const std::size_t batches = numel(batch_a);
  Shape out_shape = batch_a;
  out_shape.push_back(m);
  out_shape.push_back(n);

  std::vector<double> out(batches * m * n);
  const double* ap = a.values().data();
  const double* bp = b.values().data();
  if (shared_b) {
    // Collapse the batch into rows.
    MutMap(out.data(), batches * m, n).noalias() =
        ConstMap(ap, batches * m, k) * ConstMap(bp, k, n);
  } else {
    for (std::size_t t = 0; t < batches; ++t) {
      MutMap(out.data() + t * m * n, m, n).noalias() =
          ConstMap(ap + t * m * k, m, k) * ConstMap(bp + t * k * n, k, n);
    }
  }

  return Tensor(std::move(out_shape), std::move(out), {a, b},
                [a, b, m, k, n, batches, shared_b](const Node& self) {
                  const double* g = self.grad.data();
                  const double* ap = a.node()->values.data();
                  const double* bp = b.node()->values.data();
                  if (a.requires_grad()) {
                    double* ga = a.node()->grad_buffer().data();
                    if (shared_b) {
                      MutMap(ga, batches * m, k).noalias() +=
                          ConstMap(g, batches * m, n) * ConstMap(bp, k, n).transpose();
                    } else {
                      for (std::size_t t = 0; t < batches; ++t) {
                        MutMap(ga + t * m * k, m, k).noalias() +=
                            ConstMap(g + t * m * n, m, n) *
                            ConstMap(bp + t * k * n, k, n).transpose();
                      }
                    }
                  }
                  if (b.requires_grad()) {
                    double* gb = b.node()->grad_buffer().data();
                    if (shared_b) {
                      MutMap(gb, k, n).noalias() +=
                          ConstMap(ap, batches * m, k).transpose() * ConstMap(g, batches * m, n);
                    } else {
                      for (std::size_t t = 0; t < batches; ++t) {
                        MutMap(gb + t * k * n, k, n).noalias() +=
                            ConstMap(ap + t * m * k, m, k).transpose() *
                            ConstMap(g + t * m * n, m, n);
                      }
                    }
                  }
                });
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b, bool relu) {
  if (x.dim() != 2 || w.dim() != 2 || b.dim() != 1) {
    throw ShapeError("dense expects x [n, k], w [k, m], b [m]");
  }
  const std::size_t n = x.shape()[0], k = x.shape()[1], m = w.shape()[1];
  if (w.shape()[0] != k || b.shape()[0] != m) {
    throw ShapeError("dense shapes differ: " + to_string(x.shape()) + " x " + to_string(w.shape()) +
                     " + " + to_string(b.shape()));
  }
  std::vector<double> out(n * m);
  MutMap o(out.data(), n, m);
  o.noalias() = ConstMap(x.values().data(), n, k) * ConstMap(w.values().data(), k, m);
  o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.values().data(), m);
  if (relu) o = o.cwiseMax(0.0);

  return Tensor({n, m}, std::move(out), {x, w, b}, [x, w, b, n, k, m, relu](const Node& self) {
    Eigen::MatrixXd g = ConstMap(self.grad.data(), n, m);
    if (relu) {
      const ConstMap y(self.values.data(), n, m);
      g = (y.array() > 0.0).select(g, 0.0);
    }
    if (x.requires_grad()) {
      MutMap(x.node()->grad_buffer().data(), n, k).noalias() +=
          g * ConstMap(w.node()->values.data(), k, m).transpose();
    }
    if (w.requires_grad()) {
      MutMap(w.node()->grad_buffer().data(), k, m).noalias() +=
          ConstMap(x.node()->values.data(), n, k).transpose() * g;
    }
    if (b.requires_grad()) {
      Eigen::Map<Eigen::RowVectorXd>(b.node()->grad_buffer().data(), m) += g.colwise().sum();
    }
  });
}

Tensor pairwise_distance(const Tensor& x, const Tensor& y) {
  if (x.dim() != 2 || y.dim() != 2 || x.shape()[1] != y.shape()[1]) {
    throw ShapeError("pairwise_distance needs [n,d] and [m,d], got " + to_string(x.shape()) +
                     " and " + to_string(y.shape()));
  }
  const std::size_t n = x.shape()[0];
  const std::size_t m = y.shape()[0];
  const std::size_t d = x.shape()[1];
  const auto xv = x.values();
  const auto yv = y.values();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = xv[i * d + c] - yv[j * d + c];
        s += diff * diff;
      }
      out[i * m + j] = std::sqrt(s);
    }
  }
  return Tensor({n, m}, std::move(out), {x, y}, [x, y, n, m, d](const Node& self) {
    const auto& xv = x.node()->values;
    const auto& yv = y.node()->values;
    std::vector<double>* gx = x.requires_grad() ? &x.node()->grad_buffer() : nullptr;
    std::vector<double>* gy = y.requires_grad() ? &y.node()->grad_buffer() : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const double dist = self.values[i * m + j];
        if (dist == 0.0) continue;
        const double scale = self.grad[i * m + j] / dist;
        for (std::size_t c = 0; c < d; ++c) {
          const double diff = (xv[i * d + c] - yv[j * d + c]) * scale;
          if (gx) (*gx)[i * d + c] += diff;
          if (gy) (*gy)[j * d + c] -= diff;
        }
      }
    }
  });
}

// -------------------------------------------------------------- reductions

Tensor reduce(ReduceOp op, const Tensor& x, int axis, bool keepdims) {
  const std::size_t ax = normalize_axis(axis, x.dim());
  const AxisSplit s = split_at(x.shape(), ax);
  if (s.len == 0) throw DomainError("reduction over empty axis", 0);
  Shape out_shape = x.shape();
  if (keepdims) {
    out_shape[ax] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  }
  const auto xv = x.values();
  const double len = static_cast<double>(s.len);
  std::vector<double> means(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i)
        means[o * s.inner + i] += xv[(o * s.len + l) * s.inner + i];

  std::vector<double> out(means.size());
  if (op == ReduceOp::sum) {
    out = means;
  } else {
    for (double& v : means) v /= len;
    if (op == ReduceOp::mean) {
      out = means;
    } else {
      std::fill(out.begin(), out.end(), 0.0);
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t l = 0; l < s.len; ++l)
          for (std::size_t i = 0; i < s.inner; ++i) {
            const double dv = xv[(o * s.len + l) * s.inner + i] - means[o * s.inner + i];
            out[o * s.inner + i] += dv * dv;
          }
      for (double& v : out) v /= len;
      if (op == ReduceOp::std) {
        for (double& v : out) v = std::sqrt(v);
      }
    }
  }

  return Tensor(std::move(out_shape), std::move(out), {x},
                [op, x, s, len, means = std::move(means)](const Node& self) {
                  auto& gx = x.node()->grad_buffer();
                  const auto& xv = x.node()->values;
                  for (std::size_t o = 0; o < s.outer; ++o) {
                    for (std::size_t i = 0; i < s.inner; ++i) {
                      const std::size_t r = o * s.inner + i;
                      const double g = self.grad[r];
                      double coef = 0.0;
                      switch (op) {
                        case ReduceOp::sum: coef = g; break;
                        case ReduceOp::mean: coef = g / len; break;
                        case ReduceOp::variance: coef = 2.0 * g / len; break;
                        case ReduceOp::std:
                          coef = self.values[r] > 0 ? g / (len * self.values[r]) : 0.0;
                          break;
                      }
                      for (std::size_t l = 0; l < s.len; ++l) {
                        const std::size_t idx = (o * s.len + l) * s.inner + i;
                        if (op == ReduceOp::sum || op == ReduceOp::mean) {
                          gx[idx] += coef;
                        } else {
                          gx[idx] += coef * (xv[idx] - means[r]);
                        }
                      }
                    }
                  }
                });
}

Tensor sum(const Tensor& x, int axis, bool keepdims) { return reduce(ReduceOp::sum, x, axis, keepdims); }
Tensor mean(const Tensor& x, int axis, bool keepdims) { return reduce(ReduceOp::mean, x, axis, keepdims); }
Tensor variance(const Tensor& x, int axis, bool keepdims) {
  return reduce(ReduceOp::variance, x, axis, keepdims);
}
Tensor stddev(const Tensor& x, int axis, bool keepdims) { return reduce(ReduceOp::std, x, axis, keepdims); }

Tensor sum_all(const Tensor& x) { return sum(reshape(x, {x.size()}), 0); }
Tensor mean_all(const Tensor& x) { return mean(reshape(x, {x.size()}), 0); }

Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.dim());
  const AxisSplit s = split_at(x.shape(), ax);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < s.len; ++l) mx = std::max(mx, xv[base + l * s.inner]);
      double z = 0;
      for (std::size_t l = 0; l < s.len; ++l) {
        const double e = std::exp(xv[base + l * s.inner] - mx);
        out[base + l * s.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] /= z;
    }
  }
  return Tensor(x.shape(), std::move(out), {x}, [x, s](const Node& self) {
    auto& gx = x.node()->grad_buffer();
    const auto& y = self.values;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.len * s.inner + i;
        double dot = 0;
        for (std::size_t l = 0; l < s.len; ++l) dot += g[base + l * s.inner] * y[base + l * s.inner];
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t idx = base + l * s.inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

// ----------------------------------------------------------- shape plumbing

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()), {x},
                [x](const Node& self) {
                  auto& gx = x.node()->grad_buffer();
                  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
                });
}

Tensor take(const Tensor& x, int axis, std::span<const std::size_t> indices) {
  const std::size_t ax = normalize_axis(axis, x.dim());
  const AxisSplit s = split_at(x.shape(), ax);
  for (std::size_t idx : indices) {
    if (idx >= s.len) throw ShapeError("take index " + std::to_string(idx) + " out of range");
  }
  const std::size_t k = indices.size();
  Shape out_shape = x.shape();
  out_shape[ax] = k;
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  const auto xv = x.values();
  std::vector<double> out(s.outer * k * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < k; ++j)
      std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * s.len + idx[j]) * s.inner),
                  s.inner, out.begin() + static_cast<std::ptrdiff_t>((o * k + j) * s.inner));
  return Tensor(std::move(out_shape), std::move(out), {x},
                [x, s, k, idx = std::move(idx)](const Node& self) {
                  auto& gx = x.node()->grad_buffer();
                  for (std::size_t o = 0; o < s.outer; ++o)
                    for (std::size_t j = 0; j < k; ++j)
                      for (std::size_t i = 0; i < s.inner; ++i)
                        gx[(o * s.len + idx[j]) * s.inner + i] += self.grad[(o * k + j) * s.inner + i];
                });
}

Tensor select(const Tensor& x, int axis, std::size_t index) {
  const std::size_t ax = normalize_axis(axis, x.dim());
  const std::size_t one[] = {index};
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(ax));
  return reshape(take(x, static_cast<int>(ax), one), std::move(shape));
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const std::size_t ax = normalize_axis(axis, parts[0].dim());
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const Tensor& p : parts) {
    Shape a = p.shape();
    Shape b = parts[0].shape();
    if (a.size() != b.size()) throw ShapeError("concat rank mismatch");
    a[ax] = b[ax] = 0;
    if (a != b) throw ShapeError("concat shape mismatch " + to_string(p.shape()));
    out_shape[ax] += p.shape()[ax];
  }
  const AxisSplit so = split_at(out_shape, ax);
  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.shape()[ax];
    const auto pv = p.values();
    for (std::size_t o = 0; o < so.outer; ++o)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * len * so.inner), len * so.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * so.len + off) * so.inner));
    off += len;
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return Tensor(std::move(out_shape), std::move(out), parents,
                [parents, offsets = std::move(offsets), so, ax](const Node& self) {
                  for (std::size_t pi = 0; pi < parents.size(); ++pi) {
                    const Tensor& p = parents[pi];
                    if (!p.requires_grad()) continue;
                    auto& gp = p.node()->grad_buffer();
                    const std::size_t len = p.shape()[ax];
                    for (std::size_t o = 0; o < so.outer; ++o)
                      for (std::size_t e = 0; e < len * so.inner; ++e)
                        gp[o * len * so.inner + e] +=
                            self.grad[(o * so.len + offsets[pi]) * so.inner + e];
                  }
                });
}

Tensor concat(std::initializer_list<Tensor> parts, int axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor unsqueeze(const Tensor& x, int axis) {
  Shape shape = x.shape();
  const int r = static_cast<int>(shape.size()) + 1;
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("unsqueeze axis out of range");
  shape.insert(shape.begin() + a, 1);
  return reshape(x, std::move(shape));
}

// ------------------------------------------------------------------ sorting

SortResult sort_with_gradient(const Tensor& x) {
  if (x.dim() < 1) throw ShapeError("sort needs rank >= 1");
  const std::size_t n = x.shape().back();
  const std::size_t rows = n == 0 ? 0 : x.size() / n;
  const auto xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (std::isnan(xv[i])) throw DomainError("NaN in sort input", 0);
  }
  std::vector<std::size_t> perm(x.size());
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    auto first = perm.begin() + static_cast<std::ptrdiff_t>(r * n);
    std::iota(first, first + static_cast<std::ptrdiff_t>(n), std::size_t{0});
    const double* row = xv.data() + r * n;
    std::stable_sort(first, first + static_cast<std::ptrdiff_t>(n),
                     [row](std::size_t a, std::size_t b) { return row[a] < row[b]; });
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] = row[perm[r * n + i]];
  }
  Tensor sorted(x.shape(), std::move(out), {x}, [x, perm, n, rows](const Node& self) {
    auto& gx = x.node()->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < n; ++i) gx[r * n + perm[r * n + i]] += self.grad[r * n + i];
  });
  return {std::move(sorted), std::move(perm)};
}

}  // namespace elicit::ad
