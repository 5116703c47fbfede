#pragma once

// Minimal reverse-mode automatic differentiation over dense float64 arrays.
//
// A Tensor is a cheap handle onto a graph node. Operations on tensors that
// require gradients record their inputs and a local backward rule; calling
// backward() on a scalar result walks the recorded graph once in reverse
// topological order and accumulates into the grad buffers of every leaf that
// requires gradients.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace elicit::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);
// Trailing-dimension broadcast; throws ShapeError when incompatible.
Shape broadcast_shapes(const Shape& a, const Shape& b);

struct Node;

class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size() const;
  // Size along axis; negative axes count from the back.
  std::size_t size(int axis) const;

  std::span<const double> values() const;
  // Direct write access; only meaningful for leaves (optimizer updates).
  std::span<double> mutable_values();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Runs reverse-mode accumulation from this scalar. Leaf gradients
  // accumulate across calls; interior gradients are recomputed per call.
  void backward() const;

  // Same values, cut from the graph.
  Tensor detach() const;

  // Internal: construct an op result.
  Tensor(Shape shape, std::vector<double> values,
         std::vector<Tensor> parents,
         std::function<void(const Node& self)> backward_fn);

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<Tensor> parents;
  std::function<void(const Node& self)> backward_fn;

  // Adds g into this node's grad, allocating on first use.
  void accumulate(std::size_t i, double g);
  std::vector<double>& grad_buffer();
};

// ---------------------------------------------------------------- elementwise

enum class ElementwiseOp {
  add, sub, mul, div,
  exp, log, sigmoid, relu, softplus, atan, square, sqrt, negate,
};

// Unary ops take one input, binary ops (add..div) take two with broadcasting.
Tensor apply_elementwise(ElementwiseOp op, const Tensor& x);
Tensor apply_elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& x);
Tensor operator+(const Tensor& a, double b);
Tensor operator-(const Tensor& a, double b);
Tensor operator*(const Tensor& a, double b);
Tensor operator/(const Tensor& a, double b);
Tensor operator+(double a, const Tensor& b);
Tensor operator-(double a, const Tensor& b);
Tensor operator*(double a, const Tensor& b);
Tensor operator/(double a, const Tensor& b);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor atan(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);

// log(sigmoid(x)) computed without overflow.
Tensor log_sigmoid(const Tensor& x);

// ------------------------------------------------------------------ products

// a: [..., m, k], b: [k, n] or [..., k, n] with identical leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);

// Fused dense layer x [n, k] * w [k, m] + b [m], optionally followed by ReLU.
// Keeps one [n, m] buffer instead of three.
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b, bool relu);

// Euclidean distances between rows: x [n, d], y [m, d] -> [n, m]. The
// subgradient at coincident rows is zero.
Tensor pairwise_distance(const Tensor& x, const Tensor& y);

// ---------------------------------------------------------------- reductions

enum class ReduceOp { sum, mean, variance, std };

// variance and std use the population (divide-by-N) convention.
Tensor reduce(ReduceOp op, const Tensor& x, int axis, bool keepdims = false);
Tensor sum(const Tensor& x, int axis, bool keepdims = false);
Tensor mean(const Tensor& x, int axis, bool keepdims = false);
Tensor variance(const Tensor& x, int axis, bool keepdims = false);
Tensor stddev(const Tensor& x, int axis, bool keepdims = false);
// Sum of every element to a scalar.
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

Tensor softmax(const Tensor& x, int axis = -1);

// ----------------------------------------------------------- shape plumbing

Tensor reshape(const Tensor& x, Shape shape);
// Gathers `indices` along axis; the axis keeps its rank with length |indices|.
Tensor take(const Tensor& x, int axis, std::span<const std::size_t> indices);
// Single index along axis, removing the axis.
Tensor select(const Tensor& x, int axis, std::size_t index);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat(std::initializer_list<Tensor> parts, int axis);
// Inserts a length-1 axis.
Tensor unsqueeze(const Tensor& x, int axis);

// -------------------------------------------------------------------- sorting

struct SortResult {
  Tensor sorted;
  // Per row of the last axis: sorted[i] = x[permutation[i]].
  std::vector<std::size_t> permutation;
};

// Ascending sort along the last axis; ties keep their original order. The
// backward pass routes gradients through the frozen permutation.
SortResult sort_with_gradient(const Tensor& x);

}  // namespace elicit::ad
