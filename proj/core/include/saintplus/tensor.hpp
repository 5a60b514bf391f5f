#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "saintplus/rng.hpp"

namespace saintplus::tensor {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles with an optional, lazily allocated gradient.
///
/// Tensors are plain values. Parameters live as Tensors and are bound into a
/// Graph for each forward pass; the graph never aliases tensor storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t row, std::size_t col);
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on) noexcept { requires_grad_ = on; }

  bool has_grad() const noexcept { return !grad_.empty(); }
  /// Mutable gradient view; allocates a zero buffer on first use.
  std::span<double> grad();
  /// Empty when no gradient has been allocated.
  std::span<const double> grad() const noexcept { return grad_; }
  void zero_grad() noexcept;
  void clear_grad() noexcept { grad_.clear(); }

  friend bool operator==(const Tensor& a, const Tensor& b) noexcept {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
  bool requires_grad_ = false;
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while its graph lives.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return graph_ != nullptr; }
  Graph& graph() const noexcept { return *graph_; }
  std::uint32_t id() const noexcept { return id_; }

  const Shape& shape() const;
  std::size_t size() const;
  std::size_t dim(std::size_t axis) const;
  std::span<const double> value() const;
  /// Empty until backward() has propagated a gradient into this node.
  std::span<const double> grad() const;
  bool requires_grad() const;
  Tensor to_tensor() const;

 private:
  friend class Graph;
  Var(Graph* graph, std::uint32_t id) noexcept : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::uint32_t id_ = 0;
};

struct GraphOptions {
  /// Test hook: perturbs the matmul weight gradient so gradient checks must fail.
  bool corrupt_backward = false;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order; backward() walks them once in reverse.
class Graph {
 public:
  /// Receives the node's own output and the gradient flowing into it.
  using BackwardFn =
      std::function<void(Graph&, std::span<const double> out, std::span<const double> grad_out)>;

  explicit Graph(GraphOptions options = {}) : options_(options) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor t);
  Var constant(Shape shape, std::vector<double> values);
  /// Leaf that receives a gradient.
  Var variable(const Tensor& t);

  /// Populates gradients of every node reachable from a scalar loss.
  /// The graph is consumed: a second call is a contract error.
  void backward(Var loss);

  std::size_t node_count() const noexcept { return nodes_.size(); }
  const GraphOptions& options() const noexcept { return options_; }

  /// One byte per ReLU input element, in evaluation order: 1 if the input was
  /// strictly positive. Used to detect kink crossings in gradient checks.
  const std::vector<std::uint8_t>& relu_pattern() const noexcept { return relu_pattern_; }

  // Op-implementation surface.
  Var record(Shape shape, std::vector<double> value, bool requires_grad, BackwardFn backward);
  const Shape& shape_of(std::uint32_t id) const { return nodes_[id].shape; }
  std::span<const double> value_of(std::uint32_t id) const { return nodes_[id].value; }
  std::span<const double> grad_of(std::uint32_t id) const { return nodes_[id].grad; }
  bool requires_grad_of(std::uint32_t id) const { return nodes_[id].requires_grad; }
  /// Accumulation buffer for a node's gradient; allocated (zeroed) on demand.
  std::span<double> grad_buffer(std::uint32_t id);
  void append_relu_pattern(std::span<const double> inputs);

 private:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  GraphOptions options_;
  std::vector<Node> nodes_;
  std::vector<std::uint8_t> relu_pattern_;
  bool consumed_ = false;
};

enum class Mask { none, causal };

/// Additive stand-in for -infinity before the row softmax.
inline constexpr double kMaskValue = -1e9;

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// x[..., d] + bias[d], broadcast over leading dimensions.
Var add_bias(Var x, Var bias);
Var matmul(Var a, Var b);
/// a[m,k] * b[n,k]^T.
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Shape shape);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
/// Row-wise softmax; with Mask::causal entries above the diagonal are exactly 0.
Var masked_softmax(Var logits, Mask mask);
Var layer_norm(Var x, Var gamma, Var beta, double eps);
Var relu(Var x);
Var sigmoid(Var x);
/// Row gather; backward scatter-adds into the table gradient.
Var embedding(Var table, std::span<const std::int64_t> ids);
/// Row t is coeffs[t] * w. Produces a [n, d] matrix.
Var scaled_rows(std::span<const double> coeffs, Var w);
/// Inverted dropout; identity when rate == 0.
Var dropout(Var x, double rate, CounterRng& rng);
Var sum(Var a);
/// sum_t weight_t * BCE(prob_t, label_t) / normalizer, log arguments clamped at 1e-12.
Var weighted_bce(Var probs, std::span<const double> labels, std::span<const double> weights,
                 double normalizer);

double stable_sigmoid(double x) noexcept;

}  // namespace saintplus::tensor
