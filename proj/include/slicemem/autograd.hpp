#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "slicemem/tensor.hpp"

namespace slicemem {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t numel() const { return value().numel(); }
  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// What a backward rule sees: the upstream gradient, the forward output and
/// inputs, and one gradient buffer per input (nullptr when the input does
/// not need a gradient).
struct BackwardCtx {
  std::span<const double> grad_out;
  const Tensor& out;
  std::vector<const Tensor*> inputs;
  std::vector<double*> input_grads;
};

using BackwardFn = std::function<void(const BackwardCtx&)>;

/// Reverse-mode tape. Nodes are stored in creation order, which is a valid
/// topological order because every op consumes only existing nodes.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Input that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf bound to an external tensor. When `param.requires_grad()`,
  /// backward() adds the leaf gradient into `param.grad()`.
  Var leaf(Tensor& param);

  Var record(std::string op, std::vector<Var> inputs, Tensor value, BackwardFn backward);

  /// Propagates d(loss)/d(node) to every node reachable from `loss` and
  /// accumulates into bound parameter tensors. Node-level gradients are
  /// recomputed on each call; parameter gradients add up across calls.
  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  /// Node gradient from the last backward(); empty if none reached it.
  std::span<const double> grad(Var v) const { return nodes_.at(v.id()).grad; }
  bool needs_grad(Var v) const { return nodes_.at(v.id()).needs_grad; }
  const std::string& op_name(Var v) const { return nodes_.at(v.id()).op; }
  std::size_t size() const noexcept { return nodes_.size(); }
  /// Count of nodes whose backward rule ran during the last backward().
  std::size_t visited_last_backward() const noexcept { return visited_; }

 private:
  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor value;
    std::vector<double> grad;
    Tensor* bound = nullptr;
    bool needs_grad = false;
    BackwardFn backward;
  };

  // deque keeps value references stable while the tape grows.
  std::deque<Node> nodes_;
  std::size_t visited_ = 0;
};

// ---------------------------------------------------------------------------
// Fixed differentiable op set. Shapes are checked eagerly; mismatches raise
// DimensionError naming both shapes.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
/// a * s where s holds one element.
Var mul_scalar(Var a, Var s);
/// a[n x d] + b[d] row-wise.
Var add_row(Var a, Var b);
/// a[n x d] * b[d] row-wise.
Var mul_row(Var a, Var b);

Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Shape shape);

Var exp(Var a);
Var log(Var a);
Var sigmoid(Var a);
Var gelu(Var a);
Var square(Var a);
/// Clamp with zero gradient outside [lo, hi].
Var clamp(Var a, double lo, double hi);

Var sum(Var a);
Var mean(Var a);
/// Mean over rows of a[n x d], giving [d].
Var mean_rows(Var a);

/// Softmax of a 1-D tensor with max subtraction. Throws DomainError on empty input.
Var softmax(Var v);
Var softmax_rows(Var a);
/// Parameter-free normalization of each row to zero mean / unit variance.
Var layer_norm_rows(Var a, double eps = 1e-5);

/// Cosine similarity of two equal-length vectors. If either norm is at most
/// 1e-12 the result is the constant 0 (no gradient) and `*degenerate` is set.
Var cosine_sim(Var u, Var v, bool* degenerate = nullptr);

/// Concatenate along axis 0 (1-D or 2-D inputs with matching trailing extent).
Var concat(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var a, std::size_t start, std::size_t len);
/// Element i of a as a [1] tensor.
Var index(Var a, std::size_t i);
/// out[k] = a[source[k]] reshaped to `shape`; gradient scatter-adds.
Var gather(Var a, std::vector<std::size_t> source, Shape shape);

// ---------------------------------------------------------------------------
// Detached helpers on plain tensors.

constexpr double kNormEpsilon = 1e-12;

double cosine_similarity(std::span<const double> u, std::span<const double> v,
                         bool* degenerate = nullptr);
Tensor softmax(const Tensor& v);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

}  // namespace slicemem
