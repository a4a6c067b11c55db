#include "slicemem/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "slicemem/errors.hpp"

namespace slicemem {

const Tensor& Var::value() const { return graph_->value(id_); }

Var Graph::constant(Tensor value) {
  Node node;
  node.op = "constant";
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::leaf(Tensor& param) {
  Node node;
  node.op = "leaf";
  node.value = Tensor(param.shape(), std::vector<double>(param.data().begin(), param.data().end()));
  node.bound = &param;
  node.needs_grad = param.requires_grad();
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(std::string op, std::vector<Var> inputs, Tensor value, BackwardFn backward) {
  Node node;
  node.op = std::move(op);
  node.value = std::move(value);
  node.backward = std::move(backward);
  for (const Var& in : inputs) {
    if (in.graph_ != this) {
      throw ContractError("op '" + node.op + "' mixes nodes from different graphs");
    }
    node.inputs.push_back(in.id_);
    node.needs_grad = node.needs_grad || nodes_[in.id_].needs_grad;
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Graph::backward(Var loss) {
  if (loss.graph_ != this) throw ContractError("backward() on a node from another graph");
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  }
  for (auto& n : nodes_) n.grad.clear();
  nodes_[loss.id_].grad.assign(1, 1.0);
  visited_ = 0;

  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.grad.empty() || !node.needs_grad) continue;
    ++visited_;
    if (node.backward) {
      BackwardCtx ctx{node.grad, node.value, {}, {}};
      ctx.inputs.reserve(node.inputs.size());
      ctx.input_grads.reserve(node.inputs.size());
      for (std::size_t in : node.inputs) {
        Node& src = nodes_[in];
        ctx.inputs.push_back(&src.value);
        if (src.needs_grad) {
          if (src.grad.empty()) src.grad.assign(src.value.numel(), 0.0);
          ctx.input_grads.push_back(src.grad.data());
        } else {
          ctx.input_grads.push_back(nullptr);
        }
      }
      node.backward(ctx);
    }
    if (node.bound != nullptr && node.bound->requires_grad()) {
      auto dst = node.bound->grad();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += node.grad[i];
    }
  }
}

namespace {

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const char* op, Var a, std::size_t rank) {
  if (a.value().rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
  }
}

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a[p * m + i];
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename Fwd, typename Deriv>
Var unary(const char* op, Var a, Fwd fwd, Deriv deriv) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = fwd(x[i]);
  return a.graph().record(op, {a}, std::move(out), [deriv](const BackwardCtx& c) {
    if (!c.input_grads[0]) return;
    const Tensor& x = *c.inputs[0];
    for (std::size_t i = 0; i < x.numel(); ++i) {
      c.input_grads[0][i] += c.grad_out[i] * deriv(x[i], c.out[i]);
    }
  });
}

void softmax_inplace(std::span<double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double total = 0.0;
  for (auto& x : v) {
    x = std::exp(x - mx);
    total += x;
  }
  for (auto& x : v) x /= total;
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  return a.graph().record("add", {a, b}, std::move(out), [](const BackwardCtx& c) {
    for (double* g : c.input_grads) {
      if (!g) continue;
      for (std::size_t i = 0; i < c.grad_out.size(); ++i) g[i] += c.grad_out[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  return a.graph().record("sub", {a, b}, std::move(out), [](const BackwardCtx& c) {
    const std::size_t n = c.grad_out.size();
    if (double* g = c.input_grads[0]) {
      for (std::size_t i = 0; i < n; ++i) g[i] += c.grad_out[i];
    }
    if (double* g = c.input_grads[1]) {
      for (std::size_t i = 0; i < n; ++i) g[i] -= c.grad_out[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.graph().record("mul", {a, b}, std::move(out), [](const BackwardCtx& c) {
    const std::size_t n = c.grad_out.size();
    const Tensor& x = *c.inputs[0];
    const Tensor& y = *c.inputs[1];
    if (double* g = c.input_grads[0]) {
      for (std::size_t i = 0; i < n; ++i) g[i] += c.grad_out[i] * y[i];
    }
    if (double* g = c.input_grads[1]) {
      for (std::size_t i = 0; i < n; ++i) g[i] += c.grad_out[i] * x[i];
    }
  });
}

Var div(Var a, Var b) {
  require_same_shape("div", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    if (b.value()[i] == 0.0) throw DomainError("div: zero divisor");
    out[i] = a.value()[i] / b.value()[i];
  }
  return a.graph().record("div", {a, b}, std::move(out), [](const BackwardCtx& c) {
    const std::size_t n = c.grad_out.size();
    const Tensor& y = *c.inputs[1];
    if (double* g = c.input_grads[0]) {
      for (std::size_t i = 0; i < n; ++i) g[i] += c.grad_out[i] / y[i];
    }
    if (double* g = c.input_grads[1]) {
      for (std::size_t i = 0; i < n; ++i) g[i] -= c.grad_out[i] * c.out[i] / y[i];
    }
  });
}

Var scale(Var a, double k) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * k;
  return a.graph().record("scale", {a}, std::move(out), [k](const BackwardCtx& c) {
    if (double* g = c.input_grads[0]) {
      for (std::size_t i = 0; i < c.grad_out.size(); ++i) g[i] += c.grad_out[i] * k;
    }
  });
}

Var add_scalar(Var a, double k) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + k;
  return a.graph().record("add_scalar", {a}, std::move(out), [](const BackwardCtx& c) {
    if (double* g = c.input_grads[0]) {
      for (std::size_t i = 0; i < c.grad_out.size(); ++i) g[i] += c.grad_out[i];
    }
  });
}

Var mul_scalar(Var a, Var s) {
  if (s.numel() != 1) {
    throw DimensionError("mul_scalar: scale must hold one element, got " + shape_str(s.shape()));
  }
  const double k = s.value()[0];
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * k;
  return a.graph().record("mul_scalar", {a, s}, std::move(out), [](const BackwardCtx& c) {
    const Tensor& x = *c.inputs[0];
    const double k = (*c.inputs[1])[0];
    if (double* g = c.input_grads[0]) {
      for (std::size_t i = 0; i < c.grad_out.size(); ++i) g[i] += c.grad_out[i] * k;
    }
    if (double* g = c.input_grads[1]) {
      double acc = 0.0;
      for (std::size_t i = 0; i < c.grad_out.size(); ++i) acc += c.grad_out[i] * x[i];
      g[0] += acc;
    }
  });
}

namespace {

void require_row_operand(const char* op, Var a, Var b) {
  require_rank(op, a, 2);
  if (b.value().rank() != 1 || b.shape()[0] != a.shape()[1]) {
    throw DimensionError(std::string(op) + ": row operand " + shape_str(b.shape()) +
                         " does not match " + shape_str(a.shape()));
  }
}

}  // namespace

Var add_row(Var a, Var b) {
  require_row_operand("add_row", a, b);
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  Tensor out(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) out.at(r, j) = a.value().at(r, j) + b.value()[j];
  }
  return a.graph().record("add_row", {a, b}, std::move(out), [rows, cols](const BackwardCtx& c) {
    if (double* g = c.input_grads[0]) {
      for (std::size_t i = 0; i < rows * cols; ++i) g[i] += c.grad_out[i];
    }
    if (double* g = c.input_grads[1]) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < cols; ++j) g[j] += c.grad_out[r * cols + j];
      }
    }
  });
}

Var mul_row(Var a, Var b) {
  require_row_operand("mul_row", a, b);
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  Tensor out(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) out.at(r, j) = a.value().at(r, j) * b.value()[j];
  }
  return a.graph().record("mul_row", {a, b}, std::move(out), [rows, cols](const BackwardCtx& c) {
    const Tensor& x = *c.inputs[0];
    const Tensor& w = *c.inputs[1];
    if (double* g = c.input_grads[0]) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += c.grad_out[r * cols + j] * w[j];
      }
    }
    if (double* g = c.input_grads[1]) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < cols; ++j) g[j] += c.grad_out[r * cols + j] * x[r * cols + j];
      }
    }
  });
}

Var matmul(Var a, Var b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner extents differ for " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Tensor out({m, n});
  gemm_nn(m, k, n, a.value().data().data(), b.value().data().data(), out.data().data());
  return a.graph().record("matmul", {a, b}, std::move(out), [m, k, n](const BackwardCtx& c) {
    const double* go = c.grad_out.data();
    if (double* g = c.input_grads[0]) gemm_nt(m, n, k, go, c.inputs[1]->data().data(), g);
    if (double* g = c.input_grads[1]) gemm_tn(k, m, n, c.inputs[0]->data().data(), go, g);
  });
}

Var transpose(Var a) {
  require_rank("transpose", a, 2);
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  Tensor out = transpose(a.value());
  return a.graph().record("transpose", {a}, std::move(out), [rows, cols](const BackwardCtx& c) {
    if (double* g = c.input_grads[0]) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += c.grad_out[j * rows + r];
      }
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.graph().record("reshape", {a}, std::move(out), [](const BackwardCtx& c) {
    if (double* g = c.input_grads[0]) {
      for (std::size_t i = 0; i < c.grad_out.size(); ++i) g[i] += c.grad_out[i];
    }
  });
}

Var exp(Var a) {
  return unary("exp", a, [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Var log(Var a) {
  for (double x : a.value().data()) {
    if (!(x > 0.0)) throw DomainError("log: non-positive input " + std::to_string(x));
  }
  return unary("log", a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var gelu(Var a) {
  // tanh approximation
  static constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double kA = 0.044715;
  return unary(
      "gelu", a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x))); },
      [](double x, double) {
        const double t = std::tanh(kC * (x + kA * x * x * x));
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * x * x);
      });
}

Var square(Var a) {
  return unary("square", a, [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

Var clamp(Var a, double lo, double hi) {
  return unary("clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var sum(Var a) {
  double total = 0.0;
  for (double x : a.value().data()) total += x;
  return a.graph().record("sum", {a}, Tensor::scalar(total), [](const BackwardCtx& c) {
    if (double* g = c.input_grads[0]) {
      for (std::size_t i = 0; i < c.inputs[0]->numel(); ++i) g[i] += c.grad_out[0];
    }
  });
}

Var mean(Var a) {
  if (a.numel() == 0) throw DomainError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Var mean_rows(Var a) {
  require_rank("mean_rows", a, 2);
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  if (rows == 0) throw DomainError("mean_rows of empty tensor");
  Tensor out({cols});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) out[j] += a.value().at(r, j);
  }
  const double inv = 1.0 / static_cast<double>(rows);
  for (auto& v : out.data()) v *= inv;
  return a.graph().record("mean_rows", {a}, std::move(out),
                          [rows, cols, inv](const BackwardCtx& c) {
                            if (double* g = c.input_grads[0]) {
                              for (std::size_t r = 0; r < rows; ++r) {
                                for (std::size_t j = 0; j < cols; ++j) {
                                  g[r * cols + j] += c.grad_out[j] * inv;
                                }
                              }
                            }
                          });
}

Var softmax(Var v) {
  require_rank("softmax", v, 1);
  Tensor out = softmax(v.value());
  return v.graph().record("softmax", {v}, std::move(out), [](const BackwardCtx& c) {
    double* g = c.input_grads[0];
    if (!g) return;
    double dot = 0.0;
    for (std::size_t i = 0; i < c.out.numel(); ++i) dot += c.grad_out[i] * c.out[i];
    for (std::size_t i = 0; i < c.out.numel(); ++i) g[i] += c.out[i] * (c.grad_out[i] - dot);
  });
}

Var softmax_rows(Var a) {
  require_rank("softmax_rows", a, 2);
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  if (cols == 0) throw DomainError("softmax_rows: empty rows");
  Tensor out = a.value();
  for (std::size_t r = 0; r < rows; ++r) softmax_inplace(out.data().subspan(r * cols, cols));
  return a.graph().record("softmax_rows", {a}, std::move(out), [rows, cols](const BackwardCtx& c) {
    double* g = c.input_grads[0];
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += c.grad_out[base + j] * c.out[base + j];
      for (std::size_t j = 0; j < cols; ++j) {
        g[base + j] += c.out[base + j] * (c.grad_out[base + j] - dot);
      }
    }
  });
}

Var layer_norm_rows(Var a, double eps) {
  require_rank("layer_norm_rows", a, 2);
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  Tensor out(a.shape());
  std::vector<double> rstd(rows);
  const Tensor& x = a.value();
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mu += x.at(r, j);
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (x.at(r, j) - mu) * (x.at(r, j) - mu);
    var /= static_cast<double>(cols);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < cols; ++j) out.at(r, j) = (x.at(r, j) - mu) * rstd[r];
  }
  return a.graph().record(
      "layer_norm_rows", {a}, std::move(out),
      [rows, cols, rstd = std::move(rstd)](const BackwardCtx& c) {
        double* g = c.input_grads[0];
        if (!g) return;
        const double inv_n = 1.0 / static_cast<double>(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t base = r * cols;
          double mean_g = 0.0, mean_gx = 0.0;
          for (std::size_t j = 0; j < cols; ++j) {
            mean_g += c.grad_out[base + j];
            mean_gx += c.grad_out[base + j] * c.out[base + j];
          }
          mean_g *= inv_n;
          mean_gx *= inv_n;
          for (std::size_t j = 0; j < cols; ++j) {
            g[base + j] += rstd[r] * (c.grad_out[base + j] - mean_g - c.out[base + j] * mean_gx);
          }
        }
      });
}

Var cosine_sim(Var u, Var v, bool* degenerate) {
  require_rank("cosine_sim", u, 1);
  require_same_shape("cosine_sim", u, v);
  bool bad = false;
  const double s = cosine_similarity(u.value().data(), v.value().data(), &bad);
  if (degenerate) *degenerate = bad;
  if (bad) return u.graph().constant(Tensor::scalar(0.0));
  return u.graph().record("cosine_sim", {u, v}, Tensor::scalar(s), [](const BackwardCtx& c) {
    const Tensor& x = *c.inputs[0];
    const Tensor& y = *c.inputs[1];
    double nx = 0.0, ny = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      nx += x[i] * x[i];
      ny += y[i] * y[i];
    }
    nx = std::sqrt(nx);
    ny = std::sqrt(ny);
    const double cs = c.out[0];
    const double go = c.grad_out[0];
    if (double* g = c.input_grads[0]) {
      for (std::size_t i = 0; i < x.numel(); ++i) {
        g[i] += go * (y[i] / (nx * ny) - cs * x[i] / (nx * nx));
      }
    }
    if (double* g = c.input_grads[1]) {
      for (std::size_t i = 0; i < y.numel(); ++i) {
        g[i] += go * (x[i] / (nx * ny) - cs * y[i] / (ny * ny));
      }
    }
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const std::size_t rank = parts[0].value().rank();
  if (rank != 1 && rank != 2) throw DimensionError("concat: rank must be 1 or 2");
  std::size_t rows = 0;
  std::vector<double> data;
  for (const Var& p : parts) {
    if (p.value().rank() != rank || (rank == 2 && p.shape()[1] != parts[0].shape()[1])) {
      throw DimensionError("concat: " + shape_str(p.shape()) + " incompatible with " +
                           shape_str(parts[0].shape()));
    }
    rows += p.shape()[0];
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  }
  Shape shape = rank == 1 ? Shape{rows} : Shape{rows, parts[0].shape()[1]};
  return parts[0].graph().record("concat", parts, Tensor(std::move(shape), std::move(data)),
                                 [](const BackwardCtx& c) {
                                   std::size_t offset = 0;
                                   for (std::size_t k = 0; k < c.inputs.size(); ++k) {
                                     const std::size_t n = c.inputs[k]->numel();
                                     if (double* g = c.input_grads[k]) {
                                       for (std::size_t i = 0; i < n; ++i) {
                                         g[i] += c.grad_out[offset + i];
                                       }
                                     }
                                     offset += n;
                                   }
                                 });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts[0].shape().at(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_rank("concat_cols", p, 2);
    if (p.shape()[0] != rows) {
      throw DimensionError("concat_cols: " + shape_str(p.shape()) + " incompatible with " +
                           shape_str(parts[0].shape()));
    }
    widths.push_back(p.shape()[1]);
    total += p.shape()[1];
  }
  Tensor out({rows, total});
  std::size_t col = 0;
  for (const Var& p : parts) {
    const std::size_t w = p.shape()[1];
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < w; ++j) out.at(r, col + j) = p.value().at(r, j);
    }
    col += w;
  }
  return parts[0].graph().record(
      "concat_cols", parts, std::move(out),
      [rows, total, widths = std::move(widths)](const BackwardCtx& c) {
        std::size_t col = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          if (double* g = c.input_grads[k]) {
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t j = 0; j < widths[k]; ++j) {
                g[r * widths[k] + j] += c.grad_out[r * total + col + j];
              }
            }
          }
          col += widths[k];
        }
      });
}

Var slice_cols(Var a, std::size_t start, std::size_t len) {
  require_rank("slice_cols", a, 2);
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  if (start + len > cols) {
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") outside " + shape_str(a.shape()));
  }
  Tensor out({rows, len});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < len; ++j) out.at(r, j) = a.value().at(r, start + j);
  }
  return a.graph().record("slice_cols", {a}, std::move(out),
                          [rows, cols, start, len](const BackwardCtx& c) {
                            if (double* g = c.input_grads[0]) {
                              for (std::size_t r = 0; r < rows; ++r) {
                                for (std::size_t j = 0; j < len; ++j) {
                                  g[r * cols + start + j] += c.grad_out[r * len + j];
                                }
                              }
                            }
                          });
}

Var index(Var a, std::size_t i) {
  if (i >= a.numel()) {
    throw DimensionError("index " + std::to_string(i) + " outside " + shape_str(a.shape()));
  }
  return a.graph().record("index", {a}, Tensor::scalar(a.value()[i]), [i](const BackwardCtx& c) {
    if (double* g = c.input_grads[0]) g[i] += c.grad_out[0];
  });
}

Var gather(Var a, std::vector<std::size_t> source, Shape shape) {
  if (shape_numel(shape) != source.size()) {
    throw DimensionError("gather: " + std::to_string(source.size()) + " indices for shape " +
                         shape_str(shape));
  }
  Tensor out(std::move(shape));
  for (std::size_t k = 0; k < source.size(); ++k) {
    if (source[k] >= a.numel()) throw DimensionError("gather: index out of range");
    out[k] = a.value()[source[k]];
  }
  return a.graph().record("gather", {a}, std::move(out),
                          [source = std::move(source)](const BackwardCtx& c) {
                            if (double* g = c.input_grads[0]) {
                              for (std::size_t k = 0; k < source.size(); ++k) {
                                g[source[k]] += c.grad_out[k];
                              }
                            }
                          });
}

double cosine_similarity(std::span<const double> u, std::span<const double> v, bool* degenerate) {
  if (u.size() != v.size()) {
    throw DimensionError("cosine_similarity: lengths " + std::to_string(u.size()) + " vs " +
                         std::to_string(v.size()));
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  nu = std::sqrt(nu);
  nv = std::sqrt(nv);
  const bool bad = nu <= kNormEpsilon || nv <= kNormEpsilon;
  if (degenerate) *degenerate = bad;
  if (bad) return 0.0;
  return std::clamp(dot / (nu * nv), -1.0, 1.0);
}

Tensor softmax(const Tensor& v) {
  if (v.numel() == 0) throw DomainError("softmax of empty input");
  Tensor out = v;
  softmax_inplace(out.data());
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  Tensor out({a.shape()[0], b.shape()[1]});
  gemm_nn(a.shape()[0], a.shape()[1], b.shape()[1], a.data().data(), b.data().data(),
          out.data().data());
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_str(a.shape()));
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  Tensor out({cols, rows});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) out.at(j, r) = a.at(r, j);
  }
  return out;
}

}  // namespace slicemem
