#include "saintplus/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>

#include <Eigen/Core>

#include "saintplus/errors.hpp"

namespace saintplus::tensor {

std::size_t element_count(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (element_count(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_string(shape_) + " holds " +
                         std::to_string(element_count(shape_)) + " elements, got " +
                         std::to_string(data_.size()));
  }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(values));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw DimensionError("axis out of range for " + shape_string(shape_));
  return shape_[axis];
}

double& Tensor::at(std::size_t row, std::size_t col) { return data_[row * shape_.at(1) + col]; }

double Tensor::at(std::size_t row, std::size_t col) const {
  return data_[row * shape_.at(1) + col];
}

std::span<double> Tensor::grad() {
  if (grad_.empty()) grad_.assign(data_.size(), 0.0);
  return grad_;
}

void Tensor::zero_grad() noexcept { std::fill(grad_.begin(), grad_.end(), 0.0); }

// ---------------------------------------------------------------------------
// Var

const Shape& Var::shape() const { return graph_->shape_of(id_); }
std::size_t Var::size() const { return graph_->value_of(id_).size(); }
std::size_t Var::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw DimensionError("axis out of range for " + shape_string(s));
  return s[axis];
}
std::span<const double> Var::value() const { return graph_->value_of(id_); }
std::span<const double> Var::grad() const { return graph_->grad_of(id_); }
bool Var::requires_grad() const { return graph_->requires_grad_of(id_); }
Tensor Var::to_tensor() const {
  const auto v = value();
  return Tensor(shape(), std::vector<double>(v.begin(), v.end()));
}

// ---------------------------------------------------------------------------
// Graph

Var Graph::record(Shape shape, std::vector<double> value, bool requires_grad, BackwardFn backward) {
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back(Node{std::move(shape), std::move(value), {}, requires_grad,
                        requires_grad ? std::move(backward) : BackwardFn{}});
  return Var(this, id);
}

Var Graph::constant(Tensor t) {
  const auto v = t.values();
  return record(t.shape(), std::vector<double>(v.begin(), v.end()), false, {});
}

Var Graph::constant(Shape shape, std::vector<double> values) {
  return constant(Tensor(std::move(shape), std::move(values)));
}

Var Graph::variable(const Tensor& t) {
  const auto v = t.values();
  return record(t.shape(), std::vector<double>(v.begin(), v.end()), true, {});
}

std::span<double> Graph::grad_buffer(std::uint32_t id) {
  auto& node = nodes_[id];
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

void Graph::append_relu_pattern(std::span<const double> inputs) {
  for (double x : inputs) relu_pattern_.push_back(x > 0.0 ? 1 : 0);
}

void Graph::backward(Var loss) {
  if (consumed_) throw ContractError("backward called twice on the same graph");
  if (loss.graph_ != this) throw ContractError("loss belongs to a different graph");
  if (nodes_[loss.id_].value.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_string(nodes_[loss.id_].shape));
  }
  consumed_ = true;
  if (!nodes_[loss.id_].requires_grad) return;
  grad_buffer(loss.id_)[0] = 1.0;
  for (std::uint32_t i = loss.id_ + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.backward || node.grad.empty()) continue;
    // The closure may grow other nodes' grad buffers but never this node's.
    node.backward(*this, node.value, node.grad);
  }
}

// ---------------------------------------------------------------------------
// Kernels

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k),
             N = static_cast<Eigen::Index>(n);
  MutMap(c, M, N).noalias() += ConstMap(a, M, K) * ConstMap(b, K, N);
}

// c[k,n] += a[m,k]^T * b[m,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k),
             N = static_cast<Eigen::Index>(n);
  MutMap(c, K, N).noalias() += ConstMap(a, M, K).transpose() * ConstMap(b, M, N);
}

// c[m,n] += a[m,k] * b[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k),
             N = static_cast<Eigen::Index>(n);
  MutMap(c, M, N).noalias() += ConstMap(a, M, K) * ConstMap(b, N, K).transpose();
}

std::vector<double> transposed(std::span<const double> a, std::size_t rows, std::size_t cols) {
  std::vector<double> t(a.size());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = a[i * cols + j];
  return t;
}

void require_same_graph(Var a, Var b) {
  if (&a.graph() != &b.graph()) throw ContractError("operands belong to different graphs");
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_matrix(const char* op, Var a) {
  if (a.shape().size() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
  }
}

void accumulate(std::span<double> dst, std::span<const double> src, double factor = 1.0) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += factor * src[i];
}

}  // namespace

double stable_sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
  require_same_graph(a, b);
  require_same_shape("add", a, b);
  const auto av = a.value();
  const auto bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.graph().record(a.shape(), std::move(out), a.requires_grad() || b.requires_grad(),
                          [ia, ib](Graph& g, std::span<const double>, std::span<const double> go) {
                            if (g.requires_grad_of(ia)) accumulate(g.grad_buffer(ia), go);
                            if (g.requires_grad_of(ib)) accumulate(g.grad_buffer(ib), go);
                          });
}

Var sub(Var a, Var b) {
  require_same_graph(a, b);
  require_same_shape("sub", a, b);
  const auto av = a.value();
  const auto bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.graph().record(a.shape(), std::move(out), a.requires_grad() || b.requires_grad(),
                          [ia, ib](Graph& g, std::span<const double>, std::span<const double> go) {
                            if (g.requires_grad_of(ia)) accumulate(g.grad_buffer(ia), go);
                            if (g.requires_grad_of(ib)) accumulate(g.grad_buffer(ib), go, -1.0);
                          });
}

Var mul(Var a, Var b) {
  require_same_graph(a, b);
  require_same_shape("mul", a, b);
  const auto av = a.value();
  const auto bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.graph().record(a.shape(), std::move(out), a.requires_grad() || b.requires_grad(),
                          [ia, ib](Graph& g, std::span<const double>, std::span<const double> go) {
                            const auto av = g.value_of(ia);
                            const auto bv = g.value_of(ib);
                            if (g.requires_grad_of(ia)) {
                              auto ga = g.grad_buffer(ia);
                              for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
                            }
                            if (g.requires_grad_of(ib)) {
                              auto gb = g.grad_buffer(ib);
                              for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
                            }
                          });
}

Var scale(Var a, double factor) {
  const auto av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  const auto ia = a.id();
  return a.graph().record(a.shape(), std::move(out), a.requires_grad(),
                          [ia, factor](Graph& g, std::span<const double>, std::span<const double> go) {
                            accumulate(g.grad_buffer(ia), go, factor);
                          });
}

Var add_bias(Var x, Var bias) {
  require_same_graph(x, bias);
  const auto& xs = x.shape();
  if (bias.shape().size() != 1 || xs.empty() || xs.back() != bias.shape()[0]) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) +
                         " does not match last dimension of " + shape_string(xs));
  }
  const std::size_t d = bias.shape()[0];
  const auto xv = x.value();
  const auto bv = bias.value();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + bv[i % d];
  const auto ix = x.id(), ib = bias.id();
  return x.graph().record(xs, std::move(out), x.requires_grad() || bias.requires_grad(),
                          [ix, ib, d](Graph& g, std::span<const double>, std::span<const double> go) {
                            if (g.requires_grad_of(ix)) accumulate(g.grad_buffer(ix), go);
                            if (g.requires_grad_of(ib)) {
                              auto gb = g.grad_buffer(ib);
                              for (std::size_t i = 0; i < go.size(); ++i) gb[i % d] += go[i];
                            }
                          });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
  require_same_graph(a, b);
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.value().data(), b.value().data(), out.data(), m, k, n);
  const auto ia = a.id(), ib = b.id();
  return a.graph().record(
      {m, n}, std::move(out), a.requires_grad() || b.requires_grad(),
      [ia, ib, m, k, n](Graph& g, std::span<const double>, std::span<const double> go) {
        if (g.requires_grad_of(ia)) {
          // dA = dC * B^T
          gemm_nt(go.data(), g.value_of(ib).data(), g.grad_buffer(ia).data(), m, n, k);
        }
        if (g.requires_grad_of(ib)) {
          // dB = A^T * dC
          auto gb = g.grad_buffer(ib);
          if (g.options().corrupt_backward) {
            std::vector<double> tmp(k * n, 0.0);
            gemm_tn(g.value_of(ia).data(), go.data(), tmp.data(), m, k, n);
            accumulate(gb, tmp, 1.1);
          } else {
            gemm_tn(g.value_of(ia).data(), go.data(), gb.data(), m, k, n);
          }
        }
      });
}

Var matmul_nt(Var a, Var b) {
  require_same_graph(a, b);
  require_matrix("matmul_nt", a);
  require_matrix("matmul_nt", b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: inner dimensions disagree: " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()) + "^T");
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nt(a.value().data(), b.value().data(), out.data(), m, k, n);
  const auto ia = a.id(), ib = b.id();
  return a.graph().record({m, n}, std::move(out), a.requires_grad() || b.requires_grad(),
                          [ia, ib, m, k, n](Graph& g, std::span<const double>, std::span<const double> go) {
                            // C = A B^T: dA = dC B, dB = dC^T A
                            if (g.requires_grad_of(ia)) {
                              gemm_nn(go.data(), g.value_of(ib).data(),
                                      g.grad_buffer(ia).data(), m, n, k);
                            }
                            if (g.requires_grad_of(ib)) {
                              gemm_tn(go.data(), g.value_of(ia).data(),
                                      g.grad_buffer(ib).data(), m, n, k);
                            }
                          });
}

Var transpose(Var a) {
  require_matrix("transpose", a);
  const std::size_t r = a.dim(0), c = a.dim(1);
  const auto ia = a.id();
  return a.graph().record({c, r}, transposed(a.value(), r, c), a.requires_grad(),
                          [ia, r, c](Graph& g, std::span<const double>, std::span<const double> go) {
                            accumulate(g.grad_buffer(ia), transposed(go, c, r));
                          });
}

Var reshape(Var a, Shape shape) {
  if (element_count(shape) != a.size()) {
    throw DimensionError("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  const auto v = a.value();
  const auto ia = a.id();
  return a.graph().record(std::move(shape), std::vector<double>(v.begin(), v.end()),
                          a.requires_grad(), [ia](Graph& g, std::span<const double>, std::span<const double> go) {
                            accumulate(g.grad_buffer(ia), go);
                          });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t rows = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::vector<std::uint32_t> ids;
  std::size_t total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    require_same_graph(parts[0], p);
    require_matrix("concat_cols", p);
    if (p.dim(0) != rows) {
      throw DimensionError("concat_cols: row count mismatch " + shape_string(parts[0].shape()) +
                           " vs " + shape_string(p.shape()));
    }
    widths.push_back(p.dim(1));
    ids.push_back(p.id());
    total += p.dim(1);
    rg = rg || p.requires_grad();
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * widths[k], widths[k], out.data() + r * total + offset);
    offset += widths[k];
  }
  return parts[0].graph().record(
      {rows, total}, std::move(out), rg,
      [ids, widths, rows, total](Graph& g, std::span<const double>, std::span<const double> go) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (g.requires_grad_of(ids[k])) {
            auto gk = g.grad_buffer(ids[k]);
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < widths[k]; ++c)
                gk[r * widths[k] + c] += go[r * total + off + c];
          }
          off += widths[k];
        }
      });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t cols = parts[0].dim(1);
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> sizes;
  std::size_t rows = 0;
  bool rg = false;
  for (const auto& p : parts) {
    require_same_graph(parts[0], p);
    require_matrix("concat_rows", p);
    if (p.dim(1) != cols) {
      throw DimensionError("concat_rows: column count mismatch " +
                           shape_string(parts[0].shape()) + " vs " + shape_string(p.shape()));
    }
    ids.push_back(p.id());
    sizes.push_back(p.size());
    rows += p.dim(0);
    rg = rg || p.requires_grad();
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const auto& p : parts) {
    const auto v = p.value();
    out.insert(out.end(), v.begin(), v.end());
  }
  return parts[0].graph().record({rows, cols}, std::move(out), rg,
                                 [ids, sizes](Graph& g, std::span<const double>, std::span<const double> go) {
                                   std::size_t off = 0;
                                   for (std::size_t k = 0; k < ids.size(); ++k) {
                                     if (g.requires_grad_of(ids[k]))
                                       accumulate(g.grad_buffer(ids[k]), go.subspan(off, sizes[k]));
                                     off += sizes[k];
                                   }
                                 });
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization

Var masked_softmax(Var logits, Mask mask) {
  require_matrix("masked_softmax", logits);
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  if (mask == Mask::causal && rows != cols) {
    throw DimensionError("masked_softmax: causal mask needs a square matrix, got " +
                         shape_string(logits.shape()));
  }
  const auto x = logits.value();
  std::vector<double> out(x.size());
  std::vector<double> row(cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xi = x.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j)
      row[j] = (mask == Mask::causal && j > i) ? xi[j] + kMaskValue : xi[j];
    const double mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      total += row[j];
    }
    double* oi = out.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j)
      oi[j] = (mask == Mask::causal && j > i) ? 0.0 : row[j] / total;
  }
  const auto il = logits.id();
  return logits.graph().record(
      logits.shape(), std::move(out), logits.requires_grad(),
      [il, rows, cols](Graph& g, std::span<const double> y, std::span<const double> go) {
        // dx_ij = y_ij * (g_ij - sum_k g_ik y_ik); masked entries have y == 0.
        auto gx = g.grad_buffer(il);
        for (std::size_t i = 0; i < rows; ++i) {
          const double* yi = y.data() + i * cols;
          const double* gi = go.data() + i * cols;
          double dot = 0.0;
          for (std::size_t j = 0; j < cols; ++j) dot += gi[j] * yi[j];
          double* xi = gx.data() + i * cols;
          for (std::size_t j = 0; j < cols; ++j) xi[j] += yi[j] * (gi[j] - dot);
        }
      });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  require_same_graph(x, gamma);
  require_same_graph(x, beta);
  const auto& xs = x.shape();
  if (xs.empty()) throw DimensionError("layer_norm: scalar input");
  const std::size_t d = xs.back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gamma " + shape_string(gamma.shape()) + " / beta " +
                         shape_string(beta.shape()) + " do not match last dimension of " +
                         shape_string(xs));
  }
  const std::size_t rows = x.size() / d;
  const auto xv = x.value();
  const auto gv = gamma.value();
  const auto bv = beta.value();
  std::vector<double> normalized(xv.size());
  std::vector<double> inv_std(rows);
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    // A zero-variance row with eps == 0 normalizes to 0 rather than NaN.
    const double s = var + eps > 0.0 ? 1.0 / std::sqrt(var + eps) : 0.0;
    inv_std[r] = s;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mean) * s;
      normalized[r * d + j] = h;
      out[r * d + j] = gv[j] * h + bv[j];
    }
  }
  const auto ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.graph().record(
      xs, std::move(out), x.requires_grad() || gamma.requires_grad() || beta.requires_grad(),
      [ix, ig, ib, d, rows, normalized = std::move(normalized), inv_std = std::move(inv_std)](
          Graph& g, std::span<const double>, std::span<const double> go) {
        const auto gv = g.value_of(ig);
        if (g.requires_grad_of(ig)) {
          auto gg = g.grad_buffer(ig);
          for (std::size_t i = 0; i < go.size(); ++i) gg[i % d] += go[i] * normalized[i];
        }
        if (g.requires_grad_of(ib)) {
          auto gb = g.grad_buffer(ib);
          for (std::size_t i = 0; i < go.size(); ++i) gb[i % d] += go[i];
        }
        if (g.requires_grad_of(ix)) {
          auto gx = g.grad_buffer(ix);
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = go[r * d + j] * gv[j];
              mean_dh += dh;
              mean_dh_h += dh * normalized[r * d + j];
            }
            mean_dh *= inv_d;
            mean_dh_h *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = go[r * d + j] * gv[j];
              gx[r * d + j] += inv_std[r] * (dh - mean_dh - normalized[r * d + j] * mean_dh_h);
            }
          }
        }
      });
}

Var relu(Var x) {
  const auto xv = x.value();
  x.graph().append_relu_pattern(xv);
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  const auto ix = x.id();
  return x.graph().record(x.shape(), std::move(out), x.requires_grad(),
                          [ix](Graph& g, std::span<const double>, std::span<const double> go) {
                            const auto xv = g.value_of(ix);
                            auto gx = g.grad_buffer(ix);
                            for (std::size_t i = 0; i < go.size(); ++i)
                              if (xv[i] > 0.0) gx[i] += go[i];
                          });
}

Var sigmoid(Var x) {
  const auto xv = x.value();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(xv[i]);
  const auto ix = x.id();
  return x.graph().record(
      x.shape(), std::move(out), x.requires_grad(),
      [ix](Graph& g, std::span<const double> y, std::span<const double> go) {
        auto gx = g.grad_buffer(ix);
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * y[i] * (1.0 - y[i]);
      });
}

Var embedding(Var table, std::span<const std::int64_t> ids) {
  require_matrix("embedding", table);
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  for (const auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("embedding: id " + std::to_string(id) + " outside table of " +
                       std::to_string(vocab) + " rows");
    }
  }
  const auto tv = table.value();
  std::vector<double> out(ids.size() * d);
  for (std::size_t r = 0; r < ids.size(); ++r)
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[r]) * d, d, out.data() + r * d);
  const auto it = table.id();
  return table.graph().record(
      {ids.size(), d}, std::move(out), table.requires_grad(),
      [it, d, rows = std::vector<std::int64_t>(ids.begin(), ids.end())](
          Graph& g, std::span<const double>, std::span<const double> go) {
        auto gt = g.grad_buffer(it);
        for (std::size_t r = 0; r < rows.size(); ++r) {
          double* dst = gt.data() + static_cast<std::size_t>(rows[r]) * d;
          const double* src = go.data() + r * d;
          for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
      });
}

Var scaled_rows(std::span<const double> coeffs, Var w) {
  if (w.shape().size() != 1) {
    throw DimensionError("scaled_rows: expected a vector, got " + shape_string(w.shape()));
  }
  const std::size_t d = w.dim(0);
  const auto wv = w.value();
  std::vector<double> out(coeffs.size() * d);
  for (std::size_t r = 0; r < coeffs.size(); ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = coeffs[r] * wv[j];
  const auto iw = w.id();
  return w.graph().record(
      {coeffs.size(), d}, std::move(out), w.requires_grad(),
      [iw, d, c = std::vector<double>(coeffs.begin(), coeffs.end())](
          Graph& g, std::span<const double>, std::span<const double> go) {
        auto gw = g.grad_buffer(iw);
        for (std::size_t r = 0; r < c.size(); ++r)
          for (std::size_t j = 0; j < d; ++j) gw[j] += c[r] * go[r * d + j];
      });
}

Var dropout(Var x, double rate, CounterRng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must lie in [0, 1)");
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  const auto xv = x.value();
  std::vector<double> mask(xv.size());
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    out[i] = xv[i] * mask[i];
  }
  const auto ix = x.id();
  return x.graph().record(x.shape(), std::move(out), x.requires_grad(),
                          [ix, mask = std::move(mask)](Graph& g, std::span<const double>,
                                                       std::span<const double> go) {
                            auto gx = g.grad_buffer(ix);
                            for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * mask[i];
                          });
}

Var sum(Var a) {
  const auto v = a.value();
  double total = 0.0;
  for (double x : v) total += x;
  const auto ia = a.id();
  return a.graph().record({}, {total}, a.requires_grad(),
                          [ia](Graph& g, std::span<const double>, std::span<const double> go) {
                            auto ga = g.grad_buffer(ia);
                            for (auto& x : ga) x += go[0];
                          });
}

Var weighted_bce(Var probs, std::span<const double> labels, std::span<const double> weights,
                 double normalizer) {
  constexpr double kClamp = 1e-12;
  const auto p = probs.value();
  if (labels.size() != p.size() || weights.size() != p.size()) {
    throw DimensionError("weighted_bce: " + std::to_string(p.size()) + " probabilities, " +
                         std::to_string(labels.size()) + " labels, " +
                         std::to_string(weights.size()) + " weights");
  }
  if (!(normalizer > 0.0)) throw ContractError("weighted_bce: normalizer must be positive");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (weights[i] == 0.0) continue;
    const double lp = std::log(std::max(p[i], kClamp));
    const double lq = std::log(std::max(1.0 - p[i], kClamp));
    total -= weights[i] * (labels[i] * lp + (1.0 - labels[i]) * lq);
  }
  const auto ip = probs.id();
  return probs.graph().record(
      {}, {total / normalizer}, probs.requires_grad(),
      [ip, normalizer, l = std::vector<double>(labels.begin(), labels.end()),
       w = std::vector<double>(weights.begin(), weights.end())](
          Graph& g, std::span<const double>, std::span<const double> go) {
        const auto p = g.value_of(ip);
        auto gp = g.grad_buffer(ip);
        for (std::size_t i = 0; i < p.size(); ++i) {
          if (w[i] == 0.0) continue;
          // Inside the clamp region the loss is flat in p.
          double d = 0.0;
          if (p[i] > kClamp) d -= l[i] / p[i];
          if (1.0 - p[i] > kClamp) d += (1.0 - l[i]) / (1.0 - p[i]);
          gp[i] += go[0] * w[i] * d / normalizer;
        }
      });
}

}  // namespace saintplus::tensor
