#include "smt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "smt/error.hpp"
#include "smt/gemm.hpp"

namespace smt {

namespace {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return shape.empty() ? 0 : n;
}

void require_matrix(const TensorPtr& t, const char* op) {
  if (!t || !t->is_matrix()) {
    throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " +
                     (t ? t->shape_str() : std::string("null")));
  }
}

void require_same_shape(const TensorPtr& a, const TensorPtr& b,
                        const char* op) {
  if (a->shape() != b->shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a->shape_str() +
                     " vs " + b->shape_str());
  }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill, bool rg)
    : data(shape_numel(shape), fill), requires_grad(rg), shape_(std::move(shape)) {
  if (requires_grad) ensure_grad();
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values,
               bool rg)
    : data(std::move(values)), requires_grad(rg), shape_(std::move(shape)) {
  if (shape_numel(shape_) != data.size()) {
    throw ShapeError("tensor: " + shape_str() + " does not hold " +
                     std::to_string(data.size()) + " values");
  }
  if (requires_grad) ensure_grad();
}

TensorPtr Tensor::zeros(std::size_t rows, std::size_t cols, bool rg) {
  return std::make_shared<Tensor>(std::vector<std::size_t>{rows, cols}, 0.0, rg);
}

TensorPtr Tensor::full(std::size_t rows, std::size_t cols, double value,
                       bool rg) {
  return std::make_shared<Tensor>(std::vector<std::size_t>{rows, cols}, value,
                                  rg);
}

TensorPtr Tensor::of(std::initializer_list<std::initializer_list<double>> rows,
                     bool rg) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("tensor literal: ragged rows");
    values.insert(values.end(), row.begin(), row.end());
  }
  return std::make_shared<Tensor>(std::vector<std::size_t>{r, c},
                                  std::move(values), rg);
}

std::size_t Tensor::rows() const {
  if (!is_matrix()) throw ShapeError("rows(): tensor is " + shape_str());
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (!is_matrix()) throw ShapeError("cols(): tensor is " + shape_str());
  return shape_[1];
}

double Tensor::scalar_value() const {
  if (!is_scalar())
    throw ShapeError("scalar_value(): tensor is " + shape_str());
  return data[0];
}

double& Tensor::at(std::size_t r, std::size_t c) {
  return data[r * cols() + c];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return data[r * cols() + c];
}

std::string Tensor::shape_str() const {
  std::string s;
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape_[i]);
  }
  return s.empty() ? "scalar?" : s;
}

void Tensor::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
  std::fill(grad.begin(), grad.end(), 0.0);
}

// ---------------------------------------------------------------- Tape -----

TensorPtr Tape::make_output(std::vector<std::size_t> shape,
                            const std::vector<TensorPtr>& inputs) {
  bool rg = false;
  for (const auto& in : inputs) rg = rg || (in && in->requires_grad);
  return std::make_shared<Tensor>(std::move(shape), 0.0, rg);
}

void Tape::record(TensorPtr out, std::vector<TensorPtr> inputs,
                  std::function<void()> backward_fn, const char* op_name) {
  outputs_.push_back(out.get());
  if (!out->requires_grad) return;  // nothing downstream can need this node
  out->ensure_grad();
  nodes_.push_back(
      {std::move(out), std::move(inputs), std::move(backward_fn), op_name});
}

void Tape::backward(const TensorPtr& loss) {
  if (backward_run_)
    throw StateError("backward: tape already differentiated; rebuild the tape");
  if (!loss || !loss->is_scalar())
    throw ShapeError("backward: loss must be scalar, got " +
                     (loss ? loss->shape_str() : std::string("null")));
  if (std::find(outputs_.begin(), outputs_.end(), loss.get()) == outputs_.end())
    throw StateError("backward: loss was not produced by this tape");
  backward_run_ = true;
  if (!loss->requires_grad) return;  // fully frozen graph: nothing to do
  loss->ensure_grad();
  loss->grad[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->backward_fn();
  }
}

TensorPtr Tape::matmul(const TensorPtr& a, const TensorPtr& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a->cols() != b->rows()) {
    throw ShapeError("matmul: inner dimensions disagree, " + a->shape_str() +
                     " . " + b->shape_str());
  }
  const std::size_t n = a->rows(), k = a->cols(), d = b->cols();
  auto c = make_output({n, d}, {a, b});
  gemm_nn_acc(a->data.data(), b->data.data(), c->data.data(), n, k, d);
  record(c, {a, b},
         [a, b, c, n, k, d]() {
           if (a->requires_grad) {
             a->ensure_grad();
             // dA += dC . B^T
             gemm_nt_acc(c->grad.data(), b->data.data(), a->grad.data(), n, d, k);
           }
           if (b->requires_grad) {
             b->ensure_grad();
             // dB += A^T . dC
             gemm_tn_acc(a->data.data(), c->grad.data(), b->grad.data(), n, k, d);
           }
         },
         "matmul");
  return c;
}

TensorPtr Tape::linear(const TensorPtr& x, const TensorPtr& w, OpStats* stats) {
  require_matrix(x, "linear");
  require_matrix(w, "linear");
  if (x->cols() != w->cols()) {
    throw ShapeError("linear: x " + x->shape_str() + " vs weight " +
                     w->shape_str() + " (inner dims must match)");
  }
  const std::size_t n = x->rows(), k = x->cols(), d = w->rows();
  const long long flops = 2ll * static_cast<long long>(n) * k * d;
  auto z = make_output({n, d}, {x, w});
  gemm_nt_acc(x->data.data(), w->data.data(), z->data.data(), n, k, d);
  if (stats) {
    stats->fwd_flops += flops;
    // x must be retained for dW; frozen weights retain nothing.
    if (w->requires_grad) stats->cached_floats += static_cast<long long>(n * k);
  }
  record(z, {x, w},
         [x, w, z, n, k, d, flops, stats]() {
           if (x->requires_grad) {
             x->ensure_grad();
             // dx += dz . W
             gemm_nn_acc(z->grad.data(), w->data.data(), x->grad.data(), n, d, k);
             if (stats) stats->dx_flops += flops;
           }
           if (w->requires_grad) {
             w->ensure_grad();
             // dW += dz^T . x
             gemm_tn_acc(z->grad.data(), x->data.data(), w->grad.data(), n, d, k);
             if (stats) stats->dw_flops += flops;
           }
         },
         "linear");
  return z;
}

TensorPtr Tape::add(const TensorPtr& a, const TensorPtr& b) {
  require_matrix(a, "add");
  require_same_shape(a, b, "add");
  auto c = make_output({a->rows(), a->cols()}, {a, b});
  for (std::size_t i = 0; i < c->data.size(); ++i)
    c->data[i] = a->data[i] + b->data[i];
  record(c, {a, b},
         [a, b, c]() {
           if (a->requires_grad) {
             a->ensure_grad();
             for (std::size_t i = 0; i < c->grad.size(); ++i)
               a->grad[i] += c->grad[i];
           }
           if (b->requires_grad) {
             b->ensure_grad();
             for (std::size_t i = 0; i < c->grad.size(); ++i)
               b->grad[i] += c->grad[i];
           }
         },
         "add");
  return c;
}

TensorPtr Tape::mul(const TensorPtr& a, const TensorPtr& b) {
  require_matrix(a, "mul");
  require_same_shape(a, b, "mul");
  auto c = make_output({a->rows(), a->cols()}, {a, b});
  for (std::size_t i = 0; i < c->data.size(); ++i)
    c->data[i] = a->data[i] * b->data[i];
  record(c, {a, b},
         [a, b, c]() {
           if (a->requires_grad) {
             a->ensure_grad();
             for (std::size_t i = 0; i < c->grad.size(); ++i)
               a->grad[i] += c->grad[i] * b->data[i];
           }
           if (b->requires_grad) {
             b->ensure_grad();
             for (std::size_t i = 0; i < c->grad.size(); ++i)
               b->grad[i] += c->grad[i] * a->data[i];
           }
         },
         "mul");
  return c;
}

TensorPtr Tape::scale(const TensorPtr& a, double s) {
  require_matrix(a, "scale");
  auto c = make_output({a->rows(), a->cols()}, {a});
  for (std::size_t i = 0; i < c->data.size(); ++i) c->data[i] = s * a->data[i];
  record(c, {a},
         [a, c, s]() {
           if (!a->requires_grad) return;
           a->ensure_grad();
           for (std::size_t i = 0; i < c->grad.size(); ++i)
             a->grad[i] += s * c->grad[i];
         },
         "scale");
  return c;
}

TensorPtr Tape::relu(const TensorPtr& a) {
  require_matrix(a, "relu");
  auto c = make_output({a->rows(), a->cols()}, {a});
  for (std::size_t i = 0; i < c->data.size(); ++i)
    c->data[i] = a->data[i] > 0.0 ? a->data[i] : 0.0;
  record(c, {a},
         [a, c]() {
           if (!a->requires_grad) return;
           a->ensure_grad();
           for (std::size_t i = 0; i < c->grad.size(); ++i)
             if (a->data[i] > 0.0) a->grad[i] += c->grad[i];
         },
         "relu");
  return c;
}

TensorPtr Tape::softmax_rows(const TensorPtr& a) {
  require_matrix(a, "softmax_rows");
  const std::size_t n = a->rows(), k = a->cols();
  auto c = make_output({n, k}, {a});
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = a->data.data() + i * k;
    double* out = c->data.data() + i * k;
    double mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      out[j] = std::exp(row[j] - mx);
      z += out[j];
    }
    for (std::size_t j = 0; j < k; ++j) out[j] /= z;
  }
  record(c, {a},
         [a, c, n, k]() {
           if (!a->requires_grad) return;
           a->ensure_grad();
           for (std::size_t i = 0; i < n; ++i) {
             const double* y = c->data.data() + i * k;
             const double* dy = c->grad.data() + i * k;
             double dot = 0.0;
             for (std::size_t j = 0; j < k; ++j) dot += dy[j] * y[j];
             double* dx = a->grad.data() + i * k;
             for (std::size_t j = 0; j < k; ++j)
               dx[j] += y[j] * (dy[j] - dot);
           }
         },
         "softmax_rows");
  return c;
}

TensorPtr Tape::rmsnorm_rows(const TensorPtr& a, double eps) {
  require_matrix(a, "rmsnorm_rows");
  const std::size_t n = a->rows(), k = a->cols();
  auto c = make_output({n, k}, {a});
  std::vector<double> inv_rms(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = a->data.data() + i * k;
    double ms = 0.0;
    for (std::size_t j = 0; j < k; ++j) ms += row[j] * row[j];
    ms = ms / static_cast<double>(k) + eps;
    inv_rms[i] = 1.0 / std::sqrt(ms);
    double* out = c->data.data() + i * k;
    for (std::size_t j = 0; j < k; ++j) out[j] = row[j] * inv_rms[i];
  }
  record(c, {a},
         [a, c, n, k, inv_rms = std::move(inv_rms)]() {
           if (!a->requires_grad) return;
           a->ensure_grad();
           for (std::size_t i = 0; i < n; ++i) {
             const double* x = a->data.data() + i * k;
             const double* dy = c->grad.data() + i * k;
             const double r = inv_rms[i];
             double dot = 0.0;  // sum dy_j * x_j
             for (std::size_t j = 0; j < k; ++j) dot += dy[j] * x[j];
             const double coef = r * r * r * dot / static_cast<double>(k);
             double* dx = a->grad.data() + i * k;
             for (std::size_t j = 0; j < k; ++j)
               dx[j] += dy[j] * r - x[j] * coef;
           }
         },
         "rmsnorm_rows");
  return c;
}

TensorPtr Tape::mean(const TensorPtr& a) {
  require_matrix(a, "mean");
  if (a->numel() == 0) throw ShapeError("mean: empty tensor");
  auto c = make_output({1, 1}, {a});
  double acc = 0.0;
  for (double v : a->data) acc += v;
  const double inv = 1.0 / static_cast<double>(a->numel());
  c->data[0] = acc * inv;
  record(c, {a},
         [a, c, inv]() {
           if (!a->requires_grad) return;
           a->ensure_grad();
           const double g = c->grad[0] * inv;
           for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g;
         },
         "mean");
  return c;
}

TensorPtr Tape::sum(const TensorPtr& a) {
  require_matrix(a, "sum");
  auto c = make_output({1, 1}, {a});
  double acc = 0.0;
  for (double v : a->data) acc += v;
  c->data[0] = acc;
  record(c, {a},
         [a, c]() {
           if (!a->requires_grad) return;
           a->ensure_grad();
           const double g = c->grad[0];
           for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g;
         },
         "sum");
  return c;
}

TensorPtr Tape::transpose(const TensorPtr& a) {
  require_matrix(a, "transpose");
  const std::size_t n = a->rows(), k = a->cols();
  auto c = make_output({k, n}, {a});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) c->data[j * n + i] = a->data[i * k + j];
  record(c, {a},
         [a, c, n, k]() {
           if (!a->requires_grad) return;
           a->ensure_grad();
           for (std::size_t i = 0; i < n; ++i)
             for (std::size_t j = 0; j < k; ++j)
               a->grad[i * k + j] += c->grad[j * n + i];
         },
         "transpose");
  return c;
}

TensorPtr Tape::col_slice(const TensorPtr& a, std::size_t c0, std::size_t c1) {
  require_matrix(a, "col_slice");
  if (c0 >= c1 || c1 > a->cols()) {
    throw BoundsError("col_slice: [" + std::to_string(c0) + "," +
                      std::to_string(c1) + ") out of range for " +
                      a->shape_str());
  }
  const std::size_t n = a->rows(), k = a->cols(), w = c1 - c0;
  auto c = make_output({n, w}, {a});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j)
      c->data[i * w + j] = a->data[i * k + c0 + j];
  record(c, {a},
         [a, c, n, k, w, c0]() {
           if (!a->requires_grad) return;
           a->ensure_grad();
           for (std::size_t i = 0; i < n; ++i)
             for (std::size_t j = 0; j < w; ++j)
               a->grad[i * k + c0 + j] += c->grad[i * w + j];
         },
         "col_slice");
  return c;
}

TensorPtr Tape::concat_cols(const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t n = parts[0]->rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p->rows() != n)
      throw ShapeError("concat_cols: row mismatch " + parts[0]->shape_str() +
                       " vs " + p->shape_str());
    total += p->cols();
  }
  auto c = make_output({n, total}, parts);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p->cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j)
        c->data[i * total + off + j] = p->data[i * w + j];
    off += w;
  }
  record(c, parts,
         [parts, c, n, total]() {
           std::size_t off = 0;
           for (const auto& p : parts) {
             const std::size_t w = p->cols();
             if (p->requires_grad) {
               p->ensure_grad();
               for (std::size_t i = 0; i < n; ++i)
                 for (std::size_t j = 0; j < w; ++j)
                   p->grad[i * w + j] += c->grad[i * total + off + j];
             }
             off += w;
           }
         },
         "concat_cols");
  return c;
}

TensorPtr Tape::embed_rows(const TensorPtr& table, const std::vector<int>& ids) {
  require_matrix(table, "embed_rows");
  const std::size_t v = table->rows(), d = table->cols(), t = ids.size();
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw BoundsError("embed_rows: id " + std::to_string(id) +
                        " outside table " + table->shape_str());
  }
  auto c = make_output({t, d}, {table});
  for (std::size_t i = 0; i < t; ++i) {
    const double* src = table->data.data() + static_cast<std::size_t>(ids[i]) * d;
    std::copy(src, src + d, c->data.data() + i * d);
  }
  record(c, {table},
         [table, c, ids, t, d]() {
           if (!table->requires_grad) return;
           table->ensure_grad();
           for (std::size_t i = 0; i < t; ++i) {
             double* dst =
                 table->grad.data() + static_cast<std::size_t>(ids[i]) * d;
             const double* g = c->grad.data() + i * d;
             for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
           }
         },
         "embed_rows");
  return c;
}

TensorPtr Tape::cross_entropy_mean(const TensorPtr& logits,
                                   const std::vector<int>& targets) {
  require_matrix(logits, "cross_entropy_mean");
  const std::size_t t = logits->rows(), v = logits->cols();
  if (targets.size() != t) {
    throw ShapeError("cross_entropy_mean: " + std::to_string(targets.size()) +
                     " targets for logits " + logits->shape_str());
  }
  for (int y : targets) {
    if (y < 0 || static_cast<std::size_t>(y) >= v)
      throw BoundsError("cross_entropy_mean: target " + std::to_string(y) +
                        " outside vocab " + std::to_string(v));
  }
  auto c = make_output({1, 1}, {logits});
  // Row-stable softmax; probabilities are kept for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(t * v);
  double loss = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    const double* row = logits->data.data() + i * v;
    double* p = probs->data() + i * v;
    double mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      p[j] = std::exp(row[j] - mx);
      z += p[j];
    }
    for (std::size_t j = 0; j < v; ++j) p[j] /= z;
    loss -= std::log(p[static_cast<std::size_t>(targets[i])]);
  }
  c->data[0] = loss / static_cast<double>(t);
  record(c, {logits},
         [logits, c, probs, targets, t, v]() {
           if (!logits->requires_grad) return;
           logits->ensure_grad();
           const double g = c->grad[0] / static_cast<double>(t);
           for (std::size_t i = 0; i < t; ++i) {
             const double* p = probs->data() + i * v;
             double* dl = logits->grad.data() + i * v;
             const auto y = static_cast<std::size_t>(targets[i]);
             for (std::size_t j = 0; j < v; ++j)
               dl[j] += g * (p[j] - (j == y ? 1.0 : 0.0));
           }
         },
         "cross_entropy_mean");
  return c;
}

}  // namespace smt
