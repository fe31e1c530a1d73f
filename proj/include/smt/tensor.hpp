#pragma once
// Minimal f64 tensor plus a define-by-run tape. Every op records a closure
// that scatters the output gradient back onto its inputs; `Tape::backward`
// seeds a scalar loss and replays the closures in reverse. The tape is cheap
// to build and is reconstructed on every training step.
//
// Convention for linear layers throughout the project: weights are stored
// (d_out x k_in) and applied as z = x . W^T, so dW = dz^T . x and dx = dz . W.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace smt {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, double fill, bool requires_grad = false);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values,
         bool requires_grad = false);

  static TensorPtr zeros(std::size_t rows, std::size_t cols,
                         bool requires_grad = false);
  static TensorPtr full(std::size_t rows, std::size_t cols, double value,
                        bool requires_grad = false);
  static TensorPtr of(std::initializer_list<std::initializer_list<double>> rows,
                      bool requires_grad = false);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t numel() const { return data.size(); }
  bool is_matrix() const { return shape_.size() == 2; }
  bool is_scalar() const { return data.size() == 1; }
  std::size_t rows() const;
  std::size_t cols() const;
  double scalar_value() const;
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;
  std::string shape_str() const;  // e.g. "3x4"

  void ensure_grad();  // allocate a zeroed grad buffer if absent
  void zero_grad();
  bool has_grad() const { return !grad.empty(); }

  std::vector<double> data;
  std::vector<double> grad;  // same length as data once allocated
  bool requires_grad = false;

 private:
  std::vector<std::size_t> shape_;
};

// Instrumentation for one weight-bearing layer. Counters are cumulative over a
// run; the training loop diffs snapshots to report per-step numbers.
// `cached_floats` counts the activation values the backward pass will need for
// weight gradients (frozen layers cache nothing).
struct OpStats {
  long long fwd_flops = 0;
  long long dx_flops = 0;
  long long dw_flops = 0;
  long long cached_floats = 0;

  void reset() { *this = OpStats{}; }
  OpStats operator-(const OpStats& o) const {
    return {fwd_flops - o.fwd_flops, dx_flops - o.dx_flops,
            dw_flops - o.dw_flops, cached_floats - o.cached_floats};
  }
};

class Tape {
 public:
  // c = a . b
  TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
  // z = x . w^T with w stored (d x k); the dense layer primitive.
  TensorPtr linear(const TensorPtr& x, const TensorPtr& w,
                   OpStats* stats = nullptr);
  TensorPtr add(const TensorPtr& a, const TensorPtr& b);
  TensorPtr mul(const TensorPtr& a, const TensorPtr& b);  // elementwise
  TensorPtr scale(const TensorPtr& a, double c);
  TensorPtr relu(const TensorPtr& a);
  TensorPtr softmax_rows(const TensorPtr& a);
  // Parameter-free row RMS normalization: y = x / sqrt(mean(x^2) + eps).
  TensorPtr rmsnorm_rows(const TensorPtr& a, double eps = 1e-6);
  TensorPtr mean(const TensorPtr& a);  // scalar (1x1)
  TensorPtr sum(const TensorPtr& a);   // scalar (1x1)
  TensorPtr transpose(const TensorPtr& a);
  TensorPtr col_slice(const TensorPtr& a, std::size_t c0, std::size_t c1);
  TensorPtr concat_cols(const std::vector<TensorPtr>& parts);
  // Row lookup: out[t] = table[ids[t]]. Backward scatter-adds into the table.
  TensorPtr embed_rows(const TensorPtr& table, const std::vector<int>& ids);
  // Mean next-token cross entropy over rows of `logits` (T x V).
  TensorPtr cross_entropy_mean(const TensorPtr& logits,
                               const std::vector<int>& targets);

  // Register a custom node. The closure runs once during backward, reading
  // out->grad and accumulating into whichever inputs require grad. Nodes whose
  // output does not require grad are silently dropped.
  void record(TensorPtr out, std::vector<TensorPtr> inputs,
              std::function<void()> backward_fn, const char* op_name);

  // Seed d(loss)/d(loss) = 1 and replay recorded closures in reverse.
  // `loss` must be a scalar produced by this tape; a second call is an error.
  void backward(const TensorPtr& loss);

  bool backward_run() const { return backward_run_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    TensorPtr out;
    std::vector<TensorPtr> inputs;
    std::function<void()> backward_fn;
    const char* op_name;
  };

  TensorPtr make_output(std::vector<std::size_t> shape,
                        const std::vector<TensorPtr>& inputs);

  std::vector<Node> nodes_;
  std::vector<const Tensor*> outputs_;  // every tensor produced on this tape
  bool backward_run_ = false;
};

}  // namespace smt
