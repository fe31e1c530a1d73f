#pragma once
// Adam in two flavours sharing one update formula: BlockAdam keeps first and
// second moments only for selected block packs (2 * m * l^2 floats per layer);
// DenseAdam is the full-tensor reference used by dense fine-tuning and LoRA.

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "smt/sparse_linear.hpp"
#include "smt/tensor.hpp"

namespace smt {

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled; applied only when > 0
};

// Nominal cost of one Adam update per parameter, shared with the analytic
// cost model so measured and predicted update FLOPs agree exactly.
constexpr long long kAdamFlopsPerParam = 10;

namespace detail {
// One bias-corrected AdamW step on a single value. `b1t`/`b2t` are beta^t.
inline double adam_update(double w, double g, double& m, double& v,
                          const AdamHyper& h, double lr, double b1t,
                          double b2t) {
  m = h.beta1 * m + (1.0 - h.beta1) * g;
  v = h.beta2 * v + (1.0 - h.beta2) * g * g;
  const double mhat = m / (1.0 - b1t);
  const double vhat = v / (1.0 - b2t);
  double out = w - lr * (mhat / (std::sqrt(vhat) + h.eps));
  if (h.weight_decay > 0.0) out -= lr * h.weight_decay * w;
  return out;
}
}  // namespace detail

class BlockAdam {
 public:
  explicit BlockAdam(AdamHyper hyper) : hyper_(hyper) {}

  // Zero moments for the layer's current selection. Registering an empty
  // selection yields a zero-size state.
  void register_layer(const std::string& id, const SparseLinearLayer& layer);

  // Gather selected weights, apply one step with `grads`, scatter back.
  // `lr` overrides the stored rate (schedules); pass hyper().lr for none.
  void step(const std::string& id, SparseLinearLayer& layer,
            const SparseBlockPack& grads, double lr);

  const AdamHyper& hyper() const { return hyper_; }
  std::size_t state_floats() const;  // 2 * sum of pack sizes
  long long update_flops_per_step() const;

  struct LayerState {
    std::vector<double> m, v;
    long t = 0;
  };
  const std::map<std::string, LayerState>& states() const { return states_; }
  std::map<std::string, LayerState>& states() { return states_; }

 private:
  AdamHyper hyper_;
  std::map<std::string, LayerState> states_;
};

class DenseAdam {
 public:
  explicit DenseAdam(AdamHyper hyper) : hyper_(hyper) {}

  void track(const std::string& id, TensorPtr param);
  // One step over every tracked tensor, reading each tensor's grad buffer.
  void step(double lr);

  const AdamHyper& hyper() const { return hyper_; }
  std::size_t state_floats() const;
  long long update_flops_per_step() const;

  struct ParamState {
    TensorPtr param;
    std::vector<double> m, v;
    long t = 0;
  };
  const std::map<std::string, ParamState>& states() const { return states_; }
  std::map<std::string, ParamState>& states() { return states_; }

 private:
  AdamHyper hyper_;
  std::map<std::string, ParamState> states_;
};

}  // namespace smt
