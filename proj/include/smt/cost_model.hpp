#pragma once
// Analytic FLOP and byte budgets for dense fine-tuning, block-sparse tuning,
// and LoRA over an architecture description. Counter formulas mirror the
// harness's instrumentation exactly, so measured and predicted values agree
// as integers; dx FLOPs are a stated upper bound (the harness skips dx into
// tensors that carry no gradient) and are reported without being asserted.

#include <cstddef>
#include <string>
#include <vector>

#include "smt/model.hpp"
#include "smt/selector.hpp"

namespace smt {

struct ArchLayer {
  std::string id;
  LayerRole role = LayerRole::MlpIn;
  std::size_t d = 0;  // output features
  std::size_t k = 0;  // input features
};

struct ArchSpec {
  std::vector<ArchLayer> layers;  // linear layers only; embeddings excluded
  std::size_t total_params = 0;   // every role-tagged matrix, embeddings too
  std::size_t tokens_per_step = 0;  // rows flowing through each layer
  double dtype_bytes = 8.0;         // f64 harness; 2.0 for the bf16 presets
  // Adam keeps two moments per trainable weight; raise to emulate
  // master-weight copies in mixed-precision setups.
  double optimizer_state_multiplier = 2.0;
};

struct MethodCost {
  std::string method;
  long long trainable_params = 0;
  long long fwd_flops = 0;
  long long bwd_dx_flops = 0;  // upper bound, reported only
  long long bwd_dw_flops = 0;
  long long update_flops = 0;
  // Exact integer element counts behind the byte figures.
  long long cache_floats = 0;
  long long grad_floats = 0;
  long long opt_state_floats = 0;
  double param_bytes = 0.0;
  double grad_bytes = 0.0;
  double optimizer_bytes = 0.0;
  double activation_bytes = 0.0;
};

// Per-category fractions of the dense fine-tuning budget.
struct CostRatios {
  double bwd_dw = 0.0;
  double optimizer = 0.0;
  double grad = 0.0;
  double update = 0.0;
  double activation = 0.0;
  double fwd = 0.0;
};

// Architecture of a model's linear layers (embedding units are lookup tables,
// not matmuls, and are left out of the per-layer FLOP accounting).
ArchSpec arch_from_model(Model& model, std::size_t tokens_per_step);

MethodCost ft_budget(const ArchSpec& arch);
MethodCost smt_budget(const ArchSpec& arch, const BlockSelection& selection);
// LoRA rank-r adapters on `adapted_ids`; other layers frozen.
MethodCost lora_budget(const ArchSpec& arch,
                       const std::vector<std::string>& adapted_ids, int rank);

CostRatios ratios_vs_ft(const MethodCost& method, const MethodCost& ft);

// Extra resident adapter bytes LoRA carries over the frozen model.
double lora_overhead_bytes(double model_param_bytes, double trainable_fraction);

// Wall-clock ratio of two measured times; raw, not re-rounded.
double speedup(double t_baseline_seconds, double t_method_seconds);
// One-decimal presentation rounding used in comparison tables.
double round1(double x);

// Reference figures for the published LLaMA-scale context (bf16 weights).
struct Llama7bReference {
  double params = 6.7e9;
  double dtype_bytes = 2.0;
  double param_bytes() const { return params * dtype_bytes; }
  // Parameters + Adam moments + gradients at weight precision.
  double adam_and_grad_bytes() const { return 3.0 * param_bytes(); }
};

}  // namespace smt
