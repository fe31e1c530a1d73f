#include "smt/cost_model.hpp"

#include <algorithm>
#include <cmath>

#include "smt/error.hpp"
#include "smt/optimizer.hpp"

namespace smt {

namespace {

void require_valid(const ArchSpec& arch) {
  if (arch.tokens_per_step == 0)
    throw ConfigError("cost model: tokens_per_step must be positive");
  for (const auto& layer : arch.layers) {
    if (layer.d == 0 || layer.k == 0)
      throw ConfigError("cost model: layer '" + layer.id +
                        "' has a zero dimension");
  }
}

const ArchLayer* find_layer(const ArchSpec& arch, const std::string& id) {
  for (const auto& layer : arch.layers)
    if (layer.id == id) return &layer;
  return nullptr;
}

// Shared bytes derivation from the integer element counts.
void fill_bytes(MethodCost& cost, const ArchSpec& arch) {
  cost.param_bytes = static_cast<double>(cost.trainable_params) *
                     arch.dtype_bytes;
  cost.grad_bytes = static_cast<double>(cost.grad_floats) * arch.dtype_bytes;
  cost.optimizer_bytes =
      static_cast<double>(cost.grad_floats) * arch.dtype_bytes *
      arch.optimizer_state_multiplier;
  cost.activation_bytes =
      static_cast<double>(cost.cache_floats) * arch.dtype_bytes;
}

}  // namespace

ArchSpec arch_from_model(Model& model, std::size_t tokens_per_step) {
  ArchSpec arch;
  arch.tokens_per_step = tokens_per_step;
  arch.total_params = model.total_params();
  for (LinearUnit* u : model.units()) {
    if (u->role == LayerRole::Embed) continue;  // lookup, not a matmul
    arch.layers.push_back({u->id, u->role, u->rows(), u->cols()});
  }
  return arch;
}

MethodCost ft_budget(const ArchSpec& arch) {
  require_valid(arch);
  const auto n = static_cast<long long>(arch.tokens_per_step);
  MethodCost cost;
  cost.method = "full_ft";
  cost.trainable_params = static_cast<long long>(arch.total_params);
  for (const auto& layer : arch.layers) {
    const auto dk = static_cast<long long>(layer.d * layer.k);
    cost.fwd_flops += 2 * n * dk;
    cost.bwd_dx_flops += 2 * n * dk;
    cost.bwd_dw_flops += 2 * n * dk;
    cost.cache_floats += n * static_cast<long long>(layer.k);
  }
  cost.grad_floats = cost.trainable_params;
  cost.opt_state_floats = 2 * cost.trainable_params;
  cost.update_flops = kAdamFlopsPerParam * cost.trainable_params;
  fill_bytes(cost, arch);
  return cost;
}

MethodCost smt_budget(const ArchSpec& arch, const BlockSelection& selection) {
  require_valid(arch);
  const auto n = static_cast<long long>(arch.tokens_per_step);
  MethodCost cost;
  cost.method = "smt";
  for (const auto& layer : arch.layers) {
    const auto dk = static_cast<long long>(layer.d * layer.k);
    // Dense forward everywhere; dx flows densely through the stack.
    cost.fwd_flops += 2 * n * dk;
    cost.bwd_dx_flops += 2 * n * dk;
  }
  for (const auto& sel : selection.layers) {
    const ArchLayer* layer = find_layer(arch, sel.layer_id);
    if (!layer)
      throw ShapeError("cost model: selection names unknown layer '" +
                       sel.layer_id + "'");
    if (sel.grid.rows_d != layer->d || sel.grid.cols_k != layer->k)
      throw ShapeError("cost model: selection grid " +
                       std::to_string(sel.grid.rows_d) + "x" +
                       std::to_string(sel.grid.cols_k) +
                       " does not match layer '" + sel.layer_id + "'");
    const auto l = static_cast<long long>(sel.grid.side_l);
    const auto m = static_cast<long long>(sel.blocks.size());
    cost.bwd_dw_flops += 2 * n * l * l * m;
    cost.trainable_params += m * l * l;
    cost.cache_floats +=
        n * l * static_cast<long long>(col_block_cover(sel.blocks).size());
  }
  cost.grad_floats = cost.trainable_params;
  cost.opt_state_floats = 2 * cost.trainable_params;
  cost.update_flops = kAdamFlopsPerParam * cost.trainable_params;
  fill_bytes(cost, arch);
  return cost;
}

MethodCost lora_budget(const ArchSpec& arch,
                       const std::vector<std::string>& adapted_ids, int rank) {
  require_valid(arch);
  if (rank < 1)
    throw ConfigError("cost model: lora rank must be >= 1, got " +
                      std::to_string(rank));
  const auto n = static_cast<long long>(arch.tokens_per_step);
  const auto r = static_cast<long long>(rank);
  for (const auto& id : adapted_ids) {
    const bool known =
        std::any_of(arch.layers.begin(), arch.layers.end(),
                    [&](const ArchLayer& layer) { return layer.id == id; });
    if (!known)
      throw ShapeError("cost model: adapted id '" + id +
                       "' does not name an architecture layer");
  }
  MethodCost cost;
  cost.method = "lora";
  for (const auto& layer : arch.layers) {
    const auto d = static_cast<long long>(layer.d);
    const auto k = static_cast<long long>(layer.k);
    // Frozen base forward always runs; dx flows densely.
    cost.fwd_flops += 2 * n * d * k;
    cost.bwd_dx_flops += 2 * n * d * k;
    if (std::find(adapted_ids.begin(), adapted_ids.end(), layer.id) ==
        adapted_ids.end())
      continue;
    // Adapter pair: down (r x k) then up (d x r) on top of the base.
    cost.fwd_flops += 2 * n * r * k + 2 * n * d * r;
    cost.bwd_dx_flops += 2 * n * r * k + 2 * n * d * r;
    cost.bwd_dw_flops += 2 * n * r * k + 2 * n * d * r;
    cost.trainable_params += r * (d + k);
    cost.cache_floats += n * (k + r);
  }
  cost.grad_floats = cost.trainable_params;
  cost.opt_state_floats = 2 * cost.trainable_params;
  cost.update_flops = kAdamFlopsPerParam * cost.trainable_params;
  fill_bytes(cost, arch);
  return cost;
}

CostRatios ratios_vs_ft(const MethodCost& method, const MethodCost& ft) {
  auto ratio = [](double a, double b) { return b == 0.0 ? 0.0 : a / b; };
  CostRatios r;
  r.bwd_dw = ratio(static_cast<double>(method.bwd_dw_flops),
                   static_cast<double>(ft.bwd_dw_flops));
  r.optimizer = ratio(method.optimizer_bytes, ft.optimizer_bytes);
  r.grad = ratio(method.grad_bytes, ft.grad_bytes);
  r.update = ratio(static_cast<double>(method.update_flops),
                   static_cast<double>(ft.update_flops));
  r.activation = ratio(method.activation_bytes, ft.activation_bytes);
  r.fwd = ratio(static_cast<double>(method.fwd_flops),
                static_cast<double>(ft.fwd_flops));
  return r;
}

double lora_overhead_bytes(double model_param_bytes, double trainable_fraction) {
  if (trainable_fraction < 0.0 || trainable_fraction > 1.0)
    throw ConfigError("lora overhead: fraction must lie in [0, 1]");
  return model_param_bytes * trainable_fraction;
}

double speedup(double t_baseline_seconds, double t_method_seconds) {
  if (t_baseline_seconds <= 0.0 || t_method_seconds <= 0.0)
    throw ConfigError("speedup: times must be positive");
  return t_baseline_seconds / t_method_seconds;
}

double round1(double x) { return std::round(x * 10.0) / 10.0; }

}  // namespace smt
