#pragma once
// Warm-up gradient statistics and block selection. Signed gradients are summed
// over warm-up iterations (optionally |.| first), blocks are scored by mean
// absolute accumulated value, and a greedy global ranking fills the parameter
// budget with whole blocks.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "smt/blockmap.hpp"
#include "smt/model.hpp"

namespace smt {

class GradAccumulator {
 public:
  // `abs_mode` switches to the abs-then-sum ablation (|dW| accumulated each
  // iteration instead of the signed sum).
  explicit GradAccumulator(bool abs_mode = false) : abs_mode_(abs_mode) {}

  void track(const std::string& id, LayerRole role, std::size_t rows,
             std::size_t cols);
  void accumulate(const std::string& id, const Tensor& dw);
  void accumulate(const std::string& id, const double* dw, std::size_t rows,
                  std::size_t cols);

  bool abs_mode() const { return abs_mode_; }
  long iterations_seen(const std::string& id) const;
  const std::vector<double>& running_sum(const std::string& id) const;
  std::vector<std::string> tracked_ids() const;  // sorted
  LayerRole role_of(const std::string& id) const;

  struct Entry {
    LayerRole role;
    std::size_t rows = 0, cols = 0;
    std::vector<double> sum;
    long iterations = 0;
  };
  const std::map<std::string, Entry>& entries() const { return entries_; }

 private:
  const Entry& entry(const std::string& id) const;
  bool abs_mode_;
  std::map<std::string, Entry> entries_;
};

struct BlockScore {
  std::string layer_id;
  LayerRole role = LayerRole::MlpIn;
  BlockGrid grid;
  BlockIndex idx;
  double score = 0.0;
};

struct AllocationPolicy {
  enum class Variant { AttentionQkv, MlpOnly, Mixed, QOnly, KOnly, VOnly };

  Variant variant = Variant::AttentionQkv;
  double budget_fraction = 0.05;  // of total model parameters, in (0, 1]
  // Mixed split; must sum to budget_fraction.
  double mlp_fraction = 0.0;
  double attn_fraction = 0.0;
  // Output projections are excluded by default but selectable for exploration.
  bool include_output_proj = false;

  bool eligible(LayerRole role) const;
  void validate() const;

  struct Pool {
    std::vector<LayerRole> roles;
    double fraction = 0.0;
  };
  std::vector<Pool> pools() const;

  static const char* variant_name(Variant v);
  static Variant variant_from_name(const std::string& name);
};

struct SelectionProvenance {
  long warmup_iters = 0;
  std::string policy;
  double budget_fraction = 0.0;
  std::uint64_t seed = 0;
};

struct LayerSelection {
  std::string layer_id;
  LayerRole role = LayerRole::MlpIn;
  BlockGrid grid;
  std::vector<BlockIndex> blocks;  // sorted (row_block, col_block)
  std::vector<double> scores;      // parallel to blocks; may be empty
};

struct BlockSelection {
  std::vector<LayerSelection> layers;  // sorted by layer_id; only non-empty
  SelectionProvenance provenance;

  std::size_t selected_params() const;
  bool empty() const { return layers.empty(); }
  const LayerSelection* find(const std::string& id) const;
};

// Per-layer block scores: mean |accumulated gradient| over each block.
// Requires at least one accumulated iteration per tracked layer.
std::vector<BlockScore> score_blocks(const GradAccumulator& acc,
                                     std::size_t block_side);

// Greedy descending-score selection under the policy's parameter budget.
// Ties break lexicographically on (layer_id, row_block, col_block). A budget
// below one block yields an empty selection (callers decide how to warn).
BlockSelection select_top(const std::vector<BlockScore>& scores,
                          const AllocationPolicy& policy,
                          std::size_t total_params);

struct WarmupOptions {
  long n_iters = 25;
  AllocationPolicy policy;
  std::size_t block_side = 16;
  bool abs_then_sum = false;
  std::uint64_t seed = 0;  // recorded in provenance only
};

struct WarmupResult {
  GradAccumulator acc;
  BlockSelection selection;
};

// Runs `n_iters` forward/backward passes from the stream's current position,
// accumulating weight gradients of policy-eligible layers. No optimizer is
// involved: weights are bit-identical before and after.
WarmupResult run_warmup(Model& model, DataStream& data,
                        const WarmupOptions& opts);

// Report data: parameter share per role and per-layer block counts.
struct SelectionStats {
  std::size_t selected_params = 0;
  double fraction_of_total = 0.0;
  std::map<std::string, double> role_share;          // of selected params
  std::map<std::string, std::size_t> layer_blocks;   // eligible layers, 0 = frozen
};

SelectionStats selection_stats(const BlockSelection& selection,
                               std::size_t total_params,
                               const std::vector<LinearUnit*>& eligible_units = {});

}  // namespace smt
