#include "smt/selector.hpp"

#include <algorithm>
#include <cmath>

#include "smt/error.hpp"

namespace smt {

void GradAccumulator::track(const std::string& id, LayerRole role,
                            std::size_t rows, std::size_t cols) {
  Entry e;
  e.role = role;
  e.rows = rows;
  e.cols = cols;
  e.sum.assign(rows * cols, 0.0);
  entries_[id] = std::move(e);
}

const GradAccumulator::Entry& GradAccumulator::entry(
    const std::string& id) const {
  auto it = entries_.find(id);
  if (it == entries_.end())
    throw StateError("grad accumulator: layer '" + id + "' is not tracked");
  return it->second;
}

void GradAccumulator::accumulate(const std::string& id, const Tensor& dw) {
  if (!dw.is_matrix())
    throw ShapeError("grad accumulator: gradient for '" + id +
                     "' must be a matrix, got " + dw.shape_str());
  accumulate(id, dw.data.data(), dw.rows(), dw.cols());
}

void GradAccumulator::accumulate(const std::string& id, const double* dw,
                                 std::size_t rows, std::size_t cols) {
  auto it = entries_.find(id);
  if (it == entries_.end())
    throw StateError("grad accumulator: layer '" + id + "' is not tracked");
  Entry& e = it->second;
  if (rows != e.rows || cols != e.cols)
    throw ShapeError("grad accumulator: gradient " + std::to_string(rows) +
                     "x" + std::to_string(cols) + " vs tracked " +
                     std::to_string(e.rows) + "x" + std::to_string(e.cols) +
                     " for '" + id + "'");
  if (abs_mode_) {
    for (std::size_t i = 0; i < e.sum.size(); ++i) e.sum[i] += std::abs(dw[i]);
  } else {
    for (std::size_t i = 0; i < e.sum.size(); ++i) e.sum[i] += dw[i];
  }
  e.iterations += 1;
}

long GradAccumulator::iterations_seen(const std::string& id) const {
  return entry(id).iterations;
}

const std::vector<double>& GradAccumulator::running_sum(
    const std::string& id) const {
  return entry(id).sum;
}

std::vector<std::string> GradAccumulator::tracked_ids() const {
  std::vector<std::string> ids;
  ids.reserve(entries_.size());
  for (const auto& [id, e] : entries_) ids.push_back(id);
  return ids;  // std::map iteration is already sorted
}

LayerRole GradAccumulator::role_of(const std::string& id) const {
  return entry(id).role;
}

// ----------------------------------------------------------------- policy --

bool AllocationPolicy::eligible(LayerRole role) const {
  switch (variant) {
    case Variant::AttentionQkv:
      return role == LayerRole::AttnQ || role == LayerRole::AttnK ||
             role == LayerRole::AttnV ||
             (include_output_proj && role == LayerRole::AttnO);
    case Variant::MlpOnly:
      return role == LayerRole::MlpIn || role == LayerRole::MlpOut;
    case Variant::Mixed:
      return role == LayerRole::MlpIn || role == LayerRole::MlpOut ||
             role == LayerRole::AttnQ || role == LayerRole::AttnK ||
             role == LayerRole::AttnV ||
             (include_output_proj && role == LayerRole::AttnO);
    case Variant::QOnly: return role == LayerRole::AttnQ;
    case Variant::KOnly: return role == LayerRole::AttnK;
    case Variant::VOnly: return role == LayerRole::AttnV;
  }
  return false;
}

void AllocationPolicy::validate() const {
  if (!(budget_fraction > 0.0) || budget_fraction > 1.0)
    throw ConfigError("policy: budget_fraction must lie in (0, 1], got " +
                      std::to_string(budget_fraction));
  if (variant == Variant::Mixed) {
    if (mlp_fraction < 0.0 || attn_fraction < 0.0 ||
        std::abs(mlp_fraction + attn_fraction - budget_fraction) > 1e-12)
      throw ConfigError(
          "policy: mixed allocation requires mlp_fraction + attn_fraction == "
          "budget_fraction");
  }
}

std::vector<AllocationPolicy::Pool> AllocationPolicy::pools() const {
  std::vector<LayerRole> attn{LayerRole::AttnQ, LayerRole::AttnK,
                              LayerRole::AttnV};
  if (include_output_proj) attn.push_back(LayerRole::AttnO);
  const std::vector<LayerRole> mlp{LayerRole::MlpIn, LayerRole::MlpOut};
  switch (variant) {
    case Variant::AttentionQkv: return {{attn, budget_fraction}};
    case Variant::MlpOnly: return {{mlp, budget_fraction}};
    case Variant::Mixed:
      return {{mlp, mlp_fraction}, {attn, attn_fraction}};
    case Variant::QOnly: return {{{LayerRole::AttnQ}, budget_fraction}};
    case Variant::KOnly: return {{{LayerRole::AttnK}, budget_fraction}};
    case Variant::VOnly: return {{{LayerRole::AttnV}, budget_fraction}};
  }
  return {};
}

const char* AllocationPolicy::variant_name(Variant v) {
  switch (v) {
    case Variant::AttentionQkv: return "attention_qkv";
    case Variant::MlpOnly: return "mlp_only";
    case Variant::Mixed: return "mixed";
    case Variant::QOnly: return "q_only";
    case Variant::KOnly: return "k_only";
    case Variant::VOnly: return "v_only";
  }
  return "?";
}

AllocationPolicy::Variant AllocationPolicy::variant_from_name(
    const std::string& name) {
  for (Variant v : {Variant::AttentionQkv, Variant::MlpOnly, Variant::Mixed,
                    Variant::QOnly, Variant::KOnly, Variant::VOnly}) {
    if (name == variant_name(v)) return v;
  }
  throw ConfigError("unknown policy variant '" + name + "'");
}

// -------------------------------------------------------------- selection --

std::size_t BlockSelection::selected_params() const {
  std::size_t n = 0;
  for (const auto& layer : layers)
    n += layer.blocks.size() * layer.grid.block_params();
  return n;
}

const LayerSelection* BlockSelection::find(const std::string& id) const {
  for (const auto& layer : layers)
    if (layer.layer_id == id) return &layer;
  return nullptr;
}

std::vector<BlockScore> score_blocks(const GradAccumulator& acc,
                                     std::size_t block_side) {
  std::vector<BlockScore> scores;
  for (const auto& [id, e] : acc.entries()) {
    if (e.iterations == 0)
      throw StateError("score_blocks: layer '" + id +
                       "' accumulated zero warm-up iterations");
    const BlockGrid grid = make_grid(e.rows, e.cols, block_side);
    const double inv = 1.0 / static_cast<double>(grid.block_params());
    for (std::size_t rb = 0; rb < grid.row_blocks(); ++rb) {
      for (std::size_t cb = 0; cb < grid.col_blocks(); ++cb) {
        const BlockIndex idx{rb, cb};
        const BlockSpan span = block_slice(grid, idx);
        double mag = 0.0;
        for (std::size_t r = span.row_begin; r < span.row_end; ++r) {
          const double* row = e.sum.data() + r * e.cols;
          for (std::size_t c = span.col_begin; c < span.col_end; ++c)
            mag += std::abs(row[c]);
        }
        scores.push_back({id, e.role, grid, idx, mag * inv});
      }
    }
  }
  return scores;
}

namespace {

// Descending score; ties ascending on (layer_id, row_block, col_block).
bool score_order(const BlockScore& a, const BlockScore& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.layer_id != b.layer_id) return a.layer_id < b.layer_id;
  return a.idx < b.idx;
}

}  // namespace

BlockSelection select_top(const std::vector<BlockScore>& scores,
                          const AllocationPolicy& policy,
                          std::size_t total_params) {
  policy.validate();
  if (total_params == 0)
    throw ConfigError("select_top: total_params must be positive");

  std::map<std::string, LayerSelection> by_layer;
  for (const auto& pool : policy.pools()) {
    std::vector<BlockScore> pool_scores;
    for (const auto& s : scores) {
      if (std::find(pool.roles.begin(), pool.roles.end(), s.role) !=
          pool.roles.end())
        pool_scores.push_back(s);
    }
    std::sort(pool_scores.begin(), pool_scores.end(), score_order);
    const double budget =
        pool.fraction * static_cast<double>(total_params);
    std::size_t taken = 0;
    for (const auto& s : pool_scores) {
      const std::size_t cost = s.grid.block_params();
      if (static_cast<double>(taken + cost) > budget) break;
      taken += cost;
      auto& layer = by_layer[s.layer_id];
      if (layer.blocks.empty()) {
        layer.layer_id = s.layer_id;
        layer.role = s.role;
        layer.grid = s.grid;
      }
      layer.blocks.push_back(s.idx);
      layer.scores.push_back(s.score);
    }
  }

  BlockSelection out;
  out.provenance.policy = AllocationPolicy::variant_name(policy.variant);
  out.provenance.budget_fraction = policy.budget_fraction;
  for (auto& [id, layer] : by_layer) {
    // Sort blocks (with their score snapshot) into lexicographic order.
    std::vector<std::size_t> order(layer.blocks.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return layer.blocks[a] < layer.blocks[b];
    });
    LayerSelection sorted;
    sorted.layer_id = layer.layer_id;
    sorted.role = layer.role;
    sorted.grid = layer.grid;
    for (std::size_t i : order) {
      sorted.blocks.push_back(layer.blocks[i]);
      sorted.scores.push_back(layer.scores[i]);
    }
    out.layers.push_back(std::move(sorted));
  }
  return out;  // std::map ordering keeps layers sorted by id
}

WarmupResult run_warmup(Model& model, DataStream& data,
                        const WarmupOptions& opts) {
  opts.policy.validate();
  if (opts.n_iters < 1)
    throw ConfigError("run_warmup: n_iters must be >= 1, got " +
                      std::to_string(opts.n_iters));

  WarmupResult result{GradAccumulator(opts.abs_then_sum), {}};
  std::vector<LinearUnit*> tracked;
  for (LinearUnit* u : model.units()) {
    const bool track = opts.policy.eligible(u->role);
    u->weight->requires_grad = track;
    if (track) {
      u->weight->ensure_grad();
      u->weight->zero_grad();
      // Divisibility is checked up front so a bad block side fails fast.
      make_grid(u->rows(), u->cols(), opts.block_side);
      result.acc.track(u->id, u->role, u->rows(), u->cols());
      tracked.push_back(u);
    }
  }
  if (tracked.empty())
    throw ConfigError("run_warmup: policy matches no layer of model '" +
                      model.name() + "'");

  for (long it = 0; it < opts.n_iters; ++it) {
    auto batch = data.next();
    if (!batch)
      throw DataError("run_warmup: data stream exhausted after " +
                      std::to_string(it) + " of " +
                      std::to_string(opts.n_iters) + " iterations",
                      it);
    Tape tape;
    auto loss = model.loss(tape, *batch);
    tape.backward(loss);
    for (LinearUnit* u : tracked) {
      result.acc.accumulate(u->id, u->weight->grad.data(), u->rows(), u->cols());
      u->weight->zero_grad();
    }
  }

  auto scores = score_blocks(result.acc, opts.block_side);
  result.selection = select_top(scores, opts.policy, model.total_params());
  result.selection.provenance.warmup_iters = opts.n_iters;
  result.selection.provenance.seed = opts.seed;
  return result;
}

SelectionStats selection_stats(const BlockSelection& selection,
                               std::size_t total_params,
                               const std::vector<LinearUnit*>& eligible_units) {
  SelectionStats stats;
  stats.selected_params = selection.selected_params();
  stats.fraction_of_total =
      total_params == 0 ? 0.0
                        : static_cast<double>(stats.selected_params) /
                              static_cast<double>(total_params);
  for (LinearUnit* u : eligible_units) stats.layer_blocks[u->id] = 0;
  for (const auto& layer : selection.layers) {
    const auto params = layer.blocks.size() * layer.grid.block_params();
    stats.role_share[role_name(layer.role)] +=
        static_cast<double>(params);
    stats.layer_blocks[layer.layer_id] = layer.blocks.size();
  }
  if (stats.selected_params > 0) {
    for (auto& [role, share] : stats.role_share)
      share /= static_cast<double>(stats.selected_params);
  }
  return stats;
}

}  // namespace smt
