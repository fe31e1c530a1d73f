#include "smt/sparse_linear.hpp"

#include <algorithm>
#include <string>

#include "smt/error.hpp"
#include "smt/gemm.hpp"
#include "smt/util.hpp"

namespace smt {

namespace {

std::uint64_t selection_fingerprint(const BlockGrid& grid,
                                    const std::vector<BlockIndex>& sel) {
  std::uint64_t h = fnv1a64(&grid.side_l, sizeof(grid.side_l));
  h = fnv1a64(&grid.rows_d, sizeof(grid.rows_d), h);
  h = fnv1a64(&grid.cols_k, sizeof(grid.cols_k), h);
  for (const auto& b : sel) {
    h = fnv1a64(&b.row_block, sizeof(b.row_block), h);
    h = fnv1a64(&b.col_block, sizeof(b.col_block), h);
  }
  return h;
}

// Position of column block `c` within the sorted cover.
std::size_t cover_slot(const std::vector<std::size_t>& cover, std::size_t c) {
  const auto it = std::lower_bound(cover.begin(), cover.end(), c);
  return static_cast<std::size_t>(it - cover.begin());
}

void check_input_shape(const SparseLinearLayer& layer, const Tensor& x) {
  if (!x.is_matrix() || x.cols() != layer.grid().cols_k)
    throw ShapeError("sparse_forward: input " + x.shape_str() +
                     " does not match weight " + layer.weight()->shape_str());
}

void check_cache(const SparseLinearLayer& layer, const ActivationCache& cache,
                 std::size_t n_rows) {
  if (cache.selection_stamp != layer.selection_stamp())
    throw StateError(
        "sparse_backward: stale activation cache (selection changed between "
        "forward and backward)");
  if (cache.n_rows != n_rows || cache.side_l != layer.grid().side_l ||
      cache.col_cover != layer.col_cover())
    throw StateError("sparse_backward: cache layout does not match layer");
}

// pack[slot] += dz[:, rows of block]^T . x_cached[:, cols of block].
// Accumulation runs over tokens t in ascending order, matching the dense
// gemm_tn kernel, so pack slots equal slices of the full dW bit-for-bit.
void add_block_grads(const SparseLinearLayer& layer, const double* dz,
                     std::size_t n, const ActivationCache& cache,
                     double* pack_values) {
  const std::size_t l = layer.grid().side_l;
  const std::size_t d = layer.grid().rows_d;
  const std::size_t cache_w = cache.col_cover.size() * l;
  const auto& sel = layer.selection();
  for (std::size_t s = 0; s < sel.size(); ++s) {
    const std::size_t r0 = sel[s].row_block * l;
    const std::size_t coff = cover_slot(cache.col_cover, sel[s].col_block) * l;
    double* slot = pack_values + s * l * l;
    for (std::size_t t = 0; t < n; ++t) {
      const double* dzrow = dz + t * d + r0;
      const double* xrow = cache.packed.data() + t * cache_w + coff;
      for (std::size_t bi = 0; bi < l; ++bi) {
        const double g = dzrow[bi];
        double* out = slot + bi * l;
        for (std::size_t bj = 0; bj < l; ++bj) out[bj] += g * xrow[bj];
      }
    }
  }
}

}  // namespace

SparseLinearLayer::SparseLinearLayer(TensorPtr weight, BlockGrid grid,
                                     std::vector<BlockIndex> selection)
    : weight_(std::move(weight)), grid_(grid), selection_(std::move(selection)) {
  if (!weight_ || !weight_->is_matrix() || weight_->rows() != grid_.rows_d ||
      weight_->cols() != grid_.cols_k)
    throw ShapeError("sparse layer: weight " +
                     (weight_ ? weight_->shape_str() : std::string("null")) +
                     " does not match grid " + std::to_string(grid_.rows_d) +
                     "x" + std::to_string(grid_.cols_k));
  rebuild();
}

void SparseLinearLayer::set_selection(std::vector<BlockIndex> selection) {
  selection_ = std::move(selection);
  rebuild();
}

void SparseLinearLayer::rebuild() {
  std::sort(selection_.begin(), selection_.end());
  selection_.erase(std::unique(selection_.begin(), selection_.end()),
                   selection_.end());
  for (const auto& b : selection_) block_slice(grid_, b);  // bounds check
  col_cover_ = col_block_cover(selection_);
  stamp_ = selection_fingerprint(grid_, selection_);
  grad_pack_.side_l = grid_.side_l;
  grad_pack_.index_map = selection_;
  grad_pack_.values.assign(selection_.size() * grid_.block_params(), 0.0);
}

std::pair<Tensor, ActivationCache> sparse_forward(const SparseLinearLayer& layer,
                                                  const Tensor& x) {
  check_input_shape(layer, x);
  const std::size_t n = x.rows();
  const std::size_t k = layer.grid().cols_k;
  const std::size_t d = layer.grid().rows_d;
  const std::size_t l = layer.grid().side_l;

  Tensor z({n, d}, 0.0);
  gemm_nt_acc(x.data.data(), layer.weight()->data.data(), z.data.data(), n, k, d);

  ActivationCache cache;
  cache.n_rows = n;
  cache.side_l = l;
  cache.col_cover = layer.col_cover();
  cache.selection_stamp = layer.selection_stamp();
  cache.packed.resize(n * cache.col_cover.size() * l);
  const std::size_t cache_w = cache.col_cover.size() * l;
  for (std::size_t t = 0; t < n; ++t) {
    const double* xrow = x.data.data() + t * k;
    double* dst = cache.packed.data() + t * cache_w;
    for (std::size_t ci = 0; ci < cache.col_cover.size(); ++ci) {
      const double* src = xrow + cache.col_cover[ci] * l;
      std::copy(src, src + l, dst + ci * l);
    }
  }
  return {std::move(z), std::move(cache)};
}

std::pair<Tensor, SparseBlockPack> sparse_backward(const SparseLinearLayer& layer,
                                                   const Tensor& dz,
                                                   const ActivationCache& cache) {
  if (!dz.is_matrix() || dz.cols() != layer.grid().rows_d)
    throw ShapeError("sparse_backward: dz " + dz.shape_str() +
                     " does not match weight " + layer.weight()->shape_str());
  const std::size_t n = dz.rows();
  check_cache(layer, cache, n);

  Tensor dx({n, layer.grid().cols_k}, 0.0);
  gemm_nn_acc(dz.data.data(), layer.weight()->data.data(), dx.data.data(), n,
              layer.grid().rows_d, layer.grid().cols_k);

  SparseBlockPack pack;
  pack.side_l = layer.grid().side_l;
  pack.index_map = layer.selection();
  pack.values.assign(layer.selected_params(), 0.0);
  add_block_grads(layer, dz.data.data(), n, cache, pack.values.data());
  return {std::move(dx), std::move(pack)};
}

SparseBlockPack gather(const SparseLinearLayer& layer) {
  const std::size_t l = layer.grid().side_l;
  const std::size_t k = layer.grid().cols_k;
  SparseBlockPack pack;
  pack.side_l = l;
  pack.index_map = layer.selection();
  pack.values.resize(layer.selected_params());
  const double* w = layer.weight()->data.data();
  for (std::size_t s = 0; s < pack.index_map.size(); ++s) {
    const BlockSpan span = block_slice(layer.grid(), pack.index_map[s]);
    double* slot = pack.values.data() + s * l * l;
    for (std::size_t r = span.row_begin; r < span.row_end; ++r) {
      const double* src = w + r * k + span.col_begin;
      std::copy(src, src + l, slot + (r - span.row_begin) * l);
    }
  }
  return pack;
}

void scatter(SparseLinearLayer& layer, const SparseBlockPack& pack) {
  if (pack.side_l != layer.grid().side_l ||
      pack.index_map != layer.selection())
    throw ShapeError(
        "scatter: pack index map does not match the layer selection");
  if (pack.values.size() != layer.selected_params())
    throw ShapeError("scatter: pack holds " +
                     std::to_string(pack.values.size()) + " values, expected " +
                     std::to_string(layer.selected_params()));
  const std::size_t l = pack.side_l;
  const std::size_t k = layer.grid().cols_k;
  double* w = layer.weight()->data.data();
  for (std::size_t s = 0; s < pack.index_map.size(); ++s) {
    const BlockSpan span = block_slice(layer.grid(), pack.index_map[s]);
    const double* slot = pack.values.data() + s * l * l;
    for (std::size_t r = span.row_begin; r < span.row_end; ++r) {
      double* dst = w + r * k + span.col_begin;
      std::copy(slot + (r - span.row_begin) * l,
                slot + (r - span.row_begin) * l + l, dst);
    }
  }
}

TensorPtr sparse_apply(Tape& tape, SparseLinearLayer& layer, const TensorPtr& x,
                       OpStats* stats) {
  auto [z_plain, cache] = sparse_forward(layer, *x);
  auto z = std::make_shared<Tensor>(std::move(z_plain));
  // The resident weight is frozen, but the selected blocks are trainable, so
  // the output always participates in backward.
  z->requires_grad = true;

  const std::size_t n = x->rows();
  const std::size_t k = layer.grid().cols_k;
  const std::size_t d = layer.grid().rows_d;
  const std::size_t l = layer.grid().side_l;
  const long long dense_flops = 2ll * static_cast<long long>(n) * k * d;
  const long long block_flops = 2ll * static_cast<long long>(n) * l * l *
                                static_cast<long long>(layer.selection().size());
  if (stats) {
    stats->fwd_flops += dense_flops;
    stats->cached_floats += static_cast<long long>(cache.stored_floats());
  }
  tape.record(
      z, {x},
      [&layer, x, z, n, k, d, dense_flops, block_flops, stats,
       cache = std::move(cache)]() {
        check_cache(layer, cache, n);
        if (x->requires_grad) {
          x->ensure_grad();
          gemm_nn_acc(z->grad.data(), layer.weight()->data.data(),
                      x->grad.data(), n, d, k);
          if (stats) stats->dx_flops += dense_flops;
        }
        add_block_grads(layer, z->grad.data(), n, cache,
                        layer.grad_pack().values.data());
        if (stats) stats->dw_flops += block_flops;
      },
      "sparse_linear");
  return z;
}

}  // namespace smt
