#pragma once
// The custom sparse linear layer: dense forward, compressed activation cache,
// and weight gradients computed only for the selected blocks. Selected blocks
// travel as a dense (m x l x l) stack plus an index map; there is no sparse
// matrix product anywhere.

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "smt/blockmap.hpp"
#include "smt/tensor.hpp"

namespace smt {

struct SparseBlockPack {
  std::size_t side_l = 0;
  std::vector<BlockIndex> index_map;  // pack slot -> block coordinates
  std::vector<double> values;         // m * l * l, slot-major

  std::size_t block_count() const { return index_map.size(); }
  void zero() { std::fill(values.begin(), values.end(), 0.0); }
};

// Columns of the layer input restricted to the selection's column cover,
// packed contiguously: row t holds |cover| * l values. The stamp ties a cache
// to the selection it was produced under.
struct ActivationCache {
  std::size_t n_rows = 0;
  std::size_t side_l = 0;
  std::vector<std::size_t> col_cover;
  std::vector<double> packed;
  std::uint64_t selection_stamp = 0;

  std::size_t stored_floats() const { return packed.size(); }
};

class SparseLinearLayer {
 public:
  // `selection` is deduplicated, bounds-checked and kept sorted.
  SparseLinearLayer(TensorPtr weight, BlockGrid grid,
                    std::vector<BlockIndex> selection);

  const BlockGrid& grid() const { return grid_; }
  const std::vector<BlockIndex>& selection() const { return selection_; }
  const std::vector<std::size_t>& col_cover() const { return col_cover_; }
  std::uint64_t selection_stamp() const { return stamp_; }
  const TensorPtr& weight() const { return weight_; }
  std::size_t selected_params() const {
    return selection_.size() * grid_.block_params();
  }

  // Gradient pack accumulated across backward calls within one step.
  SparseBlockPack& grad_pack() { return grad_pack_; }
  const SparseBlockPack& grad_pack() const { return grad_pack_; }

  // Swap in a new selection (invalidates outstanding caches via the stamp).
  void set_selection(std::vector<BlockIndex> selection);

 private:
  void rebuild();

  TensorPtr weight_;
  BlockGrid grid_;
  std::vector<BlockIndex> selection_;
  std::vector<std::size_t> col_cover_;
  std::uint64_t stamp_ = 0;
  SparseBlockPack grad_pack_;
};

// z = x . W^T computed densely over the full weight; the cache keeps only the
// covered input columns.
std::pair<Tensor, ActivationCache> sparse_forward(const SparseLinearLayer& layer,
                                                  const Tensor& x);

// dx = dz . W over the full weight; dW only for selected blocks, as a pack.
// Rejects caches produced under a different selection.
std::pair<Tensor, SparseBlockPack> sparse_backward(const SparseLinearLayer& layer,
                                                   const Tensor& dz,
                                                   const ActivationCache& cache);

// Copy selected blocks out of / back into the resident weight.
SparseBlockPack gather(const SparseLinearLayer& layer);
void scatter(SparseLinearLayer& layer, const SparseBlockPack& pack);

// Tape adapter: dense forward on the graph, custom backward that accumulates
// into the layer's grad pack. dx is produced only when `x` carries gradients.
TensorPtr sparse_apply(Tape& tape, SparseLinearLayer& layer, const TensorPtr& x,
                       OpStats* stats = nullptr);

}  // namespace smt
