#pragma once
// Geometry of the l x l block partition of a (d x k) weight matrix.

#include <algorithm>
#include <compare>
#include <cstddef>
#include <string>
#include <vector>

#include "smt/error.hpp"

namespace smt {

struct BlockGrid {
  std::size_t rows_d = 0;
  std::size_t cols_k = 0;
  std::size_t side_l = 0;

  std::size_t row_blocks() const { return rows_d / side_l; }
  std::size_t col_blocks() const { return cols_k / side_l; }
  std::size_t block_count() const { return row_blocks() * col_blocks(); }
  std::size_t block_params() const { return side_l * side_l; }

  bool operator==(const BlockGrid&) const = default;
};

struct BlockIndex {
  std::size_t row_block = 0;
  std::size_t col_block = 0;

  auto operator<=>(const BlockIndex&) const = default;
};

// Half-open element ranges covered by one block.
struct BlockSpan {
  std::size_t row_begin = 0, row_end = 0;
  std::size_t col_begin = 0, col_end = 0;
};

// Matrices that do not tile exactly are rejected; there is no padding path.
inline BlockGrid make_grid(std::size_t d, std::size_t k, std::size_t l) {
  if (l == 0 || d == 0 || k == 0)
    throw ShapeError("make_grid: zero dimension in " + std::to_string(d) + "x" +
                     std::to_string(k) + ", l=" + std::to_string(l));
  if (d % l != 0 || k % l != 0)
    throw ShapeError("make_grid: " + std::to_string(d) + "x" +
                     std::to_string(k) + " is not divisible by block side " +
                     std::to_string(l));
  return BlockGrid{d, k, l};
}

inline BlockSpan block_slice(const BlockGrid& grid, const BlockIndex& idx) {
  if (idx.row_block >= grid.row_blocks() || idx.col_block >= grid.col_blocks())
    throw BoundsError("block_slice: block (" + std::to_string(idx.row_block) +
                      "," + std::to_string(idx.col_block) +
                      ") outside grid " + std::to_string(grid.row_blocks()) +
                      "x" + std::to_string(grid.col_blocks()));
  return BlockSpan{idx.row_block * grid.side_l, (idx.row_block + 1) * grid.side_l,
                   idx.col_block * grid.side_l, (idx.col_block + 1) * grid.side_l};
}

// Sorted unique column-block ids touched by a selection. This is exactly the
// set of activation column groups the backward pass has to cache.
inline std::vector<std::size_t> col_block_cover(
    const std::vector<BlockIndex>& selection) {
  std::vector<std::size_t> cover;
  cover.reserve(selection.size());
  for (const auto& b : selection) cover.push_back(b.col_block);
  std::sort(cover.begin(), cover.end());
  cover.erase(std::unique(cover.begin(), cover.end()), cover.end());
  return cover;
}

}  // namespace smt
