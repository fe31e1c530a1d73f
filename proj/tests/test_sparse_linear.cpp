// Sparse linear layer: dense forward, compressed cache, block-only weight
// gradients. The gradient oracle is the full dense dW = dz^T . x computed by
// the generic kernel; pack slots must match its block slices exactly.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <set>
#include <vector>

#include "smt/gemm.hpp"
#include "smt/sparse_linear.hpp"
#include "support/test_util.hpp"

using namespace smt;

namespace {

// Random strict subset of the grid's blocks (possibly empty).
std::vector<BlockIndex> random_selection(const BlockGrid& grid,
                                         testutil::Rng& rng,
                                         std::size_t count) {
  std::set<std::pair<std::size_t, std::size_t>> seen;
  std::vector<BlockIndex> sel;
  while (sel.size() < count) {
    auto bi = static_cast<std::size_t>(
        rng.pick(static_cast<int>(grid.row_blocks())));
    auto bj = static_cast<std::size_t>(
        rng.pick(static_cast<int>(grid.col_blocks())));
    if (seen.insert({bi, bj}).second) sel.push_back({bi, bj});
  }
  return sel;
}

// Dense dW = dz^T . x via the generic transpose kernel.
std::vector<double> dense_weight_grad(const Tensor& dz, const Tensor& x) {
  std::vector<double> dw(dz.cols() * x.cols(), 0.0);
  gemm_tn_acc(dz.data.data(), x.data.data(), dw.data(), dz.rows(), dz.cols(),
              x.cols());
  return dw;
}

std::vector<double> block_of(const std::vector<double>& dense,
                             const BlockGrid& grid, const BlockIndex& idx) {
  const BlockSpan s = block_slice(grid, idx);
  std::vector<double> out;
  out.reserve(grid.block_params());
  for (std::size_t r = s.row_begin; r < s.row_end; ++r)
    for (std::size_t c = s.col_begin; c < s.col_end; ++c)
      out.push_back(dense[r * grid.cols_k + c]);
  return out;
}

}  // namespace

TEST_CASE("single selected element, worked by hand") {
  auto w = Tensor::of({{1, 2}, {3, 4}});
  SparseLinearLayer layer(w, make_grid(2, 2, 1), {{0, 1}});

  Tensor x({1, 2}, {3, 4});
  auto [z, cache] = sparse_forward(layer, x);
  // z = x . W^T over the full weight: [3*1+4*2, 3*3+4*4].
  CHECK(z.at(0, 0) == 11.0);
  CHECK(z.at(0, 1) == 25.0);
  // Only column 1 of x is needed for the selected block.
  REQUIRE(cache.col_cover == std::vector<std::size_t>{1});
  REQUIRE(cache.stored_floats() == 1);
  CHECK(cache.packed[0] == 4.0);

  Tensor dz({1, 2}, {1, 2});
  auto [dx, pack] = sparse_backward(layer, dz, cache);
  // dx = dz . W stays dense: [1*1+2*3, 1*2+2*4].
  CHECK(dx.at(0, 0) == 7.0);
  CHECK(dx.at(0, 1) == 10.0);
  // Full dW = dz^T . x = [[3,4],[6,8]]; the selected slot is dW[0][1].
  REQUIRE(pack.values.size() == 1);
  CHECK(pack.values[0] == 4.0);
}

TEST_CASE("pack slots equal dense gradient slices bit for bit") {
  testutil::Rng rng(2024);
  const std::size_t sides[] = {1, 2, 4};
  for (int rep = 0; rep < 40; ++rep) {
    const std::size_t l = sides[rep % 3];
    BlockGrid grid = make_grid(l * static_cast<std::size_t>(1 + rng.pick(4)),
                               l * static_cast<std::size_t>(1 + rng.pick(4)), l);
    const std::size_t m = static_cast<std::size_t>(
        rng.pick(static_cast<int>(grid.block_count())) + 1);
    SparseLinearLayer layer(
        testutil::rand_matrix(grid.rows_d, grid.cols_k, rng), grid,
        random_selection(grid, rng, m));

    const std::size_t n = static_cast<std::size_t>(1 + rng.pick(5));
    auto x = testutil::rand_matrix(n, grid.cols_k, rng);
    auto dzp = testutil::rand_matrix(n, grid.rows_d, rng);

    auto [z, cache] = sparse_forward(layer, *x);
    auto [dx, pack] = sparse_backward(layer, *dzp, cache);

    const auto dense = dense_weight_grad(*dzp, *x);
    REQUIRE(pack.index_map == layer.selection());
    for (std::size_t s = 0; s < pack.index_map.size(); ++s) {
      const auto expect = block_of(dense, grid, pack.index_map[s]);
      for (std::size_t i = 0; i < expect.size(); ++i)
        CHECK(pack.values[s * grid.block_params() + i] == expect[i]);
    }
  }
}

TEST_CASE("forward output and dx are bit-identical to the dense path") {
  testutil::Rng rng(5);
  BlockGrid grid = make_grid(12, 8, 4);
  SparseLinearLayer layer(testutil::rand_matrix(12, 8, rng), grid,
                          {{0, 1}, {2, 0}});
  auto x = testutil::rand_matrix(7, 8, rng);
  auto dzp = testutil::rand_matrix(7, 12, rng);

  auto [z, cache] = sparse_forward(layer, *x);
  std::vector<double> z_ref(7 * 12, 0.0);
  gemm_nt_acc(x->data.data(), layer.weight()->data.data(), z_ref.data(), 7, 8,
              12);
  CHECK(std::memcmp(z.data.data(), z_ref.data(), z_ref.size() * 8) == 0);

  auto [dx, pack] = sparse_backward(layer, *dzp, cache);
  std::vector<double> dx_ref(7 * 8, 0.0);
  gemm_nn_acc(dzp->data.data(), layer.weight()->data.data(), dx_ref.data(), 7,
              12, 8);
  CHECK(std::memcmp(dx.data.data(), dx_ref.data(), dx_ref.size() * 8) == 0);
}

TEST_CASE("cache keeps exactly the covered columns") {
  testutil::Rng rng(9);
  // Three blocks over a 4x4 grid touching column blocks {0, 2}.
  BlockGrid grid = make_grid(64, 64, 16);
  SparseLinearLayer layer(testutil::rand_matrix(64, 64, rng), grid,
                          {{0, 0}, {1, 0}, {2, 2}});
  REQUIRE(layer.col_cover() == std::vector<std::size_t>{0, 2});

  auto x = testutil::rand_matrix(5, 64, rng);
  auto [z, cache] = sparse_forward(layer, *x);
  // 5 rows x |cover|=2 x side 16 = 160 floats, a 2.5x cut from 5 x 64.
  CHECK(cache.stored_floats() == 160);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t j = 0; j < 16; ++j) {
      CHECK(cache.packed[t * 32 + j] == x->at(t, j));           // block 0
      CHECK(cache.packed[t * 32 + 16 + j] == x->at(t, 32 + j)); // block 2
    }
}

TEST_CASE("gather and scatter move blocks in and out of the weight") {
  testutil::Rng rng(13);
  BlockGrid grid = make_grid(8, 8, 2);
  auto w = testutil::rand_matrix(8, 8, rng);
  const std::vector<double> original = w->data;
  SparseLinearLayer layer(w, grid, {{1, 1}, {3, 0}});

  SparseBlockPack pack = gather(layer);
  REQUIRE(pack.values.size() == 8);
  // Slot order follows the sorted selection: (1,1) first, then (3,0).
  const auto b0 = block_of(original, grid, {1, 1});
  const auto b1 = block_of(original, grid, {3, 0});
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(pack.values[i] == b0[i]);
    CHECK(pack.values[4 + i] == b1[i]);
  }

  // Perturb and write back: exactly the selected elements change.
  for (auto& v : pack.values) v += 10.0;
  scatter(layer, pack);
  std::set<std::pair<std::size_t, std::size_t>> selected_cells;
  for (const auto& idx : layer.selection()) {
    const BlockSpan s = block_slice(grid, idx);
    for (std::size_t r = s.row_begin; r < s.row_end; ++r)
      for (std::size_t c = s.col_begin; c < s.col_end; ++c)
        selected_cells.insert({r, c});
  }
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 8; ++c) {
      const double base = original[r * 8 + c];
      if (selected_cells.count({r, c}))
        CHECK(w->at(r, c) == base + 10.0);
      else
        CHECK(w->at(r, c) == base);
    }

  // Round trip: a fresh gather reproduces the perturbed pack.
  CHECK(gather(layer).values == pack.values);

  // Mismatched packs are rejected before any write.
  SparseBlockPack wrong = pack;
  wrong.index_map = {{0, 0}, {3, 0}};
  CHECK_THROWS_AS(scatter(layer, wrong), ShapeError);
  SparseBlockPack short_pack = pack;
  short_pack.values.pop_back();
  CHECK_THROWS_WITH_AS(scatter(layer, short_pack),
                       doctest::Contains("expected"), ShapeError);
}

TEST_CASE("stale caches are rejected after a selection change") {
  testutil::Rng rng(21);
  BlockGrid grid = make_grid(8, 8, 4);
  SparseLinearLayer layer(testutil::rand_matrix(8, 8, rng), grid, {{0, 0}});
  auto x = testutil::rand_matrix(3, 8, rng);
  auto [z, cache] = sparse_forward(layer, *x);

  layer.set_selection({{1, 1}});
  Tensor dz({3, 8}, 1.0);
  CHECK_THROWS_WITH_AS(sparse_backward(layer, dz, cache),
                       doctest::Contains("stale"), StateError);
}

TEST_CASE("selection is sorted, deduplicated and bounds-checked") {
  testutil::Rng rng(33);
  BlockGrid grid = make_grid(8, 8, 2);
  auto w = testutil::rand_matrix(8, 8, rng);

  SparseLinearLayer layer(w, grid, {{3, 0}, {0, 1}, {3, 0}, {1, 2}});
  const std::vector<BlockIndex> expect = {{0, 1}, {1, 2}, {3, 0}};
  CHECK(layer.selection() == expect);
  CHECK(layer.selected_params() == 3 * 4);

  CHECK_THROWS_AS(SparseLinearLayer(w, grid, {{4, 0}}), BoundsError);
  CHECK_THROWS_AS(SparseLinearLayer(w, make_grid(8, 16, 2), {}), ShapeError);
}

TEST_CASE("empty selection still computes the dense forward") {
  testutil::Rng rng(55);
  BlockGrid grid = make_grid(6, 4, 2);
  SparseLinearLayer layer(testutil::rand_matrix(6, 4, rng), grid, {});
  CHECK(layer.selected_params() == 0);

  auto x = testutil::rand_matrix(2, 4, rng);
  auto [z, cache] = sparse_forward(layer, *x);
  CHECK(cache.stored_floats() == 0);

  std::vector<double> z_ref(2 * 6, 0.0);
  gemm_nt_acc(x->data.data(), layer.weight()->data.data(), z_ref.data(), 2, 4,
              6);
  CHECK(std::memcmp(z.data.data(), z_ref.data(), z_ref.size() * 8) == 0);

  Tensor dz({2, 6}, 0.5);
  auto [dx, pack] = sparse_backward(layer, dz, cache);
  CHECK(pack.values.empty());
  CHECK(dx.rows() == 2);
}

TEST_CASE("tape adapter accumulates the layer grad pack across calls") {
  testutil::Rng rng(71);
  BlockGrid grid = make_grid(6, 4, 2);
  SparseLinearLayer layer(testutil::rand_matrix(6, 4, rng), grid,
                          {{0, 1}, {2, 1}});
  REQUIRE(layer.col_cover() == std::vector<std::size_t>{1});

  auto x1 = testutil::rand_matrix(3, 4, rng, -1.0, 1.0, true);
  auto x2 = testutil::rand_matrix(2, 4, rng, -1.0, 1.0, true);
  auto c1 = testutil::rand_matrix(3, 6, rng);
  auto c2 = testutil::rand_matrix(2, 6, rng);

  OpStats stats;
  Tape tape;
  auto z1 = sparse_apply(tape, layer, x1, &stats);
  auto z2 = sparse_apply(tape, layer, x2, &stats);
  auto loss = tape.add(tape.sum(tape.mul(z1, c1)), tape.sum(tape.mul(z2, c2)));
  tape.backward(loss);

  // d(loss)/dz_i is exactly c_i, so the pack must equal the summed dense
  // gradients of both micro-batches.
  auto dense = dense_weight_grad(*c1, *x1);
  const auto dense2 = dense_weight_grad(*c2, *x2);
  for (std::size_t i = 0; i < dense.size(); ++i) dense[i] += dense2[i];

  for (std::size_t s = 0; s < layer.selection().size(); ++s) {
    const auto expect = block_of(dense, grid, layer.selection()[s]);
    for (std::size_t i = 0; i < expect.size(); ++i)
      CHECK(layer.grad_pack().values[s * 4 + i] ==
            doctest::Approx(expect[i]).epsilon(1e-12));
  }

  // dx flows densely through the full weight: dx_i = c_i . W.
  std::vector<double> dx_ref(3 * 4, 0.0);
  gemm_nn_acc(c1->data.data(), layer.weight()->data.data(), dx_ref.data(), 3, 6,
              4);
  CHECK(testutil::max_rel_err(x1->grad, dx_ref) == 0.0);

  // Counter audit: dense forward and dx, block-only dW, covered-column cache.
  CHECK(stats.fwd_flops == 2 * (3 + 2) * 4 * 6);
  CHECK(stats.dx_flops == 2 * (3 + 2) * 4 * 6);
  CHECK(stats.dw_flops == 2 * (3 + 2) * 2 * 2 * 2);
  CHECK(stats.cached_floats == (3 + 2) * 1 * 2);
}

TEST_CASE("inputs without gradients skip dx but still fill the pack") {
  testutil::Rng rng(81);
  BlockGrid grid = make_grid(4, 4, 2);
  SparseLinearLayer layer(testutil::rand_matrix(4, 4, rng), grid, {{1, 0}});

  auto x = testutil::rand_matrix(2, 4, rng);  // requires_grad = false
  auto c = testutil::rand_matrix(2, 4, rng);

  OpStats stats;
  Tape tape;
  auto z = sparse_apply(tape, layer, x, &stats);
  CHECK(z->requires_grad);
  tape.backward(tape.sum(tape.mul(z, c)));

  CHECK_FALSE(x->has_grad());
  CHECK(stats.dx_flops == 0);
  const auto dense = dense_weight_grad(*c, *x);
  const auto expect = block_of(dense, grid, {1, 0});
  for (std::size_t i = 0; i < expect.size(); ++i)
    CHECK(layer.grad_pack().values[i] == expect[i]);
}
