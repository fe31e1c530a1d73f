// Toy models: construction, determinism, causal masking, LoRA contracts, and
// per-layer instrumentation. Gradient checks lean on the finite-difference
// oracle from the test support header.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "smt/data.hpp"
#include "smt/model.hpp"
#include "support/test_util.hpp"

using namespace smt;

namespace {

ToyTransformerConfig small_tf() {
  ToyTransformerConfig cfg;
  cfg.vocab = 16;
  cfg.d_model = 32;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.d_mlp = 64;
  cfg.seq_len = 8;
  cfg.seed = 7;
  return cfg;
}

Batch copy_batch(const ToyTransformerConfig& cfg, std::uint64_t seed,
                 int batch_size = 2) {
  CopyTaskStream stream(cfg.vocab, cfg.seq_len, batch_size,
                        std::max(2, cfg.seq_len / 4), seed);
  return *stream.next();
}

}  // namespace

TEST_CASE("transformer exposes one role-tagged unit per matrix") {
  ToyTransformer model(small_tf());
  auto units = model.units();
  // 2 embeddings + 6 per block x 2 blocks + head.
  REQUIRE(units.size() == 15);

  std::set<std::string> ids;
  for (auto* u : units) ids.insert(u->id);
  CHECK(ids.count("embed.tok") == 1);
  CHECK(ids.count("embed.pos") == 1);
  CHECK(ids.count("blk00.attn_q") == 1);
  CHECK(ids.count("blk01.mlp_out") == 1);
  CHECK(ids.count("head") == 1);

  CHECK(model.find_unit("blk00.attn_v")->role == LayerRole::AttnV);
  CHECK(model.find_unit("blk01.attn_o")->role == LayerRole::AttnO);
  CHECK(model.find_unit("embed.tok")->role == LayerRole::Embed);
  CHECK(model.find_unit("nope") == nullptr);

  // tok 16x32 + pos 8x32 + 2 x (4 x 32x32 + 64x32 + 32x64) + head 16x32.
  CHECK(model.total_params() == 512 + 256 + 2 * (4096 + 2048 + 2048) + 512);

  ToyMlpConfig mcfg;
  mcfg.in_dim = 8;
  mcfg.hidden_dim = 16;
  mcfg.out_dim = 4;
  ToyMlp mlp(mcfg);
  CHECK(mlp.units().size() == 2);
  CHECK(mlp.total_params() == 16 * 8 + 4 * 16);
}

TEST_CASE("bad transformer configurations are rejected") {
  ToyTransformerConfig cfg = small_tf();
  cfg.d_model = 30;  // not divisible by 4 heads
  CHECK_THROWS_AS(ToyTransformer{cfg}, ConfigError);
  cfg = small_tf();
  cfg.vocab = 1;
  CHECK_THROWS_AS(ToyTransformer{cfg}, ConfigError);
  cfg = small_tf();
  cfg.n_layers = 0;
  CHECK_THROWS_AS(ToyTransformer{cfg}, ConfigError);

  ToyMlpConfig bad;
  bad.hidden_dim = 0;
  CHECK_THROWS_AS(ToyMlp{bad}, ConfigError);
}

TEST_CASE("seeds make initialization reproducible") {
  ToyTransformer a(small_tf());
  ToyTransformer b(small_tf());
  CHECK(a.weights_fingerprint() == b.weights_fingerprint());

  auto cfg = small_tf();
  cfg.seed = 8;
  ToyTransformer c(cfg);
  CHECK(a.weights_fingerprint() != c.weights_fingerprint());
}

TEST_CASE("loss is deterministic and starts near chance level") {
  ToyTransformer model(small_tf());
  Batch batch = copy_batch(small_tf(), 99);

  Tape t1, t2;
  const double l1 = model.loss(t1, batch)->scalar_value();
  const double l2 = model.loss(t2, batch)->scalar_value();
  CHECK(l1 == l2);

  // Random small-scale init keeps logits close to uniform, so the mean cross
  // entropy sits near log(vocab) = log 16.
  CHECK(l1 == doctest::Approx(std::log(16.0)).epsilon(0.2));

  // eval_batch averages the same per-sequence values.
  EvalBatchResult ev = model.eval_batch(batch);
  CHECK(ev.loss == doctest::Approx(l1).epsilon(1e-12));
  CHECK(ev.has_accuracy);
  CHECK(ev.prediction_count == 2 * 8);
  CHECK(ev.accuracy >= 0.0);
  CHECK(ev.accuracy <= 1.0);
}

TEST_CASE("causal mask keeps earlier positions blind to later tokens") {
  ToyTransformer model(small_tf());
  std::vector<int> a = {1, 2, 3, 4, 5, 6, 7, 8};
  std::vector<int> b = a;
  b[5] = 9;  // change one token in the middle

  Tensor la = model.logits(a);
  Tensor lb = model.logits(b);
  // Positions before the edit see identical context: identical logits.
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t j = 0; j < 16; ++j) CHECK(la.at(t, j) == lb.at(t, j));
  // The edited position itself must react.
  double moved = 0.0;
  for (std::size_t j = 0; j < 16; ++j)
    moved += std::abs(la.at(5, j) - lb.at(5, j));
  CHECK(moved > 0.0);
}

TEST_CASE("batch protocol errors") {
  ToyTransformer model(small_tf());
  Tape tape;
  Batch empty;
  CHECK_THROWS_AS(model.loss(tape, empty), DataError);

  Batch short_seq;
  short_seq.sequences = {{1, 2, 3}};  // needs seq_len + 1 = 9 tokens
  Tape tape2;
  CHECK_THROWS_AS(model.loss(tape2, short_seq), ShapeError);

  ToyMlp mlp(ToyMlpConfig{});
  Tape tape3;
  CHECK_THROWS_AS(mlp.loss(tape3, empty), DataError);
}

TEST_CASE("lora with a zero up-projection matches the base exactly") {
  ToyMlpConfig cfg;
  cfg.in_dim = 8;
  cfg.hidden_dim = 16;
  cfg.out_dim = 8;
  ToyMlp frozen(cfg), adapted(cfg);
  REQUIRE(frozen.weights_fingerprint() == adapted.weights_fingerprint());

  LinearUnit* u = adapted.find_unit("mlp.fc_in");
  u->mode = UnitMode::Lora;
  u->lora = std::make_unique<LoraAdapter>();
  u->lora->rank = 2;
  u->lora->scale = 1.0;
  testutil::Rng rng(4);
  u->lora->a = testutil::rand_matrix(2, 8, rng);  // r x k, random
  u->lora->b = Tensor::zeros(16, 2);              // d x r, zero
  CHECK(u->lora->param_count() == 2 * 8 + 16 * 2);

  TeacherRegressionStream stream(8, 8, 8, 4, 21, 22);
  Batch batch = *stream.next();
  Tape t1, t2;
  CHECK(frozen.loss(t1, batch)->scalar_value() ==
        adapted.loss(t2, batch)->scalar_value());
}

TEST_CASE("lora gradients flow through both adapter matrices") {
  ToyMlpConfig cfg;
  cfg.in_dim = 6;
  cfg.hidden_dim = 8;
  cfg.out_dim = 4;
  ToyMlp model(cfg);
  LinearUnit* u = model.find_unit("mlp.fc_in");
  u->mode = UnitMode::Lora;
  u->lora = std::make_unique<LoraAdapter>();
  u->lora->rank = 2;
  u->lora->scale = 0.5;
  testutil::Rng rng(14);
  u->lora->a = testutil::rand_matrix(2, 6, rng, -0.5, 0.5, true);
  u->lora->b = testutil::rand_matrix(8, 2, rng, -0.5, 0.5, true);

  TeacherRegressionStream stream(6, 6, 4, 3, 31, 32);
  Batch batch = *stream.next();
  const double worst = testutil::worst_grad_error(
      {u->lora->a, u->lora->b},
      [&](Tape& tape) { return model.loss(tape, batch); });
  CHECK(worst <= 1e-6);
}

TEST_CASE("transformer weight gradients agree with finite differences") {
  ToyTransformerConfig cfg;
  cfg.vocab = 8;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_mlp = 16;
  cfg.seq_len = 4;
  ToyTransformer model(cfg);
  Batch batch = copy_batch(cfg, 55);

  auto* q = model.find_unit("blk00.attn_q");
  auto* mo = model.find_unit("blk00.mlp_out");
  q->weight->requires_grad = true;
  mo->weight->requires_grad = true;
  const double worst = testutil::worst_grad_error(
      {q->weight, mo->weight},
      [&](Tape& tape) { return model.loss(tape, batch); });
  CHECK(worst <= 1e-6);
}

TEST_CASE("cumulative stats diff into exact per-step costs") {
  ToyMlpConfig cfg;
  cfg.in_dim = 8;
  cfg.hidden_dim = 16;
  cfg.out_dim = 8;
  ToyMlp model(cfg);
  for (auto* u : model.units()) {
    u->weight->requires_grad = true;
    u->weight->ensure_grad();
  }

  TeacherRegressionStream stream(8, 8, 8, 4, 61, 62);
  Batch batch = *stream.next();

  auto run_step = [&]() {
    for (auto* u : model.units()) u->weight->zero_grad();
    Tape tape;
    tape.backward(model.loss(tape, batch));
  };

  run_step();
  auto* fin = model.find_unit("mlp.fc_in");
  auto* fout = model.find_unit("mlp.fc_out");
  const OpStats snap_in = fin->stats, snap_out = fout->stats;

  // One forward: 2 n k d. The batch input tensor carries no gradient, so
  // fc_in skips dx; the hidden activation does, so fc_out pays for it.
  CHECK(snap_in.fwd_flops == 2 * 4 * 8 * 16);
  CHECK(snap_in.dx_flops == 0);
  CHECK(snap_in.dw_flops == 2 * 4 * 8 * 16);
  CHECK(snap_in.cached_floats == 4 * 8);
  CHECK(snap_out.fwd_flops == 2 * 4 * 16 * 8);
  CHECK(snap_out.dx_flops == 2 * 4 * 16 * 8);
  CHECK(snap_out.dw_flops == 2 * 4 * 16 * 8);
  CHECK(snap_out.cached_floats == 4 * 16);

  // Counters are cumulative; the second step's delta equals the first step.
  run_step();
  const OpStats delta = fin->stats - snap_in;
  CHECK(delta.fwd_flops == snap_in.fwd_flops);
  CHECK(delta.dw_flops == snap_in.dw_flops);
  CHECK(delta.cached_floats == snap_in.cached_floats);

  // Frozen weights cache nothing and pay no dW.
  model.reset_unit_stats();
  fin->weight->requires_grad = false;
  fout->weight->requires_grad = false;
  run_step();
  CHECK(fin->stats.dw_flops == 0);
  CHECK(fin->stats.cached_floats == 0);
  CHECK(fout->stats.dw_flops == 0);
}

TEST_CASE("role names round-trip") {
  for (LayerRole r : {LayerRole::AttnQ, LayerRole::AttnK, LayerRole::AttnV,
                      LayerRole::AttnO, LayerRole::MlpIn, LayerRole::MlpOut,
                      LayerRole::Embed, LayerRole::Head}) {
    CHECK(role_from_name(role_name(r)) == r);
  }
  CHECK_THROWS_AS(role_from_name("qkv"), ConfigError);
  CHECK(is_attention_role(LayerRole::AttnO));
  CHECK_FALSE(is_attention_role(LayerRole::Embed));
}
