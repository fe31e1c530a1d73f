#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "smt/blockmap.hpp"
#include "smt/config.hpp"
#include "smt/data.hpp"
#include "smt/error.hpp"
#include "smt/model.hpp"
#include "smt/train.hpp"

using namespace smt;

namespace {

ToyMlpConfig mlp_config() { return {8, 16, 8, 21}; }

TeacherRegressionStream teacher_stream(std::size_t limit = 0) {
  return TeacherRegressionStream(8, 16, 8, 4, 99, 55, limit);
}

// Hand-picked MLP selection: two blocks on fc_in, one on fc_out, side 4.
BlockSelection mlp_preset_selection() {
  BlockSelection sel;
  LayerSelection fc_in;
  fc_in.layer_id = "mlp.fc_in";
  fc_in.role = LayerRole::MlpIn;
  fc_in.grid = make_grid(16, 8, 4);
  fc_in.blocks = {{0, 0}, {2, 1}};
  LayerSelection fc_out;
  fc_out.layer_id = "mlp.fc_out";
  fc_out.role = LayerRole::MlpOut;
  fc_out.grid = make_grid(8, 16, 4);
  fc_out.blocks = {{1, 3}};
  sel.layers = {fc_in, fc_out};
  return sel;
}

TrainOptions smt_preset_options() {
  TrainOptions opts;
  opts.mode = TrainMode::Smt;
  opts.steps = 10;
  opts.block_side = 4;
  opts.policy.variant = AllocationPolicy::Variant::MlpOnly;
  opts.preset_selection = mlp_preset_selection();
  return opts;
}

}  // namespace

TEST_CASE("mode names round-trip") {
  for (TrainMode mode : {TrainMode::FullFt, TrainMode::Smt, TrainMode::Lora})
    CHECK(train_mode_from_name(train_mode_name(mode)) == mode);
  CHECK_THROWS_AS(train_mode_from_name("dense"), ConfigError);
}

TEST_CASE("full fine-tuning trains every unit densely") {
  ToyMlp model(mlp_config());
  auto stream = teacher_stream();
  TrainOptions opts;
  opts.mode = TrainMode::FullFt;
  opts.steps = 10;
  Trainer trainer(model, stream, opts);

  CHECK(trainer.trainable_params() == model.total_params());
  CHECK(trainer.trainable_params() == 256);
  CHECK(trainer.dense_optimizer() != nullptr);
  CHECK(trainer.block_optimizer() == nullptr);
  for (LinearUnit* unit : model.units())
    CHECK(unit->mode == UnitMode::DenseTrainable);
}

TEST_CASE("full fine-tuning step counters match the layer shapes") {
  ToyMlp model(mlp_config());
  auto stream = teacher_stream();
  TrainOptions opts;
  opts.mode = TrainMode::FullFt;
  opts.steps = 10;
  opts.hyper.lr = 1e-3;
  Trainer trainer(model, stream, opts);

  StepRecord first = trainer.step();
  CHECK(first.step == 0);
  CHECK(first.lr == 1e-3);
  CHECK(first.trainable_params == 256);
  // Both weights are 16x8-sized mats seeing 4 rows: 2*4*128 flops each.
  CHECK(first.fwd_flops == 2048);
  CHECK(first.dw_flops == 2048);
  // Only fc_out's input carries gradient; the data tensor does not.
  CHECK(first.dx_flops == 1024);
  CHECK(first.cache_floats == 4 * 8 + 4 * 16);
  CHECK(first.opt_state_floats == 2 * 256);
  CHECK(std::isfinite(first.loss));

  StepRecord second = trainer.step();
  CHECK(second.step == 1);
  CHECK(second.fwd_flops == first.fwd_flops);
  CHECK(second.dw_flops == first.dw_flops);
  CHECK(second.dx_flops == first.dx_flops);
  CHECK(second.cache_floats == first.cache_floats);
}

TEST_CASE("preset-selection block tuning: setup and counters") {
  ToyMlp model(mlp_config());
  auto stream = teacher_stream();
  Trainer trainer(model, stream, smt_preset_options());

  CHECK(trainer.trainable_params() == 3 * 16);
  CHECK(trainer.block_optimizer() != nullptr);
  CHECK(trainer.dense_optimizer() == nullptr);
  for (LinearUnit* unit : model.units()) {
    CHECK(unit->mode == UnitMode::Smt);
    REQUIRE(unit->smt != nullptr);
  }

  StepRecord rec = trainer.step();
  CHECK(rec.trainable_params == 48);
  CHECK(rec.fwd_flops == 2048);   // dense forward regardless of selection
  CHECK(rec.dx_flops == 1024);    // the hidden activation still needs dx
  // dW touches selected blocks only: 2*n*l^2*m per unit.
  CHECK(rec.dw_flops == 2 * 4 * 16 * 2 + 2 * 4 * 16 * 1);
  // Compressed caches cover {0,1} of fc_in's input and {3} of fc_out's.
  CHECK(rec.cache_floats == 4 * 4 * 2 + 4 * 4 * 1);
  CHECK(rec.opt_state_floats == 2 * 48);
}

TEST_CASE("block tuning leaves unselected weights bit-identical") {
  ToyMlp model(mlp_config());
  auto stream = teacher_stream();
  Trainer trainer(model, stream, smt_preset_options());

  LinearUnit* fc_in = model.find_unit("mlp.fc_in");
  REQUIRE(fc_in != nullptr);
  const std::vector<double> before = fc_in->weight->data;
  trainer.run(4);
  const std::vector<double>& after = fc_in->weight->data;

  const BlockGrid grid = make_grid(16, 8, 4);
  std::size_t changed = 0;
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t c = 0; c < 8; ++c) {
      const BlockIndex b{r / 4, c / 4};
      const bool selected = (b == BlockIndex{0, 0}) || (b == BlockIndex{2, 1});
      const std::size_t i = r * 8 + c;
      if (selected) {
        if (before[i] != after[i]) ++changed;
      } else {
        CHECK(before[i] == after[i]);
      }
    }
  CHECK(changed > 0);
  CHECK(grid.block_count() == 8);
}

TEST_CASE("warm-up selection rewinds the stream and keeps weights intact") {
  ToyMlp model(mlp_config());
  auto stream = teacher_stream();
  const std::uint64_t fp = model.weights_fingerprint();

  TrainOptions opts;
  opts.mode = TrainMode::Smt;
  opts.steps = 10;
  opts.block_side = 4;
  opts.warmup_iters = 5;
  opts.policy.variant = AllocationPolicy::Variant::MlpOnly;
  opts.policy.budget_fraction = 0.25;
  Trainer trainer(model, stream, opts);

  CHECK(model.weights_fingerprint() == fp);
  CHECK(stream.position() == 0);  // rewound: fine-tuning sees batch 0 first
  CHECK_FALSE(trainer.selection().empty());
  CHECK(trainer.trainable_params() <= 64);  // 0.25 * 256
  CHECK(trainer.trainable_params() > 0);

  trainer.step();
  CHECK(stream.position() == 1);
}

TEST_CASE("every mode consumes the same batch sequence") {
  // After construction each trainer must sit at stream position 0, so the
  // deterministic streams hand all modes identical fine-tuning batches.
  ToyMlpConfig cfg = mlp_config();
  for (TrainMode mode : {TrainMode::FullFt, TrainMode::Smt, TrainMode::Lora}) {
    ToyMlp model(cfg);
    auto stream = teacher_stream();
    TrainOptions opts;
    opts.mode = mode;
    opts.steps = 10;
    opts.block_side = 4;
    opts.warmup_iters = 5;
    opts.policy.variant = AllocationPolicy::Variant::MlpOnly;
    opts.policy.budget_fraction = 0.25;
    opts.lora_rank = 2;
    Trainer trainer(model, stream, opts);
    CHECK(stream.position() == 0);
    trainer.step();
    CHECK(stream.position() == 1);
  }
}

TEST_CASE("a preset selection skips the warm-up draws entirely") {
  ToyMlp model(mlp_config());
  auto stream = teacher_stream(3);  // too short for any warm-up
  TrainOptions opts = smt_preset_options();
  opts.warmup_iters = 50;
  opts.steps = 10;
  Trainer trainer(model, stream, opts);

  trainer.run(3);
  CHECK(trainer.step_index() == 3);
  try {
    trainer.step();
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(e.iterations_completed == 3);
  }
}

TEST_CASE("trainer configuration errors") {
  ToyMlp model(mlp_config());
  auto stream = teacher_stream();

  TrainOptions bad_steps;
  bad_steps.steps = 0;
  CHECK_THROWS_AS(Trainer(model, stream, bad_steps), ConfigError);

  TrainOptions tiny = smt_preset_options();
  tiny.preset_selection.reset();
  tiny.warmup_iters = 2;
  tiny.policy.budget_fraction = 1e-6;
  CHECK_THROWS_AS(Trainer(model, stream, tiny), EmptySelectionError);

  TrainOptions wrong_family;
  wrong_family.mode = TrainMode::Smt;
  wrong_family.block_side = 4;
  wrong_family.policy.variant = AllocationPolicy::Variant::AttentionQkv;
  CHECK_THROWS_AS(Trainer(model, stream, wrong_family), ConfigError);

  TrainOptions lora_none;
  lora_none.mode = TrainMode::Lora;
  lora_none.policy.variant = AllocationPolicy::Variant::AttentionQkv;
  CHECK_THROWS_AS(Trainer(model, stream, lora_none), ConfigError);

  TrainOptions lora_rank;
  lora_rank.mode = TrainMode::Lora;
  lora_rank.policy.variant = AllocationPolicy::Variant::MlpOnly;
  lora_rank.lora_rank = 0;
  CHECK_THROWS_AS(Trainer(model, stream, lora_rank), ConfigError);
}

TEST_CASE("learning-rate schedules") {
  TrainOptions opts;
  opts.hyper.lr = 0.2;
  opts.steps = 4;

  opts.schedule = LrSchedule::Constant;
  for (long s = 0; s < 4; ++s) CHECK(scheduled_lr(opts, s) == 0.2);

  opts.schedule = LrSchedule::LinearDecay;
  CHECK(scheduled_lr(opts, 0) == doctest::Approx(0.2));
  CHECK(scheduled_lr(opts, 1) == doctest::Approx(0.15));
  CHECK(scheduled_lr(opts, 2) == doctest::Approx(0.10));
  CHECK(scheduled_lr(opts, 3) == doctest::Approx(0.05));

  // The records carry the scheduled value.
  ToyMlp model(mlp_config());
  auto stream = teacher_stream();
  opts.mode = TrainMode::FullFt;
  Trainer trainer(model, stream, opts);
  auto records = trainer.run(4);
  REQUIRE(records.size() == 4);
  CHECK(records[0].lr == doctest::Approx(0.2));
  CHECK(records[3].lr == doctest::Approx(0.05));
  for (std::size_t i = 0; i < records.size(); ++i)
    CHECK(records[i].step == static_cast<long>(i));
}

TEST_CASE("adapter mode freezes base weights and counts r*(d+k) params") {
  ToyMlp model(mlp_config());
  auto stream = teacher_stream();
  TrainOptions opts;
  opts.mode = TrainMode::Lora;
  opts.steps = 10;
  opts.lora_rank = 2;
  opts.policy.variant = AllocationPolicy::Variant::MlpOnly;
  Trainer trainer(model, stream, opts);

  CHECK(trainer.trainable_params() == 2 * (16 + 8) + 2 * (8 + 16));
  CHECK(trainer.dense_optimizer() != nullptr);

  std::vector<std::vector<double>> before;
  for (LinearUnit* unit : model.units()) {
    CHECK(unit->mode == UnitMode::Lora);
    REQUIRE(unit->lora != nullptr);
    before.push_back(unit->weight->data);
  }
  auto records = trainer.run(3);
  std::size_t i = 0;
  for (LinearUnit* unit : model.units())
    CHECK(unit->weight->data == before[i++]);  // base stays bit-identical
  for (const StepRecord& rec : records) CHECK(std::isfinite(rec.loss));
}

TEST_CASE("evaluate averages over a bounded held-out stream") {
  ToyTransformerConfig cfg{16, 32, 1, 4, 64, 8, 7};
  ToyTransformer model(cfg);
  CopyTaskStream eval(16, 8, 2, 3, 31, 3);

  EvalSummary a = evaluate(model, eval, 5);
  CHECK(a.batches == 3);  // stream limit binds before max_batches
  CHECK(a.has_accuracy);
  CHECK(a.predictions == 3 * 2 * 8);
  CHECK(std::isfinite(a.loss));
  CHECK(a.accuracy >= 0.0);
  CHECK(a.accuracy <= 1.0);

  EvalSummary b = evaluate(model, eval, 5);  // rewinds internally
  CHECK(b.loss == a.loss);
  CHECK(b.accuracy == a.accuracy);

  EvalSummary capped = evaluate(model, eval, 2);
  CHECK(capped.batches == 2);

  ToyMlp mlp(mlp_config());
  auto teacher = teacher_stream(2);
  EvalSummary m = evaluate(mlp, teacher, 0);  // 0 = until the stream ends
  CHECK(m.batches == 2);
  CHECK_FALSE(m.has_accuracy);
}

TEST_CASE("training reduces teacher-regression loss") {
  ToyMlp model(mlp_config());
  auto stream = teacher_stream();
  TrainOptions opts;
  opts.mode = TrainMode::FullFt;
  opts.steps = 60;
  opts.hyper.lr = 1e-2;
  Trainer trainer(model, stream, opts);
  auto records = trainer.run(60);
  double early = 0.0, late = 0.0;
  for (int i = 0; i < 5; ++i) early += records[i].loss;
  for (int i = 55; i < 60; ++i) late += records[i].loss;
  CHECK(late < early);
}
