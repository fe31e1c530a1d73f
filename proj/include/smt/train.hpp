#pragma once
// Training harness: one Trainer drives a model in one of three modes (dense
// full fine-tuning, block-sparse tuning, LoRA adapters) over a data stream,
// producing per-step records with loss and measured cost counters.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "smt/data.hpp"
#include "smt/model.hpp"
#include "smt/optimizer.hpp"
#include "smt/selector.hpp"

namespace smt {

enum class TrainMode { FullFt, Smt, Lora };

const char* train_mode_name(TrainMode mode);
TrainMode train_mode_from_name(const std::string& name);

enum class LrSchedule { Constant, LinearDecay };

struct TrainOptions {
  TrainMode mode = TrainMode::FullFt;
  long steps = 100;
  AdamHyper hyper;
  LrSchedule schedule = LrSchedule::Constant;
  // Block-sparse knobs. The policy also picks which units receive LoRA
  // adapters, so both methods tune the same layer family.
  AllocationPolicy policy;
  std::size_t block_side = 16;
  long warmup_iters = 25;
  bool abs_then_sum = false;
  // LoRA knobs.
  int lora_rank = 4;
  double lora_scale = 1.0;
  std::uint64_t seed = 0;
  // A preset selection skips the warm-up phase entirely (checkpoint resume,
  // selection files).
  std::optional<BlockSelection> preset_selection;
};

// Base learning rate shaped by the schedule; `step` is zero-based.
double scheduled_lr(const TrainOptions& opts, long step);

struct StepRecord {
  long step = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::size_t trainable_params = 0;
  // Measured per-step deltas of the layer counters.
  long long fwd_flops = 0;
  long long dx_flops = 0;
  long long dw_flops = 0;
  long long cache_floats = 0;
  // Resident optimizer moments (not a delta).
  std::size_t opt_state_floats = 0;
};

// Owns mode setup (freezing, sparse layers, adapters, optimizer state) for a
// model it does not own. Construction may consume warm-up batches from the
// stream; the stream is rewound afterwards so every mode fine-tunes on the
// same batch sequence.
class Trainer {
 public:
  Trainer(Model& model, DataStream& data, TrainOptions opts);

  StepRecord step();
  std::vector<StepRecord> run(long n_steps);

  long step_index() const { return step_index_; }
  void set_step_index(long step) { step_index_ = step; }  // checkpoint resume
  const TrainOptions& options() const { return opts_; }
  const BlockSelection& selection() const { return selection_; }
  std::size_t trainable_params() const { return trainable_params_; }

  // Mode-specific optimizer access for checkpointing; null when unused.
  BlockAdam* block_optimizer() { return block_opt_ ? &*block_opt_ : nullptr; }
  DenseAdam* dense_optimizer() { return dense_opt_ ? &*dense_opt_ : nullptr; }

  Model& model() { return model_; }

 private:
  void setup_full_ft();
  void setup_smt();
  void setup_lora();
  OpStats gather_stats();

  Model& model_;
  DataStream& data_;
  TrainOptions opts_;
  BlockSelection selection_;
  std::optional<BlockAdam> block_opt_;
  std::optional<DenseAdam> dense_opt_;
  std::vector<LinearUnit*> smt_units_;
  std::vector<TensorPtr> grad_params_;  // tensors whose grads we zero per step
  std::size_t trainable_params_ = 0;
  long step_index_ = 0;
};

struct EvalSummary {
  double loss = 0.0;
  double accuracy = 0.0;
  bool has_accuracy = false;
  long batches = 0;
  std::size_t predictions = 0;
};

// Rewinds the stream and averages eval_batch over up to `max_batches` batches
// (0 = until the stream ends, which requires a bounded stream).
EvalSummary evaluate(Model& model, DataStream& data, long max_batches);

}  // namespace smt
