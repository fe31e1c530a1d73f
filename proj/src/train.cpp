#include "smt/train.hpp"

#include <cmath>

#include "smt/error.hpp"
#include "smt/util.hpp"

namespace smt {

namespace {

constexpr double kLoraInitStd = 0.02;

}  // namespace

const char* train_mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::FullFt: return "full_ft";
    case TrainMode::Smt: return "smt";
    case TrainMode::Lora: return "lora";
  }
  return "?";
}

TrainMode train_mode_from_name(const std::string& name) {
  for (TrainMode m : {TrainMode::FullFt, TrainMode::Smt, TrainMode::Lora}) {
    if (name == train_mode_name(m)) return m;
  }
  throw ConfigError("unknown training mode '" + name + "'");
}

double scheduled_lr(const TrainOptions& opts, long step) {
  switch (opts.schedule) {
    case LrSchedule::Constant:
      return opts.hyper.lr;
    case LrSchedule::LinearDecay: {
      const double total = static_cast<double>(opts.steps > 0 ? opts.steps : 1);
      const double remaining = static_cast<double>(opts.steps - step);
      return opts.hyper.lr * (remaining > 0.0 ? remaining / total : 0.0);
    }
  }
  return opts.hyper.lr;
}

Trainer::Trainer(Model& model, DataStream& data, TrainOptions opts)
    : model_(model), data_(data), opts_(std::move(opts)) {
  if (opts_.steps < 1)
    throw ConfigError("trainer: steps must be >= 1, got " +
                      std::to_string(opts_.steps));
  switch (opts_.mode) {
    case TrainMode::FullFt: setup_full_ft(); break;
    case TrainMode::Smt: setup_smt(); break;
    case TrainMode::Lora: setup_lora(); break;
  }
  model_.reset_unit_stats();
}

void Trainer::setup_full_ft() {
  dense_opt_.emplace(opts_.hyper);
  for (LinearUnit* u : model_.units()) {
    u->mode = UnitMode::DenseTrainable;
    u->weight->requires_grad = true;
    u->weight->ensure_grad();
    dense_opt_->track(u->id, u->weight);
    grad_params_.push_back(u->weight);
  }
  trainable_params_ = model_.total_params();
}

void Trainer::setup_smt() {
  if (opts_.preset_selection) {
    selection_ = *opts_.preset_selection;
  } else {
    WarmupOptions wopts;
    wopts.n_iters = opts_.warmup_iters;
    wopts.policy = opts_.policy;
    wopts.block_side = opts_.block_side;
    wopts.abs_then_sum = opts_.abs_then_sum;
    wopts.seed = opts_.seed;
    selection_ = run_warmup(model_, data_, wopts).selection;
    // Rewind so fine-tuning consumes the same batch sequence as the other
    // modes, which never spend batches on warm-up.
    data_.reset();
  }
  if (selection_.empty())
    throw EmptySelectionError(
        "smt: budget fraction " +
        std::to_string(opts_.policy.budget_fraction) +
        " buys no whole " + std::to_string(opts_.block_side) + "x" +
        std::to_string(opts_.block_side) + " block");

  block_opt_.emplace(opts_.hyper);
  for (LinearUnit* u : model_.units()) {
    u->weight->requires_grad = false;
    const LayerSelection* sel = selection_.find(u->id);
    if (!sel) {
      u->mode = UnitMode::Frozen;
      continue;
    }
    if (sel->grid.rows_d != u->rows() || sel->grid.cols_k != u->cols())
      throw ShapeError("smt: selection grid " +
                       std::to_string(sel->grid.rows_d) + "x" +
                       std::to_string(sel->grid.cols_k) +
                       " does not match unit '" + u->id + "' " +
                       u->weight->shape_str());
    u->mode = UnitMode::Smt;
    u->smt = std::make_unique<SparseLinearLayer>(u->weight, sel->grid,
                                                 sel->blocks);
    block_opt_->register_layer(u->id, *u->smt);
    smt_units_.push_back(u);
  }
  if (smt_units_.empty())
    throw ConfigError("smt: selection names no unit of model '" +
                      model_.name() + "'");
  trainable_params_ = selection_.selected_params();
}

void Trainer::setup_lora() {
  if (opts_.lora_rank < 1)
    throw ConfigError("lora: rank must be >= 1, got " +
                      std::to_string(opts_.lora_rank));
  dense_opt_.emplace(opts_.hyper);
  std::size_t adapted = 0;
  for (LinearUnit* u : model_.units()) {
    u->weight->requires_grad = false;
    if (!opts_.policy.eligible(u->role)) {
      u->mode = UnitMode::Frozen;
      continue;
    }
    u->mode = UnitMode::Lora;
    u->lora = std::make_unique<LoraAdapter>();
    u->lora->rank = opts_.lora_rank;
    u->lora->scale = opts_.lora_scale;
    const auto r = static_cast<std::size_t>(opts_.lora_rank);
    // Down-projection random, up-projection zero: the adapted layer starts
    // exactly equal to the frozen base.
    std::uint64_t rng = opts_.seed ^ fnv1a64(u->id);
    u->lora->a = Tensor::zeros(r, u->cols(), true);
    for (auto& v : u->lora->a->data) v = kLoraInitStd * normal_sample(rng);
    u->lora->b = Tensor::zeros(u->rows(), r, true);
    u->lora->a->ensure_grad();
    u->lora->b->ensure_grad();
    dense_opt_->track(u->id + ".lora_a", u->lora->a);
    dense_opt_->track(u->id + ".lora_b", u->lora->b);
    grad_params_.push_back(u->lora->a);
    grad_params_.push_back(u->lora->b);
    trainable_params_ += u->lora->param_count();
    ++adapted;
  }
  if (adapted == 0)
    throw ConfigError("lora: policy matches no layer of model '" +
                      model_.name() + "'");
}

OpStats Trainer::gather_stats() {
  OpStats total;
  for (LinearUnit* u : model_.units()) {
    total.fwd_flops += u->stats.fwd_flops;
    total.dx_flops += u->stats.dx_flops;
    total.dw_flops += u->stats.dw_flops;
    total.cached_floats += u->stats.cached_floats;
    if (u->lora) {
      total.fwd_flops += u->lora->stats.fwd_flops;
      total.dx_flops += u->lora->stats.dx_flops;
      total.dw_flops += u->lora->stats.dw_flops;
      total.cached_floats += u->lora->stats.cached_floats;
    }
  }
  return total;
}

StepRecord Trainer::step() {
  const OpStats before = gather_stats();

  for (const TensorPtr& p : grad_params_) p->zero_grad();
  for (LinearUnit* u : smt_units_) u->smt->grad_pack().zero();

  auto batch = data_.next();
  if (!batch)
    throw DataError("trainer: data stream exhausted at step " +
                    std::to_string(step_index_),
                    step_index_);

  Tape tape;
  auto loss = model_.loss(tape, *batch);
  tape.backward(loss);

  const double lr = scheduled_lr(opts_, step_index_);
  if (opts_.mode == TrainMode::Smt) {
    for (LinearUnit* u : smt_units_)
      block_opt_->step(u->id, *u->smt, u->smt->grad_pack(), lr);
  } else {
    dense_opt_->step(lr);
  }

  const OpStats delta = gather_stats() - before;
  StepRecord rec;
  rec.step = step_index_;
  rec.loss = loss->scalar_value();
  rec.lr = lr;
  rec.trainable_params = trainable_params_;
  rec.fwd_flops = delta.fwd_flops;
  rec.dx_flops = delta.dx_flops;
  rec.dw_flops = delta.dw_flops;
  rec.cache_floats = delta.cached_floats;
  rec.opt_state_floats =
      block_opt_ ? block_opt_->state_floats() : dense_opt_->state_floats();
  step_index_ += 1;
  return rec;
}

std::vector<StepRecord> Trainer::run(long n_steps) {
  std::vector<StepRecord> records;
  records.reserve(static_cast<std::size_t>(n_steps > 0 ? n_steps : 0));
  for (long i = 0; i < n_steps; ++i) records.push_back(step());
  return records;
}

EvalSummary evaluate(Model& model, DataStream& data, long max_batches) {
  data.reset();
  EvalSummary summary;
  double loss_sum = 0.0;
  double correct_weighted = 0.0;
  while (max_batches <= 0 || summary.batches < max_batches) {
    auto batch = data.next();
    if (!batch) break;
    const EvalBatchResult res = model.eval_batch(*batch);
    loss_sum += res.loss;
    if (res.has_accuracy) {
      summary.has_accuracy = true;
      correct_weighted +=
          res.accuracy * static_cast<double>(res.prediction_count);
    }
    summary.predictions += res.prediction_count;
    summary.batches += 1;
  }
  if (summary.batches == 0)
    throw DataError("evaluate: stream yielded no batches");
  summary.loss = loss_sum / static_cast<double>(summary.batches);
  if (summary.has_accuracy && summary.predictions > 0)
    summary.accuracy =
        correct_weighted / static_cast<double>(summary.predictions);
  return summary;
}

}  // namespace smt
