#include "smt/config.hpp"

#include <algorithm>

#include "smt/error.hpp"
#include "smt/serialize.hpp"
#include "smt/util.hpp"

namespace smt {

namespace {

using nlohmann::json;

template <typename T>
T field_or(const json& doc, const char* key, T fallback,
           const std::string& path) {
  if (!doc.contains(key)) return fallback;
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path + "." + key + ": " + e.what());
  }
}

void check_divisible(const std::string& what, int dim, std::size_t side) {
  if (side == 0 || static_cast<std::size_t>(dim) % side != 0)
    throw ConfigError("train.block_side " + std::to_string(side) +
                      " does not divide " + what + " = " + std::to_string(dim));
}

void validate(const RunConfig& cfg) {
  if (cfg.model_kind != "transformer" && cfg.model_kind != "mlp")
    throw ConfigError("model.kind must be 'transformer' or 'mlp', got '" +
                      cfg.model_kind + "'");
  if (cfg.batch_size < 1)
    throw ConfigError("data.batch_size must be >= 1, got " +
                      std::to_string(cfg.batch_size));
  if (cfg.epoch_batches < 1)
    throw ConfigError("data.epoch_batches must be >= 1, got " +
                      std::to_string(cfg.epoch_batches));
  if (cfg.model_kind == "transformer" && cfg.pattern_len != 0) {
    if (cfg.pattern_len < 1 || cfg.pattern_len > cfg.transformer.seq_len)
      throw ConfigError("data.pattern_len " + std::to_string(cfg.pattern_len) +
                        " must lie in [1, seq_len = " +
                        std::to_string(cfg.transformer.seq_len) + "]");
  }

  if (cfg.train.mode == TrainMode::Smt) {
    cfg.train.policy.validate();
    const std::size_t l = cfg.train.block_side;
    if (cfg.model_kind == "transformer") {
      // Attention weights are d_model x d_model; MLP weights touch d_mlp.
      check_divisible("model.d_model", cfg.transformer.d_model, l);
      const auto v = cfg.train.policy.variant;
      if (v == AllocationPolicy::Variant::MlpOnly ||
          v == AllocationPolicy::Variant::Mixed)
        check_divisible("model.d_mlp", cfg.transformer.d_mlp, l);
    } else {
      check_divisible("model.in_dim", cfg.mlp.in_dim, l);
      check_divisible("model.hidden_dim", cfg.mlp.hidden_dim, l);
      check_divisible("model.out_dim", cfg.mlp.out_dim, l);
    }
  }
  if (cfg.train.mode == TrainMode::Lora && cfg.train.lora_rank < 1)
    throw ConfigError("train.lora_rank must be >= 1, got " +
                      std::to_string(cfg.train.lora_rank));
  for (double f : cfg.sweep.fractions)
    if (!(f > 0.0) || f > 1.0)
      throw ConfigError("sweep.fractions entries must lie in (0, 1]");
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"copy-small", "copy-large", "teacher-small", "teacher-large"};
}

RunConfig preset_config(const std::string& name) {
  RunConfig cfg;
  cfg.preset = name;
  cfg.sweep.fractions = {0.0043, 0.0084, 0.0126, 0.0250, 0.0373, 0.0491};
  cfg.sweep.modes = {TrainMode::FullFt, TrainMode::Smt, TrainMode::Lora};

  if (name == "copy-small") {
    cfg.model_kind = "transformer";
    cfg.transformer = {16, 32, 1, 4, 64, 16, 7};
    cfg.train.policy.variant = AllocationPolicy::Variant::AttentionQkv;
    cfg.train.block_side = 8;
    cfg.train.warmup_iters = 25;
    cfg.train.hyper.lr = 3e-3;
    cfg.epoch_batches = 64;
  } else if (name == "copy-large") {
    cfg.model_kind = "transformer";
    cfg.transformer = {32, 64, 2, 4, 128, 32, 7};
    cfg.train.policy.variant = AllocationPolicy::Variant::AttentionQkv;
    cfg.train.block_side = 16;
    cfg.train.warmup_iters = 100;
    cfg.train.hyper.lr = 1e-3;
    cfg.epoch_batches = 256;
  } else if (name == "teacher-small") {
    cfg.model_kind = "mlp";
    cfg.mlp = {32, 64, 32, 11};
    cfg.train.policy.variant = AllocationPolicy::Variant::MlpOnly;
    cfg.train.block_side = 8;
    cfg.train.warmup_iters = 25;
    cfg.train.hyper.lr = 1e-2;
    cfg.epoch_batches = 64;
  } else if (name == "teacher-large") {
    cfg.model_kind = "mlp";
    cfg.mlp = {64, 128, 64, 11};
    cfg.train.policy.variant = AllocationPolicy::Variant::MlpOnly;
    cfg.train.block_side = 16;
    cfg.train.warmup_iters = 100;
    cfg.train.hyper.lr = 3e-3;
    cfg.epoch_batches = 256;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected one of " +
                      "copy-small, copy-large, teacher-small, teacher-large)");
  }
  cfg.train.policy.budget_fraction = 0.05;
  cfg.train.steps = 3 * cfg.epoch_batches;  // the three-epoch default
  return cfg;
}

int resolved_pattern_len(const RunConfig& cfg) {
  if (cfg.pattern_len > 0) return cfg.pattern_len;
  return std::max(2, cfg.transformer.seq_len / 4);
}

std::unique_ptr<Model> make_model(const RunConfig& cfg) {
  if (cfg.model_kind == "transformer")
    return std::make_unique<ToyTransformer>(cfg.transformer);
  return std::make_unique<ToyMlp>(cfg.mlp);
}

std::unique_ptr<DataStream> make_stream(const RunConfig& cfg,
                                        std::uint64_t seed_offset,
                                        std::size_t limit) {
  if (cfg.model_kind == "transformer")
    return std::make_unique<CopyTaskStream>(
        cfg.transformer.vocab, cfg.transformer.seq_len, cfg.batch_size,
        resolved_pattern_len(cfg), cfg.data_seed ^ seed_offset, limit);
  return std::make_unique<TeacherRegressionStream>(
      cfg.mlp.in_dim, cfg.mlp.hidden_dim, cfg.mlp.out_dim, cfg.batch_size,
      cfg.data_seed ^ seed_offset, cfg.teacher_seed, limit);
}

std::size_t tokens_per_step(const RunConfig& cfg) {
  if (cfg.model_kind == "transformer")
    return static_cast<std::size_t>(cfg.batch_size) *
           static_cast<std::size_t>(cfg.transformer.seq_len);
  return static_cast<std::size_t>(cfg.batch_size);
}

json config_to_json(const RunConfig& cfg) {
  json model{{"kind", cfg.model_kind}};
  if (cfg.model_kind == "transformer") {
    model["vocab"] = cfg.transformer.vocab;
    model["d_model"] = cfg.transformer.d_model;
    model["n_layers"] = cfg.transformer.n_layers;
    model["n_heads"] = cfg.transformer.n_heads;
    model["d_mlp"] = cfg.transformer.d_mlp;
    model["seq_len"] = cfg.transformer.seq_len;
    model["seed"] = cfg.transformer.seed;
  } else {
    model["in_dim"] = cfg.mlp.in_dim;
    model["hidden_dim"] = cfg.mlp.hidden_dim;
    model["out_dim"] = cfg.mlp.out_dim;
    model["seed"] = cfg.mlp.seed;
  }

  json train{{"mode", train_mode_name(cfg.train.mode)},
             {"steps", cfg.train.steps},
             {"lr", cfg.train.hyper.lr},
             {"beta1", cfg.train.hyper.beta1},
             {"beta2", cfg.train.hyper.beta2},
             {"eps", cfg.train.hyper.eps},
             {"weight_decay", cfg.train.hyper.weight_decay},
             {"schedule", cfg.train.schedule == LrSchedule::Constant
                              ? "constant"
                              : "linear_decay"},
             {"policy", AllocationPolicy::variant_name(
                            cfg.train.policy.variant)},
             {"budget_fraction", cfg.train.policy.budget_fraction},
             {"mlp_fraction", cfg.train.policy.mlp_fraction},
             {"attn_fraction", cfg.train.policy.attn_fraction},
             {"include_output_proj", cfg.train.policy.include_output_proj},
             {"block_side", cfg.train.block_side},
             {"warmup_iters", cfg.train.warmup_iters},
             {"abs_then_sum", cfg.train.abs_then_sum},
             {"lora_rank", cfg.train.lora_rank},
             {"lora_scale", cfg.train.lora_scale},
             {"seed", cfg.train.seed}};

  json modes = json::array();
  for (TrainMode m : cfg.sweep.modes) modes.push_back(train_mode_name(m));

  return json{{"preset", cfg.preset},
              {"model", std::move(model)},
              {"data",
               {{"batch_size", cfg.batch_size},
                {"pattern_len", cfg.pattern_len},
                {"seed", cfg.data_seed},
                {"teacher_seed", cfg.teacher_seed},
                {"epoch_batches", cfg.epoch_batches}}},
              {"train", std::move(train)},
              {"sweep",
               {{"fractions", cfg.sweep.fractions},
                {"modes", std::move(modes)},
                {"eval_batches", cfg.sweep.eval_batches}}},
              {"out_dir", cfg.out_dir}};
}

RunConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config: expected a JSON object");
  RunConfig cfg;
  if (doc.contains("preset") && !doc.at("preset").get<std::string>().empty())
    cfg = preset_config(doc.at("preset").get<std::string>());
  else
    cfg.model_kind = "transformer";

  if (doc.contains("model")) {
    const json& m = doc.at("model");
    cfg.model_kind = field_or<std::string>(m, "kind", cfg.model_kind, "model");
    cfg.transformer.vocab = field_or(m, "vocab", cfg.transformer.vocab, "model");
    cfg.transformer.d_model =
        field_or(m, "d_model", cfg.transformer.d_model, "model");
    cfg.transformer.n_layers =
        field_or(m, "n_layers", cfg.transformer.n_layers, "model");
    cfg.transformer.n_heads =
        field_or(m, "n_heads", cfg.transformer.n_heads, "model");
    cfg.transformer.d_mlp = field_or(m, "d_mlp", cfg.transformer.d_mlp, "model");
    cfg.transformer.seq_len =
        field_or(m, "seq_len", cfg.transformer.seq_len, "model");
    cfg.mlp.in_dim = field_or(m, "in_dim", cfg.mlp.in_dim, "model");
    cfg.mlp.hidden_dim = field_or(m, "hidden_dim", cfg.mlp.hidden_dim, "model");
    cfg.mlp.out_dim = field_or(m, "out_dim", cfg.mlp.out_dim, "model");
    const auto seed =
        field_or<std::uint64_t>(m, "seed", cfg.transformer.seed, "model");
    cfg.transformer.seed = seed;
    cfg.mlp.seed = seed;
  }

  if (doc.contains("data")) {
    const json& d = doc.at("data");
    cfg.batch_size = field_or(d, "batch_size", cfg.batch_size, "data");
    cfg.pattern_len = field_or(d, "pattern_len", cfg.pattern_len, "data");
    cfg.data_seed = field_or(d, "seed", cfg.data_seed, "data");
    cfg.teacher_seed =
        field_or(d, "teacher_seed", cfg.teacher_seed, "data");
    cfg.epoch_batches =
        field_or(d, "epoch_batches", cfg.epoch_batches, "data");
  }

  bool explicit_steps = false;
  if (doc.contains("train")) {
    const json& t = doc.at("train");
    if (t.contains("mode"))
      cfg.train.mode =
          train_mode_from_name(field_or<std::string>(t, "mode", "", "train"));
    explicit_steps = t.contains("steps");
    cfg.train.steps = field_or(t, "steps", cfg.train.steps, "train");
    cfg.train.hyper.lr = field_or(t, "lr", cfg.train.hyper.lr, "train");
    cfg.train.hyper.beta1 =
        field_or(t, "beta1", cfg.train.hyper.beta1, "train");
    cfg.train.hyper.beta2 =
        field_or(t, "beta2", cfg.train.hyper.beta2, "train");
    cfg.train.hyper.eps = field_or(t, "eps", cfg.train.hyper.eps, "train");
    cfg.train.hyper.weight_decay =
        field_or(t, "weight_decay", cfg.train.hyper.weight_decay, "train");
    if (t.contains("schedule")) {
      const auto s = field_or<std::string>(t, "schedule", "constant", "train");
      if (s == "constant")
        cfg.train.schedule = LrSchedule::Constant;
      else if (s == "linear_decay")
        cfg.train.schedule = LrSchedule::LinearDecay;
      else
        throw ConfigError("train.schedule: unknown schedule '" + s + "'");
    }
    if (t.contains("policy"))
      cfg.train.policy.variant = AllocationPolicy::variant_from_name(
          field_or<std::string>(t, "policy", "", "train"));
    cfg.train.policy.budget_fraction = field_or(
        t, "budget_fraction", cfg.train.policy.budget_fraction, "train");
    cfg.train.policy.mlp_fraction =
        field_or(t, "mlp_fraction", cfg.train.policy.mlp_fraction, "train");
    cfg.train.policy.attn_fraction =
        field_or(t, "attn_fraction", cfg.train.policy.attn_fraction, "train");
    cfg.train.policy.include_output_proj =
        field_or(t, "include_output_proj",
                 cfg.train.policy.include_output_proj, "train");
    cfg.train.block_side =
        field_or(t, "block_side", cfg.train.block_side, "train");
    cfg.train.warmup_iters =
        field_or(t, "warmup_iters", cfg.train.warmup_iters, "train");
    cfg.train.abs_then_sum =
        field_or(t, "abs_then_sum", cfg.train.abs_then_sum, "train");
    cfg.train.lora_rank =
        field_or(t, "lora_rank", cfg.train.lora_rank, "train");
    cfg.train.lora_scale =
        field_or(t, "lora_scale", cfg.train.lora_scale, "train");
    cfg.train.seed = field_or(t, "seed", cfg.train.seed, "train");
  }
  if (!explicit_steps) cfg.train.steps = 3 * cfg.epoch_batches;

  if (doc.contains("sweep")) {
    const json& s = doc.at("sweep");
    if (s.contains("fractions"))
      cfg.sweep.fractions =
          field_or<std::vector<double>>(s, "fractions", {}, "sweep");
    if (s.contains("modes")) {
      cfg.sweep.modes.clear();
      for (const auto& name :
           field_or<std::vector<std::string>>(s, "modes", {}, "sweep"))
        cfg.sweep.modes.push_back(train_mode_from_name(name));
    }
    cfg.sweep.eval_batches =
        field_or(s, "eval_batches", cfg.sweep.eval_batches, "sweep");
  }
  if (cfg.sweep.modes.empty())
    cfg.sweep.modes = {TrainMode::FullFt, TrainMode::Smt, TrainMode::Lora};

  cfg.out_dir = field_or<std::string>(doc, "out_dir", cfg.out_dir, "config");
  validate(cfg);
  return cfg;
}

RunConfig load_config(const std::string& path) {
  return config_from_json(parse_json_file(path));
}

std::uint64_t config_hash(const RunConfig& cfg) {
  return fnv1a64(config_to_json(cfg).dump());
}

}  // namespace smt
