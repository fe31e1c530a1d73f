#pragma once
// Run configuration: JSON-backed knobs resolved against named presets, plus
// factories for the model and data stream a config describes. The canonical
// JSON dump doubles as the config fingerprint checked on checkpoint resume.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "smt/data.hpp"
#include "smt/model.hpp"
#include "smt/train.hpp"

namespace smt {

struct SweepConfig {
  std::vector<double> fractions;  // budget fractions of total parameters
  std::vector<TrainMode> modes;
  long eval_batches = 16;
};

struct RunConfig {
  std::string preset;      // empty = fully explicit config
  std::string model_kind;  // "transformer" | "mlp"
  ToyTransformerConfig transformer;
  ToyMlpConfig mlp;

  int batch_size = 8;
  int pattern_len = 0;  // 0 resolves to max(2, seq_len / 4)
  std::uint64_t data_seed = 1234;
  std::uint64_t teacher_seed = 4321;
  long epoch_batches = 64;  // one "epoch" of the unbounded stream

  TrainOptions train;
  SweepConfig sweep;
  std::string out_dir = "runs";
};

std::vector<std::string> preset_names();
// Named starting points; explicit config fields override preset values.
RunConfig preset_config(const std::string& name);

int resolved_pattern_len(const RunConfig& cfg);
std::unique_ptr<Model> make_model(const RunConfig& cfg);
// Fine-tuning stream; `seed_offset` derives held-out streams from the same
// config, `limit` bounds the batch count (0 = unbounded).
std::unique_ptr<DataStream> make_stream(const RunConfig& cfg,
                                        std::uint64_t seed_offset = 0,
                                        std::size_t limit = 0);
// Rows flowing through each linear layer per step (cost-model input).
std::size_t tokens_per_step(const RunConfig& cfg);

nlohmann::json config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const nlohmann::json& doc);
RunConfig load_config(const std::string& path);
std::uint64_t config_hash(const RunConfig& cfg);

}  // namespace smt
