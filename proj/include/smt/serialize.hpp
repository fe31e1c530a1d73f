#pragma once
// Artifact files: selection JSON, training checkpoints, per-step metrics
// records (one JSON object per line), and the sweep CSV. Every writer has a
// reader that restores an equal in-memory value; numbers survive the round
// trip exactly (shortest-representation doubles).

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "smt/cost_model.hpp"
#include "smt/selector.hpp"
#include "smt/train.hpp"

namespace smt {

inline constexpr int kArtifactFormatVersion = 1;

// ---- selections -----------------------------------------------------------

nlohmann::json selection_to_json(const BlockSelection& selection);
BlockSelection selection_from_json(const nlohmann::json& doc);

void save_selection(const std::string& path, const BlockSelection& selection);
BlockSelection load_selection(const std::string& path);

// ---- metrics --------------------------------------------------------------

nlohmann::json step_record_to_json(const StepRecord& rec);
StepRecord step_record_from_json(const nlohmann::json& doc);

void save_metrics(const std::string& path,
                  const std::vector<StepRecord>& records);
std::vector<StepRecord> load_metrics(const std::string& path);

// ---- checkpoints ----------------------------------------------------------

struct CheckpointHead {
  std::string mode;
  std::string model_name;
  long step = 0;
  std::uint64_t config_hash = 0;
  std::size_t data_position = 0;
  std::optional<BlockSelection> selection;
};

struct Checkpoint {
  CheckpointHead head;
  nlohmann::json doc;
};

// Full training state: weights, adapters, optimizer moments, and enough
// metadata to rebuild the trainer (mode, selection, stream position).
void save_checkpoint(const std::string& path, Trainer& trainer,
                     std::uint64_t config_hash, std::size_t data_position);
Checkpoint load_checkpoint(const std::string& path);
// Pours weights/adapters/optimizer state into an already-constructed trainer
// whose mode and selection match the checkpoint.
void restore_trainer(const Checkpoint& ckpt, Trainer& trainer);

// ---- cost reports ---------------------------------------------------------

nlohmann::json method_cost_to_json(const MethodCost& cost);
nlohmann::json cost_ratios_to_json(const CostRatios& ratios);

// ---- sweep ----------------------------------------------------------------

struct SweepRow {
  double fraction = 0.0;
  std::string mode;
  std::size_t trainable_params = 0;
  double final_train_loss = 0.0;
  double eval_loss = 0.0;
  double eval_accuracy = 0.0;
  bool has_accuracy = false;
  std::string error;  // empty on success; failed runs are recorded, not fatal
};

void save_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);
std::vector<SweepRow> load_sweep_csv(const std::string& path);
// One plot-ready series file per mode: fraction vs eval loss.
void save_sweep_series(const std::string& dir,
                       const std::vector<SweepRow>& rows);

// ---- shared helpers -------------------------------------------------------

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);
nlohmann::json parse_json_file(const std::string& path);

}  // namespace smt
