#include "smt/serialize.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "smt/error.hpp"
#include "smt/util.hpp"

namespace smt {

namespace {

using nlohmann::json;

void require_version(const json& doc, const std::string& what) {
  if (!doc.contains("format_version") ||
      !doc["format_version"].is_number_integer())
    throw ConfigError(what + ": missing format_version");
  const int v = doc["format_version"].get<int>();
  if (v != kArtifactFormatVersion)
    throw ConfigError(what + ": format_version " + std::to_string(v) +
                      " is not supported (expected " +
                      std::to_string(kArtifactFormatVersion) + ")");
}

json grid_to_json(const BlockGrid& grid) {
  return json{{"rows", grid.rows_d},
              {"cols", grid.cols_k},
              {"block_side", grid.side_l}};
}

BlockGrid grid_from_json(const json& doc) {
  return make_grid(doc.at("rows").get<std::size_t>(),
                   doc.at("cols").get<std::size_t>(),
                   doc.at("block_side").get<std::size_t>());
}

std::vector<double> doubles_from_json(const json& doc, const std::string& what,
                                      std::size_t expected) {
  if (!doc.is_array())
    throw ConfigError(what + ": expected an array of numbers");
  auto out = doc.get<std::vector<double>>();
  if (out.size() != expected)
    throw ShapeError(what + ": holds " + std::to_string(out.size()) +
                     " values, expected " + std::to_string(expected));
  return out;
}

}  // namespace

// ---- shared helpers -------------------------------------------------------

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("failed while writing '" + path + "'");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

nlohmann::json parse_json_file(const std::string& path) {
  const std::string text = read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path + "': " + e.what());
  }
}

// ---- selections -----------------------------------------------------------

json selection_to_json(const BlockSelection& selection) {
  json layers = json::array();
  for (const auto& layer : selection.layers) {
    json blocks = json::array();
    for (const auto& b : layer.blocks)
      blocks.push_back(json::array({b.row_block, b.col_block}));
    json entry{{"layer_id", layer.layer_id},
               {"role", role_name(layer.role)},
               {"grid", grid_to_json(layer.grid)},
               {"blocks", std::move(blocks)}};
    if (!layer.scores.empty()) entry["scores"] = layer.scores;
    layers.push_back(std::move(entry));
  }
  return json{{"format_version", kArtifactFormatVersion},
              {"provenance",
               {{"warmup_iters", selection.provenance.warmup_iters},
                {"policy", selection.provenance.policy},
                {"budget_fraction", selection.provenance.budget_fraction},
                {"seed", selection.provenance.seed}}},
              {"layers", std::move(layers)}};
}

BlockSelection selection_from_json(const json& doc) {
  require_version(doc, "selection");
  BlockSelection sel;
  const auto& prov = doc.at("provenance");
  sel.provenance.warmup_iters = prov.at("warmup_iters").get<long>();
  sel.provenance.policy = prov.at("policy").get<std::string>();
  sel.provenance.budget_fraction = prov.at("budget_fraction").get<double>();
  sel.provenance.seed = prov.at("seed").get<std::uint64_t>();
  for (const auto& entry : doc.at("layers")) {
    LayerSelection layer;
    layer.layer_id = entry.at("layer_id").get<std::string>();
    layer.role = role_from_name(entry.at("role").get<std::string>());
    layer.grid = grid_from_json(entry.at("grid"));
    for (const auto& b : entry.at("blocks")) {
      if (!b.is_array() || b.size() != 2)
        throw ConfigError("selection: block entries must be [row, col] pairs");
      const BlockIndex idx{b[0].get<std::size_t>(), b[1].get<std::size_t>()};
      block_slice(layer.grid, idx);  // bounds check against the grid
      layer.blocks.push_back(idx);
    }
    if (entry.contains("scores")) {
      layer.scores = entry["scores"].get<std::vector<double>>();
      if (layer.scores.size() != layer.blocks.size())
        throw ShapeError("selection: layer '" + layer.layer_id + "' has " +
                         std::to_string(layer.scores.size()) +
                         " scores for " + std::to_string(layer.blocks.size()) +
                         " blocks");
    }
    sel.layers.push_back(std::move(layer));
  }
  return sel;
}

void save_selection(const std::string& path, const BlockSelection& selection) {
  write_text_file(path, selection_to_json(selection).dump(2) + "\n");
}

BlockSelection load_selection(const std::string& path) {
  return selection_from_json(parse_json_file(path));
}

// ---- metrics --------------------------------------------------------------

json step_record_to_json(const StepRecord& rec) {
  return json{{"step", rec.step},
              {"loss", rec.loss},
              {"lr", rec.lr},
              {"trainable_params", rec.trainable_params},
              {"fwd_flops", rec.fwd_flops},
              {"dx_flops", rec.dx_flops},
              {"dw_flops", rec.dw_flops},
              {"cache_floats", rec.cache_floats},
              {"opt_state_floats", rec.opt_state_floats}};
}

StepRecord step_record_from_json(const json& doc) {
  StepRecord rec;
  rec.step = doc.at("step").get<long>();
  rec.loss = doc.at("loss").get<double>();
  rec.lr = doc.at("lr").get<double>();
  rec.trainable_params = doc.at("trainable_params").get<std::size_t>();
  rec.fwd_flops = doc.at("fwd_flops").get<long long>();
  rec.dx_flops = doc.at("dx_flops").get<long long>();
  rec.dw_flops = doc.at("dw_flops").get<long long>();
  rec.cache_floats = doc.at("cache_floats").get<long long>();
  rec.opt_state_floats = doc.at("opt_state_floats").get<std::size_t>();
  return rec;
}

void save_metrics(const std::string& path,
                  const std::vector<StepRecord>& records) {
  std::string text;
  for (const auto& rec : records) text += step_record_to_json(rec).dump() + "\n";
  write_text_file(path, text);
}

std::vector<StepRecord> load_metrics(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::vector<StepRecord> records;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(step_record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ConfigError("'" + path + "' line " + std::to_string(line_no) +
                        ": " + e.what());
    }
  }
  return records;
}

// ---- checkpoints ----------------------------------------------------------

void save_checkpoint(const std::string& path, Trainer& trainer,
                     std::uint64_t config_hash, std::size_t data_position) {
  json doc;
  doc["format_version"] = kArtifactFormatVersion;
  doc["mode"] = train_mode_name(trainer.options().mode);
  doc["model"] = trainer.model().name();
  doc["step"] = trainer.step_index();
  doc["config_hash"] = hex64(config_hash);
  doc["data_position"] = data_position;

  json weights = json::object();
  json lora = json::object();
  for (LinearUnit* u : trainer.model().units()) {
    weights[u->id] = u->weight->data;
    if (u->lora) {
      lora[u->id] = json{{"rank", u->lora->rank},
                         {"scale", u->lora->scale},
                         {"a", u->lora->a->data},
                         {"b", u->lora->b->data}};
    }
  }
  doc["weights"] = std::move(weights);
  if (!lora.empty()) doc["lora"] = std::move(lora);

  if (DenseAdam* opt = trainer.dense_optimizer()) {
    json states = json::object();
    for (const auto& [id, st] : opt->states())
      states[id] = json{{"t", st.t}, {"m", st.m}, {"v", st.v}};
    doc["dense_adam"] = std::move(states);
  }
  if (BlockAdam* opt = trainer.block_optimizer()) {
    json states = json::object();
    for (const auto& [id, st] : opt->states())
      states[id] = json{{"t", st.t}, {"m", st.m}, {"v", st.v}};
    doc["block_adam"] = std::move(states);
  }
  if (!trainer.selection().empty())
    doc["selection"] = selection_to_json(trainer.selection());

  write_text_file(path, doc.dump() + "\n");
}

Checkpoint load_checkpoint(const std::string& path) {
  Checkpoint ckpt;
  ckpt.doc = parse_json_file(path);
  require_version(ckpt.doc, "checkpoint");
  try {
    ckpt.head.mode = ckpt.doc.at("mode").get<std::string>();
    ckpt.head.model_name = ckpt.doc.at("model").get<std::string>();
    ckpt.head.step = ckpt.doc.at("step").get<long>();
    ckpt.head.config_hash =
        std::stoull(ckpt.doc.at("config_hash").get<std::string>(), nullptr, 16);
    ckpt.head.data_position = ckpt.doc.at("data_position").get<std::size_t>();
    if (ckpt.doc.contains("selection"))
      ckpt.head.selection = selection_from_json(ckpt.doc["selection"]);
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint '" + path + "': " + e.what());
  }
  return ckpt;
}

void restore_trainer(const Checkpoint& ckpt, Trainer& trainer) {
  if (ckpt.head.mode != train_mode_name(trainer.options().mode))
    throw ConfigError("checkpoint was written in mode '" + ckpt.head.mode +
                      "', trainer runs '" +
                      train_mode_name(trainer.options().mode) + "'");
  if (ckpt.head.model_name != trainer.model().name())
    throw ConfigError("checkpoint model '" + ckpt.head.model_name +
                      "' does not match '" + trainer.model().name() + "'");

  for (const auto& [id, values] : ckpt.doc.at("weights").items()) {
    LinearUnit* u = trainer.model().find_unit(id);
    if (!u)
      throw ConfigError("checkpoint names unknown unit '" + id + "'");
    u->weight->data = doubles_from_json(values, "checkpoint weight '" + id +
                                        "'", u->weight->numel());
  }

  if (ckpt.doc.contains("lora")) {
    for (const auto& [id, entry] : ckpt.doc["lora"].items()) {
      LinearUnit* u = trainer.model().find_unit(id);
      if (!u || !u->lora)
        throw ConfigError("checkpoint adapter for '" + id +
                          "' has no matching lora unit");
      if (entry.at("rank").get<int>() != u->lora->rank)
        throw ConfigError("checkpoint adapter rank " +
                          std::to_string(entry.at("rank").get<int>()) +
                          " does not match configured rank " +
                          std::to_string(u->lora->rank) + " for '" + id + "'");
      u->lora->scale = entry.at("scale").get<double>();
      u->lora->a->data = doubles_from_json(entry.at("a"), "adapter a of '" +
                                           id + "'", u->lora->a->numel());
      u->lora->b->data = doubles_from_json(entry.at("b"), "adapter b of '" +
                                           id + "'", u->lora->b->numel());
    }
  }

  if (ckpt.doc.contains("dense_adam")) {
    DenseAdam* opt = trainer.dense_optimizer();
    if (!opt)
      throw ConfigError("checkpoint carries dense optimizer state, but the "
                        "trainer has none");
    for (const auto& [id, entry] : ckpt.doc["dense_adam"].items()) {
      auto it = opt->states().find(id);
      if (it == opt->states().end())
        throw ConfigError("checkpoint optimizer state for unknown param '" +
                          id + "'");
      it->second.t = entry.at("t").get<long>();
      it->second.m = doubles_from_json(entry.at("m"), "adam m of '" + id + "'",
                                       it->second.m.size());
      it->second.v = doubles_from_json(entry.at("v"), "adam v of '" + id + "'",
                                       it->second.v.size());
    }
  }
  if (ckpt.doc.contains("block_adam")) {
    BlockAdam* opt = trainer.block_optimizer();
    if (!opt)
      throw ConfigError("checkpoint carries block optimizer state, but the "
                        "trainer has none");
    for (const auto& [id, entry] : ckpt.doc["block_adam"].items()) {
      auto it = opt->states().find(id);
      if (it == opt->states().end())
        throw ConfigError("checkpoint block state for unknown layer '" + id +
                          "'");
      it->second.t = entry.at("t").get<long>();
      it->second.m = doubles_from_json(entry.at("m"), "adam m of '" + id + "'",
                                       it->second.m.size());
      it->second.v = doubles_from_json(entry.at("v"), "adam v of '" + id + "'",
                                       it->second.v.size());
    }
  }
  trainer.set_step_index(ckpt.head.step);
}

// ---- cost reports ---------------------------------------------------------

json method_cost_to_json(const MethodCost& cost) {
  return json{{"method", cost.method},
              {"trainable_params", cost.trainable_params},
              {"fwd_flops", cost.fwd_flops},
              {"bwd_dx_flops", cost.bwd_dx_flops},
              {"bwd_dw_flops", cost.bwd_dw_flops},
              {"update_flops", cost.update_flops},
              {"cache_floats", cost.cache_floats},
              {"grad_floats", cost.grad_floats},
              {"opt_state_floats", cost.opt_state_floats},
              {"param_bytes", cost.param_bytes},
              {"grad_bytes", cost.grad_bytes},
              {"optimizer_bytes", cost.optimizer_bytes},
              {"activation_bytes", cost.activation_bytes}};
}

json cost_ratios_to_json(const CostRatios& ratios) {
  return json{{"bwd_dw", ratios.bwd_dw},     {"optimizer", ratios.optimizer},
              {"grad", ratios.grad},         {"update", ratios.update},
              {"activation", ratios.activation}, {"fwd", ratios.fwd}};
}

// ---- sweep ----------------------------------------------------------------

void save_sweep_csv(const std::string& path,
                    const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "fraction,mode,trainable_params,final_train_loss,eval_loss,"
         "eval_accuracy,error\n";
  out.precision(17);
  for (const auto& row : rows) {
    out << row.fraction << ',' << row.mode << ',' << row.trainable_params
        << ',' << row.final_train_loss << ',' << row.eval_loss << ',';
    if (row.has_accuracy) out << row.eval_accuracy;
    out << ',' << row.error << '\n';
  }
  write_text_file(path, out.str());
}

std::vector<SweepRow> load_sweep_csv(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) ||
      line != "fraction,mode,trainable_params,final_train_loss,eval_loss,"
              "eval_accuracy,error")
    throw ConfigError("sweep csv " + path + ": unrecognized header");
  std::vector<SweepRow> rows;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    // The error field comes last and is not quoted, so split on the first six
    // commas only and keep the remainder verbatim.
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (int i = 0; i < 6; ++i) {
      const auto comma = line.find(',', start);
      if (comma == std::string::npos)
        throw ConfigError("sweep csv " + path + " line " +
                          std::to_string(line_no) + ": expected 7 fields");
      fields.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    fields.push_back(line.substr(start));
    try {
      SweepRow row;
      row.fraction = std::stod(fields[0]);
      row.mode = fields[1];
      row.trainable_params = std::stoull(fields[2]);
      row.final_train_loss = std::stod(fields[3]);
      row.eval_loss = std::stod(fields[4]);
      row.has_accuracy = !fields[5].empty();
      if (row.has_accuracy) row.eval_accuracy = std::stod(fields[5]);
      row.error = fields[6];
      rows.push_back(std::move(row));
    } catch (const std::exception& e) {
      throw ConfigError("sweep csv " + path + " line " +
                        std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

void save_sweep_series(const std::string& dir,
                       const std::vector<SweepRow>& rows) {
  std::vector<std::string> modes;
  for (const auto& row : rows)
    if (std::find(modes.begin(), modes.end(), row.mode) == modes.end())
      modes.push_back(row.mode);
  for (const auto& mode : modes) {
    std::ostringstream out;
    out << "fraction,eval_loss\n";
    out.precision(17);
    for (const auto& row : rows)
      if (row.mode == mode && row.error.empty())
        out << row.fraction << ',' << row.eval_loss << '\n';
    write_text_file(dir + "/series_" + mode + ".csv", out.str());
  }
}

}  // namespace smt
