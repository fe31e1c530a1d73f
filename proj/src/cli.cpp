#include "smt/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "smt/config.hpp"
#include "smt/cost_model.hpp"
#include "smt/error.hpp"
#include "smt/serialize.hpp"
#include "smt/train.hpp"

namespace smt {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Held-out streams draw from the same generator family at a fixed offset.
constexpr std::uint64_t kEvalSeedOffset = 0xE7A1;

struct CliArgs {
  std::string config_path;
  std::string selection_path;
  std::string out_override;
  std::string format = "table";
  std::uint64_t seed = 0;
  bool has_seed = false;
  bool resume = false;
  long halt_after = 0;
  bool reference = false;
};

bool records_mode(const CliArgs& a) { return a.format == "records"; }

std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

std::string pct(double fraction, int prec = 2) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(prec) << fraction * 100.0 << '%';
  return out.str();
}

std::string resolve_out_dir(const CliArgs& a, const std::string& config_out) {
  std::string dir = !a.out_override.empty() ? a.out_override : config_out;
  if (dir.empty())
    throw ConfigError("no output directory: pass --out or set out_dir");
  const char* root = std::getenv("SMT_OUT_ROOT");
  if (root && *root && !fs::path(dir).is_absolute())
    dir = (fs::path(root) / dir).string();
  return dir;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " +
                        ec.message());
}

RunConfig load_run_config(const CliArgs& a) {
  if (a.config_path.empty())
    throw ConfigError("this command needs --config PATH");
  RunConfig cfg = load_config(a.config_path);
  if (a.has_seed) cfg.train.seed = a.seed;
  return cfg;
}

WarmupOptions warmup_options(const RunConfig& cfg) {
  WarmupOptions w;
  w.n_iters = cfg.train.warmup_iters;
  w.policy = cfg.train.policy;
  w.block_side = cfg.train.block_side;
  w.abs_then_sum = cfg.train.abs_then_sum;
  w.seed = cfg.train.seed;
  return w;
}

std::vector<LinearUnit*> eligible_units(Model& model,
                                        const AllocationPolicy& policy) {
  std::vector<LinearUnit*> out;
  for (LinearUnit* unit : model.units())
    if (policy.eligible(unit->role)) out.push_back(unit);
  return out;
}

// ---- warmup-select --------------------------------------------------------

void print_selection_report(const BlockSelection& selection,
                            const SelectionStats& stats) {
  std::cout << "warm-up selection: " << stats.selected_params
            << " parameters (" << pct(stats.fraction_of_total)
            << " of the model)\n";
  std::cout << "role share of selected parameters:\n";
  for (const auto& [role, share] : stats.role_share)
    std::cout << "  " << std::left << std::setw(10) << role << std::right
              << pct(share, 1) << '\n';
  std::cout << "per-layer map (# = selected block):\n";
  for (const auto& [layer, blocks] : stats.layer_blocks) {
    std::cout << "  " << std::left << std::setw(16) << layer << std::right
              << blocks << " block" << (blocks == 1 ? "" : "s") << '\n';
    const LayerSelection* sel = selection.find(layer);
    if (!sel) continue;
    std::vector<std::string> map(
        sel->grid.row_blocks(),
        std::string(sel->grid.col_blocks(), '.'));
    for (const BlockIndex& b : sel->blocks) map[b.row_block][b.col_block] = '#';
    for (const std::string& row : map) std::cout << "    " << row << '\n';
  }
}

int cmd_warmup_select(const CliArgs& a) {
  RunConfig cfg = load_run_config(a);
  if (cfg.train.mode != TrainMode::Smt)
    throw ConfigError(std::string("warmup-select requires train.mode 'smt', "
                                  "got '") +
                      train_mode_name(cfg.train.mode) + "'");
  auto model = make_model(cfg);
  auto stream = make_stream(cfg);
  WarmupResult result = run_warmup(*model, *stream, warmup_options(cfg));
  if (result.selection.empty())
    throw EmptySelectionError(
        "budget fraction " + std::to_string(cfg.train.policy.budget_fraction) +
        " affords no " + std::to_string(cfg.train.block_side) + "x" +
        std::to_string(cfg.train.block_side) +
        " block; no selection file written");

  SelectionStats stats =
      selection_stats(result.selection, model->total_params(),
                      eligible_units(*model, cfg.train.policy));
  const std::string out = resolve_out_dir(a, cfg.out_dir);
  ensure_dir(out);
  const std::string path = out + "/selection.json";
  save_selection(path, result.selection);

  if (records_mode(a)) {
    std::cout << json{{"selected_params", stats.selected_params},
                      {"fraction_of_total", stats.fraction_of_total},
                      {"role_share", stats.role_share},
                      {"layer_blocks", stats.layer_blocks},
                      {"file", path}}
                     .dump()
              << '\n';
  } else {
    print_selection_report(result.selection, stats);
    std::cout << "wrote " << path << '\n';
  }
  return 0;
}

// ---- train ----------------------------------------------------------------

int cmd_train(const CliArgs& a) {
  RunConfig cfg = load_run_config(a);
  const std::string out = resolve_out_dir(a, cfg.out_dir);
  ensure_dir(out);
  const std::string metrics_path = out + "/metrics.jsonl";
  const std::string checkpoint_path = out + "/checkpoint.json";
  const std::uint64_t hash = config_hash(cfg);

  auto model = make_model(cfg);
  auto stream = make_stream(cfg);
  TrainOptions opts = cfg.train;

  if (!a.selection_path.empty()) {
    if (opts.mode == TrainMode::Smt)
      opts.preset_selection = load_selection(a.selection_path);
    else
      std::cerr << "warning: mode '" << train_mode_name(opts.mode)
                << "' ignores --selection\n";
  }

  std::optional<Checkpoint> ckpt;
  if (a.resume) {
    ckpt = load_checkpoint(checkpoint_path);
    if (ckpt->head.config_hash != hash)
      throw ConfigError("resume: config hash mismatch (checkpoint " +
                        hex64(ckpt->head.config_hash) + ", current config " +
                        hex64(hash) + ")");
    if (opts.mode == TrainMode::Smt) {
      if (!ckpt->head.selection)
        throw ConfigError("resume: checkpoint carries no selection");
      opts.preset_selection = ckpt->head.selection;
    }
  }

  Trainer trainer(*model, *stream, opts);
  std::vector<StepRecord> records;
  if (ckpt) {
    restore_trainer(*ckpt, trainer);
    while (stream->position() < ckpt->head.data_position)
      if (!stream->next())
        throw DataError("resume: stream ended before checkpoint position " +
                            std::to_string(ckpt->head.data_position),
                        static_cast<long>(stream->position()));
    // Records at or past the checkpoint step are replayed below.
    if (fs::exists(metrics_path))
      for (const StepRecord& rec : load_metrics(metrics_path))
        if (rec.step < trainer.step_index()) records.push_back(rec);
  }

  long until = opts.steps;
  if (a.halt_after > 0)
    until = std::min(until, trainer.step_index() + a.halt_after);
  const long report_every = std::max<long>(1, opts.steps / 10);

  while (trainer.step_index() < until) {
    StepRecord rec = trainer.step();
    if (records_mode(a))
      std::cout << step_record_to_json(rec).dump() << '\n';
    else if (rec.step % report_every == 0 || rec.step + 1 == until)
      std::cout << "step " << std::setw(5) << rec.step << "  loss "
                << std::setprecision(6) << rec.loss << "  lr " << rec.lr
                << '\n';
    records.push_back(rec);
  }

  save_metrics(metrics_path, records);
  save_checkpoint(checkpoint_path, trainer, hash, stream->position());
  if (opts.mode == TrainMode::Smt)
    save_selection(out + "/selection.json", trainer.selection());

  if (!records_mode(a)) {
    std::cout << train_mode_name(opts.mode) << " run at step "
              << trainer.step_index() << "/" << opts.steps << ", "
              << trainer.trainable_params() << " trainable parameters";
    if (!records.empty())
      std::cout << ", final loss " << std::setprecision(6)
                << records.back().loss;
    std::cout << "\nwrote " << metrics_path << ", " << checkpoint_path << '\n';
  }
  return 0;
}

// ---- profile --------------------------------------------------------------

json counter_diff(long long measured, long long analytic) {
  return {{"measured", measured},
          {"analytic", analytic},
          {"diff", measured - analytic}};
}

json reference_block() {
  Llama7bReference ref;
  const double cited_param_gb = 13.6;  // commonly cited 7B bf16 footprint
  const double param_gb = ref.param_bytes() / 1e9;
  const double rho = 0.005;
  const double rho_pct = round1(rho * 100.0);
  return {{"params", ref.params},
          {"dtype_bytes", ref.dtype_bytes},
          {"param_gb", param_gb},
          {"cited_param_gb", cited_param_gb},
          {"param_gb_rel_err", std::abs(param_gb - cited_param_gb) /
                                   cited_param_gb},
          {"adam_and_grad_gb", ref.adam_and_grad_bytes() / 1e9},
          {"uniform_fraction", rho},
          {"fraction_percent",
           {{"optimizer", rho_pct},
            {"grad", rho_pct},
            {"update", rho_pct},
            {"bwd_dw", rho_pct}}},
          {"lora_base_gb", 25.0},
          {"lora_overhead_fraction", 0.01},
          {"lora_overhead_mb", lora_overhead_bytes(25e9, 0.01) / 1e6},
          {"wall_clock",
           {{"baseline_s", 243.84},
            {"method_a_s", 16.68},
            {"method_a_speedup", round1(speedup(243.84, 16.68))},
            {"method_b_s", 17.82},
            {"method_b_speedup", round1(speedup(243.84, 17.82))}}}};
}

void print_reference_block(const json& r) {
  std::cout << "7B-scale reference arithmetic:\n"
            << "  weights: " << std::fixed << std::setprecision(1)
            << r["param_gb"].get<double>() << " GB at "
            << std::setprecision(0) << r["dtype_bytes"].get<double>()
            << " bytes/param (commonly cited " << std::setprecision(1)
            << r["cited_param_gb"].get<double>() << " GB, rel err "
            << pct(r["param_gb_rel_err"].get<double>(), 1) << ")\n"
            << "  weights + gradients + Adam moments: " << std::setprecision(1)
            << r["adam_and_grad_gb"].get<double>() << " GB\n"
            << "  uniform trainable fraction "
            << pct(r["uniform_fraction"].get<double>(), 1)
            << " scales optimizer, gradient, update, and dW-FLOP costs to "
            << std::setprecision(1)
            << r["fraction_percent"]["optimizer"].get<double>()
            << "% of full fine-tuning\n"
            << "  adapter overhead on a " << std::setprecision(0)
            << r["lora_base_gb"].get<double>() << " GB base at "
            << pct(r["lora_overhead_fraction"].get<double>(), 0) << ": "
            << r["lora_overhead_mb"].get<double>() << " MB\n"
            << "  wall clock " << std::setprecision(2)
            << r["wall_clock"]["baseline_s"].get<double>() << " s vs "
            << r["wall_clock"]["method_a_s"].get<double>() << " s -> "
            << std::setprecision(1)
            << r["wall_clock"]["method_a_speedup"].get<double>() << "x, vs "
            << std::setprecision(2)
            << r["wall_clock"]["method_b_s"].get<double>() << " s -> "
            << std::setprecision(1)
            << r["wall_clock"]["method_b_speedup"].get<double>() << "x\n";
  std::cout.unsetf(std::ios::fixed);
  std::cout << std::setprecision(6);
}

void print_cost_row(const MethodCost& c) {
  std::cout << "  " << std::left << std::setw(8) << c.method << std::right
            << std::setw(10) << c.trainable_params << std::setw(14)
            << c.fwd_flops << std::setw(14) << c.bwd_dx_flops << std::setw(14)
            << c.bwd_dw_flops << std::setw(12) << c.update_flops
            << std::setw(12) << c.cache_floats << std::setw(12)
            << c.opt_state_floats << '\n';
}

void print_ratio_row(const std::string& name, const CostRatios& r) {
  std::cout << "  " << std::left << std::setw(8) << name << std::right
            << "  dW " << pct(r.bwd_dw) << "  optimizer " << pct(r.optimizer)
            << "  grad " << pct(r.grad) << "  update " << pct(r.update)
            << "  activation " << pct(r.activation) << "  fwd " << pct(r.fwd)
            << '\n';
}

int cmd_profile(const CliArgs& a) {
  RunConfig cfg = load_run_config(a);
  const std::string out = resolve_out_dir(a, cfg.out_dir);
  ensure_dir(out);

  auto model = make_model(cfg);
  ArchSpec arch = arch_from_model(*model, tokens_per_step(cfg));
  MethodCost ft = ft_budget(arch);

  // Prefer an explicit selection file, then one left behind by a train run in
  // the same directory (so measured counters diff against the selection that
  // produced them), then a fresh warm-up.
  BlockSelection selection;
  if (!a.selection_path.empty()) {
    selection = load_selection(a.selection_path);
  } else if (fs::exists(out + "/selection.json")) {
    selection = load_selection(out + "/selection.json");
  } else {
    try {
      auto stream = make_stream(cfg);
      selection = run_warmup(*model, *stream, warmup_options(cfg)).selection;
    } catch (const ConfigError& e) {
      // Profiling a pure-FT config whose policy matches nothing is fine; the
      // sparse row just reports zero selected blocks.
      std::cerr << "note: no warm-up selection (" << e.what() << ")\n";
    }
  }
  MethodCost smt = smt_budget(arch, selection);

  std::vector<std::string> adapted;
  for (LinearUnit* unit : eligible_units(*model, cfg.train.policy))
    adapted.push_back(unit->id);
  MethodCost lora = lora_budget(arch, adapted, cfg.train.lora_rank);

  CostRatios smt_ratios = ratios_vs_ft(smt, ft);
  CostRatios lora_ratios = ratios_vs_ft(lora, ft);

  json doc{{"arch",
            {{"linear_layers", arch.layers.size()},
             {"total_params", arch.total_params},
             {"tokens_per_step", arch.tokens_per_step},
             {"dtype_bytes", arch.dtype_bytes}}},
           {"full_ft", method_cost_to_json(ft)},
           {"smt", method_cost_to_json(smt)},
           {"lora", method_cost_to_json(lora)},
           {"smt_vs_ft", cost_ratios_to_json(smt_ratios)},
           {"lora_vs_ft", cost_ratios_to_json(lora_ratios)}};

  const std::string metrics_path = out + "/metrics.jsonl";
  if (fs::exists(metrics_path)) {
    std::vector<StepRecord> recs = load_metrics(metrics_path);
    if (!recs.empty()) {
      const MethodCost& analytic = cfg.train.mode == TrainMode::FullFt ? ft
                                   : cfg.train.mode == TrainMode::Smt  ? smt
                                                                       : lora;
      const StepRecord& rec = recs.front();
      bool steady = true;
      for (const StepRecord& r : recs)
        steady = steady && r.fwd_flops == rec.fwd_flops &&
                 r.dw_flops == rec.dw_flops &&
                 r.cache_floats == rec.cache_floats &&
                 r.opt_state_floats == rec.opt_state_floats;
      json diff{{"mode", train_mode_name(cfg.train.mode)},
                {"steps_measured", recs.size()},
                {"counters_steady", steady},
                {"fwd_flops", counter_diff(rec.fwd_flops, analytic.fwd_flops)},
                {"dw_flops",
                 counter_diff(rec.dw_flops, analytic.bwd_dw_flops)},
                {"cache_floats",
                 counter_diff(rec.cache_floats, analytic.cache_floats)},
                {"opt_state_floats",
                 counter_diff(static_cast<long long>(rec.opt_state_floats),
                              analytic.opt_state_floats)},
                {"dx_flops",
                 {{"measured", rec.dx_flops},
                  {"analytic_upper_bound", analytic.bwd_dx_flops},
                  {"within_bound",
                   rec.dx_flops <= analytic.bwd_dx_flops}}}};
      doc["measured_vs_analytic"] = diff;
    }
  }
  if (a.reference) doc["reference"] = reference_block();

  write_text_file(out + "/profile.json", doc.dump(2) + "\n");

  if (records_mode(a)) {
    std::cout << doc.dump() << '\n';
    return 0;
  }
  std::cout << "analytic per-step budgets (" << arch.total_params
            << " params, " << arch.tokens_per_step << " tokens/step):\n"
            << "  method    trainable     fwd_flops      dx_flops      "
               "dw_flops      update       cache   opt_state\n";
  print_cost_row(ft);
  print_cost_row(smt);
  print_cost_row(lora);
  std::cout << "  (dx_flops is an analytic upper bound: gradients are "
               "skipped where inputs need none)\n";
  std::cout << "ratios vs full fine-tuning:\n";
  print_ratio_row("smt", smt_ratios);
  print_ratio_row("lora", lora_ratios);
  if (doc.contains("measured_vs_analytic")) {
    const json& d = doc["measured_vs_analytic"];
    std::cout << "measured vs analytic (" << d["mode"].get<std::string>()
              << " metrics, " << d["steps_measured"].get<std::size_t>()
              << " steps):\n";
    for (const char* key :
         {"fwd_flops", "dw_flops", "cache_floats", "opt_state_floats"})
      std::cout << "  " << std::left << std::setw(18) << key << std::right
                << "measured " << d[key]["measured"].get<long long>()
                << "  analytic " << d[key]["analytic"].get<long long>()
                << "  diff " << d[key]["diff"].get<long long>() << '\n';
    std::cout << "  dx_flops          measured "
              << d["dx_flops"]["measured"].get<long long>() << "  bound "
              << d["dx_flops"]["analytic_upper_bound"].get<long long>()
              << (d["dx_flops"]["within_bound"].get<bool>()
                      ? "  (within bound)"
                      : "  (EXCEEDS BOUND)")
              << '\n';
  }
  if (a.reference) print_reference_block(doc["reference"]);
  std::cout << "wrote " << out << "/profile.json\n";
  return 0;
}

// ---- sweep ----------------------------------------------------------------

void set_budget(AllocationPolicy& policy, double fraction) {
  if (policy.variant == AllocationPolicy::Variant::Mixed &&
      policy.budget_fraction > 0.0) {
    const double scale = fraction / policy.budget_fraction;
    policy.mlp_fraction *= scale;
    policy.attn_fraction *= scale;
  }
  policy.budget_fraction = fraction;
}

// Rank giving roughly `fraction` of total params as r*(d+k) adapters over the
// policy-eligible layers, floored at one.
int lora_rank_for_fraction(Model& model, const AllocationPolicy& policy,
                           double fraction) {
  std::size_t dim_sum = 0;
  for (LinearUnit* unit : eligible_units(model, policy))
    dim_sum += unit->rows() + unit->cols();
  if (dim_sum == 0) return 1;  // the trainer reports the real config error
  const double ideal =
      fraction * static_cast<double>(model.total_params()) /
      static_cast<double>(dim_sum);
  return std::max(1, static_cast<int>(std::floor(ideal)));
}

json sweep_row_to_json(const SweepRow& row) {
  json doc{{"fraction", row.fraction},
           {"mode", row.mode},
           {"trainable_params", row.trainable_params},
           {"final_train_loss", row.final_train_loss},
           {"eval_loss", row.eval_loss},
           {"error", row.error}};
  if (row.has_accuracy) doc["eval_accuracy"] = row.eval_accuracy;
  return doc;
}

int cmd_sweep(const CliArgs& a) {
  RunConfig cfg = load_run_config(a);
  if (cfg.sweep.fractions.empty())
    throw ConfigError("sweep.fractions is empty");
  const std::string out = resolve_out_dir(a, cfg.out_dir);
  ensure_dir(out);

  std::vector<SweepRow> rows;
  for (double fraction : cfg.sweep.fractions) {
    for (TrainMode mode : cfg.sweep.modes) {
      SweepRow row;
      row.fraction = fraction;
      row.mode = train_mode_name(mode);
      try {
        auto model = make_model(cfg);
        auto stream = make_stream(cfg);
        TrainOptions opts = cfg.train;
        opts.mode = mode;
        set_budget(opts.policy, fraction);
        if (mode == TrainMode::Lora)
          opts.lora_rank =
              lora_rank_for_fraction(*model, cfg.train.policy, fraction);
        Trainer trainer(*model, *stream, opts);
        std::vector<StepRecord> recs = trainer.run(opts.steps);
        row.trainable_params = trainer.trainable_params();
        if (!recs.empty()) row.final_train_loss = recs.back().loss;
        auto eval_stream = make_stream(cfg, kEvalSeedOffset,
                                       static_cast<std::size_t>(
                                           cfg.sweep.eval_batches));
        EvalSummary ev =
            evaluate(*model, *eval_stream, cfg.sweep.eval_batches);
        row.eval_loss = ev.loss;
        row.eval_accuracy = ev.accuracy;
        row.has_accuracy = ev.has_accuracy;
      } catch (const Error& e) {
        row.error = e.what();
      }
      if (records_mode(a)) {
        std::cout << sweep_row_to_json(row).dump() << '\n';
      } else {
        std::cout << "  " << pct(row.fraction) << "  " << std::left
                  << std::setw(8) << row.mode << std::right;
        if (row.error.empty()) {
          std::cout << "trainable " << std::setw(8) << row.trainable_params
                    << "  train " << std::setprecision(6)
                    << row.final_train_loss << "  eval " << row.eval_loss;
          if (row.has_accuracy) std::cout << "  acc " << row.eval_accuracy;
        } else {
          std::cout << "error: " << row.error;
        }
        std::cout << '\n';
      }
      rows.push_back(std::move(row));
    }
  }

  save_sweep_csv(out + "/sweep.csv", rows);
  save_sweep_series(out, rows);
  if (!records_mode(a))
    std::cout << "wrote " << out << "/sweep.csv and per-mode series files\n";
  return 0;
}

// ---- report ---------------------------------------------------------------

int cmd_report(const CliArgs& a) {
  std::string out;
  if (!a.config_path.empty())
    out = resolve_out_dir(a, load_config(a.config_path).out_dir);
  else if (!a.out_override.empty())
    out = resolve_out_dir(a, "");
  else
    throw ConfigError("report needs --out DIR or --config PATH");

  json doc{{"out_dir", out}};
  bool found = false;

  if (fs::exists(out + "/checkpoint.json")) {
    found = true;
    Checkpoint ckpt = load_checkpoint(out + "/checkpoint.json");
    doc["checkpoint"] = {{"mode", ckpt.head.mode},
                         {"model", ckpt.head.model_name},
                         {"step", ckpt.head.step},
                         {"data_position", ckpt.head.data_position},
                         {"config_hash", hex64(ckpt.head.config_hash)}};
  }
  if (fs::exists(out + "/metrics.jsonl")) {
    std::vector<StepRecord> recs = load_metrics(out + "/metrics.jsonl");
    if (!recs.empty()) {
      found = true;
      double min_loss = recs.front().loss;
      for (const StepRecord& r : recs) min_loss = std::min(min_loss, r.loss);
      doc["metrics"] = {{"steps", recs.size()},
                        {"first_loss", recs.front().loss},
                        {"final_loss", recs.back().loss},
                        {"min_loss", min_loss},
                        {"trainable_params", recs.front().trainable_params},
                        {"per_step",
                         {{"fwd_flops", recs.front().fwd_flops},
                          {"dx_flops", recs.front().dx_flops},
                          {"dw_flops", recs.front().dw_flops},
                          {"cache_floats", recs.front().cache_floats},
                          {"opt_state_floats",
                           recs.front().opt_state_floats}}}};
    }
  }
  if (fs::exists(out + "/selection.json")) {
    found = true;
    BlockSelection sel = load_selection(out + "/selection.json");
    json layers = json::array();
    for (const LayerSelection& layer : sel.layers)
      layers.push_back({{"layer_id", layer.layer_id},
                        {"role", role_name(layer.role)},
                        {"blocks", layer.blocks.size()}});
    doc["selection"] = {{"selected_params", sel.selected_params()},
                        {"layers", layers},
                        {"provenance",
                         {{"warmup_iters", sel.provenance.warmup_iters},
                          {"policy", sel.provenance.policy},
                          {"budget_fraction", sel.provenance.budget_fraction},
                          {"seed", sel.provenance.seed}}}};
  }
  if (fs::exists(out + "/sweep.csv")) {
    found = true;
    json rows = json::array();
    for (const SweepRow& row : load_sweep_csv(out + "/sweep.csv"))
      rows.push_back(sweep_row_to_json(row));
    doc["sweep"] = std::move(rows);
  }
  if (!found)
    throw IoError("report: no artifacts (metrics.jsonl, checkpoint.json, "
                  "selection.json, sweep.csv) under " +
                  out);

  if (records_mode(a)) {
    std::cout << doc.dump() << '\n';
    return 0;
  }
  std::cout << "artifacts under " << out << ":\n";
  if (doc.contains("checkpoint")) {
    const json& c = doc["checkpoint"];
    std::cout << "  checkpoint: " << c["mode"].get<std::string>() << " "
              << c["model"].get<std::string>() << " at step "
              << c["step"].get<long>() << " (stream position "
              << c["data_position"].get<std::size_t>() << ")\n";
  }
  if (doc.contains("metrics")) {
    const json& m = doc["metrics"];
    std::cout << "  metrics: " << m["steps"].get<std::size_t>()
              << " steps, loss " << std::setprecision(6)
              << m["first_loss"].get<double>() << " -> "
              << m["final_loss"].get<double>() << " (min "
              << m["min_loss"].get<double>() << "), "
              << m["trainable_params"].get<std::size_t>()
              << " trainable params\n";
  }
  if (doc.contains("selection")) {
    const json& s = doc["selection"];
    std::cout << "  selection: " << s["selected_params"].get<std::size_t>()
              << " params across " << s["layers"].size() << " layers ("
              << s["provenance"]["policy"].get<std::string>() << ", budget "
              << pct(s["provenance"]["budget_fraction"].get<double>())
              << ")\n";
  }
  if (doc.contains("sweep")) {
    std::cout << "  sweep:\n";
    for (const json& r : doc["sweep"]) {
      std::cout << "    " << pct(r["fraction"].get<double>()) << "  "
                << std::left << std::setw(8) << r["mode"].get<std::string>()
                << std::right;
      if (r["error"].get<std::string>().empty())
        std::cout << "eval " << std::setprecision(6)
                  << r["eval_loss"].get<double>();
      else
        std::cout << "error: " << r["error"].get<std::string>();
      std::cout << '\n';
    }
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"block-sparse fine-tuning workbench"};
  app.require_subcommand(1);
  CliArgs a;

  std::vector<CLI::Option*> seed_options;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", a.config_path, "JSON run configuration");
    sub->add_option("--selection", a.selection_path,
                    "block selection file (mode-dependent)");
    sub->add_option("--out", a.out_override,
                    "output directory (overrides the config's out_dir)");
    seed_options.push_back(
        sub->add_option("--seed", a.seed, "override train.seed"));
    sub->add_option("--format", a.format, "output format")
        ->check(CLI::IsMember({"table", "records"}));
  };

  CLI::App* ws = app.add_subcommand(
      "warmup-select", "run the warm-up and write the block selection");
  CLI::App* tr = app.add_subcommand(
      "train", "fine-tune; writes metrics.jsonl and checkpoint.json");
  tr->add_flag("--resume", a.resume,
               "resume from the checkpoint in the output directory");
  tr->add_option("--halt-after", a.halt_after,
                 "stop after N further steps (simulated interrupt)")
      ->check(CLI::NonNegativeNumber);
  CLI::App* pf = app.add_subcommand(
      "profile", "analytic cost report, plus measured diff when metrics "
                 "exist");
  pf->add_flag("--reference", a.reference,
               "append 7B-scale reference arithmetic");
  CLI::App* sw = app.add_subcommand(
      "sweep", "budget-fraction grid over modes; writes sweep.csv");
  CLI::App* rp = app.add_subcommand(
      "report", "summarize the artifacts in an output directory");
  for (CLI::App* sub : {ws, tr, pf, sw, rp}) add_common(sub);

  std::string prog = "smt";
  std::vector<std::string> storage = args;
  std::vector<char*> argv;
  argv.push_back(prog.data());
  for (std::string& s : storage) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  for (CLI::Option* opt : seed_options) a.has_seed |= opt->count() > 0;

  try {
    if (ws->parsed()) return cmd_warmup_select(a);
    if (tr->parsed()) return cmd_train(a);
    if (pf->parsed()) return cmd_profile(a);
    if (sw->parsed()) return cmd_sweep(a);
    if (rp->parsed()) return cmd_report(a);
    throw ConfigError("no command given");
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << '\n';
    return 3;
  } catch (const BoundsError& e) {
    std::cerr << "bounds error: " << e.what() << '\n';
    return 3;
  } catch (const EmptySelectionError& e) {
    std::cerr << "empty selection: " << e.what() << '\n';
    return 4;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 5;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

int run_cli(int argc, char** argv) {
  return run_cli(std::vector<std::string>(argv + 1, argv + argc));
}

}  // namespace smt
