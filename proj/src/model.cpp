#include "smt/model.hpp"

#include <cmath>
#include <cstdio>

#include "smt/error.hpp"
#include "smt/util.hpp"

namespace smt {

namespace {

constexpr double kInitStd = 0.08;

TensorPtr init_matrix(std::size_t rows, std::size_t cols, std::uint64_t& rng,
                      double std_dev = kInitStd) {
  auto t = Tensor::zeros(rows, cols);
  for (auto& v : t->data) v = std_dev * normal_sample(rng);
  return t;
}

std::string block_prefix(int layer) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "blk%02d", layer);
  return buf;
}

}  // namespace

const char* role_name(LayerRole role) {
  switch (role) {
    case LayerRole::AttnQ: return "attn_q";
    case LayerRole::AttnK: return "attn_k";
    case LayerRole::AttnV: return "attn_v";
    case LayerRole::AttnO: return "attn_o";
    case LayerRole::MlpIn: return "mlp_in";
    case LayerRole::MlpOut: return "mlp_out";
    case LayerRole::Embed: return "embed";
    case LayerRole::Head: return "head";
  }
  return "?";
}

LayerRole role_from_name(const std::string& name) {
  for (LayerRole r : {LayerRole::AttnQ, LayerRole::AttnK, LayerRole::AttnV,
                      LayerRole::AttnO, LayerRole::MlpIn, LayerRole::MlpOut,
                      LayerRole::Embed, LayerRole::Head}) {
    if (name == role_name(r)) return r;
  }
  throw ConfigError("unknown layer role '" + name + "'");
}

bool is_attention_role(LayerRole role) {
  return role == LayerRole::AttnQ || role == LayerRole::AttnK ||
         role == LayerRole::AttnV || role == LayerRole::AttnO;
}

void LinearUnit::reset_stats() {
  stats.reset();
  if (lora) lora->stats.reset();
}

TensorPtr apply_unit(Tape& tape, LinearUnit& unit, const TensorPtr& x) {
  switch (unit.mode) {
    case UnitMode::DenseTrainable:
    case UnitMode::Frozen:
      return tape.linear(x, unit.weight, &unit.stats);
    case UnitMode::Smt:
      if (!unit.smt)
        throw StateError("unit '" + unit.id + "' in smt mode without a layer");
      return sparse_apply(tape, *unit.smt, x, &unit.stats);
    case UnitMode::Lora: {
      if (!unit.lora)
        throw StateError("unit '" + unit.id + "' in lora mode without adapters");
      auto base = tape.linear(x, unit.weight, &unit.stats);
      auto down = tape.linear(x, unit.lora->a, &unit.lora->stats);
      auto up = tape.linear(down, unit.lora->b, &unit.lora->stats);
      return tape.add(base, tape.scale(up, unit.lora->scale));
    }
  }
  throw StateError("unit '" + unit.id + "' has an invalid mode");
}

std::size_t Model::total_params() {
  std::size_t n = 0;
  for (LinearUnit* u : units()) n += u->weight->numel();
  return n;
}

LinearUnit* Model::find_unit(const std::string& id) {
  for (LinearUnit* u : units())
    if (u->id == id) return u;
  return nullptr;
}

std::uint64_t Model::weights_fingerprint() {
  std::uint64_t h = kFnvOffset;
  for (LinearUnit* u : units()) {
    h = fnv1a64(u->id, h);
    h = fnv1a64(u->weight->data.data(),
                u->weight->data.size() * sizeof(double), h);
  }
  return h;
}

void Model::reset_unit_stats() {
  for (LinearUnit* u : units()) u->reset_stats();
}

// ----------------------------------------------------------- transformer ---

ToyTransformer::ToyTransformer(const ToyTransformerConfig& cfg) : cfg_(cfg) {
  if (cfg.d_model <= 0 || cfg.n_heads <= 0 || cfg.d_model % cfg.n_heads != 0)
    throw ConfigError("transformer: d_model " + std::to_string(cfg.d_model) +
                      " must be a positive multiple of n_heads " +
                      std::to_string(cfg.n_heads));
  if (cfg.vocab < 2 || cfg.n_layers < 1 || cfg.d_mlp < 1 || cfg.seq_len < 2)
    throw ConfigError("transformer: bad dimensions");

  std::uint64_t rng = cfg.seed ^ 0x5eedull;
  const auto v = static_cast<std::size_t>(cfg.vocab);
  const auto dm = static_cast<std::size_t>(cfg.d_model);
  const auto dmlp = static_cast<std::size_t>(cfg.d_mlp);
  const auto t = static_cast<std::size_t>(cfg.seq_len);

  tok_emb_ = {"embed.tok", LayerRole::Embed, init_matrix(v, dm, rng)};
  pos_emb_ = {"embed.pos", LayerRole::Embed, init_matrix(t, dm, rng)};
  blocks_.resize(static_cast<std::size_t>(cfg.n_layers));
  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string p = block_prefix(i);
    Block& b = blocks_[static_cast<std::size_t>(i)];
    b.q = {p + ".attn_q", LayerRole::AttnQ, init_matrix(dm, dm, rng)};
    b.k = {p + ".attn_k", LayerRole::AttnK, init_matrix(dm, dm, rng)};
    b.v = {p + ".attn_v", LayerRole::AttnV, init_matrix(dm, dm, rng)};
    b.o = {p + ".attn_o", LayerRole::AttnO, init_matrix(dm, dm, rng)};
    b.mlp_in = {p + ".mlp_in", LayerRole::MlpIn, init_matrix(dmlp, dm, rng)};
    b.mlp_out = {p + ".mlp_out", LayerRole::MlpOut, init_matrix(dm, dmlp, rng)};
  }
  head_ = {"head", LayerRole::Head, init_matrix(v, dm, rng)};

  // Additive causal mask: 0 on/below the diagonal, large negative above.
  causal_mask_ = Tensor::zeros(t, t);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = i + 1; j < t; ++j) causal_mask_->at(i, j) = -1e30;
}

std::vector<LinearUnit*> ToyTransformer::units() {
  std::vector<LinearUnit*> out;
  out.push_back(&tok_emb_);
  out.push_back(&pos_emb_);
  for (Block& b : blocks_) {
    out.push_back(&b.q);
    out.push_back(&b.k);
    out.push_back(&b.v);
    out.push_back(&b.o);
    out.push_back(&b.mlp_in);
    out.push_back(&b.mlp_out);
  }
  out.push_back(&head_);
  return out;
}

TensorPtr ToyTransformer::sequence_logits(Tape& tape,
                                          const std::vector<int>& inputs) {
  const auto t = inputs.size();
  if (t != static_cast<std::size_t>(cfg_.seq_len))
    throw ShapeError("transformer: sequence length " + std::to_string(t) +
                     " does not match configured " +
                     std::to_string(cfg_.seq_len));
  std::vector<int> positions(t);
  for (std::size_t i = 0; i < t; ++i) positions[i] = static_cast<int>(i);

  auto x = tape.add(tape.embed_rows(tok_emb_.weight, inputs),
                    tape.embed_rows(pos_emb_.weight, positions));

  const int head_dim = cfg_.d_model / cfg_.n_heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  for (Block& blk : blocks_) {
    auto xn = tape.rmsnorm_rows(x);
    auto q = apply_unit(tape, blk.q, xn);
    auto k = apply_unit(tape, blk.k, xn);
    auto v = apply_unit(tape, blk.v, xn);
    std::vector<TensorPtr> heads;
    heads.reserve(static_cast<std::size_t>(cfg_.n_heads));
    for (int h = 0; h < cfg_.n_heads; ++h) {
      const auto c0 = static_cast<std::size_t>(h * head_dim);
      const auto c1 = c0 + static_cast<std::size_t>(head_dim);
      auto qh = tape.col_slice(q, c0, c1);
      auto kh = tape.col_slice(k, c0, c1);
      auto vh = tape.col_slice(v, c0, c1);
      auto scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), att_scale);
      auto masked = tape.add(scores, causal_mask_);
      auto attn = tape.softmax_rows(masked);
      heads.push_back(tape.matmul(attn, vh));
    }
    auto attn_out = apply_unit(tape, blk.o, tape.concat_cols(heads));
    x = tape.add(x, attn_out);

    auto hn = tape.rmsnorm_rows(x);
    auto h1 = tape.relu(apply_unit(tape, blk.mlp_in, hn));
    auto h2 = apply_unit(tape, blk.mlp_out, h1);
    x = tape.add(x, h2);
  }
  return apply_unit(tape, head_, tape.rmsnorm_rows(x));
}

Tensor ToyTransformer::logits(const std::vector<int>& inputs) {
  Tape tape;
  return *sequence_logits(tape, inputs);
}

TensorPtr ToyTransformer::loss(Tape& tape, const Batch& batch) {
  if (batch.sequences.empty())
    throw DataError("transformer: batch carries no sequences");
  TensorPtr total;
  for (const auto& seq : batch.sequences) {
    if (seq.size() != static_cast<std::size_t>(cfg_.seq_len) + 1)
      throw ShapeError("transformer: sequence of " + std::to_string(seq.size()) +
                       " tokens, expected " + std::to_string(cfg_.seq_len + 1));
    std::vector<int> inputs(seq.begin(), seq.end() - 1);
    std::vector<int> targets(seq.begin() + 1, seq.end());
    auto logits = sequence_logits(tape, inputs);
    auto li = tape.cross_entropy_mean(logits, targets);
    total = total ? tape.add(total, li) : li;
  }
  return tape.scale(total, 1.0 / static_cast<double>(batch.sequences.size()));
}

EvalBatchResult ToyTransformer::eval_batch(const Batch& batch) {
  if (batch.sequences.empty())
    throw DataError("transformer: batch carries no sequences");
  EvalBatchResult res;
  res.has_accuracy = true;
  double loss_sum = 0.0;
  std::size_t correct = 0, total = 0;
  for (const auto& seq : batch.sequences) {
    std::vector<int> inputs(seq.begin(), seq.end() - 1);
    std::vector<int> targets(seq.begin() + 1, seq.end());
    Tape tape;  // forward only; discarded without backward
    auto logits = sequence_logits(tape, inputs);
    loss_sum += tape.cross_entropy_mean(logits, targets)->scalar_value();
    const auto v = static_cast<std::size_t>(cfg_.vocab);
    for (std::size_t t = 0; t < targets.size(); ++t) {
      const double* row = logits->data.data() + t * v;
      std::size_t best = 0;
      for (std::size_t j = 1; j < v; ++j)
        if (row[j] > row[best]) best = j;
      correct += (static_cast<int>(best) == targets[t]) ? 1u : 0u;
      ++total;
    }
  }
  res.loss = loss_sum / static_cast<double>(batch.sequences.size());
  res.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  res.prediction_count = total;
  return res;
}

// ------------------------------------------------------------------ mlp ----

ToyMlp::ToyMlp(const ToyMlpConfig& cfg) : cfg_(cfg) {
  if (cfg.in_dim < 1 || cfg.hidden_dim < 1 || cfg.out_dim < 1)
    throw ConfigError("mlp: bad dimensions");
  std::uint64_t rng = cfg.seed ^ 0x3145ull;
  const auto in = static_cast<std::size_t>(cfg.in_dim);
  const auto hid = static_cast<std::size_t>(cfg.hidden_dim);
  const auto out = static_cast<std::size_t>(cfg.out_dim);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(in));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hid));
  fc_in_ = {"mlp.fc_in", LayerRole::MlpIn, init_matrix(hid, in, rng, s1)};
  fc_out_ = {"mlp.fc_out", LayerRole::MlpOut, init_matrix(out, hid, rng, s2)};
}

std::vector<LinearUnit*> ToyMlp::units() { return {&fc_in_, &fc_out_}; }

TensorPtr ToyMlp::loss(Tape& tape, const Batch& batch) {
  if (!batch.inputs || !batch.targets)
    throw DataError("mlp: batch carries no regression data");
  auto h = tape.relu(apply_unit(tape, fc_in_, batch.inputs));
  auto pred = apply_unit(tape, fc_out_, h);
  auto diff = tape.add(pred, tape.scale(batch.targets, -1.0));
  return tape.mean(tape.mul(diff, diff));
}

EvalBatchResult ToyMlp::eval_batch(const Batch& batch) {
  Tape tape;
  EvalBatchResult res;
  res.loss = loss(tape, batch)->scalar_value();
  res.prediction_count = batch.inputs ? batch.inputs->rows() : 0;
  return res;
}

}  // namespace smt
