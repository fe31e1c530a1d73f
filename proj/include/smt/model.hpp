#pragma once
// Toy models built from role-tagged weight matrices. Each matrix is wrapped in
// a LinearUnit that can be trained densely, frozen, converted to the sparse
// block layer, or given a LoRA adapter pair. Models rebuild their graph on a
// fresh tape every step.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "smt/data.hpp"
#include "smt/sparse_linear.hpp"
#include "smt/tensor.hpp"

namespace smt {

enum class LayerRole { AttnQ, AttnK, AttnV, AttnO, MlpIn, MlpOut, Embed, Head };

const char* role_name(LayerRole role);
LayerRole role_from_name(const std::string& name);
bool is_attention_role(LayerRole role);

enum class UnitMode { DenseTrainable, Frozen, Smt, Lora };

// LoRA adapter pair for one base matrix: h = x.W0^T + scale * (x.A^T).B^T.
// A is seeded Gaussian, B starts at zero so the adapted layer initially
// matches the frozen base exactly.
struct LoraAdapter {
  TensorPtr a;  // r x k
  TensorPtr b;  // d x r
  int rank = 0;
  double scale = 1.0;
  OpStats stats;

  std::size_t param_count() const { return a->numel() + b->numel(); }
};

struct LinearUnit {
  std::string id;
  LayerRole role = LayerRole::MlpIn;
  TensorPtr weight;  // d x k
  UnitMode mode = UnitMode::DenseTrainable;
  OpStats stats;
  std::unique_ptr<SparseLinearLayer> smt;
  std::unique_ptr<LoraAdapter> lora;

  std::size_t rows() const { return weight->rows(); }
  std::size_t cols() const { return weight->cols(); }
  void reset_stats();
};

// Dispatch one forward application according to the unit's mode.
TensorPtr apply_unit(Tape& tape, LinearUnit& unit, const TensorPtr& x);

struct EvalBatchResult {
  double loss = 0.0;
  double accuracy = 0.0;
  bool has_accuracy = false;
  std::size_t prediction_count = 0;
};

class Model {
 public:
  virtual ~Model() = default;
  virtual TensorPtr loss(Tape& tape, const Batch& batch) = 0;
  virtual EvalBatchResult eval_batch(const Batch& batch) = 0;
  virtual std::vector<LinearUnit*> units() = 0;
  virtual std::string name() const = 0;

  std::size_t total_params();  // every role-tagged matrix, adapters excluded
  LinearUnit* find_unit(const std::string& id);
  std::uint64_t weights_fingerprint();
  void reset_unit_stats();
};

struct ToyTransformerConfig {
  int vocab = 32;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_mlp = 128;
  int seq_len = 32;
  std::uint64_t seed = 7;
};

// Decoder-only transformer: token + position embeddings, pre-norm blocks with
// causal attention and a ReLU MLP, untied output head. Norms are
// parameter-free RMS so every trainable matrix carries exactly one role.
class ToyTransformer : public Model {
 public:
  explicit ToyTransformer(const ToyTransformerConfig& cfg);

  TensorPtr loss(Tape& tape, const Batch& batch) override;
  EvalBatchResult eval_batch(const Batch& batch) override;
  std::vector<LinearUnit*> units() override;
  std::string name() const override { return "toy_transformer"; }

  const ToyTransformerConfig& config() const { return cfg_; }

  // Forward-only logits for one input sequence, on a throwaway tape.
  Tensor logits(const std::vector<int>& inputs);

 private:
  TensorPtr sequence_logits(Tape& tape, const std::vector<int>& inputs);

  ToyTransformerConfig cfg_;
  LinearUnit tok_emb_, pos_emb_, head_;
  struct Block {
    LinearUnit q, k, v, o, mlp_in, mlp_out;
  };
  std::vector<Block> blocks_;
  TensorPtr causal_mask_;
};

struct ToyMlpConfig {
  int in_dim = 32;
  int hidden_dim = 64;
  int out_dim = 32;
  std::uint64_t seed = 11;
};

// Two-layer ReLU regressor trained with mean squared error.
class ToyMlp : public Model {
 public:
  explicit ToyMlp(const ToyMlpConfig& cfg);

  TensorPtr loss(Tape& tape, const Batch& batch) override;
  EvalBatchResult eval_batch(const Batch& batch) override;
  std::vector<LinearUnit*> units() override;
  std::string name() const override { return "toy_mlp"; }

  const ToyMlpConfig& config() const { return cfg_; }

 private:
  ToyMlpConfig cfg_;
  LinearUnit fc_in_, fc_out_;
};

}  // namespace smt
