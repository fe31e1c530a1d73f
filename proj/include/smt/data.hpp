#pragma once
// Seeded synthetic data streams for the two toy tasks. Streams are
// deterministic: reset() rewinds to the head, and replaying `position()`
// batches reproduces the exact state (used by checkpoint resume).

#include <cstdint>
#include <optional>
#include <vector>

#include "smt/tensor.hpp"

namespace smt {

struct Batch {
  // Token task: each sequence holds seq_len + 1 tokens (inputs + shifted
  // targets). Regression task: inputs/targets matrices instead.
  std::vector<std::vector<int>> sequences;
  TensorPtr inputs;
  TensorPtr targets;
};

class DataStream {
 public:
  virtual ~DataStream() = default;
  virtual std::optional<Batch> next() = 0;  // nullopt once the limit is hit
  virtual void reset() = 0;
  virtual std::size_t position() const = 0;
};

// Periodic-pattern copying: every sequence repeats a random pattern of
// `pattern_len` tokens, so positions past the first period are predictable
// from earlier context while the first period stays at chance.
class CopyTaskStream : public DataStream {
 public:
  CopyTaskStream(int vocab, int seq_len, int batch_size, int pattern_len,
                 std::uint64_t seed, std::size_t limit = 0);

  std::optional<Batch> next() override;
  void reset() override;
  std::size_t position() const override { return position_; }

 private:
  int vocab_, seq_len_, batch_size_, pattern_len_;
  std::uint64_t seed_;
  std::size_t limit_;  // 0 = unbounded
  std::size_t position_ = 0;
  std::uint64_t rng_state_ = 0;
};

// Regression against a fixed random two-layer ReLU teacher network.
class TeacherRegressionStream : public DataStream {
 public:
  TeacherRegressionStream(int in_dim, int hidden_dim, int out_dim,
                          int batch_size, std::uint64_t seed,
                          std::uint64_t teacher_seed, std::size_t limit = 0);

  std::optional<Batch> next() override;
  void reset() override;
  std::size_t position() const override { return position_; }

 private:
  int in_dim_, hidden_dim_, out_dim_, batch_size_;
  std::uint64_t seed_;
  std::size_t limit_;
  std::size_t position_ = 0;
  std::uint64_t rng_state_ = 0;
  std::vector<double> teacher_w1_, teacher_w2_;
};

// Small deterministic RNG helpers shared by streams and model init
// (splitmix64 core; normal via Box-Muller).
std::uint64_t splitmix64(std::uint64_t& state);
double uniform_unit(std::uint64_t& state);            // [0, 1)
double normal_sample(std::uint64_t& state);           // N(0, 1)
int uniform_int(std::uint64_t& state, int bound);     // [0, bound)

}  // namespace smt
