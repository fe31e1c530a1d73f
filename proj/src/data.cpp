#include "smt/data.hpp"

#include <cmath>

#include "smt/error.hpp"
#include "smt/gemm.hpp"

namespace smt {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double uniform_unit(std::uint64_t& state) {
  return static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
}

double normal_sample(std::uint64_t& state) {
  // Box-Muller, one value per call; u1 shifted into (0, 1].
  const double u1 = 1.0 - uniform_unit(state);
  const double u2 = uniform_unit(state);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793 * u2);
}

int uniform_int(std::uint64_t& state, int bound) {
  return static_cast<int>(splitmix64(state) % static_cast<std::uint64_t>(bound));
}

CopyTaskStream::CopyTaskStream(int vocab, int seq_len, int batch_size,
                               int pattern_len, std::uint64_t seed,
                               std::size_t limit)
    : vocab_(vocab),
      seq_len_(seq_len),
      batch_size_(batch_size),
      pattern_len_(pattern_len),
      seed_(seed),
      limit_(limit) {
  if (vocab < 2 || seq_len < 2 || batch_size < 1 || pattern_len < 1 ||
      pattern_len > seq_len)
    throw ConfigError("copy task: bad dimensions (vocab " +
                      std::to_string(vocab) + ", seq_len " +
                      std::to_string(seq_len) + ", pattern_len " +
                      std::to_string(pattern_len) + ")");
  reset();
}

void CopyTaskStream::reset() {
  rng_state_ = seed_ ^ 0xc0feull;
  position_ = 0;
}

std::optional<Batch> CopyTaskStream::next() {
  if (limit_ != 0 && position_ >= limit_) return std::nullopt;
  Batch batch;
  batch.sequences.resize(static_cast<std::size_t>(batch_size_));
  std::vector<int> pattern(static_cast<std::size_t>(pattern_len_));
  for (auto& seq : batch.sequences) {
    for (auto& p : pattern) p = uniform_int(rng_state_, vocab_);
    seq.resize(static_cast<std::size_t>(seq_len_) + 1);
    for (std::size_t t = 0; t < seq.size(); ++t)
      seq[t] = pattern[t % pattern.size()];
  }
  ++position_;
  return batch;
}

TeacherRegressionStream::TeacherRegressionStream(int in_dim, int hidden_dim,
                                                 int out_dim, int batch_size,
                                                 std::uint64_t seed,
                                                 std::uint64_t teacher_seed,
                                                 std::size_t limit)
    : in_dim_(in_dim),
      hidden_dim_(hidden_dim),
      out_dim_(out_dim),
      batch_size_(batch_size),
      seed_(seed),
      limit_(limit) {
  if (in_dim < 1 || hidden_dim < 1 || out_dim < 1 || batch_size < 1)
    throw ConfigError("teacher regression: bad dimensions");
  // Fixed teacher weights; scaled so outputs stay O(1).
  std::uint64_t ts = teacher_seed ^ 0x7eacull;
  teacher_w1_.resize(static_cast<std::size_t>(hidden_dim) * in_dim);
  teacher_w2_.resize(static_cast<std::size_t>(out_dim) * hidden_dim);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(in_dim));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  for (auto& w : teacher_w1_) w = s1 * normal_sample(ts);
  for (auto& w : teacher_w2_) w = s2 * normal_sample(ts);
  reset();
}

void TeacherRegressionStream::reset() {
  rng_state_ = seed_ ^ 0xda7aull;
  position_ = 0;
}

std::optional<Batch> TeacherRegressionStream::next() {
  if (limit_ != 0 && position_ >= limit_) return std::nullopt;
  const auto b = static_cast<std::size_t>(batch_size_);
  const auto in = static_cast<std::size_t>(in_dim_);
  const auto hid = static_cast<std::size_t>(hidden_dim_);
  const auto out = static_cast<std::size_t>(out_dim_);

  Batch batch;
  batch.inputs = Tensor::zeros(b, in);
  batch.targets = Tensor::zeros(b, out);
  for (auto& v : batch.inputs->data) v = normal_sample(rng_state_);

  std::vector<double> hidden(b * hid, 0.0);
  gemm_nt_acc(batch.inputs->data.data(), teacher_w1_.data(), hidden.data(), b,
              in, hid);
  for (auto& h : hidden) h = h > 0.0 ? h : 0.0;
  gemm_nt_acc(hidden.data(), teacher_w2_.data(), batch.targets->data.data(), b,
              hid, out);
  ++position_;
  return batch;
}

}  // namespace smt
