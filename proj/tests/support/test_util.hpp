#pragma once
// Shared test helpers: deterministic RNG, random tensors, and an independent
// central-difference gradient oracle. The oracle only ever calls forward
// passes, so it exercises none of the backward code it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "smt/data.hpp"
#include "smt/tensor.hpp"

namespace testutil {

struct Rng {
  std::uint64_t state;
  explicit Rng(std::uint64_t seed) : state(seed ^ 0x9e3779b9ull) {}
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * smt::uniform_unit(state);
  }
  double normal() { return smt::normal_sample(state); }
  int pick(int bound) { return smt::uniform_int(state, bound); }
};

inline smt::TensorPtr rand_matrix(std::size_t rows, std::size_t cols, Rng& rng,
                                  double lo = -1.0, double hi = 1.0,
                                  bool requires_grad = false) {
  auto t = smt::Tensor::zeros(rows, cols, requires_grad);
  for (auto& v : t->data) v = rng.uniform(lo, hi);
  return t;
}

// Relative error with the scale floored at 1, the usual guard for entries
// near zero.
inline double rel_err(double a, double b) {
  const double scale = std::max({1.0, std::abs(a), std::abs(b)});
  return std::abs(a - b) / scale;
}

inline double max_rel_err(const std::vector<double>& a,
                          const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, rel_err(a[i], b[i]));
  return worst;
}

// Central finite difference of `eval` (a fresh forward pass) w.r.t. one slot.
template <typename EvalFn>
double central_difference(double& slot, double h, EvalFn&& eval) {
  const double saved = slot;
  slot = saved + h;
  const double fp = eval();
  slot = saved - h;
  const double fm = eval();
  slot = saved;
  return (fp - fm) / (2.0 * h);
}

// Compares analytic gradients of `params` against central differences of the
// loss built by `build` (which must construct a fresh graph on the given
// tape). Returns the worst relative error observed.
template <typename BuildFn>
double worst_grad_error(const std::vector<smt::TensorPtr>& params,
                        BuildFn&& build, double h = 1e-5) {
  for (const auto& p : params) {
    p->ensure_grad();
    p->zero_grad();
  }
  smt::Tape tape;
  auto loss = build(tape);
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p->grad);

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = *params[pi];
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const double fd = central_difference(p.data[i], h, [&]() {
        smt::Tape t;
        return build(t)->scalar_value();
      });
      worst = std::max(worst, rel_err(analytic[pi][i], fd));
    }
  }
  return worst;
}

}  // namespace testutil
