#include "smt/optimizer.hpp"

#include <cmath>

#include "smt/error.hpp"

namespace smt {

void BlockAdam::register_layer(const std::string& id,
                               const SparseLinearLayer& layer) {
  LayerState st;
  st.m.assign(layer.selected_params(), 0.0);
  st.v.assign(layer.selected_params(), 0.0);
  states_[id] = std::move(st);
}

void BlockAdam::step(const std::string& id, SparseLinearLayer& layer,
                     const SparseBlockPack& grads, double lr) {
  auto it = states_.find(id);
  if (it == states_.end())
    throw StateError("block adam: layer '" + id + "' was never registered");
  LayerState& st = it->second;
  if (grads.values.size() != st.m.size() ||
      grads.index_map != layer.selection())
    throw ShapeError("block adam: gradient pack layout does not match state (" +
                     std::to_string(grads.values.size()) + " vs " +
                     std::to_string(st.m.size()) + " values)");
  st.t += 1;
  const double b1t = std::pow(hyper_.beta1, static_cast<double>(st.t));
  const double b2t = std::pow(hyper_.beta2, static_cast<double>(st.t));
  SparseBlockPack w = gather(layer);
  for (std::size_t i = 0; i < w.values.size(); ++i) {
    w.values[i] = detail::adam_update(w.values[i], grads.values[i], st.m[i],
                                      st.v[i], hyper_, lr, b1t, b2t);
  }
  scatter(layer, w);
}

std::size_t BlockAdam::state_floats() const {
  std::size_t n = 0;
  for (const auto& [id, st] : states_) n += st.m.size() + st.v.size();
  return n;
}

long long BlockAdam::update_flops_per_step() const {
  long long n = 0;
  for (const auto& [id, st] : states_)
    n += kAdamFlopsPerParam * static_cast<long long>(st.m.size());
  return n;
}

void DenseAdam::track(const std::string& id, TensorPtr param) {
  ParamState st;
  st.param = std::move(param);
  st.m.assign(st.param->numel(), 0.0);
  st.v.assign(st.param->numel(), 0.0);
  states_[id] = std::move(st);
}

void DenseAdam::step(double lr) {
  for (auto& [id, st] : states_) {
    Tensor& p = *st.param;
    if (p.grad.size() != p.data.size())
      throw StateError("dense adam: parameter '" + id + "' has no gradient");
    st.t += 1;
    const double b1t = std::pow(hyper_.beta1, static_cast<double>(st.t));
    const double b2t = std::pow(hyper_.beta2, static_cast<double>(st.t));
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      p.data[i] = detail::adam_update(p.data[i], p.grad[i], st.m[i], st.v[i],
                                      hyper_, lr, b1t, b2t);
    }
  }
}

std::size_t DenseAdam::state_floats() const {
  std::size_t n = 0;
  for (const auto& [id, st] : states_) n += st.m.size() + st.v.size();
  return n;
}

long long DenseAdam::update_flops_per_step() const {
  long long n = 0;
  for (const auto& [id, st] : states_)
    n += kAdamFlopsPerParam * static_cast<long long>(st.m.size());
  return n;
}

}  // namespace smt
