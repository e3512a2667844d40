#include "pmn/params.hpp"

#include <cmath>

namespace pmn {

Tensor& ParameterSet::add(const std::string& name, std::vector<size_t> shape,
                          Rng& rng) {
  if (index_.count(name))
    throw ValueError("params[" + label_ + "]: duplicate entry " + name);
  Tensor t(shape);
  size_t fan_out = shape.empty() ? 1 : shape[0];
  size_t fan_in = shape.size() > 1 ? shape[1] : (shape.empty() ? 1 : shape[0]);
  if (shape.size() == 1) fan_in = 1;  // bias-like
  double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-a, a);
  index_[name] = entries_.size();
  entries_.push_back({name, std::move(t), true, false, Tensor(shape), Tensor(shape), 0});
  return entries_.back().value;
}

Tensor& ParameterSet::add_const(const std::string& name,
                                std::vector<size_t> shape, double fill) {
  if (index_.count(name))
    throw ValueError("params[" + label_ + "]: duplicate entry " + name);
  Tensor t(shape);
  for (size_t i = 0; i < t.size(); ++i) t[i] = fill;
  index_[name] = entries_.size();
  entries_.push_back({name, std::move(t), true, false, Tensor(shape), Tensor(shape), 0});
  return entries_.back().value;
}

Tensor& ParameterSet::operator[](const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end())
    throw ValueError("params[" + label_ + "]: no entry " + name);
  return entries_[it->second].value;
}

const Tensor& ParameterSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw ValueError("params[" + label_ + "]: no entry " + name);
  return entries_[it->second].value;
}

ParameterSet::Entry& ParameterSet::entry(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end())
    throw ValueError("params[" + label_ + "]: no entry " + name);
  return entries_[it->second];
}

void ParameterSet::adam_step(const AdamConfig& cfg) {
  for (auto& e : entries_) {
    if (!e.trainable || e.statistic) continue;
    if (!e.value.has_grad())
      throw ValueError("adam: missing gradient for trainable entry " + label_ +
                       "." + e.name);
    e.step += 1;
    const auto& g = e.value.grad();
    auto& m = e.m.values();
    auto& v = e.v.values();
    auto& p = e.value.values();
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(e.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(e.step));
    for (size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace pmn
