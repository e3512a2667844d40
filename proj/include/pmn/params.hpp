#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "pmn/rng.hpp"
#include "pmn/tape.hpp"
#include "pmn/tensor.hpp"

namespace pmn {

struct AdamConfig {
  double lr = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Named, ordered collection of trainable tensors with per-entry Adam state.
/// Frozen entries are skipped by the optimizer entirely; their bytes never
/// change across steps. Gradients still flow through them on the tape, which
/// is what lets a parent train its communication parameters against a frozen
/// child.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool trainable = true;
    /// Mutable running statistic rather than a learned weight: excluded
    /// from the optimizer but updated in-place by its owning layer while
    /// the module is being trained.
    bool statistic = false;
    Tensor m, v;
    int64_t step = 0;
  };

  explicit ParameterSet(std::string label = "") : label_(std::move(label)) {}

  /// Add a tensor initialized to uniform(-a, a), a = sqrt(6/(fan_in+fan_out)).
  Tensor& add(const std::string& name, std::vector<size_t> shape, Rng& rng);
  /// Add a tensor initialized to a constant.
  Tensor& add_const(const std::string& name, std::vector<size_t> shape,
                    double fill = 0.0);

  bool has(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& operator[](const std::string& name);
  const Tensor& at(const std::string& name) const;
  Entry& entry(const std::string& name);

  size_t count() const { return entries_.size(); }
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  const std::string& label() const { return label_; }
  void set_label(std::string l) { label_ = std::move(l); }

  void set_trainable(bool t) {
    for (auto& e : entries_)
      if (!e.statistic) e.trainable = t;
  }
  void set_trainable(const std::string& name, bool t) { entry(name).trainable = t; }

  void zero_grads() {
    for (auto& e : entries_) e.value.zero_grad();
  }

  /// Convenience: watch an entry on a tape.
  Var var(Tape& tape, const std::string& name) { return tape.watch((*this)[name]); }

  /// One Adam update with bias correction over trainable entries. Throws if
  /// a trainable entry has no gradient buffer.
  void adam_step(const AdamConfig& cfg);

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

 private:
  std::string label_;
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

using ParamsPtr = std::shared_ptr<ParameterSet>;

inline ParamsPtr make_params(std::string label = "") {
  return std::make_shared<ParameterSet>(std::move(label));
}

}  // namespace pmn
