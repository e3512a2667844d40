#pragma once

#include <map>
#include <string>
#include <vector>

#include "pmn/train.hpp"

namespace pmn {

/// Whole-run configuration: world geometry, model widths, dataset sizes,
/// training knobs, and sweep settings. Parsing is strict: unknown keys are
/// rejected with their path, every missing field takes its default, and
/// normalize(normalize(x)) == normalize(x).
struct Config {
  uint64_t seed = 1;
  TaskGraphConfig graph;

  struct Data {
    std::map<std::string, size_t> questions = {
        {"obj", 2500}, {"att", 2500}, {"rel", 6000},
        {"cap", 800},  {"cnt", 20000}, {"qa", 5000}};
    double eval_fraction = 0.15;
  } data;

  struct Train {
    int epochs = 0;    // 0: per-task default
    int batch = 32;
    double lr = 0.0;   // 0: per-task default
    double fraction = 1.0;
    bool bce = false;
    std::string gating = "learned";  // or "fixed"
    bool finetune_cnt = true;
    bool aux_rel_query_loss = true;
    double aux_weight = 1.0;
    std::vector<std::string> trainable_children;
  } train;

  struct Sweep {
    std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
    int jobs = 2;
    size_t train_questions = 20000;
    size_t eval_questions = 2500;
    int epochs = 0;
    double lr = 0.0;
  } ablation;

  struct LowData {
    std::vector<double> fractions = {0.05, 0.10, 0.25, 1.0};
    std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
    size_t train_questions = 5000;
    size_t eval_questions = 2000;
    int epochs = 0;
    int jobs = 2;
  } lowdata;

  PretrainBudget pretrain;

  /// Canonical single-line JSON with every field present.
  std::string to_json() const;

  /// Strict parse; empty text yields the full default config.
  static Config from_json(const std::string& text);

  /// Apply one "dotted.path=value" override.
  void apply_override(const std::string& assignment);

  TrainConfig train_config(Task t) const;
  uint64_t hash() const;
};

std::string normalize_config(const std::string& text);

}  // namespace pmn
