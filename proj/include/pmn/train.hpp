#pragma once

#include <map>
#include <span>

#include "pmn/tasks.hpp"

namespace pmn {

struct TrainConfig {
  Task task = Task::Cnt;
  int epochs = 8;
  int batch = 32;
  double lr = 0.0005;  // 0.0001 is the counting default, see default_train_config
  double fraction = 1.0;
  uint64_t seed = 1;
  bool bce = false;           // binary cross-entropy for the QA answer loss
  bool fixed_gating = false;  // equal importance scores everywhere
  bool finetune_cnt = false;  // QA training also updates the counting module
  bool aux_rel_query_loss = false;  // supervise the counting->rel query
  double aux_weight = 1.0;
  std::vector<std::string> trainable_children;  // extra unfreeze overrides
};

TrainConfig default_train_config(Task t);

struct Metrics {
  std::string label;
  Task task = Task::Cnt;
  uint64_t seed = 0;
  size_t correct = 0;
  size_t total = 0;
  double accuracy = 0.0;
  std::map<std::string, std::array<size_t, 2>> per_type;  // {correct, total}
  std::vector<double> loss_curve;  // mean training loss per epoch
  size_t train_used = 0;
  double wall_seconds = 0.0;

  double type_accuracy(const std::string& type) const;
};

/// Scene/rendering cache shared by one single-threaded run.
class SampleCache {
 public:
  explicit SampleCache(const SceneParams& p) : params_(p) {}
  const Scene& scene(uint64_t seed);
  const RenderedScene& rendered(uint64_t seed, double sigma);

 private:
  SceneParams params_;
  std::map<uint64_t, Scene> scenes_;
  std::map<std::pair<uint64_t, uint64_t>, RenderedScene> rendered_;
};

/// Task loss for one executed sample, on the tape.
Var task_loss(TaskGraph& g, Tape& tape, const Question& q, const Scene& scene,
              const ModuleOutput& out, bool bce_for_qa);

/// Argmax prediction in the task's answer space; ties resolve to the
/// lowest index. For the caption task this is the first reference token
/// comparison slot (see evaluate for sequence scoring).
int predict_answer(TaskGraph& g, Tape& tape, const Question& q,
                   const ModuleOutput& out);

/// Train one task module against frozen children. Gradients flow through
/// children, but only the new module's parameters (plus explicitly
/// unfrozen children) are stepped. Throws on a non-finite loss, naming the
/// step.
Metrics train_task(TaskGraph& g, const TrainConfig& cfg,
                   std::span<const Question> train,
                   std::span<const Question> eval_set);

/// Accuracy of a trained module over a question set.
Metrics evaluate(TaskGraph& g, Task task, std::span<const Question> eval_set,
                 bool fixed_gating = false);

// -- datasets -----------------------------------------------------------------

struct QuestionSplit {
  std::vector<Question> train;
  std::vector<Question> eval;
};

QuestionSplit split_questions(std::vector<Question> all, double eval_fraction,
                              uint64_t seed);

/// Deterministic subsample: shuffle by seed, keep ceil(fraction * n).
std::vector<Question> take_fraction(std::span<const Question> all, double fraction,
                                    uint64_t seed);

// -- module persistence ----------------------------------------------------------

void save_module(const TaskGraph& g, Task t, const std::string& path);
CheckpointMeta load_module(TaskGraph& g, Task t, const std::string& path);

/// Concatenated bytes of every parameter tensor of a module (freeze checks).
std::vector<unsigned char> module_bytes(const TaskGraph& g, Task t);

// -- experiment drivers -----------------------------------------------------------

/// Question/epoch budgets for pretraining the lower-level modules once per
/// seed before an ablation or low-data sweep.
struct PretrainBudget {
  size_t obj_questions = 2500;
  size_t att_questions = 2500;
  size_t rel_questions = 6000;
  size_t cap_scenes = 800;
  size_t cnt_questions = 6000;
  int obj_epochs = 4;
  int att_epochs = 4;
  int rel_epochs = 6;
  int cap_epochs = 3;
  int cnt_epochs = 5;
};

/// Train every lower-level module `target` depends on, in level order.
void pretrain_children(TaskGraph& g, Task target, const PretrainBudget& budget,
                       uint64_t seed);

struct AblationCell {
  std::string label;
  Composition composition;
  bool fixed_gating = false;
};

struct AblationConfig {
  Task task = Task::Cnt;
  std::vector<AblationCell> cells;
  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  size_t train_questions = 20000;
  size_t eval_questions = 2500;
  int epochs = 0;     // 0: task default
  double lr = 0.0;    // 0: task default
  PretrainBudget pretrain;
  int jobs = 2;
};

struct AblationRow {
  std::string label;
  uint64_t seed = 0;
  Metrics metrics;
};

/// One training+evaluation per (cell, seed), sharing datasets and
/// pretrained children within a seed. Cells differ only in composition and
/// gating, so differences reflect composition.
std::vector<AblationRow> run_ablation(const TaskGraphConfig& gcfg,
                                      const AblationConfig& acfg);

struct LowDataPoint {
  double fraction = 1.0;
  uint64_t seed = 0;
  double base_accuracy = 0.0;
  double composed_accuracy = 0.0;
  double gain = 0.0;
};

struct LowDataConfig {
  std::vector<double> fractions = {0.05, 0.10, 0.25, 1.0};
  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  /// Fractions swept per seed; fractions not in this list run on the first
  /// seed only.
  double full_sweep_fraction = 0.10;
  size_t train_questions = 5000;
  size_t eval_questions = 2000;
  int epochs = 0;
  PretrainBudget pretrain;
  int jobs = 2;
};

/// Absolute accuracy gain of the composed QA module over the base module
/// per training-data fraction (the composed module omits the counting
/// child, whose questions overlap the QA set).
std::vector<LowDataPoint> run_low_data(const TaskGraphConfig& gcfg,
                                       const LowDataConfig& lcfg);

/// Machine-readable run record (same serialization family as traces).
std::string metrics_json(const Metrics& m);
std::string ablation_json(std::span<const AblationRow> rows);
std::string lowdata_json(std::span<const LowDataPoint> pts);
std::string ablation_table(std::span<const AblationRow> rows);

}  // namespace pmn
