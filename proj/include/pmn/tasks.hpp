#pragma once

#include "pmn/checkpoint.hpp"
#include "pmn/graph.hpp"
#include "pmn/scene.hpp"

namespace pmn {

/// Which optional children a task module is built with. The attention and
/// residual helpers are always present; these flags cover the composed
/// lower-level task modules.
struct Composition {
  bool obj = true;
  bool att = true;
  bool rel = true;
  bool cnt = true;
  bool cap = true;
};

struct TaskGraphConfig {
  SceneParams scene{.categories = 6, .attributes = 5, .relations = 8,
                    .max_entities = 8, .min_entities = 3, .grid = 4,
                    .cat_width = 22, .att_width = 14, .pos_width = 16,
                    .render_seed = 77};
  double sigma = 0.08;
  int hidden = 48;        // state and receiver width
  int embed = 32;         // token embedding width
  int penultimate = 48;   // object/attribute feature width
  int attn = 32;          // attention joint width
  int count_hidden = 24;  // counting head hidden width
  int count_bins = 8;
  int count_max = 12;
  int cap_steps = 12;
  int qa_steps = 2;
  uint64_t seed = 1;
  Composition cnt_children{.obj = false, .att = false, .rel = true,
                           .cnt = false, .cap = false};
  Composition qa_children;  // all on
  /// Share the attention helper and the relationship transmitters between
  /// the counting and QA modules (they consume the same form of input).
  bool share_qa_cnt_wiring = true;

  int feature_width() const { return scene.feature_width(); }
};

/// The six-task module graph over one registry, plus the pieces the
/// training harness needs outside of plain execution (question encoders,
/// classification heads, transmitter views for auxiliary supervision).
struct TaskGraph {
  TaskGraphConfig cfg;
  Vocab vocab;
  AnswerSpace answers;
  Registry registry;
  std::map<Task, ModuleHandle> handles;

  struct Encoder {
    Embedding emb;
    GruCell gru;
  };
  std::map<Task, Encoder> encoders;  // cnt and qa

  ParamsPtr obj_head;  // penultimate -> categories
  ParamsPtr att_head;  // penultimate -> attributes (multi-label)

  // Unnormalized views of the counting module's relationship transmitter,
  // used for the optional query-supervision loss.
  SoftAttention cnt_rel_box_raw;
  Mlp cnt_rel_kind;

  /// Encode a question's tokens with the task's own encoder (cnt / qa).
  Var encode_question(Tape& tape, Task task, std::span<const int> tokens) const;

  /// Build the module input for a question (feature row, structured
  /// one-hot pair, encoded sentence, or zero vector, per task).
  Var make_query(Tape& tape, const Environment& env, const Question& q) const;

  /// Environment for a question's scene, with teacher captions attached
  /// when requested.
  Environment environment_for(Tape& tape, const Scene& scene,
                              double sigma) const;

  int answer_space_size(Task t) const;
};

/// Build and register the six task modules (levels 0/0/1/1/2/3) according
/// to the composition flags. Children must already be present, which the
/// level-ordered construction guarantees.
TaskGraph build_task_graph(const TaskGraphConfig& cfg);

/// Checkpoint plumbing for one task module (component sets in a stable
/// order).
std::vector<CheckpointSection> checkpoint_sections(const TaskGraph& g, Task t);

/// Registered (non-owned) modules a task depends on, transitively, in
/// registration (level) order.
std::vector<Task> required_children(const TaskGraph& g, Task t);

/// Small widths for gradient checking and fast tests.
TaskGraphConfig tiny_task_config(uint64_t seed = 1);

}  // namespace pmn
