#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pmn/tensor.hpp"

namespace pmn {

/// Geometry of the synthetic world and of its feature rendering.
/// Feature width d = cat_width + att_width + pos_width + max_entities
/// (category block, attribute block, position encoding, slot one-hot).
struct SceneParams {
  int categories = 6;
  int attributes = 5;
  int relations = 8;  // prefix of the predicate table below
  int max_entities = 12;
  int min_entities = 3;
  int grid = 4;  // positions are jittered grid cells, so they stay distinct
  int cat_width = 22;
  int att_width = 14;
  int pos_width = 16;  // multiple of 4 (sin/cos pairs for x and y)
  uint64_t render_seed = 77;

  int feature_width() const { return cat_width + att_width + pos_width + max_entities; }
  void validate() const;
};

struct Entity {
  int category = 0;
  std::vector<int> attributes;  // sorted, distinct
  double x = 0.0, y = 0.0;
};

struct Scene {
  uint64_t seed = 0;
  std::vector<Entity> entities;
};

Scene generate_scene(uint64_t seed, const SceneParams& p);

/// Rendered entity features: per-entity embedding blocks plus Gaussian
/// noise of scale sigma, deterministic in (scene.seed, sigma).
struct RenderedScene {
  Tensor features;  // N x d
  std::vector<std::array<double, 2>> positions;
};

RenderedScene render_env(const Scene& scene, double sigma, const SceneParams& p);

// -- relations ----------------------------------------------------------------

/// Pairwise spatial predicates over unit-square positions, in table order:
/// left-of, right-of, above, below, near, far, same-row, same-column.
/// relation_holds(r, a, b) reads "a is <r> of b"; above means larger y.
constexpr int kRelationCount = 8;
const char* relation_name(int rel);
bool relation_holds(int rel, const std::array<double, 2>& a,
                    const std::array<double, 2>& b);

// -- questions ----------------------------------------------------------------

enum class Task { Obj, Att, Rel, Cnt, Cap, Qa };
const char* task_name(Task t);
Task task_from_name(const std::string& name);

enum class Template {
  WhatCategoryAt,     // what category at slot i          -> category
  WhatAttribute,      // what attributes of entity i      -> the unique attribute
  WhichEntityRel,     // which entity is <rel> of entity i -> the unique slot
  HowManyCategory,    // how many of category c           -> count
  HowManyRel,         // how many <rel> of entity i       -> count
  WhatCategoryRel,    // what category is <rel> of entity i -> category
  HowManyCategoryRel, // how many <cat> <rel> of entity i -> count
};
const char* template_name(Template t);

struct Question {
  uint64_t scene_seed = 0;
  double sigma = 0.0;
  std::vector<int> tokens;
  Task task = Task::Qa;
  int answer = -1;  // in the task's own answer space
  // provenance
  Template templ = Template::WhatCategoryAt;
  int arg_slot = -1, arg_cat = -1, arg_att = -1, arg_rel = -1;
};

/// Token ids shared by questions and captions: specials, template words,
/// then category / attribute / relation / slot / grid-cell words.
class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(const SceneParams& p);

  int id(const std::string& word) const;
  const std::string& word(int id) const;
  size_t size() const { return words_.size(); }

  int pad() const { return id("<pad>"); }
  int bos() const { return id("<bos>"); }
  int eos() const { return id("<eos>"); }
  int cat(int c) const { return cat0_ + c; }
  int att(int a) const { return att0_ + a; }
  int rel(int r) const { return rel0_ + r; }
  int slot(int s) const { return slot0_ + s; }
  int cell(int c) const { return cell0_ + c; }

  bool is_cat(int t) const { return t >= cat0_ && t < att0_; }
  bool is_att(int t) const { return t >= att0_ && t < rel0_; }
  bool is_rel(int t) const { return t >= rel0_ && t < slot0_; }
  bool is_slot(int t) const { return t >= slot0_ && t < cell0_; }
  int cat_of(int t) const { return t - cat0_; }
  int att_of(int t) const { return t - att0_; }
  int rel_of(int t) const { return t - rel0_; }
  int slot_of(int t) const { return t - slot0_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> index_;
  int cat0_ = 0, att0_ = 0, rel0_ = 0, slot0_ = 0, cell0_ = 0;
};

/// Joint answer identifiers for the question-answering task: categories,
/// then attributes, then entity slots, then counts 0..count_max.
class AnswerSpace {
 public:
  AnswerSpace() = default;
  AnswerSpace(const SceneParams& p, int count_max);

  int category(int c) const { return c; }
  int attribute(int a) const { return cat_n_ + a; }
  int slot(int s) const { return cat_n_ + att_n_ + s; }
  int count(int n) const { return cat_n_ + att_n_ + slot_n_ + n; }
  size_t size() const { return static_cast<size_t>(cat_n_ + att_n_ + slot_n_ + cnt_n_); }
  std::string name(int answer) const;

  /// Map a task-space answer into the joint space.
  int joint_from(Template t, int task_answer) const;

 private:
  int cat_n_ = 0, att_n_ = 0, slot_n_ = 0, cnt_n_ = 0;
};

/// Relative sampling weights per template; zero disables a template.
struct QuestionMix {
  double what_category = 1.0;
  double what_attribute = 1.0;
  double which_entity_rel = 1.0;
  double how_many_category = 1.0;
  double how_many_rel = 1.0;
  double what_category_rel = 1.0;
  double how_many_category_rel = 0.0;
  int per_scene = 6;

  static QuestionMix for_task(Task t);
};

/// Sample questions from a scene. A draw whose template cannot be answered
/// unambiguously in this scene is skipped, never emitted with a fabricated
/// answer. Answers are produced by the enumeration oracle below.
std::vector<Question> make_questions(const Scene& scene, const QuestionMix& mix,
                                     uint64_t seed, const SceneParams& p,
                                     Task task, double sigma);

/// Exhaustive-enumeration answer: throws ValueError on a malformed or
/// unanswerable question.
int oracle_answer(const Scene& scene, const Question& q, const SceneParams& p);

/// Unchecked variant used during generation: nullopt when the template is
/// unsatisfiable for this scene.
std::optional<int> try_oracle(const Scene& scene, const Question& q,
                              const SceneParams& p);

/// Fixed-grammar reference description: "<cat> <att> at <cell> ;" per
/// entity in slot order, truncated/padded to `length` with eos.
std::vector<int> reference_caption(const Scene& scene, const Vocab& vocab,
                                   const SceneParams& p, int length);

/// Generate a dataset of `count` questions for one task across scenes
/// seeded from base_seed.
std::vector<Question> build_question_set(Task task, size_t count,
                                         uint64_t base_seed, double sigma,
                                         const SceneParams& p,
                                         const QuestionMix& mix);

std::string question_type(const Question& q);

// -- dataset files -------------------------------------------------------------

/// One JSON record per line: {scene_seed, sigma, tokens, task, answer}.
/// Scenes are regenerated from seeds; provenance is re-derived from tokens.
void save_dataset(const std::string& path, const std::vector<Question>& items);
std::vector<Question> load_dataset(const std::string& path, const SceneParams& p);

/// Re-derive template/args from a token sequence.
void derive_provenance(Question& q, const Vocab& vocab);

}  // namespace pmn
