#include "pmn/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "pmn/jsonw.hpp"
#include "pmn/rng.hpp"
#include <json.hpp>

namespace pmn {

void SceneParams::validate() const {
  if (categories < 2 || attributes < 2)
    throw ValueError("scene: need at least 2 categories and 2 attributes");
  if (relations < 1 || relations > kRelationCount)
    throw ValueError(strformat("scene: relations must be in [1,%d]", kRelationCount));
  if (max_entities < 1 || min_entities < 1 || min_entities > max_entities)
    throw ValueError("scene: bad entity range");
  if (grid * grid < max_entities)
    throw ValueError("scene: grid too small for max_entities");
  if (pos_width % 4 != 0 || pos_width <= 0)
    throw ValueError("scene: pos_width must be a positive multiple of 4");
  if (cat_width < 1 || att_width < 1)
    throw ValueError("scene: embedding block widths must be positive");
}

Scene generate_scene(uint64_t seed, const SceneParams& p) {
  p.validate();
  Rng rng = Rng(seed).split(0x5ce11e);
  Scene s;
  s.seed = seed;
  int n = p.min_entities +
          static_cast<int>(rng.below(static_cast<uint64_t>(p.max_entities - p.min_entities + 1)));

  // Distinct jittered grid cells keep positions pairwise distinct.
  std::vector<int> cells(static_cast<size_t>(p.grid * p.grid));
  for (size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
  for (size_t i = cells.size(); i > 1; --i)
    std::swap(cells[i - 1], cells[rng.below(i)]);

  double cell_w = 1.0 / p.grid;
  for (int i = 0; i < n; ++i) {
    Entity e;
    e.category = static_cast<int>(rng.below(static_cast<uint64_t>(p.categories)));
    int natt = 1 + static_cast<int>(rng.below(2));
    while (static_cast<int>(e.attributes.size()) < natt) {
      int a = static_cast<int>(rng.below(static_cast<uint64_t>(p.attributes)));
      if (std::find(e.attributes.begin(), e.attributes.end(), a) == e.attributes.end())
        e.attributes.push_back(a);
    }
    std::sort(e.attributes.begin(), e.attributes.end());
    int cell = cells[static_cast<size_t>(i)];
    int cx = cell % p.grid, cy = cell / p.grid;
    e.x = (cx + 0.15 + 0.7 * rng.uniform()) * cell_w;
    e.y = (cy + 0.15 + 0.7 * rng.uniform()) * cell_w;
    s.entities.push_back(std::move(e));
  }
  return s;
}

RenderedScene render_env(const Scene& scene, double sigma, const SceneParams& p) {
  p.validate();
  if (sigma < 0) throw ValueError("render: sigma must be >= 0");
  size_t n = scene.entities.size();
  size_t d = static_cast<size_t>(p.feature_width());

  // Fixed random embedding tables, shared by every scene under one
  // render_seed. Block scale ~1/sqrt(width) keeps row norms O(1).
  Rng table_rng(p.render_seed);
  auto make_table = [&](int rows, int width, uint64_t tag) {
    Rng r = table_rng.split(tag);
    std::vector<double> t(static_cast<size_t>(rows) * width);
    double s = 1.0 / std::sqrt(static_cast<double>(width));
    for (auto& v : t) v = r.normal() * s;
    return t;
  };
  std::vector<double> cat_table = make_table(p.categories, p.cat_width, 1);
  std::vector<double> att_table = make_table(p.attributes, p.att_width, 2);

  Tensor X({n, d});
  RenderedScene out;
  // sigma participates in the noise stream so distinct sigmas give
  // distinct (still deterministic) renderings.
  uint64_t sig_bits;
  static_assert(sizeof(double) == sizeof(uint64_t));
  std::memcpy(&sig_bits, &sigma, sizeof(sigma));
  Rng noise = Rng(scene.seed).split(0xfea7u ^ sig_bits);

  int freqs = p.pos_width / 4;
  for (size_t i = 0; i < n; ++i) {
    const Entity& e = scene.entities[i];
    double* row = X.data() + i * d;
    size_t off = 0;
    const double* cat = cat_table.data() + static_cast<size_t>(e.category) * p.cat_width;
    for (int j = 0; j < p.cat_width; ++j) row[off++] = cat[j];
    for (int j = 0; j < p.att_width; ++j) {
      double acc = 0.0;
      for (int a : e.attributes) acc += att_table[static_cast<size_t>(a) * p.att_width + j];
      row[off++] = acc;
    }
    for (int f = 1; f <= freqs; ++f) {
      row[off++] = std::sin(6.283185307179586 * f * e.x);
      row[off++] = std::cos(6.283185307179586 * f * e.x);
      row[off++] = std::sin(6.283185307179586 * f * e.y);
      row[off++] = std::cos(6.283185307179586 * f * e.y);
    }
    for (int s = 0; s < p.max_entities; ++s)
      row[off++] = (static_cast<int>(i) == s) ? 1.0 : 0.0;
    if (sigma > 0)
      for (size_t j = 0; j < d; ++j) row[j] += sigma * noise.normal();
    out.positions.push_back({e.x, e.y});
  }
  out.features = std::move(X);
  return out;
}

// -- relations ----------------------------------------------------------------

namespace {
constexpr double kMargin = 0.05;
constexpr double kBand = 0.08;
constexpr double kNear = 0.25;
constexpr double kFar = 0.6;

double dist(const std::array<double, 2>& a, const std::array<double, 2>& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}
}  // namespace

const char* relation_name(int rel) {
  static const char* names[kRelationCount] = {
      "left-of", "right-of", "above", "below",
      "near",    "far",      "same-row", "same-column"};
  if (rel < 0 || rel >= kRelationCount) throw ValueError("relation: bad index");
  return names[rel];
}

bool relation_holds(int rel, const std::array<double, 2>& a,
                    const std::array<double, 2>& b) {
  switch (rel) {
    case 0: return a[0] + kMargin < b[0];
    case 1: return a[0] > b[0] + kMargin;
    case 2: return a[1] > b[1] + kMargin;
    case 3: return a[1] + kMargin < b[1];
    case 4: return dist(a, b) < kNear;
    case 5: return dist(a, b) > kFar;
    case 6: return std::fabs(a[1] - b[1]) < kBand;
    case 7: return std::fabs(a[0] - b[0]) < kBand;
    default: throw ValueError("relation: bad index");
  }
}

// -- vocab / answers ------------------------------------------------------------

const char* task_name(Task t) {
  switch (t) {
    case Task::Obj: return "obj";
    case Task::Att: return "att";
    case Task::Rel: return "rel";
    case Task::Cnt: return "cnt";
    case Task::Cap: return "cap";
    case Task::Qa: return "qa";
  }
  return "?";
}

Task task_from_name(const std::string& name) {
  for (Task t : {Task::Obj, Task::Att, Task::Rel, Task::Cnt, Task::Cap, Task::Qa})
    if (name == task_name(t)) return t;
  throw ValueError("unknown task name: " + name);
}

const char* template_name(Template t) {
  switch (t) {
    case Template::WhatCategoryAt: return "what-category";
    case Template::WhatAttribute: return "what-attribute";
    case Template::WhichEntityRel: return "which-entity-rel";
    case Template::HowManyCategory: return "count-category";
    case Template::HowManyRel: return "count-rel";
    case Template::WhatCategoryRel: return "what-category-rel";
    case Template::HowManyCategoryRel: return "count-category-rel";
  }
  return "?";
}

Vocab::Vocab(const SceneParams& p) {
  auto add = [&](const std::string& w) {
    index_[w] = static_cast<int>(words_.size());
    words_.push_back(w);
  };
  for (const char* w : {"<pad>", "<bos>", "<eos>", ";", "what", "category",
                        "attribute", "of", "at", "entity", "is", "how", "many",
                        "which"})
    add(w);
  cat0_ = static_cast<int>(words_.size());
  for (int c = 0; c < p.categories; ++c) add("cat:" + std::to_string(c));
  att0_ = static_cast<int>(words_.size());
  for (int a = 0; a < p.attributes; ++a) add("att:" + std::to_string(a));
  rel0_ = static_cast<int>(words_.size());
  for (int r = 0; r < p.relations; ++r) add(relation_name(r));
  slot0_ = static_cast<int>(words_.size());
  for (int s = 0; s < p.max_entities; ++s) add("slot:" + std::to_string(s));
  cell0_ = static_cast<int>(words_.size());
  for (int c = 0; c < p.grid * p.grid; ++c) add("cell:" + std::to_string(c));
}

int Vocab::id(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) throw ValueError("vocab: unknown word " + word);
  return it->second;
}

const std::string& Vocab::word(int id) const {
  if (id < 0 || static_cast<size_t>(id) >= words_.size())
    throw ValueError("vocab: bad token id");
  return words_[static_cast<size_t>(id)];
}

AnswerSpace::AnswerSpace(const SceneParams& p, int count_max)
    : cat_n_(p.categories), att_n_(p.attributes), slot_n_(p.max_entities),
      cnt_n_(count_max + 1) {}

std::string AnswerSpace::name(int a) const {
  if (a < cat_n_) return "cat:" + std::to_string(a);
  a -= cat_n_;
  if (a < att_n_) return "att:" + std::to_string(a);
  a -= att_n_;
  if (a < slot_n_) return "slot:" + std::to_string(a);
  a -= slot_n_;
  if (a < cnt_n_) return std::to_string(a);
  throw ValueError("answers: bad id");
}

int AnswerSpace::joint_from(Template t, int task_answer) const {
  switch (t) {
    case Template::WhatCategoryAt:
    case Template::WhatCategoryRel: return category(task_answer);
    case Template::WhatAttribute: return attribute(task_answer);
    case Template::WhichEntityRel: return slot(task_answer);
    case Template::HowManyCategory:
    case Template::HowManyRel:
    case Template::HowManyCategoryRel: return count(task_answer);
  }
  throw ValueError("answers: bad template");
}

// -- oracle ---------------------------------------------------------------------

std::optional<int> try_oracle(const Scene& scene, const Question& q,
                              const SceneParams& p) {
  int n = static_cast<int>(scene.entities.size());
  auto need_slot = [&](int s) {
    if (s < 0 || s >= n) throw ValueError("oracle: entity slot out of range");
  };
  auto related = [&](int anchor) {
    std::vector<int> out;
    for (int j = 0; j < n; ++j) {
      if (j == anchor) continue;
      if (relation_holds(q.arg_rel, {scene.entities[j].x, scene.entities[j].y},
                         {scene.entities[anchor].x, scene.entities[anchor].y}))
        out.push_back(j);
    }
    return out;
  };

  switch (q.templ) {
    case Template::WhatCategoryAt:
      need_slot(q.arg_slot);
      return scene.entities[static_cast<size_t>(q.arg_slot)].category;
    case Template::WhatAttribute: {
      need_slot(q.arg_slot);
      const auto& atts = scene.entities[static_cast<size_t>(q.arg_slot)].attributes;
      if (atts.size() != 1) return std::nullopt;  // ambiguous
      return atts[0];
    }
    case Template::WhichEntityRel: {
      need_slot(q.arg_slot);
      if (q.arg_rel < 0 || q.arg_rel >= p.relations)
        throw ValueError("oracle: relation out of range");
      auto r = related(q.arg_slot);
      if (r.size() != 1) return std::nullopt;
      return r[0];
    }
    case Template::HowManyCategory: {
      if (q.arg_cat < 0 || q.arg_cat >= p.categories)
        throw ValueError("oracle: category out of range");
      int c = 0;
      for (const auto& e : scene.entities) c += e.category == q.arg_cat;
      return c;
    }
    case Template::HowManyRel: {
      need_slot(q.arg_slot);
      if (q.arg_rel < 0 || q.arg_rel >= p.relations)
        throw ValueError("oracle: relation out of range");
      return static_cast<int>(related(q.arg_slot).size());
    }
    case Template::WhatCategoryRel: {
      need_slot(q.arg_slot);
      auto r = related(q.arg_slot);
      if (r.size() != 1) return std::nullopt;
      return scene.entities[static_cast<size_t>(r[0])].category;
    }
    case Template::HowManyCategoryRel: {
      need_slot(q.arg_slot);
      if (q.arg_cat < 0 || q.arg_cat >= p.categories)
        throw ValueError("oracle: category out of range");
      int c = 0;
      for (int j : related(q.arg_slot))
        c += scene.entities[static_cast<size_t>(j)].category == q.arg_cat;
      return c;
    }
  }
  throw ValueError("oracle: malformed question");
}

int oracle_answer(const Scene& scene, const Question& q, const SceneParams& p) {
  auto a = try_oracle(scene, q, p);
  if (!a.has_value())
    throw ValueError(std::string("oracle: question has no unambiguous answer (") +
                     template_name(q.templ) + ")");
  return *a;
}

// -- question generation ---------------------------------------------------------

namespace {

std::vector<int> make_tokens(const Question& q, const Vocab& v) {
  switch (q.templ) {
    case Template::WhatCategoryAt:
      return {v.id("what"), v.id("category"), v.id("at"), v.slot(q.arg_slot)};
    case Template::WhatAttribute:
      return {v.id("what"), v.id("attribute"), v.id("of"), v.slot(q.arg_slot)};
    case Template::WhichEntityRel:
      return {v.id("which"), v.id("entity"), v.id("is"), v.rel(q.arg_rel),
              v.id("of"), v.slot(q.arg_slot)};
    case Template::HowManyCategory:
      return {v.id("how"), v.id("many"), v.cat(q.arg_cat)};
    case Template::HowManyRel:
      return {v.id("how"), v.id("many"), v.rel(q.arg_rel), v.id("of"),
              v.slot(q.arg_slot)};
    case Template::WhatCategoryRel:
      return {v.id("what"), v.id("category"), v.id("is"), v.rel(q.arg_rel),
              v.id("of"), v.slot(q.arg_slot)};
    case Template::HowManyCategoryRel:
      return {v.id("how"), v.id("many"), v.cat(q.arg_cat), v.rel(q.arg_rel),
              v.id("of"), v.slot(q.arg_slot)};
  }
  throw ValueError("tokens: bad template");
}

}  // namespace

void derive_provenance(Question& q, const Vocab& v) {
  const auto& t = q.tokens;
  auto bad = [&]() -> ValueError {
    return ValueError("dataset: unrecognized token pattern");
  };
  if (t.empty()) throw bad();
  q.arg_slot = q.arg_cat = q.arg_att = q.arg_rel = -1;
  for (int tok : t) {
    if (v.is_cat(tok)) q.arg_cat = v.cat_of(tok);
    else if (v.is_att(tok)) q.arg_att = v.att_of(tok);
    else if (v.is_rel(tok)) q.arg_rel = v.rel_of(tok);
    else if (v.is_slot(tok)) q.arg_slot = v.slot_of(tok);
  }
  if (t[0] == v.id("which")) {
    q.templ = Template::WhichEntityRel;
  } else if (t[0] == v.id("how")) {
    if (q.arg_cat >= 0 && q.arg_rel >= 0) q.templ = Template::HowManyCategoryRel;
    else if (q.arg_rel >= 0) q.templ = Template::HowManyRel;
    else if (q.arg_cat >= 0) q.templ = Template::HowManyCategory;
    else throw bad();
  } else if (t[0] == v.id("what")) {
    if (t.size() > 1 && t[1] == v.id("attribute")) q.templ = Template::WhatAttribute;
    else if (q.arg_rel >= 0) q.templ = Template::WhatCategoryRel;
    else q.templ = Template::WhatCategoryAt;
  } else {
    throw bad();
  }
}

QuestionMix QuestionMix::for_task(Task t) {
  QuestionMix m;
  switch (t) {
    case Task::Obj:
      m = {1, 0, 0, 0, 0, 0, 0, 4};
      break;
    case Task::Att:
      m = {0, 1, 0, 0, 0, 0, 0, 4};
      break;
    case Task::Rel:
      m = {0, 0, 1, 0, 0, 0, 0, 4};
      break;
    case Task::Cnt:
      m = {0, 0, 0, 1, 1, 0, 0, 6};
      break;
    case Task::Cap:
      m = {1, 0, 0, 0, 0, 0, 0, 1};  // captions rate scenes, not questions
      break;
    case Task::Qa:
      m = {1, 1, 1, 1, 1, 1, 0, 6};
      break;
  }
  return m;
}

std::vector<Question> make_questions(const Scene& scene, const QuestionMix& mix,
                                     uint64_t seed, const SceneParams& p,
                                     Task task, double sigma) {
  Vocab v(p);
  Rng rng = Rng(seed).split(0x9e57 + scene.seed);
  const double w[7] = {mix.what_category, mix.what_attribute, mix.which_entity_rel,
                       mix.how_many_category, mix.how_many_rel,
                       mix.what_category_rel, mix.how_many_category_rel};
  double total = 0;
  for (double x : w) {
    if (x < 0) throw ValueError("questions: mix weights must be >= 0");
    total += x;
  }
  if (total <= 0) throw ValueError("questions: all mix weights are zero");

  std::vector<Question> out;
  std::vector<std::vector<int>> seen;
  int n = static_cast<int>(scene.entities.size());
  int attempts = mix.per_scene * 12;
  while (static_cast<int>(out.size()) < mix.per_scene && attempts-- > 0) {
    double pickw = rng.uniform(0, total);
    int ti = 0;
    for (; ti < 6; ++ti) {
      if (pickw < w[ti]) break;
      pickw -= w[ti];
    }
    Question q;
    q.scene_seed = scene.seed;
    q.sigma = sigma;
    q.task = task;
    q.templ = static_cast<Template>(ti);
    q.arg_slot = static_cast<int>(rng.below(static_cast<uint64_t>(n)));
    q.arg_cat = static_cast<int>(rng.below(static_cast<uint64_t>(p.categories)));
    q.arg_rel = static_cast<int>(rng.below(static_cast<uint64_t>(p.relations)));
    auto ans = try_oracle(scene, q, p);
    if (!ans.has_value()) continue;
    q.answer = *ans;
    // Drop sampled arguments the template does not use, so provenance is
    // exactly what the tokens say.
    switch (q.templ) {
      case Template::WhatCategoryAt:
      case Template::WhatAttribute: q.arg_cat = q.arg_rel = -1; break;
      case Template::WhichEntityRel:
      case Template::WhatCategoryRel:
      case Template::HowManyRel: q.arg_cat = -1; break;
      case Template::HowManyCategory: q.arg_slot = q.arg_rel = -1; break;
      case Template::HowManyCategoryRel: break;
    }
    if (q.templ == Template::WhatAttribute)
      q.arg_att = q.answer;
    q.tokens = make_tokens(q, v);
    if (std::find(seen.begin(), seen.end(), q.tokens) != seen.end()) continue;
    seen.push_back(q.tokens);
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<int> reference_caption(const Scene& scene, const Vocab& v,
                                   const SceneParams& p, int length) {
  std::vector<int> out;
  for (const auto& e : scene.entities) {
    if (static_cast<int>(out.size()) + 4 > length) break;
    int cx = std::min(p.grid - 1, static_cast<int>(e.x * p.grid));
    int cy = std::min(p.grid - 1, static_cast<int>(e.y * p.grid));
    out.push_back(v.cat(e.category));
    out.push_back(v.att(e.attributes.front()));
    out.push_back(v.cell(cy * p.grid + cx));
    out.push_back(v.id(";"));
  }
  if (static_cast<int>(out.size()) < length) out.push_back(v.eos());
  while (static_cast<int>(out.size()) < length) out.push_back(v.pad());
  return out;
}

std::vector<Question> build_question_set(Task task, size_t count,
                                         uint64_t base_seed, double sigma,
                                         const SceneParams& p,
                                         const QuestionMix& mix) {
  std::vector<Question> out;
  uint64_t scene_seed = base_seed;
  uint64_t barren_scenes = 0;
  while (out.size() < count) {
    Scene s = generate_scene(scene_seed, p);
    auto qs = make_questions(s, mix, base_seed ^ 0x71, p, task, sigma);
    if (qs.empty() && ++barren_scenes > 1000)
      throw ValueError("questions: the requested mix is unsatisfiable in this world");
    for (auto& q : qs) {
      out.push_back(std::move(q));
      if (out.size() == count) break;
    }
    ++scene_seed;
  }
  return out;
}

std::string question_type(const Question& q) { return template_name(q.templ); }

// -- dataset io -------------------------------------------------------------------

void save_dataset(const std::string& path, const std::vector<Question>& items) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("dataset: cannot open " + path + " for writing");
  for (const auto& q : items) {
    JVal toks = JVal::arr();
    for (int t : q.tokens) toks.push(JVal::integer(t));
    out << JVal::obj()
               .set("scene_seed", JVal::integer(static_cast<int64_t>(q.scene_seed)))
               .set("sigma", JVal::number(q.sigma, 17))
               .set("tokens", std::move(toks))
               .set("task", JVal::str(task_name(q.task)))
               .set("answer", JVal::integer(q.answer))
               .dump()
        << "\n";
  }
  if (!out) throw IoError("dataset: write failed for " + path);
}

std::vector<Question> load_dataset(const std::string& path, const SceneParams& p) {
  std::ifstream in(path);
  if (!in) throw IoError("dataset: cannot open " + path);
  Vocab v(p);
  std::vector<Question> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw IoError(strformat("dataset: bad JSON at %s:%zu", path.c_str(), lineno));
    Question q;
    q.scene_seed = j.at("scene_seed").get<uint64_t>();
    q.sigma = j.at("sigma").get<double>();
    for (const auto& t : j.at("tokens")) q.tokens.push_back(t.get<int>());
    q.task = task_from_name(j.at("task").get<std::string>());
    q.answer = j.at("answer").get<int>();
    derive_provenance(q, v);
    out.push_back(std::move(q));
  }
  return out;
}

}  // namespace pmn
