#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pmn/rng.hpp"
#include "pmn/scene.hpp"

using namespace pmn;

namespace {
SceneParams small_params() {
  SceneParams p;
  p.categories = 4;
  p.attributes = 3;
  p.relations = 8;
  p.max_entities = 6;
  p.min_entities = 2;
  p.grid = 3;
  p.cat_width = 8;
  p.att_width = 6;
  p.pos_width = 8;
  return p;
}
}  // namespace

TEST_CASE("scene generation is deterministic in its seed") {
  SceneParams p = small_params();
  Scene a = generate_scene(42, p);
  Scene b = generate_scene(42, p);
  REQUIRE(a.entities.size() == b.entities.size());
  for (size_t i = 0; i < a.entities.size(); ++i) {
    CHECK(a.entities[i].category == b.entities[i].category);
    CHECK(a.entities[i].attributes == b.entities[i].attributes);
    CHECK(a.entities[i].x == b.entities[i].x);
    CHECK(a.entities[i].y == b.entities[i].y);
  }
  Scene c = generate_scene(43, p);
  bool same = a.entities.size() == c.entities.size();
  if (same && !a.entities.empty())
    same = a.entities[0].x == c.entities[0].x;
  CHECK_FALSE(same);
}

TEST_CASE("entity cap of one yields single-entity scenes") {
  SceneParams p = small_params();
  p.max_entities = 1;
  p.min_entities = 1;
  Scene s = generate_scene(7, p);
  CHECK(s.entities.size() == 1);
}

TEST_CASE("positions are pairwise distinct") {
  SceneParams p = small_params();
  for (uint64_t seed = 0; seed < 50; ++seed) {
    Scene s = generate_scene(seed, p);
    for (size_t i = 0; i < s.entities.size(); ++i)
      for (size_t j = i + 1; j < s.entities.size(); ++j) {
        bool distinct = s.entities[i].x != s.entities[j].x ||
                        s.entities[i].y != s.entities[j].y;
        CHECK(distinct);
      }
  }
}

TEST_CASE("category draws are uniform within multinomial bounds") {
  SceneParams p = small_params();
  size_t draws = 0;
  std::vector<size_t> hist(static_cast<size_t>(p.categories), 0);
  for (uint64_t seed = 0; seed < 10000; ++seed) {
    Scene s = generate_scene(seed, p);
    for (const auto& e : s.entities) {
      ++hist[static_cast<size_t>(e.category)];
      ++draws;
    }
  }
  double expect = static_cast<double>(draws) / p.categories;
  double sd = std::sqrt(expect * (1.0 - 1.0 / p.categories));
  for (size_t c = 0; c < hist.size(); ++c)
    CHECK(std::fabs(static_cast<double>(hist[c]) - expect) < 3.0 * sd);
}

TEST_CASE("default feature width is 64") {
  SceneParams p;  // defaults
  CHECK(p.feature_width() == 64);
}

TEST_CASE("noiseless rendering is a function of entity state alone") {
  SceneParams p = small_params();
  Scene a;
  a.seed = 1;
  a.entities.push_back({2, {1}, 0.25, 0.75});
  Scene b;
  b.seed = 2;  // different seed: no noise, so rows must still agree
  b.entities.push_back({2, {1}, 0.25, 0.75});
  RenderedScene ra = render_env(a, 0.0, p);
  RenderedScene rb = render_env(b, 0.0, p);
  for (size_t j = 0; j < ra.features.size(); ++j)
    CHECK(ra.features[j] == rb.features[j]);
}

TEST_CASE("noiseless rendering separates categories") {
  SceneParams p = small_params();
  std::vector<std::vector<double>> rows;
  for (int c = 0; c < p.categories; ++c) {
    Scene s;
    s.seed = 1;
    s.entities.push_back({c, {0}, 0.5, 0.5});
    RenderedScene r = render_env(s, 0.0, p);
    rows.emplace_back(r.features.values());
  }
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = i + 1; j < rows.size(); ++j) {
      double diff = 0;
      for (size_t k = 0; k < static_cast<size_t>(p.cat_width); ++k)
        diff += std::fabs(rows[i][k] - rows[j][k]);
      CHECK(diff > 1e-6);
    }
}

TEST_CASE("rendering is deterministic in (seed, sigma) and varies with both") {
  SceneParams p = small_params();
  Scene s = generate_scene(5, p);
  RenderedScene a = render_env(s, 0.1, p);
  RenderedScene b = render_env(s, 0.1, p);
  CHECK(a.features.values() == b.features.values());
  RenderedScene c = render_env(s, 0.2, p);
  CHECK(a.features.values() != c.features.values());
}

TEST_CASE("relation predicates follow the geometry") {
  std::array<double, 2> left{0.1, 0.5}, right{0.9, 0.5};
  CHECK(relation_holds(0, left, right));    // left-of
  CHECK_FALSE(relation_holds(0, right, left));
  CHECK(relation_holds(1, right, left));    // right-of
  std::array<double, 2> lo{0.5, 0.1}, hi{0.5, 0.9};
  CHECK(relation_holds(2, hi, lo));         // above = larger y
  CHECK(relation_holds(3, lo, hi));         // below
  CHECK(relation_holds(6, left, right));    // same-row
  CHECK(relation_holds(7, lo, hi));         // same-column
}

TEST_CASE("directional relations are antisymmetric") {
  Rng rng(9);
  for (int trial = 0; trial < 500; ++trial) {
    std::array<double, 2> a{rng.uniform(), rng.uniform()};
    std::array<double, 2> b{rng.uniform(), rng.uniform()};
    for (int rel : {0, 1, 2, 3}) {
      bool both = relation_holds(rel, a, b) && relation_holds(rel, b, a);
      CHECK_FALSE(both);
    }
  }
}

TEST_CASE("counting questions match direct enumeration") {
  SceneParams p = small_params();
  Scene s;
  s.seed = 3;
  s.entities = {{2, {0}, 0.1, 0.1}, {2, {1}, 0.5, 0.5}, {2, {2}, 0.9, 0.9},
                {1, {0}, 0.3, 0.8}};
  Question q;
  q.templ = Template::HowManyCategory;
  q.arg_cat = 2;
  CHECK(oracle_answer(s, q, p) == 3);
  q.arg_cat = 0;
  CHECK(oracle_answer(s, q, p) == 0);
  q.templ = Template::HowManyRel;
  q.arg_rel = 0;  // left-of entity 2 at (0.9, 0.9)
  q.arg_slot = 2;
  CHECK(oracle_answer(s, q, p) == 3);
}

TEST_CASE("generated questions always agree with the oracle") {
  SceneParams p = small_params();
  QuestionMix mix;  // all six templates
  mix.how_many_category_rel = 0.5;
  size_t checked = 0;
  for (uint64_t seed = 0; seed < 400; ++seed) {
    Scene s = generate_scene(seed, p);
    for (Task t : {Task::Cnt, Task::Qa, Task::Rel}) {
      auto qs = make_questions(s, mix, seed ^ 0xb0b, p, t, 0.05);
      for (const auto& q : qs) {
        CHECK(oracle_answer(s, q, p) == q.answer);
        ++checked;
      }
    }
  }
  CHECK(checked > 2000);
}

TEST_CASE("ambiguous attribute questions are skipped, not fabricated") {
  SceneParams p = small_params();
  QuestionMix mix{0, 1, 0, 0, 0, 0, 0, 8};
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Scene s = generate_scene(seed, p);
    auto qs = make_questions(s, mix, seed, p, Task::Att, 0.05);
    for (const auto& q : qs) {
      const auto& atts = s.entities[static_cast<size_t>(q.arg_slot)].attributes;
      CHECK(atts.size() == 1);
      CHECK(atts[0] == q.answer);
    }
  }
}

TEST_CASE("oracle rejects out-of-range arguments") {
  SceneParams p = small_params();
  Scene s = generate_scene(1, p);
  Question q;
  q.templ = Template::WhatCategoryAt;
  q.arg_slot = 100;
  CHECK_THROWS_AS(oracle_answer(s, q, p), ValueError);
  q.templ = Template::HowManyCategory;
  q.arg_cat = -1;
  CHECK_THROWS_AS(oracle_answer(s, q, p), ValueError);
}

TEST_CASE("dataset files round-trip exactly and deterministically") {
  namespace fs = std::filesystem;
  SceneParams p = small_params();
  auto qs = build_question_set(Task::Qa, 200, 11, 0.07, p, QuestionMix::for_task(Task::Qa));
  REQUIRE(qs.size() == 200);

  fs::path dir = fs::temp_directory_path() / "pmn_scene_test";
  fs::create_directories(dir);
  std::string path = (dir / "qa.jsonl").string();
  save_dataset(path, qs);
  auto loaded = load_dataset(path, p);
  REQUIRE(loaded.size() == qs.size());
  for (size_t i = 0; i < qs.size(); ++i) {
    CHECK(loaded[i].scene_seed == qs[i].scene_seed);
    CHECK(loaded[i].tokens == qs[i].tokens);
    CHECK(loaded[i].answer == qs[i].answer);
    CHECK(loaded[i].task == qs[i].task);
    CHECK(loaded[i].templ == qs[i].templ);
    CHECK(loaded[i].arg_slot == qs[i].arg_slot);
    CHECK(loaded[i].arg_rel == qs[i].arg_rel);
  }
  // Byte-identical regeneration.
  std::string path2 = (dir / "qa2.jsonl").string();
  auto qs2 = build_question_set(Task::Qa, 200, 11, 0.07, p, QuestionMix::for_task(Task::Qa));
  save_dataset(path2, qs2);
  std::ifstream f1(path), f2(path2);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  fs::remove_all(dir);
}

TEST_CASE("reference captions follow the fixed grammar") {
  SceneParams p = small_params();
  Vocab v(p);
  Scene s = generate_scene(17, p);
  auto ref = reference_caption(s, v, p, 12);
  CHECK(ref.size() == 12);
  // Blocks of four: category, attribute, cell, separator.
  size_t blocks = std::min<size_t>(s.entities.size(), 3);
  for (size_t b = 0; b < blocks; ++b) {
    CHECK(v.is_cat(ref[4 * b]));
    CHECK(v.is_att(ref[4 * b + 1]));
    CHECK(v.word(ref[4 * b + 3]) == ";");
  }
}

TEST_CASE("answer space covers categories, attributes, slots and counts") {
  SceneParams p = small_params();
  AnswerSpace a(p, 12);
  CHECK(a.size() == static_cast<size_t>(4 + 3 + 6 + 13));
  CHECK(a.name(a.category(2)) == "cat:2");
  CHECK(a.name(a.attribute(0)) == "att:0");
  CHECK(a.name(a.slot(5)) == "slot:5");
  CHECK(a.name(a.count(12)) == "12");
  CHECK(a.joint_from(Template::HowManyRel, 3) == a.count(3));
  CHECK(a.joint_from(Template::WhatCategoryAt, 1) == a.category(1));
}
