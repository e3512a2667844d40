#include <doctest.h>

#include "pmn/config.hpp"
#include "pmn/rng.hpp"

using namespace pmn;

TEST_CASE("an empty document yields the full default configuration") {
  Config c = Config::from_json("");
  Config d;
  CHECK(c.to_json() == d.to_json());
  CHECK(c.seed == 1);
  CHECK(c.graph.scene.categories == 6);
}

TEST_CASE("a zero training fraction is rejected") {
  CHECK_THROWS_AS(Config::from_json(R"({"train":{"fraction":0.0}})"), ValueError);
}

TEST_CASE("unknown keys are rejected with their path") {
  try {
    Config::from_json(R"({"train":{"epochz":3}})");
    FAIL("expected rejection");
  } catch (const ValueError& e) {
    CHECK(std::string(e.what()).find("train.epochz") != std::string::npos);
  }
  CHECK_THROWS_AS(Config::from_json(R"({"mystery":1})"), ValueError);
}

TEST_CASE("gating mode is validated") {
  CHECK_THROWS_AS(Config::from_json(R"({"train":{"gating":"sometimes"}})"), ValueError);
  CHECK_NOTHROW(Config::from_json(R"({"train":{"gating":"fixed"}})"));
}

TEST_CASE("normalization is idempotent over randomized valid documents") {
  Rng rng(123);
  const std::vector<std::string> int_keys = {
      "seed", "scene.categories", "scene.attributes", "scene.max_entities",
      "model.hidden", "model.embed", "model.cap_steps", "train.epochs",
      "train.batch", "ablation.jobs", "lowdata.train_questions"};
  const std::vector<std::string> dbl_keys = {"sigma", "train.lr",
                                             "train.fraction", "train.aux_weight"};
  const std::vector<std::string> bool_keys = {
      "train.bce", "train.finetune_cnt", "model.share_qa_cnt_wiring",
      "composition.qa.cnt", "composition.cnt.rel"};

  for (int trial = 0; trial < 100; ++trial) {
    Config c;
    for (int edits = 0; edits < 4; ++edits) {
      switch (rng.below(3)) {
        case 0: {
          const auto& k = int_keys[rng.below(int_keys.size())];
          uint64_t v = 1 + rng.below(20);
          if (k == "scene.max_entities") v = 4 + rng.below(6);
          if (k == "model.hidden" || k == "model.embed") v = 8 + rng.below(50);
          if (k == "lowdata.train_questions") v = 100 + rng.below(5000);
          c.apply_override(k + "=" + std::to_string(v));
          break;
        }
        case 1: {
          const auto& k = dbl_keys[rng.below(dbl_keys.size())];
          double v = 0.05 + 0.9 * rng.uniform();
          c.apply_override(k + "=" + std::to_string(v));
          break;
        }
        default: {
          const auto& k = bool_keys[rng.below(bool_keys.size())];
          c.apply_override(k + (rng.below(2) ? "=true" : "=false"));
          break;
        }
      }
    }
    std::string once = normalize_config(c.to_json());
    std::string twice = normalize_config(once);
    CHECK(once == twice);
  }
}

TEST_CASE("overrides route through the same validation as files") {
  Config c;
  c.apply_override("train.epochs=7");
  CHECK(c.train.epochs == 7);
  c.apply_override("train.gating=fixed");
  CHECK(c.train.gating == "fixed");
  CHECK_THROWS_AS(c.apply_override("train.nope=1"), ValueError);
  CHECK_THROWS_AS(c.apply_override("no-equals-sign"), ValueError);
  CHECK_THROWS_AS(c.apply_override("train.fraction=0"), ValueError);
}

TEST_CASE("config hash tracks content") {
  Config a, b;
  CHECK(a.hash() == b.hash());
  b.apply_override("seed=9");
  CHECK(a.hash() != b.hash());
}

TEST_CASE("per-task training defaults") {
  Config c;
  TrainConfig cnt = c.train_config(Task::Cnt);
  CHECK(cnt.lr == 0.0001);
  CHECK(cnt.aux_rel_query_loss);
  TrainConfig qa = c.train_config(Task::Qa);
  CHECK(qa.lr == 0.0005);
  CHECK(qa.finetune_cnt);
  TrainConfig obj = c.train_config(Task::Obj);
  CHECK_FALSE(obj.finetune_cnt);
}
