#include "pmn/config.hpp"

#include <cctype>

#include "pmn/jsonw.hpp"
#include "pmn/rng.hpp"
#include <json.hpp>

namespace pmn {

namespace {

using nlohmann::json;

/// Field-by-field reader that rejects unknown keys with a path-qualified
/// message.
struct Reader {
  const json& j;
  std::string path;
  mutable std::set<std::string> consumed;

  Reader(const json& jj, std::string p) : j(jj), path(std::move(p)) {
    if (!j.is_object())
      throw ValueError("config: " + (path.empty() ? "<root>" : path) +
                       " must be an object");
  }

  ~Reader() = default;

  void finish() const {
    for (auto it = j.begin(); it != j.end(); ++it)
      if (!consumed.count(it.key()))
        throw ValueError("config: unknown key " +
                         (path.empty() ? it.key() : path + "." + it.key()));
  }

  bool has(const std::string& key) const {
    if (j.contains(key)) {
      consumed.insert(key);
      return true;
    }
    return false;
  }

  template <typename T>
  void read(const std::string& key, T& out) const {
    if (!has(key)) return;
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception&) {
      throw ValueError("config: bad value for " +
                       (path.empty() ? key : path + "." + key));
    }
  }

  const json* sub(const std::string& key) const {
    if (!has(key)) return nullptr;
    return &j.at(key);
  }
};

void read_composition(const json& j, const std::string& path, Composition& c,
                      bool with_cnt_cap) {
  Reader r(j, path);
  r.read("obj", c.obj);
  r.read("att", c.att);
  r.read("rel", c.rel);
  if (with_cnt_cap) {
    r.read("cnt", c.cnt);
    r.read("cap", c.cap);
  }
  r.finish();
}

JVal composition_json(const Composition& c, bool with_cnt_cap) {
  JVal o = JVal::obj()
               .set("obj", JVal::boolean(c.obj))
               .set("att", JVal::boolean(c.att))
               .set("rel", JVal::boolean(c.rel));
  if (with_cnt_cap) {
    o.set("cnt", JVal::boolean(c.cnt));
    o.set("cap", JVal::boolean(c.cap));
  }
  return o;
}

template <typename T>
JVal int_arr(const std::vector<T>& v) {
  JVal a = JVal::arr();
  for (T x : v) a.push(JVal::integer(static_cast<int64_t>(x)));
  return a;
}

JVal dbl_arr(const std::vector<double>& v) {
  JVal a = JVal::arr();
  for (double x : v) a.push(JVal::number(x, 17));
  return a;
}

}  // namespace

std::string Config::to_json() const {
  JVal scene = JVal::obj()
                   .set("categories", JVal::integer(graph.scene.categories))
                   .set("attributes", JVal::integer(graph.scene.attributes))
                   .set("relations", JVal::integer(graph.scene.relations))
                   .set("max_entities", JVal::integer(graph.scene.max_entities))
                   .set("min_entities", JVal::integer(graph.scene.min_entities))
                   .set("grid", JVal::integer(graph.scene.grid))
                   .set("cat_width", JVal::integer(graph.scene.cat_width))
                   .set("att_width", JVal::integer(graph.scene.att_width))
                   .set("pos_width", JVal::integer(graph.scene.pos_width))
                   .set("render_seed",
                        JVal::integer(static_cast<int64_t>(graph.scene.render_seed)));
  JVal model = JVal::obj()
                   .set("hidden", JVal::integer(graph.hidden))
                   .set("embed", JVal::integer(graph.embed))
                   .set("penultimate", JVal::integer(graph.penultimate))
                   .set("attn", JVal::integer(graph.attn))
                   .set("count_hidden", JVal::integer(graph.count_hidden))
                   .set("count_bins", JVal::integer(graph.count_bins))
                   .set("count_max", JVal::integer(graph.count_max))
                   .set("cap_steps", JVal::integer(graph.cap_steps))
                   .set("qa_steps", JVal::integer(graph.qa_steps))
                   .set("share_qa_cnt_wiring",
                        JVal::boolean(graph.share_qa_cnt_wiring));
  JVal dq = JVal::obj();
  for (const auto& [k, v] : data.questions)
    dq.set(k, JVal::integer(static_cast<int64_t>(v)));
  JVal jdata = JVal::obj()
                   .set("questions", std::move(dq))
                   .set("eval_fraction", JVal::number(data.eval_fraction, 17));
  JVal jtrain = JVal::obj()
                    .set("epochs", JVal::integer(train.epochs))
                    .set("batch", JVal::integer(train.batch))
                    .set("lr", JVal::number(train.lr, 17))
                    .set("fraction", JVal::number(train.fraction, 17))
                    .set("bce", JVal::boolean(train.bce))
                    .set("gating", JVal::str(train.gating))
                    .set("finetune_cnt", JVal::boolean(train.finetune_cnt))
                    .set("aux_rel_query_loss", JVal::boolean(train.aux_rel_query_loss))
                    .set("aux_weight", JVal::number(train.aux_weight, 17));
  JVal tc = JVal::arr();
  for (const auto& s : train.trainable_children) tc.push(JVal::str(s));
  jtrain.set("trainable_children", std::move(tc));

  JVal jcomp = JVal::obj()
                   .set("cnt", composition_json(graph.cnt_children, false))
                   .set("qa", composition_json(graph.qa_children, true));
  JVal jab = JVal::obj()
                 .set("seeds", int_arr(ablation.seeds))
                 .set("jobs", JVal::integer(ablation.jobs))
                 .set("train_questions",
                      JVal::integer(static_cast<int64_t>(ablation.train_questions)))
                 .set("eval_questions",
                      JVal::integer(static_cast<int64_t>(ablation.eval_questions)))
                 .set("epochs", JVal::integer(ablation.epochs))
                 .set("lr", JVal::number(ablation.lr, 17));
  JVal jld = JVal::obj()
                 .set("fractions", dbl_arr(lowdata.fractions))
                 .set("seeds", int_arr(lowdata.seeds))
                 .set("train_questions",
                      JVal::integer(static_cast<int64_t>(lowdata.train_questions)))
                 .set("eval_questions",
                      JVal::integer(static_cast<int64_t>(lowdata.eval_questions)))
                 .set("epochs", JVal::integer(lowdata.epochs))
                 .set("jobs", JVal::integer(lowdata.jobs));
  JVal jpre = JVal::obj()
                  .set("obj_questions",
                       JVal::integer(static_cast<int64_t>(pretrain.obj_questions)))
                  .set("att_questions",
                       JVal::integer(static_cast<int64_t>(pretrain.att_questions)))
                  .set("rel_questions",
                       JVal::integer(static_cast<int64_t>(pretrain.rel_questions)))
                  .set("cap_scenes",
                       JVal::integer(static_cast<int64_t>(pretrain.cap_scenes)))
                  .set("cnt_questions",
                       JVal::integer(static_cast<int64_t>(pretrain.cnt_questions)))
                  .set("obj_epochs", JVal::integer(pretrain.obj_epochs))
                  .set("att_epochs", JVal::integer(pretrain.att_epochs))
                  .set("rel_epochs", JVal::integer(pretrain.rel_epochs))
                  .set("cap_epochs", JVal::integer(pretrain.cap_epochs))
                  .set("cnt_epochs", JVal::integer(pretrain.cnt_epochs));

  return JVal::obj()
      .set("seed", JVal::integer(static_cast<int64_t>(seed)))
      .set("sigma", JVal::number(graph.sigma, 17))
      .set("scene", std::move(scene))
      .set("model", std::move(model))
      .set("data", std::move(jdata))
      .set("train", std::move(jtrain))
      .set("composition", std::move(jcomp))
      .set("ablation", std::move(jab))
      .set("lowdata", std::move(jld))
      .set("pretrain", std::move(jpre))
      .dump();
}

Config Config::from_json(const std::string& text) {
  Config c;
  std::string trimmed;
  for (char ch : text)
    if (!std::isspace(static_cast<unsigned char>(ch)) || !trimmed.empty())
      trimmed += ch;
  if (trimmed.empty()) return c;

  auto j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ValueError("config: malformed JSON");
  Reader root(j, "");
  root.read("seed", c.seed);
  root.read("sigma", c.graph.sigma);

  if (const json* js = root.sub("scene")) {
    Reader r(*js, "scene");
    r.read("categories", c.graph.scene.categories);
    r.read("attributes", c.graph.scene.attributes);
    r.read("relations", c.graph.scene.relations);
    r.read("max_entities", c.graph.scene.max_entities);
    r.read("min_entities", c.graph.scene.min_entities);
    r.read("grid", c.graph.scene.grid);
    r.read("cat_width", c.graph.scene.cat_width);
    r.read("att_width", c.graph.scene.att_width);
    r.read("pos_width", c.graph.scene.pos_width);
    r.read("render_seed", c.graph.scene.render_seed);
    r.finish();
  }
  if (const json* js = root.sub("model")) {
    Reader r(*js, "model");
    r.read("hidden", c.graph.hidden);
    r.read("embed", c.graph.embed);
    r.read("penultimate", c.graph.penultimate);
    r.read("attn", c.graph.attn);
    r.read("count_hidden", c.graph.count_hidden);
    r.read("count_bins", c.graph.count_bins);
    r.read("count_max", c.graph.count_max);
    r.read("cap_steps", c.graph.cap_steps);
    r.read("qa_steps", c.graph.qa_steps);
    r.read("share_qa_cnt_wiring", c.graph.share_qa_cnt_wiring);
    r.finish();
  }
  if (const json* js = root.sub("data")) {
    Reader r(*js, "data");
    if (const json* q = r.sub("questions")) {
      Reader rq(*q, "data.questions");
      for (auto& [k, v] : c.data.questions) {
        (void)v;
        rq.read(k, c.data.questions[k]);
      }
      rq.finish();
    }
    r.read("eval_fraction", c.data.eval_fraction);
    r.finish();
  }
  if (const json* js = root.sub("train")) {
    Reader r(*js, "train");
    r.read("epochs", c.train.epochs);
    r.read("batch", c.train.batch);
    r.read("lr", c.train.lr);
    r.read("fraction", c.train.fraction);
    r.read("bce", c.train.bce);
    r.read("gating", c.train.gating);
    r.read("finetune_cnt", c.train.finetune_cnt);
    r.read("aux_rel_query_loss", c.train.aux_rel_query_loss);
    r.read("aux_weight", c.train.aux_weight);
    r.read("trainable_children", c.train.trainable_children);
    r.finish();
  }
  if (const json* js = root.sub("composition")) {
    Reader r(*js, "composition");
    if (const json* cc = r.sub("cnt"))
      read_composition(*cc, "composition.cnt", c.graph.cnt_children, false);
    if (const json* cq = r.sub("qa"))
      read_composition(*cq, "composition.qa", c.graph.qa_children, true);
    r.finish();
  }
  if (const json* js = root.sub("ablation")) {
    Reader r(*js, "ablation");
    r.read("seeds", c.ablation.seeds);
    r.read("jobs", c.ablation.jobs);
    r.read("train_questions", c.ablation.train_questions);
    r.read("eval_questions", c.ablation.eval_questions);
    r.read("epochs", c.ablation.epochs);
    r.read("lr", c.ablation.lr);
    r.finish();
  }
  if (const json* js = root.sub("lowdata")) {
    Reader r(*js, "lowdata");
    r.read("fractions", c.lowdata.fractions);
    r.read("seeds", c.lowdata.seeds);
    r.read("train_questions", c.lowdata.train_questions);
    r.read("eval_questions", c.lowdata.eval_questions);
    r.read("epochs", c.lowdata.epochs);
    r.read("jobs", c.lowdata.jobs);
    r.finish();
  }
  if (const json* js = root.sub("pretrain")) {
    Reader r(*js, "pretrain");
    r.read("obj_questions", c.pretrain.obj_questions);
    r.read("att_questions", c.pretrain.att_questions);
    r.read("rel_questions", c.pretrain.rel_questions);
    r.read("cap_scenes", c.pretrain.cap_scenes);
    r.read("cnt_questions", c.pretrain.cnt_questions);
    r.read("obj_epochs", c.pretrain.obj_epochs);
    r.read("att_epochs", c.pretrain.att_epochs);
    r.read("rel_epochs", c.pretrain.rel_epochs);
    r.read("cap_epochs", c.pretrain.cap_epochs);
    r.read("cnt_epochs", c.pretrain.cnt_epochs);
    r.finish();
  }
  root.finish();

  // Range checks beyond what the scene itself validates.
  if (c.train.fraction <= 0.0 || c.train.fraction > 1.0)
    throw ValueError("config: train.fraction must lie in (0, 1]");
  if (c.data.eval_fraction <= 0.0 || c.data.eval_fraction >= 1.0)
    throw ValueError("config: data.eval_fraction must lie in (0, 1)");
  if (c.train.gating != "learned" && c.train.gating != "fixed")
    throw ValueError("config: train.gating must be 'learned' or 'fixed'");
  for (double f : c.lowdata.fractions)
    if (f <= 0.0 || f > 1.0)
      throw ValueError("config: lowdata.fractions must lie in (0, 1]");
  if (c.train.batch < 1) throw ValueError("config: train.batch must be >= 1");
  c.graph.scene.validate();
  c.graph.seed = c.seed;
  return c;
}

void Config::apply_override(const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValueError("override must look like dotted.key=value: " + assignment);
  std::string path = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);

  // Route the assignment through the JSON reader so typing and unknown-key
  // rules match file parsing.
  auto doc = json::parse(to_json());
  json* cur = &doc;
  size_t start = 0;
  std::vector<std::string> parts;
  while (true) {
    size_t dot = path.find('.', start);
    parts.push_back(path.substr(start, dot == std::string::npos ? dot : dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!cur->contains(parts[i]))
      throw ValueError("config: unknown key " + path);
    cur = &(*cur)[parts[i]];
  }
  const std::string& leaf = parts.back();
  if (!cur->contains(leaf)) throw ValueError("config: unknown key " + path);

  json parsed = json::parse(value, nullptr, false);
  if (parsed.is_discarded()) parsed = json(value);  // bare strings
  (*cur)[leaf] = parsed;
  *this = from_json(doc.dump());
}

TrainConfig Config::train_config(Task t) const {
  TrainConfig cfg = default_train_config(t);
  cfg.seed = seed;
  if (train.epochs > 0) cfg.epochs = train.epochs;
  if (train.lr > 0) cfg.lr = train.lr;
  cfg.batch = train.batch;
  cfg.fraction = train.fraction;
  cfg.bce = train.bce;
  cfg.fixed_gating = train.gating == "fixed";
  cfg.finetune_cnt = t == Task::Qa && train.finetune_cnt && graph.qa_children.cnt;
  cfg.aux_rel_query_loss = t == Task::Cnt && train.aux_rel_query_loss;
  cfg.aux_weight = train.aux_weight;
  cfg.trainable_children = train.trainable_children;
  return cfg;
}

uint64_t Config::hash() const {
  std::string s = to_json();
  return fnv1a64(s.data(), s.size());
}

std::string normalize_config(const std::string& text) {
  return Config::from_json(text).to_json();
}

}  // namespace pmn
