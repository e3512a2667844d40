#include "pmn/train.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <mutex>
#include <chrono>
#include <cmath>
#include <set>
#include <thread>

#include "pmn/jsonw.hpp"

namespace pmn {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::set<std::string> training_module_names(const TrainConfig& cfg) {
  std::set<std::string> names{task_name(cfg.task)};
  if (cfg.task == Task::Qa && cfg.finetune_cnt) names.insert("cnt");
  for (const auto& n : cfg.trainable_children) names.insert(n);
  return names;
}

std::vector<ParamsPtr> collect_trainable(TaskGraph& g, const TrainConfig& cfg) {
  auto training = training_module_names(cfg);
  // A parameter set shared with a frozen lower-level module (the shared
  // counting/QA wiring) stays frozen until that module is explicitly
  // unfrozen; sets shared upward with a not-yet-trained parent are fair game.
  int level = g.handles.at(cfg.task)->level;
  std::set<const ParameterSet*> frozen;
  for (const auto& h : g.registry.modules())
    if (h->level < level && !training.count(h->name))
      for (const auto& [name, pset] : h->params) frozen.insert(pset.get());

  std::set<const ParameterSet*> seen;
  std::vector<ParamsPtr> out;
  auto add_module = [&](Task t) {
    for (auto& [name, pset] : g.handles.at(t)->params) {
      if (frozen.count(pset.get())) continue;
      if (seen.insert(pset.get()).second) out.push_back(pset);
    }
  };
  add_module(cfg.task);
  if (cfg.task == Task::Qa && cfg.finetune_cnt) add_module(Task::Cnt);
  for (const auto& n : cfg.trainable_children) add_module(task_from_name(n));
  return out;
}

void check_children_trained(TaskGraph& g, Task task) {
  const ModuleHandle& m = g.handles.at(task);
  for (const auto& slot : m->children) {
    if (slot.owned) continue;
    if (!g.registry.trained(slot.name))
      throw ValueError(std::string("train ") + task_name(task) +
                       ": child module '" + slot.name + "' is not trained yet");
  }
}

}  // namespace

TrainConfig default_train_config(Task t) {
  TrainConfig cfg;
  cfg.task = t;
  cfg.lr = (t == Task::Cnt) ? 0.0001 : 0.0005;
  // Relational counting questions supervise the query sent to the
  // relationship module; without this the transmitter has to discover the
  // query format from the count signal alone.
  cfg.aux_rel_query_loss = t == Task::Cnt;
  switch (t) {
    case Task::Obj:
    case Task::Att: cfg.epochs = 4; break;
    case Task::Rel: cfg.epochs = 6; break;
    case Task::Cap: cfg.epochs = 3; break;
    case Task::Cnt: cfg.epochs = 8; break;
    case Task::Qa: cfg.epochs = 6; break;
  }
  return cfg;
}

double Metrics::type_accuracy(const std::string& type) const {
  auto it = per_type.find(type);
  if (it == per_type.end() || it->second[1] == 0) return 0.0;
  return static_cast<double>(it->second[0]) / static_cast<double>(it->second[1]);
}

const Scene& SampleCache::scene(uint64_t seed) {
  auto it = scenes_.find(seed);
  if (it == scenes_.end())
    it = scenes_.emplace(seed, generate_scene(seed, params_)).first;
  return it->second;
}

const RenderedScene& SampleCache::rendered(uint64_t seed, double sigma) {
  uint64_t sig_bits;
  std::memcpy(&sig_bits, &sigma, sizeof(sigma));
  auto key = std::make_pair(seed, sig_bits);
  auto it = rendered_.find(key);
  if (it == rendered_.end())
    it = rendered_.emplace(key, render_env(scene(seed), sigma, params_)).first;
  return it->second;
}

// -- losses / predictions --------------------------------------------------------

Var task_loss(TaskGraph& g, Tape& tape, const Question& q, const Scene& scene,
              const ModuleOutput& out, bool bce_for_qa) {
  switch (q.task) {
    case Task::Obj: {
      Var logits = tape.add(tape.matmul(g.obj_head->var(tape, "W"), out.value),
                            g.obj_head->var(tape, "b"));
      return tape.scale(tape.pick(tape.log_softmax(logits), static_cast<size_t>(q.answer)), -1.0);
    }
    case Task::Att: {
      Var logits = tape.add(tape.matmul(g.att_head->var(tape, "W"), out.value),
                            g.att_head->var(tape, "b"));
      size_t a = static_cast<size_t>(g.cfg.scene.attributes);
      std::vector<double> target(a, 0.0);
      for (int attr : scene.entities[static_cast<size_t>(q.arg_slot)].attributes)
        target[static_cast<size_t>(attr)] = 1.0;
      Var y = tape.leaf(std::span<const double>(target), {a});
      Var bce = tape.sub(tape.softplus(logits), tape.mul(y, logits));
      return tape.scale(tape.sum(bce), 1.0 / static_cast<double>(a));
    }
    case Task::Rel: {
      // Ranking term plus a per-entity binary term: the former finds the
      // target, the latter calibrates absolute scores so that downstream
      // consumers can threshold them.
      Var rank = tape.scale(
          tape.pick(tape.log_softmax(out.value), static_cast<size_t>(q.answer)), -1.0);
      size_t n = out.value.size();
      std::vector<double> onehot(n, 0.0);
      onehot[static_cast<size_t>(q.answer)] = 1.0;
      Var y = tape.leaf(std::span<const double>(onehot), {n});
      Var bce = tape.sub(tape.softplus(out.value), tape.mul(y, out.value));
      return tape.add(rank, tape.scale(tape.sum(bce), 1.0 / static_cast<double>(n)));
    }
    case Task::Cnt:
      return tape.scale(
          tape.log_(tape.pick(out.value, static_cast<size_t>(q.answer))), -1.0);
    case Task::Cap: {
      auto ref = reference_caption(scene, g.vocab, g.cfg.scene, g.cfg.cap_steps);
      int pad_tok = g.vocab.pad();
      std::vector<Var> picks;
      for (size_t t = 0; t < ref.size(); ++t) {
        if (ref[t] == pad_tok) break;
        Var rowp = tape.row(out.value, t);
        picks.push_back(tape.log_(tape.pick(rowp, static_cast<size_t>(ref[t]))));
      }
      Var sum = picks.front();
      for (size_t i = 1; i < picks.size(); ++i) sum = tape.add(sum, picks[i]);
      return tape.scale(sum, -1.0 / static_cast<double>(picks.size()));
    }
    case Task::Qa: {
      int joint = g.answers.joint_from(q.templ, q.answer);
      if (!bce_for_qa)
        return tape.scale(
            tape.pick(tape.log_softmax(out.value), static_cast<size_t>(joint)), -1.0);
      std::vector<double> target(g.answers.size(), 0.0);
      target[static_cast<size_t>(joint)] = 1.0;
      Var y = tape.leaf(std::span<const double>(target), {g.answers.size()});
      Var bce = tape.sub(tape.softplus(out.value), tape.mul(y, out.value));
      return tape.scale(tape.sum(bce), 1.0 / static_cast<double>(g.answers.size()));
    }
  }
  throw ValueError("loss: bad task");
}

namespace {

int argmax_lowest(std::span<const double> v) {
  int best = 0;
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<size_t>(best)]) best = static_cast<int>(i);
  return best;
}

}  // namespace

int predict_answer(TaskGraph& g, Tape& tape, const Question& q,
                   const ModuleOutput& out) {
  switch (q.task) {
    case Task::Obj: {
      Var logits = tape.add(tape.matmul(g.obj_head->var(tape, "W"), out.value),
                            g.obj_head->var(tape, "b"));
      return argmax_lowest(logits.val());
    }
    case Task::Att: {
      Var logits = tape.add(tape.matmul(g.att_head->var(tape, "W"), out.value),
                            g.att_head->var(tape, "b"));
      return argmax_lowest(logits.val());
    }
    case Task::Rel:
    case Task::Cnt:
    case Task::Qa:
      return argmax_lowest(out.value.val());
    case Task::Cap:
      return 0;  // sequence scoring is handled in evaluate()
  }
  throw ValueError("predict: bad task");
}

// -- training ---------------------------------------------------------------------

Metrics train_task(TaskGraph& g, const TrainConfig& cfg,
                   std::span<const Question> train,
                   std::span<const Question> eval_set) {
  auto t0 = Clock::now();
  if (cfg.fraction <= 0.0 || cfg.fraction > 1.0)
    throw ValueError("train: fraction must be in (0, 1]");
  check_children_trained(g, cfg.task);

  std::vector<Question> use = take_fraction(train, cfg.fraction, cfg.seed ^ 0xf7ac);
  if (use.empty()) throw ValueError("train: no training questions after subsampling");

  auto trainable = collect_trainable(g, cfg);
  auto training_names = training_module_names(cfg);
  AdamConfig adam;
  adam.lr = cfg.lr;

  ExecOptions opt;
  opt.fixed_equal_gating = cfg.fixed_gating;
  opt.training_modules = &training_names;

  SampleCache cache(g.cfg.scene);
  Tape tape;
  Rng shuffle_rng = Rng(cfg.seed).split(0x5f);
  ModuleHandle module = g.handles.at(cfg.task);

  Metrics m;
  m.task = cfg.task;
  m.seed = cfg.seed;
  m.train_used = use.size();

  std::vector<size_t> order(use.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  size_t step_index = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    double epoch_loss = 0.0;
    size_t batch_fill = 0;

    for (auto& pset : trainable) pset->zero_grads();
    tape.reset();

    for (size_t oi = 0; oi < order.size(); ++oi) {
      const Question& q = use[order[oi]];
      const Scene& scene = cache.scene(q.scene_seed);
      const RenderedScene& r = cache.rendered(q.scene_seed, q.sigma);

      int mark = tape.mark();
      Environment env = make_environment(tape, r.features, r.positions);
      auto ref_tokens = (cfg.task == Task::Cap)
                            ? reference_caption(scene, g.vocab, g.cfg.scene,
                                                g.cfg.cap_steps)
                            : std::vector<int>{};
      if (cfg.task == Task::Cap) env.teacher_tokens = &ref_tokens;

      Var query = g.make_query(tape, env, q);
      if (q.task == Task::Cnt || q.task == Task::Qa) env.question = query;

      ExecResult res = execute(g.registry, module, query, env, tape, opt);
      Var loss = task_loss(g, tape, q, scene, res.out, cfg.bce);

      if (cfg.task == Task::Cnt && cfg.aux_rel_query_loss &&
          (q.templ == Template::HowManyRel ||
           q.templ == Template::HowManyCategoryRel)) {
        Var braw = g.cnt_rel_box_raw.score_rows(tape, query, env.features);
        Var rlog = g.cnt_rel_kind.forward(tape, query);
        Var aux = tape.add(
            tape.scale(tape.pick(tape.log_softmax(braw),
                                 static_cast<size_t>(q.arg_slot)), -1.0),
            tape.scale(tape.pick(tape.log_softmax(rlog),
                                 static_cast<size_t>(q.arg_rel)), -1.0));
        loss = tape.add(loss, tape.scale(aux, cfg.aux_weight));
      }

      double lv = loss.scalar();
      if (!std::isfinite(lv))
        throw ValueError(strformat("train %s: non-finite loss at step %zu",
                                   task_name(cfg.task), step_index));
      epoch_loss += lv;

      Var scaled = tape.scale(loss, 1.0 / cfg.batch);
      tape.backward(scaled);
      tape.reset_to(mark);
      ++batch_fill;
      ++step_index;

      if (batch_fill == static_cast<size_t>(cfg.batch) || oi + 1 == order.size()) {
        for (auto& pset : trainable) pset->adam_step(adam);
        for (auto& pset : trainable) pset->zero_grads();
        batch_fill = 0;
        tape.reset();
      }
    }
    m.loss_curve.push_back(epoch_loss / static_cast<double>(order.size()));
  }

  g.registry.set_trained(task_name(cfg.task));
  Metrics ev = evaluate(g, cfg.task, eval_set, cfg.fixed_gating);
  m.correct = ev.correct;
  m.total = ev.total;
  m.accuracy = ev.accuracy;
  m.per_type = std::move(ev.per_type);
  m.wall_seconds = seconds_since(t0);
  return m;
}

Metrics evaluate(TaskGraph& g, Task task, std::span<const Question> eval_set,
                 bool fixed_gating) {
  auto t0 = Clock::now();
  Metrics m;
  m.task = task;
  ExecOptions opt;
  opt.fixed_equal_gating = fixed_gating;

  SampleCache cache(g.cfg.scene);
  Tape tape;
  ModuleHandle module = g.handles.at(task);

  for (const Question& q : eval_set) {
    if (q.task != task)
      throw ValueError(std::string("evaluate: dataset question for task ") +
                       task_name(q.task) + " given to module " + task_name(task));
    tape.reset();
    const Scene& scene = cache.scene(q.scene_seed);
    const RenderedScene& r = cache.rendered(q.scene_seed, q.sigma);
    Environment env = make_environment(tape, r.features, r.positions);
    Var query = g.make_query(tape, env, q);
    if (q.task == Task::Cnt || q.task == Task::Qa) env.question = query;
    ExecResult res = execute(g.registry, module, query, env, tape, opt);

    bool ok = false;
    if (task == Task::Cap) {
      // Teacher-free decoding scored as per-position token accuracy over
      // the reference, counted as one "question" weighted by match rate.
      auto ref = reference_caption(scene, g.vocab, g.cfg.scene, g.cfg.cap_steps);
      size_t match = 0, len = 0;
      for (size_t t = 0; t < ref.size(); ++t) {
        if (ref[t] == g.vocab.pad()) break;
        ++len;
        Var rowp = tape.row(res.out.value, t);
        if (argmax_lowest(rowp.val()) == ref[t]) ++match;
      }
      ok = len > 0 && match * 2 >= len;  // majority of tokens right
      auto& slot = m.per_type["caption-tokens"];
      slot[0] += match;
      slot[1] += len;
    } else {
      int pred = predict_answer(g, tape, q, res.out);
      int want = (task == Task::Qa) ? g.answers.joint_from(q.templ, q.answer)
                                    : q.answer;
      ok = pred == want;
      auto& slot = m.per_type[question_type(q)];
      slot[1] += 1;
      if (ok) slot[0] += 1;
    }
    m.total += 1;
    if (ok) m.correct += 1;
  }
  m.accuracy = m.total ? static_cast<double>(m.correct) / static_cast<double>(m.total) : 0.0;
  m.wall_seconds = seconds_since(t0);
  return m;
}

// -- dataset helpers -----------------------------------------------------------------

QuestionSplit split_questions(std::vector<Question> all, double eval_fraction,
                              uint64_t seed) {
  Rng rng = Rng(seed).split(0x517);
  for (size_t i = all.size(); i > 1; --i)
    std::swap(all[i - 1], all[rng.below(i)]);
  size_t eval_n = static_cast<size_t>(eval_fraction * static_cast<double>(all.size()));
  QuestionSplit s;
  s.eval.assign(all.begin(), all.begin() + static_cast<long>(eval_n));
  s.train.assign(all.begin() + static_cast<long>(eval_n), all.end());
  return s;
}

std::vector<Question> take_fraction(std::span<const Question> all, double fraction,
                                    uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw ValueError("take_fraction: fraction must be in (0, 1]");
  std::vector<Question> out(all.begin(), all.end());
  if (fraction >= 1.0) return out;
  Rng rng = Rng(seed).split(0xf2ac);
  for (size_t i = out.size(); i > 1; --i)
    std::swap(out[i - 1], out[rng.below(i)]);
  size_t keep = static_cast<size_t>(
      std::ceil(fraction * static_cast<double>(out.size())));
  if (keep == 0) throw ValueError("take_fraction: empty subsample");
  out.resize(keep);
  return out;
}

// -- persistence ----------------------------------------------------------------------

void save_module(const TaskGraph& g, Task t, const std::string& path) {
  CheckpointMeta meta;
  meta.module = task_name(t);
  meta.level = g.handles.at(t)->level;
  meta.seed = g.cfg.seed;
  save_checkpoint(path, meta, checkpoint_sections(g, t));
}

CheckpointMeta load_module(TaskGraph& g, Task t, const std::string& path) {
  auto meta = load_checkpoint(path, checkpoint_sections(g, t));
  if (meta.module != task_name(t))
    throw IoError("checkpoint: file holds module '" + meta.module +
                  "', expected '" + task_name(t) + "'");
  g.registry.set_trained(task_name(t));
  return meta;
}

std::vector<unsigned char> module_bytes(const TaskGraph& g, Task t) {
  std::vector<unsigned char> out;
  for (const auto& [name, pset] : g.handles.at(t)->params) {
    (void)name;
    for (const auto& e : pset->entries()) {
      const auto* p = reinterpret_cast<const unsigned char*>(e.value.data());
      out.insert(out.end(), p, p + e.value.size() * sizeof(double));
    }
  }
  return out;
}

// -- experiment drivers ------------------------------------------------------------------

namespace {

QuestionSplit task_dataset(const TaskGraph& g, Task t, size_t count,
                           uint64_t seed) {
  auto qs = build_question_set(t, count, seed, g.cfg.sigma, g.cfg.scene,
                               QuestionMix::for_task(t));
  return split_questions(std::move(qs), 0.15, seed ^ 0xe7a1);
}

void train_one(TaskGraph& g, Task t, size_t questions, int epochs,
               uint64_t seed) {
  TrainConfig cfg = default_train_config(t);
  cfg.epochs = epochs > 0 ? epochs : cfg.epochs;
  cfg.seed = seed;
  if (t == Task::Cnt) cfg.aux_rel_query_loss = true;
  auto data = task_dataset(g, t, questions, seed ^ (0x1000 + static_cast<uint64_t>(t)));
  train_task(g, cfg, data.train, data.eval);
}

}  // namespace

void pretrain_children(TaskGraph& g, Task target, const PretrainBudget& b,
                       uint64_t seed) {
  train_one(g, Task::Obj, b.obj_questions, b.obj_epochs, seed ^ 0xa0);
  train_one(g, Task::Att, b.att_questions, b.att_epochs, seed ^ 0xa1);
  train_one(g, Task::Rel, b.rel_questions, b.rel_epochs, seed ^ 0xa2);
  if (target == Task::Qa) {
    if (g.cfg.qa_children.cap)
      train_one(g, Task::Cap, b.cap_scenes, b.cap_epochs, seed ^ 0xa3);
    if (g.cfg.qa_children.cnt)
      train_one(g, Task::Cnt, b.cnt_questions, b.cnt_epochs, seed ^ 0xa4);
  }
}

std::vector<AblationRow> run_ablation(const TaskGraphConfig& gcfg,
                                      const AblationConfig& acfg) {
  std::vector<AblationRow> rows(acfg.cells.size() * acfg.seeds.size());

  auto run_seed = [&](size_t seed_idx) {
    uint64_t seed = acfg.seeds[seed_idx];
    // Shared per-seed task dataset; cells see identical data.
    TaskGraphConfig probe = gcfg;
    auto qs = build_question_set(acfg.task, acfg.train_questions + acfg.eval_questions,
                                 seed ^ 0xd47a, probe.sigma, probe.scene,
                                 QuestionMix::for_task(acfg.task));
    QuestionSplit data = split_questions(std::move(qs),
        static_cast<double>(acfg.eval_questions) /
            static_cast<double>(acfg.train_questions + acfg.eval_questions),
        seed ^ 0x5317);

    for (size_t ci = 0; ci < acfg.cells.size(); ++ci) {
      const AblationCell& cell = acfg.cells[ci];
      TaskGraphConfig cfg = gcfg;
      cfg.seed = seed;
      if (acfg.task == Task::Cnt) cfg.cnt_children = cell.composition;
      if (acfg.task == Task::Qa) cfg.qa_children = cell.composition;

      TaskGraph g = build_task_graph(cfg);
      pretrain_children(g, acfg.task, acfg.pretrain, seed);

      TrainConfig tcfg = default_train_config(acfg.task);
      tcfg.seed = seed;
      if (acfg.epochs > 0) tcfg.epochs = acfg.epochs;
      if (acfg.lr > 0) tcfg.lr = acfg.lr;
      tcfg.fixed_gating = cell.fixed_gating;
      if (acfg.task == Task::Qa) tcfg.finetune_cnt = cfg.qa_children.cnt;

      Metrics m = train_task(g, tcfg, data.train, data.eval);
      m.label = cell.label;
      rows[ci * acfg.seeds.size() + seed_idx] = {cell.label, seed, std::move(m)};
    }
  };

  if (acfg.jobs <= 1 || acfg.seeds.size() == 1) {
    for (size_t si = 0; si < acfg.seeds.size(); ++si) run_seed(si);
  } else {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    size_t jobs = std::min<size_t>(static_cast<size_t>(acfg.jobs), acfg.seeds.size());
    for (size_t j = 0; j < jobs; ++j)
      pool.emplace_back([&]() {
        for (;;) {
          size_t si = next.fetch_add(1);
          if (si >= acfg.seeds.size()) return;
          run_seed(si);
        }
      });
    for (auto& th : pool) th.join();
  }
  return rows;
}

std::vector<LowDataPoint> run_low_data(const TaskGraphConfig& gcfg,
                                       const LowDataConfig& lcfg) {
  std::vector<LowDataPoint> points;
  std::mutex mu;

  struct Job { double fraction; uint64_t seed; };
  std::vector<Job> jobs_list;
  for (double f : lcfg.fractions) {
    if (f <= 0.0 || f > 1.0)
      throw ValueError("low-data: fractions must lie in (0, 1]");
    if (std::fabs(f - lcfg.full_sweep_fraction) < 1e-12)
      for (uint64_t s : lcfg.seeds) jobs_list.push_back({f, s});
    else
      jobs_list.push_back({f, lcfg.seeds.front()});
  }

  auto run_job = [&](const Job& job) {
    // The composed QA module omits the counting child here.
    Composition composed{.obj = true, .att = true, .rel = true, .cnt = false,
                         .cap = true};
    Composition base{.obj = false, .att = false, .rel = false, .cnt = false,
                     .cap = false};

    TaskGraphConfig cfg = gcfg;
    cfg.seed = job.seed;
    auto qs = build_question_set(Task::Qa, lcfg.train_questions + lcfg.eval_questions,
                                 job.seed ^ 0x10da7a, cfg.sigma, cfg.scene,
                                 QuestionMix::for_task(Task::Qa));
    QuestionSplit data = split_questions(std::move(qs),
        static_cast<double>(lcfg.eval_questions) /
            static_cast<double>(lcfg.train_questions + lcfg.eval_questions),
        job.seed ^ 0x51);

    LowDataPoint pt;
    pt.fraction = job.fraction;
    pt.seed = job.seed;

    for (int composed_run = 0; composed_run < 2; ++composed_run) {
      TaskGraphConfig c = cfg;
      c.qa_children = composed_run ? composed : base;
      TaskGraph g = build_task_graph(c);
      // The base cell's children are all parent-owned terminals; only the
      // composed cell needs pretrained lower modules.
      if (composed_run) pretrain_children(g, Task::Qa, lcfg.pretrain, job.seed);
      TrainConfig tcfg = default_train_config(Task::Qa);
      tcfg.seed = job.seed;
      tcfg.fraction = job.fraction;
      tcfg.finetune_cnt = false;
      if (lcfg.epochs > 0) tcfg.epochs = lcfg.epochs;
      Metrics m = train_task(g, tcfg, data.train, data.eval);
      if (composed_run)
        pt.composed_accuracy = m.accuracy;
      else
        pt.base_accuracy = m.accuracy;
    }
    pt.gain = pt.composed_accuracy - pt.base_accuracy;
    std::lock_guard<std::mutex> lock(mu);
    points.push_back(pt);
  };

  if (lcfg.jobs <= 1 || jobs_list.size() == 1) {
    for (const auto& j : jobs_list) run_job(j);
  } else {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    size_t jobs = std::min<size_t>(static_cast<size_t>(lcfg.jobs), jobs_list.size());
    for (size_t j = 0; j < jobs; ++j)
      pool.emplace_back([&]() {
        for (;;) {
          size_t ji = next.fetch_add(1);
          if (ji >= jobs_list.size()) return;
          run_job(jobs_list[ji]);
        }
      });
    for (auto& th : pool) th.join();
  }

  std::sort(points.begin(), points.end(), [](const LowDataPoint& a, const LowDataPoint& b) {
    return a.fraction < b.fraction || (a.fraction == b.fraction && a.seed < b.seed);
  });
  return points;
}

// -- reports ------------------------------------------------------------------------

std::string metrics_json(const Metrics& m) {
  JVal types = JVal::obj();
  for (const auto& [name, cnts] : m.per_type)
    types.set(name, JVal::obj()
                        .set("correct", JVal::integer(static_cast<int64_t>(cnts[0])))
                        .set("total", JVal::integer(static_cast<int64_t>(cnts[1]))));
  JVal curve = JVal::arr();
  for (double l : m.loss_curve) curve.push(JVal::number(l, 9));
  return JVal::obj()
      .set("label", JVal::str(m.label))
      .set("task", JVal::str(task_name(m.task)))
      .set("seed", JVal::integer(static_cast<int64_t>(m.seed)))
      .set("accuracy", JVal::number(m.accuracy, 9))
      .set("correct", JVal::integer(static_cast<int64_t>(m.correct)))
      .set("total", JVal::integer(static_cast<int64_t>(m.total)))
      .set("per_type", std::move(types))
      .set("loss_curve", std::move(curve))
      .set("train_used", JVal::integer(static_cast<int64_t>(m.train_used)))
      .set("wall_seconds", JVal::number(m.wall_seconds, 6))
      .dump();
}

std::string ablation_json(std::span<const AblationRow> rows) {
  JVal arr = JVal::arr();
  for (const auto& r : rows) {
    JVal o = JVal::obj()
                 .set("label", JVal::str(r.label))
                 .set("seed", JVal::integer(static_cast<int64_t>(r.seed)))
                 .set("accuracy", JVal::number(r.metrics.accuracy, 9));
    JVal types = JVal::obj();
    for (const auto& [name, cnts] : r.metrics.per_type)
      types.set(name,
                JVal::obj()
                    .set("correct", JVal::integer(static_cast<int64_t>(cnts[0])))
                    .set("total", JVal::integer(static_cast<int64_t>(cnts[1]))));
    o.set("per_type", std::move(types));
    arr.push(std::move(o));
  }
  return JVal::obj().set("rows", std::move(arr)).dump();
}

std::string lowdata_json(std::span<const LowDataPoint> pts) {
  JVal arr = JVal::arr();
  for (const auto& p : pts)
    arr.push(JVal::obj()
                 .set("fraction", JVal::number(p.fraction, 9))
                 .set("seed", JVal::integer(static_cast<int64_t>(p.seed)))
                 .set("base_accuracy", JVal::number(p.base_accuracy, 9))
                 .set("composed_accuracy", JVal::number(p.composed_accuracy, 9))
                 .set("gain", JVal::number(p.gain, 9)));
  return JVal::obj().set("points", std::move(arr)).dump();
}

std::string ablation_table(std::span<const AblationRow> rows) {
  // label -> per-seed accuracies, in first-seen order.
  std::vector<std::pair<std::string, std::vector<double>>> cells;
  for (const auto& r : rows) {
    auto it = std::find_if(cells.begin(), cells.end(),
                           [&](const auto& c) { return c.first == r.label; });
    if (it == cells.end()) {
      cells.emplace_back(r.label, std::vector<double>{});
      it = cells.end() - 1;
    }
    it->second.push_back(r.metrics.accuracy);
  }
  std::string out = strformat("%-24s %8s %8s %6s\n", "cell", "mean", "std", "runs");
  for (const auto& [label, accs] : cells) {
    double mean = 0;
    for (double a : accs) mean += a;
    mean /= static_cast<double>(accs.size());
    double var = 0;
    for (double a : accs) var += (a - mean) * (a - mean);
    double sd = accs.size() > 1 ? std::sqrt(var / static_cast<double>(accs.size() - 1)) : 0.0;
    out += strformat("%-24s %8.4f %8.4f %6zu\n", label.c_str(), mean, sd, accs.size());
  }
  return out;
}

}  // namespace pmn
