#include "pmn/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "pmn/config.hpp"
#include "pmn/gradcheck.hpp"
#include "pmn/trace_io.hpp"
#include <CLI11.hpp>

namespace fs = std::filesystem;

namespace pmn {

namespace {

constexpr const char* kVersion = "0.1.0";

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::vector<std::string> overrides;
};

Config load_config(const CommonArgs& a) {
  Config cfg;
  if (!a.config_path.empty()) cfg = Config::from_json(read_file(a.config_path));
  for (const auto& ov : a.overrides) cfg.apply_override(ov);
  return cfg;
}

void write_manifest(const CommonArgs& a, const Config& cfg,
                    const std::string& command,
                    const std::vector<std::string>& args) {
  std::string joined;
  for (const auto& s : args) {
    if (!joined.empty()) joined += ' ';
    joined += s;
  }
  std::string text = "command: " + command + "\n" +
                     "args: " + joined + "\n" +
                     strformat("config_hash: %016llx\n",
                               static_cast<unsigned long long>(cfg.hash())) +
                     strformat("seed: %llu\n",
                               static_cast<unsigned long long>(cfg.seed)) +
                     "version: " + kVersion + "\n" +
                     "config: " + cfg.to_json() + "\n";
  write_file((fs::path(a.out_dir) / "manifest.txt").string(), text);
}

void ensure_out(const CommonArgs& a) { fs::create_directories(a.out_dir); }

std::string dataset_path(const std::string& dir, Task t, const char* split) {
  return (fs::path(dir) / (std::string(task_name(t)) + "." + split + ".jsonl")).string();
}

std::string ckpt_path(const std::string& dir, Task t) {
  return (fs::path(dir) / (std::string(task_name(t)) + ".ckpt")).string();
}

void load_children_checkpoints(TaskGraph& g, Task t, const std::string& dir) {
  for (Task child : required_children(g, t)) {
    std::string path = ckpt_path(dir, child);
    if (!fs::exists(path))
      throw ValueError(std::string("child module '") + task_name(child) +
                       "' has no checkpoint at " + path +
                       " (train lower levels first)");
    load_module(g, child, path);
  }
}

QuestionSplit load_split(const std::string& dir, Task t, const SceneParams& p) {
  QuestionSplit s;
  s.train = load_dataset(dataset_path(dir, t, "train"), p);
  s.eval = load_dataset(dataset_path(dir, t, "eval"), p);
  return s;
}

// -- verbs ------------------------------------------------------------------------

int cmd_gen_data(const CommonArgs& a, const Config& cfg,
                 const std::vector<std::string>& tasks) {
  ensure_out(a);
  std::vector<Task> which;
  if (tasks.empty() || (tasks.size() == 1 && tasks[0] == "all")) {
    which = {Task::Obj, Task::Att, Task::Rel, Task::Cap, Task::Cnt, Task::Qa};
  } else {
    for (const auto& name : tasks) which.push_back(task_from_name(name));
  }
  for (Task t : which) {
    size_t count = cfg.data.questions.at(task_name(t));
    auto qs = build_question_set(t, count, cfg.seed ^ (0x9a90 + static_cast<uint64_t>(t)),
                                 cfg.graph.sigma, cfg.graph.scene,
                                 QuestionMix::for_task(t));
    auto split = split_questions(std::move(qs), cfg.data.eval_fraction,
                                 cfg.seed ^ 0xdead);
    save_dataset(dataset_path(a.out_dir, t, "train"), split.train);
    save_dataset(dataset_path(a.out_dir, t, "eval"), split.eval);
    std::cout << task_name(t) << ": " << split.train.size() << " train / "
              << split.eval.size() << " eval questions\n";
  }
  return 0;
}

int cmd_train(const CommonArgs& a, const Config& cfg, const std::string& task_str,
              const std::string& data_dir, const std::string& ckpt_dir) {
  ensure_out(a);
  Task task = task_from_name(task_str);
  std::string data = data_dir.empty() ? a.out_dir : data_dir;
  std::string ckpts = ckpt_dir.empty() ? a.out_dir : ckpt_dir;

  TaskGraph g = build_task_graph(cfg.graph);
  load_children_checkpoints(g, task, ckpts);
  QuestionSplit split = load_split(data, task, cfg.graph.scene);

  Metrics m = train_task(g, cfg.train_config(task), split.train, split.eval);
  save_module(g, task, ckpt_path(a.out_dir, task));
  if (cfg.train_config(task).finetune_cnt)
    save_module(g, Task::Cnt, ckpt_path(a.out_dir, Task::Cnt));
  write_file((fs::path(a.out_dir) / ("metrics." + task_str + ".json")).string(),
             metrics_json(m) + "\n");
  std::cout << task_str << " accuracy " << strformat("%.4f", m.accuracy) << " over "
            << m.total << " eval questions\n";
  return 0;
}

int cmd_eval(const CommonArgs& a, const Config& cfg, const std::string& task_str,
             const std::string& data_dir, const std::string& ckpt_dir) {
  ensure_out(a);
  Task task = task_from_name(task_str);
  std::string data = data_dir.empty() ? a.out_dir : data_dir;
  std::string ckpts = ckpt_dir.empty() ? a.out_dir : ckpt_dir;

  TaskGraph g = build_task_graph(cfg.graph);
  load_children_checkpoints(g, task, ckpts);
  load_module(g, task, ckpt_path(ckpts, task));
  auto eval_set = load_dataset(dataset_path(data, task, "eval"), cfg.graph.scene);

  Metrics m = evaluate(g, task, eval_set, cfg.train.gating == "fixed");
  write_file((fs::path(a.out_dir) / ("metrics." + task_str + ".json")).string(),
             metrics_json(m) + "\n");
  std::cout << task_str << " accuracy " << strformat("%.4f", m.accuracy) << " over "
            << m.total << " eval questions\n";
  return 0;
}

int cmd_trace(const CommonArgs& a, const Config& cfg, const std::string& task_str,
              const std::string& data_file, const std::string& ckpt_dir,
              size_t question_id) {
  ensure_out(a);
  Task task = task_from_name(task_str);
  std::string ckpts = ckpt_dir.empty() ? a.out_dir : ckpt_dir;

  TaskGraph g = build_task_graph(cfg.graph);
  load_children_checkpoints(g, task, ckpts);
  load_module(g, task, ckpt_path(ckpts, task));

  std::string data = data_file.empty()
                         ? dataset_path(a.out_dir, task, "eval")
                         : data_file;
  auto questions = load_dataset(data, cfg.graph.scene);
  if (question_id >= questions.size())
    throw ValueError(strformat("question id %zu out of range (%zu questions)",
                               question_id, questions.size()));
  const Question& q = questions[question_id];

  Tape tape;
  Environment env = g.environment_for(tape, generate_scene(q.scene_seed, cfg.graph.scene),
                                      q.sigma);
  Var query = g.make_query(tape, env, q);
  if (q.task == Task::Cnt || q.task == Task::Qa) env.question = query;

  ExecOptions opt;
  opt.record_trace = true;
  opt.fixed_equal_gating = cfg.train.gating == "fixed";
  ExecResult res = execute(g.registry, g.handles.at(task), query, env, tape, opt);

  std::string doc = export_trace(*res.trace);
  write_file((fs::path(a.out_dir) / "trace.json").string(), doc + "\n");
  int pred = predict_answer(g, tape, q, res.out);
  int want = (q.task == Task::Qa) ? g.answers.joint_from(q.templ, q.answer) : q.answer;
  std::cout << "trace written; predicted ";
  if (q.task == Task::Qa)
    std::cout << g.answers.name(pred) << ", stored " << g.answers.name(want);
  else
    std::cout << "answer id " << pred << ", stored answer id " << want;
  std::cout << "\n";
  return 0;
}

int cmd_ablate(const CommonArgs& a, const Config& cfg, const std::string& preset) {
  ensure_out(a);
  AblationConfig acfg;
  acfg.seeds = cfg.ablation.seeds;
  acfg.jobs = cfg.ablation.jobs;
  acfg.train_questions = cfg.ablation.train_questions;
  acfg.eval_questions = cfg.ablation.eval_questions;
  acfg.epochs = cfg.ablation.epochs;
  acfg.lr = cfg.ablation.lr;
  acfg.pretrain = cfg.pretrain;

  if (preset == "counting-table2") {
    acfg.task = Task::Cnt;
    acfg.cells = {
        {"base", Composition{false, false, false, false, false}, false},
        {"base+obj+att", Composition{true, true, false, false, false}, false},
        {"base+obj+att+rel", Composition{true, true, true, false, false}, false},
    };
  } else if (preset == "qa-gating") {
    acfg.task = Task::Qa;
    acfg.cells = {
        {"learned-gating", cfg.graph.qa_children, false},
        {"fixed-equal-gating", cfg.graph.qa_children, true},
    };
  } else {
    throw ValueError("unknown ablation preset: " + preset +
                     " (expected counting-table2 or qa-gating)");
  }

  auto rows = run_ablation(cfg.graph, acfg);
  std::string table = ablation_table(rows);
  write_file((fs::path(a.out_dir) / "ablation.json").string(), ablation_json(rows) + "\n");
  write_file((fs::path(a.out_dir) / "ablation.txt").string(), table);
  std::cout << table;
  return 0;
}

int cmd_lowdata(const CommonArgs& a, const Config& cfg) {
  ensure_out(a);
  LowDataConfig lcfg;
  lcfg.fractions = cfg.lowdata.fractions;
  lcfg.seeds = cfg.lowdata.seeds;
  lcfg.train_questions = cfg.lowdata.train_questions;
  lcfg.eval_questions = cfg.lowdata.eval_questions;
  lcfg.epochs = cfg.lowdata.epochs;
  lcfg.jobs = cfg.lowdata.jobs;
  lcfg.pretrain = cfg.pretrain;

  auto pts = run_low_data(cfg.graph, lcfg);
  write_file((fs::path(a.out_dir) / "lowdata.json").string(), lowdata_json(pts) + "\n");
  std::string table = strformat("%-10s %6s %10s %10s %10s\n", "fraction", "seed",
                                "base", "composed", "gain");
  for (const auto& p : pts)
    table += strformat("%-10.3f %6llu %10.4f %10.4f %+10.4f\n", p.fraction,
                       static_cast<unsigned long long>(p.seed), p.base_accuracy,
                       p.composed_accuracy, p.gain);
  write_file((fs::path(a.out_dir) / "lowdata.txt").string(), table);
  std::cout << table;
  return 0;
}

int cmd_grad_check(const CommonArgs& a, const Config& cfg,
                   const std::string& task_str, int samples) {
  ensure_out(a);
  Task task = task_from_name(task_str);

  double worst = 0.0;
  std::string worst_point;
  for (int s = 0; s < samples; ++s) {
    TaskGraphConfig tiny = tiny_task_config(cfg.seed + static_cast<uint64_t>(s));
    TaskGraph g = build_task_graph(tiny);
    Scene scene = generate_scene(1000 + static_cast<uint64_t>(s), tiny.scene);
    auto qs = make_questions(scene, QuestionMix::for_task(task),
                             42 + static_cast<uint64_t>(s), tiny.scene, task,
                             tiny.sigma);
    if (qs.empty()) continue;
    Question q = qs.front();

    std::vector<Tensor*> points;
    std::vector<std::string> names;
    auto add_pss = [&](Task t) {
      for (auto& [comp, pset] : g.handles.at(t)->params)
        for (auto& e : pset->entries()) {
          if (!e.trainable || e.statistic) continue;
          points.push_back(&e.value);
          names.push_back(pset->label() + "." + e.name);
        }
    };
    add_pss(task);
    for (Task child : required_children(g, task)) add_pss(child);

    ScalarFn f = [&](Tape& tape) -> Var {
      Environment env = g.environment_for(tape, scene, tiny.sigma);
      Var query = g.make_query(tape, env, q);
      if (q.task == Task::Cnt || q.task == Task::Qa) env.question = query;
      ExecResult res = execute(g.registry, g.handles.at(task), query, env, tape, {});
      return task_loss(g, tape, q, scene, res.out, false);
    };
    GradCheckOptions opt;
    opt.eps = 1e-5;
    opt.max_coords_per_tensor = 24;
    opt.seed = 7 + static_cast<uint64_t>(s);
    auto rep = grad_check(f, points, names, opt);
    if (rep.max_rel_err > worst) {
      worst = rep.max_rel_err;
      worst_point = rep.worst_point;
    }
  }
  std::cout << strformat("max relative error %.3e", worst);
  if (!worst_point.empty()) std::cout << " at " << worst_point;
  std::cout << "\n";
  if (worst >= 1e-4) {
    std::cerr << "gradient check failed (limit 1e-4)\n";
    return 2;
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"compositional multi-task module networks"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string task_str = "qa";
  std::string data_dir, ckpt_dir, data_file, preset = "counting-table2";
  std::vector<std::string> gen_tasks;
  size_t question_id = 0;
  int samples = 3;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "config JSON path");
    sub->add_option("--out", common.out_dir, "output directory");
    sub->add_option("--set", common.overrides, "dotted.key=value overrides");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate question datasets");
  add_common(gen);
  gen->add_option("--task", gen_tasks, "tasks to generate (default all)");

  CLI::App* train = app.add_subcommand("train", "train one task module");
  add_common(train);
  train->add_option("--task", task_str, "task to train")->required();
  train->add_option("--data", data_dir, "dataset directory (default: --out)");
  train->add_option("--checkpoints", ckpt_dir, "child checkpoint directory (default: --out)");

  CLI::App* ev = app.add_subcommand("eval", "evaluate a trained module");
  add_common(ev);
  ev->add_option("--task", task_str, "task to evaluate")->required();
  ev->add_option("--data", data_dir, "dataset directory (default: --out)");
  ev->add_option("--checkpoints", ckpt_dir, "checkpoint directory (default: --out)");

  CLI::App* tr = app.add_subcommand("trace", "record one execution trace");
  add_common(tr);
  tr->add_option("--task", task_str, "task to trace")->required();
  tr->add_option("--data", data_file, "dataset file (default: <out>/<task>.eval.jsonl)");
  tr->add_option("--checkpoints", ckpt_dir, "checkpoint directory (default: --out)");
  tr->add_option("--question-id", question_id, "question index in the dataset");

  CLI::App* ab = app.add_subcommand("ablate", "run a composition/gating sweep");
  add_common(ab);
  ab->add_option("--preset", preset, "counting-table2 | qa-gating");

  CLI::App* ld = app.add_subcommand("lowdata", "train on data fractions");
  add_common(ld);

  CLI::App* gc = app.add_subcommand("grad-check", "finite-difference gradient check");
  add_common(gc);
  gc->add_option("--task", task_str, "task module to check");
  gc->add_option("--samples", samples, "number of (scene, question) samples");

  std::vector<const char*> argv;
  argv.push_back("pmn");
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      app.exit(e);
      return 0;
    }
    std::cerr << e.what() << "\n";
    return 1;
  }

  try {
    Config cfg = load_config(common);
    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    ensure_out(common);
    write_manifest(common, cfg, name, args);
    if (name == "gen-data") return cmd_gen_data(common, cfg, gen_tasks);
    if (name == "train") return cmd_train(common, cfg, task_str, data_dir, ckpt_dir);
    if (name == "eval") return cmd_eval(common, cfg, task_str, data_dir, ckpt_dir);
    if (name == "trace")
      return cmd_trace(common, cfg, task_str, data_file, ckpt_dir, question_id);
    if (name == "ablate") return cmd_ablate(common, cfg, preset);
    if (name == "lowdata") return cmd_lowdata(common, cfg);
    if (name == "grad-check") return cmd_grad_check(common, cfg, task_str, samples);
    std::cerr << "unknown command " << name << "\n";
    return 1;
  } catch (const ValueError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace pmn
