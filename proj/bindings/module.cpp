#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pmn/config.hpp"
#include "pmn/gradcheck.hpp"
#include "pmn/trace_io.hpp"

namespace py = pybind11;
using namespace pmn;

namespace {

py::dict question_to_dict(const Question& q) {
  py::dict d;
  d["scene_seed"] = q.scene_seed;
  d["sigma"] = q.sigma;
  d["tokens"] = q.tokens;
  d["task"] = std::string(task_name(q.task));
  d["answer"] = q.answer;
  d["type"] = question_type(q);
  return d;
}

Question question_from_dict(const py::dict& d, const SceneParams& scene) {
  Question q;
  q.scene_seed = d["scene_seed"].cast<uint64_t>();
  q.sigma = d["sigma"].cast<double>();
  q.tokens = d["tokens"].cast<std::vector<int>>();
  q.task = task_from_name(d["task"].cast<std::string>());
  q.answer = d["answer"].cast<int>();
  Vocab v(scene);
  derive_provenance(q, v);
  return q;
}

py::dict metrics_to_dict(const Metrics& m) {
  py::dict d;
  d["task"] = std::string(task_name(m.task));
  d["accuracy"] = m.accuracy;
  d["correct"] = m.correct;
  d["total"] = m.total;
  d["loss_curve"] = m.loss_curve;
  py::dict types;
  for (const auto& [name, counts] : m.per_type) {
    py::dict t;
    t["correct"] = counts[0];
    t["total"] = counts[1];
    types[name.c_str()] = t;
  }
  d["per_type"] = types;
  return d;
}

/// One module graph plus its configuration, driven from python.
class Engine {
 public:
  explicit Engine(const std::string& config_json)
      : config_(Config::from_json(config_json)),
        graph_(build_task_graph(config_.graph)) {}

  std::string config_json() const { return config_.to_json(); }

  std::vector<py::dict> generate_questions(const std::string& task, size_t count,
                                           uint64_t seed) {
    Task t = task_from_name(task);
    auto qs = build_question_set(t, count, seed, config_.graph.sigma,
                                 config_.graph.scene, QuestionMix::for_task(t));
    std::vector<py::dict> out;
    for (const auto& q : qs) out.push_back(question_to_dict(q));
    return out;
  }

  int oracle(const py::dict& qd) {
    Question q = question_from_dict(qd, config_.graph.scene);
    Scene scene = generate_scene(q.scene_seed, config_.graph.scene);
    return oracle_answer(scene, q, config_.graph.scene);
  }

  py::dict train(const std::string& task, const std::vector<py::dict>& train_qs,
                 const std::vector<py::dict>& eval_qs, int epochs, uint64_t seed) {
    Task t = task_from_name(task);
    TrainConfig cfg = config_.train_config(t);
    cfg.seed = seed;
    if (epochs > 0) cfg.epochs = epochs;
    std::vector<Question> train_v, eval_v;
    for (const auto& d : train_qs)
      train_v.push_back(question_from_dict(d, config_.graph.scene));
    for (const auto& d : eval_qs)
      eval_v.push_back(question_from_dict(d, config_.graph.scene));
    Metrics m = train_task(graph_, cfg, train_v, eval_v);
    return metrics_to_dict(m);
  }

  py::dict evaluate_set(const std::string& task, const std::vector<py::dict>& qs) {
    Task t = task_from_name(task);
    std::vector<Question> v;
    for (const auto& d : qs) v.push_back(question_from_dict(d, config_.graph.scene));
    return metrics_to_dict(evaluate(graph_, t, v));
  }

  py::tuple answer(const py::dict& qd, bool with_trace) {
    Question q = question_from_dict(qd, config_.graph.scene);
    Tape tape;
    Scene scene = generate_scene(q.scene_seed, config_.graph.scene);
    Environment env = graph_.environment_for(tape, scene, q.sigma);
    Var query = graph_.make_query(tape, env, q);
    if (q.task == Task::Cnt || q.task == Task::Qa) env.question = query;
    ExecOptions opt;
    opt.record_trace = with_trace;
    auto res = execute(graph_.registry, graph_.handles.at(q.task), query, env,
                       tape, opt);
    int pred = predict_answer(graph_, tape, q, res.out);
    std::string trace_doc = with_trace ? export_trace(*res.trace) : "";
    return py::make_tuple(pred, trace_doc);
  }

  void save(const std::string& task, const std::string& path) {
    save_module(graph_, task_from_name(task), path);
  }
  void load(const std::string& task, const std::string& path) {
    load_module(graph_, task_from_name(task), path);
  }

  double grad_check_task(const std::string& task, uint64_t seed) {
    Task t = task_from_name(task);
    Scene scene = generate_scene(seed, config_.graph.scene);
    auto qs = make_questions(scene, QuestionMix::for_task(t), seed,
                             config_.graph.scene, t, config_.graph.sigma);
    if (qs.empty()) throw ValueError("no question could be generated");
    Question q = qs.front();
    std::vector<Tensor*> points;
    std::vector<std::string> names;
    for (auto& [comp, pset] : graph_.handles.at(t)->params)
      for (auto& e : pset->entries()) {
        if (!e.trainable || e.statistic) continue;
        points.push_back(&e.value);
        names.push_back(pset->label() + "." + e.name);
      }
    ScalarFn f = [&](Tape& tape) -> Var {
      Environment env = graph_.environment_for(tape, scene, config_.graph.sigma);
      Var query = graph_.make_query(tape, env, q);
      if (q.task == Task::Cnt || q.task == Task::Qa) env.question = query;
      auto res = execute(graph_.registry, graph_.handles.at(t), query, env, tape, {});
      return task_loss(graph_, tape, q, scene, res.out, false);
    };
    GradCheckOptions opt;
    opt.max_coords_per_tensor = 16;
    opt.seed = seed;
    return grad_check(f, points, names, opt).max_rel_err;
  }

  size_t answer_space(const std::string& task) {
    return static_cast<size_t>(graph_.answer_space_size(task_from_name(task)));
  }

 private:
  Config config_;
  TaskGraph graph_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Compositional multi-task module networks: scene generation, "
            "module execution, progressive training, traces.";

  py::register_exception<ShapeError>(m, "ShapeError");
  py::register_exception<ValueError>(m, "ValueError");
  py::register_exception<LevelViolation>(m, "LevelViolation");
  py::register_exception<IoError>(m, "IoError");

  py::class_<Engine>(m, "Engine")
      .def(py::init<const std::string&>(), py::arg("config_json") = "")
      .def("config_json", &Engine::config_json)
      .def("generate_questions", &Engine::generate_questions, py::arg("task"),
           py::arg("count"), py::arg("seed") = 1)
      .def("oracle", &Engine::oracle)
      .def("train", &Engine::train, py::arg("task"), py::arg("train_questions"),
           py::arg("eval_questions"), py::arg("epochs") = 0, py::arg("seed") = 1)
      .def("evaluate", &Engine::evaluate_set)
      .def("answer", &Engine::answer, py::arg("question"),
           py::arg("with_trace") = false)
      .def("save", &Engine::save)
      .def("load", &Engine::load)
      .def("grad_check", &Engine::grad_check_task, py::arg("task"),
           py::arg("seed") = 1)
      .def("answer_space", &Engine::answer_space);

  m.def("normalize_config", &normalize_config,
        "Canonical form of a config document (strict parse).");

#ifdef PMN_VERSION_INFO
  m.attr("__version__") = PMN_VERSION_INFO;
#else
  m.attr("__version__") = "dev";
#endif
}
