#include "pmn/graph.hpp"

#include <cmath>

namespace pmn {

double l2_norm(Var v) {
  double acc = 0.0;
  for (double x : v.val()) acc += x * x;
  return std::sqrt(acc);
}

Environment make_environment(Tape& tape, const Tensor& features,
                             std::vector<std::array<double, 2>> positions) {
  if (features.rank() != 2)
    throw ShapeError("environment: features must be a matrix (one row per entity)");
  if (features.dim(0) != positions.size())
    throw ShapeError(strformat("environment: %zu feature rows vs %zu positions",
                               features.dim(0), positions.size()));
  if (positions.empty()) throw ValueError("environment: needs at least one entity");
  Environment env;
  env.features = tape.leaf(features);
  env.feature_rows.reserve(positions.size());
  for (size_t i = 0; i < positions.size(); ++i)
    env.feature_rows.push_back(tape.row(env.features, i));
  env.positions = std::move(positions);
  return env;
}

// -- registry ----------------------------------------------------------------

ModuleHandle Registry::add(ModuleSpec spec) {
  if (spec.name.empty()) throw ValueError("register: module needs a name");
  if (by_name_.count(spec.name))
    throw ValueError("register: duplicate module name " + spec.name);
  if (spec.kind == ModuleKind::Terminal) {
    if (!spec.children.empty())
      throw LevelViolation("register: terminal module " + spec.name +
                           " cannot have children");
    if (spec.level != 0)
      throw LevelViolation("register: terminal module " + spec.name +
                           " must be at level 0");
    if (!spec.terminal)
      throw ValueError("register: terminal module " + spec.name +
                       " has no evaluation function");
  } else {
    if (!spec.init || !spec.update || !spec.predict)
      throw ValueError("register: compositional module " + spec.name +
                       " is missing components");
    if (spec.children.empty())
      throw ValueError("register: compositional module " + spec.name +
                       " has an empty child list");
    for (const auto& slot : spec.children) {
      if (!slot.query || !slot.receive)
        throw ValueError("register: " + spec.name + " child " + slot.name +
                         " lacks a transmitter or receiver");
      if (slot.owned) {
        if (!slot.owned_fn)
          throw ValueError("register: " + spec.name + " owned terminal " +
                           slot.name + " has no function");
        continue;
      }
      auto it = by_name_.find(slot.name);
      if (it == by_name_.end())
        throw ValueError("register: " + spec.name + " references unregistered child " +
                         slot.name);
      if (it->second->level >= spec.level)
        throw LevelViolation(strformat(
            "register: %s (level %d) cannot call %s (level %d)",
            spec.name.c_str(), spec.level, slot.name.c_str(), it->second->level));
    }
    for (const auto& g : spec.groups)
      for (size_t m : g.members)
        if (m >= spec.children.size())
          throw ValueError("register: " + spec.name + " group " + g.label +
                           " references child index out of range");
  }
  auto handle = std::make_shared<ModuleSpec>(std::move(spec));
  by_name_[handle->name] = handle;
  order_.push_back(handle);
  max_level_ = std::max(max_level_, handle->level);
  return handle;
}

ModuleHandle Registry::get(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw ValueError("registry: no module named " + name);
  return it->second;
}

void Registry::set_trained(const std::string& name, bool t) {
  if (!by_name_.count(name)) throw ValueError("registry: no module named " + name);
  if (t)
    trained_.insert(name);
  else
    trained_.erase(name);
}

bool Registry::trained(const std::string& name) const {
  return trained_.count(name) != 0;
}

// -- gating ------------------------------------------------------------------

std::pair<Var, Var> gated_sum(Tape& tape, std::span<const Var> values,
                              Var logits, AttnNorm mode) {
  if (values.empty()) throw ValueError("gated_sum: empty group");
  if (logits.size() != values.size())
    throw ShapeError(strformat("gated_sum: %zu values but %zu scores",
                               values.size(), logits.size()));
  size_t width = values[0].size();
  for (Var v : values)
    if (v.size() != width)
      throw ShapeError(strformat("gated_sum: member width %zu != %zu",
                                 v.size(), width));
  Var weights;
  switch (mode) {
    case AttnNorm::Softmax: weights = tape.softmax(logits); break;
    case AttnNorm::Sigmoid: weights = tape.sigmoid(logits); break;
    case AttnNorm::None: weights = logits; break;
  }
  return {weights, tape.weighted_sum(values, weights)};
}

// -- execution context --------------------------------------------------------

bool ExecContext::updating_stats() const {
  return opt_.training_modules != nullptr &&
         opt_.training_modules->count(spec.name) != 0;
}

void ExecContext::begin_step(int step, Var logits, TraceStep* ts) {
  t = step;
  step_logits = logits;
  trace_step_ = ts;
  group_cache_.clear();
}

ExecContext::GroupEval& ExecContext::eval_group(const std::string& label,
                                                const ScratchPad& pad,
                                                bool need_sum) {
  auto it = group_cache_.find(label);
  if (it != group_cache_.end() && (!need_sum || it->second.has_sum)) return it->second;

  const GatingGroup* grp = nullptr;
  for (const auto& g : spec.groups)
    if (g.label == label) grp = &g;
  if (!grp)
    throw ValueError(spec.name + ": no gating group named " + label);

  std::vector<Var> member_logits;
  std::vector<Var> member_values;
  for (size_t m : grp->members) {
    if (m >= pad.size())
      throw ValueError(strformat("%s: group %s member %zu not yet on the scratch pad",
                                 spec.name.c_str(), label.c_str(), m));
    member_logits.push_back(tape.pick(step_logits, m));
    member_values.push_back(pad.value(m));
  }
  Var sub = tape.concat(member_logits);

  GroupEval ev;
  if (need_sum) {
    auto [w, s] = gated_sum(tape, member_values, sub, grp->mode);
    ev.weights = w;
    ev.sum = s;
    ev.has_sum = true;
  } else {
    switch (grp->mode) {
      case AttnNorm::Softmax: ev.weights = tape.softmax(sub); break;
      case AttnNorm::Sigmoid: ev.weights = tape.sigmoid(sub); break;
      case AttnNorm::None: ev.weights = sub; break;
    }
  }

  bool first_eval = it == group_cache_.end();
  if (first_eval && trace_step_ != nullptr) {
    TraceGroup tg;
    tg.label = label;
    tg.mode = grp->mode;
    for (size_t m : grp->members) tg.members.emplace_back(spec.children[m].name);
    auto wv = ev.weights.val();
    tg.weights.assign(wv.begin(), wv.end());
    trace_step_->groups.push_back(std::move(tg));
  }
  group_cache_[label] = ev;
  return group_cache_[label];
}

Var ExecContext::group_gated_sum(const std::string& label, const ScratchPad& pad) {
  return eval_group(label, pad, true).sum;
}

Var ExecContext::group_weights(const std::string& label, const ScratchPad& pad) {
  return eval_group(label, pad, false).weights;
}

// -- executor ----------------------------------------------------------------

namespace {

[[noreturn]] void component_fail(const ModuleSpec& spec, const char* component,
                                 int step, const std::exception& e) {
  throw ShapeError(strformat("%s.%s (step %d): %s", spec.name.c_str(), component,
                             step, e.what()));
}

}  // namespace

class Executor {
 public:
  Executor(Registry& reg, Tape& tape, const Environment& env,
           const ExecOptions& opt)
      : reg_(reg), tape_(tape), env_(env), opt_(opt) {}

  ModuleOutput run(const ModuleSpec& spec, Var query, TraceNode* trace,
                   int depth) {
    if (depth > reg_.max_level() + 1)
      throw ValueError(strformat(
          "execute: call depth %d exceeds registered level ceiling %d (internal "
          "invariant violated)", depth, reg_.max_level()));
    check_query_width(spec, query);

    if (trace != nullptr) {
      trace->module = spec.name;
      trace->level = spec.level;
    }

    ExecContext ctx(tape_, env_, spec, opt_);

    if (spec.kind == ModuleKind::Terminal) {
      try {
        return spec.terminal(ctx, query);
      } catch (const ShapeError& e) {
        component_fail(spec, "eval", 1, e);
      }
    }

    int steps = spec.resolve_steps(env_);
    if (steps < 1)
      throw ValueError(spec.name + ": step count must be >= 1");
    ctx.total_steps = steps;

    std::vector<ModuleState> states;
    states.reserve(static_cast<size_t>(steps) + 1);
    try {
      states.push_back(spec.init(ctx, query));
    } catch (const ShapeError& e) {
      component_fail(spec, "I", 0, e);
    }

    ScratchPad pad;
    for (int t = 1; t <= steps; ++t) {
      pad.clear();
      TraceStep* ts = nullptr;
      if (trace != nullptr) {
        trace->steps.emplace_back();
        ts = &trace->steps.back();
        ts->t = t;
      }

      Var logits = importance_logits(ctx, spec, states.back(), t);
      ctx.begin_step(t, logits, ts);
      if (ts != nullptr) {
        auto lv = logits.val();
        ts->logits.assign(lv.begin(), lv.end());
      }

      for (size_t k = 0; k < spec.children.size(); ++k) {
        const ChildSlot& slot = spec.children[k];
        Var qk;
        try {
          qk = slot.query(ctx, states.back(), pad, logits);
        } catch (const ShapeError& e) {
          component_fail(spec, ("Q->" + slot.name).c_str(), t, e);
        }

        TraceChild* tc = nullptr;
        if (ts != nullptr) {
          ts->children.emplace_back();
          tc = &ts->children.back();
          tc->name = slot.name;
          tc->query_norm = l2_norm(qk);
        }

        ModuleOutput ok;
        if (slot.owned) {
          try {
            ok = slot.owned_fn(ctx, qk);
          } catch (const ShapeError& e) {
            component_fail(spec, slot.name.c_str(), t, e);
          }
        } else {
          ModuleHandle child = reg_.get(slot.name);
          TraceNode* sub = nullptr;
          if (tc != nullptr) {
            tc->sub.emplace_back();
            sub = &tc->sub.back();
          }
          ok = run(*child, qk, sub, depth + 1);
        }

        Var vk;
        try {
          vk = slot.receive(ctx, states.back(), ok);
        } catch (const ShapeError& e) {
          component_fail(spec, ("R<-" + slot.name).c_str(), t, e);
        }
        if (tc != nullptr) tc->output_norm = l2_norm(ok.value);
        pad.append(slot.name, vk);
      }

      try {
        states.push_back(spec.update(ctx, states.back(), pad, logits));
      } catch (const ShapeError& e) {
        component_fail(spec, "U", t, e);
      }
    }

    try {
      return spec.predict(ctx, states, query);
    } catch (const ShapeError& e) {
      component_fail(spec, "Psi", steps, e);
    }
  }

 private:
  void check_query_width(const ModuleSpec& spec, Var query) const {
    int want = spec.query_width;
    if (spec.query_width_fn) want = spec.query_width_fn(env_);
    if (want >= 0 && static_cast<int>(query.size()) != want)
      throw ShapeError(strformat("%s: query width %zu, expected %d",
                                 spec.name.c_str(), query.size(), want));
  }

  Var importance_logits(ExecContext& ctx, const ModuleSpec& spec,
                        const ModuleState& state, int t) {
    size_t n = spec.children.size();
    if (opt_.fixed_equal_gating || !spec.importance) return tape_.zeros(n);
    Var g;
    try {
      g = spec.importance(ctx, state);
    } catch (const ShapeError& e) {
      component_fail(spec, "G", t, e);
    }
    if (g.size() != n)
      throw ShapeError(strformat("%s.G (step %d): produced %zu scores for %zu children",
                                 spec.name.c_str(), t, g.size(), n));
    return g;
  }

  Registry& reg_;
  Tape& tape_;
  const Environment& env_;
  const ExecOptions& opt_;
};

ExecResult execute(Registry& reg, const ModuleHandle& module, Var query,
                   const Environment& env, Tape& tape, const ExecOptions& opt) {
  if (!module) throw ValueError("execute: null module handle");
  Executor ex(reg, tape, env, opt);
  ExecResult res;
  if (opt.record_trace) {
    TraceNode trace;
    res.out = ex.run(*module, query, &trace, 0);
    res.trace = std::move(trace);
  } else {
    res.out = ex.run(*module, query, nullptr, 0);
  }
  return res;
}

void flatten_calls(const TraceNode& trace,
                   std::vector<std::array<std::string, 2>>& out) {
  for (const auto& step : trace.steps)
    for (const auto& child : step.children) {
      out.push_back({trace.module, child.name});
      for (const auto& sub : child.sub) flatten_calls(sub, out);
    }
}

}  // namespace pmn
