#pragma once

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pmn/blocks.hpp"
#include "pmn/params.hpp"

namespace pmn {

/// Shared sensory context, readable by every module: entity features
/// (one row per entity), entity positions, and an optional encoded
/// question vector. `teacher_tokens` is a training-time side channel for
/// sequence modules that condition on the previous reference token.
struct Environment {
  Var features;                                  // N x d
  std::vector<Var> feature_rows;                 // split once per tape
  std::vector<std::array<double, 2>> positions;  // per entity
  std::optional<Var> question;
  const std::vector<int>* teacher_tokens = nullptr;

  size_t entity_count() const { return positions.size(); }
  size_t feature_width() const { return features.valid() ? features.cols() : 0; }
};

/// Build the tape-resident view of rendered entity features.
Environment make_environment(Tape& tape, const Tensor& features,
                             std::vector<std::array<double, 2>> positions);

/// A child's reply. `length` is the used-row count for padded sequence
/// outputs (-1 for plain vectors).
struct ModuleOutput {
  Var value;
  int length = -1;
};

/// Per-time-step store of received child outputs, wiped at the start of
/// every step.
class ScratchPad {
 public:
  void clear() { items_.clear(); }
  void append(std::string_view name, Var v) { items_.emplace_back(name, v); }
  size_t size() const { return items_.size(); }
  std::string_view name(size_t i) const { return items_[i].first; }
  Var value(size_t i) const { return items_[i].second; }
  std::optional<Var> find(std::string_view name) const {
    for (const auto& [n, v] : items_)
      if (n == name) return v;
    return std::nullopt;
  }

 private:
  std::vector<std::pair<std::string_view, Var>> items_;
};

struct ModuleState {
  std::vector<Var> slots;
  Var at(size_t i) const { return slots.at(i); }
};

class ExecContext;

using TerminalFn = std::function<ModuleOutput(ExecContext&, Var query)>;
using InitFn = std::function<ModuleState(ExecContext&, Var query)>;
using ImportanceFn = std::function<Var(ExecContext&, const ModuleState&)>;
using QueryFn = std::function<Var(ExecContext&, const ModuleState&,
                                  const ScratchPad&, Var logits)>;
using ReceiveFn = std::function<Var(ExecContext&, const ModuleState&,
                                    const ModuleOutput&)>;
using UpdateFn = std::function<ModuleState(ExecContext&, const ModuleState&,
                                           const ScratchPad&, Var logits)>;
using PredictFn = std::function<ModuleOutput(ExecContext&,
                                             std::span<const ModuleState>,
                                             Var query)>;

/// One entry of a module's ordered child list. Either a reference to a
/// registered lower-level module, or a parent-owned terminal (residual /
/// attention helper) that trains with the parent.
struct ChildSlot {
  std::string name;
  bool owned = false;
  TerminalFn owned_fn;
  QueryFn query;
  ReceiveFn receive;
};

/// Named subset of the child list sharing one normalization of importance
/// scores.
struct GatingGroup {
  std::string label;
  std::vector<size_t> members;  // indices into children
  AttnNorm mode = AttnNorm::Softmax;
};

enum class ModuleKind { Terminal, Compositional };

struct ModuleSpec {
  std::string name;
  int level = 0;
  ModuleKind kind = ModuleKind::Terminal;

  TerminalFn terminal;  // terminal modules only

  // Compositional machinery.
  InitFn init;
  ImportanceFn importance;  // optional; absent means zero logits
  UpdateFn update;
  PredictFn predict;
  std::vector<ChildSlot> children;
  std::vector<GatingGroup> groups;
  int steps = 1;
  std::function<int(const Environment&)> steps_fn;  // overrides `steps` if set

  int query_width = -1;  // -1: environment-dependent
  std::function<int(const Environment&)> query_width_fn;

  /// Component parameter sets in checkpoint order.
  std::vector<std::pair<std::string, ParamsPtr>> params;

  ParamsPtr add_params(const std::string& component) {
    auto p = make_params(name + "." + component);
    params.emplace_back(component, p);
    return p;
  }
  void adopt_params(const std::string& component, ParamsPtr p) {
    params.emplace_back(component, std::move(p));
  }
  ParamsPtr find_params(const std::string& component) const {
    for (const auto& [n, p] : params)
      if (n == component) return p;
    return nullptr;
  }
  int resolve_steps(const Environment& env) const {
    return steps_fn ? steps_fn(env) : steps;
  }
};

using ModuleHandle = std::shared_ptr<ModuleSpec>;

// -- execution trace ---------------------------------------------------------

struct TraceNode;

struct TraceChild {
  std::string name;
  double query_norm = 0.0;
  double output_norm = 0.0;
  std::vector<TraceNode> sub;  // empty, or the nested trace of one call
};

struct TraceGroup {
  std::string label;
  std::vector<std::string> members;
  std::vector<double> weights;
  AttnNorm mode = AttnNorm::Softmax;  // not serialized; guides emission
};

struct TraceStep {
  int t = 1;
  std::vector<double> logits;
  std::vector<TraceGroup> groups;
  std::vector<TraceChild> children;
};

struct TraceNode {
  std::string module;
  int level = 0;
  std::vector<TraceStep> steps;
};

/// Flattened (caller, callee, step) sequence in execution order, including
/// nested calls; used to validate call ordering.
void flatten_calls(const TraceNode& trace,
                   std::vector<std::array<std::string, 2>>& out);

// -- registry ----------------------------------------------------------------

class Registry {
 public:
  ModuleHandle add(ModuleSpec spec);
  ModuleHandle get(const std::string& name) const;
  bool has(const std::string& name) const { return by_name_.count(name) != 0; }
  int max_level() const { return max_level_; }
  const std::vector<ModuleHandle>& modules() const { return order_; }

  void set_trained(const std::string& name, bool t = true);
  bool trained(const std::string& name) const;

 private:
  std::map<std::string, ModuleHandle> by_name_;
  std::vector<ModuleHandle> order_;
  std::set<std::string> trained_;
  int max_level_ = 0;
};

struct ExecOptions {
  bool record_trace = false;
  /// Replace importance scores with zeros (equal weights in every group).
  bool fixed_equal_gating = false;
  /// Modules whose normalization statistics may adapt during this run.
  const std::set<std::string>* training_modules = nullptr;
};

struct ExecResult {
  ModuleOutput out;
  std::optional<TraceNode> trace;
};

/// Run one module against an environment, recursing depth-first through its
/// child list for its full step count. The whole run is recorded on `tape`,
/// so backward() from any scalar of the output reaches every parameter used
/// along the way, including those of frozen children.
ExecResult execute(Registry& reg, const ModuleHandle& module, Var query,
                   const Environment& env, Tape& tape,
                   const ExecOptions& opt = {});

/// Normalized weights followed by the weighted sum of `values`:
/// softmax mode normalizes the logits across the group; sigmoid mode gates
/// each entry independently. Values must share one width.
std::pair<Var, Var> gated_sum(Tape& tape, std::span<const Var> values,
                              Var logits, AttnNorm mode = AttnNorm::Softmax);

/// View handed to module components during execution.
class ExecContext {
 public:
  Tape& tape;
  const Environment& env;
  const ModuleSpec& spec;
  int t = 1;        // current step, 1-based
  int total_steps = 1;

  bool updating_stats() const;
  bool fixed_gating() const { return opt_.fixed_equal_gating; }

  /// Evaluate (once per step) a gating group against the current logits and
  /// scratch pad; returns the gated sum of the group's pad entries.
  Var group_gated_sum(const std::string& label, const ScratchPad& pad);
  /// The group's normalized weights alone.
  Var group_weights(const std::string& label, const ScratchPad& pad);

  Var step_logits;  // current step's importance logits (|children|)

 private:
  friend class Executor;
  ExecContext(Tape& tp, const Environment& e, const ModuleSpec& s,
              const ExecOptions& o)
      : tape(tp), env(e), spec(s), opt_(o) {}

  struct GroupEval {
    Var weights;
    Var sum;
    bool has_sum = false;
  };
  GroupEval& eval_group(const std::string& label, const ScratchPad& pad,
                        bool need_sum);
  void begin_step(int step, Var logits, TraceStep* ts);

  const ExecOptions& opt_;
  TraceStep* trace_step_ = nullptr;
  std::map<std::string, GroupEval> group_cache_;
};

/// L2 norm of a recorded value (diagnostic, not differentiable).
double l2_norm(Var v);

}  // namespace pmn
