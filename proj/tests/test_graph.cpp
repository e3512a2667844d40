#include <doctest.h>

#include <cmath>

#include "pmn/gradcheck.hpp"
#include "pmn/graph.hpp"
#include "pmn/trace_io.hpp"
#include "reference_calls.hpp"

using namespace pmn;

namespace {

constexpr size_t kW = 4;  // probe value width

Environment probe_env(Tape& tape) {
  Tensor X = Tensor::mat(2, kW, {0.1, 0.2, 0.3, 0.4, -0.1, -0.2, -0.3, -0.4});
  return make_environment(tape, X, {{0.2, 0.3}, {0.7, 0.8}});
}

ModuleSpec probe_terminal(const std::string& name, double gain = 2.0) {
  ModuleSpec spec;
  spec.name = name;
  spec.level = 0;
  spec.kind = ModuleKind::Terminal;
  spec.query_width = kW;
  spec.terminal = [gain](ExecContext& ctx, Var q) -> ModuleOutput {
    return {ctx.tape.scale(q, gain)};
  };
  return spec;
}

/// Pass-through compositional module: state = query, every child sees the
/// state, the update keeps the last received value, the prediction returns
/// the final state.
ModuleSpec probe_module(const std::string& name, int level,
                        const std::vector<std::string>& children, int steps) {
  ModuleSpec spec;
  spec.name = name;
  spec.level = level;
  spec.kind = ModuleKind::Compositional;
  spec.steps = steps;
  spec.query_width = kW;
  spec.init = [](ExecContext&, Var q) -> ModuleState { return {{q}}; };
  for (const auto& c : children)
    spec.children.push_back(
        {c, false, nullptr,
         [](ExecContext&, const ModuleState& s, const ScratchPad&, Var) {
           return s.at(0);
         },
         [](ExecContext&, const ModuleState&, const ModuleOutput& o) {
           return o.value;
         }});
  spec.update = [](ExecContext&, const ModuleState& s, const ScratchPad& pad,
                   Var) -> ModuleState {
    return {{pad.size() ? pad.value(pad.size() - 1) : s.at(0)}};
  };
  spec.predict = [](ExecContext&, std::span<const ModuleState> states,
                    Var) -> ModuleOutput {
    return {states.back().at(0)};
  };
  return spec;
}

}  // namespace

TEST_CASE("registration rules") {
  Registry reg;
  reg.add(probe_terminal("t0"));

  SUBCASE("terminal with children is rejected") {
    ModuleSpec bad = probe_terminal("t1");
    bad.children.push_back({"t0", false, nullptr,
                            [](ExecContext&, const ModuleState& s, const ScratchPad&, Var) {
                              return s.at(0);
                            },
                            [](ExecContext&, const ModuleState&, const ModuleOutput& o) {
                              return o.value;
                            }});
    CHECK_THROWS_AS(reg.add(std::move(bad)), LevelViolation);
  }
  SUBCASE("terminals live at level 0") {
    ModuleSpec bad = probe_terminal("t1");
    bad.level = 1;
    CHECK_THROWS_AS(reg.add(std::move(bad)), LevelViolation);
  }
  SUBCASE("duplicate names are rejected") {
    CHECK_THROWS_AS(reg.add(probe_terminal("t0")), ValueError);
  }
  SUBCASE("a child at the parent's level is a level violation") {
    reg.add(probe_module("m1", 1, {"t0"}, 1));
    CHECK_THROWS_AS(reg.add(probe_module("m2", 1, {"m1"}, 1)), LevelViolation);
  }
  SUBCASE("unregistered children are rejected") {
    CHECK_THROWS_AS(reg.add(probe_module("m1", 1, {"ghost"}, 1)), ValueError);
  }
}

TEST_CASE("single-child pass-through module equals the child exactly") {
  Registry reg;
  reg.add(probe_terminal("leaf", 3.0));
  auto top = reg.add(probe_module("top", 1, {"leaf"}, 1));

  Tape tape;
  Environment env = probe_env(tape);
  Var q = tape.leaf(Tensor::vec({0.4, -0.2, 1.0, 0.7}));
  auto res = execute(reg, top, q, env, tape);
  auto direct = execute(reg, reg.get("leaf"), q, env, tape);
  auto a = res.out.value.val(), b = direct.out.value.val();
  for (size_t i = 0; i < kW; ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("four-module graph runs depth-first in list order") {
  Registry reg;
  reg.add(probe_terminal("m0"));
  reg.add(probe_module("m1", 1, {"m0"}, 1));
  reg.add(probe_module("m2", 2, {"m0", "m1"}, 1));
  auto m3 = reg.add(probe_module("m3", 3, {"m1", "m2"}, 1));

  Tape tape;
  Environment env = probe_env(tape);
  ExecOptions opt;
  opt.record_trace = true;
  auto res = execute(reg, m3, tape.leaf(Tensor::vec({1, 2, 3, 4})), env, tape, opt);
  REQUIRE(res.trace.has_value());

  std::vector<std::array<std::string, 2>> got;
  flatten_calls(*res.trace, got);
  std::vector<std::array<std::string, 2>> want;
  pmn_test::reference_calls(reg, "m3", env, want);
  CHECK(got == want);

  // Expected sequence spelled out: m3 calls m1 (which calls m0), then m2
  // (which calls m0 then m1, which calls m0 again).
  std::vector<std::array<std::string, 2>> spelled = {
      {"m3", "m1"}, {"m1", "m0"}, {"m3", "m2"}, {"m2", "m0"},
      {"m2", "m1"}, {"m1", "m0"}};
  CHECK(got == spelled);
  CHECK(pmn_test::reference_depth(reg, "m3") == 3);
}

TEST_CASE("trace records |L|*T direct child calls in order") {
  Registry reg;
  reg.add(probe_terminal("a"));
  reg.add(probe_terminal("b"));
  reg.add(probe_terminal("c"));
  auto top = reg.add(probe_module("top", 1, {"a", "b", "c"}, 4));

  Tape tape;
  Environment env = probe_env(tape);
  ExecOptions opt;
  opt.record_trace = true;
  auto res = execute(reg, top, tape.leaf(Tensor::vec({1, 2, 3, 4})), env, tape, opt);

  size_t direct = 0;
  for (const auto& step : res.trace->steps) direct += step.children.size();
  CHECK(direct == 3 * 4);
  for (const auto& step : res.trace->steps) {
    REQUIRE(step.children.size() == 3);
    CHECK(step.children[0].name == "a");
    CHECK(step.children[1].name == "b");
    CHECK(step.children[2].name == "c");
  }
}

TEST_CASE("scratch pad is wiped at every step") {
  Registry reg;
  reg.add(probe_terminal("a"));
  reg.add(probe_terminal("b"));
  ModuleSpec spec = probe_module("top", 1, {"a", "b"}, 3);
  std::vector<size_t> pad_sizes_at_query;
  std::vector<size_t> pad_sizes_at_update;
  size_t child_index = 0;
  for (auto& slot : spec.children) {
    slot.query = [&pad_sizes_at_query, child_index](
                     ExecContext&, const ModuleState& s, const ScratchPad& pad,
                     Var) {
      pad_sizes_at_query.push_back(pad.size());
      return s.at(0);
    };
    ++child_index;
  }
  spec.update = [&pad_sizes_at_update](ExecContext&, const ModuleState& s,
                                       const ScratchPad& pad, Var) -> ModuleState {
    pad_sizes_at_update.push_back(pad.size());
    (void)s;
    return {{pad.value(0)}};
  };
  auto top = reg.add(std::move(spec));

  Tape tape;
  Environment env = probe_env(tape);
  execute(reg, top, tape.leaf(Tensor::vec({1, 2, 3, 4})), env, tape);
  CHECK(pad_sizes_at_query == std::vector<size_t>{0, 1, 0, 1, 0, 1});
  CHECK(pad_sizes_at_update == std::vector<size_t>{2, 2, 2});
}

TEST_CASE("well-formed graphs stay inside the registered depth ceiling") {
  Registry reg;
  reg.add(probe_terminal("t"));
  auto top = reg.add(probe_module("top", 1, {"t"}, 1));
  Tape tape;
  Environment env = probe_env(tape);
  CHECK_NOTHROW(execute(reg, top, tape.leaf(Tensor::vec({1, 2, 3, 4})), env, tape));
}

TEST_CASE("gated_sum: equal logits average the group") {
  Tape tape;
  Var v1 = tape.leaf(Tensor::vec({1, 2}));
  Var v2 = tape.leaf(Tensor::vec({3, 4}));
  Var v3 = tape.leaf(Tensor::vec({5, 6}));
  Var v4 = tape.leaf(Tensor::vec({7, 8}));
  Var values[4] = {v1, v2, v3, v4};
  auto [w, s] = gated_sum(tape, values, tape.zeros(4));
  for (double wi : w.val()) CHECK(wi == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(s.val()[0] == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(s.val()[1] == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("gated_sum saturates under a dominant logit") {
  Tape tape;
  Var v1 = tape.leaf(Tensor::vec({1, 0}));
  Var v2 = tape.leaf(Tensor::vec({0, 1}));
  Var v3 = tape.leaf(Tensor::vec({-1, -1}));
  Var values[3] = {v1, v2, v3};
  auto [w, s] = gated_sum(tape, values, tape.leaf(Tensor::vec({100, 0, 0})));
  CHECK(w.val()[0] >= 1.0 - 1e-40);
  CHECK(s.val()[0] == doctest::Approx(1.0).epsilon(1e-40));
  CHECK(std::fabs(s.val()[1]) < 1e-40);
}

TEST_CASE("two-group gating matches a straight-line evaluation") {
  Rng rng(21);
  size_t n = 5, width = 6;
  std::vector<Tensor> vals;
  for (size_t i = 0; i < n; ++i) {
    Tensor t(std::vector<size_t>{width});
    for (size_t j = 0; j < width; ++j) t[j] = rng.uniform(-1, 1);
    vals.push_back(t);
  }
  Tensor logits(std::vector<size_t>{n});
  for (size_t i = 0; i < n; ++i) logits[i] = rng.uniform(-2, 2);

  auto straight = [&](std::vector<size_t> members) {
    double mx = -1e300;
    for (size_t m : members) mx = std::max(mx, logits[m]);
    double denom = 0;
    for (size_t m : members) denom += std::exp(logits[m] - mx);
    std::vector<double> out(width, 0.0);
    for (size_t m : members) {
      double w = std::exp(logits[m] - mx) / denom;
      for (size_t j = 0; j < width; ++j) out[j] += w * vals[m][j];
    }
    return out;
  };

  Tape tape;
  std::vector<Var> vvars;
  for (const auto& t : vals) vvars.push_back(tape.leaf(t));
  for (auto members : {std::vector<size_t>{0, 1}, std::vector<size_t>{2, 3, 4}}) {
    std::vector<Var> group_vals;
    std::vector<Var> group_logits;
    Var lv = tape.leaf(logits);
    for (size_t m : members) {
      group_vals.push_back(vvars[m]);
      group_logits.push_back(tape.pick(lv, m));
    }
    auto [w, s] = gated_sum(tape, group_vals, tape.concat(group_logits));
    auto want = straight(members);
    auto got = s.val();
    for (size_t j = 0; j < width; ++j)
      CHECK(got[j] == doctest::Approx(want[j]).epsilon(1e-12));
    double wsum = 0;
    for (double x : w.val()) wsum += x;
    CHECK(std::fabs(wsum - 1.0) < 1e-12);
  }
}

TEST_CASE("gated_sum is invariant to a constant shift of its logits") {
  Rng rng(22);
  Tape tape;
  std::vector<Var> values;
  for (int i = 0; i < 4; ++i) {
    Tensor t(std::vector<size_t>{3});
    for (size_t j = 0; j < 3; ++j) t[j] = rng.uniform(-1, 1);
    values.push_back(tape.leaf(t));
  }
  Tensor raw(std::vector<size_t>{4});
  for (size_t i = 0; i < 4; ++i) raw[i] = rng.uniform(-2, 2);
  Tensor shifted = raw;
  for (size_t i = 0; i < 4; ++i) shifted[i] += 13.5;
  auto [w1, s1] = gated_sum(tape, values, tape.leaf(raw));
  auto [w2, s2] = gated_sum(tape, values, tape.leaf(shifted));
  for (size_t j = 0; j < 3; ++j)
    CHECK(std::fabs(s1.val()[j] - s2.val()[j]) < 1e-9);
}

TEST_CASE("gated_sum rejects empty and ragged groups") {
  Tape tape;
  CHECK_THROWS_AS(gated_sum(tape, {}, tape.zeros(0)), ValueError);
  Var a = tape.leaf(Tensor::vec({1, 2}));
  Var b = tape.leaf(Tensor::vec({1, 2, 3}));
  Var values[2] = {a, b};
  CHECK_THROWS_AS(gated_sum(tape, values, tape.zeros(2)), ShapeError);
}

TEST_CASE("fixed-equal gating zeroes the logits") {
  Registry reg;
  reg.add(probe_terminal("a"));
  ModuleSpec spec = probe_module("top", 1, {"a"}, 2);
  spec.importance = [](ExecContext& ctx, const ModuleState&) -> Var {
    return ctx.tape.leaf(Tensor::vec({7.0}));
  };
  auto top = reg.add(std::move(spec));

  Tape tape;
  Environment env = probe_env(tape);
  ExecOptions opt;
  opt.record_trace = true;
  auto learned = execute(reg, top, tape.leaf(Tensor::vec({1, 2, 3, 4})), env, tape, opt);
  CHECK(learned.trace->steps[0].logits == std::vector<double>{7.0});
  opt.fixed_equal_gating = true;
  auto fixed = execute(reg, top, tape.leaf(Tensor::vec({1, 2, 3, 4})), env, tape, opt);
  CHECK(fixed.trace->steps[0].logits == std::vector<double>{0.0});
}

TEST_CASE("trace export round-trips byte-identically") {
  Registry reg;
  reg.add(probe_terminal("a"));
  reg.add(probe_terminal("b"));
  ModuleSpec spec = probe_module("top", 1, {"a", "b"}, 2);
  Rng rng(30);
  auto gate = make_params("top.G");
  gate->add("W", {2, kW}, rng);
  spec.importance = [gate](ExecContext& ctx, const ModuleState& s) -> Var {
    return ctx.tape.matmul(gate->var(ctx.tape, "W"), s.at(0));
  };
  spec.groups = {{"all", {0, 1}, AttnNorm::Softmax}};
  spec.update = [](ExecContext& ctx, const ModuleState&, const ScratchPad& pad,
                   Var) -> ModuleState {
    return {{ctx.group_gated_sum("all", pad)}};
  };
  auto top = reg.add(std::move(spec));

  Tape tape;
  Environment env = probe_env(tape);
  ExecOptions opt;
  opt.record_trace = true;
  auto res = execute(reg, top, tape.leaf(Tensor::vec({0.3, -0.7, 0.9, 0.1})), env,
                     tape, opt);

  std::string doc = export_trace(*res.trace);
  TraceNode parsed = parse_trace(doc);
  CHECK(export_trace(parsed) == doc);

  std::vector<std::array<std::string, 2>> a, b;
  flatten_calls(*res.trace, a);
  flatten_calls(parsed, b);
  CHECK(a == b);

  for (const auto& step : parsed.steps)
    for (const auto& grp : step.groups) {
      double sum = 0;
      for (double w : grp.weights) sum += w;
      CHECK(std::fabs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("three-level graph with learned components passes a gradient check") {
  constexpr size_t kW = 8;  // wider than the probe width: ~1k parameters
  Rng rng(31);
  Registry reg;

  Mlp leaf_net("leaf", {kW, kW}, {Act::Tanh}, rng);
  ModuleSpec leaf;
  leaf.name = "leaf";
  leaf.level = 0;
  leaf.kind = ModuleKind::Terminal;
  leaf.query_width = kW;
  leaf.terminal = [leaf_net](ExecContext& ctx, Var q) -> ModuleOutput {
    return {leaf_net.forward(ctx.tape, q)};
  };
  leaf.adopt_params("net", leaf_net.params());
  reg.add(std::move(leaf));

  auto add_learned = [&](const std::string& name, int level,
                         std::vector<std::string> children, int steps) {
    ModuleSpec spec;
    spec.name = name;
    spec.level = level;
    spec.kind = ModuleKind::Compositional;
    spec.steps = steps;
    spec.query_width = kW;
    Mlp init_net(name + ".I", {kW, kW}, {Act::Tanh}, rng);
    spec.init = [init_net](ExecContext& ctx, Var q) -> ModuleState {
      return {{init_net.forward(ctx.tape, q)}};
    };
    spec.adopt_params("I", init_net.params());
    auto gate = make_params(name + ".G");
    gate->add("W", {children.size(), kW}, rng);
    spec.importance = [gate](ExecContext& ctx, const ModuleState& s) -> Var {
      return ctx.tape.matmul(gate->var(ctx.tape, "W"), s.at(0));
    };
    spec.adopt_params("G", gate);
    std::vector<size_t> all;
    for (size_t i = 0; i < children.size(); ++i) {
      all.push_back(i);
      Mlp qnet(name + ".Q" + std::to_string(i), {kW, kW}, {Act::Tanh}, rng);
      Mlp rnet(name + ".R" + std::to_string(i), {kW, kW}, {Act::Tanh}, rng);
      spec.children.push_back(
          {children[i], false, nullptr,
           [qnet](ExecContext& ctx, const ModuleState& s, const ScratchPad&, Var) {
             return qnet.forward(ctx.tape, s.at(0));
           },
           [rnet](ExecContext& ctx, const ModuleState&, const ModuleOutput& o) {
             return rnet.forward(ctx.tape, o.value);
           }});
      spec.adopt_params("Q" + std::to_string(i), qnet.params());
      spec.adopt_params("R" + std::to_string(i), rnet.params());
    }
    spec.groups = {{"all", all, AttnNorm::Softmax}};
    Mlp unet(name + ".U", {2 * kW, kW}, {Act::Tanh}, rng);
    spec.update = [unet](ExecContext& ctx, const ModuleState& s, const ScratchPad& pad,
                         Var) -> ModuleState {
      Var summed = ctx.group_gated_sum("all", pad);
      return {{unet.forward(ctx.tape, ctx.tape.concat(s.at(0), summed))}};
    };
    spec.adopt_params("U", unet.params());
    Mlp pnet(name + ".Psi", {kW, kW}, {Act::None}, rng);
    spec.predict = [pnet](ExecContext& ctx, std::span<const ModuleState> states,
                          Var) -> ModuleOutput {
      return {pnet.forward(ctx.tape, states.back().at(0))};
    };
    spec.adopt_params("Psi", pnet.params());
    return reg.add(std::move(spec));
  };

  add_learned("mid", 1, {"leaf"}, 2);
  auto top = add_learned("top", 2, {"leaf", "mid"}, 2);

  size_t total_params = 0;
  std::vector<Tensor*> points;
  std::vector<std::string> names;
  for (const auto& h : reg.modules())
    for (const auto& [comp, pset] : h->params)
      for (auto& e : pset->entries()) {
        total_params += e.value.size();
        points.push_back(&e.value);
        names.push_back(pset->label() + "." + e.name);
      }
  CHECK(total_params > 900);  // on the order of 1k learned scalars

  Tensor qin(std::vector<size_t>{kW});
  Rng qrng(77);
  for (size_t i = 0; i < kW; ++i) qin[i] = qrng.uniform(-1, 1);
  ScalarFn f = [&](Tape& tape) -> Var {
    Tensor X(std::vector<size_t>{2, kW});
    for (size_t i = 0; i < X.size(); ++i) X[i] = 0.05 * static_cast<double>(i);
    Environment env = make_environment(tape, X, {{0.2, 0.3}, {0.7, 0.8}});
    auto res = execute(reg, top, tape.leaf(qin), env, tape);
    return tape.sum(tape.tanh_(res.out.value));
  };
  GradCheckOptions opt;
  opt.max_coords_per_tensor = 6;
  opt.seed = 5;
  auto rep = grad_check(f, points, names, opt);
  CHECK(rep.max_rel_err < 1e-4);
}
