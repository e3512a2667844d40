#include "pmn/tasks.hpp"

#include <cmath>

namespace pmn {

namespace {

/// linear(width) + per-feature normalization + tanh, the receiver shape
/// used to project child outputs into the parent's representation.
struct Receiver {
  Mlp lin;
  AffineNorm norm;

  Receiver() = default;
  Receiver(const std::string& label, size_t in, size_t out, Rng& rng)
      : lin(label + ".lin", {in, out}, {Act::None}, rng),
        norm(label + ".norm", out, rng) {}

  Var operator()(ExecContext& ctx, Var x) const {
    Var h = lin.forward(ctx.tape, x);
    return ctx.tape.tanh_(norm.forward(ctx.tape, h, ctx.updating_stats()));
  }
};

Var mean_features(ExecContext& ctx) {
  size_t n = ctx.env.entity_count();
  std::vector<double> w(n, 1.0 / static_cast<double>(n));
  Var wv = ctx.tape.leaf(std::span<const double>(w), {n});
  return ctx.tape.weighted_sum(ctx.env.feature_rows, wv);
}

Var pooled_features(ExecContext& ctx, Var map_probs) {
  return ctx.tape.weighted_sum(ctx.env.feature_rows, map_probs);
}

void adopt_all(ModuleSpec& spec, const std::string& name, const ParamsPtr& p) {
  spec.adopt_params(name, p);
}

}  // namespace

// -- level 0: object / attribute terminals -------------------------------------

static ModuleHandle build_entity_terminal(TaskGraph& g, const std::string& name,
                                          int label_count, Rng& rng) {
  const auto& cfg = g.cfg;
  size_t d = static_cast<size_t>(cfg.feature_width());
  size_t p = static_cast<size_t>(cfg.penultimate);

  Mlp body(name + ".body", {d, p}, {Act::Tanh}, rng);
  auto head = make_params(name + ".head");
  head->add("W", {static_cast<size_t>(label_count), p}, rng);
  head->add_const("b", {static_cast<size_t>(label_count)}, 0.0);

  ModuleSpec spec;
  spec.name = name;
  spec.level = 0;
  spec.kind = ModuleKind::Terminal;
  spec.query_width = static_cast<int>(d);
  spec.terminal = [body](ExecContext& ctx, Var q) -> ModuleOutput {
    return {body.forward(ctx.tape, q)};
  };
  adopt_all(spec, "body", body.params());
  adopt_all(spec, "head", head);
  return g.registry.add(std::move(spec));
}

// -- level 1: relationship ------------------------------------------------------

static ModuleHandle build_relationship(TaskGraph& g, Rng& rng) {
  const auto& cfg = g.cfg;
  size_t d = static_cast<size_t>(cfg.feature_width());
  size_t h = static_cast<size_t>(cfg.hidden);
  size_t p = static_cast<size_t>(cfg.penultimate);
  size_t k = static_cast<size_t>(cfg.scene.relations);

  auto init_p = make_params("rel.I");
  init_p->add("Wr", {h, k}, rng);
  init_p->add_const("br", {h}, 0.0);
  Mlp delta("rel.delta", {2, h}, {Act::Tanh}, rng);

  bool use_obj = true, use_att = true;  // the composed relationship module
  size_t concat_w = d + h + (use_obj ? p : 0) + (use_att ? p : 0);
  auto update_p = make_params("rel.U");
  update_p->add("Wu", {h, concat_w}, rng);
  update_p->add_const("bu", {h}, 0.0);
  SoftAttention out_attn("rel.Psi", h, h, static_cast<size_t>(cfg.attn),
                         AttnNorm::None, rng);

  ModuleSpec spec;
  spec.name = "rel";
  spec.level = 1;
  spec.kind = ModuleKind::Compositional;
  spec.query_width_fn = [k](const Environment& env) {
    return static_cast<int>(env.entity_count() + k);
  };
  spec.steps_fn = [](const Environment& env) {
    return static_cast<int>(env.entity_count());
  };

  spec.init = [init_p, k](ExecContext& ctx, Var q) -> ModuleState {
    size_t n = ctx.env.entity_count();
    Var r = ctx.tape.slice(q, n, k);
    Var s = ctx.tape.tanh_(ctx.tape.add(
        ctx.tape.matmul(init_p->var(ctx.tape, "Wr"), r), init_p->var(ctx.tape, "br")));
    return {{s}};
  };

  // The t-th step reads the t-th entity; children act as feature extractors.
  auto row_query = [](ExecContext& ctx, const ModuleState&, const ScratchPad&,
                      Var) -> Var {
    return ctx.env.feature_rows[static_cast<size_t>(ctx.t - 1)];
  };
  auto identity_recv = [](ExecContext&, const ModuleState&, const ModuleOutput& o) {
    return o.value;
  };

  ChildSlot obj_slot{"obj", false, nullptr, row_query, identity_recv};
  ChildSlot att_slot{"att", false, nullptr, row_query, identity_recv};
  ChildSlot delta_slot{
      "delta", true,
      [delta](ExecContext& ctx, Var q) -> ModuleOutput {
        return {delta.forward(ctx.tape, q)};
      },
      [](ExecContext& ctx, const ModuleState&, const ScratchPad&, Var) -> Var {
        const auto& pos = ctx.env.positions[static_cast<size_t>(ctx.t - 1)];
        double xy[2] = {pos[0], pos[1]};
        return ctx.tape.leaf(std::span<const double>(xy, 2), {2});
      },
      identity_recv};
  spec.children = {obj_slot, att_slot, delta_slot};

  spec.update = [update_p](ExecContext& ctx, const ModuleState&,
                           const ScratchPad& pad, Var) -> ModuleState {
    std::vector<Var> parts;
    parts.push_back(ctx.env.feature_rows[static_cast<size_t>(ctx.t - 1)]);
    for (size_t i = 0; i < pad.size(); ++i) parts.push_back(pad.value(i));
    Var cat = ctx.tape.concat(parts);
    Var s = ctx.tape.tanh_(ctx.tape.add(
        ctx.tape.matmul(update_p->var(ctx.tape, "Wu"), cat),
        update_p->var(ctx.tape, "bu")));
    return {{s}};
  };

  spec.predict = [out_attn](ExecContext& ctx, std::span<const ModuleState> states,
                            Var q) -> ModuleOutput {
    size_t n = ctx.env.entity_count();
    Var b = ctx.tape.slice(q, 0, n);
    std::vector<Var> entity_states;
    for (size_t i = 1; i <= n; ++i) entity_states.push_back(states[i].at(0));
    Var anchored = ctx.tape.weighted_sum(entity_states, b);
    Var key = ctx.tape.mul(states[0].at(0), anchored);
    Var scores = out_attn.score(ctx.tape, key, entity_states);
    return {scores};
  };

  adopt_all(spec, "I", init_p);
  adopt_all(spec, "delta", delta.params());
  adopt_all(spec, "U", update_p);
  adopt_all(spec, "Psi", out_attn.params());
  return g.registry.add(std::move(spec));
}

// -- level 1: caption generator --------------------------------------------------

static ModuleHandle build_caption(TaskGraph& g, Rng& rng) {
  const auto& cfg = g.cfg;
  size_t d = static_cast<size_t>(cfg.feature_width());
  size_t h = static_cast<size_t>(cfg.hidden);
  size_t e = static_cast<size_t>(cfg.embed);
  size_t p = static_cast<size_t>(cfg.penultimate);
  size_t w = g.vocab.size();

  SoftAttention omega("cap.omega", h, d, static_cast<size_t>(cfg.attn),
                      AttnNorm::Softmax, rng);
  Mlp delta("cap.delta", {d, h}, {Act::Tanh}, rng);
  Receiver r_obj("cap.R<-obj", p, h, rng);
  Receiver r_att("cap.R<-att", p, h, rng);
  Receiver r_delta("cap.R<-delta", h, h, rng);
  GruCell gru1("cap.gru1", d + e + h, h, rng);
  GruCell gru2("cap.gru2", h + h, h, rng);
  Embedding feed("cap.feed", w, e, rng);
  auto psi = make_params("cap.Psi");
  psi->add("W", {w, h}, rng);
  psi->add_const("b", {w}, 0.0);
  auto gate = make_params("cap.G");

  ModuleSpec spec;
  spec.name = "cap";
  spec.level = 1;
  spec.kind = ModuleKind::Compositional;
  spec.steps = cfg.cap_steps;
  spec.query_width = static_cast<int>(h);  // zero vector by convention

  int bos = g.vocab.bos();
  spec.init = [h, w, feed, bos](ExecContext& ctx, Var) -> ModuleState {
    Var h1 = ctx.tape.zeros(h);
    Var h2 = ctx.tape.zeros(h);
    Var wf = feed.lookup(ctx.tape, static_cast<size_t>(bos));
    Var logits = ctx.tape.zeros(w);
    return {{h1, h2, wf, logits}};
  };

  std::vector<size_t> knowledge;
  size_t idx = 0;
  // child order: omega, obj, att, delta
  spec.children.push_back(
      {"omega", true,
       [omega](ExecContext& ctx, Var q) -> ModuleOutput {
         return {omega.score_rows(ctx.tape, q, ctx.env.features)};
       },
       [](ExecContext& ctx, const ModuleState& s, const ScratchPad&, Var) {
         (void)ctx;
         return s.at(0);
       },
       [](ExecContext&, const ModuleState&, const ModuleOutput& o) {
         return o.value;
       }});
  ++idx;

  auto pooled_query = [](ExecContext& ctx, const ModuleState&,
                         const ScratchPad& pad, Var) -> Var {
    auto map = pad.find("omega");
    if (!map) throw ValueError("cap: attention map missing from scratch pad");
    return pooled_features(ctx, *map);
  };
  spec.children.push_back(
      {"obj", false, nullptr, pooled_query,
       [r_obj](ExecContext& ctx, const ModuleState&, const ModuleOutput& o) {
         return r_obj(ctx, o.value);
       }});
  knowledge.push_back(idx++);
  spec.children.push_back(
      {"att", false, nullptr, pooled_query,
       [r_att](ExecContext& ctx, const ModuleState&, const ModuleOutput& o) {
         return r_att(ctx, o.value);
       }});
  knowledge.push_back(idx++);
  spec.children.push_back(
      {"delta", true,
       [delta](ExecContext& ctx, Var q) -> ModuleOutput {
         return {delta.forward(ctx.tape, q)};
       },
       pooled_query,
       [r_delta](ExecContext& ctx, const ModuleState&, const ModuleOutput& o) {
         return r_delta(ctx, o.value);
       }});
  knowledge.push_back(idx++);

  gate->add("W", {spec.children.size(), h}, rng);
  gate->add_const("b", {spec.children.size()}, 0.0);
  spec.importance = [gate](ExecContext& ctx, const ModuleState& s) -> Var {
    return ctx.tape.add(ctx.tape.matmul(gate->var(ctx.tape, "W"), s.at(0)),
                        gate->var(ctx.tape, "b"));
  };
  spec.groups = {{"knowledge", knowledge, AttnNorm::Softmax}};

  spec.update = [gru1, gru2, feed, psi](ExecContext& ctx, const ModuleState& s,
                                        const ScratchPad& pad, Var) -> ModuleState {
    Var xmean = mean_features(ctx);
    Var in1 = ctx.tape.concat(xmean, s.at(2), s.at(1));
    Var h1 = gru1.step(ctx.tape, in1, s.at(0));
    Var rho = ctx.group_gated_sum("knowledge", pad);
    Var h2 = gru2.step(ctx.tape, ctx.tape.concat(h1, rho), s.at(1));
    Var logits = ctx.tape.add(ctx.tape.matmul(psi->var(ctx.tape, "W"), h2),
                              psi->var(ctx.tape, "b"));
    Var wf;
    if (ctx.env.teacher_tokens != nullptr) {
      int tok = (*ctx.env.teacher_tokens)[static_cast<size_t>(ctx.t - 1)];
      wf = feed.lookup(ctx.tape, static_cast<size_t>(tok));
    } else {
      // Free-running: feed back the expected embedding of the step's
      // softmaxed word distribution.
      Var probs = ctx.tape.softmax(logits);
      Var pm = ctx.tape.stack_rows(std::span<const Var>(&probs, 1));
      Var wrow = ctx.tape.matmul(pm, feed.table(ctx.tape));
      wf = ctx.tape.row(wrow, 0);
    }
    return {{h1, h2, wf, logits}};
  };

  spec.predict = [](ExecContext& ctx, std::span<const ModuleState> states,
                    Var) -> ModuleOutput {
    std::vector<Var> rows;
    for (size_t t = 1; t < states.size(); ++t)
      rows.push_back(ctx.tape.softmax(states[t].at(3)));
    Var seq = ctx.tape.stack_rows(rows);
    return {seq, static_cast<int>(rows.size())};
  };

  adopt_all(spec, "omega", omega.params());
  adopt_all(spec, "G", gate);
  adopt_all(spec, "delta", delta.params());
  adopt_all(spec, "R<-obj.lin", r_obj.lin.params());
  adopt_all(spec, "R<-obj.norm", r_obj.norm.params());
  adopt_all(spec, "R<-att.lin", r_att.lin.params());
  adopt_all(spec, "R<-att.norm", r_att.norm.params());
  adopt_all(spec, "R<-delta.lin", r_delta.lin.params());
  adopt_all(spec, "R<-delta.norm", r_delta.norm.params());
  adopt_all(spec, "gru1", gru1.params());
  adopt_all(spec, "gru2", gru2.params());
  adopt_all(spec, "feed", feed.params());
  adopt_all(spec, "Psi", psi);
  return g.registry.add(std::move(spec));
}

// -- level 2: counting ------------------------------------------------------------

static ModuleHandle build_counting(TaskGraph& g, Rng& rng_in) {
  const auto& cfg = g.cfg;
  auto comp_rng = [&](uint64_t tag) { return rng_in.split(tag); };
  size_t d = static_cast<size_t>(cfg.feature_width());
  size_t h = static_cast<size_t>(cfg.hidden);
  size_t e = static_cast<size_t>(cfg.embed);
  size_t p = static_cast<size_t>(cfg.penultimate);
  size_t k = static_cast<size_t>(cfg.scene.relations);
  size_t attn = static_cast<size_t>(cfg.attn);
  int bins = cfg.count_bins;
  size_t counts = static_cast<size_t>(cfg.count_max) + 1;
  const Composition& comp = cfg.cnt_children;

  TaskGraph::Encoder enc{[&]{ Rng r = comp_rng(1); return Embedding("cnt.encoder.emb", g.vocab.size(), e, r); }(),
                         [&]{ Rng r = comp_rng(2); return GruCell("cnt.encoder.gru", e, h, r); }()};
  g.encoders.emplace(Task::Cnt, enc);

  SoftAttention omega = [&]{ Rng r = comp_rng(3); return SoftAttention("cnt.omega", h, d, attn, AttnNorm::None, r); }();
  SoftAttention rel_box = [&]{ Rng r = comp_rng(4); return SoftAttention("cnt.Q->rel.b", h, d, attn, AttnNorm::Softmax, r); }();
  Mlp rel_kind = [&]{ Rng r = comp_rng(5); return Mlp("cnt.Q->rel.r", {h, k}, {Act::None}, r); }();
  auto rel_recv = make_params("cnt.R<-rel");
  rel_recv->add_const("a", {}, 1.0);
  rel_recv->add_const("c", {}, 0.0);
  Receiver r_obj = [&]{ Rng r = comp_rng(6); return Receiver("cnt.R<-obj", p, h, r); }();
  Receiver r_att = [&]{ Rng r = comp_rng(7); return Receiver("cnt.R<-att", p, h, r); }();
  // Refinement scorer starts as an exact no-op: its output layer is zeroed,
  // so enabling obj/att leaves the module's function unchanged at init while
  // gradients reach the scorer from the first batch.
  SoftAttention refine = [&]{ Rng r = comp_rng(8); return SoftAttention("cnt.refine", h, d, attn, AttnNorm::None, r); }();
  (*refine.params())["wz"].values().assign(attn, 0.0);
  (*refine.params())["bz"].values().assign(1, 0.0);
  Mlp psi = [&] {
    Rng r = comp_rng(9);
    return Mlp("cnt.Psi",
               {static_cast<size_t>(bins) + 2,
                static_cast<size_t>(cfg.count_hidden), counts},
               {Act::Relu, Act::None}, r);
  }();
  auto gate = make_params("cnt.G");

  // Raw-score views for the optional query-supervision loss.
  g.cnt_rel_box_raw = SoftAttention(rel_box.params(), h, d, attn, AttnNorm::None);
  g.cnt_rel_kind = rel_kind;

  ModuleSpec spec;
  spec.name = "cnt";
  spec.level = 2;
  spec.kind = ModuleKind::Compositional;
  spec.steps = 1;
  spec.query_width = static_cast<int>(h);

  spec.init = [](ExecContext&, Var q) -> ModuleState { return {{q}}; };

  std::vector<size_t> maps_group, knowledge_group;
  size_t idx = 0;
  spec.children.push_back(
      {"omega", true,
       [omega](ExecContext& ctx, Var q) -> ModuleOutput {
         return {omega.score_rows(ctx.tape, q, ctx.env.features)};
       },
       [](ExecContext&, const ModuleState& s, const ScratchPad&, Var) {
         return s.at(0);
       },
       [](ExecContext&, const ModuleState&, const ModuleOutput& o) {
         return o.value;
       }});
  maps_group.push_back(idx++);

  auto omega_pooled_query = [](ExecContext& ctx, const ModuleState&,
                               const ScratchPad& pad, Var) -> Var {
    auto map = pad.find("omega");
    if (!map) throw ValueError("cnt: attention scores missing from scratch pad");
    return pooled_features(ctx, ctx.tape.softmax(*map));
  };
  if (comp.obj) {
    spec.children.push_back(
        {"obj", false, nullptr, omega_pooled_query,
         [r_obj](ExecContext& ctx, const ModuleState&, const ModuleOutput& o) {
           return r_obj(ctx, o.value);
         }});
    knowledge_group.push_back(idx++);
  }
  if (comp.att) {
    spec.children.push_back(
        {"att", false, nullptr, omega_pooled_query,
         [r_att](ExecContext& ctx, const ModuleState&, const ModuleOutput& o) {
           return r_att(ctx, o.value);
         }});
    knowledge_group.push_back(idx++);
  }
  if (comp.rel) {
    spec.children.push_back(
        {"rel", false, nullptr,
         [rel_box, rel_kind](ExecContext& ctx, const ModuleState& s,
                             const ScratchPad&, Var) -> Var {
           Var b = rel_box.score_rows(ctx.tape, s.at(0), ctx.env.features);
           Var r = ctx.tape.softmax(rel_kind.forward(ctx.tape, s.at(0)));
           return ctx.tape.concat(b, r);
         },
         [rel_recv](ExecContext& ctx, const ModuleState&, const ModuleOutput& o) {
           size_t n = o.value.size();
           Var a = ctx.tape.expand(rel_recv->var(ctx.tape, "a"), n);
           Var c = ctx.tape.expand(rel_recv->var(ctx.tape, "c"), n);
           return ctx.tape.add(ctx.tape.mul(a, o.value), c);
         }});
    maps_group.push_back(idx++);
  }

  {
    Rng r = comp_rng(10);
    gate->add("W", {spec.children.size(), h}, r);
    gate->add_const("b", {spec.children.size()}, 0.0);
  }
  spec.importance = [gate](ExecContext& ctx, const ModuleState& s) -> Var {
    return ctx.tape.add(ctx.tape.matmul(gate->var(ctx.tape, "W"), s.at(0)),
                        gate->var(ctx.tape, "b"));
  };
  spec.groups = {{"maps", maps_group, AttnNorm::Softmax}};
  bool has_knowledge = !knowledge_group.empty();
  if (has_knowledge)
    spec.groups.push_back({"knowledge", knowledge_group, AttnNorm::Softmax});

  spec.update = [refine, has_knowledge](ExecContext& ctx, const ModuleState&,
                                        const ScratchPad& pad,
                                        Var) -> ModuleState {
    Var s_map = ctx.group_gated_sum("maps", pad);
    if (!has_knowledge) return {{s_map}};
    // A second attention pass keyed by what was seen sharpens the map.
    Var know = ctx.group_gated_sum("knowledge", pad);
    Var adj = refine.score_rows(ctx.tape, know, ctx.env.features);
    return {{ctx.tape.add(s_map, adj)}};
  };

  spec.predict = [psi, bins](ExecContext& ctx,
                             std::span<const ModuleState> states,
                             Var) -> ModuleOutput {
    Var scores = states.back().at(0);
    Var mass = ctx.tape.sigmoid(scores);
    Var total = ctx.tape.scale(ctx.tape.sum(mass), 0.25);
    std::vector<Var> feats;
    feats.push_back(total);
    double width = 1.0 / bins;
    for (int j = 0; j < bins; ++j) {
      double center = (j + 0.5) * width;
      Var dsc = ctx.tape.scale(ctx.tape.add_scalar(mass, -center), 1.0 / width);
      Var bump = ctx.tape.exp_(ctx.tape.scale(ctx.tape.mul(dsc, dsc), -1.0));
      feats.push_back(ctx.tape.scale(ctx.tape.sum(bump), 0.25));
    }
    // Soft maximum of the per-entity masses.
    Var peak = ctx.tape.dot(mass, ctx.tape.softmax(ctx.tape.scale(scores, 4.0)));
    feats.push_back(peak);
    Var logits = psi.forward(ctx.tape, ctx.tape.concat(feats));
    return {ctx.tape.softmax(logits)};
  };

  adopt_all(spec, "encoder.emb", enc.emb.params());
  adopt_all(spec, "encoder.gru", enc.gru.params());
  adopt_all(spec, "omega", omega.params());
  adopt_all(spec, "G", gate);
  adopt_all(spec, "Q->rel.b", rel_box.params());
  adopt_all(spec, "Q->rel.r", rel_kind.params());
  adopt_all(spec, "R<-rel", rel_recv);
  if (comp.obj) {
    adopt_all(spec, "R<-obj.lin", r_obj.lin.params());
    adopt_all(spec, "R<-obj.norm", r_obj.norm.params());
  }
  if (comp.att) {
    adopt_all(spec, "R<-att.lin", r_att.lin.params());
    adopt_all(spec, "R<-att.norm", r_att.norm.params());
  }
  if (has_knowledge) adopt_all(spec, "refine", refine.params());
  adopt_all(spec, "Psi", psi.params());
  return g.registry.add(std::move(spec));
}

// -- level 3: question answering ---------------------------------------------------

static ModuleHandle build_qa(TaskGraph& g, Rng& rng) {
  const auto& cfg = g.cfg;
  size_t d = static_cast<size_t>(cfg.feature_width());
  size_t h = static_cast<size_t>(cfg.hidden);
  size_t e = static_cast<size_t>(cfg.embed);
  size_t p = static_cast<size_t>(cfg.penultimate);
  size_t k = static_cast<size_t>(cfg.scene.relations);
  size_t attn = static_cast<size_t>(cfg.attn);
  size_t counts = static_cast<size_t>(cfg.count_max) + 1;
  size_t answers = g.answers.size();
  const Composition& comp = cfg.qa_children;
  bool share = cfg.share_qa_cnt_wiring;

  TaskGraph::Encoder enc{Embedding("qa.encoder.emb", g.vocab.size(), e, rng),
                         GruCell("qa.encoder.gru", e, h, rng)};
  g.encoders.emplace(Task::Qa, enc);

  GruCell gru("qa.gru", h, h, rng);
  ModuleHandle cnt = g.handles.at(Task::Cnt);

  SoftAttention omega =
      share ? SoftAttention(cnt->find_params("omega"), h, d, attn, AttnNorm::Softmax)
            : SoftAttention("qa.omega", h, d, attn, AttnNorm::Softmax, rng);
  SoftAttention rel_box =
      share ? SoftAttention(cnt->find_params("Q->rel.b"), h, d, attn, AttnNorm::Softmax)
            : SoftAttention("qa.Q->rel.b", h, d, attn, AttnNorm::Softmax, rng);
  Mlp rel_kind = share ? g.cnt_rel_kind
                       : Mlp("qa.Q->rel.r", {h, k}, {Act::None}, rng);
  Mlp delta("qa.delta", {d, h}, {Act::Tanh}, rng);
  Receiver r_obj("qa.R<-obj", p, h, rng);
  Receiver r_att("qa.R<-att", p, h, rng);
  Receiver r_delta("qa.R<-delta", h, h, rng);
  Receiver r_cnt("qa.R<-cnt", counts, h, rng);
  Embedding cap_emb("qa.R<-cap.emb", g.vocab.size(), e, rng);
  SoftAttention cap_attn("qa.R<-cap.attn", h, e, attn, AttnNorm::Softmax, rng);
  Receiver r_cap("qa.R<-cap.proj", e, h, rng);
  GatedTanh fuse("qa.Psi.fuse", h + h, h, rng);
  auto psi = make_params("qa.Psi.out");
  psi->add("W", {answers, h}, rng);
  psi->add_const("b", {answers}, 0.0);
  auto gate = make_params("qa.G");

  ModuleSpec spec;
  spec.name = "qa";
  spec.level = 3;
  spec.kind = ModuleKind::Compositional;
  spec.steps = cfg.qa_steps;
  spec.query_width = static_cast<int>(h);

  spec.init = [gru, h](ExecContext& ctx, Var q) -> ModuleState {
    Var q1 = gru.step(ctx.tape, q, gru.zero_state(ctx.tape));
    return {{q1, ctx.tape.zeros(h)}};
  };

  std::vector<size_t> attention_group, answer_group;
  size_t idx = 0;
  spec.children.push_back(
      {"omega", true,
       [omega](ExecContext& ctx, Var q) -> ModuleOutput {
         return {omega.score_rows(ctx.tape, q, ctx.env.features)};
       },
       [](ExecContext&, const ModuleState& s, const ScratchPad&, Var) {
         return s.at(0);
       },
       [](ExecContext&, const ModuleState&, const ModuleOutput& o) {
         return o.value;
       }});
  attention_group.push_back(idx++);

  if (comp.rel) {
    spec.children.push_back(
        {"rel", false, nullptr,
         [rel_box, rel_kind](ExecContext& ctx, const ModuleState& s,
                             const ScratchPad&, Var) -> Var {
           Var b = rel_box.score_rows(ctx.tape, s.at(0), ctx.env.features);
           Var r = ctx.tape.softmax(rel_kind.forward(ctx.tape, s.at(0)));
           return ctx.tape.concat(b, r);
         },
         [](ExecContext& ctx, const ModuleState&, const ModuleOutput& o) {
           return ctx.tape.softmax(o.value);
         }});
    attention_group.push_back(idx++);
  }

  auto joint_pooled_query = [](ExecContext& ctx, const ModuleState&,
                               const ScratchPad& pad, Var) -> Var {
    Var m = ctx.group_gated_sum("attention", pad);
    return pooled_features(ctx, m);
  };
  if (comp.obj) {
    spec.children.push_back(
        {"obj", false, nullptr, joint_pooled_query,
         [r_obj](ExecContext& ctx, const ModuleState&, const ModuleOutput& o) {
           return r_obj(ctx, o.value);
         }});
    answer_group.push_back(idx++);
  }
  if (comp.att) {
    spec.children.push_back(
        {"att", false, nullptr, joint_pooled_query,
         [r_att](ExecContext& ctx, const ModuleState&, const ModuleOutput& o) {
           return r_att(ctx, o.value);
         }});
    answer_group.push_back(idx++);
  }
  spec.children.push_back(
      {"delta", true,
       [delta](ExecContext& ctx, Var q) -> ModuleOutput {
         return {delta.forward(ctx.tape, q)};
       },
       joint_pooled_query,
       [r_delta](ExecContext& ctx, const ModuleState&, const ModuleOutput& o) {
         return r_delta(ctx, o.value);
       }});
  answer_group.push_back(idx++);

  if (comp.cnt) {
    spec.children.push_back(
        {"cnt", false, nullptr,
         [](ExecContext&, const ModuleState& s, const ScratchPad&, Var) {
           return s.at(0);
         },
         [r_cnt](ExecContext& ctx, const ModuleState&, const ModuleOutput& o) {
           return r_cnt(ctx, o.value);
         }});
    answer_group.push_back(idx++);
  }
  if (comp.cap) {
    spec.children.push_back(
        {"cap", false, nullptr,
         [h](ExecContext& ctx, const ModuleState&, const ScratchPad&, Var) {
           return ctx.tape.zeros(h);
         },
         [cap_emb, cap_attn, r_cap](ExecContext& ctx, const ModuleState& s,
                                    const ModuleOutput& o) -> Var {
           // Attend over the words of the generated description.
           Var words = ctx.tape.matmul(o.value, cap_emb.table(ctx.tape));
           int len = o.length > 0 ? o.length : static_cast<int>(words.rows());
           std::vector<Var> items;
           for (int t = 0; t < len; ++t)
             items.push_back(ctx.tape.row(words, static_cast<size_t>(t)));
           Var pw = cap_attn.score(ctx.tape, s.at(0), items);
           Var sent = ctx.tape.weighted_sum(items, pw);
           return r_cap(ctx, sent);
         }});
    answer_group.push_back(idx++);
  }

  gate->add("W", {spec.children.size(), h}, rng);
  gate->add_const("b", {spec.children.size()}, 0.0);
  spec.importance = [gate](ExecContext& ctx, const ModuleState& s) -> Var {
    return ctx.tape.add(ctx.tape.matmul(gate->var(ctx.tape, "W"), s.at(0)),
                        gate->var(ctx.tape, "b"));
  };
  spec.groups = {{"attention", attention_group, AttnNorm::Softmax},
                 {"answer", answer_group, AttnNorm::Softmax}};

  spec.update = [gru](ExecContext& ctx, const ModuleState& s,
                      const ScratchPad& pad, Var) -> ModuleState {
    Var know = ctx.group_gated_sum("answer", pad);
    Var q_next = gru.step(ctx.tape, know, s.at(0));
    return {{q_next, know}};
  };

  spec.predict = [fuse, psi](ExecContext& ctx, std::span<const ModuleState> states,
                             Var q) -> ModuleOutput {
    Var sum;
    for (size_t t = 1; t < states.size(); ++t) {
      Var fused = fuse.forward(ctx.tape, ctx.tape.concat(q, states[t].at(1)));
      Var logits = ctx.tape.add(ctx.tape.matmul(psi->var(ctx.tape, "W"), fused),
                                psi->var(ctx.tape, "b"));
      sum = (t == 1) ? logits : ctx.tape.add(sum, logits);
    }
    return {sum};
  };

  adopt_all(spec, "encoder.emb", enc.emb.params());
  adopt_all(spec, "encoder.gru", enc.gru.params());
  adopt_all(spec, "gru", gru.params());
  adopt_all(spec, "G", gate);
  adopt_all(spec, "omega", omega.params());
  adopt_all(spec, "Q->rel.b", rel_box.params());
  adopt_all(spec, "Q->rel.r", rel_kind.params());
  adopt_all(spec, "delta", delta.params());
  adopt_all(spec, "R<-obj.lin", r_obj.lin.params());
  adopt_all(spec, "R<-obj.norm", r_obj.norm.params());
  adopt_all(spec, "R<-att.lin", r_att.lin.params());
  adopt_all(spec, "R<-att.norm", r_att.norm.params());
  adopt_all(spec, "R<-delta.lin", r_delta.lin.params());
  adopt_all(spec, "R<-delta.norm", r_delta.norm.params());
  if (comp.cnt) {
    adopt_all(spec, "R<-cnt.lin", r_cnt.lin.params());
    adopt_all(spec, "R<-cnt.norm", r_cnt.norm.params());
  }
  if (comp.cap) {
    adopt_all(spec, "R<-cap.emb", cap_emb.params());
    adopt_all(spec, "R<-cap.attn", cap_attn.params());
    adopt_all(spec, "R<-cap.proj.lin", r_cap.lin.params());
    adopt_all(spec, "R<-cap.proj.norm", r_cap.norm.params());
  }
  adopt_all(spec, "Psi.fuse", fuse.params());
  adopt_all(spec, "Psi.out", psi);
  return g.registry.add(std::move(spec));
}

// -- graph assembly -----------------------------------------------------------------

TaskGraph build_task_graph(const TaskGraphConfig& cfg) {
  cfg.scene.validate();
  TaskGraph g;
  g.cfg = cfg;
  g.vocab = Vocab(cfg.scene);
  g.answers = AnswerSpace(cfg.scene, cfg.count_max);

  Rng rng(cfg.seed);
  Rng r_obj = rng.split(1), r_att = rng.split(2), r_rel = rng.split(3),
      r_cap = rng.split(4), r_cnt = rng.split(5), r_qa = rng.split(6);

  g.handles[Task::Obj] = build_entity_terminal(g, "obj", cfg.scene.categories, r_obj);
  g.obj_head = g.handles[Task::Obj]->find_params("head");
  g.handles[Task::Att] = build_entity_terminal(g, "att", cfg.scene.attributes, r_att);
  g.att_head = g.handles[Task::Att]->find_params("head");
  g.handles[Task::Rel] = build_relationship(g, r_rel);
  g.handles[Task::Cap] = build_caption(g, r_cap);
  g.handles[Task::Cnt] = build_counting(g, r_cnt);
  g.handles[Task::Qa] = build_qa(g, r_qa);
  return g;
}

Var TaskGraph::encode_question(Tape& tape, Task task,
                               std::span<const int> tokens) const {
  auto it = encoders.find(task);
  if (it == encoders.end())
    throw ValueError(std::string("no question encoder for task ") + task_name(task));
  const Encoder& enc = it->second;
  Var hcur = enc.gru.zero_state(tape);
  for (int tok : tokens)
    hcur = enc.gru.step(tape, enc.emb.lookup(tape, static_cast<size_t>(tok)), hcur);
  return hcur;
}

Var TaskGraph::make_query(Tape& tape, const Environment& env,
                          const Question& q) const {
  switch (q.task) {
    case Task::Obj:
    case Task::Att: {
      if (q.arg_slot < 0 || static_cast<size_t>(q.arg_slot) >= env.entity_count())
        throw ValueError("query: entity slot out of range for this scene");
      return env.feature_rows[static_cast<size_t>(q.arg_slot)];
    }
    case Task::Rel: {
      size_t n = env.entity_count();
      size_t k = static_cast<size_t>(cfg.scene.relations);
      std::vector<double> v(n + k, 0.0);
      v[static_cast<size_t>(q.arg_slot)] = 1.0;
      v[n + static_cast<size_t>(q.arg_rel)] = 1.0;
      return tape.leaf(std::span<const double>(v), {n + k});
    }
    case Task::Cnt:
    case Task::Qa:
      return encode_question(tape, q.task, q.tokens);
    case Task::Cap:
      return tape.zeros(static_cast<size_t>(cfg.hidden));
  }
  throw ValueError("query: bad task");
}

Environment TaskGraph::environment_for(Tape& tape, const Scene& scene,
                                       double sigma) const {
  RenderedScene r = render_env(scene, sigma, cfg.scene);
  return make_environment(tape, r.features, std::move(r.positions));
}

int TaskGraph::answer_space_size(Task t) const {
  switch (t) {
    case Task::Obj: return cfg.scene.categories;
    case Task::Att: return cfg.scene.attributes;
    case Task::Rel: return cfg.scene.max_entities;
    case Task::Cnt: return cfg.count_max + 1;
    case Task::Cap: return static_cast<int>(vocab.size());
    case Task::Qa: return static_cast<int>(answers.size());
  }
  throw ValueError("bad task");
}

std::vector<CheckpointSection> checkpoint_sections(const TaskGraph& g, Task t) {
  const ModuleHandle& m = g.handles.at(t);
  std::vector<CheckpointSection> out;
  for (const auto& [name, pset] : m->params) out.push_back({name, pset});
  return out;
}

std::vector<Task> required_children(const TaskGraph& g, Task t) {
  std::set<std::string> needed;
  std::vector<std::string> frontier{task_name(t)};
  while (!frontier.empty()) {
    std::string cur = frontier.back();
    frontier.pop_back();
    for (const auto& slot : g.registry.get(cur)->children) {
      if (slot.owned) continue;
      if (needed.insert(slot.name).second) frontier.push_back(slot.name);
    }
  }
  std::vector<Task> out;
  for (const auto& h : g.registry.modules())
    if (needed.count(h->name)) out.push_back(task_from_name(h->name));
  return out;
}

TaskGraphConfig tiny_task_config(uint64_t seed) {
  TaskGraphConfig cfg;
  cfg.scene = SceneParams{.categories = 3, .attributes = 3, .relations = 4,
                          .max_entities = 4, .min_entities = 3, .grid = 3,
                          .cat_width = 8, .att_width = 6, .pos_width = 8,
                          .render_seed = 77};
  cfg.sigma = 0.05;
  cfg.hidden = 12;
  cfg.embed = 8;
  cfg.penultimate = 10;
  cfg.attn = 8;
  cfg.count_hidden = 10;
  cfg.count_bins = 4;
  cfg.cap_steps = 4;
  cfg.qa_steps = 2;
  cfg.seed = seed;
  return cfg;
}

}  // namespace pmn
