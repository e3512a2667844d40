#include "pmn/trace_io.hpp"

#include <cstdlib>

#include "pmn/jsonw.hpp"
#include <json.hpp>

namespace pmn {

namespace {

// Weights print at 9 significant digits. For normalized groups the last
// entry is chosen so that the printed values still sum to one within far
// better than the rounding budget of the whole group.
JVal weights_json(const TraceGroup& g) {
  JVal weights = JVal::arr();
  if (g.mode != AttnNorm::Softmax || g.weights.size() < 2) {
    for (double w : g.weights) weights.push(JVal::number(w, 9));
    return weights;
  }
  double printed_sum = 0.0;
  for (size_t i = 0; i + 1 < g.weights.size(); ++i) {
    std::string s = JVal::fmt_double(g.weights[i], 9);
    printed_sum += std::strtod(s.c_str(), nullptr);
    weights.push(JVal::number(g.weights[i], 9));
  }
  weights.push(JVal::number(1.0 - printed_sum, 9));
  return weights;
}

JVal trace_to_json(const TraceNode& node) {
  JVal steps = JVal::arr();
  for (const auto& s : node.steps) {
    JVal logits = JVal::arr();
    for (double v : s.logits) logits.push(JVal::number(v, 17));
    JVal groups = JVal::arr();
    for (const auto& g : s.groups) {
      JVal members = JVal::arr();
      for (const auto& m : g.members) members.push(JVal::str(m));
      groups.push(JVal::obj()
                      .set("members", std::move(members))
                      .set("weights", weights_json(g)));
    }
    JVal children = JVal::arr();
    for (const auto& c : s.children) {
      JVal jc = JVal::obj()
                    .set("name", JVal::str(c.name))
                    .set("query_norm", JVal::number(c.query_norm, 17))
                    .set("output_norm", JVal::number(c.output_norm, 17));
      if (!c.sub.empty()) jc.set("trace", trace_to_json(c.sub.front()));
      children.push(std::move(jc));
    }
    steps.push(JVal::obj()
                   .set("t", JVal::integer(s.t))
                   .set("logits", std::move(logits))
                   .set("groups", std::move(groups))
                   .set("children", std::move(children)));
  }
  return JVal::obj()
      .set("module", JVal::str(node.module))
      .set("level", JVal::integer(node.level))
      .set("steps", std::move(steps));
}

TraceNode trace_from_json(const nlohmann::json& j) {
  TraceNode node;
  node.module = j.at("module").get<std::string>();
  node.level = j.at("level").get<int>();
  for (const auto& js : j.at("steps")) {
    TraceStep step;
    step.t = js.at("t").get<int>();
    for (const auto& v : js.at("logits")) step.logits.push_back(v.get<double>());
    for (const auto& jg : js.at("groups")) {
      TraceGroup g;
      for (const auto& m : jg.at("members")) g.members.push_back(m.get<std::string>());
      for (const auto& w : jg.at("weights")) g.weights.push_back(w.get<double>());
      step.groups.push_back(std::move(g));
    }
    for (const auto& jc : js.at("children")) {
      TraceChild c;
      c.name = jc.at("name").get<std::string>();
      c.query_norm = jc.at("query_norm").get<double>();
      c.output_norm = jc.at("output_norm").get<double>();
      if (jc.contains("trace")) c.sub.push_back(trace_from_json(jc.at("trace")));
      step.children.push_back(std::move(c));
    }
    node.steps.push_back(std::move(step));
  }
  return node;
}

}  // namespace

std::string export_trace(const TraceNode& trace) {
  return trace_to_json(trace).dump();
}

TraceNode parse_trace(const std::string& text) {
  auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw IoError("trace: malformed document");
  try {
    return trace_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("trace: ") + e.what());
  }
}

}  // namespace pmn
