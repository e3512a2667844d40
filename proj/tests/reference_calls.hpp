#pragma once

// Test-side oracle: the expected depth-first call sequence of a module
// graph, enumerated directly from each module's ordered child list and
// step count, independently of the executor.

#include <array>
#include <string>
#include <vector>

#include "pmn/graph.hpp"

namespace pmn_test {

inline void reference_calls(const pmn::Registry& reg, const std::string& name,
                            const pmn::Environment& env,
                            std::vector<std::array<std::string, 2>>& out) {
  auto m = reg.get(name);
  if (m->kind == pmn::ModuleKind::Terminal) return;
  int steps = m->resolve_steps(env);
  for (int t = 1; t <= steps; ++t)
    for (const auto& slot : m->children) {
      out.push_back({name, slot.name});
      if (!slot.owned) reference_calls(reg, slot.name, env, out);
    }
}

inline size_t reference_depth(const pmn::Registry& reg, const std::string& name) {
  auto m = reg.get(name);
  size_t best = 0;
  for (const auto& slot : m->children)
    if (!slot.owned)
      best = std::max(best, 1 + reference_depth(reg, slot.name));
    else
      best = std::max(best, size_t{1});
  return best;
}

}  // namespace pmn_test
