#pragma once

#include <string>

#include "pmn/graph.hpp"

namespace pmn {

/// Serialize a recorded trace. Key order is fixed; group weights are
/// printed with 9 significant digits, scores and norms at full precision.
std::string export_trace(const TraceNode& trace);

/// Inverse of export_trace (group labels are not part of the document).
TraceNode parse_trace(const std::string& text);

}  // namespace pmn
