#pragma once

#include <string>
#include <vector>

namespace pmn {

/// Command-line driver. Exit codes: 0 success, 1 usage/config error,
/// 2 runtime failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace pmn
