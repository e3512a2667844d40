#pragma once

#include <functional>
#include <span>
#include <string>

#include "pmn/params.hpp"

namespace pmn {

/// A differentiable scalar function of the current values of some tensors.
/// The callable must rebuild its computation from scratch on the given tape
/// (reading the tensors' current values), so it can be re-evaluated under
/// coordinate perturbations.
using ScalarFn = std::function<Var(Tape&)>;

struct GradCheckOptions {
  double eps = 1e-5;
  /// Cap on checked coordinates per tensor (0 = all). Sampling is
  /// deterministic in `seed`.
  size_t max_coords_per_tensor = 0;
  uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_point;  // "name[i]"
  size_t coords_checked = 0;
};

/// Central-difference check of reverse-mode gradients at the tensors'
/// current values: max over checked coordinates of
/// |analytic - numeric| / max(1, |numeric|).
/// Throws ValueError on a non-finite value, naming the coordinate.
GradCheckReport grad_check(const ScalarFn& f,
                           std::span<Tensor* const> points,
                           std::span<const std::string> names,
                           const GradCheckOptions& opt = {});

/// Single-point form.
double grad_check(const ScalarFn& f, Tensor& point, double eps = 1e-5);

/// Check every trainable entry of a ParameterSet.
GradCheckReport grad_check(const ScalarFn& f, ParameterSet& params,
                           const GradCheckOptions& opt = {});

}  // namespace pmn
