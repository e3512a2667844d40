#include "pmn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace pmn {

GradCheckReport grad_check(const ScalarFn& f, std::span<Tensor* const> points,
                           std::span<const std::string> names,
                           const GradCheckOptions& opt) {
  Tape tape;
  for (size_t p = 0; p < points.size(); ++p) points[p]->zero_grad();

  // Analytic pass. The function is responsible for watching its inputs.
  Var loss = f(tape);
  double base = loss.scalar();
  if (!std::isfinite(base)) throw ValueError("grad_check: non-finite loss");
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(points.size());
  for (Tensor* t : points)
    analytic.push_back(t->has_grad() ? t->grad() : std::vector<double>(t->size(), 0.0));

  GradCheckReport rep;
  Rng pick(opt.seed);
  for (size_t p = 0; p < points.size(); ++p) {
    Tensor& t = *points[p];
    std::string label = p < names.size() ? names[p] : ("point" + std::to_string(p));
    std::vector<size_t> coords;
    if (opt.max_coords_per_tensor == 0 || t.size() <= opt.max_coords_per_tensor) {
      coords.resize(t.size());
      for (size_t i = 0; i < t.size(); ++i) coords[i] = i;
    } else {
      for (size_t i = 0; i < opt.max_coords_per_tensor; ++i)
        coords.push_back(pick.below(t.size()));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }
    for (size_t i : coords) {
      double saved = t[i];
      t[i] = saved + opt.eps;
      tape.reset();
      double fp = f(tape).scalar();
      t[i] = saved - opt.eps;
      tape.reset();
      double fm = f(tape).scalar();
      t[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw ValueError(strformat("grad_check: non-finite value at %s[%zu]",
                                   label.c_str(), i));
      double numeric = (fp - fm) / (2.0 * opt.eps);
      double err = std::fabs(analytic[p][i] - numeric) /
                   std::max(1.0, std::fabs(numeric));
      ++rep.coords_checked;
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.worst_point = strformat("%s[%zu]", label.c_str(), i);
      }
    }
  }
  return rep;
}

double grad_check(const ScalarFn& f, Tensor& point, double eps) {
  Tensor* pts[1] = {&point};
  std::string names[1] = {"point"};
  GradCheckOptions opt;
  opt.eps = eps;
  return grad_check(f, pts, names, opt).max_rel_err;
}

GradCheckReport grad_check(const ScalarFn& f, ParameterSet& params,
                           const GradCheckOptions& opt) {
  std::vector<Tensor*> pts;
  std::vector<std::string> names;
  for (auto& e : params.entries()) {
    if (!e.trainable || e.statistic) continue;
    pts.push_back(&e.value);
    names.push_back(params.label() + "." + e.name);
  }
  return grad_check(f, pts, names, opt);
}

}  // namespace pmn
