#pragma once

#include <amoclust/autodiff/tensor.hpp>

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace amoclust::ad {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  bool pass = true;
};

using ScalarFn = std::function<Tensor(const Tensor&)>;

/// Compares the reverse-mode gradient of `f` at `x` with central differences.
/// Relative error per entry is |a - n| / max(|a|, |n|, 1e-8); passes iff the
/// largest one is within `tol`. `analytic_override`, when non-empty, replaces
/// the computed gradient (used to inject faults in tests).
inline GradCheckReport finite_difference_check(const ScalarFn& f, const Tensor& x, double step, double tol,
                                               const std::vector<double>& analytic_override = {}) {
  if (!(step > 0)) throw std::invalid_argument("finite_difference_check: step must be positive");
  Tensor leaf = Tensor::from(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
  std::vector<double> analytic;
  {
    Tensor y = f(leaf);
    if (y.numel() != 1) throw ShapeError("finite_difference_check: f must return a scalar");
    if (y.requires_grad()) backward(y);
    analytic = leaf.has_grad() ? std::vector<double>(leaf.grad().begin(), leaf.grad().end())
                               : std::vector<double>(leaf.numel(), 0.0);
  }
  if (!analytic_override.empty()) analytic = analytic_override;

  GradCheckReport rep;
  NoGradGuard no_grad;
  std::vector<double> probe(x.data().begin(), x.data().end());
  auto eval_at = [&](std::size_t i, double v) {
    const double saved = probe[i];
    probe[i] = v;
    const double out = f(Tensor::from(x.shape(), probe)).item();
    probe[i] = saved;
    if (!std::isfinite(out)) {
      throw std::domain_error("finite_difference_check: f is not finite at probe index " + std::to_string(i));
    }
    return out;
  };
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double xi = probe[i];
    const double numeric = (eval_at(i, xi + step) - eval_at(i, xi - step)) / (2.0 * step);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double rel = std::abs(a - numeric) / denom;
    if (i == 0 || rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_index = i;
      rep.analytic_at_worst = a;
      rep.numeric_at_worst = numeric;
    }
  }
  rep.pass = rep.max_rel_err <= tol;
  return rep;
}

}  // namespace amoclust::ad
