#pragma once

#include <amoclust/autodiff/tensor.hpp>

#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace amoclust {

using ad::Tensor;

struct Schedule {
  long steps = 1000;
  long warmup_steps = 50;
  double peak_lr = 1e-3;
};

/// Linear warmup 0 -> peak over warmup_steps, then half-cosine to 0 at steps.
inline double lr_at(long step, const Schedule& s) {
  if (s.steps <= 0 || s.warmup_steps < 0 || s.warmup_steps > s.steps || !(s.peak_lr > 0)) {
    throw std::invalid_argument("lr_at: invalid schedule");
  }
  if (step < 0 || step > s.steps) throw std::out_of_range("lr_at: step " + std::to_string(step) + " out of range");
  if (step < s.warmup_steps) return s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  if (s.steps == s.warmup_steps) return s.peak_lr;
  const double progress =
      static_cast<double>(step - s.warmup_steps) / static_cast<double>(s.steps - s.warmup_steps);
  return 0.5 * s.peak_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Parameter handles in a fixed visiting order.
using ParamRefs = std::vector<Tensor*>;
/// One flat buffer per parameter, same order as ParamRefs.
using GradSet = std::vector<std::vector<double>>;

template <class Params>
ParamRefs param_refs(Params& p) {
  ParamRefs out;
  p.visit([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

template <class Params>
std::vector<std::string> param_names(Params& p) {
  std::vector<std::string> out;
  p.visit([&](const std::string& name, Tensor&) { out.push_back(name); });
  return out;
}

/// Copy whose tensors are fresh leaves with the same values, so a graph built
/// on it accumulates gradients privately.
template <class Params>
Params clone_leaves(const Params& p) {
  Params q = p;
  q.visit([](const std::string&, Tensor& t) {
    t = Tensor::from(t.shape(), std::vector<double>(t.data().begin(), t.data().end()), t.requires_grad());
  });
  return q;
}

inline GradSet zero_grads(const ParamRefs& ps) {
  GradSet g;
  g.reserve(ps.size());
  for (const Tensor* t : ps) g.emplace_back(t->numel(), 0.0);
  return g;
}

/// Leaf gradients after backward (zeros where absent).
inline GradSet collect_grads(const ParamRefs& ps) {
  GradSet g = zero_grads(ps);
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (ps[i]->has_grad()) g[i].assign(ps[i]->grad().begin(), ps[i]->grad().end());
  return g;
}

inline double global_norm(const GradSet& g) {
  double s = 0;
  for (const auto& v : g)
    for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// Rescales to `max_norm` when above it; returns the norm before clipping.
inline double clip_global_norm(GradSet& g, double max_norm) {
  const double n = global_norm(g);
  if (max_norm > 0 && n > max_norm) {
    const double c = max_norm / n;
    for (auto& v : g)
      for (double& x : v) x *= c;
  }
  return n;
}

/// Adam with decoupled weight decay. Decay applies to tensors of rank >= 2
/// (weight matrices) and is applied as p *= 1 - lr * wd before the moment step.
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  AdamW() = default;
  explicit AdamW(double wd) : weight_decay(wd) {}

  long step_count() const { return t_; }
  const GradSet& first_moment() const { return m_; }
  const GradSet& second_moment() const { return v_; }

  void step(const ParamRefs& params, const GradSet& grads, double lr) {
    if (grads.size() != params.size()) throw std::invalid_argument("AdamW: gradient count differs from parameters");
    if (m_.empty()) {
      m_ = zero_grads(params);
      v_ = zero_grads(params);
    }
    if (m_.size() != params.size()) throw std::invalid_argument("AdamW: parameter set changed between steps");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto p = params[i]->mutable_data();
      const auto& g = grads[i];
      if (g.size() != p.size() || m_[i].size() != p.size()) {
        throw std::invalid_argument("AdamW: shape mismatch for parameter " + std::to_string(i));
      }
      const bool decay = params[i]->rank() >= 2 && weight_decay != 0.0;
      const double shrink = 1.0 - lr * weight_decay;
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        if (decay) p[j] *= shrink;
        m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
        v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
        p[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps);
      }
    }
  }

 private:
  long t_ = 0;
  GradSet m_, v_;
};

}  // namespace amoclust
