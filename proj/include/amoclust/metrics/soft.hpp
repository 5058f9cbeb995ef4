#pragma once

// Differentiable partition-agreement losses built on the soft confusion
// matrix M = P^T Z.

#include <amoclust/autodiff/tensor.hpp>
#include <amoclust/metrics/partition.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace amoclust {

using ad::Tensor;

/// Logits and row-stochastic probabilities, both N x K.
struct SoftPartition {
  Tensor logits;
  Tensor probs;

  std::size_t n() const { return probs.dim(0); }
  std::size_t k() const { return probs.dim(1); }

  /// Partition whose logits are log P (valid since log_softmax(log P) = log P).
  static SoftPartition from_probs(const Tensor& p) { return {ad::log(p), p}; }
  static SoftPartition from_logits(const Tensor& l) { return {l, ad::softmax(l)}; }

  std::vector<int> argmax() const {
    std::vector<int> out(n());
    const std::size_t kk = k();
    auto v = probs.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<int>(std::max_element(v.begin() + static_cast<std::ptrdiff_t>(i * kk),
                                                 v.begin() + static_cast<std::ptrdiff_t>((i + 1) * kk)) -
                                (v.begin() + static_cast<std::ptrdiff_t>(i * kk)));
    }
    return out;
  }
};

/// Constant N x K one-hot matrix of labels.
inline Tensor one_hot(std::span<const int> z, int k) {
  std::vector<double> v(z.size() * static_cast<std::size_t>(k), 0.0);
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (z[i] < 0 || z[i] >= k) {
      throw std::out_of_range("one_hot: label " + std::to_string(z[i]) + " outside [0," + std::to_string(k) + ")");
    }
    v[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(z[i])] = 1.0;
  }
  return Tensor::from({z.size(), static_cast<std::size_t>(k)}, std::move(v));
}

inline int label_count(std::span<const int> z) {
  int k = 0;
  for (int v : z) k = std::max(k, v + 1);
  return k;
}

struct ConfusionMatrix {
  Tensor m;  // K_pred x K_true, m(k,l) = sum_i P_ik Z_il
  std::vector<double> row_sums;
  std::vector<double> col_sums;
  double total = 0;
};

inline ConfusionMatrix soft_confusion(const Tensor& probs, std::span<const int> z, int k_true) {
  if (z.size() != probs.dim(0)) throw std::invalid_argument("soft_confusion: label count differs from rows of P");
  ConfusionMatrix c;
  c.m = ad::matmul(ad::transpose(probs), one_hot(z, k_true));
  const std::size_t kp = c.m.dim(0), kt = c.m.dim(1);
  c.row_sums.assign(kp, 0.0);
  c.col_sums.assign(kt, 0.0);
  for (std::size_t a = 0; a < kp; ++a)
    for (std::size_t b = 0; b < kt; ++b) {
      const double v = c.m.at(a, b);
      c.row_sums[a] += v;
      c.col_sums[b] += v;
      c.total += v;
    }
  return c;
}

inline ConfusionMatrix soft_confusion(const SoftPartition& p, std::span<const int> z, int k_true) {
  return soft_confusion(p.probs, z, k_true);
}

namespace detail {

inline Tensor comb2(const Tensor& x) { return ad::scale(ad::mul(x, x) - x, 0.5); }

inline Tensor col_sums(const Tensor& m) { return ad::sum_last(ad::transpose(m)); }

}  // namespace detail

/// Adjusted Rand index on soft counts with C(x,2) = x(x-1)/2. Returns a
/// constant 0 when the chance-corrected denominator is below 1e-8.
inline Tensor soft_ari(const SoftPartition& p, std::span<const int> z) {
  const std::size_t n = p.n();
  if (n < 2) throw std::invalid_argument("soft_ari: need N >= 2");
  const int kt = std::max(label_count(z), 1);
  const Tensor m = soft_confusion(p, z, kt).m;
  const Tensor index = ad::sum(detail::comb2(m));
  const Tensor a = ad::sum(detail::comb2(ad::sum_last(m)));
  const Tensor b = ad::sum(detail::comb2(detail::col_sums(m)));
  const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  const Tensor expected = ad::scale(a * b, 1.0 / pairs);
  const Tensor maximum = ad::scale(a + b, 0.5);
  const Tensor denom = maximum - expected;
  if (std::abs(denom.item()) < 1e-8) return Tensor::scalar(0.0);
  return (index - expected) / denom;
}

/// Arithmetic-mean-normalized mutual information on the soft joint M / N.
inline Tensor soft_nmi(const SoftPartition& p, std::span<const int> z) {
  const std::size_t n = p.n();
  if (n < 2) throw std::invalid_argument("soft_nmi: need N >= 2");
  const int kt = std::max(label_count(z), 1);
  const Tensor joint = ad::scale(soft_confusion(p, z, kt).m, 1.0 / static_cast<double>(n));
  const Tensor pk = ad::sum_last(joint);              // K_pred x 1
  const Tensor pj = detail::col_sums(joint);          // K_true x 1
  const Tensor log_joint = ad::log(joint);
  const Tensor log_pk = ad::log(pk);
  const Tensor log_pj = ad::transpose(ad::log(pj));   // 1 x K_true
  const Tensor pmi = (log_joint - log_pk) - log_pj;   // broadcasts
  const Tensor mi = ad::sum(joint * pmi);
  const Tensor hk = -ad::sum(pk * log_pk);
  const Tensor hj = -ad::sum(pj * ad::log(pj));
  const Tensor hsum = hk + hj;
  if (hsum.item() < 1e-12) return Tensor::scalar(0.0);
  return ad::scale(mi, 2.0) / hsum;
}

namespace detail {

inline Tensor pad_square(const Tensor& m) {
  const std::size_t r = m.dim(0), c = m.dim(1);
  if (r == c) return m;
  if (r < c) return ad::concat({m, Tensor::zeros({c - r, c})}, 0);
  return ad::concat({m, Tensor::zeros({r, r - c})}, 1);
}

inline std::vector<std::vector<double>> to_rows(const Tensor& m) {
  std::vector<std::vector<double>> out(m.dim(0), std::vector<double>(m.dim(1)));
  for (std::size_t i = 0; i < m.dim(0); ++i)
    for (std::size_t j = 0; j < m.dim(1); ++j) out[i][j] = m.at(i, j);
  return out;
}

}  // namespace detail

/// Hungarian matching on the (stop-gradient) confusion matrix, then mean
/// cross-entropy of the logits against the matched targets. Samples whose
/// true cluster maps to a padded prediction column are ignored.
inline Tensor matching_ce_loss(const SoftPartition& p, std::span<const int> z) {
  const std::size_t n = p.n(), kp = p.k();
  const int kt = std::max(label_count(z), 1);
  const Tensor m = detail::pad_square(ad::detach(soft_confusion(p, z, kt).m));
  const MatchResult match = hungarian(detail::to_rows(m));
  std::vector<int> true_to_pred(m.dim(0), -1);
  for (std::size_t k = 0; k < match.permutation.size(); ++k)
    true_to_pred[static_cast<std::size_t>(match.permutation[k])] = static_cast<int>(k);
  std::vector<double> target(n * kp, 0.0);
  std::size_t valid = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int k = true_to_pred[static_cast<std::size_t>(z[i])];
    if (k < 0 || static_cast<std::size_t>(k) >= kp) continue;
    target[i * kp + static_cast<std::size_t>(k)] = 1.0;
    ++valid;
  }
  if (valid == 0) return Tensor::scalar(0.0);
  const Tensor t = Tensor::from({n, kp}, std::move(target));
  return ad::scale(ad::sum(t * ad::log_softmax(p.logits)), -1.0 / static_cast<double>(valid));
}

inline constexpr double kSinkhornEps = 1e-8;
inline constexpr double kSinkhornTemperature = 0.05;
inline constexpr int kSinkhornIters = 50;
inline constexpr double kSinkhornTol = 1e-6;

/// Log-domain Sinkhorn normalization of exp(log(m + eps) / temperature).
/// Alternates row then column normalization; stops early once the largest
/// entry change of the plan drops below `tol`.
inline Tensor sinkhorn(const Tensor& m, double temperature = kSinkhornTemperature, int iters = kSinkhornIters,
                       double tol = kSinkhornTol) {
  if (m.rank() != 2 || m.dim(0) != m.dim(1)) throw ad::ShapeError("sinkhorn: expects a square matrix");
  if (!(temperature > 0)) throw std::invalid_argument("sinkhorn: temperature must be positive");
  if (iters < 1) throw std::invalid_argument("sinkhorn: iters must be >= 1");
  bool any = false;
  for (double v : m.data()) {
    if (v < 0) throw std::invalid_argument("sinkhorn: negative entry");
    any = any || v > 0;
  }
  if (!any) throw std::invalid_argument("sinkhorn: all-zero matrix");
  Tensor logp = ad::scale(ad::log(ad::add_scalar(m, kSinkhornEps)), 1.0 / temperature);
  std::vector<double> prev;
  for (int it = 0; it < iters; ++it) {
    logp = ad::log_softmax(logp);
    logp = ad::transpose(ad::log_softmax(ad::transpose(logp)));
    std::vector<double> cur(logp.numel());
    for (std::size_t i = 0; i < cur.size(); ++i) cur[i] = std::exp(logp[i]);
    if (!prev.empty()) {
      double change = 0;
      for (std::size_t i = 0; i < cur.size(); ++i) change = std::max(change, std::abs(cur[i] - prev[i]));
      if (change < tol) break;
    }
    prev = std::move(cur);
  }
  return ad::exp(logp);
}

/// 1 - <Pi, M>_F / N with Pi = sinkhorn(M); gradients flow through Pi and M.
inline Tensor matching_softacc_loss(const SoftPartition& p, std::span<const int> z,
                                    double temperature = kSinkhornTemperature, int iters = kSinkhornIters,
                                    double tol = kSinkhornTol) {
  const int kt = std::max(label_count(z), 1);
  const Tensor m = detail::pad_square(soft_confusion(p, z, kt).m);
  const Tensor plan = sinkhorn(m, temperature, iters, tol);
  const Tensor acc = ad::scale(ad::sum(plan * m), 1.0 / static_cast<double>(p.n()));
  return ad::add_scalar(-acc, 1.0);
}

}  // namespace amoclust
