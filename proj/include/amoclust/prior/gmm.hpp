#pragma once

// Overlap-controlled Gaussian-mixture task prior.

#include <amoclust/prior/types.hpp>
#include <amoclust/rng.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace amoclust {

inline TaskConfig sample_task_config(Rng& rng, const PriorRanges& r) {
  if (r.n_min > r.n_max || r.d_min > r.d_max || r.n_min < 2 || r.d_min < 2 || r.k_max < 2) {
    throw std::invalid_argument("sample_task_config: empty or invalid ranges");
  }
  TaskConfig cfg;
  cfg.n = std::uniform_int_distribution<int>(r.n_min, r.n_max)(rng);
  cfg.d = std::uniform_int_distribution<int>(r.d_min, r.d_max)(rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (r.k_max == 2 || u(rng) < r.p_k2) {
    cfg.k_true = 2;
  } else {
    cfg.k_true = std::uniform_int_distribution<int>(3, r.k_max)(rng);
  }
  cfg.prior_kind = u(rng) < r.gmm_fraction ? PriorKind::kGmm : PriorKind::kZeus;
  cfg.seed = rng();
  return cfg;
}

inline Eigen::VectorXd sample_dirichlet(Rng& rng, int k, double alpha) {
  std::gamma_distribution<double> g(alpha, 1.0);
  Eigen::VectorXd w(k);
  for (;;) {
    for (int i = 0; i < k; ++i) w[i] = g(rng);
    const double s = w.sum();
    if (s > 0) return w / s;
  }
}

/// Dirichlet(alpha) weights with every component >= pi_low. Rejection first;
/// near the feasibility boundary (where rejection almost never succeeds) the
/// weights become pi_low + (1 - K pi_low) * Dirichlet(alpha).
inline Eigen::VectorXd sample_constrained_weights(Rng& rng, int k, double alpha, double pi_low,
                                                  int max_attempts = 1000) {
  if (pi_low * k > 1.0 + 1e-12) {
    throw InfeasibleConfig("mixture weights infeasible: K=" + std::to_string(k) + " with pi_low=" +
                           std::to_string(pi_low));
  }
  if (pi_low * k >= 1.0 - 1e-12) return Eigen::VectorXd::Constant(k, 1.0 / k);
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    Eigen::VectorXd w = sample_dirichlet(rng, k, alpha);
    if (w.minCoeff() >= pi_low) return w;
  }
  Eigen::VectorXd w = sample_dirichlet(rng, k, alpha);
  return (Eigen::VectorXd::Constant(k, pi_low) + (1.0 - k * pi_low) * w).eval();
}

inline Eigen::MatrixXd random_orthogonal(Rng& rng, int d) {
  std::normal_distribution<double> nd;
  Eigen::MatrixXd g(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) g(i, j) = nd(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  // Sign fix so Q is Haar-distributed.
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int i = 0; i < d; ++i)
    if (r(i, i) < 0) q.col(i) *= -1.0;
  return q;
}

namespace detail {

inline double log_uniform(Rng& rng, double lo, double hi) {
  return std::exp(std::uniform_real_distribution<double>(std::log(lo), std::log(hi))(rng));
}

// Variance scale range for a component; the mean scale is searched afterwards
// so only ratios between components matter.
inline constexpr double kVarLo = 0.25;
inline constexpr double kVarHi = 1.0;
// Eccentricity cap 0.9 => lambda_min / lambda_max >= 1 - 0.81.
inline constexpr double kMinEigenRatio = 0.19;

inline Eigen::MatrixXd ellipsoidal_cov(Rng& rng, int d, double top) {
  Eigen::MatrixXd q = random_orthogonal(rng, d);
  Eigen::VectorXd lam(d);
  for (int i = 0; i < d; ++i) lam[i] = top * log_uniform(rng, kMinEigenRatio, 1.0);
  Eigen::MatrixXd s = q * lam.asDiagonal() * q.transpose();
  return (0.5 * (s + s.transpose())).eval();
}

inline Eigen::MatrixXd checked_cholesky(const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw std::domain_error("covariance is not positive definite");
  return llt.matrixL();
}

inline double half_log_det(const Eigen::MatrixXd& chol) { return chol.diagonal().array().log().sum(); }

}  // namespace detail

/// Monte-Carlo Bayes-misclassification overlaps: o_{j|i} is the fraction of
/// draws from component i with pi_i phi_i < pi_j phi_j (exact ties count 1/2).
inline OverlapReport pairwise_overlap(const GmmSpec& spec, int mc_samples, Rng& rng) {
  if (mc_samples < 1000) throw std::invalid_argument("pairwise_overlap: mc_samples must be >= 1000");
  const int k = spec.k(), d = spec.d();
  std::vector<Eigen::MatrixXd> chol(k);
  std::vector<double> log_norm(k);
  for (int j = 0; j < k; ++j) {
    chol[j] = detail::checked_cholesky(spec.covariances[j]);
    log_norm[j] = std::log(spec.weights[j]) - detail::half_log_det(chol[j]);
  }
  OverlapReport rep;
  rep.one_sided = Eigen::MatrixXd::Zero(k, k);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd eps(d, mc_samples);
  std::vector<double> logd(k);
  for (int i = 0; i < k; ++i) {
    for (int s = 0; s < mc_samples; ++s)
      for (int r = 0; r < d; ++r) eps(r, s) = nd(rng);
    Eigen::MatrixXd x = (chol[i] * eps).colwise() + spec.means[i];
    std::vector<Eigen::MatrixXd> y(k);
    for (int j = 0; j < k; ++j) {
      y[j] = chol[j].triangularView<Eigen::Lower>().solve(x.colwise() - spec.means[j]);
    }
    for (int s = 0; s < mc_samples; ++s) {
      for (int j = 0; j < k; ++j) logd[j] = log_norm[j] - 0.5 * y[j].col(s).squaredNorm();
      for (int j = 0; j < k; ++j) {
        if (j == i) continue;
        if (logd[i] < logd[j]) {
          rep.one_sided(i, j) += 1.0;
        } else if (logd[i] == logd[j]) {
          rep.one_sided(i, j) += 0.5;
        }
      }
    }
  }
  rep.one_sided /= static_cast<double>(mc_samples);
  rep.pairwise = rep.one_sided + rep.one_sided.transpose();
  rep.omega_max = 0.0;
  for (int i = 0; i < k; ++i) {
    rep.pairwise(i, i) = 0.0;
    for (int j = 0; j < k; ++j)
      if (i != j) rep.omega_max = std::max(rep.omega_max, rep.pairwise(i, j));
  }
  return rep;
}

/// Omega_max of a mixture as a function of a scale s applied to all means about
/// their centroid. Draws are fixed at construction, so evaluating at any s is
/// O(K^2 * samples) with no linear algebra: for a draw x = mu_i(s) + L_i e,
/// |L_j^{-1}(x - mu_j(s))|^2 = s^2 |b|^2 + 2 s b.a + |a|^2 with
/// a = L_j^{-1} L_i e and b = L_j^{-1}(mu_i - mu_j).
class ScaledOverlap {
 public:
  ScaledOverlap(const GmmSpec& spec, int mc_samples, Rng& rng) : k_(spec.k()), samples_(mc_samples) {
    const int d = spec.d();
    std::vector<Eigen::MatrixXd> chol(k_);
    log_norm_.resize(k_);
    for (int j = 0; j < k_; ++j) {
      chol[j] = detail::checked_cholesky(spec.covariances[j]);
      log_norm_[j] = std::log(spec.weights[j]) - detail::half_log_det(chol[j]);
    }
    std::normal_distribution<double> nd;
    pairs_.resize(static_cast<std::size_t>(k_ * k_));
    self_q_.resize(k_);
    Eigen::MatrixXd eps(d, mc_samples);
    for (int i = 0; i < k_; ++i) {
      for (int s = 0; s < mc_samples; ++s)
        for (int r = 0; r < d; ++r) eps(r, s) = nd(rng);
      self_q_[i] = eps.colwise().squaredNorm().transpose();
      const Eigen::MatrixXd le = chol[i] * eps;
      for (int j = 0; j < k_; ++j) {
        if (i == j) continue;
        Pair& p = pairs_[static_cast<std::size_t>(i * k_ + j)];
        const Eigen::MatrixXd a = chol[j].triangularView<Eigen::Lower>().solve(le);
        const Eigen::VectorXd b = chol[j].triangularView<Eigen::Lower>().solve(spec.means[i] - spec.means[j]);
        p.aa = a.colwise().squaredNorm().transpose();
        p.ba = (b.transpose() * a).transpose();
        p.bb = b.squaredNorm();
      }
    }
  }

  double omega_max(double s) const {
    Eigen::MatrixXd o = Eigen::MatrixXd::Zero(k_, k_);
    for (int i = 0; i < k_; ++i) {
      for (int j = 0; j < k_; ++j) {
        if (i == j) continue;
        const Pair& p = pairs_[static_cast<std::size_t>(i * k_ + j)];
        double count = 0;
        for (int t = 0; t < samples_; ++t) {
          const double li = log_norm_[i] - 0.5 * self_q_[i][t];
          const double lj = log_norm_[j] - 0.5 * (s * s * p.bb + 2.0 * s * p.ba[t] + p.aa[t]);
          if (li < lj) {
            count += 1.0;
          } else if (li == lj) {
            count += 0.5;
          }
        }
        o(i, j) = count / samples_;
      }
    }
    double best = 0;
    for (int i = 0; i < k_; ++i)
      for (int j = i + 1; j < k_; ++j) best = std::max(best, o(i, j) + o(j, i));
    return best;
  }

 private:
  struct Pair {
    Eigen::VectorXd aa, ba;
    double bb = 0;
  };
  int k_;
  int samples_;
  std::vector<double> log_norm_;
  std::vector<Eigen::VectorXd> self_q_;
  std::vector<Pair> pairs_;
};

inline double omega_upper_bound(int d, double cap) { return std::min(cap, 1.5 / std::pow(static_cast<double>(d), 0.82)); }

namespace detail {

inline void apply_mean_scale(GmmSpec& spec, const std::vector<Eigen::VectorXd>& base, double s) {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(base.front().size());
  for (const auto& m : base) c += m;
  c /= static_cast<double>(base.size());
  for (std::size_t k = 0; k < base.size(); ++k) spec.means[k] = c + s * (base[k] - c);
  spec.mean_scale = s;
}

/// Bisection on log s so that Omega_max(s) hits `target`. Returns the best
/// (closest) scale seen; stops early within `tol`.
inline void fit_mean_scale(GmmSpec& spec, const PriorRanges& r, Rng& rng, double tol = 0.015, int iters = 40) {
  const std::vector<Eigen::VectorXd> base = spec.means;
  Rng mc_rng(rng());
  apply_mean_scale(spec, base, 1.0);
  ScaledOverlap ov(spec, r.mc_samples, mc_rng);
  double lo = std::log(1e-3), hi = std::log(1e3);
  double best_s = 1.0, best_err = std::numeric_limits<double>::infinity(), best_omega = 0.0;
  for (int it = 0; it < iters; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double s = std::exp(mid);
    const double om = ov.omega_max(s);
    const double err = std::abs(om - spec.target_omega_max);
    if (err < best_err) {
      best_err = err;
      best_s = s;
      best_omega = om;
    }
    if (err <= tol) break;
    if (om > spec.target_omega_max) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  apply_mean_scale(spec, base, best_s);
  spec.achieved_omega_max = best_omega;
}

}  // namespace detail

/// GMM prior parameters with overlap targeting. `pi_low` <= 0 disables the
/// minimum-proportion constraint.
inline GmmSpec generate_gmm_spec(int k, int d, const PriorRanges& r, Rng& rng, double pi_low) {
  GmmSpec spec;
  spec.weights = pi_low > 0 ? sample_constrained_weights(rng, k, 2.0, pi_low) : sample_dirichlet(rng, k, 2.0);
  std::bernoulli_distribution coin(0.5);
  spec.spherical = coin(rng);
  spec.homoscedastic = coin(rng);
  spec.covariances.resize(k);
  if (spec.homoscedastic) {
    const double top = detail::log_uniform(rng, detail::kVarLo, detail::kVarHi);
    const Eigen::MatrixXd shared = spec.spherical ? Eigen::MatrixXd(top * Eigen::MatrixXd::Identity(d, d))
                                                  : detail::ellipsoidal_cov(rng, d, top);
    for (auto& c : spec.covariances) c = shared;
  } else {
    for (auto& c : spec.covariances) {
      const double top = detail::log_uniform(rng, detail::kVarLo, detail::kVarHi);
      c = spec.spherical ? Eigen::MatrixXd(top * Eigen::MatrixXd::Identity(d, d)) : detail::ellipsoidal_cov(rng, d, top);
    }
  }
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  spec.means.assign(k, Eigen::VectorXd(d));
  for (auto& m : spec.means)
    for (int i = 0; i < d; ++i) m[i] = unit(rng);
  const double hi = omega_upper_bound(d, r.omega_cap);
  spec.target_omega_max = std::uniform_real_distribution<double>(std::min(r.omega_min, hi), hi)(rng);
  detail::fit_mean_scale(spec, r, rng);
  return spec;
}

inline GmmSpec generate_gmm_spec(const TaskConfig& cfg, const PriorRanges& r, Rng& rng) {
  if (cfg.prior_kind != PriorKind::kGmm) throw std::invalid_argument("generate_gmm_spec: config is not a GMM task");
  return generate_gmm_spec(cfg.k_true, cfg.d, r, rng, r.pi_low);
}

/// Labels and rows for `n` draws; returns labels and fills x (n x d).
inline std::vector<int> sample_mixture(const GmmSpec& spec, int n, Rng& rng, Eigen::MatrixXd& x) {
  const int k = spec.k(), d = spec.d();
  std::vector<double> w(spec.weights.data(), spec.weights.data() + k);
  std::discrete_distribution<int> cat(w.begin(), w.end());
  std::vector<Eigen::MatrixXd> chol(k);
  for (int j = 0; j < k; ++j) chol[j] = detail::checked_cholesky(spec.covariances[j]);
  std::normal_distribution<double> nd;
  std::vector<int> labels(n);
  x.resize(n, d);
  Eigen::VectorXd e(d);
  for (int i = 0; i < n; ++i) {
    const int z = cat(rng);
    labels[i] = z;
    for (int r = 0; r < d; ++r) e[r] = nd(rng);
    x.row(i) = (spec.means[z] + chol[z] * e).transpose();
  }
  return labels;
}

/// Raw (unpreprocessed) GMM dataset.
inline Dataset sample_gmm_dataset(const GmmSpec& spec, const TaskConfig& cfg, Rng& rng) {
  Dataset ds;
  ds.labels = sample_mixture(spec, cfg.n, rng, ds.x);
  ds.col_kind.assign(static_cast<std::size_t>(spec.d()), ColumnKind::kNumeric);
  ds.k_true = spec.k();
  ds.provenance.config = cfg;
  ds.provenance.target_omega_max = spec.target_omega_max;
  ds.provenance.achieved_omega_max = spec.achieved_omega_max;
  ds.provenance.notes.push_back("overlap targeted by Monte-Carlo mean-scale bisection");
  ds.provenance.feature_order.resize(static_cast<std::size_t>(spec.d()));
  for (int j = 0; j < spec.d(); ++j) ds.provenance.feature_order[static_cast<std::size_t>(j)] = j;
  return ds;
}

}  // namespace amoclust
