#pragma once

// Classical clustering baselines: k-means++ / Lloyd, EM for Gaussian
// mixtures, silhouette-based selection of K.

#include <amoclust/prior/types.hpp>
#include <amoclust/rng.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace amoclust {

using Labels = std::vector<int>;

/// Categorical columns expanded to one indicator column per observed level.
inline Eigen::MatrixXd one_hot_categoricals(const Dataset& ds) {
  std::vector<Eigen::VectorXd> cols;
  for (int j = 0; j < ds.d(); ++j) {
    const auto c = ds.x.col(j);
    if (ds.col_kind[static_cast<std::size_t>(j)] == ColumnKind::kNumeric) {
      cols.emplace_back(c);
      continue;
    }
    std::map<double, int> levels;
    for (int i = 0; i < ds.n(); ++i) levels.emplace(c(i), 0);
    int idx = 0;
    for (auto& [v, k] : levels) k = idx++;
    for (int l = 0; l < static_cast<int>(levels.size()); ++l) cols.emplace_back(Eigen::VectorXd::Zero(ds.n()));
    const std::size_t base = cols.size() - levels.size();
    for (int i = 0; i < ds.n(); ++i) cols[base + static_cast<std::size_t>(levels[c(i)])](i) = 1.0;
  }
  Eigen::MatrixXd out(ds.n(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = cols[j];
  return out;
}

// ---------------------------------------------------------------------------
// k-means

struct KMeansResult {
  Labels labels;
  Eigen::MatrixXd centroids;
  double inertia = 0;
  int iterations = 0;
  std::vector<double> inertia_trace;  // per Lloyd iteration of the best restart
};

struct KMeansOptions {
  int restarts = 10;
  int max_iter = 300;
  double tol = 1e-6;
};

namespace detail {

inline double sq_dist(const Eigen::MatrixXd& x, Eigen::Index i, const Eigen::MatrixXd& c, Eigen::Index k) {
  return (x.row(i) - c.row(k)).squaredNorm();
}

inline Eigen::MatrixXd kmeanspp_init(const Eigen::MatrixXd& x, int k, Rng& rng) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd c(k, x.cols());
  c.row(0) = x.row(std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = sq_dist(x, i, c, 0);
  for (int j = 1; j < k; ++j) {
    double total = 0;
    for (double v : d2) total += v;
    Eigen::Index pick = 0;
    if (total <= 0) {
      pick = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
    } else {
      pick = std::discrete_distribution<Eigen::Index>(d2.begin(), d2.end())(rng);
    }
    c.row(j) = x.row(pick);
    for (Eigen::Index i = 0; i < n; ++i)
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], sq_dist(x, i, c, j));
  }
  return c;
}

inline double assign(const Eigen::MatrixXd& x, const Eigen::MatrixXd& c, Labels& labels) {
  double inertia = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (Eigen::Index k = 0; k < c.rows(); ++k) {
      const double d = sq_dist(x, i, c, k);
      if (d < best) {
        best = d;
        arg = static_cast<int>(k);
      }
    }
    labels[static_cast<std::size_t>(i)] = arg;
    inertia += best;
  }
  return inertia;
}

inline KMeansResult lloyd(const Eigen::MatrixXd& x, Eigen::MatrixXd c, const KMeansOptions& opt) {
  const Eigen::Index n = x.rows(), k = c.rows();
  KMeansResult r;
  r.labels.assign(static_cast<std::size_t>(n), 0);
  for (int it = 0; it < opt.max_iter; ++it) {
    r.inertia = assign(x, c, r.labels);
    r.inertia_trace.push_back(r.inertia);
    Eigen::MatrixXd next = Eigen::MatrixXd::Zero(k, x.cols());
    std::vector<int> count(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      next.row(r.labels[static_cast<std::size_t>(i)]) += x.row(i);
      ++count[static_cast<std::size_t>(r.labels[static_cast<std::size_t>(i)])];
    }
    for (Eigen::Index j = 0; j < k; ++j) {
      if (count[static_cast<std::size_t>(j)] > 0) {
        next.row(j) /= count[static_cast<std::size_t>(j)];
        continue;
      }
      // Empty cluster: move it to the point farthest from its centroid.
      Eigen::Index far = 0;
      double far_d = -1;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = sq_dist(x, i, c, r.labels[static_cast<std::size_t>(i)]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      next.row(j) = x.row(far);
    }
    const double shift = (next - c).rowwise().norm().maxCoeff();
    c = std::move(next);
    r.iterations = it + 1;
    if (shift < opt.tol) break;
  }
  r.inertia = assign(x, c, r.labels);
  r.centroids = std::move(c);
  return r;
}

}  // namespace detail

inline KMeansResult kmeans(const Eigen::MatrixXd& x, int k, Rng& rng, const KMeansOptions& opt = {}) {
  if (k < 1 || k > x.rows()) throw std::invalid_argument("kmeans: need 1 <= k <= N");
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, opt.restarts); ++r) {
    KMeansResult cur = detail::lloyd(x, detail::kmeanspp_init(x, k, rng), opt);
    if (cur.inertia < best.inertia) best = std::move(cur);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Gaussian mixture EM

enum class CovarianceKind { kFull, kSphericalShared };

inline std::string to_string(CovarianceKind k) { return k == CovarianceKind::kFull ? "full" : "spherical_shared"; }

struct GmmFit {
  Labels labels;
  double loglik = -std::numeric_limits<double>::infinity();
  std::vector<double> loglik_trace;
  Eigen::VectorXd weights;
  Eigen::MatrixXd means;
  std::vector<Eigen::MatrixXd> covariances;
  int iterations = 0;
};

struct GmmOptions {
  int restarts = 10;
  int max_iter = 300;
  double tol = 1e-5;
  double reg = 1e-6;
};

namespace detail {

inline double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

/// Per-sample log N(x_i | mu, cov) for all rows. Throws when cov is not
/// positive definite.
inline Eigen::VectorXd log_gaussian(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& mu, const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw std::domain_error("singular covariance");
  const Eigen::MatrixXd l = llt.matrixL();
  double half_log_det = 0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    if (!(l(i, i) > 0)) throw std::domain_error("singular covariance");
    half_log_det += std::log(l(i, i));
  }
  const Eigen::MatrixXd centered = (x.rowwise() - mu).transpose();
  const Eigen::MatrixXd z = llt.matrixL().solve(centered);
  const double c = -0.5 * static_cast<double>(x.cols()) * std::log(2.0 * std::numbers::pi) - half_log_det;
  return (c - 0.5 * z.colwise().squaredNorm().array()).matrix().transpose();
}

inline GmmFit em_once(const Eigen::MatrixXd& x, int k, CovarianceKind kind, const GmmOptions& opt,
                      const Eigen::MatrixXd& init_means) {
  const Eigen::Index n = x.rows(), d = x.cols();
  const Eigen::MatrixXd reg = opt.reg * Eigen::MatrixXd::Identity(d, d);
  GmmFit f;
  f.means = init_means;
  f.weights = Eigen::VectorXd::Constant(k, 1.0 / k);
  if (kind == CovarianceKind::kSphericalShared) {
    f.covariances.assign(static_cast<std::size_t>(k), Eigen::MatrixXd::Identity(d, d));
  } else {
    const Eigen::RowVectorXd mu = x.colwise().mean();
    const Eigen::MatrixXd cen = x.rowwise() - mu;
    const Eigen::MatrixXd cov = cen.transpose() * cen / static_cast<double>(n) + reg;
    f.covariances.assign(static_cast<std::size_t>(k), cov);
  }
  Eigen::MatrixXd logp(n, k), resp(n, k);
  for (int it = 0; it < opt.max_iter; ++it) {
    // E-step
    for (int j = 0; j < k; ++j)
      logp.col(j) = log_gaussian(x, f.means.row(j), f.covariances[static_cast<std::size_t>(j)]).array() +
                    std::log(std::max(f.weights(j), 1e-300));
    double ll = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double lse = log_sum_exp(logp.row(i).transpose());
      ll += lse;
      resp.row(i) = (logp.row(i).array() - lse).exp();
    }
    f.loglik_trace.push_back(ll);
    const bool converged = it > 0 && ll - f.loglik < opt.tol;
    f.loglik = ll;
    f.iterations = it + 1;
    if (converged) break;
    // M-step
    const Eigen::VectorXd nk = resp.colwise().sum().transpose().array() + 1e-12;
    f.weights = nk / static_cast<double>(n);
    f.means = (resp.transpose() * x).array().colwise() / nk.array();
    if (kind == CovarianceKind::kFull) {
      for (int j = 0; j < k; ++j) {
        const Eigen::MatrixXd cen = x.rowwise() - f.means.row(j);
        f.covariances[static_cast<std::size_t>(j)] =
            (cen.transpose() * resp.col(j).asDiagonal() * cen) / nk(j) + reg;
      }
    }
  }
  f.labels.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index arg = 0;
    logp.row(i).maxCoeff(&arg);
    f.labels[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return f;
}

}  // namespace detail

/// EM with k-means++ initial means; best log-likelihood over restarts. The
/// spherical_shared model fixes every covariance to the identity and only
/// fits weights and means.
inline GmmFit gmm_em(const Eigen::MatrixXd& x, int k, CovarianceKind kind, Rng& rng, const GmmOptions& opt = {}) {
  if (k < 1 || k > x.rows()) throw std::invalid_argument("gmm_em: need 1 <= k <= N");
  GmmFit best;
  int failures = 0;
  for (int r = 0; r < std::max(1, opt.restarts); ++r) {
    try {
      GmmFit cur = detail::em_once(x, k, kind, opt, detail::kmeanspp_init(x, k, rng));
      if (cur.loglik > best.loglik) best = std::move(cur);
    } catch (const std::domain_error&) {
      ++failures;
    }
  }
  if (best.labels.empty()) {
    throw std::runtime_error("gmm_em: all " + std::to_string(failures) + " restarts hit a singular covariance");
  }
  return best;
}

// ---------------------------------------------------------------------------
// Silhouette

/// Mean silhouette coefficient with Euclidean distances; -1 when the number of
/// distinct labels is outside [2, N-1]. Singleton clusters contribute 0.
inline double silhouette_score(const Eigen::MatrixXd& x, const Labels& labels) {
  const Eigen::Index n = x.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n) throw std::invalid_argument("silhouette_score: size mismatch");
  std::map<int, int> ids;
  for (int l : labels) ids.emplace(l, 0);
  const int k = static_cast<int>(ids.size());
  if (k < 2 || k > n - 1) return -1.0;
  int c = 0;
  for (auto& [l, v] : ids) v = c++;
  std::vector<int> lab(static_cast<std::size_t>(n));
  std::vector<int> size(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    lab[static_cast<std::size_t>(i)] = ids[labels[static_cast<std::size_t>(i)]];
    ++size[static_cast<std::size_t>(lab[static_cast<std::size_t>(i)])];
  }
  const Eigen::VectorXd sq = x.rowwise().squaredNorm();
  const Eigen::MatrixXd gram = x * x.transpose();
  double total = 0;
  std::vector<double> sums(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::fill(sums.begin(), sums.end(), 0.0);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d2 = std::max(0.0, sq(i) + sq(j) - 2.0 * gram(i, j));
      sums[static_cast<std::size_t>(lab[static_cast<std::size_t>(j)])] += std::sqrt(d2);
    }
    const int own = lab[static_cast<std::size_t>(i)];
    if (size[static_cast<std::size_t>(own)] <= 1) continue;
    const double a = sums[static_cast<std::size_t>(own)] / (size[static_cast<std::size_t>(own)] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int l = 0; l < k; ++l)
      if (l != own) b = std::min(b, sums[static_cast<std::size_t>(l)] / size[static_cast<std::size_t>(l)]);
    const double m = std::max(a, b);
    if (m > 0) total += (b - a) / m;
  }
  return total / static_cast<double>(n);
}

enum class BaselineKind { kKMeans, kGmmFull, kGmmSpherical };

inline std::string to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::kKMeans: return "kmeans";
    case BaselineKind::kGmmFull: return "gmm";
    case BaselineKind::kGmmSpherical: return "sgmm";
  }
  return "?";
}

inline Labels run_baseline(BaselineKind kind, const Eigen::MatrixXd& x, int k, Rng& rng) {
  switch (kind) {
    case BaselineKind::kKMeans: return kmeans(x, k, rng).labels;
    case BaselineKind::kGmmFull: return gmm_em(x, k, CovarianceKind::kFull, rng).labels;
    case BaselineKind::kGmmSpherical: return gmm_em(x, k, CovarianceKind::kSphericalShared, rng).labels;
  }
  throw std::invalid_argument("run_baseline: unknown kind");
}

struct SilhouetteSelection {
  int k_hat = 2;
  Labels labels;
  std::vector<double> scores;  // per K in range
};

/// Runs the baseline for each K in [k_lo, k_hi] and keeps the best mean
/// silhouette (smaller K on ties).
inline SilhouetteSelection silhouette_select_k(const Eigen::MatrixXd& x, BaselineKind kind, int k_lo, int k_hi,
                                               Rng& rng) {
  if (k_lo < 2 || k_hi < k_lo) throw std::invalid_argument("silhouette_select_k: bad K range");
  SilhouetteSelection out;
  double best = -std::numeric_limits<double>::infinity();
  for (int k = k_lo; k <= k_hi; ++k) {
    if (k > x.rows()) {
      out.scores.push_back(-1.0);
      continue;
    }
    Labels lab = run_baseline(kind, x, k, rng);
    const double s = silhouette_score(x, lab);
    out.scores.push_back(s);
    if (s > best) {
      best = s;
      out.k_hat = k;
      out.labels = std::move(lab);
    }
  }
  return out;
}

}  // namespace amoclust
