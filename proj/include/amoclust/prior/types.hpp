#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace amoclust {

enum class PriorKind { kGmm, kZeus };
enum class ColumnKind { kNumeric, kCategorical };

inline std::string_view to_string(PriorKind k) { return k == PriorKind::kGmm ? "gmm" : "zeus"; }
inline std::string_view to_string(ColumnKind k) { return k == ColumnKind::kNumeric ? "numeric" : "categorical"; }

inline PriorKind parse_prior_kind(std::string_view s) {
  if (s == "gmm") return PriorKind::kGmm;
  if (s == "zeus") return PriorKind::kZeus;
  throw std::invalid_argument("unknown prior kind '" + std::string(s) + "'");
}

inline ColumnKind parse_column_kind(std::string_view s) {
  if (s == "numeric") return ColumnKind::kNumeric;
  if (s == "categorical") return ColumnKind::kCategorical;
  throw std::invalid_argument("unknown column kind '" + std::string(s) + "'");
}

class InfeasibleConfig : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ranges the task sampler draws from. `paper()` mirrors the published
/// pretraining ranges; `desk()` is the small-scale default.
struct PriorRanges {
  int n_min = 500;
  int n_max = 1000;
  int d_min = 2;
  int d_max = 64;
  int k_max = 10;
  double p_k2 = 0.3;
  double gmm_fraction = 0.4;
  double omega_min = 0.01;
  double omega_cap = 0.8;
  double pi_low = 0.1;
  int mc_samples = 4000;

  static PriorRanges paper() { return {}; }
  static PriorRanges desk() {
    PriorRanges r;
    r.n_min = 100;
    r.n_max = 200;
    r.d_min = 2;
    r.d_max = 8;
    return r;
  }
};

struct TaskConfig {
  int n = 0;
  int d = 0;
  int k_true = 0;
  PriorKind prior_kind = PriorKind::kGmm;
  std::uint64_t seed = 0;
};

struct GmmSpec {
  Eigen::VectorXd weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covariances;
  bool spherical = false;
  bool homoscedastic = false;
  double target_omega_max = 0.0;
  double achieved_omega_max = 0.0;
  double mean_scale = 1.0;

  int k() const { return static_cast<int>(weights.size()); }
  int d() const { return means.empty() ? 0 : static_cast<int>(means.front().size()); }
};

struct OverlapReport {
  Eigen::MatrixXd one_sided;  // (i, j) = o_{j|i}
  Eigen::MatrixXd pairwise;
  double omega_max = 0.0;
};

struct IResNetBlock {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;

  Eigen::VectorXd residual(const Eigen::VectorXd& x) const {
    Eigen::VectorXd h = w1 * x + b1;
    for (Eigen::Index i = 0; i < h.size(); ++i) h[i] = h[i] > 0 ? h[i] : std::expm1(h[i]);
    return w2 * h + b2;
  }
};

/// Stack of residual blocks x <- x + g(x) with Lip(g) <= lipschitz < 1.
struct IResNet {
  std::vector<IResNetBlock> blocks;
  double lipschitz = 0.0;

  int n_blocks() const { return static_cast<int>(blocks.size()); }
  Eigen::VectorXd apply(Eigen::VectorXd x) const {
    for (const auto& b : blocks) x += b.residual(x);
    return x;
  }
};

struct ZeusSpec {
  int d_cont = 0;
  int d_cat = 0;
  GmmSpec base_gmm;
  std::optional<IResNet> warp;
  std::vector<int> cat_cardinalities;
  std::vector<Eigen::MatrixXd> cat_tables;  // per feature, K x C_j
  double cat_concentration = 0.5;
};

struct Provenance {
  TaskConfig config;
  std::optional<double> target_omega_max;
  std::optional<double> achieved_omega_max;
  std::vector<int> feature_order;  // original column index of each stored column
  std::vector<std::string> notes;
};

struct Dataset {
  Eigen::MatrixXd x;  // N x D
  std::vector<ColumnKind> col_kind;
  std::optional<std::vector<int>> labels;
  int k_true = 0;
  Provenance provenance;

  int n() const { return static_cast<int>(x.rows()); }
  int d() const { return static_cast<int>(x.cols()); }
};

}  // namespace amoclust
