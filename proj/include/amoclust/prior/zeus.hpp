#pragma once

// Mixed-type prior: Gaussian mixture on continuous features, optional
// invertible residual warp, cluster-conditioned categorical features.

#include <amoclust/prior/gmm.hpp>
#include <amoclust/prior/types.hpp>
#include <amoclust/rng.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

namespace amoclust {

inline constexpr int kPowerIterations = 20;
inline constexpr int kMaxCategories = 5;
inline constexpr double kCategoricalConcentration = 0.5;

/// Largest singular value by power iteration on W^T W.
inline double spectral_norm(const Eigen::MatrixXd& w, int iters = kPowerIterations) {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(w.cols()).normalized();
  double sigma = 0;
  for (int i = 0; i < iters; ++i) {
    Eigen::VectorXd u = w * v;
    sigma = u.norm();
    if (sigma == 0) return 0;
    v = (w.transpose() * u).normalized();
  }
  return (w * v).norm();
}

inline IResNet build_iresnet(int d, Rng& rng) {
  if (d < 1) throw std::invalid_argument("build_iresnet: d must be >= 1");
  IResNet net;
  std::bernoulli_distribution identity(0.5);
  if (identity(rng)) return net;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double mu = std::exp(std::log(3.0) + u01(rng) * (std::log(8.0) - std::log(3.0)));
  const double sigma = std::exp(std::log(0.01) + u01(rng) * (std::log(1.0) - std::log(0.01)));
  std::normal_distribution<double> bdist(mu, sigma);
  double b_tilde = bdist(rng);
  while (b_tilde < 0) b_tilde = bdist(rng);
  const int n_blocks = 3 + static_cast<int>(std::lround(b_tilde));
  net.lipschitz = 0.1 + 0.8 * u01(rng);

  std::normal_distribution<double> nd;
  auto gaussian = [&](int r, int c) {
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = nd(rng);
    return m;
  };
  net.blocks.resize(static_cast<std::size_t>(n_blocks));
  for (auto& blk : net.blocks) {
    blk.w1 = gaussian(d, d);
    blk.w2 = gaussian(d, d);
    blk.b1 = 0.1 * gaussian(d, 1);
    blk.b2 = 0.1 * gaussian(d, 1);
    // ELU is 1-Lipschitz, so Lip(g) <= |W2| |W1| = lipschitz.
    blk.w1 /= spectral_norm(blk.w1);
    blk.w2 *= net.lipschitz / spectral_norm(blk.w2);
  }
  return net;
}

inline ZeusSpec generate_zeus_spec(const TaskConfig& cfg, const PriorRanges& r, Rng& rng) {
  if (cfg.prior_kind != PriorKind::kZeus) throw std::invalid_argument("generate_zeus_spec: config is not a ZEUS task");
  if (cfg.d < 2) throw std::invalid_argument("generate_zeus_spec: d must be >= 2");
  ZeusSpec z;
  z.d_cont = std::uniform_int_distribution<int>(2, cfg.d)(rng);
  z.d_cat = cfg.d - z.d_cont;
  z.base_gmm = generate_gmm_spec(cfg.k_true, z.d_cont, r, rng, /*pi_low=*/0.0);
  IResNet warp = build_iresnet(z.d_cont, rng);
  if (warp.n_blocks() > 0) z.warp = std::move(warp);
  z.cat_concentration = kCategoricalConcentration;
  std::uniform_int_distribution<int> card(2, kMaxCategories);
  for (int j = 0; j < z.d_cat; ++j) {
    const int c = card(rng);
    z.cat_cardinalities.push_back(c);
    Eigen::MatrixXd table(cfg.k_true, c);
    for (int k = 0; k < cfg.k_true; ++k) table.row(k) = sample_dirichlet(rng, c, z.cat_concentration).transpose();
    z.cat_tables.push_back(std::move(table));
  }
  return z;
}

/// Raw (unpreprocessed) mixed-type dataset: continuous columns first, then
/// label-encoded categorical columns.
inline Dataset sample_zeus_dataset(const ZeusSpec& z, const TaskConfig& cfg, Rng& rng) {
  Eigen::MatrixXd cont;
  std::vector<int> labels = sample_mixture(z.base_gmm, cfg.n, rng, cont);
  if (z.warp) {
    for (int i = 0; i < cfg.n; ++i) cont.row(i) = z.warp->apply(cont.row(i).transpose()).transpose();
  }
  Dataset ds;
  ds.x.resize(cfg.n, z.d_cont + z.d_cat);
  ds.x.leftCols(z.d_cont) = cont;
  ds.col_kind.assign(static_cast<std::size_t>(z.d_cont), ColumnKind::kNumeric);
  for (int j = 0; j < z.d_cat; ++j) {
    const Eigen::MatrixXd& t = z.cat_tables[static_cast<std::size_t>(j)];
    std::vector<std::discrete_distribution<int>> rows;
    for (int k = 0; k < t.rows(); ++k) {
      std::vector<double> w(static_cast<std::size_t>(t.cols()));
      for (int c = 0; c < t.cols(); ++c) w[static_cast<std::size_t>(c)] = t(k, c);
      rows.emplace_back(w.begin(), w.end());
    }
    for (int i = 0; i < cfg.n; ++i) ds.x(i, z.d_cont + j) = rows[static_cast<std::size_t>(labels[i])](rng);
    ds.col_kind.push_back(ColumnKind::kCategorical);
  }
  ds.labels = std::move(labels);
  ds.k_true = cfg.k_true;
  ds.provenance.config = cfg;
  ds.provenance.target_omega_max = z.base_gmm.target_omega_max;
  ds.provenance.achieved_omega_max = z.base_gmm.achieved_omega_max;
  ds.provenance.notes.push_back(z.warp ? "iresnet warp with " + std::to_string(z.warp->n_blocks()) + " blocks"
                                       : "identity warp");
  ds.provenance.notes.push_back("categorical Dirichlet concentration 0.5");
  ds.provenance.feature_order.resize(static_cast<std::size_t>(cfg.d));
  for (int j = 0; j < cfg.d; ++j) ds.provenance.feature_order[static_cast<std::size_t>(j)] = j;
  return ds;
}

inline Dataset generate_zeus_dataset(const TaskConfig& cfg, const PriorRanges& r, Rng& rng) {
  const ZeusSpec z = generate_zeus_spec(cfg, r, rng);
  return sample_zeus_dataset(z, cfg, rng);
}

}  // namespace amoclust
