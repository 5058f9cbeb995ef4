#pragma once

#include <amoclust/prior/gmm.hpp>
#include <amoclust/prior/types.hpp>
#include <amoclust/prior/zeus.hpp>
#include <amoclust/rng.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace amoclust {

/// Column z-normalization (population std; constant columns become 0) and an
/// optional uniform column permutation applied jointly to x and col_kind.
inline Dataset preprocess(Dataset ds, bool permute_features, Rng& rng) {
  const int n = ds.n(), d = ds.d();
  for (int j = 0; j < d; ++j) {
    auto col = ds.x.col(j);
    const double mean = col.mean();
    const double var = (col.array() - mean).square().sum() / n;
    const double sd = std::sqrt(var);
    if (sd <= 1e-12 * std::max(1.0, std::abs(mean))) {
      col.setZero();
    } else {
      col = ((col.array() - mean) / sd).matrix();
    }
  }
  if (ds.provenance.feature_order.size() != static_cast<std::size_t>(d)) {
    ds.provenance.feature_order.resize(static_cast<std::size_t>(d));
    std::iota(ds.provenance.feature_order.begin(), ds.provenance.feature_order.end(), 0);
  }
  if (permute_features) {
    std::vector<int> perm(static_cast<std::size_t>(d));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd x(n, d);
    std::vector<ColumnKind> kinds(static_cast<std::size_t>(d));
    std::vector<int> order(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) {
      const auto src = static_cast<std::size_t>(perm[static_cast<std::size_t>(j)]);
      x.col(j) = ds.x.col(static_cast<Eigen::Index>(src));
      kinds[static_cast<std::size_t>(j)] = ds.col_kind[src];
      order[static_cast<std::size_t>(j)] = ds.provenance.feature_order[src];
    }
    ds.x = std::move(x);
    ds.col_kind = std::move(kinds);
    ds.provenance.feature_order = std::move(order);
  }
  return ds;
}

/// Samples one preprocessed task from the configured prior.
inline Dataset generate_task(const TaskConfig& cfg, const PriorRanges& r, bool permute_features = true) {
  Rng rng(cfg.seed);
  Dataset raw;
  if (cfg.prior_kind == PriorKind::kGmm) {
    const GmmSpec spec = generate_gmm_spec(cfg, r, rng);
    raw = sample_gmm_dataset(spec, cfg, rng);
  } else {
    raw = generate_zeus_dataset(cfg, r, rng);
  }
  return preprocess(std::move(raw), permute_features, rng);
}

/// Task `index` of a stream seeded by `base_seed`.
inline Dataset generate_task(std::uint64_t base_seed, std::uint64_t index, const PriorRanges& r,
                             bool permute_features = true) {
  Rng rng(derive_seed(base_seed, index));
  return generate_task(sample_task_config(rng, r), r, permute_features);
}

}  // namespace amoclust
