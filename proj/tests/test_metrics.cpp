#include <amoclust/autodiff/gradcheck.hpp>
#include <amoclust/metrics/partition.hpp>
#include <amoclust/metrics/soft.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace amoclust;

namespace {

std::vector<int> random_labels(std::mt19937_64& g, int n, int k) {
  std::uniform_int_distribution<int> u(0, k - 1);
  std::vector<int> z(static_cast<std::size_t>(n));
  for (int& v : z) v = u(g);
  return z;
}

// Pair counting: a = same/same, b = same/diff, c = diff/same, d = diff/diff.
double ari_by_pairs(const std::vector<int>& x, const std::vector<int>& y) {
  double a = 0, b = 0, c = 0, d = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const bool sx = x[i] == x[j], sy = y[i] == y[j];
      if (sx && sy) a += 1;
      else if (sx) b += 1;
      else if (sy) c += 1;
      else d += 1;
    }
  const double den = (a + b) * (b + d) + (a + c) * (c + d);
  if (den == 0) return 1.0;
  return 2.0 * (a * d - b * c) / den;
}

// True when the adjusted index has a zero denominator.
bool trivial_pair(const std::vector<int>& x, const std::vector<int>& y) {
  double same_x = 0, same_y = 0, pairs = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      same_x += x[i] == x[j];
      same_y += y[i] == y[j];
      pairs += 1;
    }
  return 0.5 * (same_x + same_y) - same_x * same_y / pairs == 0.0;
}

double nmi_plugin(const std::vector<int>& x, const std::vector<int>& y) {
  const double n = static_cast<double>(x.size());
  const int kx = *std::max_element(x.begin(), x.end()) + 1, ky = *std::max_element(y.begin(), y.end()) + 1;
  std::vector<double> px(kx, 0), py(ky, 0), pxy(kx * ky, 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    px[x[i]] += 1 / n;
    py[y[i]] += 1 / n;
    pxy[x[i] * ky + y[i]] += 1 / n;
  }
  double hx = 0, hy = 0, mi = 0;
  for (double p : px) hx -= p > 0 ? p * std::log(p) : 0;
  for (double p : py) hy -= p > 0 ? p * std::log(p) : 0;
  for (int a = 0; a < kx; ++a)
    for (int b = 0; b < ky; ++b) {
      const double p = pxy[a * ky + b];
      if (p > 0) mi += p * std::log(p / (px[a] * py[b]));
    }
  return hx + hy > 0 ? 2 * mi / (hx + hy) : 0.0;
}

Tensor random_probs(std::mt19937_64& g, std::size_t n, std::size_t k, bool grad = false) {
  std::normal_distribution<double> nd;
  std::vector<double> v(n * k);
  for (double& x : v) x = nd(g);
  return ad::softmax(Tensor::from({n, k}, std::move(v), grad));
}

Tensor hard_logits(const std::vector<int>& z, std::size_t k, const std::vector<int>& perm, double big = 60.0) {
  std::vector<double> v(z.size() * k, -big);
  for (std::size_t i = 0; i < z.size(); ++i) v[i * k + static_cast<std::size_t>(perm[static_cast<std::size_t>(z[i])])] = big;
  return Tensor::from({z.size(), k}, std::move(v));
}

std::vector<int> identity_perm(int k) {
  std::vector<int> p(static_cast<std::size_t>(k));
  std::iota(p.begin(), p.end(), 0);
  return p;
}

}  // namespace

TEST(SoftConfusion, PerfectAgreementIsDiagonal) {
  const std::vector<int> z{0, 0, 1, 1, 2, 2};
  const auto c = soft_confusion(one_hot(z, 3), z, 3);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b) EXPECT_EQ(c.m.at(a, b), a == b ? 2.0 : 0.0);
}

TEST(SoftConfusion, UniformSpreadsCounts) {
  const std::vector<int> z{0, 0, 0, 1, 2, 2};
  const auto c = soft_confusion(Tensor::full({6, 4}, 0.25), z, 3);
  const double counts[3] = {3, 1, 2};
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = 0; b < 3; ++b) EXPECT_NEAR(c.m.at(a, b), counts[b] / 4, 1e-15);
}

TEST(SoftConfusion, MatchesDoubleLoop) {
  std::mt19937_64 g(1);
  const Tensor p = random_probs(g, 20, 4);
  const auto z = random_labels(g, 20, 3);
  const auto c = soft_confusion(p, z, 3);
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = 0; b < 3; ++b) {
      double s = 0;
      for (std::size_t i = 0; i < 20; ++i) s += p[i * 4 + a] * (z[i] == static_cast<int>(b) ? 1.0 : 0.0);
      EXPECT_NEAR(c.m.at(a, b), s, 1e-12);
    }
}

TEST(SoftConfusion, LabelOutOfRangeThrows) {
  const std::vector<int> z{0, 3};
  EXPECT_THROW(soft_confusion(Tensor::full({2, 2}, 0.5), z, 2), std::out_of_range);
}

TEST(HardAri, HandExamples) {
  EXPECT_DOUBLE_EQ(hard_ari(std::vector<int>{0, 0, 1, 1}, std::vector<int>{1, 1, 0, 0}), 1.0);
  EXPECT_NEAR(hard_ari(std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 1, 0, 1}), -0.5, 1e-15);
}

TEST(HardAri, PairCountingOracle) {
  std::mt19937_64 g(2);
  for (int t = 0; t < 100; ++t) {
    const int n = std::uniform_int_distribution<int>(2, 30)(g);
    const auto a = random_labels(g, n, 1 + t % 5), b = random_labels(g, n, 1 + t % 4);
    EXPECT_NEAR(hard_ari(a, b), ari_by_pairs(a, b), 1e-12);
  }
}

TEST(HardAri, Errors) {
  EXPECT_THROW(hard_ari(std::vector<int>{0, 1}, std::vector<int>{0}), std::invalid_argument);
  EXPECT_THROW(hard_ari(std::vector<int>{0}, std::vector<int>{0}), std::invalid_argument);
}

TEST(HardNmi, HandExamples) {
  EXPECT_NEAR(hard_nmi(std::vector<int>{0, 0, 1, 1}, std::vector<int>{5, 5, 2, 2}), 1.0, 1e-15);
  EXPECT_NEAR(hard_nmi(std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 1, 0, 1}), 0.0, 1e-15);
  EXPECT_EQ(hard_nmi(std::vector<int>{3, 3, 3}, std::vector<int>{1, 1, 1}), 0.0);
  EXPECT_THROW(hard_nmi(std::vector<int>{0, 1}, std::vector<int>{0}), std::invalid_argument);
}

TEST(HardNmi, PluginEntropyOracle) {
  std::mt19937_64 g(3);
  for (int t = 0; t < 100; ++t) {
    const int n = std::uniform_int_distribution<int>(2, 40)(g);
    const auto a = random_labels(g, n, 2 + t % 4), b = random_labels(g, n, 2 + t % 3);
    EXPECT_NEAR(hard_nmi(a, b), nmi_plugin(a, b), 1e-12);
  }
}

TEST(HardMetrics, RelabelingInvariance) {
  std::mt19937_64 g(4);
  for (int t = 0; t < 20; ++t) {
    const auto a = random_labels(g, 25, 4), b = random_labels(g, 25, 3);
    auto relabel = identity_perm(4);
    std::shuffle(relabel.begin(), relabel.end(), g);
    std::vector<int> a2(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) a2[i] = relabel[static_cast<std::size_t>(a[i])] + 10;
    EXPECT_NEAR(hard_ari(a, b), hard_ari(a2, b), 1e-12);
    EXPECT_NEAR(hard_nmi(a, b), hard_nmi(a2, b), 1e-12);
  }
}

TEST(SoftAri, OneHotGivesOne) {
  std::mt19937_64 g(5);
  for (int t = 0; t < 20; ++t) {
    auto z = random_labels(g, 30, 4);
    z[0] = 0;
    z[1] = 1;
    const int k = label_count(z);
    EXPECT_NEAR(soft_ari(SoftPartition::from_probs(one_hot(z, k)), z).item(), 1.0, 1e-10);
    EXPECT_NEAR(soft_nmi(SoftPartition::from_probs(one_hot(z, k)), z).item(), 1.0, 1e-8);
  }
}

TEST(SoftAri, OneHotEqualsHardAri) {
  std::mt19937_64 g(6);
  for (int t = 0; t < 200; ++t) {
    const int n = std::uniform_int_distribution<int>(2, 50)(g);
    const int k = std::uniform_int_distribution<int>(2, 6)(g);
    auto z = random_labels(g, n, k);
    const auto pred = random_labels(g, n, k);
    z[0] = 0;
    z[1] = 1;
    // Both partitions trivial: the chance correction is 0/0 and the two
    // functions use different conventions (1 for hard, 0 for soft).
    std::vector<int> zz(z.begin(), z.end());
    if (trivial_pair(pred, zz)) continue;
    const double soft = soft_ari(SoftPartition::from_probs(one_hot(pred, k)), z).item();
    EXPECT_NEAR(soft, hard_ari(pred, z), 1e-10);
  }
}

TEST(SoftAri, UniformStraightLineOracle) {
  const std::vector<int> z{0, 0, 1, 1};
  // m_kl = 1 everywhere, rows 2, cols 2, N = 4.
  const double index = 4 * (1 * 0 / 2.0);
  const double sa = 2 * (2 * 1 / 2.0), sb = sa;
  const double expected = sa * sb / (4 * 3 / 2.0);
  const double oracle = (index - expected) / (0.5 * (sa + sb) - expected);
  EXPECT_NEAR(soft_ari(SoftPartition::from_probs(Tensor::full({4, 2}, 0.5)), z).item(), oracle, 1e-12);
}

TEST(SoftNmi, UniformIsZero) {
  const std::vector<int> z{0, 1, 2, 0, 1, 2};
  EXPECT_NEAR(soft_nmi(SoftPartition::from_probs(Tensor::full({6, 3}, 1.0 / 3)), z).item(), 0.0, 1e-8);
}

TEST(SoftMetrics, GradientMatchesFiniteDifferences) {
  std::mt19937_64 g(7);
  const auto z = random_labels(g, 8, 3);
  std::normal_distribution<double> nd;
  std::vector<double> v(24);
  for (double& x : v) x = nd(g);
  const Tensor logits = Tensor::from({8, 3}, v);
  const auto nmi = ad::finite_difference_check(
      [&](const Tensor& l) { return soft_nmi(SoftPartition::from_logits(l), z); }, logits, 1e-5, 1e-4);
  EXPECT_TRUE(nmi.pass) << nmi.max_rel_err;
  const auto ari = ad::finite_difference_check(
      [&](const Tensor& l) { return soft_ari(SoftPartition::from_logits(l), z); }, logits, 1e-5, 1e-4);
  EXPECT_TRUE(ari.pass) << ari.max_rel_err;
  const auto acc = ad::finite_difference_check(
      [&](const Tensor& l) { return matching_softacc_loss(SoftPartition::from_logits(l), z, 0.5, 50, 0.0); }, logits,
      1e-5, 1e-3);
  EXPECT_TRUE(acc.pass) << acc.max_rel_err;
}

TEST(SoftMetrics, ColumnPermutationInvariance) {
  std::mt19937_64 g(8);
  for (int t = 0; t < 10; ++t) {
    const auto z = random_labels(g, 15, 3);
    const Tensor p = random_probs(g, 15, 4);
    auto perm = identity_perm(4);
    std::shuffle(perm.begin(), perm.end(), g);
    std::vector<double> q(p.numel());
    for (std::size_t i = 0; i < 15; ++i)
      for (std::size_t k = 0; k < 4; ++k) q[i * 4 + static_cast<std::size_t>(perm[k])] = p[i * 4 + k];
    const Tensor pp = Tensor::from({15, 4}, q);
    const auto a = SoftPartition::from_probs(p), b = SoftPartition::from_probs(pp);
    EXPECT_NEAR(soft_ari(a, z).item(), soft_ari(b, z).item(), 1e-8);
    EXPECT_NEAR(soft_nmi(a, z).item(), soft_nmi(b, z).item(), 1e-8);
    EXPECT_NEAR(matching_ce_loss(a, z).item(), matching_ce_loss(b, z).item(), 1e-8);
    EXPECT_NEAR(matching_softacc_loss(a, z).item(), matching_softacc_loss(b, z).item(), 1e-8);
  }
}

TEST(Hungarian, HandExamples) {
  const auto r = hungarian({{5, 1}, {2, 6}});
  EXPECT_EQ(r.permutation, (std::vector<int>{0, 1}));
  EXPECT_EQ(r.score, 11.0);
  std::vector<std::vector<double>> eye(5, std::vector<double>(5, 0.0));
  for (int i = 0; i < 5; ++i) eye[i][i] = 1;
  EXPECT_EQ(hungarian(eye).score, 5.0);
}

TEST(Hungarian, BruteForceOracle) {
  std::mt19937_64 g(9);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int t = 0; t < 100; ++t) {
    const int k = 1 + t % 6;
    std::vector<std::vector<double>> m(k, std::vector<double>(k));
    for (auto& row : m)
      for (double& v : row) v = u(g);
    auto perm = identity_perm(k);
    double best = -1e300;
    do {
      double s = 0;
      for (int i = 0; i < k; ++i) s += m[i][perm[i]];
      best = std::max(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    const auto r = hungarian(m);
    EXPECT_NEAR(r.score, best, 1e-10);
    auto sorted = r.permutation;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(sorted, identity_perm(k));
  }
}

TEST(Hungarian, TieBreakIsLexicographic) {
  const auto r = hungarian({{1, 1}, {1, 1}});
  EXPECT_EQ(r.permutation, (std::vector<int>{0, 1}));
}

TEST(MatchingCe, PerfectLogitsGiveZero) {
  const std::vector<int> z{0, 1, 2, 0, 1, 2};
  const double loss = matching_ce_loss(SoftPartition::from_logits(hard_logits(z, 3, identity_perm(3))), z).item();
  EXPECT_NEAR(loss, 0.0, 1e-12);
  const double permuted = matching_ce_loss(SoftPartition::from_logits(hard_logits(z, 3, {2, 0, 1})), z).item();
  EXPECT_NEAR(permuted, loss, 1e-12);
}

TEST(MatchingCe, EnumerationOracle) {
  std::mt19937_64 g(10);
  std::normal_distribution<double> nd;
  const std::vector<int> z{0, 1, 1, 0, 1, 0};
  std::vector<double> l(12);
  for (double& x : l) x = nd(g);
  const Tensor logits = Tensor::from({6, 2}, l);
  const Tensor p = ad::softmax(logits);
  // Stage 1: choose the matching with the larger soft agreement.
  double keep = 0, swap = 0;
  for (std::size_t i = 0; i < 6; ++i) {
    keep += p[i * 2 + static_cast<std::size_t>(z[i])];
    swap += p[i * 2 + static_cast<std::size_t>(1 - z[i])];
  }
  const bool swapped = swap > keep;
  // Stage 2: mean cross-entropy against remapped targets.
  double ce = 0;
  for (std::size_t i = 0; i < 6; ++i) {
    const std::size_t t = static_cast<std::size_t>(swapped ? 1 - z[i] : z[i]);
    const double lse = std::log(std::exp(l[i * 2]) + std::exp(l[i * 2 + 1]));
    ce += lse - l[i * 2 + t];
  }
  EXPECT_NEAR(matching_ce_loss(SoftPartition::from_logits(logits), z).item(), ce / 6, 1e-12);
}

TEST(Sinkhorn, DoublyStochasticFixedPoint) {
  const Tensor m = Tensor::from({3, 3}, {0.5, 0.3, 0.2, 0.2, 0.5, 0.3, 0.3, 0.2, 0.5});
  const Tensor s = sinkhorn(m, 1.0);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(s[i], m[i], 1e-3);
}

TEST(Sinkhorn, SharpensToHungarianPermutation) {
  const std::vector<std::vector<double>> rows{{1, 9, 2}, {8, 1, 1}, {2, 1, 7}};
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  const Tensor s = sinkhorn(Tensor::from({3, 3}, flat), 0.05);
  const auto match = hungarian(rows);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      EXPECT_NEAR(s.at(i, j), match.permutation[i] == static_cast<int>(j) ? 1.0 : 0.0, 1e-2);
}

TEST(Sinkhorn, MarginalsAreOne) {
  std::mt19937_64 g(11);
  std::uniform_real_distribution<double> u(0, 5);
  for (int t = 0; t < 10; ++t) {
    std::vector<double> v(16);
    for (double& x : v) x = u(g);
    const Tensor s = sinkhorn(Tensor::from({4, 4}, v), 0.5);
    for (std::size_t i = 0; i < 4; ++i) {
      double r = 0, c = 0;
      for (std::size_t j = 0; j < 4; ++j) r += s.at(i, j), c += s.at(j, i);
      EXPECT_NEAR(r, 1.0, 1e-4);
      EXPECT_NEAR(c, 1.0, 1e-4);
    }
  }
}

TEST(Sinkhorn, Errors) {
  EXPECT_THROW(sinkhorn(Tensor::zeros({2, 2})), std::invalid_argument);
  EXPECT_THROW(sinkhorn(Tensor::full({2, 2}, 1.0), 0.0), std::invalid_argument);
  EXPECT_THROW(sinkhorn(Tensor::full({2, 2}, 1.0), 1.0, 0), std::invalid_argument);
}

TEST(MatchingSoftAcc, PerfectIsNearZero) {
  const std::vector<int> z{0, 1, 2, 2, 1, 0};
  EXPECT_LE(matching_softacc_loss(SoftPartition::from_probs(one_hot(z, 3)), z).item(), 0.01);
}

TEST(MatchingSoftAcc, UniformClosedForm) {
  const std::vector<int> z{0, 0, 0, 1, 2, 2, 3};
  EXPECT_NEAR(matching_softacc_loss(SoftPartition::from_probs(Tensor::full({7, 4}, 0.25)), z).item(), 0.75, 1e-6);
}

TEST(KMae, Arithmetic) {
  EXPECT_EQ(k_mae(std::vector<int>{4}, std::vector<int>{3}), 1.0);
  EXPECT_EQ(k_mae(std::vector<int>{2, 3}, std::vector<int>{2, 3}), 0.0);
  EXPECT_DOUBLE_EQ(k_mae(std::vector<int>{2, 5, 9}, std::vector<int>{3, 5, 7}), 1.0);
  EXPECT_DOUBLE_EQ(k_median_ae(std::vector<int>{2, 5, 9}, std::vector<int>{3, 5, 7}), 1.0);
  EXPECT_THROW(k_mae(std::vector<int>{}, std::vector<int>{}), std::invalid_argument);
}

TEST(Quantile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(median({3, 1, 2}), 2.0);
  EXPECT_DOUBLE_EQ(median({4, 1, 2, 3}), 2.5);
}

TEST(MedianRank, SingleMethod) {
  const auto r = median_rank({{0.3, 0.9, 0.1}}, true);
  EXPECT_EQ(r[0].ranks, (std::vector<double>{1, 1, 1}));
  EXPECT_EQ(r[0].median_rank, 1.0);
}

TEST(MedianRank, StrictlyBetter) {
  const auto r = median_rank({{0.9, 0.8}, {0.1, 0.2}}, true);
  EXPECT_EQ(r[0].median_rank, 1.0);
  EXPECT_EQ(r[1].median_rank, 2.0);
  const auto lower = median_rank({{0.9, 0.8}, {0.1, 0.2}}, false);
  EXPECT_EQ(lower[0].median_rank, 2.0);
}

TEST(MedianRank, TiesAveraged) {
  const auto r = median_rank({{0.5, 0.9}, {0.5, 0.1}, {0.2, 0.5}}, true);
  EXPECT_EQ(r[0].ranks[0], 1.5);
  EXPECT_EQ(r[1].ranks[0], 1.5);
  EXPECT_EQ(r[2].ranks[0], 3.0);
  EXPECT_EQ(r[2].ranks[1], 2.0);
  EXPECT_THROW(median_rank({{0.1, std::nan("")}}, true), std::invalid_argument);
}
