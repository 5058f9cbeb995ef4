#include <amoclust/autodiff/gradcheck.hpp>
#include <amoclust/model/cin.hpp>
#include <amoclust/train/trainer.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

using namespace amoclust;

namespace {

Tensor random_probs(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> nd;
  std::vector<double> v(n * k);
  for (double& x : v) x = 2 * nd(g);
  return ad::softmax(Tensor::from({n, k}, std::move(v)));
}

Fingerprint random_fingerprint(std::size_t k_max, std::uint64_t seed, std::size_t n = 20) {
  std::vector<Tensor> per_k;
  for (std::size_t k = 2; k <= k_max; ++k) per_k.push_back(gram_fingerprint(random_probs(n, k, seed + k)));
  return Fingerprint::from(std::move(per_k));
}

Tensor permute_cols(const Tensor& p, const std::vector<std::size_t>& perm) {
  const std::size_t n = p.dim(0), k = p.dim(1);
  std::vector<double> v(p.numel());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) v[i * k + perm[c]] = p[i * k + c];
  return Tensor::from(p.shape(), std::move(v));
}

// Ordinal CIN whose MLP output is exactly `score`: zero weights, bias = score.
CinParams constant_score_cin(std::size_t k_max, double score, std::vector<double> delta) {
  Rng rng(1);
  CinParams c = CinParams::init(k_max, CinHead::kOrdinal, rng, 8);
  for (double& v : c.l3.w.mutable_data()) v = 0.0;
  c.l3.b.mutable_data()[0] = score;
  std::copy(delta.begin(), delta.end(), c.delta.mutable_data().begin());
  return c;
}

double softplus(double x) { return std::log1p(std::exp(x)); }

}  // namespace

TEST(Fingerprint, SingleClusterCollapse) {
  const Tensor p = Tensor::from({4, 2}, {1, 0, 1, 0, 1, 0, 1, 0});
  const Tensor g = gram_fingerprint(p);
  ASSERT_EQ(g.numel(), 3u);
  EXPECT_EQ(g[0], 1.0);
  EXPECT_EQ(g[1], 0.0);
  EXPECT_EQ(g[2], 0.0);
}

TEST(Fingerprint, UniformIsConstant) {
  for (std::size_t k = 2; k <= 6; ++k) {
    const Tensor g = gram_fingerprint(Tensor::full({9, k}, 1.0 / static_cast<double>(k)));
    ASSERT_EQ(g.numel(), triangular(k));
    for (double v : g.data()) EXPECT_NEAR(v, 1.0 / static_cast<double>(k * k), 1e-15);
  }
}

TEST(Fingerprint, ConcatWidth) {
  EXPECT_EQ(fingerprint_width(10), 219u);
  EXPECT_EQ(random_fingerprint(10, 2).concat.shape(), (ad::Shape{1, 219}));
}

TEST(Fingerprint, SortedRangeAndDiagonalMass) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t k = 2 + seed % 6;
    const Tensor g = gram_fingerprint(random_probs(15, k, seed));
    double diag = 0;
    for (std::size_t i = 0; i < g.numel(); ++i) {
      EXPECT_GE(g[i], 0.0);
      EXPECT_LE(g[i], 1.0);
      if (i < k) diag += g[i];
      if (i > 0 && i != k) EXPECT_GE(g[i - 1], g[i]);
    }
    EXPECT_LE(diag, 1.0 + 1e-6);
  }
}

TEST(Fingerprint, GramOracle) {
  const Tensor p = random_probs(7, 3, 3);
  std::vector<double> diag, off;
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = a; b < 3; ++b) {
      double s = 0;
      for (std::size_t i = 0; i < 7; ++i) s += p[i * 3 + a] * p[i * 3 + b];
      (a == b ? diag : off).push_back(s / 7);
    }
  std::sort(diag.rbegin(), diag.rend());
  std::sort(off.rbegin(), off.rend());
  diag.insert(diag.end(), off.begin(), off.end());
  const Tensor g = gram_fingerprint(p);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(g[i], diag[i], 1e-15);
}

TEST(Fingerprint, RowAndColumnPermutationInvariance) {
  const Tensor p = random_probs(10, 4, 4);
  const Tensor a = gram_fingerprint(p);
  const Tensor cols = gram_fingerprint(permute_cols(p, {2, 0, 3, 1}));
  std::vector<double> rv(p.numel());
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t c = 0; c < 4; ++c) rv[i * 4 + c] = p[(9 - i) * 4 + c];
  const Tensor rows = gram_fingerprint(Tensor::from({10, 4}, rv));
  for (std::size_t i = 0; i < a.numel(); ++i) {
    EXPECT_EQ(a[i], cols[i]);
    EXPECT_NEAR(a[i], rows[i], 1e-15);
  }
}

TEST(CinForward, PosteriorSumsToOneAndIsInvariant) {
  Rng rng(5);
  const CinParams c = CinParams::init(6, CinHead::kCategorical, rng, 32);
  std::vector<Tensor> a, b;
  for (std::size_t k = 2; k <= 6; ++k) {
    const Tensor p = random_probs(12, k, 50 + k);
    std::vector<std::size_t> perm(k);
    std::iota(perm.rbegin(), perm.rend(), 0);
    a.push_back(gram_fingerprint(p));
    b.push_back(gram_fingerprint(permute_cols(p, perm)));
  }
  const CinOutput oa = cin_forward(Fingerprint::from(a), c), ob = cin_forward(Fingerprint::from(b), c);
  double sum = 0;
  for (std::size_t j = 0; j < 5; ++j) {
    sum += oa.posterior[j];
    EXPECT_NEAR(oa.posterior[j], ob.posterior[j], 1e-8);
  }
  EXPECT_NEAR(sum, 1.0, 1e-8);
}

TEST(CinForward, WidthMismatchThrows) {
  Rng rng(6);
  const CinParams c = CinParams::init(6, CinHead::kCategorical, rng, 8);
  EXPECT_THROW(cin_forward(random_fingerprint(5, 7), c), ad::ShapeError);
}

TEST(CinParams, ThreeLayerWidths) {
  Rng rng(8);
  CinParams c = CinParams::init(10, CinHead::kCategorical, rng);
  EXPECT_EQ(c.l1.in(), 219u);
  EXPECT_EQ(c.l1.out(), 256u);
  EXPECT_EQ(c.l2.out(), 256u);
  EXPECT_EQ(c.l3.out(), 9u);
  EXPECT_EQ(param_names(c).size(), 6u);
  CinParams o = CinParams::init(10, CinHead::kOrdinal, rng);
  EXPECT_EQ(o.l3.out(), 1u);
  EXPECT_EQ(o.delta.numel(), 8u);
  EXPECT_EQ(std::exp(o.log_s.item()), 1.0);
}

TEST(ArgmaxK, OneHotAndTies) {
  EXPECT_EQ(argmax_k(Tensor::from({1, 4}, {0, 0, 1, 0})), 4u);
  EXPECT_EQ(argmax_k(Tensor::from({1, 4}, {0.1, 0.4, 0.1, 0.4})), 3u);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const std::size_t k = argmax_k(random_probs(1, 9, s));
    EXPECT_GE(k, 2u);
    EXPECT_LE(k, 10u);
  }
}

TEST(Ordinal, ThresholdsAreCumulativeSoftplus) {
  const CinParams c = constant_score_cin(6, 0.0, {-1.0, 0.5, 2.0, -3.0});
  const OrdinalOutput o = ordinal_forward(random_fingerprint(6, 9), c);
  double acc = 0;
  const double deltas[4] = {-1.0, 0.5, 2.0, -3.0};
  for (std::size_t j = 0; j < 4; ++j) {
    acc += softplus(deltas[j]);
    EXPECT_NEAR(o.thresholds[j], acc, 1e-12);
    if (j > 0) EXPECT_GE(o.thresholds[j], o.thresholds[j - 1]);
    EXPECT_NEAR(o.eta[j], -acc, 1e-12);
  }
}

TEST(Ordinal, CountingRule) {
  const Fingerprint fp = random_fingerprint(6, 10);
  EXPECT_EQ(ordinal_predict_k(fp, constant_score_cin(6, -5.0, {0, 0, 0, 0})), 2u);
  EXPECT_EQ(ordinal_predict_k(fp, constant_score_cin(6, 50.0, {0, 0, 0, 0})), 6u);
  // thresholds ln2 * (1, 2, 3, 4)
  EXPECT_EQ(ordinal_predict_k(fp, constant_score_cin(6, 1.5, {0, 0, 0, 0})), 4u);
  EXPECT_EQ(ordinal_count_k(Tensor::from({1, 3}, {-1, -1, -1})), 2u);
  EXPECT_EQ(ordinal_count_k(Tensor::from({1, 3}, {1, 1, 0})), 5u);
}

TEST(Ordinal, MonotoneInScore) {
  const Fingerprint fp = random_fingerprint(8, 11);
  std::size_t prev = 2;
  for (double s = -3; s <= 8; s += 0.25) {
    const std::size_t k = ordinal_predict_k(fp, constant_score_cin(8, s, {0.3, -0.5, 1.0, 0.0, -2.0, 0.7}));
    EXPECT_GE(k, prev);
    prev = k;
  }
  EXPECT_EQ(prev, 8u);
}

TEST(Ordinal, WrongHeadThrows) {
  Rng rng(12);
  const CinParams cat = CinParams::init(5, CinHead::kCategorical, rng, 8);
  const CinParams ord = CinParams::init(5, CinHead::kOrdinal, rng, 8);
  const Fingerprint fp = random_fingerprint(5, 13);
  EXPECT_THROW(ordinal_forward(fp, cat), std::logic_error);
  EXPECT_THROW(cin_forward(fp, ord), std::logic_error);
  EXPECT_THROW(CinParams::init(2, CinHead::kOrdinal, rng), std::invalid_argument);
}

TEST(Losses, CrossEntropyMatchesLogSoftmax) {
  const Tensor logits = Tensor::from({1, 4}, {0.3, -1.0, 2.0, 0.5});
  double lse = 0;
  for (double v : logits.data()) lse += std::exp(v);
  lse = std::log(lse);
  EXPECT_NEAR(cin_ce_loss(logits, 4).item(), lse - 2.0, 1e-12);
  EXPECT_THROW(cin_ce_loss(logits, 6), std::out_of_range);
  EXPECT_THROW(cin_ce_loss(logits, 1), std::out_of_range);
}

TEST(Losses, OrdinalTargetsAndBce) {
  EXPECT_EQ(ordinal_targets(4, 6), (std::vector<double>{1, 1, 0, 0}));
  EXPECT_EQ(ordinal_targets(2, 6), (std::vector<double>{0, 0, 0, 0}));
  EXPECT_EQ(ordinal_targets(6, 6), (std::vector<double>{1, 1, 1, 1}));
  const std::vector<double> eta{0.5, -0.2, 1.5, -2.0};
  const std::vector<double> y = ordinal_targets(3, 6);
  double bce = 0;
  for (std::size_t j = 0; j < 4; ++j) {
    const double p = 1.0 / (1.0 + std::exp(-eta[j]));
    bce -= y[j] * std::log(p) + (1 - y[j]) * std::log(1 - p);
  }
  EXPECT_NEAR(cin_ordinal_loss(Tensor::from({1, 4}, eta), 3, 6).item(), bce / 4, 1e-12);
}

TEST(Losses, CinGradientMatchesFiniteDifferences) {
  Rng rng(14);
  const CinParams c = CinParams::init(5, CinHead::kCategorical, rng, 16);
  const Fingerprint fp = random_fingerprint(5, 15);
  const auto rep = ad::finite_difference_check(
      [&](const Tensor& x) { return cin_ce_loss(c.mlp(x), 3); }, fp.concat, 1e-6, 1e-4);
  EXPECT_TRUE(rep.pass) << rep.max_rel_err;
}

TEST(PredictK, SweepMatchesManualArgmax) {
  PinHyper h;
  h.d = 16;
  h.d_tok = 8;
  h.l_enc = 1;
  h.l_dec = 1;
  h.heads = 2;
  h.k_max = 5;
  Rng rng(16);
  const Model m = Model::init(h, CinLossKind::kCe, rng);
  Dataset ds;
  ds.x = Eigen::MatrixXd::Random(20, 3);
  ds.col_kind.assign(3, ColumnKind::kNumeric);
  const KPrediction pred = predict_k(ds, m.pin, m.cin);
  ASSERT_EQ(pred.posterior.size(), 4u);
  const std::size_t best =
      static_cast<std::size_t>(std::max_element(pred.posterior.begin(), pred.posterior.end()) - pred.posterior.begin());
  EXPECT_EQ(pred.k, best + 2);
  EXPECT_NEAR(std::accumulate(pred.posterior.begin(), pred.posterior.end(), 0.0), 1.0, 1e-12);
}
