#include <amoclust/autodiff/gradcheck.hpp>
#include <amoclust/model/layers.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace amoclust;

namespace {

Tensor randn(ad::Shape s, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> nd;
  std::vector<double> v(ad::numel_of(s));
  for (double& x : v) x = nd(g);
  return Tensor::from(std::move(s), std::move(v));
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  const std::size_t cols = x.dim(1);
  std::vector<double> v(x.numel());
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t c = 0; c < cols; ++c) v[i * cols + c] = x[perm[i] * cols + c];
  return Tensor::from(x.shape(), std::move(v));
}

MabParams wide_mab(std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  return MabParams::init(d, 2, rng, 0.5);
}

}  // namespace

TEST(Init, TruncatedNormalBounded) {
  Rng rng(1);
  const Tensor t = truncated_normal({1000}, 0.02, rng);
  double sq = 0;
  for (double v : t.data()) {
    EXPECT_LE(std::abs(v), 0.04);
    sq += v * v;
  }
  // Variance of a standard normal truncated at 2 is about 0.774.
  EXPECT_NEAR(std::sqrt(sq / 1000), 0.02 * std::sqrt(0.774), 0.002);
  EXPECT_TRUE(t.requires_grad());
}

TEST(Linear, MatchesManualProduct) {
  Rng rng(2);
  Linear l = Linear::init(3, 2, 1.0, rng);
  l.b.mutable_data()[1] = 0.5;
  const Tensor x = randn({4, 3}, 3);
  const Tensor y = l(x);
  ASSERT_EQ(y.shape(), (ad::Shape{4, 2}));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t o = 0; o < 2; ++o) {
      double s = l.b[o];
      for (std::size_t k = 0; k < 3; ++k) s += x[i * 3 + k] * l.w[k * 2 + o];
      EXPECT_NEAR(y[i * 2 + o], s, 1e-12);
    }
}

TEST(Mab, OutputShape) {
  const MabParams p = wide_mab(8, 4);
  EXPECT_EQ(mab_pre(randn({5, 8}, 5), randn({3, 8}, 6), p, 2).shape(), (ad::Shape{5, 8}));
  EXPECT_EQ(mab_pre(randn({2, 5, 8}, 5), randn({2, 3, 8}, 6), p, 4).shape(), (ad::Shape{2, 5, 8}));
}

TEST(Mab, ShapeErrors) {
  const MabParams p = wide_mab(8, 7);
  EXPECT_THROW(mab_pre(randn({5, 8}, 1), randn({3, 8}, 2), p, 3), ad::ShapeError);
  EXPECT_THROW(mab_pre(randn({5, 6}, 1), randn({3, 6}, 2), p, 2), ad::ShapeError);
  EXPECT_THROW(mab_pre(randn({5, 8}, 1), randn({2, 3, 8}, 2), p, 2), ad::ShapeError);
}

TEST(Mab, QueryRowEquivariance) {
  const MabParams p = wide_mab(8, 8);
  const Tensor q = randn({6, 8}, 9), kv = randn({4, 8}, 10);
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  const Tensor a = permute_rows(mab_pre(q, kv, p, 2), perm);
  const Tensor b = mab_pre(permute_rows(q, perm), kv, p, 2);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
}

TEST(Mab, ContextRowInvariance) {
  const MabParams p = wide_mab(8, 11);
  const Tensor q = randn({3, 8}, 12), kv = randn({5, 8}, 13);
  const Tensor a = mab_pre(q, kv, p, 4);
  const Tensor b = mab_pre(q, permute_rows(kv, {4, 2, 0, 3, 1}), p, 4);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
}

TEST(Mab, SelfAttentionEquivariance) {
  const MabParams p = wide_mab(8, 14);
  const Tensor x = randn({5, 8}, 15);
  const std::vector<std::size_t> perm{2, 4, 1, 0, 3};
  const Tensor a = permute_rows(self_attention(x, p, 2), perm);
  const Tensor b = self_attention(permute_rows(x, perm), p, 2);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
}

TEST(Mab, SingleContextRowCopiesValue) {
  // With one key the attention weights are exactly 1.
  MabParams p = wide_mab(4, 16);
  const Tensor q = randn({3, 4}, 17), kv = randn({1, 4}, 18);
  const Tensor lx = p.ln1(q), ly = p.ln1(kv);
  const Tensor attn = multihead_attention(lx, ly, p, 2);
  const Tensor expect = p.o(p.v(ly));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(attn[i * 4 + c], expect[c], 1e-12);
}

TEST(Mab, GradientMatchesFiniteDifferences) {
  const MabParams p = wide_mab(8, 19);
  const Tensor kv = randn({3, 8}, 20), w = randn({3, 8}, 21);
  const auto rep = ad::finite_difference_check([&](const Tensor& x) { return ad::sum(mab_pre(x, kv, p, 2) * w); },
                                               randn({3, 8}, 22), 1e-6, 1e-4);
  EXPECT_TRUE(rep.pass) << rep.max_rel_err;
  const auto ctx = ad::finite_difference_check([&](const Tensor& y) { return ad::sum(mab_pre(kv, y, p, 2) * w); },
                                               randn({3, 8}, 23), 1e-6, 1e-4);
  EXPECT_TRUE(ctx.pass) << ctx.max_rel_err;
}

TEST(Audit, RecordsScoreShapes) {
  const MabParams p = wide_mab(8, 24);
  AttentionAudit audit;
  mab_pre(randn({2, 5, 8}, 25), randn({2, 3, 8}, 26), p, 2);
  ASSERT_EQ(audit.calls().size(), 1u);
  EXPECT_EQ(audit.calls()[0].batch, 2u);
  EXPECT_TRUE(audit.saw(5, 3));
  EXPECT_EQ(audit.total_scores(), 30u);
}

TEST(Audit, InnermostScopeReceives) {
  const MabParams p = wide_mab(8, 27);
  AttentionAudit outer;
  {
    AttentionAudit inner;
    self_attention(randn({4, 8}, 28), p, 2);
    EXPECT_EQ(inner.calls().size(), 1u);
  }
  EXPECT_TRUE(outer.calls().empty());
  self_attention(randn({4, 8}, 28), p, 2);
  EXPECT_EQ(outer.calls().size(), 1u);
}

TEST(Visit, NamesAreQualified) {
  MabParams p = wide_mab(4, 29);
  std::vector<std::string> names;
  p.visit("blk", [&](const std::string& n, Tensor&) { names.push_back(n); });
  EXPECT_EQ(names.size(), 16u);
  EXPECT_EQ(names.front(), "blk.ln1.gamma");
  EXPECT_EQ(names.back(), "blk.ffn.l2.b");
}
