#include <amoclust/train/optim.hpp>
#include <amoclust/train/trainer.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace amoclust;

namespace {

PinHyper tiny_hyper() {
  PinHyper h;
  h.d = 8;
  h.d_tok = 4;
  h.l_enc = 1;
  h.l_dec = 1;
  h.heads = 2;
  h.k_max = 4;
  return h;
}

TrainConfig tiny_config(long steps = 3) {
  TrainConfig c;
  c.steps = steps;
  c.batch_tasks = 2;
  c.warmup_steps = 1;
  c.seed = 11;
  c.threads = 1;
  c.prior = PriorRanges::desk();
  c.prior.n_min = 20;
  c.prior.n_max = 30;
  c.prior.d_max = 3;
  c.prior.k_max = 4;
  return c;
}

bool same(const GradSet& a, const GradSet& b, double tol) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j)
      if (std::abs(a[i][j] - b[i][j]) > tol) return false;
  return true;
}

}  // namespace

TEST(Schedule, PaperAnchors) {
  const Schedule s{10000, 2000, 1e-4};
  EXPECT_EQ(lr_at(0, s), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(2000, s), 1e-4);
  EXPECT_LE(lr_at(10000, s), 1e-6 * 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(1000, s), 0.5e-4);
  EXPECT_NEAR(lr_at(6000, s), 0.5e-4, 1e-15);
}

TEST(Schedule, ContinuousAtJunction) {
  const Schedule s{1000, 50, 1e-3};
  const double left = s.peak_lr * 49.999999 / 50;
  EXPECT_NEAR(lr_at(50, s), s.peak_lr, 1e-12);
  EXPECT_NEAR(lr_at(50, s), left, 1e-9);
  const double after = 0.5 * s.peak_lr * (1 + std::cos(std::numbers::pi * 1.0 / 950));
  EXPECT_NEAR(lr_at(51, s), after, 1e-15);
}

TEST(Schedule, RangeErrors) {
  const Schedule s{100, 10, 1e-3};
  EXPECT_THROW(lr_at(-1, s), std::out_of_range);
  EXPECT_THROW(lr_at(101, s), std::out_of_range);
  EXPECT_THROW(lr_at(0, Schedule{10, 20, 1e-3}), std::invalid_argument);
}

TEST(AdamW, ZeroGradientOnlyDecays) {
  Tensor w = Tensor::from({2, 2}, {1.0, -2.0, 3.0, 0.5}, true);
  Tensor b = Tensor::from({2}, {0.7, -0.1}, true);
  AdamW opt(0.1);
  const ParamRefs ps{&w, &b};
  opt.step(ps, zero_grads(ps), 0.01);
  EXPECT_EQ(w[0], 1.0 * (1 - 0.01 * 0.1));
  EXPECT_EQ(w[1], -2.0 * (1 - 0.01 * 0.1));
  EXPECT_EQ(b[0], 0.7);
  EXPECT_EQ(b[1], -0.1);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  Tensor x = Tensor::from({3}, {0.0, 0.0, 0.0}, true);
  AdamW opt(0.0);
  opt.step({&x}, {{2.0, -0.5, 0.0}}, 0.1);
  EXPECT_NEAR(x[0], -0.1, 1e-7);
  EXPECT_NEAR(x[1], 0.1, 1e-7);
  EXPECT_EQ(x[2], 0.0);
  EXPECT_EQ(opt.step_count(), 1);
  EXPECT_NEAR(opt.first_moment()[0][0], 0.2, 1e-15);
  EXPECT_NEAR(opt.second_moment()[0][0], 0.004, 1e-15);
}

TEST(AdamW, ShapeMismatchThrows) {
  Tensor x = Tensor::from({3}, {0.0, 0.0, 0.0}, true);
  AdamW opt;
  EXPECT_THROW(opt.step({&x}, {{1.0}}, 0.1), std::invalid_argument);
  EXPECT_THROW(opt.step({&x}, {}, 0.1), std::invalid_argument);
}

TEST(Clip, RescalesAboveThreshold) {
  GradSet g{{3.0}, {4.0}};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(global_norm(g), 1.0, 1e-15);
  GradSet small{{0.3}, {0.4}};
  clip_global_norm(small, 1.0);
  EXPECT_EQ(small[0][0], 0.3);
}

TEST(PinLoss, PerfectPredictions) {
  const std::vector<int> z{0, 0, 1, 1, 2, 2};
  const Tensor oh = one_hot(z, 3);
  EXPECT_NEAR(pin_loss(SoftPartition::from_probs(oh), z, PinLossKind::kSoftAri).item(), -1.0, 1e-12);
  std::vector<double> l(18, -80.0);
  for (std::size_t i = 0; i < 6; ++i) l[i * 3 + static_cast<std::size_t>(z[i])] = 80.0;
  EXPECT_NEAR(pin_loss(SoftPartition::from_logits(Tensor::from({6, 3}, l)), z, PinLossKind::kMatchCe).item(), 0.0, 1e-12);
  EXPECT_NEAR(pin_loss(SoftPartition::from_probs(oh), z, PinLossKind::kSoftNmi).item(), 0.0, 1e-8);
  EXPECT_THROW(parse_pin_loss("softari2"), std::invalid_argument);
}

TEST(CinLoss, Anchors) {
  EXPECT_NEAR(cin_ce_loss(Tensor::zeros({1, 9}), 5).item(), std::log(9.0), 1e-12);
  EXPECT_NEAR(std::log(9.0), 2.1972, 1e-4);
  EXPECT_NEAR(cin_ce_loss(Tensor::from({1, 3}, {-1e3, 1e3, -1e3}), 3).item(), 0.0, 1e-12);
  for (double y : ordinal_targets(2, 10)) EXPECT_EQ(y, 0.0);
}

TEST(Loss, FiniteAtRandomInitForEveryKind) {
  const TrainConfig base = tiny_config();
  const auto batch = sample_batch(base, 0);
  Rng rng(3);
  for (PinLossKind pk : {PinLossKind::kSoftAri, PinLossKind::kSoftNmi, PinLossKind::kMatchCe, PinLossKind::kMatchSoftAcc})
    for (CinLossKind ck : {CinLossKind::kCe, CinLossKind::kOrdinal}) {
      TrainConfig c = base;
      c.pin_loss_kind = pk;
      c.cin_loss_kind = ck;
      const Model m = Model::init(tiny_hyper(), ck, rng);
      const BatchGradients g = batch_gradients(batch, m, c);
      EXPECT_TRUE(std::isfinite(g.pin_loss) && std::isfinite(g.cin_loss)) << to_string(pk) << "/" << to_string(ck);
      EXPECT_TRUE(std::isfinite(global_norm(g.pin)) && std::isfinite(global_norm(g.cin)));
    }
}

TEST(Decoupling, PinGradientIgnoresCinLoss) {
  const TrainConfig c = tiny_config();
  const auto batch = sample_batch(c, 0);
  Rng rng(4);
  const Model m = Model::init(tiny_hyper(), CinLossKind::kCe, rng);
  const BatchGradients both = batch_gradients(batch, m, c, LossTerms::kBoth);
  const BatchGradients pin_only = batch_gradients(batch, m, c, LossTerms::kPinOnly);
  EXPECT_TRUE(same(both.pin, pin_only.pin, 0.0));
  EXPECT_GT(global_norm(both.cin), 0.0);
  EXPECT_EQ(global_norm(pin_only.cin), 0.0);
}

TEST(Decoupling, AdditiveCouplingChangesPinGradient) {
  TrainConfig c = tiny_config();
  c.coupling = Coupling::kAdditive;
  const auto batch = sample_batch(c, 0);
  Rng rng(5);
  const Model m = Model::init(tiny_hyper(), CinLossKind::kCe, rng);
  const BatchGradients both = batch_gradients(batch, m, c, LossTerms::kBoth);
  const BatchGradients pin_only = batch_gradients(batch, m, c, LossTerms::kPinOnly);
  EXPECT_FALSE(same(both.pin, pin_only.pin, 1e-12));
}

TEST(Batch, OrderInvariantLosses) {
  TrainConfig c = tiny_config();
  c.batch_tasks = 4;
  auto batch = sample_batch(c, 1);
  Rng rng(6);
  const Model m = Model::init(tiny_hyper(), CinLossKind::kCe, rng);
  const BatchGradients a = batch_gradients(batch, m, c);
  std::reverse(batch.begin(), batch.end());
  const BatchGradients b = batch_gradients(batch, m, c);
  EXPECT_NEAR(a.pin_loss, b.pin_loss, 1e-10);
  EXPECT_NEAR(a.cin_loss, b.cin_loss, 1e-10);
  EXPECT_TRUE(same(a.pin, b.pin, 1e-10));
}

TEST(Batch, ThreadCountDoesNotChangeResult) {
  TrainConfig c = tiny_config();
  c.batch_tasks = 3;
  const auto batch = sample_batch(c, 2);
  Rng rng(7);
  const Model m = Model::init(tiny_hyper(), CinLossKind::kCe, rng);
  const BatchGradients one = batch_gradients(batch, m, c);
  c.threads = 3;
  const BatchGradients three = batch_gradients(batch, m, c);
  EXPECT_EQ(one.pin_loss, three.pin_loss);
  EXPECT_TRUE(same(one.pin, three.pin, 0.0));
}

TEST(Batch, FreshTasksPerStep) {
  const TrainConfig c = tiny_config();
  const auto a = sample_batch(c, 0), b = sample_batch(c, 1), again = sample_batch(c, 0);
  EXPECT_FALSE(a[0].x.rows() == b[0].x.rows() && a[0].x.cols() == b[0].x.cols() && a[0].x == b[0].x);
  EXPECT_TRUE(a[1].x == again[1].x);
  for (const auto& ds : a) {
    EXPECT_GE(ds.n(), 20);
    EXPECT_LE(ds.n(), 30);
    EXPECT_LE(ds.k_true, 4);
  }
}

TEST(TrainRun, DeterministicAndLogged) {
  const TrainConfig c = tiny_config(4);
  long rows = 0;
  const TrainResult a = train_run(tiny_hyper(), c, [&](const StepMetrics&) { ++rows; });
  const TrainResult b = train_run(tiny_hyper(), c);
  EXPECT_EQ(rows, 4);
  ASSERT_EQ(a.log.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(a.log[i].step, static_cast<long>(i));
    EXPECT_EQ(a.log[i].pin_loss, b.log[i].pin_loss);
    EXPECT_EQ(a.log[i].cin_loss, b.log[i].cin_loss);
    EXPECT_TRUE(std::isfinite(a.log[i].grad_norm_pin));
  }
  EXPECT_EQ(a.log[0].lr, lr_at(1, c.schedule()));
  Model ma = a.model, mb = b.model;
  const ParamRefs pa = param_refs(ma.pin), pb = param_refs(mb.pin);
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i]->numel(); ++j) ASSERT_EQ((*pa[i])[j], (*pb[i])[j]);
}

TEST(TrainRun, LossDecreasesOnEasyTasks) {
  TrainConfig c = tiny_config(40);
  c.batch_tasks = 4;
  c.peak_lr = 3e-3;
  c.warmup_steps = 5;
  c.prior.d_max = 2;
  c.prior.k_max = 2;
  c.prior.gmm_fraction = 1.0;
  c.prior.omega_cap = 0.05;
  const TrainResult r = train_run(tiny_hyper(), c);
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) {
    first += r.log[static_cast<std::size_t>(i)].pin_loss;
    last += r.log[r.log.size() - 1 - static_cast<std::size_t>(i)].pin_loss;
  }
  EXPECT_LT(last, first);
}

TEST(Config, Validation) {
  TrainConfig c = tiny_config();
  c.warmup_steps = 10;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny_config();
  c.peak_lr = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Model, KSweepFingerprintsDetached) {
  const TrainConfig c = tiny_config();
  const auto batch = sample_batch(c, 0);
  Rng rng(8);
  const Model m = Model::init(tiny_hyper(), CinLossKind::kCe, rng);
  const Tensor r0 = encode(batch[0], m.pin);
  const Fingerprint fp = pin_fingerprints(r0, m.pin, true);
  EXPECT_EQ(fp.per_k.size(), 3u);
  EXPECT_FALSE(fp.concat.requires_grad());
}
