#pragma once

// Finite-difference checks for every differentiable op, the partition losses,
// the attention block and a tiny end-to-end partition network.

#include <amoclust/autodiff/gradcheck.hpp>
#include <amoclust/autodiff/tensor.hpp>
#include <amoclust/metrics/soft.hpp>
#include <amoclust/model/layers.hpp>
#include <amoclust/model/pin.hpp>
#include <amoclust/prior/types.hpp>
#include <amoclust/rng.hpp>
#include <amoclust/train/trainer.hpp>

#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace amoclust {

inline constexpr double kGradTol = 1e-4;
inline constexpr double kSinkhornGradTol = 1e-3;
inline constexpr double kFdStep = 1e-6;

struct GradCheckEntry {
  std::string name;
  double tol = kGradTol;
  ad::GradCheckReport report;
};

namespace detail {

inline Tensor uniform_tensor(ad::Shape s, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(ad::numel_of(s));
  for (double& x : v) x = u(rng);
  return Tensor::from(std::move(s), std::move(v));
}

/// Values with |v| in [0.2, 1.5] and random sign, away from kinks at 0.
inline Tensor off_zero_tensor(ad::Shape s, Rng& rng) {
  std::uniform_real_distribution<double> u(0.2, 1.5);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(ad::numel_of(s));
  for (double& x : v) x = sign(rng) ? u(rng) : -u(rng);
  return Tensor::from(std::move(s), std::move(v));
}

}  // namespace detail

class GradCheckSuite {
 public:
  explicit GradCheckSuite(std::uint64_t seed = 7) : rng_(seed) {}

  std::vector<GradCheckEntry> run() {
    ops();
    losses();
    attention();
    end_to_end();
    return std::move(out_);
  }

 private:
  void check(const std::string& name, const ad::ScalarFn& f, const Tensor& x, double tol = kGradTol) {
    out_.push_back({name, tol, ad::finite_difference_check(f, x, kFdStep, tol)});
  }

  /// sum(g(x) * w) with a fixed random weight so no direction cancels.
  void check_map(const std::string& name, const std::function<Tensor(const Tensor&)>& g, const Tensor& x) {
    const Tensor y = g(x);
    const Tensor w = detail::uniform_tensor(y.shape(), -1.0, 1.0, rng_);
    check(name, [g, w](const Tensor& t) { return ad::sum(g(t) * w); }, x);
  }

  Tensor u(ad::Shape s, double lo = -1.0, double hi = 1.0) { return detail::uniform_tensor(std::move(s), lo, hi, rng_); }

  void ops() {
    const Tensor b23 = u({2, 3}), b3 = u({3}), pos23 = u({2, 3}, 0.5, 2.0);
    check_map("add", [b23](const Tensor& x) { return x + b23; }, u({2, 3}));
    check_map("add.broadcast_lhs", [b3](const Tensor& x) { return x + b3; }, u({2, 3}));
    check_map("add.broadcast_rhs", [b23](const Tensor& x) { return b23 + x; }, u({3}));
    check_map("sub", [b23](const Tensor& x) { return b23 - x; }, u({2, 3}));
    check_map("mul", [b23](const Tensor& x) { return x * b23; }, u({2, 3}));
    check_map("mul.broadcast_rhs", [b23](const Tensor& x) { return b23 * x; }, u({3}));
    check_map("mul.scalar_rhs", [b23](const Tensor& x) { return b23 * ad::reshape(x, {}); }, u({1}));
    check_map("mul.rowwise_rhs", [b23](const Tensor& x) { return b23 * x; }, u({2, 1}));
    check_map("div.numerator", [pos23](const Tensor& x) { return x / pos23; }, u({2, 3}));
    check_map("div.denominator", [b23](const Tensor& x) { return b23 / x; }, u({2, 3}, 0.5, 2.0));
    check_map("scale", [](const Tensor& x) { return ad::scale(x, -1.7); }, u({4}));
    check_map("add_scalar", [](const Tensor& x) { return ad::add_scalar(x, 0.3) * x; }, u({4}));
    const Tensor m34 = u({3, 4}), m234 = u({2, 3, 4});
    check_map("matmul.lhs", [m34](const Tensor& x) { return ad::matmul(x, m34); }, u({2, 3}));
    check_map("matmul.rhs", [b23](const Tensor& x) { return ad::matmul(b23, x); }, u({3, 4}));
    check_map("matmul.shared_rhs", [m34](const Tensor& x) { return ad::matmul(x, m34); }, u({2, 2, 3}));
    check_map("matmul.batched", [m234](const Tensor& x) { return ad::matmul(x, m234); }, u({2, 2, 3}));
    check_map("transpose", [](const Tensor& x) { return ad::transpose(x) * ad::transpose(x); }, u({2, 3}));
    check_map("transpose.batched", [](const Tensor& x) { return ad::transpose(x); }, u({2, 2, 3}));
    check_map("gram", [](const Tensor& x) { return ad::gram(x); }, u({4, 3}));
    check_map("reshape", [](const Tensor& x) { return ad::reshape(x, {3, 2}) * ad::reshape(x, {3, 2}); }, u({2, 3}));
    check_map("softmax", [](const Tensor& x) { return ad::softmax(x); }, u({2, 4}, -2, 2));
    check_map("log_softmax", [](const Tensor& x) { return ad::log_softmax(x); }, u({2, 4}, -2, 2));
    check_map("layer_norm", [](const Tensor& x) { return ad::layer_norm(x); }, u({3, 5}, -2, 2));
    check_map("l2_normalize", [](const Tensor& x) { return ad::l2_normalize(x); }, u({3, 4}));
    check_map("gelu", [](const Tensor& x) { return ad::gelu(x); }, u({6}, -3, 3));
    check_map("relu", [](const Tensor& x) { return ad::relu(x); }, detail::off_zero_tensor({6}, rng_));
    check_map("softplus", [](const Tensor& x) { return ad::softplus(x); }, u({6}, -4, 4));
    check_map("log", [](const Tensor& x) { return ad::log(x); }, u({6}, 0.2, 3));
    check_map("exp", [](const Tensor& x) { return ad::exp(x); }, u({6}, -2, 2));
    check_map("sin", [](const Tensor& x) { return ad::sin(x); }, u({6}, -3, 3));
    check("sum", [](const Tensor& x) { return ad::sum(x * x); }, u({2, 3}));
    check("mean", [](const Tensor& x) { return ad::mean(x * x); }, u({2, 3}));
    check_map("sum_last", [](const Tensor& x) { return ad::sum_last(x * x); }, u({2, 3}));
    const Tensor other = u({2, 2});
    check_map("concat", [other](const Tensor& x) { return ad::concat({x, other, x}, -1); }, u({2, 3}));
    check_map("concat.axis0", [](const Tensor& x) { return ad::concat({x, ad::scale(x, 2.0)}, 0); }, u({2, 3}));
    check_map("narrow", [](const Tensor& x) { return ad::narrow(x, -1, 1, 2); }, u({2, 4}));
    check_map("narrow.axis0", [](const Tensor& x) { return ad::narrow(x, 0, 1, 2); }, u({3, 2}));
    check_map("masked_fill", [](const Tensor& x) { return ad::softmax(ad::masked_fill(x, {0, 1, 0, 1}, -1e9)); },
              u({2, 4}));
    check_map("gather", [](const Tensor& x) { return ad::gather(x, {5, 0, 2, 2}); }, u({2, 3}));
  }

  void losses() {
    const std::vector<int> z{0, 0, 1, 2, 1, 2, 0, 1};
    const Tensor logits = u({8, 3}, -1.5, 1.5);
    check("loss.softari", [z](const Tensor& x) { return -soft_ari(SoftPartition::from_logits(x), z); }, logits);
    check("loss.softnmi", [z](const Tensor& x) { return ad::add_scalar(-soft_nmi(SoftPartition::from_logits(x), z), 1.0); },
          logits);
    check("loss.match_ce", [z](const Tensor& x) { return matching_ce_loss(SoftPartition::from_logits(x), z); }, logits);
    // tol = 0 disables the early stop so every probe runs the same iterations.
    check("loss.match_softacc",
          [z](const Tensor& x) {
            return matching_softacc_loss(SoftPartition::from_logits(x), z, kSinkhornTemperature, kSinkhornIters, 0.0);
          },
          logits, kSinkhornGradTol);
    check("loss.match_softacc.padded",
          [z](const Tensor& x) {
            return matching_softacc_loss(SoftPartition::from_logits(x), z, kSinkhornTemperature, kSinkhornIters, 0.0);
          },
          u({8, 2}, -1.5, 1.5), kSinkhornGradTol);
    check("loss.sinkhorn",
          [](const Tensor& x) {
            const Tensor w = Tensor::from({3, 3}, {0.3, -0.2, 0.5, 0.1, 0.7, -0.4, -0.6, 0.2, 0.9});
            return ad::sum(sinkhorn(x, 0.5, 30, 0.0) * w);
          },
          u({3, 3}, 0.5, 2.0), kSinkhornGradTol);
    check("loss.cin_ce", [](const Tensor& x) { return cin_ce_loss(x, 3); }, u({1, 4}));
    check("loss.cin_ordinal", [](const Tensor& x) { return cin_ordinal_loss(x, 4, 6); }, u({1, 4}));
  }

  void attention() {
    Rng prng(11);
    const MabParams p = MabParams::init(4, 2, prng, 0.5);
    const Tensor y = u({5, 4});
    check_map("mab_pre.query", [p, y](const Tensor& x) { return mab_pre(x, y, p, 2); }, u({3, 4}));
    const Tensor x3 = u({3, 4});
    check_map("mab_pre.context", [p, x3](const Tensor& t) { return mab_pre(x3, t, p, 2); }, u({5, 4}));
    check_map("mab_pre.self", [p](const Tensor& x) { return self_attention(x, p, 2); }, u({2, 3, 4}));
    check_map("mab_pre.weight",
              [p, x3, y](const Tensor& w) {
                MabParams q = p;
                q.k.w = w;
                return mab_pre(x3, y, q, 2);
              },
              p.k.w);
  }

  void end_to_end() {
    PinHyper h;
    h.d = 8;
    h.d_tok = 4;
    h.l_enc = 1;
    h.l_dec = 1;
    h.heads = 2;
    h.k_max = 3;
    h.ffn_mult = 2;
    h.temperature_init = 2.0;
    Rng prng(5);
    PinParams base = PinParams::init(h, prng);
    // Larger weights than the training init keep every gradient well above
    // the finite-difference noise floor.
    std::normal_distribution<double> nd(0.0, 0.4);
    base.visit([&](const std::string&, Tensor& t) {
      if (t.rank() < 2) return;
      for (double& v : t.mutable_data()) v = nd(prng);
    });
    Dataset ds;
    ds.x = Eigen::MatrixXd(6, 2);
    ds.x << -1.0, 0.2, -0.8, 0.1, -1.2, -0.1, 1.1, 0.9, 0.9, 1.2, 1.3, 0.8;
    ds.col_kind.assign(2, ColumnKind::kNumeric);
    const std::vector<int> z{0, 0, 0, 1, 1, 1};
    for (const std::string target : {"enc.cell.l1.w", "enc.pool_seed", "dec.prototypes", "dec.layer0.ca_cr.q.w",
                                     "head.g.l2.w", "head.log_tau"}) {
      Tensor start;
      base.visit([&](const std::string& name, Tensor& t) {
        if (name == target) start = Tensor::from(t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
      });
      if (!start.node()) throw std::logic_error("gradcheck: no parameter named " + target);
      check("pin_softari." + target,
            [base, target, ds, z](const Tensor& x) {
              PinParams p = base;
              p.visit([&](const std::string& name, Tensor& t) {
                if (name == target) t = x;
              });
              return -soft_ari(pin_forward(ds, 2, p), z);
            },
            start);
    }
  }

  Rng rng_;
  std::vector<GradCheckEntry> out_;
};

inline std::vector<GradCheckEntry> run_gradcheck_suite(std::uint64_t seed = 7) { return GradCheckSuite(seed).run(); }

}  // namespace amoclust
