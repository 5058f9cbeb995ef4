#pragma once

// Parameter containers, initializers and the pre-norm attention block.

#include <amoclust/autodiff/tensor.hpp>
#include <amoclust/rng.hpp>

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace amoclust {

using ad::Tensor;

inline constexpr double kInitStd = 0.02;

/// Normal(0, std^2) truncated at +-2 std by resampling.
inline Tensor truncated_normal(ad::Shape shape, double std, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(ad::numel_of(shape));
  for (double& x : v) {
    double z = nd(rng);
    while (std::abs(z) > 2.0) z = nd(rng);
    x = z * std;
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

inline Tensor param_zeros(ad::Shape shape) { return Tensor::zeros(std::move(shape), true); }
inline Tensor param_full(ad::Shape shape, double v) { return Tensor::full(std::move(shape), v, true); }

/// y = x W + b, W stored as in x out.
struct Linear {
  Tensor w, b;

  static Linear init(std::size_t in, std::size_t out, double std, Rng& rng) {
    return {truncated_normal({in, out}, std, rng), param_zeros({out})};
  }
  /// Truncated normal scaled by 1/sqrt(fan_in).
  static Linear init_fan_in(std::size_t in, std::size_t out, Rng& rng) {
    return init(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  }

  std::size_t in() const { return w.dim(0); }
  std::size_t out() const { return w.dim(1); }

  Tensor operator()(const Tensor& x) const { return ad::matmul(x, w) + b; }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".w", w);
    f(prefix + ".b", b);
  }
};

struct LayerNorm {
  Tensor gamma, beta;

  static LayerNorm init(std::size_t d) { return {param_full({d}, 1.0), param_zeros({d})}; }

  Tensor operator()(const Tensor& x) const { return ad::layer_norm(x) * gamma + beta; }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }
};

/// Two-layer GELU perceptron.
struct Mlp2 {
  Linear l1, l2;

  static Mlp2 init(std::size_t in, std::size_t hidden, std::size_t out, double std, Rng& rng) {
    return {Linear::init(in, hidden, std, rng), Linear::init(hidden, out, std, rng)};
  }
  static Mlp2 init_fan_in(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
    return {Linear::init_fan_in(in, hidden, rng), Linear::init_fan_in(hidden, out, rng)};
  }

  Tensor operator()(const Tensor& x) const { return l2(ad::gelu(l1(x))); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    l1.visit(prefix + ".l1", f);
    l2.visit(prefix + ".l2", f);
  }
};

// ---------------------------------------------------------------------------
// Attention audit

struct AttentionCall {
  std::size_t batch = 1;
  std::size_t n_q = 0;
  std::size_t n_k = 0;
};

namespace detail {
inline std::vector<AttentionCall>*& audit_sink() {
  thread_local std::vector<AttentionCall>* sink = nullptr;
  return sink;
}
}  // namespace detail

/// Records the shape of every attention score matrix built on this thread
/// while alive. Scopes nest; the innermost one receives the records.
class AttentionAudit {
 public:
  AttentionAudit() : prev_(detail::audit_sink()) { detail::audit_sink() = &calls_; }
  ~AttentionAudit() { detail::audit_sink() = prev_; }
  AttentionAudit(const AttentionAudit&) = delete;
  AttentionAudit& operator=(const AttentionAudit&) = delete;

  const std::vector<AttentionCall>& calls() const { return calls_; }
  bool saw(std::size_t n_q, std::size_t n_k) const {
    for (const auto& c : calls_)
      if (c.n_q == n_q && c.n_k == n_k) return true;
    return false;
  }
  std::size_t total_scores() const {
    std::size_t s = 0;
    for (const auto& c : calls_) s += c.batch * c.n_q * c.n_k;
    return s;
  }

 private:
  std::vector<AttentionCall> calls_;
  std::vector<AttentionCall>* prev_;
};

// ---------------------------------------------------------------------------
// Multi-head attention block, pre-norm:
//   A = X + MHA(LN(X), LN(Y), LN(Y)),  out = A + FFN(LN2(A))

struct MabParams {
  LayerNorm ln1, ln2;
  Linear q, k, v, o;
  Mlp2 ffn;

  static MabParams init(std::size_t d, std::size_t ffn_mult, Rng& rng, double std = kInitStd) {
    MabParams p;
    p.ln1 = LayerNorm::init(d);
    p.ln2 = LayerNorm::init(d);
    p.q = Linear::init(d, d, std, rng);
    p.k = Linear::init(d, d, std, rng);
    p.v = Linear::init(d, d, std, rng);
    p.o = Linear::init(d, d, std, rng);
    p.ffn = Mlp2::init(d, ffn_mult * d, d, std, rng);
    return p;
  }
  /// Same with std 1/sqrt(d).
  static MabParams init_fan_in(std::size_t d, std::size_t ffn_mult, Rng& rng) {
    return init(d, ffn_mult, rng, 1.0 / std::sqrt(static_cast<double>(d)));
  }

  std::size_t width() const { return q.in(); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    ln1.visit(prefix + ".ln1", f);
    ln2.visit(prefix + ".ln2", f);
    q.visit(prefix + ".q", f);
    k.visit(prefix + ".k", f);
    v.visit(prefix + ".v", f);
    o.visit(prefix + ".o", f);
    ffn.visit(prefix + ".ffn", f);
  }
};

/// Scaled dot-product attention over the last two axes, heads split along
/// the feature axis. Inputs are [..., M, d] and [..., P, d] with equal
/// leading dims.
inline Tensor multihead_attention(const Tensor& xq, const Tensor& xkv, const MabParams& p, std::size_t heads) {
  const std::size_t d = p.width();
  if (heads == 0 || d % heads != 0) {
    throw ad::ShapeError("multihead_attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  if (xq.rank() < 2 || xkv.rank() != xq.rank()) {
    throw ad::ShapeError("multihead_attention: query " + ad::shape_str(xq.shape()) + " and context " +
                         ad::shape_str(xkv.shape()) + " must have equal rank >= 2");
  }
  const std::size_t nq = xq.dim(xq.rank() - 2), nk = xkv.dim(xkv.rank() - 2);
  if (auto* sink = detail::audit_sink()) {
    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < xq.rank(); ++i) batch *= xq.dim(i);
    sink->push_back({batch, nq, nk});
  }
  const Tensor q = p.q(xq), k = p.k(xkv), v = p.v(xkv);
  const std::size_t dh = d / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = ad::narrow(q, -1, h * dh, dh);
    const Tensor kh = ad::narrow(k, -1, h * dh, dh);
    const Tensor vh = ad::narrow(v, -1, h * dh, dh);
    const Tensor a = ad::softmax(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv));
    outs.push_back(ad::matmul(a, vh));
  }
  return p.o(heads == 1 ? outs[0] : ad::concat(outs, -1));
}

inline Tensor mab_pre(const Tensor& x, const Tensor& y, const MabParams& p, std::size_t heads) {
  const Tensor lx = p.ln1(x);
  const Tensor ly = x.node() == y.node() ? lx : p.ln1(y);
  const Tensor attn = x + multihead_attention(lx, ly, p, heads);
  return attn + p.ffn(p.ln2(attn));
}

inline Tensor self_attention(const Tensor& x, const MabParams& p, std::size_t heads) { return mab_pre(x, x, p, heads); }

}  // namespace amoclust
