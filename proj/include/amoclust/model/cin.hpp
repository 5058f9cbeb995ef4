#pragma once

// Cardinality inference network: sorted Gram fingerprints of PIN outputs,
// a softmax posterior head over K in [2, K_max] and an ordinal head.

#include <amoclust/autodiff/tensor.hpp>
#include <amoclust/metrics/soft.hpp>
#include <amoclust/model/layers.hpp>
#include <amoclust/model/pin.hpp>
#include <amoclust/rng.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace amoclust {

inline constexpr std::size_t triangular(std::size_t k) { return k * (k + 1) / 2; }

/// Total fingerprint width for K = 2..k_max.
inline constexpr std::size_t fingerprint_width(std::size_t k_max) {
  std::size_t s = 0;
  for (std::size_t k = 2; k <= k_max; ++k) s += triangular(k);
  return s;
}

/// g^(K): sorted diagonal then sorted strict upper triangle of (1/N) P^T P,
/// both descending. Differentiable in P through a gather by a fixed order.
inline Tensor gram_fingerprint(const Tensor& probs) {
  if (probs.rank() != 2) throw ad::ShapeError("gram_fingerprint: expects N x K probabilities");
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  const Tensor g = ad::scale(ad::gram(probs), 1.0 / static_cast<double>(n));
  auto desc = [&](std::vector<std::size_t> idx) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return g[a] > g[b]; });
    return idx;
  };
  std::vector<std::size_t> diag, upper;
  for (std::size_t i = 0; i < k; ++i) {
    diag.push_back(i * k + i);
    for (std::size_t j = i + 1; j < k; ++j) upper.push_back(i * k + j);
  }
  std::vector<std::size_t> order = desc(std::move(diag));
  const std::vector<std::size_t> up = desc(std::move(upper));
  order.insert(order.end(), up.begin(), up.end());
  return ad::gather(g, std::move(order));
}

inline Tensor gram_fingerprint(const SoftPartition& p) { return gram_fingerprint(p.probs); }

struct Fingerprint {
  std::vector<Tensor> per_k;  // index 0 is K = 2
  Tensor concat;              // 1 x width

  static Fingerprint from(std::vector<Tensor> per_k) {
    Fingerprint f;
    f.per_k = std::move(per_k);
    const Tensor flat = f.per_k.size() == 1 ? f.per_k[0] : ad::concat(f.per_k, 0);
    f.concat = ad::reshape(flat, {1, flat.numel()});
    return f;
  }
};

/// Encodes once and runs the decoder for every K in 2..k_max. With
/// `detach_probs` the fingerprint is cut from the PIN graph.
inline Fingerprint pin_fingerprints(const Tensor& r0, const PinParams& p, bool detach_probs) {
  std::vector<Tensor> per_k;
  for (std::size_t k = 2; k <= p.hyper.k_max; ++k) {
    const SoftPartition part = decode_partition(r0, k, p);
    per_k.push_back(gram_fingerprint(detach_probs ? ad::detach(part.probs) : part.probs));
  }
  return Fingerprint::from(std::move(per_k));
}

enum class CinHead { kCategorical, kOrdinal };

struct CinParams {
  std::size_t k_max = 10;
  std::size_t hidden = 256;
  CinHead kind = CinHead::kCategorical;
  // 3 layers: width -> hidden -> hidden -> out
  Linear l1, l2, l3;
  // ordinal head only
  Tensor delta;  // k_max - 2
  Tensor log_s;

  static CinParams init(std::size_t k_max, CinHead kind, Rng& rng, std::size_t hidden = 256) {
    if (k_max < 3 && kind == CinHead::kOrdinal) throw std::invalid_argument("ordinal head needs k_max >= 3");
    if (k_max < 2) throw std::invalid_argument("CinParams: k_max must be >= 2");
    CinParams c;
    c.k_max = k_max;
    c.hidden = hidden;
    c.kind = kind;
    const std::size_t out = kind == CinHead::kCategorical ? k_max - 1 : 1;
    c.l1 = Linear::init_fan_in(fingerprint_width(k_max), hidden, rng);
    c.l2 = Linear::init_fan_in(hidden, hidden, rng);
    c.l3 = Linear::init_fan_in(hidden, out, rng);
    if (kind == CinHead::kOrdinal) {
      c.delta = param_zeros({k_max - 2});
      c.log_s = Tensor::scalar(0.0, true);
    }
    return c;
  }

  std::size_t input_width() const { return l1.in(); }

  Tensor mlp(const Tensor& x) const {
    if (x.rank() != 2 || x.dim(1) != input_width()) {
      throw ad::ShapeError("cin: fingerprint width " + ad::shape_str(x.shape()) + " does not match input width " +
                           std::to_string(input_width()));
    }
    return l3(ad::gelu(l2(ad::gelu(l1(x)))));
  }

  template <class F>
  void visit(F&& f) {
    l1.visit("cin.l1", f);
    l2.visit("cin.l2", f);
    l3.visit("cin.l3", f);
    if (kind == CinHead::kOrdinal) {
      f("cin.delta", delta);
      f("cin.log_s", log_s);
    }
  }
};

struct CinOutput {
  Tensor logits;     // 1 x (k_max - 1)
  Tensor posterior;  // 1 x (k_max - 1), entry j is K = j + 2
};

inline CinOutput cin_forward(const Fingerprint& fp, const CinParams& c) {
  if (c.kind != CinHead::kCategorical) throw std::logic_error("cin_forward: parameters hold an ordinal head");
  CinOutput out;
  out.logits = c.mlp(fp.concat);
  out.posterior = ad::softmax(out.logits);
  return out;
}

/// argmax over K of a posterior, lowest K on ties.
inline std::size_t argmax_k(const Tensor& posterior) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < posterior.numel(); ++j)
    if (posterior[j] > posterior[best]) best = j;
  return best + 2;
}

struct OrdinalOutput {
  Tensor score;       // scalar
  Tensor thresholds;  // 1 x (k_max - 2), b_2..b_{k_max-1}
  Tensor eta;         // 1 x (k_max - 2)
};

inline OrdinalOutput ordinal_forward(const Fingerprint& fp, const CinParams& c) {
  if (c.kind != CinHead::kOrdinal) throw std::logic_error("ordinal_forward: parameters hold no ordinal head");
  const std::size_t m = c.k_max - 2;
  std::vector<double> tri(m * m, 0.0);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t t = j; t < m; ++t) tri[j * m + t] = 1.0;
  OrdinalOutput out;
  out.score = ad::reshape(c.mlp(fp.concat), {});
  out.thresholds = ad::matmul(ad::reshape(ad::softplus(c.delta), {1, m}), Tensor::from({m, m}, std::move(tri)));
  out.eta = ad::scale(out.thresholds - out.score, -1.0) * ad::exp(c.log_s);
  return out;
}

inline std::size_t ordinal_count_k(const Tensor& eta) {
  std::size_t k = 2;
  for (double v : eta.data()) k += v >= 0.0 ? 1 : 0;
  return k;
}

inline std::size_t ordinal_predict_k(const Fingerprint& fp, const CinParams& c) {
  ad::NoGradGuard ng;
  return ordinal_count_k(ordinal_forward(fp, c).eta);
}

struct KPrediction {
  std::size_t k = 2;
  std::vector<double> posterior;  // empty for the ordinal head
};

/// Full K sweep for one dataset.
inline KPrediction predict_k(const Dataset& ds, const PinParams& pin, const CinParams& cin) {
  if (cin.k_max != pin.hyper.k_max) throw std::invalid_argument("predict_k: PIN and CIN disagree on k_max");
  ad::NoGradGuard ng;
  const Fingerprint fp = pin_fingerprints(encode(ds, pin), pin, true);
  KPrediction out;
  if (cin.kind == CinHead::kOrdinal) {
    out.k = ordinal_count_k(ordinal_forward(fp, cin).eta);
    return out;
  }
  const CinOutput o = cin_forward(fp, cin);
  out.posterior.assign(o.posterior.data().begin(), o.posterior.data().end());
  out.k = argmax_k(o.posterior);
  return out;
}

}  // namespace amoclust
