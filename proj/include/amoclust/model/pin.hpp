#pragma once

// Partition inference network: set encoder, prototype decoder, cosine head,
// plus the two ablation decoders.

#include <amoclust/autodiff/tensor.hpp>
#include <amoclust/metrics/soft.hpp>
#include <amoclust/model/layers.hpp>
#include <amoclust/prior/types.hpp>
#include <amoclust/rng.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace amoclust {

enum class DecoderKind { kIterative, kNaive, kNonIterative };

inline std::string to_string(DecoderKind k) {
  switch (k) {
    case DecoderKind::kIterative: return "iterative";
    case DecoderKind::kNaive: return "naive";
    case DecoderKind::kNonIterative: return "noniter";
  }
  return "?";
}

inline DecoderKind parse_decoder_kind(const std::string& s) {
  if (s == "iterative") return DecoderKind::kIterative;
  if (s == "naive") return DecoderKind::kNaive;
  if (s == "noniter") return DecoderKind::kNonIterative;
  throw std::invalid_argument("unknown decoder kind '" + s + "' (expected iterative|naive|noniter)");
}

struct PinHyper {
  std::size_t d = 64;
  std::size_t d_tok = 16;
  std::size_t l_enc = 2;
  std::size_t l_dec = 3;
  std::size_t heads = 4;
  std::size_t k_max = 10;
  std::size_t ffn_mult = 2;
  double temperature_init = 10.0;
  DecoderKind decoder = DecoderKind::kIterative;

  static PinHyper desk() { return {}; }
  static PinHyper paper() {
    PinHyper h;
    h.d = 512;
    h.d_tok = 128;
    h.l_dec = 6;
    h.l_enc = 3;
    return h;
  }

  void validate() const {
    if (d == 0 || heads == 0 || d % heads != 0) throw std::invalid_argument("PinHyper: d must be divisible by heads");
    if (d_tok == 0 || d_tok % heads != 0) throw std::invalid_argument("PinHyper: d_tok must be divisible by heads");
    if (l_dec < 1) throw std::invalid_argument("PinHyper: l_dec must be >= 1");
    if (k_max < 2) throw std::invalid_argument("PinHyper: k_max must be >= 2");
    if (ffn_mult < 1) throw std::invalid_argument("PinHyper: ffn_mult must be >= 1");
    if (!(temperature_init > 0)) throw std::invalid_argument("PinHyper: temperature_init must be positive");
  }
};

// Per-cell input: value, categorical flag, then column summary statistics.
inline constexpr std::array<double, 9> kEcdfGrid{-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0};
inline constexpr std::size_t kColumnStats = kEcdfGrid.size() + 2;
inline constexpr std::size_t kCellFeatures = 2 + kColumnStats;

struct DecoderLayer {
  MabParams sa_c;   // SA(C)
  MabParams ca_cr;  // CA C <- R
  MabParams ca_rc;  // CA R <- C (unused by the non-iterative decoder)
};

struct PinParams {
  PinHyper hyper;
  // encoder
  Mlp2 cell_embed;
  MabParams feature_sa;
  Tensor pool_seed;  // 1 x d_tok
  MabParams feature_pool;
  Linear enc_proj;
  std::vector<MabParams> enc_blocks;
  // decoders
  Tensor prototypes;  // k_max x d
  std::vector<DecoderLayer> dec_layers;
  std::vector<MabParams> row_blocks;  // naive: 2L, noniter: L
  Mlp2 naive_head;
  // cosine head
  Mlp2 head;
  Tensor log_tau;

  static PinParams init(const PinHyper& h, Rng& rng) {
    h.validate();
    PinParams p;
    p.hyper = h;
    p.cell_embed = Mlp2::init_fan_in(kCellFeatures, 2 * h.d_tok, h.d_tok, rng);
    p.feature_sa = MabParams::init_fan_in(h.d_tok, h.ffn_mult, rng);
    p.pool_seed = truncated_normal({1, h.d_tok}, 1.0, rng);
    p.feature_pool = MabParams::init_fan_in(h.d_tok, h.ffn_mult, rng);
    p.enc_proj = Linear::init_fan_in(h.d_tok, h.d, rng);
    for (std::size_t i = 0; i < h.l_enc; ++i) p.enc_blocks.push_back(MabParams::init_fan_in(h.d, h.ffn_mult, rng));

    std::normal_distribution<double> nd(0.0, std::pow(static_cast<double>(h.d), -0.25));
    std::vector<double> c(h.k_max * h.d);
    for (double& v : c) v = nd(rng);
    p.prototypes = Tensor::from({h.k_max, h.d}, std::move(c), true);

    switch (h.decoder) {
      case DecoderKind::kIterative:
        for (std::size_t l = 0; l < h.l_dec; ++l) {
          DecoderLayer dl;
          dl.sa_c = MabParams::init(h.d, h.ffn_mult, rng);
          dl.ca_cr = MabParams::init(h.d, h.ffn_mult, rng);
          dl.ca_rc = MabParams::init(h.d, h.ffn_mult, rng);
          p.dec_layers.push_back(std::move(dl));
        }
        break;
      case DecoderKind::kNaive:
        for (std::size_t l = 0; l < 2 * h.l_dec; ++l) p.row_blocks.push_back(MabParams::init(h.d, h.ffn_mult, rng));
        p.naive_head = Mlp2::init(h.d, 2 * h.d, h.k_max, kInitStd, rng);
        break;
      case DecoderKind::kNonIterative:
        for (std::size_t l = 0; l < h.l_dec; ++l) p.row_blocks.push_back(MabParams::init(h.d, h.ffn_mult, rng));
        for (std::size_t l = 0; l < h.l_dec; ++l) {
          DecoderLayer dl;
          dl.sa_c = MabParams::init(h.d, h.ffn_mult, rng);
          dl.ca_cr = MabParams::init(h.d, h.ffn_mult, rng);
          p.dec_layers.push_back(std::move(dl));
        }
        break;
    }
    if (h.decoder != DecoderKind::kNaive) {
      p.head = Mlp2::init(h.d, 2 * h.d, h.d, kInitStd, rng);
      p.log_tau = Tensor::scalar(std::log(h.temperature_init), true);
    }
    return p;
  }

  double tau() const { return std::exp(log_tau.item()); }

  template <class F>
  void visit(F&& f) {
    cell_embed.visit("enc.cell", f);
    feature_sa.visit("enc.feature_sa", f);
    f("enc.pool_seed", pool_seed);
    feature_pool.visit("enc.feature_pool", f);
    enc_proj.visit("enc.proj", f);
    for (std::size_t i = 0; i < enc_blocks.size(); ++i) enc_blocks[i].visit("enc.row" + std::to_string(i), f);
    f("dec.prototypes", prototypes);
    for (std::size_t l = 0; l < dec_layers.size(); ++l) {
      const std::string pre = "dec.layer" + std::to_string(l);
      dec_layers[l].sa_c.visit(pre + ".sa_c", f);
      dec_layers[l].ca_cr.visit(pre + ".ca_cr", f);
      if (hyper.decoder == DecoderKind::kIterative) dec_layers[l].ca_rc.visit(pre + ".ca_rc", f);
    }
    for (std::size_t i = 0; i < row_blocks.size(); ++i) row_blocks[i].visit("dec.row" + std::to_string(i), f);
    if (hyper.decoder == DecoderKind::kNaive) {
      naive_head.visit("dec.naive_head", f);
    } else {
      head.visit("head.g", f);
      f("head.log_tau", log_tau);
    }
  }
};

// ---------------------------------------------------------------------------
// Encoder

/// Constant [N, D, kCellFeatures] input tensor: per cell the value, the
/// categorical flag, the column ECDF on a fixed grid and squashed 3rd/4th
/// moments of the column.
inline Tensor cell_features(const Dataset& ds) {
  const std::size_t n = static_cast<std::size_t>(ds.n()), d = static_cast<std::size_t>(ds.d());
  if (ds.col_kind.size() != d) throw std::invalid_argument("cell_features: col_kind size differs from column count");
  std::vector<double> v(n * d * kCellFeatures);
  std::vector<double> stats(kColumnStats);
  for (std::size_t j = 0; j < d; ++j) {
    const auto col = ds.x.col(static_cast<Eigen::Index>(j));
    for (std::size_t t = 0; t < kEcdfGrid.size(); ++t) {
      std::size_t below = 0;
      for (std::size_t i = 0; i < n; ++i) below += col(static_cast<Eigen::Index>(i)) <= kEcdfGrid[t] ? 1 : 0;
      stats[t] = static_cast<double>(below) / static_cast<double>(n);
    }
    double m3 = 0, m4 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = col(static_cast<Eigen::Index>(i));
      m3 += x * x * x;
      m4 += x * x * x * x;
    }
    stats[kEcdfGrid.size()] = std::tanh(m3 / static_cast<double>(n) / 2.0);
    stats[kEcdfGrid.size() + 1] = std::tanh((m4 / static_cast<double>(n) - 3.0) / 3.0);
    const double flag = ds.col_kind[j] == ColumnKind::kCategorical ? 1.0 : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double* cell = &v[(i * d + j) * kCellFeatures];
      cell[0] = ds.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      cell[1] = flag;
      std::copy(stats.begin(), stats.end(), cell + 2);
    }
  }
  return Tensor::from({n, d, kCellFeatures}, std::move(v));
}

/// Row embeddings R^(0), N x d.
inline Tensor encode(const Dataset& ds, const PinParams& p) {
  const PinHyper& h = p.hyper;
  const std::size_t n = static_cast<std::size_t>(ds.n());
  if (n == 0 || ds.d() == 0) throw std::invalid_argument("encode: empty dataset");
  Tensor tok = p.cell_embed(cell_features(ds));          // N x D x d_tok
  tok = self_attention(tok, p.feature_sa, h.heads);       // within-row, across features
  const Tensor seed = Tensor::zeros({n, 1, h.d_tok}) + p.pool_seed;
  Tensor pooled = mab_pre(seed, tok, p.feature_pool, h.heads);  // N x 1 x d_tok
  Tensor r = p.enc_proj(ad::reshape(pooled, {n, h.d_tok}));
  for (const auto& blk : p.enc_blocks) r = self_attention(r, blk, h.heads);
  return r;
}

// ---------------------------------------------------------------------------
// Decoders

struct DecoderState {
  Tensor r;  // N x d
  Tensor c;  // K x d
  std::size_t layer = 0;
};

inline void check_k(std::size_t k, const PinHyper& h) {
  if (k < 2 || k > h.k_max) {
    throw std::out_of_range("cluster count " + std::to_string(k) + " outside [2," + std::to_string(h.k_max) + "]");
  }
}

/// Iterative prototype/data refinement. Attention is only ever computed
/// between K prototypes and N rows or among the K prototypes.
inline DecoderState decode(const Tensor& r0, std::size_t k, const PinParams& p) {
  const PinHyper& h = p.hyper;
  check_k(k, h);
  if (h.decoder != DecoderKind::kIterative) throw std::logic_error("decode: parameters are not for the iterative decoder");
  DecoderState s{r0, ad::narrow(p.prototypes, 0, 0, k), 0};
  for (const auto& layer : p.dec_layers) {
    s.c = self_attention(s.c, layer.sa_c, h.heads);
    s.c = mab_pre(s.c, s.r, layer.ca_cr, h.heads);
    s.r = mab_pre(s.r, s.c, layer.ca_rc, h.heads);
    ++s.layer;
  }
  return s;
}

/// Logits tau * cos(g(R_i), g(C_j)).
inline Tensor cosine_logits(const Tensor& r, const Tensor& c, const PinParams& p) {
  const Tensor rn = ad::l2_normalize(p.head(r));
  const Tensor cn = ad::l2_normalize(p.head(c));
  return ad::matmul(rn, ad::transpose(cn)) * ad::exp(p.log_tau);
}

inline SoftPartition cosine_head(const DecoderState& s, const PinParams& p) {
  return SoftPartition::from_logits(cosine_logits(s.r, s.c, p));
}

inline constexpr double kMaskedLogit = -1e9;

/// Output of a decoder that scores all K_max columns before masking.
struct MaskedPartition {
  Tensor masked_logits;  // N x K_max, columns >= k set to kMaskedLogit
  Tensor full_probs;     // softmax of masked_logits
  SoftPartition part;    // first k columns
};

inline MaskedPartition mask_and_select(const Tensor& logits, std::size_t k) {
  const std::size_t km = logits.dim(1);
  std::vector<std::uint8_t> mask(km, 0);
  for (std::size_t j = k; j < km; ++j) mask[j] = 1;
  MaskedPartition out;
  out.masked_logits = ad::masked_fill(logits, mask, kMaskedLogit);
  out.full_probs = ad::softmax(out.masked_logits);
  out.part.logits = ad::narrow(out.masked_logits, 1, 0, k);
  out.part.probs = ad::narrow(out.full_probs, 1, 0, k);
  return out;
}

/// 2L row self-attention blocks, then a pointwise MLP to K_max logits.
inline MaskedPartition naive_decoder_masked(const Tensor& r0, std::size_t k, const PinParams& p) {
  const PinHyper& h = p.hyper;
  check_k(k, h);
  if (h.decoder != DecoderKind::kNaive) throw std::logic_error("naive decoder: parameters are for another decoder");
  Tensor r = r0;
  for (const auto& blk : p.row_blocks) r = self_attention(r, blk, h.heads);
  return mask_and_select(p.naive_head(r), k);
}

inline SoftPartition naive_decoder_forward(const Tensor& r0, std::size_t k, const PinParams& p) {
  return naive_decoder_masked(r0, k, p).part;
}

/// L row self-attention blocks produce a fixed R; all K_max prototypes are
/// then refined against it for L layers without updating R.
inline MaskedPartition noniter_decoder_masked(const Tensor& r0, std::size_t k, const PinParams& p) {
  const PinHyper& h = p.hyper;
  check_k(k, h);
  if (h.decoder != DecoderKind::kNonIterative) throw std::logic_error("noniter decoder: parameters are for another decoder");
  Tensor r = r0;
  for (const auto& blk : p.row_blocks) r = self_attention(r, blk, h.heads);
  Tensor c = p.prototypes;
  for (const auto& layer : p.dec_layers) {
    c = self_attention(c, layer.sa_c, h.heads);
    c = mab_pre(c, r, layer.ca_cr, h.heads);
  }
  return mask_and_select(cosine_logits(r, c, p), k);
}

inline SoftPartition noniter_decoder_forward(const Tensor& r0, std::size_t k, const PinParams& p) {
  return noniter_decoder_masked(r0, k, p).part;
}

/// Decoder dispatch on already encoded rows.
inline SoftPartition decode_partition(const Tensor& r0, std::size_t k, const PinParams& p) {
  switch (p.hyper.decoder) {
    case DecoderKind::kIterative: return cosine_head(decode(r0, k, p), p);
    case DecoderKind::kNaive: return naive_decoder_forward(r0, k, p);
    case DecoderKind::kNonIterative: return noniter_decoder_forward(r0, k, p);
  }
  throw std::logic_error("decode_partition: bad decoder kind");
}

inline SoftPartition pin_forward(const Dataset& ds, std::size_t k, const PinParams& p) {
  check_k(k, p.hyper);
  return decode_partition(encode(ds, p), k, p);
}

}  // namespace amoclust
