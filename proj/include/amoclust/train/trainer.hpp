#pragma once

// Training on freshly sampled prior tasks with separate PIN and CIN losses.

#include <amoclust/autodiff/tensor.hpp>
#include <amoclust/metrics/soft.hpp>
#include <amoclust/model/cin.hpp>
#include <amoclust/model/pin.hpp>
#include <amoclust/parallel.hpp>
#include <amoclust/prior/preprocess.hpp>
#include <amoclust/rng.hpp>
#include <amoclust/train/optim.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace amoclust {

enum class PinLossKind { kSoftAri, kSoftNmi, kMatchCe, kMatchSoftAcc };
enum class CinLossKind { kCe, kOrdinal };
enum class Coupling { kDecoupled, kAdditive };

inline std::string to_string(PinLossKind k) {
  switch (k) {
    case PinLossKind::kSoftAri: return "softari";
    case PinLossKind::kSoftNmi: return "softnmi";
    case PinLossKind::kMatchCe: return "match_ce";
    case PinLossKind::kMatchSoftAcc: return "match_softacc";
  }
  return "?";
}
inline std::string to_string(CinLossKind k) { return k == CinLossKind::kCe ? "ce" : "ordinal"; }
inline std::string to_string(Coupling c) { return c == Coupling::kDecoupled ? "decoupled" : "additive"; }

inline PinLossKind parse_pin_loss(const std::string& s) {
  if (s == "softari") return PinLossKind::kSoftAri;
  if (s == "softnmi") return PinLossKind::kSoftNmi;
  if (s == "match_ce") return PinLossKind::kMatchCe;
  if (s == "match_softacc") return PinLossKind::kMatchSoftAcc;
  throw std::invalid_argument("unknown pin loss '" + s + "' (expected softari|softnmi|match_ce|match_softacc)");
}
inline CinLossKind parse_cin_loss(const std::string& s) {
  if (s == "ce") return CinLossKind::kCe;
  if (s == "ordinal") return CinLossKind::kOrdinal;
  throw std::invalid_argument("unknown cin loss '" + s + "' (expected ce|ordinal)");
}
inline Coupling parse_coupling(const std::string& s) {
  if (s == "decoupled") return Coupling::kDecoupled;
  if (s == "additive") return Coupling::kAdditive;
  throw std::invalid_argument("unknown coupling '" + s + "' (expected decoupled|additive)");
}

inline CinHead cin_head_for(CinLossKind k) { return k == CinLossKind::kCe ? CinHead::kCategorical : CinHead::kOrdinal; }

struct TrainConfig {
  long steps = 1000;
  int batch_tasks = 8;
  long warmup_steps = 50;
  double peak_lr = 1e-3;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  int threads = 0;
  bool permute_features = true;
  PriorRanges prior = PriorRanges::desk();
  PinLossKind pin_loss_kind = PinLossKind::kSoftAri;
  CinLossKind cin_loss_kind = CinLossKind::kCe;
  Coupling coupling = Coupling::kDecoupled;

  Schedule schedule() const { return {steps, warmup_steps, peak_lr}; }

  void validate() const {
    if (steps < 1) throw std::invalid_argument("TrainConfig: steps must be >= 1");
    if (batch_tasks < 1) throw std::invalid_argument("TrainConfig: batch_tasks must be >= 1");
    if (warmup_steps < 0 || warmup_steps > steps) throw std::invalid_argument("TrainConfig: need 0 <= warmup_steps <= steps");
    if (!(peak_lr > 0)) throw std::invalid_argument("TrainConfig: peak_lr must be positive");
    if (weight_decay < 0) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Losses

inline Tensor pin_loss(const SoftPartition& p, std::span<const int> z, PinLossKind kind) {
  switch (kind) {
    case PinLossKind::kSoftAri: return ad::scale(soft_ari(p, z), -1.0);
    case PinLossKind::kSoftNmi: return ad::add_scalar(ad::scale(soft_nmi(p, z), -1.0), 1.0);
    case PinLossKind::kMatchCe: return matching_ce_loss(p, z);
    case PinLossKind::kMatchSoftAcc: return matching_softacc_loss(p, z);
  }
  throw std::invalid_argument("pin_loss: unknown kind");
}

inline void check_k_true(std::size_t k_true, std::size_t k_max) {
  if (k_true < 2 || k_true > k_max) {
    throw std::out_of_range("cin_loss: k_true " + std::to_string(k_true) + " outside [2," + std::to_string(k_max) + "]");
  }
}

/// -log p(K* | X) from posterior logits (1 x (k_max - 1)).
inline Tensor cin_ce_loss(const Tensor& logits, std::size_t k_true) {
  check_k_true(k_true, logits.numel() + 1);
  return ad::scale(ad::sum(ad::narrow(ad::log_softmax(logits), 1, k_true - 2, 1)), -1.0);
}

/// Indicator targets 1[K* > K] for thresholds K = 2..k_max-1.
inline std::vector<double> ordinal_targets(std::size_t k_true, std::size_t k_max) {
  check_k_true(k_true, k_max);
  std::vector<double> y;
  for (std::size_t k = 2; k + 1 <= k_max; ++k) y.push_back(k_true > k ? 1.0 : 0.0);
  return y;
}

/// Mean binary cross-entropy of eta against ordinal targets.
inline Tensor cin_ordinal_loss(const Tensor& eta, std::size_t k_true, std::size_t k_max) {
  std::vector<double> y = ordinal_targets(k_true, k_max);
  const std::size_t m = y.size();
  if (eta.numel() != m) throw ad::ShapeError("cin_ordinal_loss: eta width differs from threshold count");
  const Tensor yt = Tensor::from(eta.shape(), std::move(y));
  return ad::scale(ad::sum(ad::softplus(eta) - eta * yt), 1.0 / static_cast<double>(m));
}

inline Tensor cin_loss(const Fingerprint& fp, std::size_t k_true, const CinParams& c, CinLossKind kind) {
  if (kind == CinLossKind::kCe) return cin_ce_loss(cin_forward(fp, c).logits, k_true);
  return cin_ordinal_loss(ordinal_forward(fp, c).eta, k_true, c.k_max);
}

// ---------------------------------------------------------------------------
// Gradients

struct Model {
  PinParams pin;
  CinParams cin;

  static Model init(const PinHyper& h, CinLossKind cin_kind, Rng& rng) {
    Model m;
    m.pin = PinParams::init(h, rng);
    m.cin = CinParams::init(h.k_max, cin_head_for(cin_kind), rng);
    return m;
  }
};

struct TaskGradients {
  double pin_loss = 0;
  double cin_loss = 0;
  GradSet pin;
  GradSet cin;
};

/// Which losses reach the backward pass.
enum class LossTerms { kBoth, kPinOnly };

inline std::string describe_task(const Dataset& ds) {
  std::ostringstream os;
  os << "N=" << ds.n() << " D=" << ds.d() << " K*=" << ds.k_true << " prior=" << to_string(ds.provenance.config.prior_kind)
     << " seed=" << ds.provenance.config.seed;
  return os.str();
}

/// Losses and parameter gradients for one labelled task, on private copies of
/// the parameters.
inline TaskGradients task_gradients(const Dataset& ds, const Model& model, const TrainConfig& cfg,
                                    LossTerms terms = LossTerms::kBoth) {
  if (!ds.labels) throw std::invalid_argument("task_gradients: dataset has no labels");
  const std::size_t k_true = static_cast<std::size_t>(ds.k_true);
  PinParams pin = clone_leaves(model.pin);
  CinParams cin = clone_leaves(model.cin);
  const Tensor r0 = encode(ds, pin);
  const SoftPartition part = decode_partition(r0, k_true, pin);
  const Tensor lp = pin_loss(part, *ds.labels, cfg.pin_loss_kind);

  Fingerprint fp;
  if (cfg.coupling == Coupling::kDecoupled) {
    ad::NoGradGuard ng;
    fp = pin_fingerprints(r0, pin, true);
  } else {
    fp = pin_fingerprints(r0, pin, false);
  }
  const Tensor lc = cin_loss(fp, k_true, cin, cfg.cin_loss_kind);
  if (!std::isfinite(lp.item()) || !std::isfinite(lc.item())) {
    throw std::runtime_error("non-finite loss (pin " + std::to_string(lp.item()) + ", cin " +
                             std::to_string(lc.item()) + ") on task " + describe_task(ds));
  }
  ad::backward(terms == LossTerms::kPinOnly ? lp : lp + lc);

  TaskGradients out;
  out.pin_loss = lp.item();
  out.cin_loss = lc.item();
  out.pin = collect_grads(param_refs(pin));
  out.cin = collect_grads(param_refs(cin));
  return out;
}

struct BatchGradients {
  double pin_loss = 0;
  double cin_loss = 0;
  GradSet pin;
  GradSet cin;
};

inline void accumulate(GradSet& acc, const GradSet& g) {
  for (std::size_t i = 0; i < acc.size(); ++i)
    for (std::size_t j = 0; j < acc[i].size(); ++j) acc[i][j] += g[i][j];
}

inline void scale_grads(GradSet& g, double c) {
  for (auto& v : g)
    for (double& x : v) x *= c;
}

/// Batch-mean losses and gradients; tasks run in parallel and are reduced in
/// task-index order.
inline BatchGradients batch_gradients(const std::vector<Dataset>& batch, const Model& model, const TrainConfig& cfg,
                                      LossTerms terms = LossTerms::kBoth) {
  if (batch.empty()) throw std::invalid_argument("batch_gradients: empty batch");
  std::vector<TaskGradients> per(batch.size());
  parallel_for(batch.size(), resolve_threads(cfg.threads),
               [&](std::size_t i) { per[i] = task_gradients(batch[i], model, cfg, terms); });
  BatchGradients out;
  out.pin = std::move(per[0].pin);
  out.cin = std::move(per[0].cin);
  out.pin_loss = per[0].pin_loss;
  out.cin_loss = per[0].cin_loss;
  for (std::size_t i = 1; i < per.size(); ++i) {
    accumulate(out.pin, per[i].pin);
    accumulate(out.cin, per[i].cin);
    out.pin_loss += per[i].pin_loss;
    out.cin_loss += per[i].cin_loss;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  scale_grads(out.pin, inv);
  scale_grads(out.cin, inv);
  out.pin_loss *= inv;
  out.cin_loss *= inv;
  return out;
}

struct StepMetrics {
  long step = 0;
  double lr = 0;
  double pin_loss = 0;
  double cin_loss = 0;
  double grad_norm_pin = 0;
  double grad_norm_cin = 0;
  double wall_ms = 0;
};

struct TrainState {
  Model model;
  AdamW opt_pin;
  AdamW opt_cin;
  long step = 0;
};

/// Fresh tasks for step `step`; task i is seeded by (seed, step, i).
inline std::vector<Dataset> sample_batch(const TrainConfig& cfg, long step) {
  std::vector<Dataset> batch(static_cast<std::size_t>(cfg.batch_tasks));
  parallel_for(batch.size(), resolve_threads(cfg.threads), [&](std::size_t i) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(step), i));
    batch[i] = generate_task(sample_task_config(rng, cfg.prior), cfg.prior, cfg.permute_features);
  });
  return batch;
}

/// One optimizer update on `batch` at schedule index state.step.
inline StepMetrics train_step(const std::vector<Dataset>& batch, TrainState& st, const TrainConfig& cfg,
                              LossTerms terms = LossTerms::kBoth) {
  const auto t0 = std::chrono::steady_clock::now();
  BatchGradients g = batch_gradients(batch, st.model, cfg, terms);
  StepMetrics m;
  m.step = st.step;
  m.lr = lr_at(std::min(st.step + 1, cfg.steps), cfg.schedule());
  m.pin_loss = g.pin_loss;
  m.cin_loss = g.cin_loss;
  m.grad_norm_pin = clip_global_norm(g.pin, cfg.grad_clip);
  m.grad_norm_cin = clip_global_norm(g.cin, cfg.grad_clip);
  if (!std::isfinite(m.grad_norm_pin) || !std::isfinite(m.grad_norm_cin)) {
    throw std::runtime_error("non-finite gradient norm at step " + std::to_string(st.step));
  }
  st.opt_pin.step(param_refs(st.model.pin), g.pin, m.lr);
  st.opt_cin.step(param_refs(st.model.cin), g.cin, m.lr);
  ++st.step;
  m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return m;
}

inline TrainState init_train_state(const PinHyper& h, const TrainConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0x5eed));
  TrainState st;
  st.model = Model::init(h, cfg.cin_loss_kind, rng);
  st.opt_pin = AdamW(cfg.weight_decay);
  st.opt_cin = AdamW(cfg.weight_decay);
  return st;
}

using StepCallback = std::function<void(const StepMetrics&)>;

struct TrainResult {
  Model model;
  std::vector<StepMetrics> log;
};

inline TrainResult train_run(const PinHyper& h, const TrainConfig& cfg, const StepCallback& on_step = {}) {
  TrainState st = init_train_state(h, cfg);
  TrainResult res;
  res.log.reserve(static_cast<std::size_t>(cfg.steps));
  for (long s = 0; s < cfg.steps; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<Dataset> batch = sample_batch(cfg, s);
    StepMetrics m = train_step(batch, st, cfg);
    m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (on_step) on_step(m);
    res.log.push_back(m);
  }
  res.model = std::move(st.model);
  return res;
}

}  // namespace amoclust
