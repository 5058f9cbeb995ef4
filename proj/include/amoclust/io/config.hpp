#pragma once

// Run configuration as strict JSON: every key must be known, every error is
// reported with its JSON path.

#include <amoclust/io/dataset_io.hpp>
#include <amoclust/model/pin.hpp>
#include <amoclust/train/trainer.hpp>

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace amoclust::io {

struct RunConfig {
  PinHyper model;
  TrainConfig train;
};

/// Small-scale preset: 1000 steps x 8 tasks, N in [100,200], D in [2,4], K <= 4.
inline RunConfig desk_preset() {
  RunConfig c;
  c.model = PinHyper::desk();
  c.train.steps = 1000;
  c.train.batch_tasks = 8;
  c.train.warmup_steps = 50;
  c.train.peak_lr = 1e-3;
  c.train.prior = PriorRanges::desk();
  c.train.prior.d_max = 4;
  c.train.prior.k_max = 4;
  return c;
}

/// Published-scale preset.
inline RunConfig paper_preset() {
  RunConfig c;
  c.model = PinHyper::paper();
  c.train.steps = 10000;
  c.train.batch_tasks = 512;
  c.train.warmup_steps = 2000;
  c.train.peak_lr = 1e-4;
  c.train.prior = PriorRanges::paper();
  return c;
}

inline RunConfig preset(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "paper") return paper_preset();
  throw std::invalid_argument("unknown preset '" + name + "' (expected desk|paper)");
}

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems)
      : std::runtime_error(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& ps) {
    std::string s = "invalid run config:";
    for (const auto& p : ps) s += "\n  " + p;
    return s;
  }
  std::vector<std::string> problems_;
};

namespace detail {

/// Reads known keys of one JSON object into targets, recording every type
/// error and unknown key with its path.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path, std::vector<std::string>& problems)
      : obj_(obj), path_(std::move(path)), problems_(problems) {
    if (!obj_.is_object()) problems_.push_back(path_ + ": expected an object");
  }

  template <class T>
  void field(const std::string& key, T& target) {
    known_.push_back(key);
    if (!obj_.is_object() || !obj_.contains(key)) return;
    const json& v = obj_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw std::invalid_argument("expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)
            throw std::invalid_argument("expected a non-negative integer");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw std::invalid_argument("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw std::invalid_argument("expected a string");
      }
      target = v.get<T>();
    } catch (const std::exception& e) {
      problems_.push_back(path_ + "/" + key + ": " + e.what());
    }
  }

  template <class E>
  void enum_field(const std::string& key, E& target, const std::function<E(const std::string&)>& parse) {
    std::string s;
    const std::size_t before = problems_.size();
    field(key, s);
    if (problems_.size() != before || s.empty()) return;
    try {
      target = parse(s);
    } catch (const std::exception& e) {
      problems_.push_back(path_ + "/" + key + ": " + e.what());
    }
  }

  const json* child(const std::string& key) {
    known_.push_back(key);
    if (!obj_.is_object() || !obj_.contains(key)) return nullptr;
    return &obj_.at(key);
  }

  void reject_unknown() {
    if (!obj_.is_object()) return;
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (std::find(known_.begin(), known_.end(), it.key()) == known_.end())
        problems_.push_back(path_ + "/" + it.key() + ": unknown key");
  }

 private:
  const json& obj_;
  std::string path_;
  std::vector<std::string>& problems_;
  std::vector<std::string> known_;
};

}  // namespace detail

inline json to_json(const PinHyper& h) {
  return {{"d", h.d},         {"d_tok", h.d_tok},       {"l_enc", h.l_enc},
          {"l_dec", h.l_dec}, {"heads", h.heads},       {"k_max", h.k_max},
          {"ffn_mult", h.ffn_mult}, {"temperature_init", h.temperature_init},
          {"decoder", to_string(h.decoder)}};
}

inline json to_json(const PriorRanges& r) {
  return {{"n_min", r.n_min},         {"n_max", r.n_max},       {"d_min", r.d_min},
          {"d_max", r.d_max},         {"k_max", r.k_max},       {"p_k2", r.p_k2},
          {"gmm_fraction", r.gmm_fraction}, {"omega_min", r.omega_min}, {"omega_cap", r.omega_cap},
          {"pi_low", r.pi_low},       {"mc_samples", r.mc_samples}};
}

inline json to_json(const TrainConfig& t) {
  return {{"steps", t.steps},
          {"batch_tasks", t.batch_tasks},
          {"warmup_steps", t.warmup_steps},
          {"peak_lr", t.peak_lr},
          {"weight_decay", t.weight_decay},
          {"grad_clip", t.grad_clip},
          {"seed", t.seed},
          {"permute_features", t.permute_features},
          {"pin_loss", to_string(t.pin_loss_kind)},
          {"cin_loss", to_string(t.cin_loss_kind)},
          {"coupling", to_string(t.coupling)}};
}

inline json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)}, {"train", to_json(c.train)}, {"prior", to_json(c.train.prior)}};
}

inline void read_hyper(const json& j, const std::string& path, PinHyper& h, std::vector<std::string>& problems) {
  detail::ObjectReader r(j, path, problems);
  r.field("d", h.d);
  r.field("d_tok", h.d_tok);
  r.field("l_enc", h.l_enc);
  r.field("l_dec", h.l_dec);
  r.field("heads", h.heads);
  r.field("k_max", h.k_max);
  r.field("ffn_mult", h.ffn_mult);
  r.field("temperature_init", h.temperature_init);
  r.enum_field<DecoderKind>("decoder", h.decoder, parse_decoder_kind);
  r.reject_unknown();
}

inline void read_prior(const json& j, const std::string& path, PriorRanges& p, std::vector<std::string>& problems) {
  detail::ObjectReader r(j, path, problems);
  r.field("n_min", p.n_min);
  r.field("n_max", p.n_max);
  r.field("d_min", p.d_min);
  r.field("d_max", p.d_max);
  r.field("k_max", p.k_max);
  r.field("p_k2", p.p_k2);
  r.field("gmm_fraction", p.gmm_fraction);
  r.field("omega_min", p.omega_min);
  r.field("omega_cap", p.omega_cap);
  r.field("pi_low", p.pi_low);
  r.field("mc_samples", p.mc_samples);
  r.reject_unknown();
}

inline void read_train(const json& j, const std::string& path, TrainConfig& t, std::vector<std::string>& problems) {
  detail::ObjectReader r(j, path, problems);
  r.field("steps", t.steps);
  r.field("batch_tasks", t.batch_tasks);
  r.field("warmup_steps", t.warmup_steps);
  r.field("peak_lr", t.peak_lr);
  r.field("weight_decay", t.weight_decay);
  r.field("grad_clip", t.grad_clip);
  r.field("seed", t.seed);
  r.field("permute_features", t.permute_features);
  r.enum_field<PinLossKind>("pin_loss", t.pin_loss_kind, parse_pin_loss);
  r.enum_field<CinLossKind>("cin_loss", t.cin_loss_kind, parse_cin_loss);
  r.enum_field<Coupling>("coupling", t.coupling, parse_coupling);
  r.reject_unknown();
}

/// Semantic checks after parsing, reported with paths.
inline void check_ranges(const RunConfig& c, std::vector<std::string>& problems) {
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) problems.push_back(msg);
  };
  const auto& t = c.train;
  const auto& p = c.train.prior;
  const auto& h = c.model;
  check(t.steps >= 1, "/train/steps: must be >= 1");
  check(t.batch_tasks >= 1, "/train/batch_tasks: must be >= 1");
  check(t.warmup_steps >= 0 && t.warmup_steps <= t.steps, "/train/warmup_steps: must lie in [0, steps]");
  check(t.peak_lr > 0, "/train/peak_lr: must be positive");
  check(t.weight_decay >= 0, "/train/weight_decay: must be >= 0");
  check(p.n_min >= 2 && p.n_min <= p.n_max, "/prior/n_min: need 2 <= n_min <= n_max");
  check(p.d_min >= 2 && p.d_min <= p.d_max, "/prior/d_min: need 2 <= d_min <= d_max");
  check(p.k_max >= 2, "/prior/k_max: must be >= 2");
  check(static_cast<std::size_t>(p.k_max) <= h.k_max, "/prior/k_max: exceeds model k_max");
  check(p.p_k2 >= 0 && p.p_k2 <= 1, "/prior/p_k2: must lie in [0,1]");
  check(p.gmm_fraction >= 0 && p.gmm_fraction <= 1, "/prior/gmm_fraction: must lie in [0,1]");
  check(p.omega_min > 0 && p.omega_min <= p.omega_cap && p.omega_cap < 1, "/prior/omega_min: need 0 < omega_min <= omega_cap < 1");
  check(p.pi_low >= 0 && p.pi_low * p.k_max <= 1, "/prior/pi_low: need 0 <= pi_low and k_max * pi_low <= 1");
  check(p.mc_samples >= 1000, "/prior/mc_samples: must be >= 1000");
  try {
    h.validate();
  } catch (const std::exception& e) {
    problems.push_back(std::string("/model: ") + e.what());
  }
}

/// Parses a run config. An optional top-level "preset" names the base that
/// the remaining sections override.
inline RunConfig parse_run_config(const json& j) {
  std::vector<std::string> problems;
  RunConfig c = desk_preset();
  if (!j.is_object()) throw ConfigError({"/: expected an object"});
  detail::ObjectReader top(j, "", problems);
  std::string base;
  top.field("preset", base);
  if (!base.empty()) {
    try {
      c = preset(base);
    } catch (const std::exception& e) {
      problems.push_back(std::string("/preset: ") + e.what());
    }
  }
  if (const json* m = top.child("model")) read_hyper(*m, "/model", c.model, problems);
  if (const json* t = top.child("train")) read_train(*t, "/train", c.train, problems);
  if (const json* p = top.child("prior")) read_prior(*p, "/prior", c.train.prior, problems);
  top.reject_unknown();
  if (problems.empty()) check_ranges(c, problems);
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError({path.string() + ": " + e.what()});
  }
  return parse_run_config(j);
}

}  // namespace amoclust::io
