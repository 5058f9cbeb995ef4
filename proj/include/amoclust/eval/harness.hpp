#pragma once

// Evaluation protocol: known-K and inferred-K tracks over a dataset suite,
// per-dataset rows and per-(method, track) aggregates.

#include <amoclust/eval/baselines.hpp>
#include <amoclust/io/dataset_io.hpp>
#include <amoclust/metrics/partition.hpp>
#include <amoclust/model/cin.hpp>
#include <amoclust/model/pin.hpp>
#include <amoclust/parallel.hpp>
#include <amoclust/rng.hpp>
#include <amoclust/train/trainer.hpp>

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace amoclust {

enum class Track { kKnownK, kInferredK };

inline std::string to_string(Track t) { return t == Track::kKnownK ? "known_k" : "inferred_k"; }

inline Track parse_track(const std::string& s) {
  if (s == "known_k") return Track::kKnownK;
  if (s == "inferred_k") return Track::kInferredK;
  throw std::invalid_argument("unknown track '" + s + "' (expected known_k|inferred_k)");
}

struct ClusterOutput {
  Labels labels;
  int k = 0;
};

/// A clustering method: given a dataset and, on the known-K track, its K.
using ClusterFn = std::function<ClusterOutput(const Dataset&, std::optional<int> k, Rng&)>;

struct Method {
  std::string name;
  ClusterFn run;
};

inline Method baseline_method(BaselineKind kind, int k_max = 10) {
  return {to_string(kind), [kind, k_max](const Dataset& ds, std::optional<int> k, Rng& rng) {
            const Eigen::MatrixXd x = one_hot_categoricals(ds);
            if (k) return ClusterOutput{run_baseline(kind, x, *k, rng), *k};
            SilhouetteSelection sel = silhouette_select_k(x, kind, 2, std::min(k_max, ds.n() - 1), rng);
            return ClusterOutput{std::move(sel.labels), sel.k_hat};
          }};
}

/// The amortized model; `model` must outlive the method.
inline Method model_method(const Model& model, std::string name = "model") {
  return {std::move(name), [&model](const Dataset& ds, std::optional<int> k, Rng&) {
            ad::NoGradGuard ng;
            const int kk = k ? *k : static_cast<int>(predict_k(ds, model.pin, model.cin).k);
            return ClusterOutput{pin_forward(ds, static_cast<std::size_t>(kk), model.pin).argmax(), kk};
          }};
}

/// Returns the generating labels; an upper bound for sanity checks.
inline Method oracle_method() {
  return {"oracle", [](const Dataset& ds, std::optional<int>, Rng&) {
            if (!ds.labels) throw std::invalid_argument("oracle: dataset has no labels");
            return ClusterOutput{*ds.labels, ds.k_true};
          }};
}

inline Method make_method(const std::string& name, const Model* model, int k_max) {
  if (name == "model") {
    if (!model) throw std::invalid_argument("method 'model' needs a checkpoint");
    return model_method(*model);
  }
  if (name == "kmeans") return baseline_method(BaselineKind::kKMeans, k_max);
  if (name == "gmm") return baseline_method(BaselineKind::kGmmFull, k_max);
  if (name == "sgmm") return baseline_method(BaselineKind::kGmmSpherical, k_max);
  if (name == "oracle") return oracle_method();
  throw std::invalid_argument("unknown method '" + name + "' (expected model|kmeans|gmm|sgmm|oracle)");
}

struct NamedDataset {
  std::string name;
  std::optional<Dataset> ds;  // empty when it could not be read
  std::string error;
};

struct DatasetResult {
  std::string method;
  std::string dataset;
  Track track = Track::kKnownK;
  int k_true = 0;
  int k_pred = 0;
  double ari = std::numeric_limits<double>::quiet_NaN();
  double nmi = std::numeric_limits<double>::quiet_NaN();
  double wall_ms = 0;
  bool ok = false;
  std::string error;
};

struct MethodResult {
  std::string method;
  Track track = Track::kKnownK;
  std::vector<DatasetResult> rows;
  double median_ari = 0, iqr_ari = 0;
  double median_nmi = 0, iqr_nmi = 0;
  double median_rank_ari = 0, iqr_rank_ari = 0;
  std::optional<double> k_mae;         // inferred track only
  std::optional<double> k_mae_median;  // inferred track only
  double median_wall_ms = 0;
};

/// FNV-1a; gives each dataset a seed that does not depend on suite order.
inline std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline DatasetResult evaluate_one(const Method& m, const NamedDataset& nd, Track track, std::uint64_t seed) {
  DatasetResult r;
  r.method = m.name;
  r.dataset = nd.name;
  r.track = track;
  if (!nd.ds) {
    r.error = nd.error;
    return r;
  }
  const Dataset& ds = *nd.ds;
  r.k_true = ds.k_true;
  try {
    if (!ds.labels) throw std::invalid_argument("dataset has no labels");
    if (ds.k_true < 2) throw std::invalid_argument("dataset k_true < 2");
    Rng rng(derive_seed(seed, name_hash(m.name), name_hash(nd.name)));
    const auto t0 = std::chrono::steady_clock::now();
    ClusterOutput out = m.run(ds, track == Track::kKnownK ? std::optional<int>(ds.k_true) : std::nullopt, rng);
    r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    r.k_pred = out.k;
    r.ari = hard_ari(out.labels, *ds.labels);
    r.nmi = hard_nmi(out.labels, *ds.labels);
    r.ok = true;
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

namespace detail {

inline double iqr(const std::vector<double>& v) { return quantile(v, 0.75) - quantile(v, 0.25); }

/// Fills the per-method aggregates; ranks are over datasets every method handled.
inline void summarize(std::vector<MethodResult>& results) {
  for (auto& mr : results) {
    std::vector<double> ari, nmi, wall;
    std::vector<int> kp, kt;
    for (const auto& r : mr.rows) {
      if (!r.ok) continue;
      ari.push_back(r.ari);
      nmi.push_back(r.nmi);
      wall.push_back(r.wall_ms);
      kp.push_back(r.k_pred);
      kt.push_back(r.k_true);
    }
    if (ari.empty()) continue;
    mr.median_ari = median(ari);
    mr.iqr_ari = iqr(ari);
    mr.median_nmi = median(nmi);
    mr.iqr_nmi = iqr(nmi);
    mr.median_wall_ms = median(wall);
    if (mr.track == Track::kInferredK) {
      mr.k_mae = k_mae(kp, kt);
      mr.k_mae_median = k_median_ae(kp, kt);
    }
  }
  if (results.empty()) return;
  const std::size_t nd = results[0].rows.size();
  std::vector<std::size_t> usable;
  for (std::size_t d = 0; d < nd; ++d) {
    bool all = true;
    for (const auto& mr : results) all = all && mr.rows[d].ok;
    if (all) usable.push_back(d);
  }
  if (usable.empty()) return;
  std::vector<std::vector<double>> scores(results.size());
  for (std::size_t m = 0; m < results.size(); ++m)
    for (std::size_t d : usable) scores[m].push_back(results[m].rows[d].ari);
  const auto ranks = median_rank(scores, true);
  for (std::size_t m = 0; m < results.size(); ++m) {
    results[m].median_rank_ari = ranks[m].median_rank;
    results[m].iqr_rank_ari = ranks[m].iqr;
  }
}

}  // namespace detail

/// Runs every method on every dataset for one track. Rows keep dataset order;
/// ranks are computed across the given methods.
inline std::vector<MethodResult> evaluate_track(const std::vector<Method>& methods, const std::vector<NamedDataset>& data,
                                                Track track, std::uint64_t seed, int threads = 0) {
  std::vector<MethodResult> out(methods.size());
  for (std::size_t m = 0; m < methods.size(); ++m) {
    out[m].method = methods[m].name;
    out[m].track = track;
    out[m].rows.resize(data.size());
  }
  const std::size_t cells = methods.size() * data.size();
  parallel_for(cells, resolve_threads(threads), [&](std::size_t c) {
    const std::size_t m = c / data.size(), d = c % data.size();
    out[m].rows[d] = evaluate_one(methods[m], data[d], track, seed);
  });
  detail::summarize(out);
  return out;
}

inline MethodResult evaluate_method(const Method& method, const std::vector<NamedDataset>& data, Track track,
                                    std::uint64_t seed, int threads = 0) {
  return evaluate_track({method}, data, track, seed, threads)[0];
}

// ---------------------------------------------------------------------------
// Result files

inline std::string fmt_metric(double v) { return std::isfinite(v) ? io::format_double(v) : "NA"; }

inline std::string per_dataset_csv(const std::vector<MethodResult>& results, bool timing) {
  std::string s = "method,dataset,track,k_true,k_pred,ari,nmi,wall_ms\n";
  for (const auto& mr : results)
    for (const auto& r : mr.rows) {
      s += r.method + ',' + r.dataset + ',' + to_string(r.track) + ',' + std::to_string(r.k_true) + ',';
      s += r.ok ? std::to_string(r.k_pred) + ',' + fmt_metric(r.ari) + ',' + fmt_metric(r.nmi) : std::string("NA,NA,NA");
      s += ',' + (timing && r.ok ? io::format_double(r.wall_ms) : std::string("0")) + '\n';
    }
  return s;
}

inline std::string aggregate_csv(const std::vector<MethodResult>& results) {
  std::string s = "method,track,median_ari,iqr_ari,median_nmi,iqr_nmi,median_rank_ari,k_mae_median\n";
  for (const auto& mr : results) {
    s += mr.method + ',' + to_string(mr.track) + ',' + fmt_metric(mr.median_ari) + ',' + fmt_metric(mr.iqr_ari) + ',' +
         fmt_metric(mr.median_nmi) + ',' + fmt_metric(mr.iqr_nmi) + ',' + fmt_metric(mr.median_rank_ari) + ',' +
         (mr.k_mae_median ? fmt_metric(*mr.k_mae_median) : std::string()) + '\n';
  }
  return s;
}

inline std::string timing_csv(const std::vector<MethodResult>& results) {
  std::string s = "method,track,median_wall_ms\n";
  for (const auto& mr : results)
    s += mr.method + ',' + to_string(mr.track) + ',' + io::format_double(mr.median_wall_ms) + '\n';
  return s;
}

struct BenchmarkOptions {
  std::vector<std::string> methods{"model", "kmeans", "gmm"};
  std::vector<Track> tracks{Track::kKnownK, Track::kInferredK};
  std::uint64_t seed = 0;
  int threads = 0;
  int k_max = 10;
  bool timing = true;  // false writes wall_ms as 0 so reruns are byte-identical
};

struct BenchmarkOutput {
  std::vector<MethodResult> results;  // track-major
  std::size_t skipped = 0;
};

inline std::vector<NamedDataset> load_suite(const io::fs::path& dir) {
  std::vector<NamedDataset> out;
  for (const auto& name : io::list_datasets(dir)) {
    NamedDataset nd{name, std::nullopt, {}};
    try {
      nd.ds = io::read_dataset(dir, name);
    } catch (const std::exception& e) {
      nd.error = e.what();
    }
    out.push_back(std::move(nd));
  }
  return out;
}

/// Evaluates every requested method and track on every dataset in `data_dir`
/// and writes results_per_dataset.csv, results_aggregate.csv and
/// results_timing.csv into `out_dir`. Nothing is written if the suite cannot
/// be listed or a method name is invalid.
inline BenchmarkOutput benchmark_run(const Model* model, const io::fs::path& data_dir, const io::fs::path& out_dir,
                                     const BenchmarkOptions& opt, std::ostream* warn = &std::cerr) {
  std::vector<Method> methods;
  for (const auto& name : opt.methods) methods.push_back(make_method(name, model, opt.k_max));
  const std::vector<NamedDataset> data = load_suite(data_dir);
  if (data.empty()) throw io::IoError("no datasets in " + data_dir.string());
  BenchmarkOutput out;
  for (const auto& nd : data)
    if (!nd.ds) {
      ++out.skipped;
      if (warn) *warn << "warning: skipping " << nd.name << ": " << nd.error << '\n';
    }
  for (Track t : opt.tracks) {
    auto part = evaluate_track(methods, data, t, opt.seed, opt.threads);
    for (auto& r : part) out.results.push_back(std::move(r));
  }
  if (warn)
    for (const auto& mr : out.results)
      for (std::size_t d = 0; d < data.size(); ++d) {
        const auto& r = mr.rows[d];
        if (!r.ok && data[d].ds)
          *warn << "warning: " << r.method << " failed on " << r.dataset << " (" << to_string(r.track)
                << "): " << r.error << '\n';
      }
  io::fs::create_directories(out_dir);
  io::write_text(out_dir / "results_per_dataset.csv", per_dataset_csv(out.results, opt.timing));
  io::write_text(out_dir / "results_aggregate.csv", aggregate_csv(out.results));
  io::write_text(out_dir / "results_timing.csv", timing_csv(out.results));
  return out;
}

}  // namespace amoclust
