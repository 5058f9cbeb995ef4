#include <amoclust/amoclust.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace amoclust;
namespace fs = std::filesystem;
using io::json;

struct Globals {
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
};

struct GenArgs {
  std::string prior = "gmm";
  int count = 25;
  std::string out_dir = "data";
  int n_min = 100, n_max = 200, d_min = 2, d_max = 8, k_max = 10;
  double omega_cap = 0.8;
};

int cmd_gen(const GenArgs& a, const Globals& g) {
  PriorRanges r = PriorRanges::desk();
  r.n_min = a.n_min;
  r.n_max = a.n_max;
  r.d_min = a.d_min;
  r.d_max = a.d_max;
  r.k_max = a.k_max;
  r.omega_cap = a.omega_cap;
  if (a.prior == "gmm") r.gmm_fraction = 1.0;
  else if (a.prior == "zeus") r.gmm_fraction = 0.0;
  else if (a.prior == "mixed") r.gmm_fraction = PriorRanges::paper().gmm_fraction;
  else throw std::invalid_argument("--prior must be gmm, zeus or mixed");
  if (a.count < 1) throw std::invalid_argument("--count must be >= 1");

  std::map<int, int> k_hist;
  int gmm = 0;
  double omega_sum = 0;
  const int width = std::max(4, static_cast<int>(std::to_string(a.count - 1).size()));
  for (int i = 0; i < a.count; ++i) {
    const Dataset ds = generate_task(g.seed, static_cast<std::uint64_t>(i), r, true);
    std::string name = std::to_string(i);
    name = "task_" + std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(name.size()))), '0') + name;
    io::write_dataset(a.out_dir, name, ds);
    ++k_hist[ds.k_true];
    if (ds.provenance.config.prior_kind == PriorKind::kGmm) {
      ++gmm;
      omega_sum += ds.provenance.achieved_omega_max.value_or(0.0);
    }
  }
  std::cout << "wrote " << a.count << " datasets to " << a.out_dir << "\n";
  std::cout << "gmm: " << gmm << "  zeus: " << a.count - gmm << "\n";
  std::cout << "K histogram:";
  for (auto [k, c] : k_hist) std::cout << "  " << k << ":" << c;
  std::cout << "\n";
  if (gmm > 0) std::cout << "mean achieved omega_max (gmm): " << omega_sum / gmm << "\n";
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string preset;
  std::string out = "model.tcpf";
  std::string log;
  long steps = 0;
};

int cmd_train(const TrainArgs& a, const Globals& g) {
  io::RunConfig rc;
  if (!a.config.empty() && !a.preset.empty()) throw std::invalid_argument("--config and --preset are exclusive");
  if (!a.config.empty()) rc = io::load_run_config(a.config);
  else rc = io::preset(a.preset.empty() ? "desk" : a.preset);
  if (g.seed_set) rc.train.seed = g.seed;
  if (g.threads > 0) rc.train.threads = g.threads;
  if (a.steps > 0) {
    rc.train.steps = a.steps;
    rc.train.warmup_steps = std::min(rc.train.warmup_steps, a.steps);
  }
  const fs::path out(a.out);
  const fs::path log_path = a.log.empty() ? (out.has_parent_path() ? out.parent_path() : fs::path(".")) / "train_log.csv"
                                          : fs::path(a.log);
  if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw io::IoError("cannot open " + log_path.string());
  log << "step,lr,pin_loss,cin_loss,grad_norm_pin,grad_norm_cin,wall_ms\n";
  const long every = std::max(1L, rc.train.steps / 20);
  auto res = train_run(rc.model, rc.train, [&](const StepMetrics& m) {
    log << m.step << ',' << io::format_double(m.lr) << ',' << io::format_double(m.pin_loss) << ','
        << io::format_double(m.cin_loss) << ',' << io::format_double(m.grad_norm_pin) << ','
        << io::format_double(m.grad_norm_cin) << ',' << io::format_double(m.wall_ms) << '\n';
    if (m.step % every == 0 || m.step + 1 == rc.train.steps)
      std::cerr << "step " << m.step << "  lr " << m.lr << "  pin " << m.pin_loss << "  cin " << m.cin_loss << "\n";
  });
  log.close();
  io::save_checkpoint(out, res.model, {rc, rc.train.steps});
  std::cout << "wrote " << out.string() << " and " << log_path.string() << "\n";
  return 0;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(io::trim(item));
  return out;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data_dir = "data";
  std::string methods = "model,kmeans,gmm";
  std::string tracks = "known_k,inferred_k";
  std::string out_dir = "results";
  int k_max = 10;
  bool no_timing = false;
};

int cmd_eval(const EvalArgs& a, const Globals& g) {
  BenchmarkOptions opt;
  opt.methods = split_list(a.methods);
  opt.tracks.clear();
  for (const auto& t : split_list(a.tracks)) opt.tracks.push_back(parse_track(t));
  opt.seed = g.seed;
  opt.threads = g.threads;
  opt.k_max = a.k_max;
  opt.timing = !a.no_timing;
  std::optional<io::LoadedCheckpoint> ck;
  if (std::find(opt.methods.begin(), opt.methods.end(), "model") != opt.methods.end()) {
    if (a.checkpoint.empty()) throw std::invalid_argument("method 'model' needs --checkpoint");
    ck = io::load_checkpoint(a.checkpoint);
    opt.k_max = static_cast<int>(ck->model.pin.hyper.k_max);
  }
  if (!fs::is_directory(a.data_dir)) throw io::IoError("data directory " + a.data_dir + " does not exist");
  const auto out = benchmark_run(ck ? &ck->model : nullptr, a.data_dir, a.out_dir, opt);
  std::cout << "method,track,median_ari,median_nmi,median_rank_ari,k_mae_median\n";
  for (const auto& r : out.results)
    std::cout << r.method << ',' << to_string(r.track) << ',' << r.median_ari << ',' << r.median_nmi << ','
              << r.median_rank_ari << ',' << (r.k_mae_median ? std::to_string(*r.k_mae_median) : "") << "\n";
  if (out.skipped) std::cout << out.skipped << " dataset(s) skipped\n";
  return 0;
}

struct ClusterArgs {
  std::string checkpoint;
  std::string input;
  std::string out;
  int k = 0;
};

int cmd_cluster(const ClusterArgs& a, const Globals&) {
  const auto ck = io::load_checkpoint(a.checkpoint);
  const Model& m = ck.model;
  io::Table t = io::read_table(a.input);
  const Dataset& ds = t.ds;
  const auto& prior = ck.info.config.train.prior;
  if (ds.n() < prior.n_min || ds.n() > prior.n_max || ds.d() < prior.d_min || ds.d() > prior.d_max) {
    std::cerr << "warning: input has N=" << ds.n() << " D=" << ds.d() << ", outside the training range N in ["
              << prior.n_min << "," << prior.n_max << "], D in [" << prior.d_min << "," << prior.d_max << "]\n";
  }
  ad::NoGradGuard ng;
  std::size_t k = 0;
  std::string header;
  if (a.k > 0) {
    k = static_cast<std::size_t>(a.k);
    check_k(k, m.pin.hyper);
    header = "# k=" + std::to_string(k) + " (user)\n";
  } else {
    const KPrediction kp = predict_k(ds, m.pin, m.cin);
    k = kp.k;
    header = "# k_hat=" + std::to_string(k) + " posterior=";
    for (std::size_t i = 0; i < kp.posterior.size(); ++i)
      header += (i ? ";" : "") + std::to_string(i + 2) + ":" + io::format_double(kp.posterior[i]);
    header += '\n';
  }
  const SoftPartition p = pin_forward(ds, k, m.pin);
  const auto labels = p.argmax();
  std::string body = header + "cluster,max_prob\n";
  for (std::size_t i = 0; i < labels.size(); ++i)
    body += std::to_string(labels[i]) + ',' + io::format_double(p.probs[i * k + static_cast<std::size_t>(labels[i])]) + '\n';
  const fs::path out = a.out.empty() ? fs::path(a.input).replace_extension(".clusters.csv") : fs::path(a.out);
  io::write_text(out, body);
  bool any_cat = false;
  for (const auto& c : t.categories) any_cat = any_cat || !c.empty();
  if (any_cat && !t.used_sidecar) {
    json side;
    std::vector<std::string> kinds;
    json cats = json::object();
    std::size_t fi = 0;
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      if (t.has_label_column && t.columns[c] == "label") continue;
      kinds.emplace_back(to_string(ds.col_kind[fi]));
      if (!t.categories[fi].empty()) cats[t.columns[c]] = t.categories[fi];
      ++fi;
    }
    side["col_kind"] = kinds;
    side["categories"] = cats;
    const fs::path sp = io::meta_path_for(out);
    io::write_text(sp, side.dump(2) + "\n");
    std::cout << "wrote category encoding to " << sp.string() << "\n";
  }
  std::cout << "wrote " << labels.size() << " assignments (K=" << k << ") to " << out.string() << "\n";
  return 0;
}

int cmd_gradcheck() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto entries = run_gradcheck_suite();
  int failed = 0;
  std::printf("%-40s %12s %8s  %s\n", "check", "max_rel_err", "tol", "result");
  for (const auto& e : entries) {
    std::printf("%-40s %12.3e %8.0e  %s\n", e.name.c_str(), e.report.max_rel_err, e.tol, e.report.pass ? "pass" : "FAIL");
    failed += e.report.pass ? 0 : 1;
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%zu checks, %d failed, %.2f s\n", entries.size(), failed, s);
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Amortized clustering: synthetic data, training, evaluation and inference"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Random seed")->each([&](const std::string&) { g.seed_set = true; });
  app.add_option("--threads", g.threads, "Worker threads (default: AMOCLUST_THREADS, else all cores)");

  GenArgs ga;
  auto* gen = app.add_subcommand("gen", "Generate synthetic labelled datasets");
  gen->add_option("--prior", ga.prior, "gmm | zeus | mixed")->check(CLI::IsMember({"gmm", "zeus", "mixed"}));
  gen->add_option("--count", ga.count, "Number of datasets");
  gen->add_option("--out-dir", ga.out_dir, "Output directory");
  gen->add_option("--n-min", ga.n_min);
  gen->add_option("--n-max", ga.n_max);
  gen->add_option("--d-min", ga.d_min);
  gen->add_option("--d-max", ga.d_max);
  gen->add_option("--k-max", ga.k_max);
  gen->add_option("--omega-cap", ga.omega_cap, "Upper bound on the sampled maximum pairwise overlap");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model on the synthetic prior");
  train->add_option("--config", ta.config, "Run config JSON");
  train->add_option("--preset", ta.preset, "desk | paper")->check(CLI::IsMember({"desk", "paper"}));
  train->add_option("--out", ta.out, "Checkpoint path");
  train->add_option("--log", ta.log, "Training log CSV (default: train_log.csv next to the checkpoint)");
  train->add_option("--steps", ta.steps, "Override the number of steps");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Benchmark methods on a directory of labelled datasets");
  eval->add_option("--checkpoint", ea.checkpoint);
  eval->add_option("--data-dir", ea.data_dir);
  eval->add_option("--methods", ea.methods, "Comma list of model,kmeans,gmm,sgmm,oracle");
  eval->add_option("--tracks", ea.tracks, "Comma list of known_k,inferred_k");
  eval->add_option("--out-dir", ea.out_dir);
  eval->add_option("--k-max", ea.k_max, "Largest K tried by silhouette selection when no model is loaded");
  eval->add_flag("--no-timing", ea.no_timing, "Write wall_ms as 0 for byte-reproducible output");

  ClusterArgs ca;
  auto* cluster = app.add_subcommand("cluster", "Cluster one CSV with a trained model");
  cluster->add_option("--checkpoint", ca.checkpoint)->required();
  cluster->add_option("input", ca.input, "Input CSV")->required();
  cluster->add_option("--out", ca.out, "Output CSV (default: <input>.clusters.csv)");
  cluster->add_option("--k", ca.k, "Force the number of clusters")->check(CLI::PositiveNumber);

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_gen(ga, g);
    if (*train) return cmd_train(ta, g);
    if (*eval) return cmd_eval(ea, g);
    if (*cluster) return cmd_cluster(ca, g);
    if (*gc) return cmd_gradcheck();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
