#pragma once

// Dataset files: `<name>.csv` (header f0..f{D-1}[,label]) plus
// `<name>.meta.json`.

#include <amoclust/prior/types.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace amoclust::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest round-trip decimal text, independent of the global locale.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc()) throw IoError("format_double: conversion failed");
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  double v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

/// Splits one CSV record; double quotes group fields and "" escapes a quote.
inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline fs::path csv_path(const fs::path& dir, const std::string& name) { return dir / (name + ".csv"); }
inline fs::path meta_path(const fs::path& dir, const std::string& name) { return dir / (name + ".meta.json"); }

/// Sidecar path next to an arbitrary CSV: data.csv -> data.meta.json.
inline fs::path meta_path_for(const fs::path& csv) {
  fs::path p = csv;
  return p.replace_extension(".meta.json");
}

inline json dataset_meta(const Dataset& ds, const std::string& name) {
  json m;
  m["name"] = name;
  m["n"] = ds.n();
  m["d"] = ds.d();
  m["k_true"] = ds.k_true;
  m["prior_kind"] = std::string(to_string(ds.provenance.config.prior_kind));
  m["seed"] = ds.provenance.config.seed;
  std::vector<std::string> kinds;
  for (ColumnKind k : ds.col_kind) kinds.emplace_back(to_string(k));
  m["col_kind"] = kinds;
  if (ds.provenance.target_omega_max) m["target_omega_max"] = *ds.provenance.target_omega_max;
  if (ds.provenance.achieved_omega_max) m["achieved_omega_max"] = *ds.provenance.achieved_omega_max;
  m["feature_order"] = ds.provenance.feature_order;
  m["notes"] = ds.provenance.notes;
  m["has_labels"] = ds.labels.has_value();
  return m;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline std::string dataset_csv(const Dataset& ds) {
  std::string out;
  for (int j = 0; j < ds.d(); ++j) out += (j ? ",f" : "f") + std::to_string(j);
  if (ds.labels) out += ",label";
  out += '\n';
  for (int i = 0; i < ds.n(); ++i) {
    for (int j = 0; j < ds.d(); ++j) {
      if (j) out += ',';
      out += format_double(ds.x(i, j));
    }
    if (ds.labels) out += ',' + std::to_string((*ds.labels)[static_cast<std::size_t>(i)]);
    out += '\n';
  }
  return out;
}

inline void write_dataset(const fs::path& dir, const std::string& name, const Dataset& ds) {
  fs::create_directories(dir);
  write_text(csv_path(dir, name), dataset_csv(ds));
  write_text(meta_path(dir, name), dataset_meta(ds, name).dump(2) + "\n");
}

/// A parsed CSV table. Non-numeric columns are label-encoded in order of
/// first appearance; their levels are kept in `categories`.
struct Table {
  std::vector<std::string> columns;
  Dataset ds;
  std::vector<std::vector<std::string>> categories;  // per feature column
  bool has_label_column = false;
  bool used_sidecar = false;
};

inline Table parse_table(const std::string& text, const std::string& source, const std::optional<json>& meta) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IoError(source + ": empty file");
  Table t;
  for (auto& c : split_csv_line(line)) t.columns.push_back(trim(c));
  const std::size_t width = t.columns.size();
  std::vector<std::vector<std::string>> cells(width);
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != width) {
      throw IoError(source + ":" + std::to_string(row) + ": expected " + std::to_string(width) + " fields, got " +
                    std::to_string(f.size()));
    }
    for (std::size_t j = 0; j < width; ++j) cells[j].push_back(trim(std::move(f[j])));
  }
  const std::size_t n = width ? cells[0].size() : 0;
  if (n == 0) throw IoError(source + ": no data rows");

  std::optional<std::size_t> label_col;
  for (std::size_t j = 0; j < width; ++j)
    if (t.columns[j] == "label") label_col = j;
  t.has_label_column = label_col.has_value();
  std::vector<std::size_t> feat;
  for (std::size_t j = 0; j < width; ++j)
    if (!label_col || j != *label_col) feat.push_back(j);
  if (feat.empty()) throw IoError(source + ": no feature columns");

  std::vector<ColumnKind> declared;
  if (meta && meta->contains("col_kind")) {
    for (const auto& k : meta->at("col_kind")) declared.push_back(parse_column_kind(k.get<std::string>()));
    if (declared.size() != feat.size()) {
      throw IoError(source + ": sidecar lists " + std::to_string(declared.size()) + " column kinds for " +
                    std::to_string(feat.size()) + " feature columns");
    }
    t.used_sidecar = true;
  }

  t.ds.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(feat.size()));
  t.categories.resize(feat.size());
  for (std::size_t c = 0; c < feat.size(); ++c) {
    const auto& col = cells[feat[c]];
    std::vector<double> vals(n);
    bool numeric = true;
    for (std::size_t i = 0; i < n && numeric; ++i) {
      auto v = parse_double(col[i]);
      if (v) vals[i] = *v;
      else numeric = false;
    }
    ColumnKind kind = numeric ? ColumnKind::kNumeric : ColumnKind::kCategorical;
    if (!declared.empty()) {
      if (declared[c] == ColumnKind::kNumeric && !numeric) {
        throw IoError(source + ": column '" + t.columns[feat[c]] + "' is declared numeric but holds text");
      }
      kind = declared[c];
    }
    if (!numeric) {
      std::map<std::string, int> code;
      for (std::size_t i = 0; i < n; ++i) {
        auto [it, fresh] = code.emplace(col[i], static_cast<int>(code.size()));
        if (fresh) t.categories[c].push_back(col[i]);
        vals[i] = it->second;
      }
    }
    for (std::size_t i = 0; i < n; ++i) t.ds.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = vals[i];
    t.ds.col_kind.push_back(kind);
  }

  if (label_col) {
    std::vector<int> labels(n);
    int k = 0;
    for (std::size_t i = 0; i < n; ++i) {
      auto v = parse_double(cells[*label_col][i]);
      if (!v || *v < 0 || *v != static_cast<double>(static_cast<int>(*v))) {
        throw IoError(source + ":" + std::to_string(i + 2) + ": label must be a non-negative integer");
      }
      labels[i] = static_cast<int>(*v);
      k = std::max(k, labels[i] + 1);
    }
    t.ds.labels = std::move(labels);
    t.ds.k_true = k;
  }
  if (meta) {
    if (meta->contains("k_true")) t.ds.k_true = meta->at("k_true").get<int>();
    if (meta->contains("prior_kind")) t.ds.provenance.config.prior_kind = parse_prior_kind(meta->at("prior_kind").get<std::string>());
    if (meta->contains("seed")) t.ds.provenance.config.seed = meta->at("seed").get<std::uint64_t>();
    if (meta->contains("achieved_omega_max")) t.ds.provenance.achieved_omega_max = meta->at("achieved_omega_max").get<double>();
    if (meta->contains("target_omega_max")) t.ds.provenance.target_omega_max = meta->at("target_omega_max").get<double>();
  }
  t.ds.provenance.config.n = static_cast<int>(n);
  t.ds.provenance.config.d = static_cast<int>(feat.size());
  t.ds.provenance.config.k_true = t.ds.k_true;
  return t;
}

/// Reads a CSV, using `<stem>.meta.json` next to it when present.
inline Table read_table(const fs::path& csv) {
  std::optional<json> meta;
  const fs::path mp = meta_path_for(csv);
  if (fs::exists(mp)) {
    try {
      meta = json::parse(read_text(mp));
    } catch (const json::exception& e) {
      throw IoError(mp.string() + ": " + e.what());
    }
  }
  return parse_table(read_text(csv), csv.string(), meta);
}

inline Dataset read_dataset(const fs::path& dir, const std::string& name) { return read_table(csv_path(dir, name)).ds; }

/// Dataset names (CSV stems) in a directory, sorted.
inline std::vector<std::string> list_datasets(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("data directory " + dir.string() + " does not exist");
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") names.push_back(e.path().stem().string());
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace amoclust::io
