#pragma once

// Hard partition-agreement metrics, assignment solver and rank statistics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace amoclust {

namespace detail {

struct Contingency {
  std::vector<std::vector<double>> n;  // rows: distinct a labels, cols: distinct b labels
  std::vector<double> rows, cols;
  double total = 0;
};

inline Contingency contingency(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw std::invalid_argument("partition metric: label vectors differ in length");
  std::map<int, std::size_t> ia, ib;
  for (int v : a) ia.emplace(v, 0);
  for (int v : b) ib.emplace(v, 0);
  std::size_t c = 0;
  for (auto& [k, v] : ia) v = c++;
  c = 0;
  for (auto& [k, v] : ib) v = c++;
  Contingency t;
  t.n.assign(ia.size(), std::vector<double>(ib.size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) t.n[ia[a[i]]][ib[b[i]]] += 1.0;
  t.rows.assign(ia.size(), 0.0);
  t.cols.assign(ib.size(), 0.0);
  for (std::size_t r = 0; r < t.n.size(); ++r)
    for (std::size_t s = 0; s < t.n[r].size(); ++s) {
      t.rows[r] += t.n[r][s];
      t.cols[s] += t.n[r][s];
    }
  t.total = static_cast<double>(a.size());
  return t;
}

inline double comb2(double x) { return 0.5 * x * (x - 1.0); }

}  // namespace detail

/// Adjusted Rand index. Returns 1 when both partitions are trivial in the same
/// way (single cluster or all singletons), where the chance correction is 0/0.
inline double hard_ari(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw std::invalid_argument("hard_ari: label vectors differ in length");
  if (a.size() < 2) throw std::invalid_argument("hard_ari: need at least two samples");
  const auto t = detail::contingency(a, b);
  double index = 0, sa = 0, sb = 0;
  for (const auto& row : t.n)
    for (double v : row) index += detail::comb2(v);
  for (double v : t.rows) sa += detail::comb2(v);
  for (double v : t.cols) sb += detail::comb2(v);
  const double expected = sa * sb / detail::comb2(t.total);
  const double maximum = 0.5 * (sa + sb);
  const double denom = maximum - expected;
  if (denom == 0.0) return 1.0;
  return (index - expected) / denom;
}

/// NMI with arithmetic-mean normalization; 0 when both entropies vanish.
inline double hard_nmi(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw std::invalid_argument("hard_nmi: label vectors differ in length");
  if (a.empty()) return 0.0;
  const auto t = detail::contingency(a, b);
  const double n = t.total;
  double ha = 0, hb = 0, mi = 0;
  for (double v : t.rows)
    if (v > 0) ha -= v / n * std::log(v / n);
  for (double v : t.cols)
    if (v > 0) hb -= v / n * std::log(v / n);
  for (std::size_t r = 0; r < t.n.size(); ++r)
    for (std::size_t s = 0; s < t.n[r].size(); ++s) {
      const double v = t.n[r][s];
      if (v > 0) mi += v / n * std::log(v * n / (t.rows[r] * t.cols[s]));
    }
  if (ha + hb <= 0) return 0.0;
  return std::clamp(2.0 * mi / (ha + hb), 0.0, 1.0);
}

struct MatchResult {
  std::vector<int> permutation;  // predicted cluster k -> true cluster
  double score = 0;
};

namespace detail {

// Min-cost assignment on a square matrix (potential-based O(n^3) method).
// Returns row -> column.
inline std::vector<int> min_cost_assignment(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(n + 1, 0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n);
  for (std::size_t j = 1; j <= n; ++j) row_to_col[p[j] - 1] = static_cast<int>(j - 1);
  return row_to_col;
}

inline double best_score(const std::vector<std::vector<double>>& m, const std::vector<int>& rows,
                         const std::vector<int>& cols) {
  if (rows.empty()) return 0.0;
  std::vector<std::vector<double>> cost(rows.size(), std::vector<double>(cols.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c) cost[r][c] = -m[rows[r]][cols[c]];
  const auto a = min_cost_assignment(cost);
  double s = 0;
  for (std::size_t r = 0; r < rows.size(); ++r) s += m[rows[r]][cols[a[r]]];
  return s;
}

}  // namespace detail

/// Maximum-score assignment on a square matrix. Among optimal assignments the
/// lexicographically smallest (row 0 first, lowest column first) is returned.
inline MatchResult hungarian(const std::vector<std::vector<double>>& m) {
  const std::size_t k = m.size();
  for (const auto& row : m) {
    if (row.size() != k) throw std::invalid_argument("hungarian: matrix must be square");
    for (double v : row)
      if (!std::isfinite(v)) throw std::invalid_argument("hungarian: non-finite score");
  }
  MatchResult res;
  if (k == 0) return res;
  std::vector<int> all(k);
  std::iota(all.begin(), all.end(), 0);
  const double opt = detail::best_score(m, all, all);
  const double tol = 1e-12 * std::max(1.0, std::abs(opt));
  res.permutation.assign(k, -1);
  std::vector<int> free_cols = all;
  double fixed = 0;
  for (std::size_t r = 0; r < k; ++r) {
    std::vector<int> rest_rows;
    for (std::size_t q = r + 1; q < k; ++q) rest_rows.push_back(static_cast<int>(q));
    for (std::size_t ci = 0; ci < free_cols.size(); ++ci) {
      const int c = free_cols[ci];
      std::vector<int> rest_cols;
      for (int other : free_cols)
        if (other != c) rest_cols.push_back(other);
      const double total = fixed + m[r][static_cast<std::size_t>(c)] + detail::best_score(m, rest_rows, rest_cols);
      if (total >= opt - tol) {
        res.permutation[r] = c;
        fixed += m[r][static_cast<std::size_t>(c)];
        free_cols.erase(free_cols.begin() + static_cast<std::ptrdiff_t>(ci));
        break;
      }
    }
  }
  res.score = 0;
  for (std::size_t r = 0; r < k; ++r) res.score += m[r][static_cast<std::size_t>(res.permutation[r])];
  return res;
}

inline double k_mae(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("k_mae: length mismatch");
  if (pred.empty()) throw std::invalid_argument("k_mae: empty input");
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - truth[i]);
  return s / static_cast<double>(pred.size());
}

/// Linear-interpolated quantile (q in [0,1]) of a non-empty sample.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile: empty input");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

inline double k_median_ae(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("k_median_ae: length mismatch");
  if (pred.empty()) throw std::invalid_argument("k_median_ae: empty input");
  std::vector<double> e;
  for (std::size_t i = 0; i < pred.size(); ++i) e.push_back(std::abs(pred[i] - truth[i]));
  return median(std::move(e));
}

struct RankSummary {
  double median_rank = 0;
  double iqr = 0;
  std::vector<double> ranks;  // per dataset
};

/// Per-dataset ranks (1 = best, ties averaged) summarized per method.
/// `scores[m][d]` is method m's score on dataset d.
inline std::vector<RankSummary> median_rank(const std::vector<std::vector<double>>& scores, bool higher_better) {
  const std::size_t nm = scores.size();
  std::vector<RankSummary> out(nm);
  if (nm == 0) return out;
  const std::size_t nd = scores[0].size();
  for (const auto& s : scores) {
    if (s.size() != nd) throw std::invalid_argument("median_rank: ragged score matrix");
    for (double v : s)
      if (std::isnan(v)) throw std::invalid_argument("median_rank: NaN score");
  }
  for (std::size_t d = 0; d < nd; ++d) {
    std::vector<std::size_t> idx(nm);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return higher_better ? scores[a][d] > scores[b][d] : scores[a][d] < scores[b][d];
    });
    for (std::size_t i = 0; i < nm;) {
      std::size_t j = i;
      while (j + 1 < nm && scores[idx[j + 1]][d] == scores[idx[i]][d]) ++j;
      const double r = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t t = i; t <= j; ++t) out[idx[t]].ranks.push_back(r);
      i = j + 1;
    }
  }
  for (auto& s : out) {
    if (s.ranks.empty()) continue;
    s.median_rank = median(s.ranks);
    s.iqr = quantile(s.ranks, 0.75) - quantile(s.ranks, 0.25);
  }
  return out;
}

}  // namespace amoclust
