#pragma once

// Brute-force reference computations used by the tests. Nothing here calls
// into the library's numeric code; every value is recomputed from scratch.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <set>
#include <vector>

#include "gncd/data.hpp"
#include "gncd/matrix.hpp"
#include "gncd/rng.hpp"

namespace oracle {

using gncd::Matrix;

inline Matrix random_unit_rows(std::size_t n, std::size_t d, gncd::Rng& rng) {
  Matrix m(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      m(i, j) = rng.normal();
      s += m(i, j) * m(i, j);
    }
    s = std::sqrt(s);
    for (std::size_t j = 0; j < d; ++j) m(i, j) /= s;
  }
  return m;
}

inline double naive_dot(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
  return s;
}

// Neighborhood of c: c itself, then others by similarity descending, ties
// broken by lower index. Implemented with a full stable sort.
inline std::vector<std::size_t> neighborhood(const Matrix& x, std::size_t c, std::size_t k) {
  std::vector<std::size_t> others;
  for (std::size_t j = 0; j < x.rows(); ++j)
    if (j != c) others.push_back(j);
  std::stable_sort(others.begin(), others.end(), [&](std::size_t a, std::size_t b) {
    return naive_dot(x, c, x, a) > naive_dot(x, c, x, b);
  });
  std::vector<std::size_t> out{c};
  for (std::size_t r = 0; out.size() < k && r < others.size(); ++r) out.push_back(others[r]);
  return out;
}

// g_ij = number of centers c whose neighborhood holds both i and j; i != j.
inline std::vector<std::vector<int>> consensus_counts(const Matrix& x, std::size_t k) {
  const std::size_t n = x.rows();
  std::vector<std::vector<int>> g(n, std::vector<int>(n, 0));
  for (std::size_t c = 0; c < n; ++c) {
    const auto nb = neighborhood(x, c, k);
    const std::set<std::size_t> members(nb.begin(), nb.end());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j && members.count(i) && members.count(j)) ++g[i][j];
  }
  return g;
}

inline Matrix triple_loop_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

inline Matrix naive_transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// g * x * g^T + I
inline Matrix diffusion_step(const Matrix& g, const Matrix& x) {
  Matrix out = triple_loop_matmul(triple_loop_matmul(g, x), naive_transpose(g));
  for (std::size_t i = 0; i < out.rows(); ++i) out(i, i) += 1.0;
  return out;
}

inline Matrix random_row_stochastic(std::size_t n, gncd::Rng& rng) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      m(i, j) = rng.uniform();
      s += m(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) m(i, j) /= s;
  }
  return m;
}

// Best matched-sample count over all cluster->class bijections, by
// enumerating permutations. Clusters and classes index [0, k).
inline long best_matching(const std::vector<int>& cluster, const std::vector<int>& label, int k) {
  std::vector<int> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  long best = 0;
  do {
    long hits = 0;
    for (std::size_t i = 0; i < cluster.size(); ++i)
      if (perm[static_cast<std::size_t>(cluster[i])] == label[i]) ++hits;
    best = std::max(best, hits);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// Central finite differences of f at x, step h.
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double x0 = x[k];
    x[k] = x0 + h;
    const double fp = f(x);
    x[k] = x0 - h;
    const double fm = f(x);
    x[k] = x0;
    g[k] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// max_k |a_k - b_k| / max(1, max_k |b_k|)
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, scale = 1e-12;
  for (std::size_t k = 0; k < a.size(); ++k) {
    num = std::max(num, std::abs(a[k] - b[k]));
    scale = std::max(scale, std::abs(b[k]));
  }
  return num / std::max(scale, 1e-8);
}

inline std::vector<double> flatten(const Matrix& m) { return m.data(); }

inline Matrix unflatten(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  m.data() = v;
  return m;
}

// Cosine-distance silhouette; singletons score 0.
inline double silhouette(const Matrix& x, const std::vector<int>& cluster) {
  const std::size_t n = x.rows();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> sum_by(64, 0.0);
    std::vector<int> cnt_by(64, 0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dist = 1.0 - naive_dot(x, i, x, j);
      sum_by[static_cast<std::size_t>(cluster[j])] += dist;
      ++cnt_by[static_cast<std::size_t>(cluster[j])];
    }
    const auto own = static_cast<std::size_t>(cluster[i]);
    if (cnt_by[own] == 0) continue;
    const double a = sum_by[own] / cnt_by[own];
    double b = INFINITY;
    for (std::size_t c = 0; c < 64; ++c)
      if (c != own && cnt_by[c] > 0) b = std::min(b, sum_by[c] / cnt_by[c]);
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

}  // namespace oracle
