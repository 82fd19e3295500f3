#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "gncd/kernels.hpp"

namespace gncd::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace omp {

Matrix gram(const Matrix& x) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.rows());
  Matrix g(x.rows(), x.rows());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    for (std::ptrdiff_t j = i; j < n; ++j) {
      const double s = dot(x.row(i), x.row(j));
      g(i, j) = s;
      g(j, i) = s;
    }
  }
  return g;
}

Neighborhoods top_k(const Matrix& similarity, std::size_t k) {
  const std::size_t n = similarity.rows();
  if (similarity.cols() != n) throw std::invalid_argument("top_k: similarity must be square");
  if (k < 1 || k > n) throw std::invalid_argument("top_k: K must be in [1, n]");
  Neighborhoods out{n, k, std::vector<std::size_t>(n * k)};
#pragma omp parallel
  {
    std::vector<std::size_t> order(n);
#pragma omp for schedule(static)
    for (std::ptrdiff_t cc = 0; cc < static_cast<std::ptrdiff_t>(n); ++cc) {
      const std::size_t c = static_cast<std::size_t>(cc);
      std::iota(order.begin(), order.end(), std::size_t{0});
      auto row = similarity.row(c);
      std::partial_sort(order.begin(), order.begin() + k, order.end(),
                        [&](std::size_t a, std::size_t b) {
                          if (a == c || b == c) return a == c && b != c;
                          if (row[a] != row[b]) return row[a] > row[b];
                          return a < b;
                        });
      std::copy_n(order.begin(), k, out.index.begin() + c * k);
    }
  }
  return out;
}

CountMatrix consensus_counts(const Neighborhoods& nbrs) {
  const std::size_t n = nbrs.n;
  // Invert the neighborhoods: members[i] = centers whose hood contains i.
  // Then g(i,j) = |members[i] ∩ members[j]|, computed row-parallel without
  // write conflicts.
  std::vector<std::vector<std::size_t>> members(n);
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t i : nbrs.of(c)) members[i].push_back(c);

  CountMatrix g(n, n, 0);
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    auto grow = g.row(i);
    for (std::size_t c : members[i])
      for (std::size_t j : nbrs.of(c))
        if (j != i) ++grow[j];
  }
  return g;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: shape mismatch");
  const std::size_t m = b.cols();
  Matrix c(a.rows(), m);
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(a.rows()); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    auto crow = c.row(i);
    auto arow = a.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < m; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

Matrix sandwich(const Matrix& a, const Matrix& x) {
  // (a x) a^T == ((a (a x)^T))^T; both products then skip zeros of a.
  const Matrix ax = matmul(a, x);
  return transpose(matmul(a, transpose(ax)));
}

std::vector<int> nearest_centroid(const Matrix& x, const Matrix& centroids) {
  std::vector<int> out(x.rows(), 0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(x.rows()); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.rows(); ++c) {
      const double s = dot(x.row(i), centroids.row(c));
      if (s > best) {
        best = s;
        out[i] = static_cast<int>(c);
      }
    }
  }
  return out;
}

}  // namespace omp
}  // namespace gncd::kernels
