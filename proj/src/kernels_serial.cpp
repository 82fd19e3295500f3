#include <limits>
#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "gncd/kernels.hpp"

namespace gncd::kernels::serial {

Matrix gram(const Matrix& x) {
  const std::size_t n = x.rows();
  Matrix g(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) g(i, j) = dot(x.row(i), x.row(j));
  return g;
}

Neighborhoods top_k(const Matrix& similarity, std::size_t k) {
  const std::size_t n = similarity.rows();
  if (similarity.cols() != n) throw std::invalid_argument("top_k: similarity must be square");
  if (k < 1 || k > n) throw std::invalid_argument("top_k: K must be in [1, n]");
  Neighborhoods out{n, k, std::vector<std::size_t>(n * k)};
  std::vector<std::size_t> order(n);
  for (std::size_t c = 0; c < n; ++c) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Full sort; the omp variant uses partial_sort with the same comparator.
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (a == c || b == c) return a == c && b != c;
      const double sa = similarity(c, a), sb = similarity(c, b);
      if (sa != sb) return sa > sb;
      return a < b;
    });
    std::copy_n(order.begin(), k, out.index.begin() + c * k);
  }
  return out;
}

CountMatrix consensus_counts(const Neighborhoods& nbrs) {
  const std::size_t n = nbrs.n;
  CountMatrix g(n, n, 0);
  for (std::size_t c = 0; c < n; ++c) {
    auto hood = nbrs.of(c);
    for (std::size_t i : hood)
      for (std::size_t j : hood)
        if (i != j) ++g(i, j);
  }
  return g;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: shape mismatch");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

Matrix sandwich(const Matrix& a, const Matrix& x) {
  return matmul(matmul(a, x), transpose(a));
}

std::vector<int> nearest_centroid(const Matrix& x, const Matrix& centroids) {
  std::vector<int> out(x.rows(), 0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
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

}  // namespace gncd::kernels::serial
