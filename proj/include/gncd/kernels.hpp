#pragma once

// Dense compute kernels shared by the graph, loss and evaluation code.
//
// Every kernel exists twice: `serial::` is the straightforward reference
// implementation kept for testing, `omp::` is the row-parallel version used
// by the pipeline. Both accumulate every output element in the same order,
// so their results are bit-identical (tests assert exact equality).

#include <cstddef>
#include <span>
#include <vector>

#include "gncd/matrix.hpp"

namespace gncd::kernels {

// K-neighborhoods, one row of K node indices per center node.
struct Neighborhoods {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<std::size_t> index;  // n * k, row-major

  std::span<const std::size_t> of(std::size_t c) const {
    return {index.data() + c * k, k};
  }
  bool operator==(const Neighborhoods&) const = default;
};

namespace serial {

// x * x^T
Matrix gram(const Matrix& x);

// For each center c: c itself first, then the K-1 most similar other nodes
// (ties broken by lower index).
Neighborhoods top_k(const Matrix& similarity, std::size_t k);

// g(i,j) = #{c : i, j in O_K(c)} for i != j, zero diagonal.
CountMatrix consensus_counts(const Neighborhoods& nbrs);

Matrix matmul(const Matrix& a, const Matrix& b);

// a * x * a^T
Matrix sandwich(const Matrix& a, const Matrix& x);

// Index of the centroid with the largest dot product per row of x.
std::vector<int> nearest_centroid(const Matrix& x, const Matrix& centroids);

}  // namespace serial

namespace omp {

Matrix gram(const Matrix& x);
Neighborhoods top_k(const Matrix& similarity, std::size_t k);
CountMatrix consensus_counts(const Neighborhoods& nbrs);
// Skips zero entries of `a`; cost is nnz(a) * b.cols().
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix sandwich(const Matrix& a, const Matrix& x);
std::vector<int> nearest_centroid(const Matrix& x, const Matrix& centroids);

}  // namespace omp

// Number of worker threads the omp kernels will use (1 without OpenMP).
int max_threads();

}  // namespace gncd::kernels
