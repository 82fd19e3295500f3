#pragma once

// Semi-supervised affinity generation: consensus KNN graph, diffusion on the
// row-normalized consensus graph, then binarization under pairwise label
// constraints.

#include <cstddef>
#include <limits>
#include <vector>

#include "gncd/data.hpp"
#include "gncd/kernels.hpp"
#include "gncd/matrix.hpp"

namespace gncd::graph {

using kernels::Neighborhoods;

// e(i,j) = h_i . h_j
Matrix cosine_graph(const EmbeddingTable& embeddings);

// O_K(c) for every node c: c itself plus its K-1 most similar nodes.
Neighborhoods knn_neighborhoods(const EmbeddingTable& embeddings, std::size_t k);

struct ConsensusGraph {
  CountMatrix counts;  // symmetric, zero diagonal
  Matrix normalized;   // counts / row sum; all-zero rows stay zero
};

ConsensusGraph consensus_graph(const EmbeddingTable& embeddings, std::size_t k);
ConsensusGraph consensus_graph(const Neighborhoods& nbrs);
Matrix row_normalize(const CountMatrix& counts);

struct DiffusedGraph {
  Matrix values;
  int steps_applied = 0;
};

// G_d(0) = G_c; G_d(t+1) = G_c G_d(t) G_c^T + I, applied `steps` times.
DiffusedGraph diffuse(const Matrix& normalized, int steps);

struct Threshold {
  double q = std::numeric_limits<double>::infinity();
  bool degenerate = false;  // no affinity above the non-zero mean
  std::size_t num_nonzero = 0;
  std::size_t num_above_mean = 0;
};

// Nearest-rank `level` quantile of the off-diagonal affinities that are
// strictly above the mean of the non-zero off-diagonal affinities.
Threshold semiag_threshold(const Matrix& affinity, double level);

struct BinarizedGraph {
  BoolMatrix adjacency;
  double threshold_used = std::numeric_limits<double>::infinity();
  bool degenerate = false;
  std::size_t label_forced_positive = 0;  // ordered pairs
  std::size_t label_forced_negative = 0;

  std::size_t size() const { return adjacency.rows(); }
  bool edge(std::size_t i, std::size_t j) const { return adjacency(i, j) != 0; }
  std::size_t edge_count() const;  // ordered pairs
};

// Labeled pairs: edge = [y_i == y_j]. Every other pair: edge when the
// symmetrized affinity exceeds q. Diagonal is always 0. With
// `use_labels == false` only the threshold clause is applied.
BinarizedGraph binarize_semi_priori(const Matrix& affinity, double q,
                                    const std::vector<SampleMeta>& meta,
                                    bool use_labels = true);

struct SemiAgOptions {
  std::size_t k = 16;
  int eta = 1;
  double quantile_level = 0.5;
  bool consensus = true;    // off: naive mutual-KNN edges instead
  bool propagate = true;    // off: threshold the consensus graph directly
  bool semi_priori = true;  // off: ignore labels
};

void validate(const SemiAgOptions& opts);

// consensus_graph -> diffuse -> semiag_threshold -> binarize_semi_priori, or
// the ablated variant selected by `opts`.
BinarizedGraph semiag(const EmbeddingTable& embeddings, const std::vector<SampleMeta>& meta,
                      const SemiAgOptions& opts);

// i ~ j iff each is in the other's K-neighborhood (i != j).
BinarizedGraph mutual_knn(const EmbeddingTable& embeddings, const std::vector<SampleMeta>& meta,
                          std::size_t k, bool semi_priori);

}  // namespace gncd::graph
