#pragma once

// Clustering evaluation: constrained spherical k-means, Hungarian-matched
// accuracy, silhouette and KNN retrieval precision.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "gncd/data.hpp"
#include "gncd/matrix.hpp"

namespace gncd::eval {

struct ClusterAssignment {
  std::vector<int> cluster;  // per sample, in [0, num_clusters)
  EmbeddingTable centroids;  // unit rows
  // pinned_classes[c] is the class whose labeled samples are pinned to
  // cluster c; clusters >= pinned_classes.size() are free.
  std::vector<int> pinned_classes;
  int iterations = 0;
  std::vector<double> objective;  // sum of cosine distances after each iteration
  std::size_t reseeded = 0;

  int num_clusters() const { return static_cast<int>(centroids.rows()); }
};

struct SemiKMeansOptions {
  int num_clusters = 0;
  std::uint64_t seed = 0;
  int max_iter = 100;
  double tol = 1e-6;  // max centroid shift
  int n_init = 10;    // restarts; the lowest final objective wins
  // Called after every assignment step; used by tests to check the labeled
  // constraint mid-run.
  std::function<void(int iteration, const std::vector<int>& cluster)> on_iteration;
};

// Labeled samples (visible labels only) are pinned to their class's cluster;
// the class's centroid starts at the mean of its labeled samples. Remaining
// centroids are seeded by k-means++ over unlabeled samples. Cosine geometry.
// The objective trace belongs to the winning restart.
ClusterAssignment semikmeans(const EmbeddingTable& embeddings, const std::vector<SampleMeta>& meta,
                             const SemiKMeansOptions& opts);

// Solves the square assignment problem minimizing total cost. Returns
// col_of_row.
std::vector<int> hungarian_min_cost(const std::vector<std::vector<double>>& cost);

struct AccuracyReport {
  double acc_all = 0.0;
  std::optional<double> acc_known;
  std::optional<double> acc_new;
  std::size_t n_all = 0;
  std::size_t n_known = 0;
  std::size_t n_new = 0;
  std::vector<int> class_of_cluster;        // size = matrix dimension
  std::vector<std::vector<long>> confusion;  // [true class][predicted class]
};

// Best cluster<->class bijection on the evaluated samples (those with a
// ground-truth label and, when given, include[i] != 0). Known / New
// accuracies use that same joint mapping.
AccuracyReport hungarian_accuracy(const std::vector<int>& cluster,
                                  const std::vector<SampleMeta>& meta, int num_classes,
                                  const std::vector<char>* include = nullptr);

struct TaskInformedReport {
  std::optional<double> known;
  std::optional<double> new_;
};

// Known-class and new-class samples are clustered and matched separately
// (the ground-truth known/new partition must be present in `meta`).
TaskInformedReport task_informed_accuracy(const EmbeddingTable& embeddings,
                                          const std::vector<SampleMeta>& meta,
                                          std::uint64_t seed,
                                          const std::vector<char>* include = nullptr);

// Mean silhouette with cosine distance. Singleton clusters contribute 0.
// Throws std::invalid_argument with fewer than two non-empty clusters.
double silhouette(const EmbeddingTable& embeddings, const std::vector<int>& cluster);

// Fraction of the k nearest neighbours (self excluded) that share the
// query's class, averaged over queries with ground truth.
double knn_precision(const EmbeddingTable& embeddings, const std::vector<SampleMeta>& meta,
                     std::size_t k);

struct Retrieval {
  std::size_t query = 0;
  std::vector<std::size_t> neighbours;
  std::vector<bool> correct;
};

std::vector<Retrieval> knn_retrieval(const EmbeddingTable& embeddings,
                                     const std::vector<SampleMeta>& meta, std::size_t k,
                                     std::size_t num_queries, std::uint64_t seed);

}  // namespace gncd::eval
