#include "gncd/graph.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "gncd/error.hpp"
#include "gncd/log.hpp"

namespace gncd::graph {

Matrix cosine_graph(const EmbeddingTable& embeddings) { return kernels::omp::gram(embeddings); }

Neighborhoods knn_neighborhoods(const EmbeddingTable& embeddings, std::size_t k) {
  if (k < 1 || k > embeddings.rows()) {
    std::ostringstream msg;
    msg << "knn_neighborhoods: K=" << k << " outside [1, n=" << embeddings.rows() << "]";
    throw std::invalid_argument(msg.str());
  }
  return kernels::omp::top_k(cosine_graph(embeddings), k);
}

Matrix row_normalize(const CountMatrix& counts) {
  const std::size_t n = counts.rows();
  Matrix out(n, counts.cols());
  for (std::size_t i = 0; i < n; ++i) {
    long sum = 0;
    for (int c : counts.row(i)) sum += c;
    if (sum == 0) continue;
    auto dst = out.row(i);
    auto src = counts.row(i);
    for (std::size_t j = 0; j < src.size(); ++j)
      dst[j] = static_cast<double>(src[j]) / static_cast<double>(sum);
  }
  return out;
}

ConsensusGraph consensus_graph(const Neighborhoods& nbrs) {
  ConsensusGraph g;
  g.counts = kernels::omp::consensus_counts(nbrs);
  g.normalized = row_normalize(g.counts);
  return g;
}

ConsensusGraph consensus_graph(const EmbeddingTable& embeddings, std::size_t k) {
  return consensus_graph(knn_neighborhoods(embeddings, k));
}

DiffusedGraph diffuse(const Matrix& normalized, int steps) {
  if (normalized.rows() != normalized.cols())
    throw std::invalid_argument("diffuse: graph must be square");
  if (steps < 1) throw std::invalid_argument("diffuse: steps must be >= 1");
  if (steps > 1)
    log::warn("diffuse: " + std::to_string(steps) +
              " steps requested; more than one step tends to admit false positives");

  DiffusedGraph out{normalized, 0};
  for (int t = 0; t < steps; ++t) {
    out.values = kernels::omp::sandwich(normalized, out.values);
    for (std::size_t i = 0; i < normalized.rows(); ++i) out.values(i, i) += 1.0;
    out.steps_applied = t + 1;
    for (double v : out.values.data())
      if (!std::isfinite(v))
        throw NumericError("diffuse: non-finite affinity after step " + std::to_string(t + 1));
  }
  return out;
}

Threshold semiag_threshold(const Matrix& affinity, double level) {
  if (!(level > 0.0 && level < 1.0))
    throw std::invalid_argument("semiag_threshold: quantile level must be in (0, 1)");
  const std::size_t n = affinity.rows();
  Threshold t;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && affinity(i, j) != 0.0) {
        sum += affinity(i, j);
        ++t.num_nonzero;
      }
  if (t.num_nonzero == 0) {
    t.degenerate = true;
    return t;
  }
  const double mean = sum / static_cast<double>(t.num_nonzero);
  std::vector<double> above;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && affinity(i, j) > mean) above.push_back(affinity(i, j));
  t.num_above_mean = above.size();
  if (above.empty()) {
    t.degenerate = true;
    return t;
  }
  const auto m = static_cast<double>(above.size());
  // Nearest rank, 1-based: ceil(p * m). The epsilon keeps 0.8 * 5 at rank 4.
  auto rank = static_cast<std::size_t>(std::ceil(level * m - 1e-9 * m));
  rank = std::clamp<std::size_t>(rank, 1, above.size());
  std::nth_element(above.begin(), above.begin() + static_cast<std::ptrdiff_t>(rank - 1), above.end());
  t.q = above[rank - 1];
  return t;
}

std::size_t BinarizedGraph::edge_count() const {
  return static_cast<std::size_t>(
      std::count(adjacency.data().begin(), adjacency.data().end(), static_cast<unsigned char>(1)));
}

namespace {

// Overrides pairs where both endpoints carry a visible label.
void apply_labels(BinarizedGraph& g, const std::vector<SampleMeta>& meta) {
  std::vector<std::size_t> labeled;
  for (std::size_t i = 0; i < meta.size(); ++i)
    if (meta[i].visible_label()) labeled.push_back(i);
  for (std::size_t a : labeled)
    for (std::size_t b : labeled) {
      if (a == b) continue;
      const bool same = *meta[a].class_label == *meta[b].class_label;
      g.adjacency(a, b) = same ? 1 : 0;
      if (same)
        ++g.label_forced_positive;
      else
        ++g.label_forced_negative;
    }
}

}  // namespace

BinarizedGraph binarize_semi_priori(const Matrix& affinity, double q,
                                    const std::vector<SampleMeta>& meta, bool use_labels) {
  const std::size_t n = affinity.rows();
  if (affinity.cols() != n || meta.size() != n) {
    std::ostringstream msg;
    msg << "binarize_semi_priori: affinity is " << affinity.rows() << "x" << affinity.cols()
        << " but meta has " << meta.size() << " entries";
    throw std::invalid_argument(msg.str());
  }
  BinarizedGraph g;
  g.adjacency = BoolMatrix(n, n, 0);
  g.threshold_used = q;
  g.degenerate = std::isinf(q);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double sym = 0.5 * (affinity(i, j) + affinity(j, i));
      const unsigned char e = sym > q ? 1 : 0;
      g.adjacency(i, j) = e;
      g.adjacency(j, i) = e;
    }
  if (use_labels) apply_labels(g, meta);
  return g;
}

BinarizedGraph mutual_knn(const EmbeddingTable& embeddings, const std::vector<SampleMeta>& meta,
                          std::size_t k, bool semi_priori) {
  const std::size_t n = embeddings.rows();
  if (meta.size() != n) throw std::invalid_argument("mutual_knn: meta size mismatch");
  const Neighborhoods nbrs = knn_neighborhoods(embeddings, k);
  BoolMatrix in_hood(n, n, 0);
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t j : nbrs.of(c)) in_hood(c, j) = 1;
  BinarizedGraph g;
  g.adjacency = BoolMatrix(n, n, 0);
  g.threshold_used = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && in_hood(i, j) && in_hood(j, i)) g.adjacency(i, j) = 1;
  if (semi_priori) apply_labels(g, meta);
  return g;
}

void validate(const SemiAgOptions& opts) {
  std::ostringstream err;
  if (opts.k < 1) err << " K must be >= 1;";
  if (opts.eta < 1) err << " eta must be >= 1;";
  if (!(opts.quantile_level > 0.0 && opts.quantile_level < 1.0))
    err << " quantile level must be in (0, 1);";
  if (!opts.consensus && opts.propagate)
    err << " affinity propagation requires the consensus graph;";
  if (!err.str().empty()) throw std::invalid_argument("semiag:" + err.str());
}

BinarizedGraph semiag(const EmbeddingTable& embeddings, const std::vector<SampleMeta>& meta,
                      const SemiAgOptions& opts) {
  validate(opts);
  if (meta.size() != embeddings.rows())
    throw std::invalid_argument("semiag: meta size mismatch");
  if (!opts.consensus) return mutual_knn(embeddings, meta, opts.k, opts.semi_priori);

  const ConsensusGraph cg = consensus_graph(embeddings, opts.k);
  if (!opts.propagate) {
    const Threshold t = semiag_threshold(cg.normalized, opts.quantile_level);
    return binarize_semi_priori(cg.normalized, t.q, meta, opts.semi_priori);
  }
  const DiffusedGraph dg = diffuse(cg.normalized, opts.eta);
  const Threshold t = semiag_threshold(dg.values, opts.quantile_level);
  return binarize_semi_priori(dg.values, t.q, meta, opts.semi_priori);
}

}  // namespace gncd::graph
