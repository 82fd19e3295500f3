#include "gncd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

#include "gncd/kernels.hpp"
#include "gncd/log.hpp"
#include "gncd/rng.hpp"

namespace gncd::eval {
namespace {

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  return 1.0 - dot(a, b);
}

double objective(const EmbeddingTable& x, const EmbeddingTable& centroids,
                 const std::vector<int>& cluster) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i)
    s += cosine_distance(x.row(i), centroids.row(static_cast<std::size_t>(cluster[i])));
  return s;
}

}  // namespace

namespace {

ClusterAssignment semikmeans_once(const EmbeddingTable& x, const std::vector<SampleMeta>& meta,
                                  const SemiKMeansOptions& opts, std::uint64_t seed) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  if (meta.size() != n) throw std::invalid_argument("semikmeans: meta size mismatch");

  std::set<int> labeled_classes;
  for (const auto& m : meta)
    if (auto y = m.visible_label()) labeled_classes.insert(*y);
  if (opts.num_clusters < static_cast<int>(labeled_classes.size()) || opts.num_clusters < 1)
    throw std::invalid_argument("semikmeans: num_clusters (" + std::to_string(opts.num_clusters) +
                                ") below the number of labeled classes (" +
                                std::to_string(labeled_classes.size()) + ")");

  ClusterAssignment out;
  out.pinned_classes.assign(labeled_classes.begin(), labeled_classes.end());
  std::map<int, int> cluster_of_class;
  for (std::size_t c = 0; c < out.pinned_classes.size(); ++c)
    cluster_of_class[out.pinned_classes[c]] = static_cast<int>(c);

  const auto k = static_cast<std::size_t>(opts.num_clusters);
  std::vector<int> pinned(n, -1);
  std::vector<std::size_t> unlabeled;
  for (std::size_t i = 0; i < n; ++i) {
    if (auto y = meta[i].visible_label())
      pinned[i] = cluster_of_class.at(*y);
    else
      unlabeled.push_back(i);
  }

  out.centroids = EmbeddingTable(k, d);
  for (std::size_t i = 0; i < n; ++i)
    if (pinned[i] >= 0) {
      auto c = out.centroids.row(static_cast<std::size_t>(pinned[i]));
      auto r = x.row(i);
      for (std::size_t j = 0; j < d; ++j) c[j] += r[j];
    }
  for (std::size_t c = 0; c < out.pinned_classes.size(); ++c) normalize(out.centroids.row(c));

  // k-means++ for the free centroids, conditioned on the pinned ones.
  Rng rng(seed);
  std::size_t placed = out.pinned_classes.size();
  std::vector<double> best_sim(n, -std::numeric_limits<double>::infinity());
  auto refresh = [&](std::size_t c) {
    for (std::size_t i : unlabeled) best_sim[i] = std::max(best_sim[i], dot(x.row(i), out.centroids.row(c)));
  };
  for (std::size_t c = 0; c < placed; ++c) refresh(c);
  while (placed < k) {
    std::size_t pick;
    if (unlabeled.empty()) {
      pick = rng.below(n);
    } else if (placed == 0) {
      pick = unlabeled[rng.below(unlabeled.size())];
    } else {
      double total = 0.0;
      for (std::size_t i : unlabeled) {
        const double dist = std::max(0.0, 1.0 - best_sim[i]);
        total += dist * dist;
      }
      pick = unlabeled[rng.below(unlabeled.size())];
      if (total > 0.0) {
        double r = rng.uniform() * total;
        for (std::size_t i : unlabeled) {
          const double dist = std::max(0.0, 1.0 - best_sim[i]);
          r -= dist * dist;
          if (r < 0.0) {
            pick = i;
            break;
          }
        }
      }
    }
    auto src = x.row(pick);
    std::copy(src.begin(), src.end(), out.centroids.row(placed).begin());
    normalize(out.centroids.row(placed));
    refresh(placed);
    ++placed;
  }

  out.cluster.assign(n, 0);
  for (int it = 0; it < opts.max_iter; ++it) {
    // Assignment step.
    auto nearest = kernels::omp::nearest_centroid(x, out.centroids);
    for (std::size_t i = 0; i < n; ++i) out.cluster[i] = pinned[i] >= 0 ? pinned[i] : nearest[i];
    out.iterations = it + 1;
    if (opts.on_iteration) opts.on_iteration(it, out.cluster);
    out.objective.push_back(objective(x, out.centroids, out.cluster));

    // Update step.
    EmbeddingTable next(k, d);
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(out.cluster[i]);
      ++sizes[c];
      auto dst = next.row(c);
      auto r = x.row(i);
      for (std::size_t j = 0; j < d; ++j) dst[j] += r[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (sizes[c] == 0 || normalize(next.row(c)) == 0.0) {
        // Re-seed at the unlabeled point farthest from its centroid.
        std::size_t far = n;
        double worst = std::numeric_limits<double>::infinity();
        for (std::size_t i : unlabeled) {
          const double s = dot(x.row(i), out.centroids.row(static_cast<std::size_t>(out.cluster[i])));
          if (s < worst) {
            worst = s;
            far = i;
          }
        }
        if (far == n) {
          auto old = out.centroids.row(c);
          std::copy(old.begin(), old.end(), next.row(c).begin());
        } else {
          auto src = x.row(far);
          std::copy(src.begin(), src.end(), next.row(c).begin());
          ++out.reseeded;
          log::info("semikmeans: cluster " + std::to_string(c) + " empty, re-seeded at sample " +
                    std::to_string(far));
        }
      }
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      double s2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = next(c, j) - out.centroids(c, j);
        s2 += diff * diff;
      }
      shift = std::max(shift, std::sqrt(s2));
    }
    out.centroids = std::move(next);
    if (shift < opts.tol) break;
  }
  // Final assignment against the last centroids.
  auto nearest = kernels::omp::nearest_centroid(x, out.centroids);
  for (std::size_t i = 0; i < n; ++i) out.cluster[i] = pinned[i] >= 0 ? pinned[i] : nearest[i];
  return out;
}

}  // namespace

ClusterAssignment semikmeans(const EmbeddingTable& x, const std::vector<SampleMeta>& meta,
                             const SemiKMeansOptions& opts) {
  if (opts.n_init < 1) throw std::invalid_argument("semikmeans: n_init must be >= 1");
  ClusterAssignment best;
  double best_obj = std::numeric_limits<double>::infinity();
  for (int r = 0; r < opts.n_init; ++r) {
    ClusterAssignment a = semikmeans_once(x, meta, opts, derive_seed(opts.seed, 11 + static_cast<std::uint64_t>(r)));
    const double obj = objective(x, a.centroids, a.cluster);
    if (obj < best_obj) {
      best_obj = obj;
      best = std::move(a);
    }
  }
  return best;
}

std::vector<int> hungarian_min_cost(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  for (const auto& row : cost)
    if (row.size() != n) throw std::invalid_argument("hungarian: cost matrix must be square");
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  // Potentials u (rows), v (cols); p[j] = row matched to column j (1-based).
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
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
  std::vector<int> col_of_row(n, -1);
  for (std::size_t j = 1; j <= n; ++j) col_of_row[p[j] - 1] = static_cast<int>(j - 1);
  return col_of_row;
}

AccuracyReport hungarian_accuracy(const std::vector<int>& cluster,
                                  const std::vector<SampleMeta>& meta, int num_classes,
                                  const std::vector<char>* include) {
  if (cluster.size() != meta.size()) throw std::invalid_argument("hungarian_accuracy: size mismatch");
  int dim = std::max(num_classes, 1);
  for (std::size_t i = 0; i < meta.size(); ++i) {
    dim = std::max(dim, cluster[i] + 1);
    if (meta[i].class_label) dim = std::max(dim, *meta[i].class_label + 1);
  }
  const auto n = static_cast<std::size_t>(dim);

  // counts[cluster][class]; dummy rows/columns stay zero.
  std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
  std::vector<std::vector<long>> counts(n, std::vector<long>(n, 0));
  AccuracyReport r;
  for (std::size_t i = 0; i < meta.size(); ++i) {
    if (!meta[i].class_label || (include && !(*include)[i])) continue;
    if (cluster[i] < 0) throw std::invalid_argument("hungarian_accuracy: negative cluster id");
    ++counts[static_cast<std::size_t>(cluster[i])][static_cast<std::size_t>(*meta[i].class_label)];
  }
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t y = 0; y < n; ++y) cost[c][y] = -static_cast<double>(counts[c][y]);
  r.class_of_cluster = hungarian_min_cost(cost);

  r.confusion.assign(n, std::vector<long>(n, 0));
  std::size_t hit_all = 0, hit_known = 0, hit_new = 0;
  for (std::size_t i = 0; i < meta.size(); ++i) {
    if (!meta[i].class_label || (include && !(*include)[i])) continue;
    const int y = *meta[i].class_label;
    const int pred = r.class_of_cluster[static_cast<std::size_t>(cluster[i])];
    ++r.confusion[static_cast<std::size_t>(y)][static_cast<std::size_t>(pred)];
    const bool hit = pred == y;
    ++r.n_all;
    hit_all += hit;
    if (meta[i].is_known_class) {
      ++r.n_known;
      hit_known += hit;
    } else {
      ++r.n_new;
      hit_new += hit;
    }
  }
  if (r.n_all > 0) r.acc_all = static_cast<double>(hit_all) / static_cast<double>(r.n_all);
  if (r.n_known > 0) r.acc_known = static_cast<double>(hit_known) / static_cast<double>(r.n_known);
  if (r.n_new > 0) r.acc_new = static_cast<double>(hit_new) / static_cast<double>(r.n_new);
  return r;
}

TaskInformedReport task_informed_accuracy(const EmbeddingTable& embeddings,
                                          const std::vector<SampleMeta>& meta, std::uint64_t seed,
                                          const std::vector<char>* include) {
  TaskInformedReport out;
  for (int part = 0; part < 2; ++part) {
    const bool known = part == 0;
    std::vector<std::size_t> idx;
    std::set<int> classes;
    for (std::size_t i = 0; i < meta.size(); ++i) {
      if (!meta[i].class_label || meta[i].is_known_class != known) continue;
      idx.push_back(i);
      classes.insert(*meta[i].class_label);
    }
    std::vector<char> scored;
    bool any = false;
    for (std::size_t i : idx) {
      const bool s = !meta[i].is_labeled && (!include || (*include)[i]);
      scored.push_back(s ? 1 : 0);
      any = any || s;
    }
    if (!any) continue;

    // Re-index classes to [0, |subset classes|) for the sub-problem.
    std::map<int, int> local;
    for (int c : classes) local.emplace(c, static_cast<int>(local.size()));
    std::vector<SampleMeta> sub;
    for (std::size_t i : idx) {
      SampleMeta m = meta[i];
      m.class_label = local.at(*m.class_label);
      if (!known) m.is_labeled = false;
      sub.push_back(m);
    }
    const EmbeddingTable x = gather_rows(embeddings, idx);
    SemiKMeansOptions o;
    o.num_clusters = static_cast<int>(classes.size());
    o.seed = derive_seed(seed, static_cast<std::uint64_t>(part));
    const auto assign = semikmeans(x, sub, o);
    const auto rep = hungarian_accuracy(assign.cluster, sub, o.num_clusters, &scored);
    (known ? out.known : out.new_) = rep.acc_all;
  }
  return out;
}

double silhouette(const EmbeddingTable& x, const std::vector<int>& cluster) {
  const std::size_t n = x.rows();
  if (cluster.size() != n) throw std::invalid_argument("silhouette: size mismatch");
  std::map<int, std::size_t> sizes;
  for (int c : cluster) ++sizes[c];
  if (sizes.size() < 2) throw std::invalid_argument("silhouette: needs at least two non-empty clusters");

  std::map<int, std::size_t> slot;
  for (const auto& [c, s] : sizes) slot.emplace(c, slot.size());
  const Matrix sim = kernels::omp::gram(x);
  std::vector<double> s(n, 0.0);
  const std::ptrdiff_t sn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < sn; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    std::vector<double> sum(slot.size(), 0.0);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) sum[slot.at(cluster[j])] += 1.0 - sim(i, j);
    const std::size_t own = slot.at(cluster[i]);
    const std::size_t own_size = sizes.at(cluster[i]);
    if (own_size <= 1) continue;
    const double a = sum[own] / static_cast<double>(own_size - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [c, sz] : sizes)
      if (slot.at(c) != own) b = std::min(b, sum[slot.at(c)] / static_cast<double>(sz));
    const double m = std::max(a, b);
    s[i] = m > 0.0 ? (b - a) / m : 0.0;
  }
  double total = 0.0;
  for (double v : s) total += v;
  return total / static_cast<double>(n);
}

double knn_precision(const EmbeddingTable& x, const std::vector<SampleMeta>& meta, std::size_t k) {
  const std::size_t n = x.rows();
  if (meta.size() != n) throw std::invalid_argument("knn_precision: meta size mismatch");
  if (k < 1 || k >= n) throw std::invalid_argument("knn_precision: k must be in [1, n)");
  const auto nbrs = kernels::omp::top_k(kernels::omp::gram(x), k + 1);
  double total = 0.0;
  std::size_t queries = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!meta[i].class_label) continue;
    std::size_t hits = 0;
    for (std::size_t j : nbrs.of(i).subspan(1))
      if (meta[j].class_label == meta[i].class_label) ++hits;
    total += static_cast<double>(hits) / static_cast<double>(k);
    ++queries;
  }
  return queries ? total / static_cast<double>(queries) : 0.0;
}

std::vector<Retrieval> knn_retrieval(const EmbeddingTable& x, const std::vector<SampleMeta>& meta,
                                     std::size_t k, std::size_t num_queries, std::uint64_t seed) {
  const std::size_t n = x.rows();
  if (k < 1 || k >= n) throw std::invalid_argument("knn_retrieval: k must be in [1, n)");
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  Rng rng(derive_seed(seed, 23));
  auto queries = rng.sample_without_replacement(all, num_queries);
  const auto nbrs = kernels::omp::top_k(kernels::omp::gram(x), k + 1);
  std::vector<Retrieval> out;
  for (std::size_t q : queries) {
    Retrieval r{q, {}, {}};
    for (std::size_t j : nbrs.of(q).subspan(1)) {
      r.neighbours.push_back(j);
      r.correct.push_back(meta[q].class_label && meta[j].class_label == meta[q].class_label);
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace gncd::eval
