#include <cmath>
#include <numbers>

#include "doctest.h"
#include "gncd/error.hpp"
#include "gncd/graph.hpp"
#include "gncd/log.hpp"
#include "oracles.hpp"

using namespace gncd;

namespace {

EmbeddingTable angles(std::initializer_list<double> degrees) {
  EmbeddingTable x(degrees.size(), 2);
  std::size_t i = 0;
  for (double deg : degrees) {
    const double r = deg * std::numbers::pi / 180.0;
    x(i, 0) = std::cos(r);
    x(i, 1) = std::sin(r);
    ++i;
  }
  return x;
}

std::vector<SampleMeta> unlabeled(std::size_t n) {
  std::vector<SampleMeta> m(n);
  for (std::size_t i = 0; i < n; ++i) m[i].id = i;
  return m;
}

SampleMeta labeled(std::size_t id, int y) {
  SampleMeta m;
  m.id = id;
  m.class_label = y;
  m.is_labeled = true;
  m.is_known_class = true;
  return m;
}

}  // namespace

TEST_CASE("knn neighborhoods on the four-angle example") {
  const auto x = angles({0, 10, 180, 190});
  const auto nb = graph::knn_neighborhoods(x, 2);
  CHECK(std::vector<std::size_t>(nb.of(0).begin(), nb.of(0).end()) == std::vector<std::size_t>{0, 1});
  CHECK(std::vector<std::size_t>(nb.of(1).begin(), nb.of(1).end()) == std::vector<std::size_t>{1, 0});
  CHECK(std::vector<std::size_t>(nb.of(2).begin(), nb.of(2).end()) == std::vector<std::size_t>{2, 3});
  CHECK(std::vector<std::size_t>(nb.of(3).begin(), nb.of(3).end()) == std::vector<std::size_t>{3, 2});

  const auto full = graph::knn_neighborhoods(x, 4);
  for (std::size_t c = 0; c < 4; ++c) {
    std::set<std::size_t> s(full.of(c).begin(), full.of(c).end());
    CHECK(s.size() == 4);
  }
  CHECK_THROWS_AS(graph::knn_neighborhoods(x, 5), std::invalid_argument);
  CHECK_THROWS_AS(graph::knn_neighborhoods(x, 0), std::invalid_argument);
}

TEST_CASE("consensus counts") {
  const auto g = graph::consensus_graph(angles({0, 10, 180, 190}), 2);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      const bool pair = (i / 2 == j / 2) && i != j;
      CHECK(g.counts(i, j) == (pair ? 2 : 0));
    }

  CountMatrix c2(1, 3);
  c2(0, 0) = 2;
  c2(0, 2) = 2;
  const Matrix r2 = graph::row_normalize(c2);
  CHECK(r2(0, 0) == 0.5);
  CHECK(r2(0, 1) == 0.0);
  CHECK(r2(0, 2) == 0.5);

  const auto one = graph::consensus_graph(angles({42}), 1);
  CHECK(one.counts.rows() == 1);
  CHECK(one.counts(0, 0) == 0);
}

TEST_CASE("consensus counts match brute force and are permutation equivariant") {
  Rng rng(11);
  for (int t = 0; t < 30; ++t) {
    const std::size_t n = 2 + rng.below(20);
    const std::size_t d = 2 + rng.below(6);
    const std::size_t k = 1 + rng.below(std::min<std::size_t>(n, 6));
    const Matrix x = oracle::random_unit_rows(n, d, rng);
    const auto got = graph::consensus_graph(x, k).counts;
    const auto want = oracle::consensus_counts(x, k);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) REQUIRE(got(i, j) == want[i][j]);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    const auto pc = graph::consensus_graph(gather_rows(x, perm), k).counts;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) REQUIRE(pc(i, j) == got(perm[i], perm[j]));
  }
}

TEST_CASE("diffusion") {
  const auto zero = graph::diffuse(Matrix(3, 3), 1);
  CHECK(zero.values == Matrix::identity(3));

  Matrix swap(2, 2);
  swap(0, 1) = 1.0;
  swap(1, 0) = 1.0;
  const auto d = graph::diffuse(swap, 1);
  for (double v : d.values.data()) CHECK(v == 1.0);
  CHECK(d.steps_applied == 1);

  Rng rng(5);
  const Matrix g = oracle::random_row_stochastic(8, rng);
  const long before = log::warning_count();
  const auto d3 = graph::diffuse(g, 3);
  CHECK(log::warning_count() == before + 1);
  Matrix want = g;
  for (int s = 0; s < 3; ++s) want = oracle::diffusion_step(g, want);
  for (std::size_t k = 0; k < want.data().size(); ++k)
    CHECK(std::abs(d3.values.data()[k] - want.data()[k]) <= 1e-9);

  CHECK_THROWS_AS(graph::diffuse(g, 0), std::invalid_argument);
  Matrix bad = g;
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(graph::diffuse(bad, 1), NumericError);
}

TEST_CASE("threshold rule") {
  Matrix a(3, 3);
  a(0, 1) = 0.1;
  a(0, 2) = 0.2;
  a(1, 0) = 0.3;
  a(1, 2) = 0.4;
  a(2, 0) = 0.5;
  a(2, 2) = 9.0;  // diagonal is ignored
  const auto t = graph::semiag_threshold(a, 0.8);
  CHECK(t.q == 0.5);
  CHECK_FALSE(t.degenerate);
  CHECK(t.num_nonzero == 5);
  CHECK(t.num_above_mean == 2);

  Matrix flat(3, 3, 0.7);
  const auto tf = graph::semiag_threshold(flat, 0.5);
  CHECK(tf.degenerate);
  CHECK(std::isinf(tf.q));

  const auto tz = graph::semiag_threshold(Matrix(4, 4), 0.5);
  CHECK(tz.degenerate);
  CHECK(tz.num_nonzero == 0);
}

TEST_CASE("label-constrained binarization") {
  Matrix a(4, 4);
  a(0, 1) = a(1, 0) = 0.0;   // same label, zero affinity
  a(0, 2) = a(2, 0) = 50.0;  // different labels, huge affinity
  a(3, 1) = a(1, 3) = 0.9;   // unlabeled partner, above q
  a(2, 3) = a(3, 2) = 0.5;   // unlabeled partner, equal to q
  std::vector<SampleMeta> m{labeled(0, 1), labeled(1, 1), labeled(2, 2), unlabeled(4)[3]};
  const auto b = graph::binarize_semi_priori(a, 0.5, m);
  CHECK(b.edge(0, 1));
  CHECK(b.edge(1, 0));
  CHECK_FALSE(b.edge(0, 2));
  CHECK(b.edge(1, 3));
  CHECK_FALSE(b.edge(2, 3));
  for (std::size_t i = 0; i < 4; ++i) CHECK_FALSE(b.edge(i, i));

  const auto nl = graph::binarize_semi_priori(a, 0.5, m, false);
  CHECK_FALSE(nl.edge(0, 1));
  CHECK(nl.edge(0, 2));
}

TEST_CASE("semiag on two separated labeled classes gives within-class blocks") {
  const auto x = angles({0, 3, 6, 180, 183, 186});
  std::vector<SampleMeta> m;
  for (std::size_t i = 0; i < 6; ++i) m.push_back(labeled(i, i < 3 ? 0 : 1));
  graph::SemiAgOptions o;
  o.k = 3;
  const auto b = graph::semiag(x, m, o);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) CHECK(b.edge(i, j) == (i != j && i / 3 == j / 3));

  std::vector<SampleMeta> one;
  for (std::size_t i = 0; i < 6; ++i) one.push_back(labeled(i, 7));
  const auto c = graph::semiag(x, one, o);
  CHECK(c.edge_count() == 30);
}

TEST_CASE("uniform unlabeled cluster with K=n takes the degenerate path") {
  Matrix x(5, 3);
  for (std::size_t i = 0; i < 5; ++i) x(i, 0) = 1.0;
  auto m = unlabeled(5);
  m[0] = labeled(0, 1);
  m[1] = labeled(1, 1);
  graph::SemiAgOptions o;
  o.k = 5;
  o.propagate = false;
  const auto b = graph::semiag(x, m, o);
  CHECK(b.degenerate);
  CHECK(b.edge_count() == 2);
  CHECK(b.edge(0, 1));
}

TEST_CASE("ablation variants") {
  graph::SemiAgOptions o;
  o.consensus = false;
  o.propagate = true;
  CHECK_THROWS_AS(graph::validate(o), std::invalid_argument);

  Rng rng(8);
  const Matrix x = oracle::random_unit_rows(20, 4, rng);
  auto m = unlabeled(20);
  m[0] = labeled(0, 0);
  m[1] = labeled(1, 0);
  const auto knn = graph::mutual_knn(x, m, 4, true);
  CHECK(knn.edge(0, 1));
  for (std::size_t i = 2; i < 20; ++i)
    for (std::size_t j = 2; j < 20; ++j) {
      if (i == j) continue;
      const auto ni = oracle::neighborhood(x, i, 4);
      const auto nj = oracle::neighborhood(x, j, 4);
      const bool mutual = std::count(ni.begin(), ni.end(), j) && std::count(nj.begin(), nj.end(), i);
      CHECK(knn.edge(i, j) == mutual);
    }

  graph::SemiAgOptions base;
  base.k = 4;
  graph::SemiAgOptions via_knn = base;
  via_knn.consensus = false;
  via_knn.propagate = false;
  const auto vk = graph::semiag(x, m, via_knn);
  CHECK(vk.adjacency == knn.adjacency);

  graph::SemiAgOptions no_ap = base;
  no_ap.propagate = false;
  const auto na = graph::semiag(x, m, no_ap);
  const auto cg = graph::consensus_graph(x, 4);
  const auto t = graph::semiag_threshold(cg.normalized, base.quantile_level);
  const auto want = graph::binarize_semi_priori(cg.normalized, t.q, m);
  CHECK(na.adjacency == want.adjacency);
}
