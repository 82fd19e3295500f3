#include <cmath>

#include "doctest.h"
#include "gncd/graph.hpp"
#include "gncd/log.hpp"
#include "gncd/losses.hpp"
#include "oracles.hpp"

using namespace gncd;
using namespace gncd::losses;

namespace {

// Two views per item: rows [0, n) view 0, rows [n, 2n) view 1.
std::vector<SampleMeta> two_view_meta(const std::vector<int>& labels, const std::vector<bool>& labeled) {
  const std::size_t n = labels.size();
  std::vector<SampleMeta> m(2 * n);
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t i = 0; i < n; ++i) {
      auto& s = m[v * n + i];
      s.id = i;
      s.view_group = i;
      s.class_label = labels[i];
      s.is_labeled = labeled[i];
      s.is_known_class = labeled[i];
    }
  return m;
}

// Independent evaluation of -(1/|P|) sum log softmax.
double direct_loss(std::span<const double> q, const Matrix& keys, double tau, const ContrastSets& s) {
  double denom = 0.0;
  for (std::size_t a : s.anchors) {
    double d = 0.0;
    for (std::size_t k = 0; k < q.size(); ++k) d += q[k] * keys(a, k);
    denom += std::exp(d / tau);
  }
  double total = 0.0;
  for (std::size_t p : s.positives) {
    double d = 0.0;
    for (std::size_t k = 0; k < q.size(); ++k) d += q[k] * keys(p, k);
    total += -std::log(std::exp(d / tau) / denom);
  }
  return total / static_cast<double>(s.positives.size());
}

}  // namespace

TEST_CASE("contrastive loss closed forms") {
  Matrix keys(2, 2);
  keys(0, 0) = 1.0;
  keys(1, 0) = -1.0;
  const std::vector<double> q{1.0, 0.0};
  const auto lg = contrastive_loss(q, keys, 1.0, {{0}, {0, 1}});
  CHECK(lg.loss == doctest::Approx(std::log(1.0 + std::exp(-2.0))));
  CHECK(lg.loss == doctest::Approx(0.126928).epsilon(1e-5));

  const auto one = contrastive_loss(q, keys, 1.0, {{0}, {0}});
  CHECK(one.loss == doctest::Approx(0.0));
  for (double g : one.grad) CHECK(g == doctest::Approx(0.0));

  CHECK_THROWS_AS(contrastive_loss(q, keys, 1.0, {{}, {0}}), std::invalid_argument);
  CHECK_THROWS_AS(contrastive_loss(q, keys, 1.0, {{0}, {}}), std::invalid_argument);

  const auto sharp = contrastive_loss(q, keys, 1e-3, {{0}, {0, 1}});
  CHECK(sharp.loss >= 0.0);
  CHECK(sharp.loss < 1e-12);
}

TEST_CASE("contrastive loss gradient against finite differences") {
  Rng rng(21);
  for (int t = 0; t < 20; ++t) {
    const std::size_t d = 2 + rng.below(6);
    const std::size_t n = 3 + rng.below(8);
    const Matrix keys = oracle::random_unit_rows(n, d, rng);
    ContrastSets s;
    for (std::size_t j = 0; j < n; ++j) {
      if (rng.uniform() < 0.8) s.anchors.push_back(j);
    }
    if (s.anchors.empty()) s.anchors.push_back(0);
    for (std::size_t a : s.anchors)
      if (rng.uniform() < 0.4) s.positives.push_back(a);
    if (s.positives.empty()) s.positives.push_back(s.anchors.front());
    const double tau = 0.1 + rng.uniform();
    const Matrix q = oracle::random_unit_rows(1, d, rng);
    const auto lg = contrastive_loss(q.row(0), keys, tau, s);
    CHECK(lg.loss == doctest::Approx(direct_loss(q.row(0), keys, tau, s)).epsilon(1e-10));
    const auto fd = oracle::fd_gradient(
        [&](const std::vector<double>& x) { return contrastive_loss(x, keys, tau, s).loss; },
        q.data());
    CHECK(oracle::relative_error(lg.grad, fd) <= 1e-4);
  }
}

TEST_CASE("semicl reduces to its parts") {
  Rng rng(22);
  const auto meta = two_view_meta({0, 0, 1, 1, 2}, {true, true, true, false, false});
  const Matrix f = oracle::random_unit_rows(meta.size(), 4, rng);
  const auto terms = semicl_terms(f, f, meta, 1.0, 0.07);

  const auto a0 = semicl(f, meta, 0.0, 1.0, 0.07);
  CHECK(a0.loss == doctest::Approx(terms.self_loss));
  // Self term: counterpart positive, every other row an anchor.
  double self = 0.0;
  const std::size_t n = meta.size();
  for (std::size_t i = 0; i < n; ++i) {
    ContrastSets s;
    s.positives = {(i + n / 2) % n};
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) s.anchors.push_back(j);
    self += direct_loss(f.row(i), f, 1.0, s);
  }
  CHECK(terms.self_loss == doctest::Approx(self / static_cast<double>(n)));

  // Class 1 has a single labeled item, but its two views pair up.
  CHECK(terms.sup_queries == 6);
  CHECK(terms.sup_skipped == 0);

  const auto full = two_view_meta({0, 0, 1, 1}, {true, true, true, true});
  const Matrix g = oracle::random_unit_rows(full.size(), 3, rng);
  const auto a1 = semicl(g, full, 1.0, 1.0, 0.07);
  double sup = 0.0;
  for (std::size_t i = 0; i < full.size(); ++i) {
    ContrastSets s;
    for (std::size_t j = 0; j < full.size(); ++j) {
      if (j == i) continue;
      s.anchors.push_back(j);
      if (full[j].class_label == full[i].class_label) s.positives.push_back(j);
    }
    sup += direct_loss(g.row(i), g, 0.07, s);
  }
  CHECK(a1.loss == doctest::Approx(sup / static_cast<double>(full.size())));
}

TEST_CASE("semicl skips labeled queries without a partner") {
  std::vector<SampleMeta> m(4);
  for (std::size_t i = 0; i < 4; ++i) {
    m[i].id = i;
    m[i].view_group = i % 2;
  }
  m[0].class_label = 3;
  m[0].is_labeled = true;
  Rng rng(1);
  const Matrix f = oracle::random_unit_rows(4, 3, rng);
  const auto t = semicl_terms(f, f, m, 1.0, 0.07);
  CHECK(t.sup_skipped == 1);
  CHECK(t.sup_loss == 0.0);
}

TEST_CASE("semicl and warm-up gradients against finite differences") {
  Rng rng(23);
  for (int t = 0; t < 20; ++t) {
    const std::size_t items = 3 + rng.below(5);
    std::vector<int> labels;
    std::vector<bool> lab;
    for (std::size_t i = 0; i < items; ++i) {
      labels.push_back(static_cast<int>(rng.below(3)));
      lab.push_back(rng.uniform() < 0.6);
    }
    const auto meta = two_view_meta(labels, lab);
    const std::size_t d = 2 + rng.below(4);
    const Matrix f = oracle::random_unit_rows(meta.size(), d, rng);
    const double alpha = rng.uniform();
    const auto r = semicl(f, meta, alpha, 0.5 + rng.uniform(), 0.1 + 0.2 * rng.uniform());
    const double tau = 0.5 + rng.uniform();
    const double tau_a = 0.1 + 0.2 * rng.uniform();
    const auto rr = semicl(f, meta, alpha, tau, tau_a);
    // Keys are constant: perturb only the queries.
    const auto fd = oracle::fd_gradient(
        [&](const std::vector<double>& x) {
          const auto terms = semicl_terms(oracle::unflatten(x, f.rows(), d), f, meta, tau, tau_a);
          return (1 - alpha) * terms.self_loss + alpha * terms.sup_loss;
        },
        f.data());
    CHECK(oracle::relative_error(rr.grad.data(), fd) <= 1e-4);
    CHECK(r.loss >= 0.0);

    LossWeights w;
    w.alpha = alpha;
    w.tau = tau;
    w.tau_a = tau_a;
    const Matrix p = oracle::random_unit_rows(meta.size(), d, rng);
    const auto wu = warmup_objective(f, p, meta, w);
    const auto fdp = oracle::fd_gradient(
        [&](const std::vector<double>& x) {
          const auto terms = semicl_terms(oracle::unflatten(x, p.rows(), d), p, meta, tau, tau_a);
          return w.gamma * ((1 - alpha) * terms.self_loss + alpha * terms.sup_loss);
        },
        p.data());
    CHECK(oracle::relative_error(wu.grad_prompt.data(), fdp) <= 1e-4);
    CHECK(wu.loss == doctest::Approx(wu.cls_loss + w.gamma * wu.prompt_loss));
  }
}

TEST_CASE("warm-up objective linearity") {
  Rng rng(24);
  const auto meta = two_view_meta({0, 1, 0, 1}, {true, true, false, false});
  const Matrix f = oracle::random_unit_rows(meta.size(), 3, rng);
  LossWeights w;
  const auto same = warmup_objective(f, f, meta, w);
  const auto single = semicl(f, meta, w.alpha, w.tau, w.tau_a);
  CHECK(same.loss == doctest::Approx((1 + w.gamma) * single.loss));
  w.gamma = 0.0;
  const auto g0 = warmup_objective(f, oracle::random_unit_rows(meta.size(), 3, rng), meta, w);
  CHECK(g0.loss == doctest::Approx(single.loss));
}

TEST_CASE("teacher-keyed semicl has no sensitivity to the teacher through the gradient") {
  Rng rng(25);
  const auto meta = two_view_meta({0, 1, 0, 2}, {true, true, true, false});
  const Matrix s = oracle::random_unit_rows(meta.size(), 3, rng);
  const auto same = teacher_keyed_semicl(s, s, meta, 1.0, 0.07);
  const auto frozen = semicl_terms(s, s, meta, 1.0, 0.07);
  CHECK(same.self_loss == frozen.self_loss);
  CHECK(same.sup_loss == frozen.sup_loss);

  // The analytic gradient is w.r.t. student queries only; moving the teacher
  // changes the value but the returned gradient has no teacher component,
  // and the student gradient matches finite differences in the student.
  const Matrix t = oracle::random_unit_rows(meta.size(), 3, rng);
  const auto r = teacher_keyed_semicl(s, t, meta, 1.0, 0.07);
  const auto fd = oracle::fd_gradient(
      [&](const std::vector<double>& x) {
        return teacher_keyed_semicl(oracle::unflatten(x, s.rows(), 3), t, meta, 1.0, 0.07).self_loss;
      },
      s.data());
  CHECK(oracle::relative_error(r.self_grad.data(), fd) <= 1e-4);
  CHECK(r.self_grad.rows() == s.rows());
}

namespace {

struct CalFixture {
  SubGraphNodes nodes;
  graph::BinarizedGraph g;
};

CalFixture cal_fixture(Rng& rng, std::size_t items, std::size_t memory, std::size_t d) {
  CalFixture f;
  std::vector<int> labels;
  std::vector<bool> lab;
  for (std::size_t i = 0; i < items; ++i) {
    labels.push_back(static_cast<int>(rng.below(3)));
    lab.push_back(rng.uniform() < 0.5);
  }
  f.nodes.meta = two_view_meta(labels, lab);
  for (std::size_t m = 0; m < memory; ++m) {
    SampleMeta s;
    s.id = 1000 + m;
    s.view_group = 1000 + m;
    f.nodes.meta.push_back(s);
  }
  f.nodes.nodes = oracle::random_unit_rows(f.nodes.meta.size(), d, rng);
  f.nodes.batch_begin = 0;
  f.nodes.batch_end = 2 * items;
  const std::size_t n = f.nodes.meta.size();
  f.g.adjacency = BoolMatrix(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (rng.uniform() < 0.3) f.g.adjacency(i, j) = f.g.adjacency(j, i) = 1;
  return f;
}

}  // namespace

TEST_CASE("cal sets and the tiny direct instance") {
  // 5 nodes: two views of item 0, then three memory entries.
  SubGraphNodes nodes;
  Rng rng(26);
  nodes.nodes = oracle::random_unit_rows(5, 3, rng);
  nodes.meta.resize(5);
  for (std::size_t i = 0; i < 5; ++i) {
    nodes.meta[i].id = i < 2 ? 0 : i;
    nodes.meta[i].view_group = i < 2 ? 0 : i;
  }
  nodes.batch_end = 2;
  graph::BinarizedGraph g;
  g.adjacency = BoolMatrix(5, 5);
  g.adjacency(0, 2) = g.adjacency(2, 0) = 1;

  Rng r1(0);
  const auto s = cal_sets(nodes, g, 0, 2, r1);
  CHECK(s.sets.positives == std::vector<std::size_t>{1, 2});
  CHECK(s.sampled_negatives == 2);
  CHECK(s.sets.anchors.size() == 4);

  const Matrix q = oracle::random_unit_rows(1, 3, rng);
  Rng r2(0);
  const auto lg = cal_loss(q.row(0), nodes, g, 0, 0.07, 2, r2);
  ContrastSets want;
  want.positives = {1, 2};
  want.anchors = {1, 2, 3, 4};
  CHECK(std::abs(lg.loss - direct_loss(q.row(0), nodes.nodes, 0.07, want)) <= 1e-9);

  // All-zero row: the counterpart alone is positive.
  graph::BinarizedGraph empty;
  empty.adjacency = BoolMatrix(5, 5);
  Rng r3(0);
  const auto e = cal_sets(nodes, empty, 1, 1024, r3);
  CHECK(e.sets.positives == std::vector<std::size_t>{0});
  CHECK(e.short_of_negatives());
  const long before = log::warning_count();
  Rng r4(0);
  cal_loss(q.row(0), nodes, empty, 1, 0.07, 1024, r4);
  CHECK(log::warning_count() == before + 1);
}

TEST_CASE("cal loss gradient against finite differences") {
  Rng rng(27);
  for (int t = 0; t < 20; ++t) {
    auto f = cal_fixture(rng, 2 + rng.below(4), rng.below(6), 2 + rng.below(4));
    const std::size_t qi = rng.below(f.nodes.batch_end);
    const std::size_t n_neg = 1 + rng.below(5);
    const std::uint64_t seed = rng.next();
    const Matrix q = oracle::random_unit_rows(1, f.nodes.nodes.cols(), rng);
    Rng r(seed);
    const auto lg = cal_loss(q.row(0), f.nodes, f.g, qi, 0.07, n_neg, r);
    const auto fd = oracle::fd_gradient(
        [&](const std::vector<double>& x) {
          Rng rr(seed);
          return cal_loss(x, f.nodes, f.g, qi, 0.07, n_neg, rr).loss;
        },
        q.data());
    CHECK(oracle::relative_error(lg.grad, fd) <= 1e-4);
  }
}

TEST_CASE("stage-2 objective gradients against finite differences") {
  log::Level saved = log::level();
  log::level() = log::Level::kQuiet;
  Rng rng(28);
  for (int t = 0; t < 20; ++t) {
    const std::size_t items = 2 + rng.below(3);
    const std::size_t d = 2 + rng.below(3);
    auto fc = cal_fixture(rng, items, rng.below(5), d);
    auto fp = cal_fixture(rng, items, rng.below(5), d);
    fp.nodes.meta = fc.nodes.meta;
    fp.nodes.meta.resize(fp.nodes.nodes.rows(), SampleMeta{});
    for (std::size_t i = 2 * items; i < fp.nodes.meta.size(); ++i) {
      fp.nodes.meta[i].id = 2000 + i;
      fp.nodes.meta[i].view_group = 2000 + i;
    }
    const std::vector<SampleMeta> bm(fc.nodes.meta.begin(),
                                     fc.nodes.meta.begin() + static_cast<std::ptrdiff_t>(2 * items));
    const std::size_t rows = 2 * items;
    const Matrix hc = oracle::random_unit_rows(rows, d, rng), zc = oracle::random_unit_rows(rows, d, rng);
    const Matrix tc = oracle::random_unit_rows(rows, d, rng);
    const Matrix hp = oracle::random_unit_rows(rows, d, rng), zp = oracle::random_unit_rows(rows, d, rng);
    const Matrix tp = oracle::random_unit_rows(rows, d, rng);
    Stage2Options o;
    o.n_neg = 1 + rng.below(4);
    o.weights.alpha = rng.uniform();
    o.weights.beta = rng.uniform();
    o.weights.gamma = rng.uniform();
    o.weights.tau_a = 0.1 + 0.2 * rng.uniform();
    const std::uint64_t seed = rng.next();

    auto eval = [&](const Matrix& a, const Matrix& b, const Matrix& c, const Matrix& e) {
      const StreamInputs ic{&a, &b, &tc, &fc.nodes, &fc.g};
      const StreamInputs ip{&c, &e, &tp, &fp.nodes, &fp.g};
      Rng r(seed);
      return stage2_objective(ic, ip, bm, o, r);
    };
    const auto res = eval(hc, zc, hp, zp);
    const auto fd_hc = oracle::fd_gradient(
        [&](const std::vector<double>& x) { return eval(oracle::unflatten(x, rows, d), zc, hp, zp).loss; },
        hc.data());
    const auto fd_zc = oracle::fd_gradient(
        [&](const std::vector<double>& x) { return eval(hc, oracle::unflatten(x, rows, d), hp, zp).loss; },
        zc.data());
    const auto fd_hp = oracle::fd_gradient(
        [&](const std::vector<double>& x) { return eval(hc, zc, oracle::unflatten(x, rows, d), zp).loss; },
        hp.data());
    const auto fd_zp = oracle::fd_gradient(
        [&](const std::vector<double>& x) { return eval(hc, zc, hp, oracle::unflatten(x, rows, d)).loss; },
        zp.data());
    CHECK(oracle::relative_error(res.cls.grad_h.data(), fd_hc) <= 1e-4);
    CHECK(oracle::relative_error(res.cls.grad_z.data(), fd_zc) <= 1e-4);
    CHECK(oracle::relative_error(res.prompt.grad_h.data(), fd_hp) <= 1e-4);
    CHECK(oracle::relative_error(res.prompt.grad_z.data(), fd_zp) <= 1e-4);

    // beta = 1 removes the self term; use_semicl = false leaves alpha*beta*CAL.
    Stage2Options b1 = o;
    b1.weights.beta = 1.0;
    const StreamInputs ic{&hc, &zc, &tc, &fc.nodes, &fc.g};
    const StreamInputs ip{&hp, &zp, &tp, &fp.nodes, &fp.g};
    Rng r1(seed);
    const auto rb = stage2_objective(ic, ip, bm, b1, r1);
    CHECK(rb.cls.total == doctest::Approx((1 - o.weights.alpha) * rb.cls.sup + o.weights.alpha * rb.cls.cal));
    Stage2Options nocl = o;
    nocl.use_semicl = false;
    Rng r2(seed);
    const auto rn = stage2_objective(ic, ip, bm, nocl, r2);
    CHECK(rn.cls.total == doctest::Approx(o.weights.alpha * o.weights.beta * rn.cls.cal));
  }
  log::level() = saved;
}

TEST_CASE("projection head backward matches finite differences") {
  Rng rng(29);
  const auto head = ProjectionHead::random(5, 3);
  const Matrix h = oracle::random_unit_rows(4, 5, rng);
  const Matrix w = oracle::random_unit_rows(4, 5, rng);
  auto f = [&](const std::vector<double>& x) {
    const Matrix z = head.forward(oracle::unflatten(x, 4, 5));
    double s = 0.0;
    for (std::size_t k = 0; k < z.data().size(); ++k) s += z.data()[k] * w.data()[k];
    return s;
  };
  const Matrix g = head.backward(h, w);
  CHECK(oracle::relative_error(g.data(), oracle::fd_gradient(f, h.data())) <= 1e-4);
  CHECK(ProjectionHead().forward(h) == h);
}
