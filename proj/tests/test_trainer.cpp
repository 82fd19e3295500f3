#include <cmath>
#include <string>

#include "doctest.h"
#include "gncd/log.hpp"
#include "gncd/trainer.hpp"
#include "oracles.hpp"

using namespace gncd;
using namespace gncd::trainer;

namespace {

DatasetSplit toy_split(std::uint64_t seed, double sep = 0.9, double sigma = 0.01, int classes = 3,
                       std::size_t per = 20) {
  SynthParams p;
  p.num_classes = classes;
  p.dim = 8;
  p.samples_per_class = per;
  p.class_separation = sep;
  p.noise_sigma = sigma;
  p.seed = seed;
  return split_gncd(synth_gen(p), 0.67, 0.5, seed);
}

TrainConfig toy_config() {
  TrainConfig c;
  c.memory_size = 64;
  c.n_neg = 32;
  c.batch_size = 16;
  c.epochs_stage1 = 2;
  c.epochs_stage2 = 2;
  c.k = 4;
  c.seed = 5;
  return c;
}

struct QuietLog {
  log::Level saved = log::level();
  QuietLog() { log::level() = log::Level::kQuiet; }
  ~QuietLog() { log::level() = saved; }
};

}  // namespace

TEST_CASE("config validation lists every problem") {
  TrainConfig c;
  CHECK(config_errors(c).empty());
  c.weights.alpha = 2.0;
  c.batch_size = 3;
  c.cknn = false;
  const auto errs = config_errors(c);
  CHECK(errs.size() == 3);
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  CHECK(TrainConfig{}.resolved_k(10) == 4096 / 40);
  TrainConfig fixed;
  fixed.k = 7;
  CHECK(fixed.resolved_k(10) == 7);
}

TEST_CASE("anchor schedule") {
  TrainConfig c;
  CHECK(anchor_lambda(c, 0) == 0.5);
  CHECK(anchor_lambda(c, 5) == 0.0);
  CHECK(anchor_lambda(c, 50) == 0.0);
}

TEST_CASE("views") {
  Rng rng(1);
  const Matrix base = oracle::random_unit_rows(5, 4, rng);
  Rng r0(2);
  const auto [a, b] = augment_views(base, 0.0, r0);
  CHECK(a == base);
  CHECK(b == base);
  Rng r1(3), r2(3);
  CHECK(augment_views(base, 0.1, r1) == augment_views(base, 0.1, r2));

  // Mean cosine to the base shrinks as sigma grows.
  double prev = 1.0;
  for (double sigma : {0.01, 0.1, 0.3, 1.0}) {
    Rng r(4);
    double cos = 0.0;
    const Matrix one = gather_rows(base, std::vector<std::size_t>(2000, 0));
    for (int rep = 0; rep < 5; ++rep) {
      const auto v = augment_views(one, sigma, r).first;
      for (std::size_t i = 0; i < v.rows(); ++i) cos += dot(v.row(i), base.row(0));
    }
    cos /= 10000.0;
    CHECK(cos < prev);
    prev = cos;
  }
  CHECK(prev < 0.9);
}

TEST_CASE("ema update") {
  Rng rng(5);
  const Matrix s = oracle::random_unit_rows(3, 4, rng);
  Matrix t = oracle::random_unit_rows(3, 4, rng);
  const Matrix t0 = t;
  ema_update(t, s, 1.0);
  CHECK(t == t0);
  ema_update(t, s, 0.0);
  CHECK(t == s);

  Matrix t1 = t0;
  ema_update(t1, s, 0.999);
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> want(4);
    for (std::size_t j = 0; j < 4; ++j) want[j] = 0.999 * t0(i, j) + 0.001 * s(i, j);
    normalize(want);
    for (std::size_t j = 0; j < 4; ++j) CHECK(t1(i, j) == doctest::Approx(want[j]));
  }

  Matrix t2 = t0;
  for (int it = 0; it < 10000; ++it) ema_update(t2, s, 0.999);
  for (std::size_t i = 0; i < 3; ++i) CHECK(dot(t2.row(i), s.row(i)) >= 1.0 - 1e-6);
}

TEST_CASE("context holds out validation items with masked labels") {
  const auto split = toy_split(1, 0.9, 0.01, 3, 40);
  const auto c = toy_config();
  const auto ctx = make_context(split, c);
  CHECK(ctx.val_items.size() == 12);
  for (std::size_t i : ctx.val_items) CHECK_FALSE(ctx.train_meta[i].is_labeled);
  std::size_t labeled = 0;
  for (const auto& m : ctx.train_meta) labeled += m.is_labeled;
  CHECK(labeled <= split.num_labeled());
}

TEST_CASE("zero learning rate leaves the tables unchanged") {
  QuietLog q;
  const auto split = toy_split(2);
  auto c = toy_config();
  c.lr = 0.0;
  const auto ctx = make_context(split, c);
  ModelState s = init_state(split, c);
  const ModelState s0 = s;
  warmup_epoch(s, ctx, c, 0);
  CHECK(s.student_cls == s0.student_cls);
  CHECK(s.student_prompt == s0.student_prompt);
  auto banks = make_banks(c, split.base_vectors.cols());
  c.ema_momentum = 0.5;
  cal_epoch(s, banks, ctx, c, 0);
  CHECK(s.student_cls == s0.student_cls);
  CHECK(s.student_prompt == s0.student_prompt);
}

TEST_CASE("warm-up loss strictly decreases on a separable toy") {
  const auto split = toy_split(3, 0.9, 0.01, 3, 40);
  auto c = toy_config();
  c.batch_size = 128;
  c.anchor_weight = 0.0;
  c.view_noise_sigma = 0.0;
  const auto ctx = make_context(split, c);
  ModelState s = init_state(split, c);
  double prev = INFINITY;
  for (int e = 0; e < 10; ++e) {
    const auto m = warmup_epoch(s, ctx, c, e);
    CHECK(m.loss < prev);
    prev = m.loss;
  }
}

TEST_CASE("stage-2 step order and frozen teacher") {
  QuietLog q;
  const auto split = toy_split(4);
  auto c = toy_config();
  c.ema_momentum = 1.0;
  const auto ctx = make_context(split, c);
  ModelState s = init_state(split, c);
  const ModelState s0 = s;
  auto banks = make_banks(c, split.base_vectors.cols());
  std::vector<std::string> steps;
  cal_epoch(s, banks, ctx, c, 0, [&](const char* n) { steps.emplace_back(n); });
  const std::vector<std::string> one{"forward", "semiag_cls", "semiag_prompt", "semicl",
                                     "total",   "backprop",   "enqueue",       "ema"};
  REQUIRE(steps.size() % one.size() == 0);
  for (std::size_t i = 0; i < steps.size(); ++i) CHECK(steps[i] == one[i % one.size()]);
  CHECK(s.teacher_cls == s0.teacher_cls);
  CHECK(s.teacher_prompt == s0.teacher_prompt);
  CHECK(s.student_cls != s0.student_cls);
  CHECK(banks.cls.size() == std::min<std::size_t>(c.memory_size, 2 * split.samples.size()));
}

TEST_CASE("run: determinism and the stage-2-off path") {
  QuietLog q;
  const auto split = toy_split(6);
  auto c = toy_config();
  const auto a = run(split, c);
  const auto b = run(split, c);
  CHECK(a.stage2_best == b.stage2_best);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].metrics.loss == b.log[i].metrics.loss);
    CHECK(a.log[i].val.known_acc == b.log[i].val.known_acc);
  }
  c.epochs_stage2 = 0;
  const auto s1 = run(split, c);
  CHECK(s1.stage2_best == s1.stage1_best);
  CHECK(s1.stage2_report.acc_all == s1.stage1_report.acc_all);
}
