#include "gncd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "gncd/error.hpp"
#include "gncd/log.hpp"

namespace gncd::trainer {

std::size_t TrainConfig::resolved_k(int num_classes) const {
  if (k > 0) return k;
  const std::size_t denom = 4 * static_cast<std::size_t>(std::max(num_classes, 1));
  return std::max<std::size_t>(1, memory_size / denom);
}

graph::SemiAgOptions TrainConfig::semiag_options(int num_classes) const {
  graph::SemiAgOptions o;
  o.k = resolved_k(num_classes);
  o.eta = eta;
  o.quantile_level = quantile_level;
  o.consensus = cknn;
  o.propagate = ap;
  o.semi_priori = semi_priori;
  return o;
}

std::vector<std::string> config_errors(const TrainConfig& c) {
  std::vector<std::string> e;
  const auto& w = c.weights;
  if (!(w.alpha >= 0.0 && w.alpha <= 1.0)) e.push_back("alpha must be in [0, 1]");
  if (!(w.beta >= 0.0 && w.beta <= 1.0)) e.push_back("beta must be in [0, 1]");
  if (!(w.gamma >= 0.0)) e.push_back("gamma must be >= 0");
  if (!(w.tau > 0.0)) e.push_back("tau must be > 0");
  if (!(w.tau_a > 0.0)) e.push_back("tau_a must be > 0");
  if (c.eta < 1) e.push_back("eta must be >= 1");
  if (!(c.quantile_level > 0.0 && c.quantile_level < 1.0)) e.push_back("quantile level must be in (0, 1)");
  if (c.memory_size < 1) e.push_back("memory size must be >= 1");
  if (c.n_neg < 1) e.push_back("n_neg must be >= 1");
  if (c.batch_size < 2 || c.batch_size % 2 != 0) e.push_back("batch size must be even and >= 2");
  if (c.epochs_stage1 < 0) e.push_back("stage-1 epochs must be >= 0");
  if (c.epochs_stage2 < 0) e.push_back("stage-2 epochs must be >= 0");
  if (!(c.lr >= 0.0)) e.push_back("lr must be >= 0");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) e.push_back("momentum must be in [0, 1)");
  if (!(c.weight_decay >= 0.0)) e.push_back("weight decay must be >= 0");
  if (!(c.ema_momentum >= 0.0 && c.ema_momentum <= 1.0)) e.push_back("EMA momentum must be in [0, 1]");
  if (!(c.view_noise_sigma >= 0.0)) e.push_back("view noise sigma must be >= 0");
  if (!(c.prompt_init_sigma >= 0.0)) e.push_back("prompt init sigma must be >= 0");
  if (!(c.anchor_weight >= 0.0)) e.push_back("anchor weight must be >= 0");
  if (!(c.anchor_epochs > 0.0)) e.push_back("anchor epochs must be > 0");
  if (!(c.val_fraction >= 0.0 && c.val_fraction < 1.0)) e.push_back("validation fraction must be in [0, 1)");
  if (!c.cknn && c.ap) e.push_back("affinity propagation (ap) requires the consensus graph (cknn)");
  return e;
}

void validate(const TrainConfig& cfg) {
  const auto errs = config_errors(cfg);
  if (errs.empty()) return;
  std::ostringstream msg;
  msg << "invalid training config:";
  for (const auto& e : errs) msg << "\n  - " << e;
  throw std::invalid_argument(msg.str());
}

double anchor_lambda(const TrainConfig& cfg, int epoch) {
  return std::max(0.0, cfg.anchor_weight * (1.0 - static_cast<double>(epoch) / cfg.anchor_epochs));
}

ModelState init_state(const DatasetSplit& split, const TrainConfig& cfg) {
  ModelState s;
  s.student_cls = split.base_vectors;
  s.student_prompt = split.base_vectors;
  Rng rng(derive_seed(cfg.seed, 101));
  for (double& x : s.student_prompt.data()) x += cfg.prompt_init_sigma * rng.normal();
  normalize_rows(s.student_prompt);
  s.teacher_cls = s.student_cls;
  s.teacher_prompt = s.student_prompt;
  s.momentum_cls = Matrix(s.student_cls.rows(), s.student_cls.cols());
  s.momentum_prompt = Matrix(s.student_prompt.rows(), s.student_prompt.cols());
  s.init_cls = s.student_cls;
  s.init_prompt = s.student_prompt;
  return s;
}

TrainContext make_context(const DatasetSplit& split, const TrainConfig& cfg) {
  TrainContext ctx;
  ctx.split = &split;
  const std::size_t n = split.samples.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(cfg.seed, 102));
  rng.shuffle(order);
  const std::size_t n_val = round_half_up(cfg.val_fraction * static_cast<double>(n));
  ctx.is_val.assign(n, 0);
  for (std::size_t r = 0; r < n_val; ++r) ctx.is_val[order[r]] = 1;
  ctx.train_meta = split.samples;
  for (std::size_t i = 0; i < n; ++i) {
    ctx.train_meta[i].view_group = i;
    if (ctx.is_val[i]) {
      ctx.val_items.push_back(i);
      ctx.train_meta[i].is_labeled = false;
    }
    ctx.train_items.push_back(i);
  }
  if (cfg.head == HeadKind::kRandomLinear)
    ctx.head = losses::ProjectionHead::random(split.base_vectors.cols(), cfg.seed);
  return ctx;
}

Matrix draw_view_noise(std::size_t rows, std::size_t dim, double sigma, Rng& rng) {
  Matrix noise(rows, dim);
  for (double& x : noise.data()) x = sigma * rng.normal();
  return noise;
}

EmbeddingTable apply_view(const EmbeddingTable& rows, const Matrix& noise) {
  EmbeddingTable out = rows;
  for (std::size_t k = 0; k < out.data().size(); ++k) out.data()[k] += noise.data()[k];
  normalize_rows(out);
  return out;
}

std::pair<EmbeddingTable, EmbeddingTable> augment_views(const EmbeddingTable& base, double sigma,
                                                        Rng& rng) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("augment_views: sigma must be >= 0");
  if (sigma == 0.0) return {base, base};
  const Matrix n1 = draw_view_noise(base.rows(), base.cols(), sigma, rng);
  const Matrix n2 = draw_view_noise(base.rows(), base.cols(), sigma, rng);
  return {apply_view(base, n1), apply_view(base, n2)};
}

void ema_update(EmbeddingTable& teacher, const EmbeddingTable& student, double m) {
  if (teacher.rows() != student.rows() || teacher.cols() != student.cols())
    throw std::invalid_argument("ema_update: shape mismatch");
  if (m == 1.0) return;
  if (m == 0.0) {
    teacher = student;
    return;
  }
  for (std::size_t k = 0; k < teacher.data().size(); ++k)
    teacher.data()[k] = m * teacher.data()[k] + (1.0 - m) * student.data()[k];
  normalize_rows(teacher);
}

namespace {

// Rows of the batch in view-major order: [view 0 of items..., view 1 of items...].
struct BatchLayout {
  std::vector<std::size_t> items;
  std::vector<std::size_t> row_item;  // 2B entries
  std::vector<SampleMeta> meta;       // 2B entries
};

BatchLayout layout(std::span<const std::size_t> items, const TrainContext& ctx) {
  BatchLayout b;
  b.items.assign(items.begin(), items.end());
  for (int v = 0; v < 2; ++v)
    for (std::size_t it : items) {
      b.row_item.push_back(it);
      b.meta.push_back(ctx.train_meta[it]);
    }
  return b;
}

EmbeddingTable gather_views(const EmbeddingTable& table, const BatchLayout& b) {
  return gather_rows(table, b.row_item);
}

// d/d(row) of normalize(row + noise), summed over both views of each item.
Matrix chain_to_rows(const BatchLayout& b, const EmbeddingTable& table, const Matrix& noise,
                     const EmbeddingTable& h, const Matrix& grad_h) {
  const std::size_t nb = b.items.size();
  const std::size_t d = table.cols();
  Matrix g(nb, d);
  for (std::size_t r = 0; r < b.row_item.size(); ++r) {
    auto row = table.row(b.row_item[r]);
    double un2 = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double u = row[c] + noise(r, c);
      un2 += u * u;
    }
    const double un = std::sqrt(un2);
    if (un == 0.0) continue;
    auto hr = h.row(r);
    auto gr = grad_h.row(r);
    const double hg = dot(hr, gr);
    auto dst = g.row(r % nb);
    for (std::size_t c = 0; c < d; ++c) dst[c] += (gr[c] - hr[c] * hg) / un;
  }
  return g;
}

void sgd_rows(EmbeddingTable& table, Matrix& momentum, std::span<const std::size_t> items,
              const Matrix& grad, const TrainConfig& cfg) {
  for (std::size_t r = 0; r < items.size(); ++r) {
    auto row = table.row(items[r]);
    auto buf = momentum.row(items[r]);
    auto g = grad.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      const double gc = g[c] + cfg.weight_decay * row[c];
      buf[c] = cfg.momentum * buf[c] + gc;
    }
    if (cfg.lr == 0.0) continue;
    for (std::size_t c = 0; c < row.size(); ++c) row[c] -= cfg.lr * buf[c];
    normalize(row);
  }
}

double max_abs(const Matrix& m) {
  double v = 0.0;
  for (double x : m.data()) v = std::max(v, std::abs(x));
  return v;
}

void check_finite(double loss, const Matrix& g1, const Matrix& g2, int stage, int epoch,
                  std::size_t batch) {
  const double mg = std::max(max_abs(g1), max_abs(g2));
  if (std::isfinite(loss) && std::isfinite(mg)) return;
  std::ostringstream msg;
  msg << "non-finite loss in stage " << stage << " epoch " << epoch << " batch " << batch
      << ": loss=" << loss << " max|grad|=" << mg;
  throw NumericError(msg.str());
}

std::vector<std::vector<std::size_t>> make_batches(const TrainContext& ctx, const TrainConfig& cfg,
                                                   Rng& rng) {
  std::vector<std::size_t> order = ctx.train_items;
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
    const std::size_t e = std::min(order.size(), s + cfg.batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                         order.begin() + static_cast<std::ptrdiff_t>(e));
  }
  return batches;
}

}  // namespace

EpochMetrics warmup_epoch(ModelState& state, const TrainContext& ctx, const TrainConfig& cfg,
                          int epoch) {
  Rng rng(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
  const auto batches = make_batches(ctx, cfg, rng);
  const double lambda = anchor_lambda(cfg, epoch);
  const std::size_t d = state.student_cls.cols();

  EpochMetrics m;
  m.stage = 1;
  m.epoch = epoch;
  for (std::size_t bi = 0; bi < batches.size(); ++bi) {
    const BatchLayout b = layout(batches[bi], ctx);
    const std::size_t nb = b.items.size();
    const Matrix noise = draw_view_noise(2 * nb, d, cfg.view_noise_sigma, rng);

    const EmbeddingTable h_c = apply_view(gather_views(state.student_cls, b), noise);
    const EmbeddingTable h_p = apply_view(gather_views(state.student_prompt, b), noise);
    const Matrix z_c = ctx.head.forward(h_c);
    const Matrix z_p = ctx.head.forward(h_p);

    const auto obj = losses::warmup_objective(z_c, z_p, b.meta, cfg.weights);
    Matrix g_c = chain_to_rows(b, state.student_cls, noise, h_c, ctx.head.backward(h_c, obj.grad_cls));
    Matrix g_p =
        chain_to_rows(b, state.student_prompt, noise, h_p, ctx.head.backward(h_p, obj.grad_prompt));

    double anchor = 0.0;
    if (lambda > 0.0) {
      const double scale = lambda / static_cast<double>(nb);
      for (std::size_t r = 0; r < nb; ++r) {
        const std::size_t it = b.items[r];
        for (std::size_t c = 0; c < d; ++c) {
          const double dc = state.student_cls(it, c) - state.init_cls(it, c);
          const double dp = state.student_prompt(it, c) - state.init_prompt(it, c);
          anchor += scale * (dc * dc + dp * dp);
          g_c(r, c) += 2.0 * scale * dc;
          g_p(r, c) += 2.0 * scale * dp;
        }
      }
    }
    const double loss = obj.loss + anchor;
    check_finite(loss, g_c, g_p, 1, epoch, bi);

    sgd_rows(state.student_cls, state.momentum_cls, b.items, g_c, cfg);
    sgd_rows(state.student_prompt, state.momentum_prompt, b.items, g_p, cfg);

    m.loss += loss;
    m.cls_loss += obj.cls_loss;
    m.prompt_loss += obj.prompt_loss;
    m.anchor_loss += anchor;
    m.max_grad = std::max({m.max_grad, max_abs(g_c), max_abs(g_p)});
    ++m.batches;
  }
  if (m.batches > 0) {
    const double nb = static_cast<double>(m.batches);
    m.loss /= nb;
    m.cls_loss /= nb;
    m.prompt_loss /= nb;
    m.anchor_loss /= nb;
  }
  // Teacher mirrors the student during warm-up.
  state.teacher_cls = state.student_cls;
  state.teacher_prompt = state.student_prompt;
  return m;
}

Banks make_banks(const TrainConfig& cfg, std::size_t dim) {
  return Banks{MemoryBank(cfg.memory_size, Stream::kClass, dim),
               MemoryBank(cfg.memory_size, Stream::kPrompt, dim)};
}

EpochMetrics cal_epoch(ModelState& state, Banks& banks, const TrainContext& ctx,
                       const TrainConfig& cfg, int epoch, const StepHook& hook) {
  auto step = [&](const char* s) {
    if (hook) hook(s);
  };
  Rng rng(derive_seed(cfg.seed, 2000 + static_cast<std::uint64_t>(epoch)));
  const auto batches = make_batches(ctx, cfg, rng);
  const std::size_t d = state.student_cls.cols();
  const graph::SemiAgOptions base_opts = cfg.semiag_options(ctx.split->num_classes);
  losses::Stage2Options sopts;
  sopts.weights = cfg.weights;
  sopts.n_neg = cfg.n_neg;
  sopts.use_semicl = cfg.semicl;

  EpochMetrics m;
  m.stage = 2;
  m.epoch = epoch;
  double pos_total = 0.0, pos_true = 0.0, pos_queries = 0.0;
  for (std::size_t bi = 0; bi < batches.size(); ++bi) {
    const BatchLayout b = layout(batches[bi], ctx);
    const Matrix noise = draw_view_noise(2 * b.items.size(), d, cfg.view_noise_sigma, rng);

    step("forward");
    const EmbeddingTable h_c = apply_view(gather_views(state.student_cls, b), noise);
    const EmbeddingTable h_p = apply_view(gather_views(state.student_prompt, b), noise);
    const Matrix z_c = ctx.head.forward(h_c);
    const Matrix z_p = ctx.head.forward(h_p);
    const EmbeddingTable ht_c = apply_view(gather_views(state.teacher_cls, b), noise);
    const EmbeddingTable ht_p = apply_view(gather_views(state.teacher_prompt, b), noise);
    const Matrix zt_c = ctx.head.forward(ht_c);
    const Matrix zt_p = ctx.head.forward(ht_p);

    step("semiag_cls");
    const SubGraphNodes nodes_c = subgraph_nodes(banks.cls, ht_c, b.meta);
    graph::SemiAgOptions opts = base_opts;
    opts.k = std::min(opts.k, nodes_c.size());
    const graph::BinarizedGraph g_c = graph::semiag(nodes_c.nodes, nodes_c.meta, opts);

    step("semiag_prompt");
    const SubGraphNodes nodes_p = subgraph_nodes(banks.prompt, ht_p, b.meta);
    opts.k = std::min(base_opts.k, nodes_p.size());
    const graph::BinarizedGraph g_p = graph::semiag(nodes_p.nodes, nodes_p.meta, opts);

    // Diagnostic only: pseudo-positive purity against ground truth.
    for (std::size_t i = nodes_c.batch_begin; i < nodes_c.batch_end; ++i) {
      const auto& yi = ctx.split->samples[nodes_c.meta[i].id].class_label;
      for (std::size_t j = 0; j < nodes_c.size(); ++j) {
        if (j == i || !g_c.edge(i, j)) continue;
        pos_total += 1.0;
        if (yi && ctx.split->samples[nodes_c.meta[j].id].class_label == yi) pos_true += 1.0;
      }
      pos_queries += 1.0;
    }

    step("semicl");
    const losses::StreamInputs in_c{&h_c, &z_c, &zt_c, &nodes_c, &g_c};
    const losses::StreamInputs in_p{&h_p, &z_p, &zt_p, &nodes_p, &g_p};
    const auto obj = losses::stage2_objective(in_c, in_p, b.meta, sopts, rng);
    step("total");

    step("backprop");
    Matrix gh_c = ctx.head.backward(h_c, obj.cls.grad_z);
    Matrix gh_p = ctx.head.backward(h_p, obj.prompt.grad_z);
    for (std::size_t k = 0; k < gh_c.data().size(); ++k) {
      gh_c.data()[k] += obj.cls.grad_h.data()[k];
      gh_p.data()[k] += obj.prompt.grad_h.data()[k];
    }
    const Matrix g_rows_c = chain_to_rows(b, state.student_cls, noise, h_c, gh_c);
    const Matrix g_rows_p = chain_to_rows(b, state.student_prompt, noise, h_p, gh_p);
    check_finite(obj.loss, g_rows_c, g_rows_p, 2, epoch, bi);
    sgd_rows(state.student_cls, state.momentum_cls, b.items, g_rows_c, cfg);
    sgd_rows(state.student_prompt, state.momentum_prompt, b.items, g_rows_p, cfg);

    step("enqueue");
    banks.cls.enqueue(ht_c, b.meta);
    banks.prompt.enqueue(ht_p, b.meta);

    step("ema");
    ema_update(state.teacher_cls, state.student_cls, cfg.ema_momentum);
    ema_update(state.teacher_prompt, state.student_prompt, cfg.ema_momentum);

    m.loss += obj.loss;
    m.cls_loss += obj.cls.total;
    m.prompt_loss += obj.prompt.total;
    m.cal_cls += obj.cls.cal;
    m.self_cls += obj.cls.self;
    m.sup_cls += obj.cls.sup;
    m.max_grad = std::max({m.max_grad, max_abs(g_rows_c), max_abs(g_rows_p)});
    ++m.batches;
  }
  if (m.batches > 0) {
    const double nb = static_cast<double>(m.batches);
    m.loss /= nb;
    m.cls_loss /= nb;
    m.prompt_loss /= nb;
    m.cal_cls /= nb;
    m.self_cls /= nb;
    m.sup_cls /= nb;
  }
  if (pos_queries > 0) m.mean_positives = pos_total / pos_queries;
  if (pos_total > 0) m.positive_precision = pos_true / pos_total;
  return m;
}

ValidationScore validate_state(const ModelState& state, const TrainContext& ctx,
                               const TrainConfig& cfg) {
  const DatasetSplit& split = *ctx.split;
  ValidationScore v;
  if (ctx.val_items.empty()) return v;
  eval::SemiKMeansOptions o;
  o.num_clusters = split.num_classes;
  o.seed = derive_seed(cfg.seed, 301);
  const auto assign = eval::semikmeans(state.student_cls, ctx.train_meta, o);

  std::vector<char> known_mask(split.samples.size(), 0);
  std::vector<std::size_t> new_items;
  for (std::size_t i : ctx.val_items) {
    if (split.samples[i].is_known_class)
      known_mask[i] = 1;
    else
      new_items.push_back(i);
  }
  const auto rep = eval::hungarian_accuracy(assign.cluster, split.samples, split.num_classes, &known_mask);
  v.known_acc = rep.n_all > 0 ? rep.acc_all : 0.0;

  std::vector<int> new_clusters;
  std::set<int> distinct;
  for (std::size_t i : new_items) {
    new_clusters.push_back(assign.cluster[i]);
    distinct.insert(assign.cluster[i]);
  }
  if (distinct.size() >= 2)
    v.silhouette_new = eval::silhouette(gather_rows(state.student_cls, new_items), new_clusters);
  return v;
}

eval::AccuracyReport transductive_report(const EmbeddingTable& embeddings, const TrainContext& ctx,
                                         std::uint64_t seed) {
  const DatasetSplit& split = *ctx.split;
  eval::SemiKMeansOptions o;
  o.num_clusters = split.num_classes;
  o.seed = derive_seed(seed, 302);
  const auto assign = eval::semikmeans(embeddings, ctx.train_meta, o);
  std::vector<char> include(split.samples.size(), 0);
  for (std::size_t i = 0; i < include.size(); ++i)
    include[i] = !ctx.is_val[i] && !ctx.train_meta[i].is_labeled;
  return eval::hungarian_accuracy(assign.cluster, split.samples, split.num_classes, &include);
}

ModelState run_stage1(const DatasetSplit& split, const TrainConfig& cfg, RunResult& result,
                      const EpochCallback& on_epoch) {
  validate(cfg);
  const TrainContext ctx = make_context(split, cfg);
  ModelState state = init_state(split, cfg);
  ModelState best = state;
  double best_score = -1.0;
  result.stage1_best_epoch = -1;
  for (int e = 0; e < cfg.epochs_stage1; ++e) {
    EpochRecord rec;
    rec.metrics = warmup_epoch(state, ctx, cfg, e);
    rec.val = validate_state(state, ctx, cfg);
    if (rec.val.known_acc > best_score) {
      best_score = rec.val.known_acc;
      best = state;
      result.stage1_best_epoch = e;
      rec.best = true;
    }
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.stage1_best = best;
  result.stage1_report = transductive_report(best.student_cls, ctx, cfg.seed);
  return best;
}

ModelState run_stage2(const DatasetSplit& split, const TrainConfig& cfg, const ModelState& start,
                      RunResult& result, const EpochCallback& on_epoch, Banks* final_banks) {
  validate(cfg);
  const TrainContext ctx = make_context(split, cfg);
  ModelState state = start;
  state.teacher_cls = state.student_cls;
  state.teacher_prompt = state.student_prompt;
  state.momentum_cls = Matrix(state.student_cls.rows(), state.student_cls.cols());
  state.momentum_prompt = Matrix(state.student_prompt.rows(), state.student_prompt.cols());
  Banks banks = make_banks(cfg, state.student_cls.cols());

  ModelState best = state;
  double best_score = -std::numeric_limits<double>::infinity();
  result.stage2_best_epoch = -1;
  for (int e = 0; e < cfg.epochs_stage2; ++e) {
    EpochRecord rec;
    rec.metrics = cal_epoch(state, banks, ctx, cfg, e);
    rec.val = validate_state(state, ctx, cfg);
    if (rec.val.quality() > best_score) {
      best_score = rec.val.quality();
      best = state;
      result.stage2_best_epoch = e;
      rec.best = true;
    }
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (final_banks) *final_banks = std::move(banks);
  result.stage2_best = best;
  result.stage2_report = transductive_report(best.student_cls, ctx, cfg.seed);
  return best;
}

RunResult run(const DatasetSplit& split, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  RunResult result;
  const ModelState s1 = run_stage1(split, cfg, result, on_epoch);
  if (cfg.epochs_stage2 == 0) {
    result.stage2_best = s1;
    result.stage2_report = result.stage1_report;
    return result;
  }
  run_stage2(split, cfg, s1, result, on_epoch);
  return result;
}

}  // namespace gncd::trainer
