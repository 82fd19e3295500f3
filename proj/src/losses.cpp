#include "gncd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "gncd/log.hpp"

namespace gncd::losses {

void validate(const LossWeights& w) {
  std::ostringstream err;
  if (!(w.alpha >= 0.0 && w.alpha <= 1.0)) err << " alpha must be in [0, 1];";
  if (!(w.beta >= 0.0 && w.beta <= 1.0)) err << " beta must be in [0, 1];";
  if (!(w.gamma >= 0.0)) err << " gamma must be >= 0;";
  if (!(w.tau > 0.0)) err << " tau must be > 0;";
  if (!(w.tau_a > 0.0)) err << " tau_a must be > 0;";
  if (!err.str().empty()) throw std::invalid_argument("loss weights:" + err.str());
}

LossGrad contrastive_loss(std::span<const double> query, const Matrix& keys, double tau,
                          const ContrastSets& sets) {
  if (sets.positives.empty()) throw std::invalid_argument("contrastive_loss: empty positive set");
  if (sets.anchors.empty()) throw std::invalid_argument("contrastive_loss: empty anchor set");
  if (keys.cols() != query.size()) throw std::invalid_argument("contrastive_loss: dimension mismatch");
  for (std::size_t a : sets.anchors)
    if (a >= keys.rows()) throw std::out_of_range("contrastive_loss: anchor index out of range");
  for (std::size_t p : sets.positives)
    if (p >= keys.rows()) throw std::out_of_range("contrastive_loss: positive index out of range");

  const std::size_t d = query.size();
  std::vector<double> logits(sets.anchors.size());
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < sets.anchors.size(); ++a) {
    logits[a] = dot(query, keys.row(sets.anchors[a])) / tau;
    max_logit = std::max(max_logit, logits[a]);
  }
  double z = 0.0;
  for (double& l : logits) {
    l = std::exp(l - max_logit);
    z += l;
  }
  const double lse = max_logit + std::log(z);

  LossGrad out;
  out.grad.assign(d, 0.0);
  for (std::size_t a = 0; a < sets.anchors.size(); ++a) {
    const double w = logits[a] / z;
    auto k = keys.row(sets.anchors[a]);
    for (std::size_t c = 0; c < d; ++c) out.grad[c] += w * k[c];
  }
  const double inv_p = 1.0 / static_cast<double>(sets.positives.size());
  double pos_sum = 0.0;
  for (std::size_t p : sets.positives) {
    auto k = keys.row(p);
    pos_sum += dot(query, k) / tau;
    for (std::size_t c = 0; c < d; ++c) out.grad[c] -= inv_p * k[c];
  }
  for (double& g : out.grad) g /= tau;
  out.loss = lse - inv_p * pos_sum;
  // Single-anchor case P = A = {k}: exactly zero, avoid -1e-17 noise.
  if (out.loss < 0.0 && out.loss > -1e-12) out.loss = 0.0;
  return out;
}

std::vector<std::size_t> view_counterparts(const std::vector<SampleMeta>& meta) {
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < meta.size(); ++i) groups[meta[i].view_group].push_back(i);
  std::vector<std::size_t> cp(meta.size());
  for (const auto& [group, members] : groups) {
    if (members.size() != 2)
      throw std::invalid_argument("view_counterparts: view group " + std::to_string(group) + " has " +
                                  std::to_string(members.size()) + " views, expected 2");
    cp[members[0]] = members[1];
    cp[members[1]] = members[0];
  }
  return cp;
}

SemiClTerms semicl_terms(const Matrix& queries, const Matrix& keys,
                         const std::vector<SampleMeta>& meta, double tau, double tau_a) {
  const std::size_t n = queries.rows();
  const std::size_t d = queries.cols();
  if (keys.rows() != n || keys.cols() != d || meta.size() != n)
    throw std::invalid_argument("semicl: queries, keys and meta must be aligned");
  const auto cp = view_counterparts(meta);

  SemiClTerms t;
  t.self_grad = Matrix(n, d);
  t.sup_grad = Matrix(n, d);

  std::vector<double> self_loss(n, 0.0);
  const std::ptrdiff_t sn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < sn; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    ContrastSets sets;
    sets.positives = {cp[i]};
    sets.anchors.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) sets.anchors.push_back(j);
    auto lg = contrastive_loss(queries.row(i), keys, tau, sets);
    self_loss[i] = lg.loss;
    std::copy(lg.grad.begin(), lg.grad.end(), t.self_grad.row(i).begin());
  }
  for (double l : self_loss) t.self_loss += l;
  if (n > 0) {
    t.self_loss /= static_cast<double>(n);
    for (double& g : t.self_grad.data()) g /= static_cast<double>(n);
  }

  std::vector<std::size_t> labeled;
  for (std::size_t i = 0; i < n; ++i)
    if (meta[i].visible_label()) labeled.push_back(i);

  std::vector<double> sup_loss(n, 0.0);
  std::vector<char> evaluated(n, 0);
  const std::ptrdiff_t ln = static_cast<std::ptrdiff_t>(labeled.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t li = 0; li < ln; ++li) {
    const std::size_t i = labeled[static_cast<std::size_t>(li)];
    ContrastSets sets;
    for (std::size_t j : labeled) {
      if (j == i) continue;
      sets.anchors.push_back(j);
      if (*meta[j].class_label == *meta[i].class_label) sets.positives.push_back(j);
    }
    if (sets.positives.empty()) continue;
    auto lg = contrastive_loss(queries.row(i), keys, tau_a, sets);
    sup_loss[i] = lg.loss;
    evaluated[i] = 1;
    std::copy(lg.grad.begin(), lg.grad.end(), t.sup_grad.row(i).begin());
  }
  for (std::size_t i : labeled) {
    if (evaluated[i]) {
      t.sup_loss += sup_loss[i];
      ++t.sup_queries;
    } else {
      ++t.sup_skipped;
    }
  }
  if (t.sup_queries > 0) {
    t.sup_loss /= static_cast<double>(t.sup_queries);
    for (double& g : t.sup_grad.data()) g /= static_cast<double>(t.sup_queries);
  }
  if (t.sup_skipped > 0)
    log::info("semicl: " + std::to_string(t.sup_skipped) +
              " labeled queries without a same-class partner contribute no supervised term");
  return t;
}

SemiClResult semicl(const Matrix& features, const std::vector<SampleMeta>& meta, double alpha,
                    double tau, double tau_a) {
  SemiClResult r;
  r.terms = semicl_terms(features, features, meta, tau, tau_a);
  r.loss = (1.0 - alpha) * r.terms.self_loss + alpha * r.terms.sup_loss;
  r.grad = Matrix(features.rows(), features.cols());
  for (std::size_t k = 0; k < r.grad.data().size(); ++k)
    r.grad.data()[k] =
        (1.0 - alpha) * r.terms.self_grad.data()[k] + alpha * r.terms.sup_grad.data()[k];
  return r;
}

WarmupResult warmup_objective(const Matrix& cls_features, const Matrix& prompt_features,
                              const std::vector<SampleMeta>& meta, const LossWeights& w) {
  validate(w);
  if (cls_features.rows() != prompt_features.rows())
    throw std::invalid_argument("warmup_objective: streams have different batch layouts");
  auto cls = semicl(cls_features, meta, w.alpha, w.tau, w.tau_a);
  auto prm = semicl(prompt_features, meta, w.alpha, w.tau, w.tau_a);
  WarmupResult r;
  r.cls_loss = cls.loss;
  r.prompt_loss = prm.loss;
  r.loss = cls.loss + w.gamma * prm.loss;
  r.grad_cls = std::move(cls.grad);
  r.grad_prompt = std::move(prm.grad);
  for (double& g : r.grad_prompt.data()) g *= w.gamma;
  return r;
}

SemiClTerms teacher_keyed_semicl(const Matrix& student_features, const Matrix& teacher_features,
                                 const std::vector<SampleMeta>& meta, double tau, double tau_a) {
  return semicl_terms(student_features, teacher_features, meta, tau, tau_a);
}

CalSets cal_sets(const SubGraphNodes& nodes, const graph::BinarizedGraph& g,
                 std::size_t query_index, std::size_t n_neg, Rng& rng) {
  const std::size_t n = nodes.size();
  if (g.size() != n) throw std::invalid_argument("cal_sets: graph/node count mismatch");
  if (query_index < nodes.batch_begin || query_index >= nodes.batch_end)
    throw std::out_of_range("cal_sets: query index outside the batch span");

  std::size_t counterpart = n;
  const std::size_t group = nodes.meta[query_index].view_group;
  for (std::size_t j = nodes.batch_begin; j < nodes.batch_end; ++j)
    if (j != query_index && nodes.meta[j].view_group == group) {
      counterpart = j;
      break;
    }
  if (counterpart == n)
    throw std::invalid_argument("cal_sets: query has no augmented counterpart in the batch");

  CalSets out;
  std::vector<std::size_t> pool;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == query_index) continue;
    if (g.edge(query_index, j) || j == counterpart)
      out.sets.positives.push_back(j);
    else
      pool.push_back(j);
  }
  out.requested_negatives = n_neg;
  auto negatives = rng.sample_without_replacement(std::move(pool), n_neg);
  out.sampled_negatives = negatives.size();
  out.sets.anchors = out.sets.positives;
  out.sets.anchors.insert(out.sets.anchors.end(), negatives.begin(), negatives.end());
  return out;
}

LossGrad cal_loss(std::span<const double> student_h, const SubGraphNodes& nodes,
                  const graph::BinarizedGraph& g, std::size_t query_index, double tau_a,
                  std::size_t n_neg, Rng& rng) {
  const CalSets s = cal_sets(nodes, g, query_index, n_neg, rng);
  if (s.short_of_negatives())
    log::warn("cal_loss: only " + std::to_string(s.sampled_negatives) + " of " +
              std::to_string(s.requested_negatives) + " pseudo-negatives available");
  return contrastive_loss(student_h, nodes.nodes, tau_a, s.sets);
}

namespace {

StreamTerms stream_objective(const StreamInputs& in, const std::vector<SampleMeta>& batch_meta,
                             const Stage2Options& opts, Rng& rng) {
  if (!in.student_h || !in.student_z || !in.teacher_z || !in.nodes || !in.graph)
    throw std::invalid_argument("stage2_objective: missing stream input");
  const Matrix& h = *in.student_h;
  const std::size_t n = h.rows();
  const SubGraphNodes& nodes = *in.nodes;
  if (nodes.batch_size() != n || batch_meta.size() != n)
    throw std::invalid_argument("stage2_objective: batch span does not match student rows");
  const LossWeights& w = opts.weights;

  StreamTerms t;
  t.grad_h = Matrix(n, h.cols());
  t.grad_z = Matrix(n, in.student_z->cols());

  // Sets are drawn serially so the RNG stream does not depend on threading.
  std::vector<ContrastSets> sets(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto s = cal_sets(nodes, *in.graph, nodes.batch_begin + r, opts.n_neg, rng);
    if (s.short_of_negatives()) ++t.short_negative_queries;
    sets[r] = std::move(s.sets);
  }
  std::vector<double> cal(n, 0.0);
  const std::ptrdiff_t sn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t rr = 0; rr < sn; ++rr) {
    const auto r = static_cast<std::size_t>(rr);
    auto lg = contrastive_loss(h.row(r), nodes.nodes, w.tau_a, sets[r]);
    cal[r] = lg.loss;
    std::copy(lg.grad.begin(), lg.grad.end(), t.grad_h.row(r).begin());
  }
  for (double l : cal) t.cal += l;
  const double inv_n = n > 0 ? 1.0 / static_cast<double>(n) : 0.0;
  t.cal *= inv_n;

  const double cal_weight = w.alpha * w.beta;
  for (double& g : t.grad_h.data()) g *= cal_weight * inv_n;

  if (opts.use_semicl) {
    const SemiClTerms sc =
        teacher_keyed_semicl(*in.student_z, *in.teacher_z, batch_meta, w.tau, w.tau_a);
    t.self = sc.self_loss;
    t.sup = sc.sup_loss;
    const double self_weight = w.alpha * (1.0 - w.beta);
    const double sup_weight = 1.0 - w.alpha;
    for (std::size_t k = 0; k < t.grad_z.data().size(); ++k)
      t.grad_z.data()[k] = sup_weight * sc.sup_grad.data()[k] + self_weight * sc.self_grad.data()[k];
    t.total = sup_weight * t.sup + w.alpha * (w.beta * t.cal + (1.0 - w.beta) * t.self);
  } else {
    t.total = cal_weight * t.cal;
  }
  return t;
}

}  // namespace

Stage2Result stage2_objective(const StreamInputs& cls, const StreamInputs& prompt,
                              const std::vector<SampleMeta>& batch_meta,
                              const Stage2Options& opts, Rng& rng) {
  validate(opts.weights);
  Stage2Result r;
  r.cls = stream_objective(cls, batch_meta, opts, rng);
  r.prompt = stream_objective(prompt, batch_meta, opts, rng);
  const double gamma = opts.weights.gamma;
  for (double& g : r.prompt.grad_h.data()) g *= gamma;
  for (double& g : r.prompt.grad_z.data()) g *= gamma;
  r.loss = r.cls.total + gamma * r.prompt.total;
  const std::size_t short_q = r.cls.short_negative_queries + r.prompt.short_negative_queries;
  if (short_q > 0)
    log::warn("stage2: " + std::to_string(short_q) + " queries had fewer than " +
              std::to_string(opts.n_neg) + " pseudo-negatives available");
  return r;
}

ProjectionHead ProjectionHead::random(std::size_t dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 17));
  Matrix w(dim, dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (double& x : w.data()) x = rng.normal() * scale;
  return ProjectionHead(std::move(w));
}

Matrix ProjectionHead::forward(const Matrix& h) const {
  if (is_identity()) return h;
  if (h.cols() != weight_.cols()) throw std::invalid_argument("ProjectionHead: dimension mismatch");
  Matrix z(h.rows(), weight_.rows());
  for (std::size_t i = 0; i < h.rows(); ++i) {
    auto zr = z.row(i);
    for (std::size_t o = 0; o < weight_.rows(); ++o) zr[o] = dot(weight_.row(o), h.row(i));
    normalize(zr);
  }
  return z;
}

Matrix ProjectionHead::backward(const Matrix& h, const Matrix& grad_z) const {
  if (is_identity()) return grad_z;
  Matrix grad_h(h.rows(), h.cols());
  std::vector<double> u(weight_.rows());
  for (std::size_t i = 0; i < h.rows(); ++i) {
    for (std::size_t o = 0; o < weight_.rows(); ++o) u[o] = dot(weight_.row(o), h.row(i));
    const double un = norm(u);
    if (un == 0.0) continue;
    // dz/du = (I - z z^T) / |u|
    auto gz = grad_z.row(i);
    double zg = 0.0;
    for (std::size_t o = 0; o < u.size(); ++o) zg += (u[o] / un) * gz[o];
    std::vector<double> gu(u.size());
    for (std::size_t o = 0; o < u.size(); ++o) gu[o] = (gz[o] - (u[o] / un) * zg) / un;
    auto gh = grad_h.row(i);
    for (std::size_t o = 0; o < weight_.rows(); ++o)
      for (std::size_t c = 0; c < h.cols(); ++c) gh[c] += weight_(o, c) * gu[o];
  }
  return grad_h;
}

}  // namespace gncd::losses
