#pragma once

// Contrastive objectives with analytic gradients with respect to the query
// vectors. Keys are always treated as constants (stop-gradient / teacher
// semantics), so every gradient below is d loss / d query only.

#include <cstddef>
#include <span>
#include <vector>

#include "gncd/data.hpp"
#include "gncd/graph.hpp"
#include "gncd/matrix.hpp"
#include "gncd/memory.hpp"
#include "gncd/rng.hpp"

namespace gncd::losses {

struct ContrastSets {
  std::vector<std::size_t> positives;  // key indices, subset of anchors
  std::vector<std::size_t> anchors;
};

struct LossWeights {
  double alpha = 0.35;  // supervised mix
  double beta = 0.6;    // CAL weight inside the alpha branch of stage 2
  double gamma = 0.35;  // prompt-stream weight
  double tau = 1.0;
  double tau_a = 0.07;
};

void validate(const LossWeights& w);

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

// loss = -(1/|P|) sum_{p in P} log( exp(q.k_p / tau) / sum_{a in A} exp(q.k_a / tau) )
LossGrad contrastive_loss(std::span<const double> query, const Matrix& keys, double tau,
                          const ContrastSets& sets);

// counterpart[i] = index of the other view of sample i's view_group.
// Throws unless every view_group occurs exactly twice.
std::vector<std::size_t> view_counterparts(const std::vector<SampleMeta>& meta);

struct SemiClTerms {
  double self_loss = 0.0;  // mean over all queries
  double sup_loss = 0.0;   // mean over labeled queries with a positive
  Matrix self_grad;        // gradient of self_loss, one row per query
  Matrix sup_grad;
  std::size_t sup_queries = 0;
  std::size_t sup_skipped = 0;  // labeled queries without any same-class partner
};

// Self term: P = counterpart view, A = all keys but the query's own index,
// temperature tau. Supervised term over labeled rows only: P = other labeled
// rows of the same class, A = labeled rows but the query's own index,
// temperature tau_a. `keys` may be the queries themselves (stop-gradient) or
// teacher features aligned by index.
SemiClTerms semicl_terms(const Matrix& queries, const Matrix& keys,
                         const std::vector<SampleMeta>& meta, double tau, double tau_a);

struct SemiClResult {
  double loss = 0.0;
  Matrix grad;
  SemiClTerms terms;
};

// (1 - alpha) * self + alpha * sup, keys = the batch features themselves.
SemiClResult semicl(const Matrix& features, const std::vector<SampleMeta>& meta, double alpha,
                    double tau, double tau_a);

struct WarmupResult {
  double loss = 0.0;
  double cls_loss = 0.0;
  double prompt_loss = 0.0;
  Matrix grad_cls;
  Matrix grad_prompt;
};

// SemiCL on the class stream + gamma * SemiCL on the prompt stream.
WarmupResult warmup_objective(const Matrix& cls_features, const Matrix& prompt_features,
                              const std::vector<SampleMeta>& meta, const LossWeights& w);

// Student queries against teacher keys.
SemiClTerms teacher_keyed_semicl(const Matrix& student_features, const Matrix& teacher_features,
                                 const std::vector<SampleMeta>& meta, double tau, double tau_a);

struct CalSets {
  ContrastSets sets;
  std::size_t requested_negatives = 0;
  std::size_t sampled_negatives = 0;
  bool short_of_negatives() const { return sampled_negatives < requested_negatives; }
};

// P_a = {j != i : G_b(i,j) = 1} + the teacher node of the query's other view;
// A_a = P_a + up to n_neg pseudo-negatives drawn uniformly without
// replacement from {j != i : G_b(i,j) = 0, j not in P_a}.
CalSets cal_sets(const SubGraphNodes& nodes, const graph::BinarizedGraph& g,
                 std::size_t query_index, std::size_t n_neg, Rng& rng);

LossGrad cal_loss(std::span<const double> student_h, const SubGraphNodes& nodes,
                  const graph::BinarizedGraph& g, std::size_t query_index, double tau_a,
                  std::size_t n_neg, Rng& rng);

// One stream's inputs for the stage-2 objective. Row r of the student/teacher
// matrices is the sample at node r of the sub-graph batch span.
struct StreamInputs {
  const Matrix* student_h = nullptr;
  const Matrix* student_z = nullptr;
  const Matrix* teacher_z = nullptr;
  const SubGraphNodes* nodes = nullptr;
  const graph::BinarizedGraph* graph = nullptr;
};

struct StreamTerms {
  double cal = 0.0;
  double self = 0.0;
  double sup = 0.0;
  double total = 0.0;
  std::size_t short_negative_queries = 0;
  Matrix grad_h;
  Matrix grad_z;
};

struct Stage2Result {
  double loss = 0.0;
  StreamTerms cls;
  StreamTerms prompt;
};

struct Stage2Options {
  LossWeights weights;
  std::size_t n_neg = 1024;
  bool use_semicl = true;  // off: drop the teacher-keyed SemiCL terms
};

// L2 = L2_cls + gamma * L2_prompt with, per stream,
// L2_s = (1 - alpha) * L_sup + alpha * (beta * L_cal + (1 - beta) * L_self).
// Negatives are drawn from `rng`, class stream first, queries in order.
Stage2Result stage2_objective(const StreamInputs& cls, const StreamInputs& prompt,
                              const std::vector<SampleMeta>& batch_meta,
                              const Stage2Options& opts, Rng& rng);

// Projection from embedding space to feature space: identity, or a fixed
// linear map followed by re-normalization.
class ProjectionHead {
 public:
  ProjectionHead() = default;  // identity
  static ProjectionHead random(std::size_t dim, std::uint64_t seed);
  explicit ProjectionHead(Matrix weight) : weight_(std::move(weight)) {}

  bool is_identity() const { return weight_.empty(); }
  const Matrix& weight() const { return weight_; }

  Matrix forward(const Matrix& h) const;
  // Chain rule: given dL/dz at z = forward(h), returns dL/dh.
  Matrix backward(const Matrix& h, const Matrix& grad_z) const;

 private:
  Matrix weight_;  // out x in
};

}  // namespace gncd::losses
