#pragma once

// Two-stage training over free per-item embedding tables: a warm-up stage
// driven by semi-supervised contrastive learning on both streams, then
// contrastive affinity learning against an EMA teacher with FIFO memories.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gncd/data.hpp"
#include "gncd/eval.hpp"
#include "gncd/graph.hpp"
#include "gncd/losses.hpp"
#include "gncd/matrix.hpp"
#include "gncd/memory.hpp"
#include "gncd/rng.hpp"

namespace gncd::trainer {

enum class HeadKind { kIdentity, kRandomLinear };

struct TrainConfig {
  losses::LossWeights weights;  // alpha 0.35, beta 0.6, gamma 0.35, tau 1.0, tau_a 0.07
  int eta = 1;
  std::size_t k = 0;  // 0 = auto: floor(memory_size / (4 |C|))
  double quantile_level = 0.5;
  std::size_t memory_size = 4096;
  std::size_t n_neg = 1024;
  std::size_t batch_size = 128;  // items per batch; two views each
  int epochs_stage1 = 200;
  int epochs_stage2 = 70;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-5;
  double ema_momentum = 0.999;
  double view_noise_sigma = 0.05;
  double prompt_init_sigma = 0.1;
  // lambda(E) = max(0, anchor_weight * (1 - E / anchor_epochs)), E = 0-based epoch
  double anchor_weight = 0.5;
  double anchor_epochs = 5.0;
  double val_fraction = 0.1;
  HeadKind head = HeadKind::kIdentity;
  // Ablation toggles.
  bool cknn = true;
  bool ap = true;
  bool semi_priori = true;
  bool semicl = true;
  std::uint64_t seed = 0;

  std::size_t resolved_k(int num_classes) const;
  graph::SemiAgOptions semiag_options(int num_classes) const;
};

// Lists every violated constraint at once.
std::vector<std::string> config_errors(const TrainConfig& cfg);
void validate(const TrainConfig& cfg);

double anchor_lambda(const TrainConfig& cfg, int epoch);

struct ModelState {
  EmbeddingTable student_cls;
  EmbeddingTable student_prompt;
  EmbeddingTable teacher_cls;
  EmbeddingTable teacher_prompt;
  Matrix momentum_cls;
  Matrix momentum_prompt;
  EmbeddingTable init_cls;  // anchor targets for the warm-up regularizer
  EmbeddingTable init_prompt;

  bool operator==(const ModelState&) const = default;
};

ModelState init_state(const DatasetSplit& split, const TrainConfig& cfg);

// Training view of a split: which items train, which are held out for
// checkpoint selection, and the metadata the optimizer is allowed to see.
struct TrainContext {
  const DatasetSplit* split = nullptr;
  std::vector<std::size_t> train_items;
  std::vector<std::size_t> val_items;
  std::vector<char> is_val;
  // Per item; validation labels are masked so they never drive training.
  std::vector<SampleMeta> train_meta;
  losses::ProjectionHead head;
};

TrainContext make_context(const DatasetSplit& split, const TrainConfig& cfg);

// Gaussian view noise with standard deviation sigma.
Matrix draw_view_noise(std::size_t rows, std::size_t dim, double sigma, Rng& rng);
// Row-wise normalize(rows + noise).
EmbeddingTable apply_view(const EmbeddingTable& rows, const Matrix& noise);
std::pair<EmbeddingTable, EmbeddingTable> augment_views(const EmbeddingTable& base, double sigma,
                                                        Rng& rng);

// teacher <- normalize(m * teacher + (1 - m) * student), row-wise.
void ema_update(EmbeddingTable& teacher, const EmbeddingTable& student, double m);

struct EpochMetrics {
  int stage = 1;
  int epoch = 0;  // 0-based within the stage
  double loss = 0.0;
  double cls_loss = 0.0;
  double prompt_loss = 0.0;
  double anchor_loss = 0.0;
  double cal_cls = 0.0;
  double self_cls = 0.0;
  double sup_cls = 0.0;
  double mean_positives = 0.0;      // per CAL query, class stream
  double positive_precision = 0.0;  // diagnostic: share of true same-class positives
  double max_grad = 0.0;
  std::size_t batches = 0;
};

EpochMetrics warmup_epoch(ModelState& state, const TrainContext& ctx, const TrainConfig& cfg,
                          int epoch);

struct Banks {
  MemoryBank cls;
  MemoryBank prompt;
};

Banks make_banks(const TrainConfig& cfg, std::size_t dim);

// Called once per stage-2 batch with the step name, in execution order;
// tests use it to check the per-iteration schedule.
using StepHook = std::function<void(const char* step)>;

EpochMetrics cal_epoch(ModelState& state, Banks& banks, const TrainContext& ctx,
                       const TrainConfig& cfg, int epoch, const StepHook& hook = {});

struct ValidationScore {
  double known_acc = 0.0;
  double silhouette_new = 0.0;
  double quality() const { return 0.5 * (known_acc + silhouette_new); }
};

ValidationScore validate_state(const ModelState& state, const TrainContext& ctx,
                               const TrainConfig& cfg);

// SemiKMeans over all items with training labels pinned; accuracy on the
// unlabeled, non-validation training items.
eval::AccuracyReport transductive_report(const EmbeddingTable& embeddings, const TrainContext& ctx,
                                         std::uint64_t seed);

struct EpochRecord {
  EpochMetrics metrics;
  ValidationScore val;
  bool best = false;
};

struct RunResult {
  ModelState stage1_best;
  ModelState stage2_best;
  int stage1_best_epoch = -1;
  int stage2_best_epoch = -1;
  std::vector<EpochRecord> log;
  eval::AccuracyReport stage1_report;
  eval::AccuracyReport stage2_report;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Stage 1 from the initial state, then (optionally) stage 2 from its best
// checkpoint.
RunResult run(const DatasetSplit& split, const TrainConfig& cfg, const EpochCallback& on_epoch = {});
ModelState run_stage1(const DatasetSplit& split, const TrainConfig& cfg, RunResult& result,
                      const EpochCallback& on_epoch = {});
// `final_banks`, when given, receives the memory banks after the last epoch.
ModelState run_stage2(const DatasetSplit& split, const TrainConfig& cfg, const ModelState& start,
                      RunResult& result, const EpochCallback& on_epoch = {},
                      Banks* final_banks = nullptr);

}  // namespace gncd::trainer
