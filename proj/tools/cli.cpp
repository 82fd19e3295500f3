#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "config_json.hpp"
#include "gncd/data.hpp"
#include "gncd/error.hpp"
#include "gncd/eval.hpp"
#include "gncd/graph.hpp"
#include "gncd/io.hpp"
#include "gncd/log.hpp"
#include "gncd/trainer.hpp"
#include "json.hpp"
#include "svg.hpp"

#ifndef GNCD_VERSION
#define GNCD_VERSION "0.0.0-unknown"
#endif

namespace gncd::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Thrown for bad flag values found after parsing; carries every problem.
struct UsageError : std::runtime_error {
  explicit UsageError(std::vector<std::string> problems)
      : std::runtime_error("invalid arguments"), problems(std::move(problems)) {}
  std::vector<std::string> problems;
};

fs::path output_root() {
  if (const char* env = std::getenv("GNCD_OUTPUT_ROOT"); env && *env) return env;
  return "runs";
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError(IoErrorKind::kOpen, "cannot open " + p.string());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IoError(IoErrorKind::kOpen, "cannot write " + p.string());
  f << text;
}

void write_json(const fs::path& p, const ordered_json& j) { write_text(p, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Training flags are captured as strings and converted after parsing.

enum class Kind { kReal, kInt, kCount, kAutoCount };

struct TrainFlag {
  const char* flag;
  const char* key;
  Kind kind;
  const char* help;
};

const TrainFlag kTrainFlags[] = {
    {"--alpha", "alpha", Kind::kReal, "supervised-mix weight"},
    {"--beta", "beta", Kind::kReal, "CAL weight"},
    {"--gamma", "gamma", Kind::kReal, "prompt-stream weight"},
    {"--tau", "tau", Kind::kReal, "base temperature"},
    {"--tau-a", "tau_a", Kind::kReal, "sharp temperature"},
    {"--eta", "eta", Kind::kInt, "diffusion steps"},
    {"--k", "k", Kind::kAutoCount, "neighborhood size, or 'auto'"},
    {"--quantile", "quantile_level", Kind::kReal, "threshold quantile level"},
    {"--memory", "memory_size", Kind::kCount, "memory bank capacity"},
    {"--n-neg", "n_neg", Kind::kCount, "pseudo-negatives per query"},
    {"--batch", "batch_size", Kind::kCount, "items per batch"},
    {"--epochs1", "epochs_stage1", Kind::kInt, "warm-up epochs"},
    {"--epochs2", "epochs_stage2", Kind::kInt, "contrastive affinity epochs"},
    {"--lr", "lr", Kind::kReal, "SGD learning rate"},
    {"--momentum", "momentum", Kind::kReal, "SGD momentum"},
    {"--wd", "weight_decay", Kind::kReal, "weight decay"},
    {"--ema", "ema_momentum", Kind::kReal, "teacher EMA momentum"},
    {"--view-sigma", "view_noise_sigma", Kind::kReal, "view noise standard deviation"},
    {"--prompt-sigma", "prompt_init_sigma", Kind::kReal, "prompt table init noise"},
    {"--anchor-weight", "anchor_weight", Kind::kReal, "warm-up anchor weight at epoch 0"},
    {"--anchor-epochs", "anchor_epochs", Kind::kReal, "epochs until the anchor vanishes"},
    {"--val-fraction", "val_fraction", Kind::kReal, "held-out validation fraction"},
    {"--seed", "seed", Kind::kCount, "run seed"},
};

struct TrainOptions {
  std::map<std::string, std::string> values;  // flag -> raw value
  std::string config_path;
  std::string head;
  std::string preset;
  bool no_cknn = false, no_ap = false, no_semipriori = false, no_semicl = false;

  void add_to(CLI::App* app) {
    for (const auto& f : kTrainFlags)
      app->add_option(f.flag, values[f.flag], f.help)->type_name(f.kind == Kind::kReal ? "REAL" : f.kind == Kind::kAutoCount ? "N|auto" : "INT");
    app->add_option("--config", config_path, "JSON config file (flags take precedence)");
    app->add_option("--head", head, "projection head: identity | random");
    app->add_option("--preset", preset, "threshold preset: generic (0.5) | fine-grained (0.8)");
    app->add_flag("--no-cknn", no_cknn, "naive mutual-KNN graph instead of consensus");
    app->add_flag("--no-ap", no_ap, "skip affinity propagation");
    app->add_flag("--no-semipriori", no_semipriori, "ignore labels when binarizing");
    app->add_flag("--no-semicl", no_semicl, "drop teacher-keyed SemiCL from stage 2");
  }

  trainer::TrainConfig resolve(CLI::App* app) const {
    std::vector<std::string> problems;
    trainer::TrainConfig cfg;
    if (!config_path.empty()) {
      try {
        apply_json(json::parse(read_file(config_path)), cfg);
      } catch (const std::exception& e) {
        problems.push_back("--config " + config_path + ": " + e.what());
      }
    }
    json overlay = json::object();
    if (!preset.empty()) {
      if (preset == "generic") overlay["quantile_level"] = 0.5;
      else if (preset == "fine-grained") overlay["quantile_level"] = 0.8;
      else problems.push_back("--preset: expected generic or fine-grained, got '" + preset + "'");
    }
    for (const auto& f : kTrainFlags) {
      if (app->count(f.flag) == 0) continue;
      const std::string& v = values.at(f.flag);
      try {
        std::size_t used = 0;
        switch (f.kind) {
          case Kind::kReal: {
            const double x = std::stod(v, &used);
            if (used != v.size() || !std::isfinite(x)) throw std::invalid_argument(v);
            overlay[f.key] = x;
            break;
          }
          case Kind::kInt: {
            const long x = std::stol(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            overlay[f.key] = x;
            break;
          }
          case Kind::kAutoCount:
            if (v == "auto") {
              overlay[f.key] = 0;
              break;
            }
            [[fallthrough]];
          case Kind::kCount: {
            if (v.empty() || v[0] == '-') throw std::invalid_argument(v);
            const unsigned long long x = std::stoull(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            overlay[f.key] = x;
            break;
          }
        }
      } catch (const std::exception&) {
        problems.push_back(std::string(f.flag) + ": invalid value '" + v + "'");
      }
    }
    if (app->count("--head")) overlay["head"] = head;
    if (no_cknn) overlay["cknn"] = false;
    if (no_ap) overlay["ap"] = false;
    if (no_semipriori) overlay["semi_priori"] = false;
    if (no_semicl) overlay["semicl"] = false;
    try {
      apply_json(overlay, cfg);
    } catch (const std::exception& e) {
      problems.push_back(e.what());
    }
    for (const auto& e : trainer::config_errors(cfg)) problems.push_back(e);
    if (!problems.empty()) throw UsageError(problems);
    return cfg;
  }
};

// ---------------------------------------------------------------------------
// Dataset directories: base.emb + splits.csv + truth.csv (+ dataset.json).

struct DataOptions {
  std::string dir, embeddings, splits, truth;

  void add_to(CLI::App* app, bool need_truth = true) {
    app->add_option("--data", dir, "dataset directory (from gen/split)");
    app->add_option("--embeddings", embeddings, "embedding file (overrides <data>/base.emb)");
    app->add_option("--splits", splits, "label file (overrides <data>/splits.csv)");
    if (need_truth) app->add_option("--truth", truth, "ground truth (overrides <data>/truth.csv)");
  }
  fs::path emb_path() const { return embeddings.empty() ? fs::path(dir) / "base.emb" : fs::path(embeddings); }
  fs::path splits_path() const { return splits.empty() ? fs::path(dir) / "splits.csv" : fs::path(splits); }
  fs::path truth_path() const { return truth.empty() ? fs::path(dir) / "truth.csv" : fs::path(truth); }
  fs::path manifest_path() const { return fs::path(dir) / "dataset.json"; }

  void check() const {
    std::vector<std::string> problems;
    if (dir.empty() && (embeddings.empty() || splits.empty()))
      problems.push_back("--data or both --embeddings and --splits are required");
    if (!problems.empty()) throw UsageError(problems);
  }

  std::string dataset_hash() const {
    if (!dir.empty() && fs::exists(manifest_path())) return fnv1a_hex(read_file(manifest_path()));
    return fnv1a_hex(read_file(emb_path()) + read_file(splits_path()));
  }
};

DatasetSplit load_split(const DataOptions& d) {
  DatasetSplit s;
  io::ReadStats st;
  s.base_vectors = io::read_embeddings(d.emb_path(), &st);
  if (st.renormalized_rows > 0)
    log::warn(std::to_string(st.renormalized_rows) + " embedding rows were re-normalized on read");
  s.samples = io::read_splits(d.splits_path());
  if (s.samples.size() != s.base_vectors.rows())
    throw IoError(IoErrorKind::kSizeMismatch,
                  "label file has " + std::to_string(s.samples.size()) + " rows, embeddings have " +
                      std::to_string(s.base_vectors.rows()));
  if (fs::exists(d.truth_path())) io::merge_truth(s.samples, d.truth_path());
  std::set<int> classes, known;
  for (auto& m : s.samples) {
    if (m.class_label) classes.insert(*m.class_label);
    if (m.is_labeled) m.is_known_class = true;
    if (m.class_label && m.is_known_class) known.insert(*m.class_label);
  }
  s.num_classes = classes.empty() ? 0 : *classes.rbegin() + 1;
  if (!d.dir.empty() && fs::exists(d.manifest_path())) {
    const auto j = json::parse(read_file(d.manifest_path()));
    if (j.contains("num_classes")) s.num_classes = j["num_classes"].get<int>();
    if (j.contains("split") && j["split"].is_object())
      s.labeling_ratio = j["split"].value("labeling_ratio", 0.0);
  }
  s.known_classes.assign(known.begin(), known.end());
  return s;
}

// ---------------------------------------------------------------------------
// Run directories.

struct RunDir {
  fs::path dir;
  explicit RunDir(fs::path d) : dir(std::move(d)) { fs::create_directories(dir); }
  fs::path operator/(const std::string& name) const { return dir / name; }
};

fs::path default_out(const std::string& out, const std::string& command) {
  return out.empty() ? output_root() / command : fs::path(out);
}

void write_manifest(const RunDir& run, const std::string& command,
                    const std::vector<std::string>& args, const ordered_json& config,
                    const std::string& dataset_hash) {
  ordered_json m;
  m["version"] = GNCD_VERSION;
  m["command"] = command;
  m["args"] = args;
  m["config"] = config;
  m["dataset_hash"] = dataset_hash;
  m["layout"] = {{"metrics", "metrics.jsonl"},
                 {"report", "report.json"},
                 {"checkpoints", "<stage>_<stream>.emb"},
                 {"plots", "*.svg"}};
  write_json(run / "manifest.json", m);
}

ordered_json report_json(const eval::AccuracyReport& r) {
  ordered_json j;
  j["all"] = r.acc_all;
  j["known"] = r.acc_known ? json(*r.acc_known) : json(nullptr);
  j["new"] = r.acc_new ? json(*r.acc_new) : json(nullptr);
  j["n_all"] = r.n_all;
  j["n_known"] = r.n_known;
  j["n_new"] = r.n_new;
  j["class_of_cluster"] = r.class_of_cluster;
  return j;
}

void write_confusion(const fs::path& p, const eval::AccuracyReport& r) {
  std::ostringstream s;
  s << "true\\pred";
  for (std::size_t c = 0; c < r.confusion.size(); ++c) s << ',' << c;
  s << '\n';
  for (std::size_t t = 0; t < r.confusion.size(); ++t) {
    s << t;
    for (long v : r.confusion[t]) s << ',' << v;
    s << '\n';
  }
  write_text(p, s.str());
}

ordered_json epoch_json(const trainer::EpochRecord& r) {
  const auto& m = r.metrics;
  ordered_json j;
  j["stage"] = m.stage;
  j["epoch"] = m.epoch;
  j["loss"] = m.loss;
  j["cls_loss"] = m.cls_loss;
  j["prompt_loss"] = m.prompt_loss;
  j["anchor_loss"] = m.anchor_loss;
  j["cal_cls"] = m.cal_cls;
  j["self_cls"] = m.self_cls;
  j["sup_cls"] = m.sup_cls;
  j["mean_positives"] = m.mean_positives;
  j["positive_precision"] = m.positive_precision;
  j["max_grad"] = m.max_grad;
  j["batches"] = m.batches;
  j["val_known_acc"] = r.val.known_acc;
  j["val_silhouette_new"] = r.val.silhouette_new;
  j["val_quality"] = r.val.quality();
  j["best"] = r.best;
  return j;
}

// Appends each epoch to metrics.jsonl as it completes.
class MetricsLog {
 public:
  explicit MetricsLog(const fs::path& p) : f_(p, std::ios::binary | std::ios::trunc) {
    if (!f_) throw IoError(IoErrorKind::kOpen, "cannot write " + p.string());
  }
  void operator()(const trainer::EpochRecord& r) {
    f_ << epoch_json(r).dump() << '\n';
    f_.flush();
    records.push_back(r);
    log::info("stage " + std::to_string(r.metrics.stage) + " epoch " + std::to_string(r.metrics.epoch) +
              " loss " + std::to_string(r.metrics.loss) + " val " + std::to_string(r.val.known_acc));
  }
  std::vector<trainer::EpochRecord> records;

 private:
  std::ofstream f_;
};

void write_curves(const RunDir& run, const std::vector<trainer::EpochRecord>& recs) {
  std::vector<Series> loss, val;
  for (int stage : {1, 2}) {
    Series l{"stage " + std::to_string(stage) + " loss", {}, {}};
    Series k{"stage " + std::to_string(stage) + " val known", {}, {}};
    Series q{"stage " + std::to_string(stage) + " val quality", {}, {}};
    for (const auto& r : recs) {
      if (r.metrics.stage != stage) continue;
      const double x = r.metrics.epoch;
      l.x.push_back(x), l.y.push_back(r.metrics.loss);
      k.x.push_back(x), k.y.push_back(r.val.known_acc);
      q.x.push_back(x), q.y.push_back(r.val.quality());
    }
    if (l.x.empty()) continue;
    loss.push_back(l);
    val.push_back(k);
    if (stage == 2) val.push_back(q);
  }
  write_line_plot(run / "loss.svg", "training loss", "epoch", loss);
  write_line_plot(run / "validation.svg", "validation", "epoch", val);
}

void write_accuracy_bars(const RunDir& run, const std::vector<std::pair<std::string, eval::AccuracyReport>>& reps) {
  std::vector<std::string> labels;
  std::vector<double> values;
  for (const auto& [name, r] : reps) {
    labels.push_back(name + " all");
    values.push_back(r.acc_all);
    labels.push_back(name + " known");
    values.push_back(r.acc_known.value_or(0.0));
    labels.push_back(name + " new");
    values.push_back(r.acc_new.value_or(0.0));
  }
  write_bar_plot(run / "accuracy.svg", "clustering accuracy", labels, values);
}

void write_checkpoint(const RunDir& run, const std::string& stage, const trainer::ModelState& s) {
  io::write_embeddings(s.student_cls, run / (stage + "_cls.emb"));
  io::write_embeddings(s.student_prompt, run / (stage + "_prompt.emb"));
}

trainer::ModelState read_checkpoint(const fs::path& dir, const std::string& stage) {
  trainer::ModelState s;
  s.student_cls = io::read_embeddings(dir / (stage + "_cls.emb"));
  s.student_prompt = io::read_embeddings(dir / (stage + "_prompt.emb"));
  s.teacher_cls = s.student_cls;
  s.teacher_prompt = s.student_prompt;
  s.init_cls = s.student_cls;
  s.init_prompt = s.student_prompt;
  s.momentum_cls = Matrix(s.student_cls.rows(), s.student_cls.cols());
  s.momentum_prompt = s.momentum_cls;
  return s;
}

ordered_json resolved_config(const trainer::TrainConfig& cfg, const DatasetSplit& split) {
  ordered_json j = to_json(cfg);
  j["k_resolved"] = cfg.resolved_k(split.num_classes);
  return j;
}

// ---------------------------------------------------------------------------
// Commands.

struct Context {
  std::ostream& out;
  std::vector<std::string> args;
};

int cmd_gen(Context& ctx, const SynthParams& p, const std::string& out) {
  const RunDir run(default_out(out, "data"));
  ordered_json m;
  m["num_classes"] = p.num_classes;
  m["dim"] = p.dim;
  m["samples_per_class"] = p.samples_per_class;
  m["class_separation"] = p.class_separation;
  m["noise_sigma"] = p.noise_sigma;
  m["seed"] = p.seed;
  m["split"] = nullptr;
  const DatasetSplit s = synth_gen(p);
  io::write_embeddings(s.base_vectors, run / "base.emb");
  io::write_truth(s.samples, run / "truth.csv");
  io::write_splits(s.samples, run / "splits.csv");
  write_json(run / "dataset.json", m);
  ctx.out << "wrote " << s.samples.size() << " samples to " << run.dir.string() << '\n';
  return kOk;
}

int cmd_split(Context& ctx, const DataOptions& d, double known_fraction, double labeling_ratio,
              std::uint64_t seed, const std::string& out) {
  d.check();
  DatasetSplit base = load_split(d);
  for (auto& m : base.samples) {
    m.is_labeled = false;
    m.is_known_class = true;
  }
  const DatasetSplit s = split_gncd(base, known_fraction, labeling_ratio, seed);
  const RunDir run(out.empty() ? fs::path(d.dir) : fs::path(out));
  ordered_json m;
  if (!d.dir.empty() && fs::exists(d.manifest_path())) {
    const auto prev = json::parse(read_file(d.manifest_path()));
    for (const auto& [k, v] : prev.items()) m[k] = v;
  }
  m["num_classes"] = base.num_classes;
  m["split"] = {{"known_fraction", known_fraction},
                {"labeling_ratio", labeling_ratio},
                {"seed", seed},
                {"known_classes", s.known_classes},
                {"num_labeled", s.num_labeled()}};
  if (run.dir != fs::path(d.dir) || !d.embeddings.empty())
    io::write_embeddings(s.base_vectors, run / "base.emb");
  io::write_splits(s.samples, run / "splits.csv");
  io::write_truth(s.samples, run / "truth.csv");
  write_json(run / "dataset.json", m);
  ctx.out << s.known_classes.size() << " known classes, " << s.num_labeled() << " labeled samples\n";
  return kOk;
}

int cmd_train(Context& ctx, const std::string& command, const DataOptions& d,
              const trainer::TrainConfig& cfg, const std::string& out, const std::string& init,
              bool dump_memory) {
  d.check();
  const DatasetSplit split = load_split(d);
  const RunDir run(default_out(out, command));
  const ordered_json config = resolved_config(cfg, split);
  write_manifest(run, command, ctx.args, config, d.dataset_hash());
  ctx.out << "resolved config: " << config.dump() << '\n';
  if (command != "warmup") ctx.out << "resolved K = " << cfg.resolved_k(split.num_classes) << '\n';

  MetricsLog metrics(run / "metrics.jsonl");
  auto on_epoch = [&](const trainer::EpochRecord& r) { metrics(r); };
  trainer::RunResult res;
  ordered_json report;
  report["protocol"] = "transductive";
  std::vector<std::pair<std::string, eval::AccuracyReport>> bars;

  if (command == "warmup" || command == "run") {
    trainer::run_stage1(split, cfg, res, on_epoch);
    write_checkpoint(run, "stage1", res.stage1_best);
    report["stage1"] = report_json(res.stage1_report);
    report["stage1"]["best_epoch"] = res.stage1_best_epoch;
    bars.emplace_back("1st", res.stage1_report);
  }
  if (command == "cal" || command == "run") {
    trainer::ModelState start;
    if (command == "cal") {
      if (init.empty()) throw UsageError({"cal: --init <warm-up run directory> is required"});
      start = read_checkpoint(init, "stage1");
    } else {
      start = res.stage1_best;
    }
    trainer::Banks banks = trainer::make_banks(cfg, split.base_vectors.cols());
    trainer::run_stage2(split, cfg, start, res, on_epoch, &banks);
    write_checkpoint(run, "stage2", res.stage2_best);
    if (dump_memory) {
      io::write_embeddings(banks.cls.embeddings(), run / "memory_cls.emb");
      io::write_embeddings(banks.prompt.embeddings(), run / "memory_prompt.emb");
    }
    report["stage2"] = report_json(res.stage2_report);
    report["stage2"]["best_epoch"] = res.stage2_best_epoch;
    bars.emplace_back("2nd", res.stage2_report);
    write_confusion(run / "confusion.csv", res.stage2_report);
  } else {
    write_confusion(run / "confusion.csv", res.stage1_report);
  }
  write_json(run / "report.json", report);
  write_curves(run, metrics.records);
  write_accuracy_bars(run, bars);
  for (const auto& [name, r] : bars) {
    ctx.out << name << ": all " << r.acc_all;
    if (r.acc_known) ctx.out << " known " << *r.acc_known;
    if (r.acc_new) ctx.out << " new " << *r.acc_new;
    ctx.out << '\n';
  }
  return kOk;
}

struct EvalOptions {
  bool task_informed = false;
  std::size_t k = 8;
  std::string protocol = "transductive";
  std::string test_ids;
  std::size_t retrieval_queries = 0;
  std::uint64_t seed = 0;
  int num_classes = 0;
};

std::vector<std::size_t> read_ids(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw IoError(IoErrorKind::kOpen, "cannot open " + p.string());
  std::vector<std::size_t> ids;
  std::string line;
  std::getline(f, line);
  if (line != "id") throw IoError(IoErrorKind::kBadHeader, p.string() + ": expected header 'id'");
  while (std::getline(f, line))
    if (!line.empty()) ids.push_back(std::stoull(line));
  return ids;
}

int cmd_eval(Context& ctx, const DataOptions& d, const EvalOptions& o, const std::string& out) {
  d.check();
  std::vector<std::string> problems;
  if (o.protocol != "transductive" && o.protocol != "inductive")
    problems.push_back("--protocol: expected transductive or inductive, got '" + o.protocol + "'");
  if (o.protocol == "inductive" && o.test_ids.empty())
    problems.push_back("--protocol inductive requires --test-ids");
  if (o.k < 1) problems.push_back("--k must be >= 1");
  if (!problems.empty()) throw UsageError(problems);

  const DatasetSplit split = load_split(d);
  const RunDir run(default_out(out, "eval"));
  const int classes = o.num_classes > 0 ? o.num_classes : split.num_classes;
  std::vector<char> include(split.samples.size(), 0);
  if (o.protocol == "inductive") {
    for (std::size_t id : read_ids(o.test_ids)) {
      if (id >= include.size()) throw IoError(IoErrorKind::kBadCsv, "test id out of range");
      include[id] = 1;
    }
  } else {
    for (std::size_t i = 0; i < include.size(); ++i) include[i] = !split.samples[i].is_labeled;
  }
  eval::SemiKMeansOptions ko;
  ko.num_clusters = classes;
  ko.seed = o.seed;
  const auto assign = eval::semikmeans(split.base_vectors, split.samples, ko);
  const auto rep = eval::hungarian_accuracy(assign.cluster, split.samples, classes, &include);

  ordered_json j;
  j["protocol"] = o.protocol;
  j["num_clusters"] = classes;
  j["semikmeans_iterations"] = assign.iterations;
  j["accuracy"] = report_json(rep);
  j["knn_precision"] = eval::knn_precision(split.base_vectors, split.samples, o.k);
  j["knn_k"] = o.k;
  if (o.task_informed) {
    const auto ti = eval::task_informed_accuracy(split.base_vectors, split.samples, o.seed, &include);
    j["task_informed"] = {{"known*", ti.known ? json(*ti.known) : json(nullptr)},
                          {"new*", ti.new_ ? json(*ti.new_) : json(nullptr)}};
  }
  write_json(run / "report.json", j);
  write_confusion(run / "confusion.csv", rep);
  write_accuracy_bars(run, {{"eval", rep}});
  if (o.retrieval_queries > 0) {
    ordered_json r = json::array();
    for (const auto& q : eval::knn_retrieval(split.base_vectors, split.samples, o.k, o.retrieval_queries, o.seed))
      r.push_back({{"query", q.query}, {"neighbours", q.neighbours}, {"correct", q.correct}});
    write_json(run / "retrieval.json", r);
  }

  auto cell = [](const json& v) { return v.is_null() ? std::string() : v.dump(); };
  ctx.out << "all,known,new";
  if (o.task_informed) ctx.out << ",known*,new*";
  ctx.out << '\n' << cell(j["accuracy"]["all"]) << ',' << cell(j["accuracy"]["known"]) << ','
          << cell(j["accuracy"]["new"]);
  if (o.task_informed) ctx.out << ',' << cell(j["task_informed"]["known*"]) << ',' << cell(j["task_informed"]["new*"]);
  ctx.out << '\n';
  return kOk;
}

int cmd_pseudo_label(Context& ctx, const DataOptions& d, const trainer::TrainConfig& cfg,
                     const std::string& out) {
  d.check();
  const DatasetSplit split = load_split(d);
  const RunDir run(default_out(out, "pseudo-label"));
  graph::SemiAgOptions o = cfg.semiag_options(split.num_classes);
  o.k = std::min(o.k, split.base_vectors.rows());
  const auto g = graph::semiag(split.base_vectors, split.samples, o);

  std::ostringstream edges;
  edges << "i,j\n";
  std::size_t undirected = 0;
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = i + 1; j < g.size(); ++j)
      if (g.edge(i, j)) {
        edges << i << ',' << j << '\n';
        ++undirected;
      }
  write_text(run / "edges.csv", edges.str());
  ordered_json r;
  r["k"] = o.k;
  r["eta"] = o.eta;
  r["quantile_level"] = o.quantile_level;
  r["consensus"] = o.consensus;
  r["propagate"] = o.propagate;
  r["semi_priori"] = o.semi_priori;
  r["q"] = std::isfinite(g.threshold_used) ? json(g.threshold_used) : json(nullptr);
  r["degenerate"] = g.degenerate;
  r["edges"] = undirected;
  r["label_forced_positive"] = g.label_forced_positive / 2;
  r["label_forced_negative"] = g.label_forced_negative / 2;
  write_json(run / "report.json", r);
  ctx.out << "resolved K = " << o.k << "\n" << undirected << " edges written to " << (run / "edges.csv").string()
          << '\n';
  return kOk;
}

struct Variant {
  std::string name;
  bool cknn, ap, semi_priori, semicl;
};

const Variant kVariants[] = {
    {"full", true, true, true, true},
    {"no-ap", true, false, true, true},
    {"no-semipriori", true, true, false, true},
    {"no-semicl", true, true, true, false},
    {"knn-baseline", false, false, true, true},
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

struct Sweep {
  std::string param;
  std::vector<double> values;
};

Sweep parse_sweep(const std::string& spec, std::vector<std::string>& problems) {
  Sweep s;
  const auto eq = spec.find('=');
  if (eq == std::string::npos) {
    problems.push_back("--sweep: expected name=start:stop:step, got '" + spec + "'");
    return s;
  }
  s.param = spec.substr(0, eq);
  std::vector<double> parts;
  std::stringstream ss(spec.substr(eq + 1));
  std::string item;
  try {
    while (std::getline(ss, item, ':')) parts.push_back(std::stod(item));
  } catch (const std::exception&) {
    parts.clear();
  }
  if (parts.size() != 3 || !(parts[2] > 0.0) || parts[1] < parts[0]) {
    problems.push_back("--sweep: expected name=start:stop:step with step > 0, got '" + spec + "'");
    return s;
  }
  for (int i = 0;; ++i) {
    const double v = parts[0] + i * parts[2];
    if (v > parts[1] + 1e-9 * std::max(1.0, std::abs(parts[1]))) break;
    s.values.push_back(std::round(v * 1e9) / 1e9);
  }
  return s;
}

bool stage2_only(const std::string& param) {
  static const std::set<std::string> keys{"beta", "k", "quantile_level", "eta", "n_neg", "memory_size",
                                          "ema_momentum", "epochs_stage2"};
  return keys.count(param) > 0;
}

int cmd_ablate(Context& ctx, const DataOptions& d, const trainer::TrainConfig& base_cfg,
               const std::string& seeds_arg, const std::string& variants_arg,
               const std::string& sweep_arg, const std::string& out) {
  d.check();
  std::vector<std::string> problems;
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_list(seeds_arg)) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(s, &used));
      if (used != s.size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      problems.push_back("--seeds: invalid seed '" + s + "'");
    }
  }
  if (seeds.empty()) problems.push_back("--seeds: at least one seed is required");
  std::vector<Variant> variants;
  for (const auto& name : split_list(variants_arg)) {
    const auto it = std::find_if(std::begin(kVariants), std::end(kVariants),
                                 [&](const Variant& v) { return v.name == name; });
    if (it == std::end(kVariants)) problems.push_back("--variants: unknown variant '" + name + "'");
    else variants.push_back(*it);
  }
  std::optional<Sweep> sweep;
  if (!sweep_arg.empty()) {
    sweep = parse_sweep(sweep_arg, problems);
    if (!sweep->param.empty()) {
      try {
        trainer::TrainConfig probe = base_cfg;
        apply_json(json{{sweep->param, sweep->values.empty() ? 0.0 : sweep->values[0]}}, probe);
      } catch (const std::exception& e) {
        problems.push_back(std::string("--sweep: ") + e.what());
      }
      for (double v : sweep->values) {
        trainer::TrainConfig probe = base_cfg;
        try {
          if (sweep->param == "k" || sweep->param == "eta" || sweep->param == "n_neg" ||
              sweep->param == "memory_size" || sweep->param == "epochs_stage2")
            apply_json(json{{sweep->param, static_cast<long>(v)}}, probe);
          else
            apply_json(json{{sweep->param, v}}, probe);
        } catch (const std::exception&) {
          continue;
        }
        for (const auto& e : trainer::config_errors(probe))
          problems.push_back("--sweep " + sweep->param + "=" + std::to_string(v) + ": " + e);
      }
    }
  }
  if (!problems.empty()) throw UsageError(problems);

  const DatasetSplit split = load_split(d);
  const RunDir run(default_out(out, "ablate"));
  ordered_json cfg_json = resolved_config(base_cfg, split);
  cfg_json["seeds"] = seeds;
  write_manifest(run, "ablate", ctx.args, cfg_json, d.dataset_hash());

  auto apply_param = [&](trainer::TrainConfig& c, double v) {
    if (sweep->param == "k" || sweep->param == "eta" || sweep->param == "n_neg" ||
        sweep->param == "memory_size" || sweep->param == "epochs_stage2")
      apply_json(json{{sweep->param, static_cast<long>(v)}}, c);
    else
      apply_json(json{{sweep->param, v}}, c);
  };

  std::ostringstream csv;
  if (!sweep) {
    csv << "variant,cknn,ap,semipriori,semicl,seed,all,known,new\n";
    std::vector<std::array<double, 3>> sums(variants.size(), {0, 0, 0});
    for (std::uint64_t seed : seeds) {
      trainer::TrainConfig c = base_cfg;
      c.seed = seed;
      trainer::RunResult r1;
      const auto s1 = trainer::run_stage1(split, c, r1);
      for (std::size_t v = 0; v < variants.size(); ++v) {
        trainer::TrainConfig cv = c;
        cv.cknn = variants[v].cknn;
        cv.ap = variants[v].ap;
        cv.semi_priori = variants[v].semi_priori;
        cv.semicl = variants[v].semicl;
        trainer::RunResult r2;
        trainer::run_stage2(split, cv, s1, r2);
        const auto& rep = r2.stage2_report;
        csv << variants[v].name << ',' << cv.cknn << ',' << cv.ap << ',' << cv.semi_priori << ','
            << cv.semicl << ',' << seed << ',' << rep.acc_all << ',' << rep.acc_known.value_or(NAN) << ','
            << rep.acc_new.value_or(NAN) << '\n';
        sums[v][0] += rep.acc_all;
        sums[v][1] += rep.acc_known.value_or(NAN);
        sums[v][2] += rep.acc_new.value_or(NAN);
      }
    }
    std::vector<std::string> labels;
    std::vector<double> news;
    const double n = static_cast<double>(seeds.size());
    for (std::size_t v = 0; v < variants.size(); ++v) {
      const auto& vv = variants[v];
      csv << vv.name << ',' << vv.cknn << ',' << vv.ap << ',' << vv.semi_priori << ',' << vv.semicl
          << ",mean," << sums[v][0] / n << ',' << sums[v][1] / n << ',' << sums[v][2] / n << '\n';
      labels.push_back(vv.name);
      news.push_back(sums[v][2] / n);
    }
    write_text(run / "ablation.csv", csv.str());
    write_bar_plot(run / "ablation.svg", "mean New accuracy by variant", labels, news);
  } else {
    csv << sweep->param << ",seed,all,known,new\n";
    Series all{"all", {}, {}}, known{"known", {}, {}}, nw{"new", {}, {}};
    std::map<std::uint64_t, trainer::ModelState> stage1;
    for (double value : sweep->values) {
      double sa = 0, sk = 0, sn = 0;
      for (std::uint64_t seed : seeds) {
        trainer::TrainConfig c = base_cfg;
        c.seed = seed;
        apply_param(c, value);
        trainer::RunResult r;
        if (stage2_only(sweep->param)) {
          if (!stage1.count(seed)) {
            trainer::TrainConfig c1 = base_cfg;
            c1.seed = seed;
            trainer::RunResult r1;
            stage1[seed] = trainer::run_stage1(split, c1, r1);
          }
          trainer::run_stage2(split, c, stage1[seed], r);
        } else {
          r = trainer::run(split, c);
        }
        const auto& rep = r.stage2_report;
        csv << value << ',' << seed << ',' << rep.acc_all << ',' << rep.acc_known.value_or(NAN) << ','
            << rep.acc_new.value_or(NAN) << '\n';
        sa += rep.acc_all;
        sk += rep.acc_known.value_or(NAN);
        sn += rep.acc_new.value_or(NAN);
      }
      const double n = static_cast<double>(seeds.size());
      all.x.push_back(value), all.y.push_back(sa / n);
      known.x.push_back(value), known.y.push_back(sk / n);
      nw.x.push_back(value), nw.y.push_back(sn / n);
    }
    write_text(run / "sweep.csv", csv.str());
    write_line_plot(run / "sweep.svg", "accuracy vs " + sweep->param, sweep->param, {all, known, nw});
  }
  ctx.out << csv.str();
  return kOk;
}

std::string usage_text(const CLI::App& app) {
  for (const auto* sub : app.get_subcommands()) return sub->help();
  return app.help();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"gncd: generalized novel category discovery on embedding tables", "gncd"};
  app.require_subcommand(1);
  app.fallthrough();
  bool quiet = false, verbose = false;
  app.add_flag("-q,--quiet", quiet, "only errors");
  app.add_flag("-v,--verbose", verbose, "progress messages");
  app.set_version_flag("--version", GNCD_VERSION);

  SynthParams gen_p;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen", "generate a synthetic class mixture");
  gen->add_option("--classes", gen_p.num_classes, "number of classes");
  gen->add_option("--dim", gen_p.dim, "embedding dimension");
  gen->add_option("--per-class", gen_p.samples_per_class, "samples per class");
  gen->add_option("--separation", gen_p.class_separation, "minimum cosine distance between class means");
  gen->add_option("--sigma", gen_p.noise_sigma, "noise standard deviation");
  gen->add_option("--seed", gen_p.seed, "seed");
  gen->add_option("--out", gen_out, "output directory");

  DataOptions split_d;
  double known_fraction = 0.5, labeling_ratio = 0.5;
  std::uint64_t split_seed = 0;
  std::string split_out;
  auto* split = app.add_subcommand("split", "choose known classes and labeled samples");
  split_d.add_to(split);
  split->add_option("--known-fraction", known_fraction, "fraction of classes that are known");
  split->add_option("--labeling-ratio", labeling_ratio, "fraction of each known class that is labeled");
  split->add_option("--seed", split_seed, "seed");
  split->add_option("--out", split_out, "output directory (default: the data directory)");

  struct TrainCmd {
    CLI::App* app;
    DataOptions data;
    TrainOptions train;
    std::string out, init;
    bool dump_memory = false;
  };
  std::map<std::string, TrainCmd> train_cmds;
  for (const auto& [name, help] : {std::pair<std::string, std::string>{"warmup", "stage 1: SemiCL warm-up"},
                                   {"cal", "stage 2: contrastive affinity learning from a warm-up run"},
                                   {"run", "both stages"}}) {
    auto& tc = train_cmds[name];
    tc.app = app.add_subcommand(name, help);
    tc.data.add_to(tc.app);
    tc.train.add_to(tc.app);
    tc.app->add_option("--out", tc.out, "run directory");
    if (name == "cal") {
      tc.app->add_option("--init", tc.init, "warm-up run directory");
      tc.app->add_flag("--dump-memory", tc.dump_memory, "write the final memory banks");
    }
  }

  DataOptions eval_d;
  EvalOptions eval_o;
  std::string eval_out;
  auto* ev = app.add_subcommand("eval", "cluster an embedding table and score it");
  eval_d.add_to(ev);
  ev->add_flag("--task-informed", eval_o.task_informed, "also cluster known and new samples separately");
  ev->add_option("--k", eval_o.k, "neighbours for KNN precision and retrieval");
  ev->add_option("--protocol", eval_o.protocol, "transductive | inductive");
  ev->add_option("--test-ids", eval_o.test_ids, "CSV of test sample ids (inductive)");
  ev->add_option("--retrieval", eval_o.retrieval_queries, "dump K-NN retrieval for this many queries");
  ev->add_option("--classes", eval_o.num_classes, "number of clusters (default: from the data)");
  ev->add_option("--seed", eval_o.seed, "seed");
  ev->add_option("--out", eval_out, "output directory");

  DataOptions pl_d;
  TrainOptions pl_t;
  std::string pl_out;
  auto* pl = app.add_subcommand("pseudo-label", "write the binarized affinity graph");
  pl_d.add_to(pl);
  pl_t.add_to(pl);
  pl->add_option("--out", pl_out, "output directory");

  DataOptions ab_d;
  TrainOptions ab_t;
  std::string ab_seeds = "0,1,2,3,4", ab_variants = "full,no-ap,no-semipriori,no-semicl,knn-baseline", ab_sweep,
              ab_out;
  auto* ab = app.add_subcommand("ablate", "stage-2 ablation table or a one-parameter sweep");
  ab_d.add_to(ab);
  ab_t.add_to(ab);
  ab->add_option("--seeds", ab_seeds, "comma-separated seeds");
  ab->add_option("--variants", ab_variants, "comma-separated variants");
  ab->add_option("--sweep", ab_sweep, "name=start:stop:step, e.g. beta=0.2:1.0:0.2");
  ab->add_option("--out", ab_out, "output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << usage_text(app);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << GNCD_VERSION << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << usage_text(app);
    return kUsageError;
  }

  const log::Level saved = log::level();
  log::level() = quiet ? log::Level::kQuiet : verbose ? log::Level::kInfo : log::Level::kWarn;
  Context ctx{out, args};
  int code = kOk;
  try {
    if (gen->parsed()) {
      code = cmd_gen(ctx, gen_p, gen_out);
    } else if (split->parsed()) {
      code = cmd_split(ctx, split_d, known_fraction, labeling_ratio, split_seed, split_out);
    } else if (ev->parsed()) {
      code = cmd_eval(ctx, eval_d, eval_o, eval_out);
    } else if (pl->parsed()) {
      code = cmd_pseudo_label(ctx, pl_d, pl_t.resolve(pl), pl_out);
    } else if (ab->parsed()) {
      code = cmd_ablate(ctx, ab_d, ab_t.resolve(ab), ab_seeds, ab_variants, ab_sweep, ab_out);
    } else {
      for (auto& [name, tc] : train_cmds)
        if (tc.app->parsed())
          code = cmd_train(ctx, name, tc.data, tc.train.resolve(tc.app), tc.out, tc.init, tc.dump_memory);
    }
  } catch (const UsageError& e) {
    err << "error: invalid arguments\n";
    for (const auto& p : e.problems) err << "  " << p << '\n';
    err << '\n' << usage_text(app);
    code = kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    code = kRuntimeError;
  }
  log::level() = saved;
  return code;
}

}  // namespace gncd::cli
