#include "gncd/data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "gncd/error.hpp"
#include "gncd/rng.hpp"

namespace gncd {

bool DatasetSplit::is_known(int cls) const {
  return std::binary_search(known_classes.begin(), known_classes.end(), cls);
}

std::size_t DatasetSplit::num_labeled() const {
  return static_cast<std::size_t>(std::count_if(
      samples.begin(), samples.end(), [](const SampleMeta& m) { return m.is_labeled; }));
}

std::size_t round_half_up(double x) {
  return static_cast<std::size_t>(std::floor(x + 0.5));
}

namespace {

void random_unit(Rng& rng, std::span<double> out) {
  do {
    for (double& x : out) x = rng.normal();
  } while (normalize(out) == 0.0);
}

void check_synth(const SynthParams& p) {
  std::ostringstream err;
  if (p.num_classes < 1) err << " num_classes must be >= 1;";
  if (p.dim < 2) err << " dim must be >= 2;";
  if (p.samples_per_class < 1) err << " samples_per_class must be >= 1;";
  if (!(p.class_separation >= 0.0)) err << " class_separation must be >= 0;";
  if (!(p.noise_sigma >= 0.0)) err << " noise_sigma must be >= 0;";
  if (!err.str().empty()) throw std::invalid_argument("synth_gen:" + err.str());
}

}  // namespace

EmbeddingTable synth_class_means(const SynthParams& p) {
  check_synth(p);
  Rng rng(derive_seed(p.seed, 1));
  const auto nc = static_cast<std::size_t>(p.num_classes);
  EmbeddingTable means(nc, p.dim);
  std::vector<double> cand(p.dim);
  for (std::size_t c = 0; c < nc; ++c) {
    std::size_t best_conflicts = std::numeric_limits<std::size_t>::max();
    bool placed = false;
    for (std::size_t attempt = 0; attempt < p.max_attempts && !placed; ++attempt) {
      random_unit(rng, cand);
      std::size_t conflicts = 0;
      for (std::size_t o = 0; o < c; ++o)
        if (1.0 - dot(cand, means.row(o)) < p.class_separation) ++conflicts;
      best_conflicts = std::min(best_conflicts, conflicts);
      if (conflicts == 0) {
        std::copy(cand.begin(), cand.end(), means.row(c).begin());
        placed = true;
      }
    }
    if (!placed) {
      std::ostringstream msg;
      msg << "synth_gen: class separation " << p.class_separation
          << " infeasible: mean " << c << " still violated " << best_conflicts
          << " pair(s) after " << p.max_attempts << " attempts";
      throw Error(msg.str());
    }
  }
  return means;
}

DatasetSplit synth_gen(const SynthParams& p) {
  const EmbeddingTable means = synth_class_means(p);
  Rng rng(derive_seed(p.seed, 2));
  const auto nc = static_cast<std::size_t>(p.num_classes);
  const std::size_t n = nc * p.samples_per_class;

  DatasetSplit out;
  out.num_classes = p.num_classes;
  out.known_classes.resize(nc);
  std::iota(out.known_classes.begin(), out.known_classes.end(), 0);
  out.base_vectors = EmbeddingTable(n, p.dim);
  out.samples.reserve(n);
  for (std::size_t c = 0; c < nc; ++c) {
    for (std::size_t s = 0; s < p.samples_per_class; ++s) {
      const std::size_t id = c * p.samples_per_class + s;
      auto row = out.base_vectors.row(id);
      auto mean = means.row(c);
      do {
        for (std::size_t k = 0; k < p.dim; ++k)
          row[k] = mean[k] + p.noise_sigma * rng.normal();
      } while (normalize(row) == 0.0);
      out.samples.push_back(SampleMeta{id, static_cast<int>(c), false, true, id});
    }
  }
  return out;
}

DatasetSplit split_gncd(const DatasetSplit& base, double known_fraction,
                        double labeling_ratio, std::uint64_t seed) {
  std::ostringstream err;
  if (!(known_fraction > 0.0 && known_fraction <= 1.0))
    err << " known_fraction must be in (0, 1];";
  if (!(labeling_ratio > 0.0 && labeling_ratio <= 1.0))
    err << " labeling_ratio must be in (0, 1];";
  if (!err.str().empty()) throw std::invalid_argument("split_gncd:" + err.str());
  if (known_fraction * base.num_classes < 1.0)
    throw std::invalid_argument("split_gncd: known_fraction * |C| < 1, no known class");

  Rng rng(derive_seed(seed, 3));
  std::vector<int> classes(static_cast<std::size_t>(base.num_classes));
  std::iota(classes.begin(), classes.end(), 0);
  rng.shuffle(classes);
  // Guard against 0.8 * 100 = 80.00000000000001 style ceil overshoot.
  const double raw = known_fraction * base.num_classes;
  auto n_known = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  n_known = std::clamp<std::size_t>(n_known, 1, classes.size());

  DatasetSplit out = base;
  out.known_classes.assign(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(n_known));
  std::sort(out.known_classes.begin(), out.known_classes.end());
  out.labeling_ratio = labeling_ratio;

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    auto& m = out.samples[i];
    m.is_labeled = false;
    m.is_known_class = m.class_label && out.is_known(*m.class_label);
    if (m.is_known_class) by_class[*m.class_label].push_back(i);
  }
  for (auto& [cls, items] : by_class) {
    rng.shuffle(items);
    const std::size_t n_lab =
        std::min(items.size(), round_half_up(labeling_ratio * static_cast<double>(items.size())));
    for (std::size_t r = 0; r < n_lab; ++r) out.samples[items[r]].is_labeled = true;
  }
  return out;
}

}  // namespace gncd
