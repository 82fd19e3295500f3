#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "gncd/matrix.hpp"

namespace gncd {

struct SampleMeta {
  std::size_t id = 0;
  // Ground-truth class when known. Training code must only read it through
  // visible_label(); evaluation code may read it directly.
  std::optional<int> class_label;
  bool is_labeled = false;
  bool is_known_class = false;
  // Samples sharing a view_group are augmented views of one item.
  std::size_t view_group = 0;

  std::optional<int> visible_label() const {
    return is_labeled ? class_label : std::nullopt;
  }
  bool operator==(const SampleMeta&) const = default;
};

struct DatasetSplit {
  int num_classes = 0;
  std::vector<int> known_classes;  // sorted ascending
  double labeling_ratio = 0.0;
  std::vector<SampleMeta> samples;
  EmbeddingTable base_vectors;  // one row per item, row i <-> samples[i]

  bool is_known(int cls) const;
  std::size_t num_labeled() const;
};

struct SynthParams {
  int num_classes = 10;
  std::size_t dim = 16;
  std::size_t samples_per_class = 200;
  double class_separation = 0.3;  // minimum pairwise cosine distance of means
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
  std::size_t max_attempts = 10000;  // rejection attempts per class mean
};

// Synthetic class mixture on the unit sphere. All samples come back
// unlabeled with every class treated as known until split_gncd is applied.
DatasetSplit synth_gen(const SynthParams& params);

// The class means synth_gen would draw for these parameters.
EmbeddingTable synth_class_means(const SynthParams& params);

// Chooses ceil(known_fraction * |C|) known classes after a seeded shuffle and
// labels round-half-up(labeling_ratio * n_class) items of each.
DatasetSplit split_gncd(const DatasetSplit& base, double known_fraction,
                        double labeling_ratio, std::uint64_t seed);

// round-half-up, computed so that x.5 always rounds away from zero for x >= 0.
std::size_t round_half_up(double x);

}  // namespace gncd
