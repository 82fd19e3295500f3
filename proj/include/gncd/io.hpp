#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "gncd/data.hpp"
#include "gncd/matrix.hpp"

namespace gncd::io {

// Embedding file: one JSON header line {"n":N,"d":D,"dtype":"f32le"}
// followed by N*D little-endian float32 values, row-major.
struct ReadStats {
  std::size_t renormalized_rows = 0;
};

void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);
EmbeddingTable read_embeddings(const std::filesystem::path& path, ReadStats* stats = nullptr);

// `id,class,labeled`; the class field is empty for unlabeled rows.
void write_splits(const std::vector<SampleMeta>& samples, const std::filesystem::path& path);
std::vector<SampleMeta> read_splits(const std::filesystem::path& path);

// `id,class,known`; ground truth for evaluation.
void write_truth(const std::vector<SampleMeta>& samples, const std::filesystem::path& path);
// Fills class_label / is_known_class of `samples` from a truth file.
void merge_truth(std::vector<SampleMeta>& samples, const std::filesystem::path& path);

}  // namespace gncd::io
