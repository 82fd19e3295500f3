#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "gncd/data.hpp"
#include "gncd/matrix.hpp"

namespace gncd {

enum class Stream { kClass, kPrompt };
const char* to_string(Stream s);

// Fixed-capacity FIFO ring of teacher embeddings together with the metadata
// of the sample each one came from.
class MemoryBank {
 public:
  MemoryBank(std::size_t capacity, Stream stream, std::size_t dim = 0);

  // Appends rows in order, evicting the oldest entries beyond capacity.
  void enqueue(const EmbeddingTable& embeddings, const std::vector<SampleMeta>& meta);

  std::size_t size() const { return count_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  bool empty() const { return count_ == 0; }
  Stream stream() const { return stream_; }

  // Contents ordered oldest -> newest.
  EmbeddingTable embeddings() const;
  std::vector<SampleMeta> meta() const;

  void clear();

 private:
  std::size_t slot(std::size_t age) const { return (head_ + age) % capacity_; }

  std::size_t capacity_;
  Stream stream_;
  std::size_t dim_;
  Matrix ring_;
  std::vector<SampleMeta> ring_meta_;
  std::size_t head_ = 0;  // slot of the oldest entry
  std::size_t count_ = 0;
};

// Node set of the sampled sub-graph: current-batch teacher embeddings first,
// then the memory contents oldest -> newest.
struct SubGraphNodes {
  EmbeddingTable nodes;
  std::vector<SampleMeta> meta;
  std::size_t batch_begin = 0;
  std::size_t batch_end = 0;

  std::size_t size() const { return nodes.rows(); }
  std::size_t batch_size() const { return batch_end - batch_begin; }
};

SubGraphNodes subgraph_nodes(const MemoryBank& bank, const EmbeddingTable& batch_teacher,
                             const std::vector<SampleMeta>& batch_meta);

}  // namespace gncd
