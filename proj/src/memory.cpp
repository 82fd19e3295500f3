#include "gncd/memory.hpp"

#include <algorithm>
#include <stdexcept>

namespace gncd {

const char* to_string(Stream s) { return s == Stream::kClass ? "class" : "prompt"; }

MemoryBank::MemoryBank(std::size_t capacity, Stream stream, std::size_t dim)
    : capacity_(capacity), stream_(stream), dim_(dim) {
  if (capacity == 0) throw std::invalid_argument("MemoryBank: capacity must be > 0");
  ring_meta_.resize(capacity);
  if (dim_ > 0) ring_ = Matrix(capacity_, dim_);
}

void MemoryBank::enqueue(const EmbeddingTable& embeddings, const std::vector<SampleMeta>& meta) {
  if (embeddings.rows() != meta.size())
    throw std::invalid_argument("MemoryBank::enqueue: embeddings/meta length mismatch");
  if (embeddings.rows() == 0) return;
  if (dim_ == 0) {
    dim_ = embeddings.cols();
    ring_ = Matrix(capacity_, dim_);
  }
  if (embeddings.cols() != dim_)
    throw std::invalid_argument("MemoryBank::enqueue: dimension " + std::to_string(embeddings.cols()) +
                                " does not match bank dimension " + std::to_string(dim_));
  for (std::size_t r = 0; r < embeddings.rows(); ++r) {
    std::size_t dst;
    if (count_ < capacity_) {
      dst = slot(count_);
      ++count_;
    } else {
      dst = head_;
      head_ = (head_ + 1) % capacity_;
    }
    auto src = embeddings.row(r);
    std::copy(src.begin(), src.end(), ring_.row(dst).begin());
    ring_meta_[dst] = meta[r];
  }
}

EmbeddingTable MemoryBank::embeddings() const {
  EmbeddingTable out(count_, dim_);
  for (std::size_t a = 0; a < count_; ++a) {
    auto src = ring_.row(slot(a));
    std::copy(src.begin(), src.end(), out.row(a).begin());
  }
  return out;
}

std::vector<SampleMeta> MemoryBank::meta() const {
  std::vector<SampleMeta> out;
  out.reserve(count_);
  for (std::size_t a = 0; a < count_; ++a) out.push_back(ring_meta_[slot(a)]);
  return out;
}

void MemoryBank::clear() {
  head_ = 0;
  count_ = 0;
}

SubGraphNodes subgraph_nodes(const MemoryBank& bank, const EmbeddingTable& batch_teacher,
                             const std::vector<SampleMeta>& batch_meta) {
  if (batch_teacher.rows() != batch_meta.size())
    throw std::invalid_argument("subgraph_nodes: batch embeddings/meta length mismatch");
  if (bank.empty() && batch_teacher.rows() == 0)
    throw std::invalid_argument("subgraph_nodes: both memory and batch are empty");
  const std::size_t dim = batch_teacher.rows() > 0 ? batch_teacher.cols() : bank.dim();
  if (!bank.empty() && batch_teacher.rows() > 0 && bank.dim() != dim)
    throw std::invalid_argument("subgraph_nodes: memory and batch dimensions differ");

  SubGraphNodes out;
  out.batch_begin = 0;
  out.batch_end = batch_teacher.rows();
  out.nodes = EmbeddingTable(batch_teacher.rows() + bank.size(), dim);
  std::copy(batch_teacher.data().begin(), batch_teacher.data().end(), out.nodes.data().begin());
  const EmbeddingTable mem = bank.embeddings();
  std::copy(mem.data().begin(), mem.data().end(),
            out.nodes.data().begin() + static_cast<std::ptrdiff_t>(batch_teacher.data().size()));
  out.meta = batch_meta;
  const auto mem_meta = bank.meta();
  out.meta.insert(out.meta.end(), mem_meta.begin(), mem_meta.end());
  return out;
}

}  // namespace gncd
