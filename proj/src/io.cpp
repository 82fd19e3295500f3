#include "gncd/io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "gncd/error.hpp"

namespace gncd {

const char* to_string(IoErrorKind kind) {
  switch (kind) {
    case IoErrorKind::kOpen: return "open failed";
    case IoErrorKind::kBadHeader: return "bad header";
    case IoErrorKind::kTruncated: return "truncated payload";
    case IoErrorKind::kSizeMismatch: return "header/payload size mismatch";
    case IoErrorKind::kNonFinite: return "non-finite value";
    case IoErrorKind::kNonNormalizable: return "non-normalizable row";
    case IoErrorKind::kBadCsv: return "malformed csv";
  }
  return "io error";
}

namespace io {
namespace {

constexpr double kUnitTolerance = 1e-4;

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big)
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  return v;
}

std::ofstream open_out(const std::filesystem::path& path, bool binary) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw IoError(IoErrorKind::kOpen, path.string());
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

long parse_int(const std::string& s, const std::filesystem::path& path, std::size_t line) {
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError(IoErrorKind::kBadCsv,
                  path.string() + ":" + std::to_string(line) + ": not an integer '" + s + "'");
  }
}

template <typename RowFn>
void for_each_csv_row(const std::filesystem::path& path, const std::string& expected_header,
                      RowFn fn) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorKind::kOpen, path.string());
  std::string line;
  if (!std::getline(in, line) || split_csv(line) != split_csv(expected_header))
    throw IoError(IoErrorKind::kBadCsv, path.string() + ": expected header '" + expected_header + "'");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv(line);
    if (fields.size() != 3)
      throw IoError(IoErrorKind::kBadCsv,
                    path.string() + ":" + std::to_string(lineno) + ": expected 3 fields");
    fn(fields, lineno);
  }
}

}  // namespace

void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
  auto out = open_out(path, true);
  out << "{\"n\":" << table.rows() << ",\"d\":" << table.cols() << ",\"dtype\":\"f32le\"}\n";
  std::vector<std::uint32_t> buf(table.data().size());
  for (std::size_t i = 0; i < buf.size(); ++i)
    buf[i] = to_le(std::bit_cast<std::uint32_t>(static_cast<float>(table.data()[i])));
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(std::uint32_t)));
  if (!out) throw IoError(IoErrorKind::kOpen, "write failed: " + path.string());
}

EmbeddingTable read_embeddings(const std::filesystem::path& path, ReadStats* stats) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorKind::kOpen, path.string());
  std::string header;
  if (!std::getline(in, header)) throw IoError(IoErrorKind::kBadHeader, path.string() + ": empty file");

  std::size_t n = 0, d = 0;
  try {
    const auto j = nlohmann::json::parse(header);
    if (j.at("dtype").get<std::string>() != "f32le")
      throw IoError(IoErrorKind::kBadHeader, path.string() + ": unsupported dtype");
    n = j.at("n").get<std::size_t>();
    d = j.at("d").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoErrorKind::kBadHeader, path.string() + ": " + e.what());
  }

  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (payload.size() % sizeof(float) != 0)
    throw IoError(IoErrorKind::kTruncated,
                  path.string() + ": payload of " + std::to_string(payload.size()) +
                      " bytes is not a whole number of float32 values");
  const std::size_t count = payload.size() / sizeof(float);
  if (count != n * d)
    throw IoError(IoErrorKind::kSizeMismatch, path.string() + ": header declares " +
                                                  std::to_string(n * d) + " values, payload has " +
                                                  std::to_string(count));

  EmbeddingTable table(n, d);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t raw;
    std::memcpy(&raw, payload.data() + i * sizeof(raw), sizeof(raw));
    const float v = std::bit_cast<float>(to_le(raw));
    if (!std::isfinite(v))
      throw IoError(IoErrorKind::kNonFinite, path.string() + ": value " + std::to_string(i) +
                                                 " (row " + std::to_string(i / std::max<std::size_t>(d, 1)) + ")");
    table.data()[i] = static_cast<double>(v);
  }
  for (std::size_t r = 0; r < n; ++r) {
    const double nr = norm(table.row(r));
    if (nr == 0.0)
      throw IoError(IoErrorKind::kNonNormalizable, path.string() + ": row " + std::to_string(r) + " is zero");
    if (std::abs(nr - 1.0) > kUnitTolerance) {
      normalize(table.row(r));
      if (stats) ++stats->renormalized_rows;
    }
  }
  return table;
}

void write_splits(const std::vector<SampleMeta>& samples, const std::filesystem::path& path) {
  auto out = open_out(path, false);
  out << "id,class,labeled\n";
  for (const auto& m : samples) {
    out << m.id << ',';
    if (m.is_labeled && m.class_label) out << *m.class_label;
    out << ',' << (m.is_labeled ? 1 : 0) << '\n';
  }
}

std::vector<SampleMeta> read_splits(const std::filesystem::path& path) {
  std::vector<SampleMeta> out;
  for_each_csv_row(path, "id,class,labeled", [&](const auto& f, std::size_t line) {
    SampleMeta m;
    m.id = static_cast<std::size_t>(parse_int(f[0], path, line));
    m.view_group = m.id;
    m.is_labeled = parse_int(f[2], path, line) != 0;
    if (!f[1].empty()) m.class_label = static_cast<int>(parse_int(f[1], path, line));
    if (m.is_labeled && !m.class_label)
      throw IoError(IoErrorKind::kBadCsv,
                    path.string() + ":" + std::to_string(line) + ": labeled row without class");
    m.is_known_class = m.is_labeled;
    out.push_back(m);
  });
  return out;
}

void write_truth(const std::vector<SampleMeta>& samples, const std::filesystem::path& path) {
  auto out = open_out(path, false);
  out << "id,class,known\n";
  for (const auto& m : samples) {
    out << m.id << ',';
    if (m.class_label) out << *m.class_label;
    out << ',' << (m.is_known_class ? 1 : 0) << '\n';
  }
}

void merge_truth(std::vector<SampleMeta>& samples, const std::filesystem::path& path) {
  std::size_t row = 0;
  for_each_csv_row(path, "id,class,known", [&](const auto& f, std::size_t line) {
    if (row >= samples.size())
      throw IoError(IoErrorKind::kBadCsv, path.string() + ": more rows than samples");
    auto& m = samples[row++];
    if (static_cast<std::size_t>(parse_int(f[0], path, line)) != m.id)
      throw IoError(IoErrorKind::kBadCsv,
                    path.string() + ":" + std::to_string(line) + ": id out of order");
    if (!f[1].empty()) {
      const int cls = static_cast<int>(parse_int(f[1], path, line));
      if (m.is_labeled && m.class_label && *m.class_label != cls)
        throw IoError(IoErrorKind::kBadCsv,
                      path.string() + ":" + std::to_string(line) + ": truth disagrees with split label");
      m.class_label = cls;
    }
    m.is_known_class = parse_int(f[2], path, line) != 0;
  });
  if (row != samples.size())
    throw IoError(IoErrorKind::kBadCsv, path.string() + ": fewer rows than samples");
}

}  // namespace io
}  // namespace gncd
