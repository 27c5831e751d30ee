// Copyright 2026 The vlmeval Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Embedding and score matrices in the VLEB binary format, plus the
// line-delimited JSON image records.
//
// VLEB layout (all integers little-endian):
//   "VLEB" | u32 version=1 | u32 dtype=0 (f32) | u64 rows | u64 cols |
//   u64 key_block_bytes | key block | rows*cols f32, row-major
// The key block is a sequence of (u32 length, UTF-8 bytes) entries. An
// embedding matrix stores `rows` keys; a score matrix stores `rows` image keys
// followed by `cols` text keys.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <istream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "vlmeval/error.hpp"
#include "vlmeval/hierarchy.hpp"

namespace vlmeval {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::uint32_t kDtypeF32 = 0;
inline constexpr std::size_t kHeaderBytes = 36;

/// Key -> row position for O(1) lookups by id.
class KeyIndex {
 public:
  KeyIndex() = default;
  explicit KeyIndex(const std::vector<std::string>& keys) {
    map_.reserve(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) {
      if (!map_.emplace(keys[i], i).second) fail(Errc::kDuplicateKey, "duplicate key '" + keys[i] + "'");
    }
  }
  std::optional<std::size_t> find(const std::string& key) const {
    auto it = map_.find(key);
    if (it == map_.end()) return std::nullopt;
    return it->second;
  }
  bool contains(const std::string& key) const { return map_.contains(key); }

 private:
  std::unordered_map<std::string, std::size_t> map_;
};

struct EmbeddingMatrix {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<float> data;
  std::vector<std::string> keys;

  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t r, std::size_t d) : rows(r), dim(d), data(r * d, 0.0f), keys(r) {}

  std::span<const float> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
  std::span<float> row(std::size_t i) { return {data.data() + i * dim, dim}; }

  void validate() const {
    check_invariant(data.size() == rows * dim, "embedding data length != rows*dim");
    check_invariant(keys.size() == rows, "embedding key count != rows");
    KeyIndex{keys};
  }
  bool operator==(const EmbeddingMatrix&) const = default;
};

struct ScoreMatrix {
  std::size_t n_images = 0;
  std::size_t n_texts = 0;
  std::vector<float> data;
  std::vector<std::string> image_keys;
  std::vector<std::string> text_keys;

  ScoreMatrix() = default;
  ScoreMatrix(std::size_t ni, std::size_t nt)
      : n_images(ni), n_texts(nt), data(ni * nt, 0.0f), image_keys(ni), text_keys(nt) {}

  float at(std::size_t i, std::size_t j) const { return data[i * n_texts + j]; }
  float& at(std::size_t i, std::size_t j) { return data[i * n_texts + j]; }
  std::span<const float> row(std::size_t i) const { return {data.data() + i * n_texts, n_texts}; }

  void validate() const {
    check_invariant(data.size() == n_images * n_texts, "score data length != n_images*n_texts");
    check_invariant(image_keys.size() == n_images && text_keys.size() == n_texts,
                    "score key counts do not match shape");
    KeyIndex{image_keys};
    KeyIndex{text_keys};
  }
  bool operator==(const ScoreMatrix&) const = default;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::string encode(std::size_t rows, std::size_t cols, const std::vector<float>& data,
                          const std::vector<const std::vector<std::string>*>& key_lists) {
  std::string keys;
  for (const auto* list : key_lists) {
    for (const auto& k : *list) {
      if (k.size() > std::numeric_limits<std::uint32_t>::max()) fail(Errc::kShapeOverflow, "key too long");
      put_u32(keys, static_cast<std::uint32_t>(k.size()));
      keys += k;
    }
  }
  std::string out;
  out.reserve(kHeaderBytes + keys.size() + data.size() * 4);
  out += "VLEB";
  put_u32(out, kFormatVersion);
  put_u32(out, kDtypeF32);
  put_u64(out, rows);
  put_u64(out, cols);
  put_u64(out, keys.size());
  out += keys;
  for (float f : data) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      fail(Errc::kTruncatedFile, path_ + ": need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_));
    }
  }
  const std::string& bytes_;
  const std::string& path_;
  std::size_t pos_ = 0;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::kIoFailure, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::kIoFailure, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(Errc::kIoFailure, "short write to " + path);
}

}  // namespace detail

inline std::string encode_matrix(const EmbeddingMatrix& m) {
  m.validate();
  return detail::encode(m.rows, m.dim, m.data, {&m.keys});
}
inline std::string encode_matrix(const ScoreMatrix& m) {
  m.validate();
  return detail::encode(m.n_images, m.n_texts, m.data, {&m.image_keys, &m.text_keys});
}

inline void write_matrix(const EmbeddingMatrix& m, const std::string& path) {
  detail::spit(path, encode_matrix(m));
}
inline void write_matrix(const ScoreMatrix& m, const std::string& path) {
  detail::spit(path, encode_matrix(m));
}

using AnyMatrix = std::variant<EmbeddingMatrix, ScoreMatrix>;

/// Parses VLEB bytes. The number of keys in the key block decides the kind:
/// `rows` keys -> embedding, `rows + cols` keys -> score matrix.
inline AnyMatrix decode_matrix(const std::string& bytes, const std::string& path = "<memory>") {
  detail::ByteReader rd(bytes, path);
  if (bytes.size() < 4 || bytes.compare(0, 4, "VLEB") != 0) fail(Errc::kBadMagic, path + ": not a VLEB file");
  rd.take(4);
  if (const auto v = rd.u32(); v != kFormatVersion) {
    fail(Errc::kUnsupportedVersion, path + ": version " + std::to_string(v));
  }
  if (const auto dt = rd.u32(); dt != kDtypeF32) {
    fail(Errc::kUnsupportedVersion, path + ": dtype " + std::to_string(dt));
  }
  const std::uint64_t rows = rd.u64();
  const std::uint64_t cols = rd.u64();
  const std::uint64_t key_bytes = rd.u64();
  constexpr std::uint64_t kMax = std::numeric_limits<std::uint64_t>::max();
  if (cols != 0 && rows > kMax / cols / 4) fail(Errc::kShapeOverflow, path + ": rows*cols overflows");
  const std::uint64_t payload = rows * cols * 4;
  if (key_bytes > rd.remaining()) fail(Errc::kTruncatedFile, path + ": key block exceeds file");
  if (payload > rd.remaining() - key_bytes) fail(Errc::kTruncatedFile, path + ": data block truncated");
  if (payload < rd.remaining() - key_bytes) fail(Errc::kParseError, path + ": trailing bytes after data");

  std::vector<std::string> keys;
  const std::size_t key_end = rd.pos() + key_bytes;
  while (rd.pos() < key_end) {
    const std::uint32_t len = rd.u32();
    if (rd.pos() + len > key_end) fail(Errc::kTruncatedFile, path + ": key entry crosses key block end");
    keys.push_back(rd.take(len));
  }
  std::vector<float> data(rows * cols);
  for (auto& f : data) f = std::bit_cast<float>(rd.u32());

  if (keys.size() == rows) {
    EmbeddingMatrix m;
    m.rows = rows;
    m.dim = cols;
    m.data = std::move(data);
    m.keys = std::move(keys);
    m.validate();
    return m;
  }
  if (keys.size() == rows + cols) {
    ScoreMatrix m;
    m.n_images = rows;
    m.n_texts = cols;
    m.data = std::move(data);
    m.image_keys.assign(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(rows));
    m.text_keys.assign(keys.begin() + static_cast<std::ptrdiff_t>(rows), keys.end());
    m.validate();
    return m;
  }
  fail(Errc::kParseError, path + ": key block holds " + std::to_string(keys.size()) +
                              " keys, expected rows or rows+cols");
}

inline AnyMatrix read_matrix(const std::string& path) { return decode_matrix(detail::slurp(path), path); }

inline EmbeddingMatrix read_embeddings(const std::string& path) {
  auto any = read_matrix(path);
  if (auto* m = std::get_if<EmbeddingMatrix>(&any)) return std::move(*m);
  fail(Errc::kParseError, path + ": expected an embedding matrix, found a score matrix");
}

inline ScoreMatrix read_scores(const std::string& path) {
  auto any = read_matrix(path);
  if (auto* m = std::get_if<ScoreMatrix>(&any)) return std::move(*m);
  fail(Errc::kParseError, path + ": expected a score matrix, found an embedding matrix");
}

// ---------------------------------------------------------------------------
// Image records

struct Box {
  LabelId label;
  double x = 0, y = 0, w = 0, h = 0;
  bool operator==(const Box&) const = default;
};

/// Byte range [begin, end) inside a caption.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const Span&) const = default;
};

struct ImageRecord {
  std::string image_id;
  double width = 0, height = 0;
  std::vector<LabelId> labels;  // record order, unique
  std::vector<Box> boxes;
  std::vector<std::string> captions;
  /// Optional pre-annotated entity spans, parallel to captions. When present
  /// for a caption they replace lexicon matching during perturbation.
  std::vector<std::vector<Span>> entity_spans;

  bool has_label(const LabelId& y) const {
    return std::find(labels.begin(), labels.end(), y) != labels.end();
  }
  bool operator==(const ImageRecord&) const = default;
};

inline void validate_record(const ImageRecord& r, const std::string& where) {
  if (r.image_id.empty()) fail(Errc::kParseError, where + ": empty image_id");
  if (!(r.width > 0) || !(r.height > 0)) fail(Errc::kParseError, where + ": width and height must be > 0");
  std::unordered_set<std::string> seen;
  for (const auto& l : r.labels) {
    if (l.empty() || !seen.insert(l).second) fail(Errc::kParseError, where + ": empty or repeated label '" + l + "'");
  }
  for (const auto& b : r.boxes) {
    if (!seen.contains(b.label)) fail(Errc::kLabelMissingForBox, where + ": box label '" + b.label + "' not in labels");
    if (b.w < 0 || b.h < 0 || b.x < 0 || b.y < 0 || b.x + b.w > r.width || b.y + b.h > r.height) {
      fail(Errc::kBoxOutOfBounds, where + ": box for '" + b.label + "' outside image");
    }
  }
  if (!r.entity_spans.empty() && r.entity_spans.size() != r.captions.size()) {
    fail(Errc::kParseError, where + ": entity_spans must parallel captions");
  }
  for (std::size_t c = 0; c < r.entity_spans.size(); ++c) {
    for (const auto& s : r.entity_spans[c]) {
      if (s.begin >= s.end || s.end > r.captions[c].size()) {
        fail(Errc::kParseError, where + ": entity span outside caption " + std::to_string(c));
      }
    }
  }
}

inline nlohmann::ordered_json record_to_json(const ImageRecord& r) {
  nlohmann::ordered_json j;
  j["image_id"] = r.image_id;
  j["width"] = r.width;
  j["height"] = r.height;
  j["labels"] = r.labels;
  auto boxes = nlohmann::ordered_json::array();
  for (const auto& b : r.boxes) {
    boxes.push_back({{"label", b.label}, {"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}});
  }
  j["boxes"] = std::move(boxes);
  j["captions"] = r.captions;
  if (!r.entity_spans.empty()) {
    auto spans = nlohmann::ordered_json::array();
    for (const auto& per : r.entity_spans) {
      auto list = nlohmann::ordered_json::array();
      for (const auto& s : per) list.push_back({s.begin, s.end});
      spans.push_back(std::move(list));
    }
    j["entity_spans"] = std::move(spans);
  }
  return j;
}

inline ImageRecord record_from_json(const nlohmann::json& j, const std::string& where) {
  ImageRecord r;
  try {
    r.image_id = j.at("image_id").get<std::string>();
    r.width = j.at("width").get<double>();
    r.height = j.at("height").get<double>();
    r.labels = j.at("labels").get<std::vector<std::string>>();
    for (const auto& b : j.value("boxes", nlohmann::json::array())) {
      r.boxes.push_back({b.at("label").get<std::string>(), b.at("x").get<double>(), b.at("y").get<double>(),
                         b.at("w").get<double>(), b.at("h").get<double>()});
    }
    r.captions = j.value("captions", std::vector<std::string>{});
    if (j.contains("entity_spans")) {
      for (const auto& per : j.at("entity_spans")) {
        std::vector<Span> spans;
        for (const auto& s : per) spans.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
        r.entity_spans.push_back(std::move(spans));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::kParseError, where + ": " + e.what());
  }
  validate_record(r, where);
  return r;
}

/// One JSON object per line; blank lines are skipped. Any bad line aborts the
/// whole read with its line number.
inline std::vector<ImageRecord> parse_records(std::istream& in, const std::string& path) {
  std::vector<ImageRecord> out;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(Errc::kParseError, where + ": " + e.what());
    }
    auto rec = record_from_json(j, where);
    if (!ids.insert(rec.image_id).second) fail(Errc::kDuplicateKey, where + ": duplicate image_id " + rec.image_id);
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<ImageRecord> read_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::kIoFailure, "cannot open records " + path);
  return parse_records(in, path);
}

inline void write_records(const std::vector<ImageRecord>& records, const std::string& path) {
  std::string out;
  for (const auto& r : records) out += record_to_json(r).dump() + "\n";
  detail::spit(path, out);
}

/// Succeeds iff the matrix rows are keyed by the record image ids, in order.
inline void check_alignment(const EmbeddingMatrix& m, const std::vector<ImageRecord>& records) {
  const std::size_t n = std::min(m.keys.size(), records.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (m.keys[i] != records[i].image_id) {
      fail(Errc::kKeyMismatch, "row " + std::to_string(i) + ": matrix key '" + m.keys[i] +
                                   "' vs record '" + records[i].image_id + "'");
    }
  }
  if (m.keys.size() != records.size()) {
    fail(Errc::kKeyMismatch, "row " + std::to_string(n) + ": matrix has " + std::to_string(m.keys.size()) +
                                 " rows, records " + std::to_string(records.size()));
  }
}

}  // namespace vlmeval
