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

// Cross-modality cosine scores, class prompt embeddings, and propagation of
// scores and labels across a label hierarchy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vlmeval/error.hpp"
#include "vlmeval/hierarchy.hpp"
#include "vlmeval/parallel.hpp"
#include "vlmeval/tensor_store.hpp"

namespace vlmeval {

// ---------------------------------------------------------------------------
// Prompt templates

class PromptTemplateSet {
 public:
  PromptTemplateSet() : templates_{"a photo of a {}"} {}
  explicit PromptTemplateSet(std::vector<std::string> templates) : templates_(std::move(templates)) {
    if (templates_.empty()) fail(Errc::kBadTemplate, "template set is empty");
    for (const auto& t : templates_) {
      const auto first = t.find("{}");
      if (first == std::string::npos || t.find("{}", first + 2) != std::string::npos) {
        fail(Errc::kBadTemplate, "template must contain exactly one {}: '" + t + "'");
      }
    }
  }

  const std::vector<std::string>& templates() const { return templates_; }
  std::size_t size() const { return templates_.size(); }

  std::string fill(std::size_t t, std::string_view name) const {
    const auto& tpl = templates_.at(t);
    const auto at = tpl.find("{}");
    return tpl.substr(0, at) + std::string(name) + tpl.substr(at + 2);
  }

 private:
  std::vector<std::string> templates_;
};

/// One template per line; blank lines skipped.
inline PromptTemplateSet read_templates(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::kIoFailure, "cannot open templates " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return PromptTemplateSet(std::move(out));
}

// ---------------------------------------------------------------------------
// Vector helpers

inline double norm2(std::span<const float> v) {
  double s = 0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

inline double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

/// Returns false (leaving v untouched) when the norm is zero.
inline bool normalize(std::span<float> v) {
  const double n = norm2(v);
  if (!(n > 0)) return false;
  for (float& x : v) x = static_cast<float>(x / n);
  return true;
}

inline void normalize_rows(EmbeddingMatrix& m) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    if (!normalize(m.row(i))) fail(Errc::kZeroNormRow, "row " + std::to_string(i) + " ('" + m.keys[i] + "')");
  }
}

// ---------------------------------------------------------------------------
// Cosine scores

/// scores(i, j) = cos(img_i, txt_j), clamped to [-1, 1]. Rows are computed
/// independently, so any thread count gives identical output.
inline ScoreMatrix cosine_scores(const EmbeddingMatrix& img, const EmbeddingMatrix& txt, unsigned threads = 1) {
  if (img.dim != txt.dim) {
    fail(Errc::kDimMismatch, "image dim " + std::to_string(img.dim) + " vs text dim " + std::to_string(txt.dim));
  }
  std::vector<double> img_norm(img.rows), txt_norm(txt.rows);
  for (std::size_t i = 0; i < img.rows; ++i) {
    img_norm[i] = norm2(img.row(i));
    if (!(img_norm[i] > 0)) fail(Errc::kZeroNormRow, "image row " + std::to_string(i));
  }
  for (std::size_t j = 0; j < txt.rows; ++j) {
    txt_norm[j] = norm2(txt.row(j));
    if (!(txt_norm[j] > 0)) fail(Errc::kZeroNormRow, "text row " + std::to_string(j));
  }
  ScoreMatrix out(img.rows, txt.rows);
  out.image_keys = img.keys;
  out.text_keys = txt.keys;
  parallel_for(img.rows, threads, [&](std::size_t i) {
    const auto a = img.row(i);
    for (std::size_t j = 0; j < txt.rows; ++j) {
      const double c = dot(a, txt.row(j)) / (img_norm[i] * txt_norm[j]);
      out.at(i, j) = static_cast<float>(std::clamp(c, -1.0, 1.0));
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Class prompt embeddings

/// Prompt embedding table: one unit-norm row per class, keyed by class id.
struct ClassEmbeddingTable {
  EmbeddingMatrix matrix;

  const std::vector<LabelId>& class_ids() const { return matrix.keys; }
  std::size_t size() const { return matrix.rows; }

  void check_unit_norm(double tol = 1e-5) const {
    for (std::size_t i = 0; i < matrix.rows; ++i) {
      const double n = norm2(matrix.row(i));
      if (std::abs(n - 1.0) > tol) {
        fail(Errc::kInvariantViolation, "class row '" + matrix.keys[i] + "' has norm " + std::to_string(n));
      }
    }
  }
};

/// Arithmetic mean of the rows, optionally renormalized to unit length.
inline std::vector<float> mean_embedding(const EmbeddingMatrix& rows, std::span<const std::size_t> which,
                                         bool renormalize = true) {
  if (which.empty()) fail(Errc::kEmpty, "no rows to average");
  std::vector<double> acc(rows.dim, 0.0);
  for (std::size_t r : which) {
    const auto v = rows.row(r);
    for (std::size_t d = 0; d < rows.dim; ++d) acc[d] += v[d];
  }
  std::vector<float> out(rows.dim);
  double sq = 0;
  for (std::size_t d = 0; d < rows.dim; ++d) {
    acc[d] /= static_cast<double>(which.size());
    sq += acc[d] * acc[d];
  }
  if (!(std::sqrt(sq) > 1e-12)) fail(Errc::kZeroNormMean, "rows cancel to a zero mean");
  const double scale = renormalize ? 1.0 / std::sqrt(sq) : 1.0;
  for (std::size_t d = 0; d < rows.dim; ++d) out[d] = static_cast<float>(acc[d] * scale);
  return out;
}

/// Template ensembling for one class: mean of the per-template rows, then
/// renormalized.
inline std::vector<float> class_embedding(const EmbeddingMatrix& per_template) {
  std::vector<std::size_t> all(per_template.rows);
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return mean_embedding(per_template, all, true);
}

/// Groups rows keyed `class_id#template_index` by class id (first-seen order)
/// and ensembles each group.
inline ClassEmbeddingTable ensemble_table(const EmbeddingMatrix& per_template, bool renormalize = true) {
  std::vector<LabelId> order;
  std::map<LabelId, std::vector<std::size_t>> groups;
  for (std::size_t r = 0; r < per_template.rows; ++r) {
    const auto& key = per_template.keys[r];
    const auto hash = key.rfind('#');
    const LabelId cls = hash == std::string::npos ? key : key.substr(0, hash);
    auto [it, inserted] = groups.try_emplace(cls);
    if (inserted) order.push_back(cls);
    it->second.push_back(r);
  }
  ClassEmbeddingTable table{EmbeddingMatrix(order.size(), per_template.dim)};
  for (std::size_t c = 0; c < order.size(); ++c) {
    table.matrix.keys[c] = order[c];
    const auto row = mean_embedding(per_template, groups[order[c]], renormalize);
    std::copy(row.begin(), row.end(), table.matrix.row(c).begin());
  }
  return table;
}

/// Prompt strings to embed for each class and template, keyed
/// `class_id#template_index`.
inline std::vector<std::pair<std::string, std::string>> class_prompt_manifest(
    const std::vector<LabelId>& classes, const std::map<LabelId, std::string>& names,
    const PromptTemplateSet& templates) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& c : classes) {
    auto it = names.find(c);
    const std::string& name = it == names.end() ? c : it->second;
    for (std::size_t t = 0; t < templates.size(); ++t) {
      out.emplace_back(c + "#" + std::to_string(t), templates.fill(t, name));
    }
  }
  return out;
}

/// CG prompt embedding as the mean of its FG children's prompt embeddings.
/// `renormalize = false` keeps the plain mean.
inline ClassEmbeddingTable cg_embedding_from_fg(const TwoLevelMap& map, const ClassEmbeddingTable& fg_table,
                                                bool renormalize = true) {
  const KeyIndex fg_index(fg_table.class_ids());
  ClassEmbeddingTable out{EmbeddingMatrix(map.cg_classes.size(), fg_table.matrix.dim)};
  for (std::size_t c = 0; c < map.cg_classes.size(); ++c) {
    const auto& cg = map.cg_classes[c];
    std::vector<std::size_t> rows;
    for (const auto& fg : map.fg_children.at(cg)) {
      auto r = fg_index.find(fg);
      if (!r) fail(Errc::kMissingFgEmbedding, "no prompt embedding for fg '" + fg + "'");
      rows.push_back(*r);
    }
    if (rows.empty()) fail(Errc::kMissingFgEmbedding, "cg '" + cg + "' has no fg children");
    const auto row = mean_embedding(fg_table.matrix, rows, renormalize);
    std::copy(row.begin(), row.end(), out.matrix.row(c).begin());
    out.matrix.keys[c] = cg;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Propagation

enum class Strategy { kRaw, kChild, kLeaf, kLeafSelf, kFgLabel, kFgEmb };

constexpr std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kRaw: return "raw";
    case Strategy::kChild: return "child";
    case Strategy::kLeaf: return "leaf";
    case Strategy::kLeafSelf: return "leaf_self";
    case Strategy::kFgLabel: return "fg_label";
    case Strategy::kFgEmb: return "fg_emb";
  }
  return "?";
}

struct PropagationResult {
  Strategy strategy = Strategy::kRaw;
  ScoreMatrix scores;                   // score-valued strategies
  std::vector<LabelId> labels;          // label-valued strategies, one per image
  std::vector<std::size_t> fg_argmax;   // kFgLabel: winning FG column per image
};

namespace detail {

/// Hierarchy node -> score column, or MissingClassColumn.
inline std::vector<std::size_t> node_columns(const ScoreMatrix& s, const Hierarchy& h) {
  const KeyIndex cols(s.text_keys);
  std::vector<std::size_t> out(h.size());
  for (std::size_t n = 0; n < h.size(); ++n) {
    auto c = cols.find(h.id(n));
    if (!c) fail(Errc::kMissingClassColumn, "no score column for '" + h.id(n) + "'");
    out[n] = *c;
  }
  return out;
}

}  // namespace detail

/// Score propagation over every hierarchy node. Output keeps the input shape;
/// columns that are not hierarchy nodes pass through unchanged.
///   child:     max over direct children of raw; leaves keep raw
///   leaf:      max over direct children of leaf; leaves keep raw
///   leaf_self: max(raw, max over direct children of leaf_self)
inline PropagationResult propagate(const ScoreMatrix& s, const Hierarchy& h, Strategy strategy,
                                   unsigned threads = 1) {
  if (strategy == Strategy::kFgLabel || strategy == Strategy::kFgEmb) {
    fail(Errc::kInvalidArgument, "propagate() handles raw/child/leaf/leaf_self only");
  }
  const auto col = detail::node_columns(s, h);
  PropagationResult res;
  res.strategy = strategy;
  res.scores = s;
  if (strategy == Strategy::kRaw) return res;
  const auto& topo = h.topological_order();
  parallel_for(s.n_images, threads, [&](std::size_t i) {
    const auto raw = s.row(i);
    std::vector<float> val(h.size());
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      const std::size_t n = *it;
      const auto& kids = h.children(n);
      float v = raw[col[n]];
      if (!kids.empty()) {
        float best = -std::numeric_limits<float>::infinity();
        for (std::size_t k : kids) {
          const float kv = strategy == Strategy::kChild ? raw[col[k]] : val[k];
          best = std::max(best, kv);
        }
        v = strategy == Strategy::kLeafSelf ? std::max(best, v) : best;
      }
      val[n] = v;
    }
    for (std::size_t n = 0; n < h.size(); ++n) res.scores.at(i, col[n]) = val[n];
  });
  return res;
}

inline PropagationResult propagate_child(const ScoreMatrix& s, const Hierarchy& h, unsigned threads = 1) {
  return propagate(s, h, Strategy::kChild, threads);
}
inline PropagationResult propagate_leaf(const ScoreMatrix& s, const Hierarchy& h, unsigned threads = 1) {
  return propagate(s, h, Strategy::kLeaf, threads);
}
inline PropagationResult propagate_leaf_self(const ScoreMatrix& s, const Hierarchy& h, unsigned threads = 1) {
  return propagate(s, h, Strategy::kLeafSelf, threads);
}

/// Column of the row maximum; ties go to the lowest column index.
inline std::size_t argmax(std::span<const float> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

inline std::vector<LabelId> predict(const ScoreMatrix& s) {
  if (s.n_texts == 0) fail(Errc::kEmpty, "score matrix has no class columns");
  std::vector<LabelId> out(s.n_images);
  for (std::size_t i = 0; i < s.n_images; ++i) out[i] = s.text_keys[argmax(s.row(i))];
  return out;
}

/// FG argmax per image (restricted to the map's FG classes), relabelled with
/// the winning FG class's CG parent.
inline PropagationResult propagate_labels_two_level(const ScoreMatrix& fg_scores, const TwoLevelMap& map) {
  const auto parent = map.fg_parent();
  std::vector<std::size_t> cols;
  std::vector<LabelId> col_parent;
  for (std::size_t j = 0; j < fg_scores.n_texts; ++j) {
    auto it = parent.find(fg_scores.text_keys[j]);
    if (it == parent.end()) continue;
    cols.push_back(j);
    col_parent.push_back(it->second);
  }
  if (cols.size() != parent.size()) {
    const KeyIndex present(fg_scores.text_keys);
    for (const auto& [fg, cg] : parent) {
      if (!present.contains(fg)) fail(Errc::kMissingClassColumn, "no score column for fg '" + fg + "'");
    }
  }
  PropagationResult res;
  res.strategy = Strategy::kFgLabel;
  res.labels.resize(fg_scores.n_images);
  res.fg_argmax.resize(fg_scores.n_images);
  for (std::size_t i = 0; i < fg_scores.n_images; ++i) {
    const auto row = fg_scores.row(i);
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols.size(); ++c) {
      if (row[cols[c]] > row[cols[best]]) best = c;
    }
    res.fg_argmax[i] = cols[best];
    res.labels[i] = col_parent[best];
  }
  return res;
}

}  // namespace vlmeval
