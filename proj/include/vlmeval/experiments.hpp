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

// End-to-end evaluations shared by the CLI and the acceptance suite.

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "vlmeval/error.hpp"
#include "vlmeval/hierarchy.hpp"
#include "vlmeval/metrics.hpp"
#include "vlmeval/scoring.hpp"
#include "vlmeval/tensor_store.hpp"

namespace vlmeval {

// ---------------------------------------------------------------------------
// Two-level classification

struct TwoLevelResult {
  std::size_t images = 0;
  double fg_direct = 0;
  double cg_direct = 0;
  double cg_fg_label = 0;
  double cg_fg_emb = 0;
  double text_classification = 0;  // FG prompts -> nearest CG prompt
  double delta_label() const { return cg_fg_label - cg_direct; }
  double delta_emb() const { return cg_fg_emb - cg_direct; }
};

/// Gold FG class of a record: its single label that the map knows as FG.
inline LabelId gold_fg(const ImageRecord& rec, const std::map<LabelId, LabelId>& parent) {
  const LabelId* found = nullptr;
  for (const auto& y : rec.labels) {
    if (!parent.contains(y)) continue;
    if (found != nullptr) fail(Errc::kInvalidArgument, rec.image_id + " has more than one FG label");
    found = &y;
  }
  if (found == nullptr) fail(Errc::kUnknownLabel, rec.image_id + " has no FG label from the two-level map");
  return *found;
}

inline TwoLevelResult evaluate_two_level(const EmbeddingMatrix& images, const std::vector<ImageRecord>& records,
                                         const TwoLevelMap& map, const ClassEmbeddingTable& fg_table,
                                         const ClassEmbeddingTable& cg_table, bool renormalize = true,
                                         unsigned threads = 1) {
  check_alignment(images, records);
  const auto parent = map.fg_parent();
  std::vector<LabelId> gold_f, gold_c;
  for (const auto& rec : records) {
    gold_f.push_back(gold_fg(rec, parent));
    gold_c.push_back(parent.at(gold_f.back()));
  }

  TwoLevelResult out;
  out.images = records.size();
  const auto fg_scores = cosine_scores(images, fg_table.matrix, threads);
  out.fg_direct = top1_accuracy(predict(fg_scores), gold_f);
  out.cg_direct = top1_accuracy(predict(cosine_scores(images, cg_table.matrix, threads)), gold_c);
  out.cg_fg_label = top1_accuracy(propagate_labels_two_level(fg_scores, map).labels, gold_c);
  const auto cg_emb = cg_embedding_from_fg(map, fg_table, renormalize);
  out.cg_fg_emb = top1_accuracy(predict(cosine_scores(images, cg_emb.matrix, threads)), gold_c);
  out.text_classification = fg_to_cg_text_classification(fg_table, cg_table, map).accuracy;
  return out;
}

// ---------------------------------------------------------------------------
// Multi-level multi-label classification

struct MultilevelResult {
  MapResult leaves;
  /// Ancestor mAP per strategy: raw, child, leaf, leaf_self.
  std::vector<std::pair<Strategy, MapResult>> ancestors;
  /// Per-ancestor AP gap between leaf propagation and raw scores.
  std::map<LabelId, double> delta_leaf;

  const MapResult& ancestor(Strategy s) const {
    for (const auto& [k, v] : ancestors) {
      if (k == s) return v;
    }
    fail(Errc::kInvalidArgument, "strategy not evaluated");
  }
};

inline constexpr Strategy kMultilevelStrategies[] = {Strategy::kRaw, Strategy::kChild, Strategy::kLeaf,
                                                     Strategy::kLeafSelf};

/// Gold per score row: each record label plus every ancestor of it.
inline std::vector<std::set<LabelId>> closed_gold(const ScoreMatrix& s, const std::vector<ImageRecord>& records,
                                                  const Hierarchy& h) {
  std::map<std::string, const ImageRecord*> by_id;
  for (const auto& r : records) by_id[r.image_id] = &r;
  std::vector<std::set<LabelId>> gold(s.n_images);
  for (std::size_t i = 0; i < s.n_images; ++i) {
    auto it = by_id.find(s.image_keys[i]);
    if (it == by_id.end()) fail(Errc::kKeyMismatch, "no record for image '" + s.image_keys[i] + "'");
    for (const auto& y : it->second->labels) {
      auto n = h.find(y);
      if (!n) fail(Errc::kUnknownLabel, s.image_keys[i] + ": label '" + y + "' not in hierarchy");
      gold[i].insert(y);
      for (auto a : h.ancestors(*n)) gold[i].insert(h.id(a));
    }
  }
  return gold;
}

inline MultilevelResult evaluate_multilevel(const ScoreMatrix& s, const std::vector<ImageRecord>& records,
                                            const Hierarchy& h, unsigned threads = 1) {
  const auto gold = closed_gold(s, records, h);
  std::vector<LabelId> leaf_ids, anc_ids;
  for (auto n : h.leaves()) leaf_ids.push_back(h.id(n));
  for (auto n : h.ancestors_only()) anc_ids.push_back(h.id(n));

  MultilevelResult out;
  out.leaves = multilabel_map(s, gold, leaf_ids, threads);
  for (Strategy st : kMultilevelStrategies) {
    const auto prop = propagate(s, h, st, threads);
    out.ancestors.emplace_back(st, multilabel_map(prop.scores, gold, anc_ids, threads));
  }
  std::map<LabelId, double> raw_ap;
  for (const auto& c : out.ancestor(Strategy::kRaw).per_class) raw_ap[c.label] = c.ap;
  for (const auto& c : out.ancestor(Strategy::kLeaf).per_class) out.delta_leaf[c.label] = c.ap - raw_ap.at(c.label);
  return out;
}

}  // namespace vlmeval
