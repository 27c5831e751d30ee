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

// Concept-name frequencies in caption corpora and their gap between ancestor
// classes and leaf descendants.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vlmeval/error.hpp"
#include "vlmeval/hierarchy.hpp"
#include "vlmeval/metrics.hpp"
#include "vlmeval/parallel.hpp"
#include "vlmeval/text_match.hpp"

namespace vlmeval {

/// One caption file. `scope` names the leaf class whose retrieved images the
/// captions belong to; an empty scope means the shard counts for every class.
struct ShardEntry {
  std::string path;
  std::uint64_t caption_count = 0;
  std::string scope;
};

/// `path<TAB>caption_count[<TAB>scope_label]` per line; relative paths are
/// resolved against the manifest's directory.
inline std::vector<ShardEntry> read_shard_manifest(const std::string& path) {
  std::vector<ShardEntry> out;
  const auto base = std::filesystem::path(path).parent_path();
  detail::read_tsv(path, "shard manifest", [&](const std::vector<std::string>& f, const std::string& where) {
    if (f.size() < 2 || f.size() > 3 || f[0].empty()) {
      fail(Errc::kParseError, where + ": expected path<TAB>caption_count[<TAB>scope]");
    }
    ShardEntry e;
    auto p = std::filesystem::path(f[0]);
    e.path = p.is_absolute() ? p.string() : (base / p).string();
    try {
      std::size_t used = 0;
      e.caption_count = std::stoull(f[1], &used);
      if (used != f[1].size()) throw std::invalid_argument(f[1]);
    } catch (const std::exception&) {
      fail(Errc::kParseError, where + ": bad caption count '" + f[1] + "'");
    }
    if (f.size() == 3) e.scope = f[2];
    out.push_back(std::move(e));
  });
  return out;
}

/// Mention counts per (scope, lexicon label). A caption counts at most once
/// per label however many of the label's synonyms it contains.
struct MentionTable {
  std::vector<LabelId> labels;  // lexicon order
  std::map<std::string, std::vector<std::uint64_t>> by_scope;
  std::uint64_t captions = 0;

  std::vector<std::uint64_t>& scope(const std::string& s) {
    auto& v = by_scope[s];
    if (v.empty()) v.assign(labels.size(), 0);
    return v;
  }

  std::uint64_t mentions(std::size_t label_index, const std::set<std::string>& scopes) const {
    std::uint64_t total = 0;
    for (const auto& s : scopes) {
      auto it = by_scope.find(s);
      if (it != by_scope.end()) total += it->second[label_index];
    }
    return total;
  }

  /// Associative, commutative merge; counts are exact integers.
  void merge(const MentionTable& other) {
    check_invariant(labels == other.labels, "merging mention tables over different lexicons");
    captions += other.captions;
    for (const auto& [s, counts] : other.by_scope) {
      auto& dst = scope(s);
      for (std::size_t i = 0; i < counts.size(); ++i) dst[i] += counts[i];
    }
  }

  bool operator==(const MentionTable&) const = default;
};

/// Adds one caption's mentions to `counts`.
inline void count_caption(const LexiconMatcher& matcher, std::string_view caption, std::vector<std::uint64_t>& counts,
                          std::vector<std::uint32_t>& stamp, std::uint32_t caption_serial) {
  for (const auto& m : matcher.find_all(caption)) {
    for (std::size_t li : m.labels) {
      if (stamp[li] != caption_serial) {
        stamp[li] = caption_serial;
        ++counts[li];
      }
    }
  }
}

/// Mention counts over an in-memory list of captions (one scope).
inline MentionTable count_mentions(const std::vector<std::string>& captions, const Lexicon& lexicon,
                                   const std::string& scope = "") {
  if (lexicon.empty()) fail(Errc::kEmptyLexicon, "lexicon has no entries");
  const LexiconMatcher matcher(lexicon);
  MentionTable t;
  t.labels = lexicon.labels();
  auto& counts = t.scope(scope);
  std::vector<std::uint32_t> stamp(lexicon.size(), 0);
  std::uint32_t serial = 0;
  for (const auto& c : captions) count_caption(matcher, c, counts, stamp, ++serial);
  t.captions = captions.size();
  return t;
}

/// Scans one caption file (one caption per line) and checks its line count.
inline MentionTable count_shard(const ShardEntry& shard, const Lexicon& lexicon, const LexiconMatcher& matcher) {
  std::ifstream in(shard.path);
  if (!in) fail(Errc::kIoFailure, "cannot open shard " + shard.path);
  MentionTable t;
  t.labels = lexicon.labels();
  auto& counts = t.scope(shard.scope);
  std::vector<std::uint32_t> stamp(lexicon.size(), 0);
  std::uint32_t serial = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    count_caption(matcher, line, counts, stamp, ++serial);
    ++t.captions;
  }
  if (t.captions != shard.caption_count) {
    fail(Errc::kParseError, shard.path + ": manifest says " + std::to_string(shard.caption_count) +
                                " captions, found " + std::to_string(t.captions));
  }
  return t;
}

/// Counts every shard independently (in parallel) and merges in manifest order.
inline MentionTable count_shards(const std::vector<ShardEntry>& shards, const Lexicon& lexicon, unsigned threads = 1) {
  if (lexicon.empty()) fail(Errc::kEmptyLexicon, "lexicon has no entries");
  const LexiconMatcher matcher(lexicon);
  std::vector<MentionTable> parts(shards.size());
  parallel_for(shards.size(), threads, [&](std::size_t i) { parts[i] = count_shard(shards[i], lexicon, matcher); });
  MentionTable total;
  total.labels = lexicon.labels();
  for (const auto& p : parts) total.merge(p);
  return total;
}

struct LabelCounts {
  std::uint64_t n = 0;       // retrieved images
  std::uint64_t m = 0;       // captions naming the class (summed over leaves for ancestors)
  std::uint64_t m_self = 0;  // captions naming the class itself
  bool operator==(const LabelCounts&) const = default;
};

using ClassCounts = std::map<LabelId, LabelCounts>;

/// `label_id<TAB>n` per line: retrieved-image counts per leaf class.
inline std::map<LabelId, std::uint64_t> read_retrieved_counts(const std::string& path) {
  std::map<LabelId, std::uint64_t> out;
  detail::read_tsv(path, "retrieved counts", [&](const std::vector<std::string>& f, const std::string& where) {
    if (f.size() < 2 || f[0].empty()) fail(Errc::kParseError, where + ": expected label_id<TAB>n");
    try {
      out[f[0]] = std::stoull(f[1]);
    } catch (const std::exception&) {
      fail(Errc::kParseError, where + ": bad count '" + f[1] + "'");
    }
  });
  return out;
}

namespace detail {

inline std::optional<std::size_t> lexicon_slot(const MentionTable& t, const LabelId& y) {
  for (std::size_t i = 0; i < t.labels.size(); ++i) {
    if (t.labels[i] == y) return i;
  }
  return std::nullopt;
}

}  // namespace detail

/// Leaf counts: n from the retrieval counts, m = m_self = captions naming the
/// leaf in its own scope plus unscoped shards.
inline ClassCounts leaf_counts(const Hierarchy& h, const std::map<LabelId, std::uint64_t>& retrieved,
                               const MentionTable& mentions) {
  ClassCounts out;
  for (auto leaf : h.leaves()) {
    const auto& y = h.id(leaf);
    auto it = retrieved.find(y);
    if (it == retrieved.end()) fail(Errc::kMissingLeafCount, "no retrieved count for leaf '" + y + "'");
    LabelCounts c;
    c.n = it->second;
    if (auto slot = detail::lexicon_slot(mentions, y)) c.m = mentions.mentions(*slot, {"", y});
    c.m_self = c.m;
    out[y] = c;
  }
  return out;
}

/// Extends leaf counts to every ancestor j: n_j and m_j sum over the leaf
/// descendants (each leaf once, also on DAGs); m_self counts the ancestor's own
/// name over its leaves' scopes plus unscoped shards.
inline ClassCounts ancestor_aggregate(const Hierarchy& h, const ClassCounts& leaves, const MentionTable& mentions) {
  ClassCounts out = leaves;
  for (auto a : h.ancestors_only()) {
    LabelCounts c;
    std::set<std::string> scopes{""};
    for (auto leaf : h.leaf_descendants(a)) {
      const auto& y = h.id(leaf);
      auto it = leaves.find(y);
      if (it == leaves.end()) fail(Errc::kMissingLeafCount, "no counts for leaf '" + y + "'");
      c.n += it->second.n;
      c.m += it->second.m;
      scopes.insert(y);
    }
    if (auto slot = detail::lexicon_slot(mentions, h.id(a))) c.m_self = mentions.mentions(*slot, scopes);
    out[h.id(a)] = c;
  }
  return out;
}

struct FrequencyResult {
  std::map<LabelId, double> q;
  std::vector<std::pair<LabelId, std::string>> excluded;
};

/// q = m / n; classes with n = 0 are excluded with a reason.
inline FrequencyResult class_frequency(const ClassCounts& counts) {
  FrequencyResult out;
  for (const auto& [y, c] : counts) {
    if (c.n == 0) {
      out.excluded.emplace_back(y, "n = 0");
      continue;
    }
    out.q[y] = static_cast<double>(c.m) / static_cast<double>(c.n);
  }
  return out;
}

struct GapEntry {
  LabelId label;
  std::size_t level = 0;
  std::optional<double> gap;         // undefined entries stay empty
  std::optional<double> delta_leaf;  // filled by the caller when known
};

struct FreqGapReport {
  std::vector<GapEntry> entries;  // ancestors in hierarchy order
  std::vector<LabelId> undefined;
  bool literal = false;
};

/// Default: gap_j = (sum of leaf-descendant mentions - own-name mentions) / n_j.
/// literal = true: (sum_i n_i - n_j) / m_j, which is zero whenever n_j is the
/// sum of its leaves' n; kept for auditing.
inline FreqGapReport frequency_gap(const Hierarchy& h, const ClassCounts& counts, bool literal = false) {
  FreqGapReport rep;
  rep.literal = literal;
  for (auto a : h.ancestors_only()) {
    const auto& y = h.id(a);
    auto it = counts.find(y);
    if (it == counts.end()) fail(Errc::kMissingLeafCount, "no aggregated counts for '" + y + "'");
    const auto& c = it->second;
    GapEntry e;
    e.label = y;
    e.level = h.level(a);
    std::uint64_t sum_m = 0, sum_n = 0;
    for (auto leaf : h.leaf_descendants(a)) {
      const auto& lc = counts.at(h.id(leaf));
      sum_m += lc.m;
      sum_n += lc.n;
    }
    if (!literal) {
      if (c.n > 0) {
        e.gap = (static_cast<double>(sum_m) - static_cast<double>(c.m_self)) / static_cast<double>(c.n);
      }
    } else if (c.m > 0) {
      e.gap = (static_cast<double>(sum_n) - static_cast<double>(c.n)) / static_cast<double>(c.m);
    }
    if (!e.gap) rep.undefined.push_back(y);
    rep.entries.push_back(std::move(e));
  }
  return rep;
}

struct GapCorrelation {
  SpearmanResult spearman;
  std::vector<GapEntry> pairs;  // entries with both values defined
};

/// Spearman between the frequency gap and the supplied per-ancestor delta.
inline GapCorrelation correlate_gap_vs_delta(const FreqGapReport& report,
                                             const std::map<LabelId, double>& delta_leaf) {
  GapCorrelation out;
  std::vector<double> gaps, deltas;
  for (const auto& e : report.entries) {
    auto it = delta_leaf.find(e.label);
    if (!e.gap || it == delta_leaf.end()) continue;
    GapEntry p = e;
    p.delta_leaf = it->second;
    out.pairs.push_back(p);
    gaps.push_back(*e.gap);
    deltas.push_back(it->second);
  }
  if (gaps.size() < 3) {
    fail(Errc::kLengthMismatch, "need >= 3 ancestors with gap and delta, have " + std::to_string(gaps.size()));
  }
  out.spearman = spearman(gaps, deltas);
  return out;
}

}  // namespace vlmeval
