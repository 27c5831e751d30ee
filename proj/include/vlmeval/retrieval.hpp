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

// Image-to-text retrieval with hard positives (label prompts) and hard
// negatives (captions of related images, captions with a swapped entity).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "vlmeval/error.hpp"
#include "vlmeval/metrics.hpp"
#include "vlmeval/parallel.hpp"
#include "vlmeval/rng.hpp"
#include "vlmeval/scoring.hpp"
#include "vlmeval/tensor_store.hpp"
#include "vlmeval/text_match.hpp"

namespace vlmeval {

enum class TextKind : std::uint8_t { kCapPos, kPromptSingle, kPromptMulti, kCapRandom, kCapRelevant, kCapError };

inline constexpr std::array<TextKind, 3> kPositiveKinds{TextKind::kCapPos, TextKind::kPromptSingle,
                                                        TextKind::kPromptMulti};
inline constexpr std::array<TextKind, 3> kNegativeKinds{TextKind::kCapRandom, TextKind::kCapRelevant,
                                                        TextKind::kCapError};

constexpr std::string_view kind_name(TextKind k) {
  switch (k) {
    case TextKind::kCapPos: return "cap_pos";
    case TextKind::kPromptSingle: return "prompt_single";
    case TextKind::kPromptMulti: return "prompt_multi";
    case TextKind::kCapRandom: return "cap_random";
    case TextKind::kCapRelevant: return "cap_relevant";
    case TextKind::kCapError: return "cap_error";
  }
  return "?";
}

struct Provenance {
  std::size_t span_begin = 0;  // byte range in the original caption
  std::size_t span_end = 0;
  std::string original;        // original span text
  LabelId replacement_label;
  std::string replacement;     // text written in place of the span
  bool operator==(const Provenance&) const = default;
};

struct TextItem {
  std::string text;
  TextKind kind = TextKind::kCapPos;
  std::optional<std::string> source_image;
  std::vector<LabelId> labels;            // prompt kinds: labels mentioned
  std::optional<Provenance> provenance;   // cap_error only
  bool operator==(const TextItem&) const = default;
};

/// Stable content-derived id used as the text embedding key.
inline std::string text_id(std::string_view text) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "t%016llx", static_cast<unsigned long long>(fnv1a64(text)));
  return buf;
}

/// Restores the caption a perturbed item was derived from.
inline std::string revert(const TextItem& item) {
  check_invariant(item.provenance.has_value(), "revert needs provenance");
  const auto& p = *item.provenance;
  std::string out = item.text;
  out.replace(p.span_begin, p.replacement.size(), p.original);
  return out;
}

// ---------------------------------------------------------------------------
// Positives

struct RetrievalPrompts {
  PromptTemplateSet single{std::vector<std::string>{"a photo of a {}"}};
  PromptTemplateSet multi{std::vector<std::string>{"a photo of {}"}};
};

inline std::string display_name(const std::map<LabelId, std::string>& names, const LabelId& y) {
  auto it = names.find(y);
  return it == names.end() ? y : it->second;
}

/// cap_pos: every ground-truth caption. prompt_single: one prompt per label.
/// prompt_multi: one prompt listing every label name, comma-separated, in
/// record order.
inline std::vector<TextItem> build_positives(const ImageRecord& rec, TextKind mode, const RetrievalPrompts& prompts,
                                             const std::map<LabelId, std::string>& names) {
  std::vector<TextItem> out;
  switch (mode) {
    case TextKind::kCapPos:
      if (rec.captions.empty()) fail(Errc::kNoCaptions, rec.image_id);
      for (const auto& c : rec.captions) out.push_back({c, mode, rec.image_id, {}, std::nullopt});
      break;
    case TextKind::kPromptSingle:
      if (rec.labels.empty()) fail(Errc::kNoLabels, rec.image_id);
      for (const auto& y : rec.labels) {
        for (std::size_t t = 0; t < prompts.single.size(); ++t) {
          out.push_back({prompts.single.fill(t, display_name(names, y)), mode, rec.image_id, {y}, std::nullopt});
        }
      }
      break;
    case TextKind::kPromptMulti: {
      if (rec.labels.empty()) fail(Errc::kNoLabels, rec.image_id);
      std::string joined;
      for (const auto& y : rec.labels) {
        if (!joined.empty()) joined += ", ";
        joined += display_name(names, y);
      }
      for (std::size_t t = 0; t < prompts.multi.size(); ++t) {
        out.push_back({prompts.multi.fill(t, joined), mode, rec.image_id, rec.labels, std::nullopt});
      }
      break;
    }
    default:
      fail(Errc::kInvalidArgument, "not a positive kind: " + std::string(kind_name(mode)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Caption perturbation

/// Replaces one entity span of `caption` with the name of a label absent from
/// the image. Spans come from `entity_spans` when given, else from lexicon
/// matches. The span is drawn uniformly among spans with at least one valid
/// replacement, then the label uniformly among that span's candidates.
inline TextItem perturb_caption(const std::string& caption, const std::vector<LabelId>& image_labels,
                                const Lexicon& lexicon, const LexiconMatcher& matcher,
                                const std::map<LabelId, std::string>& names, std::uint64_t seed,
                                const std::vector<Span>* entity_spans = nullptr) {
  std::vector<Match> spans;
  if (entity_spans != nullptr && !entity_spans->empty()) {
    for (const auto& s : *entity_spans) spans.push_back({s.begin, s.end, {}});
  } else {
    spans = matcher.find_all(caption);
  }
  if (spans.empty()) fail(Errc::kNoReplaceableSpan, "'" + caption + "'");

  const std::set<LabelId> present(image_labels.begin(), image_labels.end());
  std::vector<std::size_t> pool;
  for (std::size_t li = 0; li < lexicon.size(); ++li) {
    if (!present.contains(lexicon.labels()[li])) pool.push_back(li);
  }
  if (pool.empty()) fail(Errc::kEmptyReplacementPool, "every lexicon label is in the image");

  auto replacement_text = [&](std::size_t li) {
    const auto& y = lexicon.labels()[li];
    if (auto it = names.find(y); it != names.end()) return it->second;
    return lexicon.synonyms(li).empty() ? y : lexicon.synonyms(li).front();
  };
  auto folded = [](std::string_view s) {
    std::string out;
    for (const auto& t : tokenize(s)) out += t.folded + " ";
    return out;
  };

  std::vector<std::size_t> valid_spans;
  std::vector<std::vector<std::size_t>> candidates(spans.size());
  for (std::size_t s = 0; s < spans.size(); ++s) {
    const auto original = folded(std::string_view(caption).substr(spans[s].byte_begin, spans[s].byte_end - spans[s].byte_begin));
    for (std::size_t li : pool) {
      if (std::binary_search(spans[s].labels.begin(), spans[s].labels.end(), li)) continue;
      if (folded(replacement_text(li)) == original) continue;
      candidates[s].push_back(li);
    }
    if (!candidates[s].empty()) valid_spans.push_back(s);
  }
  if (valid_spans.empty()) fail(Errc::kEmptyReplacementPool, "no replacement differs from the matched spans");

  Rng rng(seed);
  const std::size_t s = valid_spans[rng.below(valid_spans.size())];
  const std::size_t li = candidates[s][rng.below(candidates[s].size())];

  Provenance prov;
  prov.span_begin = spans[s].byte_begin;
  prov.span_end = spans[s].byte_end;
  prov.original = caption.substr(prov.span_begin, prov.span_end - prov.span_begin);
  prov.replacement_label = lexicon.labels()[li];
  prov.replacement = replacement_text(li);

  TextItem item;
  item.text = caption.substr(0, prov.span_begin) + prov.replacement + caption.substr(prov.span_end);
  item.kind = TextKind::kCapError;
  item.labels = {prov.replacement_label};
  item.provenance = std::move(prov);
  return item;
}

// ---------------------------------------------------------------------------
// Negatives

/// Successive distinct draws from [0, n) without materializing the range
/// (Fisher-Yates over a sparse swap map).
class SparseSampler {
 public:
  SparseSampler(std::size_t n, std::uint64_t seed) : n_(n), rng_(seed) {}
  bool exhausted() const { return drawn_ >= n_; }
  std::size_t next() {
    const std::size_t j = drawn_ + static_cast<std::size_t>(rng_.below(n_ - drawn_));
    const std::size_t vj = value(j);
    swaps_[j] = value(drawn_);
    ++drawn_;
    return vj;
  }

 private:
  std::size_t value(std::size_t i) const {
    auto it = swaps_.find(i);
    return it == swaps_.end() ? i : it->second;
  }
  std::size_t n_;
  std::size_t drawn_ = 0;
  Rng rng_;
  std::unordered_map<std::size_t, std::size_t> swaps_;
};

/// Corpus-wide indexes shared by every query.
class NegativePool {
 public:
  NegativePool(const std::vector<ImageRecord>& records, const Lexicon& lexicon,
               std::map<LabelId, std::string> names)
      : records_(records), lexicon_(lexicon), matcher_(lexicon), names_(std::move(names)) {
    for (std::size_t r = 0; r < records.size(); ++r) {
      caption_start_.push_back(flat_.size());
      for (std::size_t c = 0; c < records[r].captions.size(); ++c) flat_.push_back({r, c});
      for (const auto& y : records[r].labels) by_label_[y].push_back(r);
    }
    caption_start_.push_back(flat_.size());
  }

  const std::vector<ImageRecord>& records() const { return records_; }
  const Lexicon& lexicon() const { return lexicon_; }
  const LexiconMatcher& matcher() const { return matcher_; }
  const std::map<LabelId, std::string>& names() const { return names_; }

  struct Draw {
    std::vector<TextItem> items;
    bool pool_too_small = false;
    std::optional<Errc> error;  // set when the query cannot get negatives of this kind
  };

  /// cap_random: uniform without replacement over other images' captions.
  /// cap_relevant: same, restricted to images sharing >= 1 label.
  /// cap_error: k perturbations of the query's own captions, cycling through
  /// captions, each with its own seeded draw.
  /// Candidates whose text equals one of the query's captions are skipped.
  Draw sample(std::size_t query, TextKind mode, std::size_t k, std::uint64_t seed) const {
    const auto& rec = records_.at(query);
    const std::unordered_set<std::string> own(rec.captions.begin(), rec.captions.end());
    Draw out;
    auto take_from = [&](const std::vector<std::pair<std::size_t, std::size_t>>& cands, TextKind kind) {
      SparseSampler sampler(cands.size(), seed);
      while (out.items.size() < k && !sampler.exhausted()) {
        const auto [r, c] = cands[sampler.next()];
        const auto& text = records_[r].captions[c];
        if (own.contains(text)) continue;
        out.items.push_back({text, kind, records_[r].image_id, {}, std::nullopt});
      }
      out.pool_too_small = out.items.size() < k;
    };
    switch (mode) {
      case TextKind::kCapRandom: {
        // Index space skips the query's own caption block.
        const std::size_t lo = caption_start_[query], hi = caption_start_[query + 1];
        const std::size_t n = flat_.size() - (hi - lo);
        SparseSampler sampler(n, seed);
        while (out.items.size() < k && !sampler.exhausted()) {
          std::size_t idx = sampler.next();
          if (idx >= lo) idx += hi - lo;
          const auto [r, c] = flat_[idx];
          const auto& text = records_[r].captions[c];
          if (own.contains(text)) continue;
          out.items.push_back({text, mode, records_[r].image_id, {}, std::nullopt});
        }
        out.pool_too_small = out.items.size() < k;
        break;
      }
      case TextKind::kCapRelevant: {
        std::set<std::size_t> related;
        for (const auto& y : rec.labels) {
          auto it = by_label_.find(y);
          if (it == by_label_.end()) continue;
          for (std::size_t r : it->second) {
            if (r != query) related.insert(r);
          }
        }
        std::vector<std::pair<std::size_t, std::size_t>> cands;
        for (std::size_t r : related) {
          for (std::size_t c = 0; c < records_[r].captions.size(); ++c) cands.emplace_back(r, c);
        }
        take_from(cands, mode);
        break;
      }
      case TextKind::kCapError:
        sample_errors(rec, k, seed, own, out);
        break;
      default:
        fail(Errc::kInvalidArgument, "not a negative kind: " + std::string(kind_name(mode)));
    }
    if (out.pool_too_small && out.items.empty() && !out.error) out.error = Errc::kPoolTooSmall;
    return out;
  }

 private:
  void sample_errors(const ImageRecord& rec, std::size_t k, std::uint64_t seed,
                     const std::unordered_set<std::string>& own, Draw& out) const {
    // Captions that admit a perturbation at all.
    std::vector<std::size_t> usable;
    std::optional<Errc> last_error;
    for (std::size_t c = 0; c < rec.captions.size(); ++c) {
      try {
        perturb_caption(rec.captions[c], rec.labels, lexicon_, matcher_, names_, derive_seed(seed, c), spans_for(rec, c));
        usable.push_back(c);
      } catch (const Error& e) {
        if (e.code() != Errc::kNoReplaceableSpan && e.code() != Errc::kEmptyReplacementPool) throw;
        last_error = e.code();
      }
    }
    if (usable.empty()) {
      out.error = rec.captions.empty() ? Errc::kNoCaptions : last_error.value_or(Errc::kNoReplaceableSpan);
      return;
    }
    constexpr int kAttempts = 8;
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t c = usable[j % usable.size()];
      for (int a = 0; a < kAttempts; ++a) {
        const std::uint64_t s = derive_seed(derive_seed(seed, j), static_cast<std::uint64_t>(a));
        auto item = perturb_caption(rec.captions[c], rec.labels, lexicon_, matcher_, names_, s, spans_for(rec, c));
        if (own.contains(item.text)) continue;
        item.source_image = rec.image_id;
        out.items.push_back(std::move(item));
        break;
      }
    }
    out.pool_too_small = out.items.size() < k;
  }

  static const std::vector<Span>* spans_for(const ImageRecord& rec, std::size_t c) {
    return rec.entity_spans.empty() ? nullptr : &rec.entity_spans[c];
  }

  const std::vector<ImageRecord>& records_;
  const Lexicon& lexicon_;
  LexiconMatcher matcher_;
  std::map<LabelId, std::string> names_;
  std::vector<std::pair<std::size_t, std::size_t>> flat_;  // (record, caption)
  std::vector<std::size_t> caption_start_;
  std::map<LabelId, std::vector<std::size_t>> by_label_;
};

// ---------------------------------------------------------------------------
// Grid

struct GridConfig {
  std::size_t k = 100;
  std::uint64_t seed = 42;
  RetrievalPrompts prompts;
  unsigned threads = 1;
  std::size_t histogram_bins = 40;
};

/// Texts for one query image. Negatives are drawn once and reused by every
/// positive kind.
struct QueryTexts {
  std::size_t query = 0;
  std::array<std::vector<TextItem>, 3> positives;
  std::array<std::optional<Errc>, 3> positive_error;
  std::array<NegativePool::Draw, 3> negatives;
};

inline std::uint64_t query_seed(std::uint64_t seed, std::size_t query) {
  return derive_seed(derive_seed(seed, "retrieval-query"), static_cast<std::uint64_t>(query));
}

inline std::vector<QueryTexts> build_tasks(const NegativePool& pool, const GridConfig& cfg) {
  const auto& records = pool.records();
  std::vector<QueryTexts> tasks(records.size());
  parallel_for(records.size(), cfg.threads, [&](std::size_t q) {
    QueryTexts& t = tasks[q];
    t.query = q;
    for (std::size_t p = 0; p < 3; ++p) {
      try {
        t.positives[p] = build_positives(records[q], kPositiveKinds[p], cfg.prompts, pool.names());
      } catch (const Error& e) {
        if (e.code() != Errc::kNoCaptions && e.code() != Errc::kNoLabels) throw;
        t.positive_error[p] = e.code();
      }
    }
    const std::uint64_t qs = query_seed(cfg.seed, q);
    for (std::size_t n = 0; n < 3; ++n) {
      t.negatives[n] = pool.sample(q, kNegativeKinds[n], cfg.k, derive_seed(qs, kind_name(kNegativeKinds[n])));
    }
  });
  return tasks;
}

/// Unique (text_id, text) pairs in first-use order: the texts-to-embed manifest.
inline std::vector<std::pair<std::string, std::string>> collect_texts(const std::vector<QueryTexts>& tasks) {
  std::vector<std::pair<std::string, std::string>> out;
  std::unordered_set<std::string> seen;
  auto add = [&](const TextItem& item) {
    auto id = text_id(item.text);
    if (seen.insert(id).second) out.emplace_back(std::move(id), item.text);
  };
  for (const auto& t : tasks) {
    for (const auto& list : t.positives) std::for_each(list.begin(), list.end(), add);
    for (const auto& draw : t.negatives) std::for_each(draw.items.begin(), draw.items.end(), add);
  }
  return out;
}

/// Score of query image `query` against text id `tid`; nullopt when unknown.
using TextScorer = std::function<std::optional<float>(std::size_t query, const std::string& tid)>;

/// Scorer over an image matrix aligned with the records and a text matrix
/// keyed by text id.
class EmbeddingScorer {
 public:
  EmbeddingScorer(const EmbeddingMatrix& images, const EmbeddingMatrix& texts)
      : images_(images), texts_(texts), index_(texts.keys) {
    if (images.dim != texts.dim) fail(Errc::kDimMismatch, "image and text embedding dims differ");
  }
  std::optional<float> operator()(std::size_t query, const std::string& tid) const {
    auto r = index_.find(tid);
    if (!r) return std::nullopt;
    const auto a = images_.row(query);
    const auto b = texts_.row(*r);
    const double c = dot(a, b) / (norm2(a) * norm2(b));
    return static_cast<float>(std::clamp(c, -1.0, 1.0));
  }
  bool has(const std::string& tid) const { return index_.contains(tid); }

 private:
  const EmbeddingMatrix& images_;
  const EmbeddingMatrix& texts_;
  KeyIndex index_;
};

struct GridCell {
  TextKind positive = TextKind::kCapPos;
  TextKind negative = TextKind::kCapRandom;
  double map = std::nan("");
  std::size_t evaluated = 0;
  std::size_t dropped = 0;
  std::map<std::string, std::size_t> dropped_by_reason;
  std::size_t short_negative_sets = 0;  // evaluated with fewer than k negatives
};

struct KindScores {
  TextKind kind = TextKind::kCapPos;
  std::vector<float> scores;  // every (query, item) score, query order
};

struct Histogram {
  double lo = -1, hi = 1;
  std::vector<std::size_t> counts;
};

inline Histogram make_histogram(const std::vector<float>& values, std::size_t bins, double lo = -1.0, double hi = 1.0) {
  Histogram h{lo, hi, std::vector<std::size_t>(bins, 0)};
  for (float v : values) {
    auto b = static_cast<std::ptrdiff_t>(std::floor((v - lo) / (hi - lo) * static_cast<double>(bins)));
    b = std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(bins) - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

struct GridReport {
  std::size_t queries = 0;
  std::array<std::array<GridCell, 3>, 3> cells;  // [positive][negative]
  std::array<KindScores, 6> kind_scores;         // indexed by TextKind
  /// prompt_single score per (image id, label), for the area analysis.
  std::map<std::string, std::map<LabelId, double>> single_label_scores;

  const GridCell& cell(TextKind pos, TextKind neg) const {
    return cells[static_cast<std::size_t>(pos)][static_cast<std::size_t>(neg) - 3];
  }
};

/// AP of one query: positives are listed before negatives, so exact score
/// ties rank the positive first.
inline double query_ap(const std::vector<float>& pos, const std::vector<float>& neg) {
  std::vector<float> s(pos);
  s.insert(s.end(), neg.begin(), neg.end());
  std::vector<std::uint8_t> rel(pos.size(), 1);
  rel.resize(s.size(), 0);
  return average_precision(s, rel);
}

inline GridReport evaluate_grid(const std::vector<QueryTexts>& tasks, const TextScorer& scorer,
                                const std::vector<ImageRecord>& records, const GridConfig& cfg) {
  struct QueryScores {
    std::array<std::vector<float>, 6> by_kind;
  };
  std::vector<QueryScores> qs(tasks.size());
  parallel_for(tasks.size(), cfg.threads, [&](std::size_t q) {
    const auto& t = tasks[q];
    auto score_all = [&](const std::vector<TextItem>& items, std::vector<float>& out) {
      for (const auto& item : items) {
        auto s = scorer(t.query, text_id(item.text));
        if (!s) fail(Errc::kMissingTextScore, "no score for text '" + item.text + "'");
        out.push_back(*s);
      }
    };
    for (std::size_t p = 0; p < 3; ++p) score_all(t.positives[p], qs[q].by_kind[p]);
    for (std::size_t n = 0; n < 3; ++n) score_all(t.negatives[n].items, qs[q].by_kind[3 + n]);
  });

  GridReport rep;
  rep.queries = tasks.size();
  for (std::size_t k = 0; k < 6; ++k) rep.kind_scores[k].kind = static_cast<TextKind>(k);
  for (std::size_t q = 0; q < tasks.size(); ++q) {
    for (std::size_t k = 0; k < 6; ++k) {
      auto& dst = rep.kind_scores[k].scores;
      dst.insert(dst.end(), qs[q].by_kind[k].begin(), qs[q].by_kind[k].end());
    }
    const auto& singles = tasks[q].positives[1];
    for (std::size_t i = 0; i < singles.size(); ++i) {
      auto& per_image = rep.single_label_scores[records[tasks[q].query].image_id];
      const double v = qs[q].by_kind[1][i];
      auto [it, fresh] = per_image.emplace(singles[i].labels.front(), v);
      if (!fresh) it->second = std::max(it->second, v);
    }
  }
  for (std::size_t p = 0; p < 3; ++p) {
    for (std::size_t n = 0; n < 3; ++n) {
      GridCell& cell = rep.cells[p][n];
      cell.positive = kPositiveKinds[p];
      cell.negative = kNegativeKinds[n];
      double sum = 0;
      for (std::size_t q = 0; q < tasks.size(); ++q) {
        const auto& t = tasks[q];
        std::optional<Errc> reason = t.positive_error[p];
        if (!reason) reason = t.negatives[n].error;
        if (reason) {
          ++cell.dropped;
          ++cell.dropped_by_reason[std::string(errc_name(*reason))];
          continue;
        }
        if (t.negatives[n].pool_too_small) ++cell.short_negative_sets;
        sum += query_ap(qs[q].by_kind[p], qs[q].by_kind[3 + n]);
        ++cell.evaluated;
      }
      if (cell.evaluated > 0) cell.map = sum / static_cast<double>(cell.evaluated);
    }
  }
  return rep;
}

/// Builds every task and evaluates the grid in one call. Throws
/// MissingTextScore if the scorer cannot score some text; use build_tasks()
/// and collect_texts() to produce the embedding manifest first.
inline GridReport run_grid(const NegativePool& pool, const TextScorer& scorer, const GridConfig& cfg) {
  const auto tasks = build_tasks(pool, cfg);
  return evaluate_grid(tasks, scorer, pool.records(), cfg);
}

}  // namespace vlmeval
