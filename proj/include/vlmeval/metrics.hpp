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

// Accuracy, average precision, per-level quantiles, Spearman correlation and
// the derived analyses built on them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "vlmeval/error.hpp"
#include "vlmeval/hierarchy.hpp"
#include "vlmeval/parallel.hpp"
#include "vlmeval/scoring.hpp"
#include "vlmeval/tensor_store.hpp"

namespace vlmeval {

inline double top1_accuracy(std::span<const LabelId> pred, std::span<const LabelId> gold) {
  if (pred.size() != gold.size()) {
    fail(Errc::kLengthMismatch, std::to_string(pred.size()) + " predictions vs " + std::to_string(gold.size()) + " gold");
  }
  if (pred.empty()) fail(Errc::kEmpty, "no predictions");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == gold[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

/// Ranking used by every AP computation: descending score, ties broken by
/// ascending original index.
inline std::vector<std::size_t> rank_order(std::span<const float> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

/// Non-interpolated AP: mean over positives of precision at the positive's rank.
inline double average_precision(std::span<const float> scores, std::span<const std::uint8_t> relevance) {
  if (scores.size() != relevance.size()) fail(Errc::kLengthMismatch, "scores and relevance differ in length");
  double sum = 0;
  std::size_t hits = 0;
  const auto order = rank_order(scores);
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (relevance[order[k]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  if (hits == 0) fail(Errc::kNoPositives, "AP undefined without positives");
  return sum / static_cast<double>(hits);
}

struct ClassAp {
  LabelId label;
  double ap = 0;
};

struct MapResult {
  std::vector<ClassAp> per_class;   // classes with >=1 positive, input order
  std::vector<LabelId> excluded;    // classes with no positive image
  double map = 0;                   // NaN when every class is excluded
};

/// Per-class AP down the image axis. `gold[i]` holds the labels of image row i.
/// Classes without positives are listed in `excluded` rather than scored.
inline MapResult multilabel_map(const ScoreMatrix& scores, const std::vector<std::set<LabelId>>& gold,
                                const std::vector<LabelId>& classes, unsigned threads = 1) {
  if (gold.size() != scores.n_images) fail(Errc::kLengthMismatch, "gold rows != score rows");
  const KeyIndex cols(scores.text_keys);
  std::vector<std::size_t> col(classes.size());
  for (std::size_t c = 0; c < classes.size(); ++c) {
    auto j = cols.find(classes[c]);
    if (!j) fail(Errc::kMissingClassColumn, "no score column for '" + classes[c] + "'");
    col[c] = *j;
  }
  std::vector<std::optional<double>> ap(classes.size());
  parallel_for(classes.size(), threads, [&](std::size_t c) {
    std::vector<float> s(scores.n_images);
    std::vector<std::uint8_t> rel(scores.n_images);
    bool any = false;
    for (std::size_t i = 0; i < scores.n_images; ++i) {
      s[i] = scores.at(i, col[c]);
      rel[i] = gold[i].contains(classes[c]) ? 1 : 0;
      any = any || rel[i];
    }
    if (any) ap[c] = average_precision(s, rel);
  });
  MapResult out;
  double sum = 0;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (ap[c]) {
      out.per_class.push_back({classes[c], *ap[c]});
      sum += *ap[c];
    } else {
      out.excluded.push_back(classes[c]);
    }
  }
  out.map = out.per_class.empty() ? std::nan("") : sum / static_cast<double>(out.per_class.size());
  return out;
}

/// Quantile by linear interpolation between closest ranks: position
/// (n - 1) * q in the sorted sample.
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) fail(Errc::kEmpty, "quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

struct LevelStats {
  std::size_t level = 0;
  std::size_t count = 0;
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

/// Five-number summary of the values grouped by hierarchy level, ascending.
inline std::vector<LevelStats> level_stats(const std::map<LabelId, double>& per_class, const Hierarchy& h) {
  std::map<std::size_t, std::vector<double>> by_level;
  for (const auto& [label, v] : per_class) by_level[h.level_of(label)].push_back(v);
  std::vector<LevelStats> out;
  for (auto& [level, vals] : by_level) {
    LevelStats s;
    s.level = level;
    s.count = vals.size();
    s.min = *std::min_element(vals.begin(), vals.end());
    s.max = *std::max_element(vals.begin(), vals.end());
    s.q1 = quantile(vals, 0.25);
    s.median = quantile(vals, 0.5);
    s.q3 = quantile(vals, 0.75);
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spearman

/// 1-based fractional ranks; tied values share the mean of their ranks.
inline std::vector<double> fractional_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

namespace detail {

inline double pearson_centered(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

inline std::vector<double> centered(std::vector<double> v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  for (double& x : v) x -= mean;
  return v;
}

}  // namespace detail

/// Sample sizes at or below this use the exact permutation distribution for
/// the p-value; larger samples use the t approximation.
inline constexpr std::size_t kExactSpearmanMaxN = 9;

struct SpearmanResult {
  double rho = 0;
  double p_value = 1;
  std::size_t n = 0;
  bool exact_p = false;
};

/// Two-sided p from t = rho * sqrt((n - 2) / (1 - rho^2)) with n - 2 d.o.f.
inline double spearman_p_t_approx(double rho, std::size_t n) {
  if (n < 3) return 1.0;
  const double one_minus = 1.0 - rho * rho;
  if (one_minus <= 0) return 0.0;
  const double dof = static_cast<double>(n - 2);
  const double t = std::abs(rho) * std::sqrt(dof / one_minus);
  boost::math::students_t dist(dof);
  return std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, t)), 0.0, 1.0);
}

inline SpearmanResult spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(Errc::kLengthMismatch, "spearman inputs differ in length");
  if (x.size() < 3) fail(Errc::kLengthMismatch, "spearman needs n >= 3, got " + std::to_string(x.size()));
  const auto rx = detail::centered(fractional_ranks(x));
  const auto ry = detail::centered(fractional_ranks(y));
  auto all_zero = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double d) { return d == 0.0; });
  };
  if (all_zero(rx) || all_zero(ry)) fail(Errc::kDegenerateConstantInput, "constant input has no ranking");
  SpearmanResult res;
  res.n = x.size();
  res.rho = detail::pearson_centered(rx, ry);
  if (res.n <= kExactSpearmanMaxN) {
    // Every reordering of y's ranks against fixed x ranks is equally likely
    // under independence.
    std::vector<std::size_t> perm(res.n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::vector<double> shuffled(res.n);
    const double threshold = std::abs(res.rho) - 1e-12;
    std::size_t extreme = 0, total = 0;
    do {
      for (std::size_t i = 0; i < res.n; ++i) shuffled[i] = ry[perm[i]];
      if (std::abs(detail::pearson_centered(rx, shuffled)) >= threshold) ++extreme;
      ++total;
    } while (std::next_permutation(perm.begin(), perm.end()));
    res.p_value = static_cast<double>(extreme) / static_cast<double>(total);
    res.exact_p = true;
  } else {
    res.p_value = spearman_p_t_approx(res.rho, res.n);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Derived analyses

struct DeltaEntry {
  std::string name;
  double direct = 0;
  double propagated = 0;
  double delta() const { return propagated - direct; }
};

struct TextClassification {
  double accuracy = 0;
  std::vector<LabelId> predicted_cg;  // parallel to the map's FG order
};

/// Classifies every FG prompt row to its nearest CG prompt row by cosine and
/// scores the result against the map's parenthood.
inline TextClassification fg_to_cg_text_classification(const ClassEmbeddingTable& fg_table,
                                                       const ClassEmbeddingTable& cg_table, const TwoLevelMap& map) {
  const KeyIndex fg_index(fg_table.class_ids());
  const KeyIndex cg_index(cg_table.class_ids());
  std::vector<std::size_t> cg_rows;
  for (const auto& cg : map.cg_classes) {
    auto r = cg_index.find(cg);
    if (!r) fail(Errc::kMissingEmbedding, "no CG embedding for '" + cg + "'");
    cg_rows.push_back(*r);
  }
  const auto parent = map.fg_parent();
  TextClassification out;
  std::vector<LabelId> gold;
  for (const auto& fg : map.fg_classes()) {
    auto r = fg_index.find(fg);
    if (!r) fail(Errc::kMissingEmbedding, "no FG embedding for '" + fg + "'");
    const auto v = fg_table.matrix.row(*r);
    std::size_t best = 0;
    double best_score = -2;
    for (std::size_t c = 0; c < cg_rows.size(); ++c) {
      const double s = dot(v, cg_table.matrix.row(cg_rows[c])) / (norm2(v) * norm2(cg_table.matrix.row(cg_rows[c])));
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    out.predicted_cg.push_back(map.cg_classes[best]);
    gold.push_back(parent.at(fg));
  }
  out.accuracy = top1_accuracy(out.predicted_cg, gold);
  return out;
}

struct ClassCorrelation {
  LabelId label;
  std::size_t n = 0;
  std::optional<SpearmanResult> result;
  std::string status = "ok";  // ok | too_few | DegenerateConstantInput
};

struct AreaCorrelation {
  std::vector<ClassCorrelation> per_class;  // sorted by label id
  std::optional<SpearmanResult> pooled;     // over every scored (image, label) pair
  double mean_class_rho = std::nan("");
  std::size_t strong_classes = 0;  // rho > 0.5 and p < 0.05
};

/// Fraction of the image covered by boxes of `label`, summing box areas and
/// clamping at 1.
inline double label_area_fraction(const ImageRecord& rec, const LabelId& label) {
  double area = 0;
  bool any = false;
  for (const auto& b : rec.boxes) {
    if (b.label == label) {
      area += b.w * b.h;
      any = true;
    }
  }
  if (!any) fail(Errc::kMissingBoxes, rec.image_id + " has no box for '" + label + "'");
  return std::min(1.0, area / (rec.width * rec.height));
}

/// `scores[image_id][label]` holds the single-label prompt score.
inline AreaCorrelation area_score_correlation(const std::vector<ImageRecord>& records,
                                              const std::map<std::string, std::map<LabelId, double>>& scores) {
  std::map<LabelId, std::pair<std::vector<double>, std::vector<double>>> by_class;
  std::vector<double> all_area, all_score;
  for (const auto& rec : records) {
    auto it = scores.find(rec.image_id);
    if (it == scores.end()) continue;
    for (const auto& [label, s] : it->second) {
      const double frac = label_area_fraction(rec, label);
      by_class[label].first.push_back(frac);
      by_class[label].second.push_back(s);
      all_area.push_back(frac);
      all_score.push_back(s);
    }
  }
  AreaCorrelation out;
  double rho_sum = 0;
  std::size_t rho_n = 0;
  for (const auto& [label, xy] : by_class) {
    ClassCorrelation cc;
    cc.label = label;
    cc.n = xy.first.size();
    if (cc.n < 3) {
      cc.status = "too_few";
    } else {
      try {
        cc.result = spearman(xy.second, xy.first);
        rho_sum += cc.result->rho;
        ++rho_n;
        if (cc.result->rho > 0.5 && cc.result->p_value < 0.05) ++out.strong_classes;
      } catch (const Error& e) {
        if (e.code() != Errc::kDegenerateConstantInput) throw;
        cc.status = "DegenerateConstantInput";
      }
    }
    out.per_class.push_back(std::move(cc));
  }
  if (rho_n > 0) out.mean_class_rho = rho_sum / static_cast<double>(rho_n);
  if (all_area.size() >= 3) {
    try {
      out.pooled = spearman(all_score, all_area);
    } catch (const Error& e) {
      if (e.code() != Errc::kDegenerateConstantInput) throw;
    }
  }
  return out;
}

}  // namespace vlmeval
