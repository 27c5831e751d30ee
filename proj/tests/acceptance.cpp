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

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Every threshold below is fixed.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "vlmeval/vlmeval.hpp"

using namespace vlmeval;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& check) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("%s  %-32s %s (%.2fs)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// AP

// Rank of item i counts every item ordered before it: higher score, or equal
// score at a lower index.
double ap_oracle(const std::vector<float>& s, const std::vector<std::uint8_t>& rel) {
  const std::size_t n = s.size();
  std::vector<std::size_t> rank(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (s[j] > s[i] || (s[j] == s[i] && j < i)) ++rank[i];
    }
  }
  double sum = 0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!rel[i]) continue;
    ++positives;
    std::size_t hits_at_or_above = 0;
    for (std::size_t j = 0; j < n; ++j) hits_at_or_above += rel[j] && rank[j] <= rank[i];
    sum += static_cast<double>(hits_at_or_above) / static_cast<double>(rank[i] + 1);
  }
  return sum / static_cast<double>(positives);
}

Outcome check_ap() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(derive_seed(1, "acceptance-ap"));
  std::size_t cases = 0;
  double worst = 0;
  for (std::size_t n = 1; n <= 8; ++n) {
    for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
      std::vector<std::uint8_t> rel(n);
      for (std::size_t i = 0; i < n; ++i) rel[i] = (mask >> i) & 1u;
      for (int draw = 0; draw < 3; ++draw) {
        std::vector<float> s(n);
        // The last draw uses a coarse grid so ties occur.
        for (auto& x : s) x = draw < 2 ? static_cast<float>(rng.uniform()) : static_cast<float>(rng.below(3)) / 2.0f;
        worst = std::max(worst, std::abs(average_precision(s, rel) - ap_oracle(s, rel)));
        ++cases;
      }
    }
  }
  const double secs = seconds_since(t0);
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu cases, max |diff| %.3g, %.2fs", cases, worst, secs);
  return {worst <= 1e-12 && secs < 10.0, buf};
}

// ---------------------------------------------------------------------------
// Propagation

Outcome check_propagation() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(derive_seed(1, "acceptance-propagation"));
  std::size_t violations = 0, cells = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng.below(19);  // 2..20 nodes
    const auto edges = testutil::random_dag(rng, n);
    const auto h = Hierarchy::build(edges);

    // Independent descendant sets from the raw edge list.
    std::map<LabelId, std::vector<LabelId>> kids;
    std::set<LabelId> nodes;
    for (const auto& e : edges) {
      kids[e.parent].push_back(e.child);
      nodes.insert(e.child);
      nodes.insert(e.parent);
    }
    std::function<void(const LabelId&, std::set<LabelId>&)> collect = [&](const LabelId& y, std::set<LabelId>& out) {
      for (const auto& c : kids[y]) {
        if (out.insert(c).second) collect(c, out);
      }
    };

    const std::size_t images = 1 + rng.below(4);
    ScoreMatrix s(images, nodes.size());
    s.text_keys.assign(nodes.begin(), nodes.end());
    shuffle(rng, std::span<std::string>(s.text_keys));
    for (std::size_t i = 0; i < images; ++i) s.image_keys[i] = "img" + std::to_string(i);
    for (auto& v : s.data) v = static_cast<float>(rng.uniform() * 2.0 - 1.0);
    std::map<LabelId, std::size_t> col;
    for (std::size_t j = 0; j < s.n_texts; ++j) col[s.text_keys[j]] = j;

    const auto leaf = propagate(s, h, Strategy::kLeaf).scores;
    const auto leaf_self = propagate(s, h, Strategy::kLeafSelf).scores;
    for (const auto& y : nodes) {
      std::set<LabelId> desc;
      collect(y, desc);
      for (std::size_t i = 0; i < images; ++i) {
        const float raw = s.at(i, col[y]);
        float expect = raw;
        if (!desc.empty()) {
          expect = -std::numeric_limits<float>::infinity();
          for (const auto& d : desc) {
            if (kids[d].empty()) expect = std::max(expect, s.at(i, col[d]));
          }
        }
        ++cells;
        if (leaf.at(i, col[y]) != expect) ++violations;
        if (leaf_self.at(i, col[y]) < std::max(raw, leaf.at(i, col[y]))) ++violations;
      }
    }
  }
  const double secs = seconds_since(t0);
  char buf[128];
  std::snprintf(buf, sizeof buf, "200 DAGs, %zu cells, %zu violations, %.2fs", cells, violations, secs);
  return {violations == 0 && secs < 10.0, buf};
}

// ---------------------------------------------------------------------------
// Planted granularity bias

Outcome check_granularity() {
  const auto t0 = std::chrono::steady_clock::now();
  const double eps[] = {0.0, 0.5, 1.0, 2.0};
  // Correct CG_direct predictions out of 800 images at each noise level.
  const std::size_t golden_cg_direct[] = {800, 292, 236, 204};
  bool ok = true;
  std::string detail = "delta";
  double prev = -1;
  for (std::size_t e = 0; e < 4; ++e) {
    WorldSpec spec;
    spec.n_cg = 4;
    spec.fg_per_cg = 4;
    spec.images_per_fg = 50;
    spec.dim = 64;
    spec.image_noise = 0.3;
    spec.ancestor_noise = eps[e];
    spec.seed = 7;
    const auto w = make_world(spec);
    const auto r = evaluate_two_level(w.images, w.records, w.map, w.fg_table, w.cg_table);
    const double delta = r.delta_label();
    const auto correct = static_cast<std::size_t>(std::lround(r.cg_direct * static_cast<double>(r.images)));
    ok = ok && r.images == 800 && correct == golden_cg_direct[e] && r.cg_fg_label == 1.0;
    ok = ok && (e == 0 ? delta == 0.0 : delta > prev);
    prev = delta;
    char buf[64];
    std::snprintf(buf, sizeof buf, " %.4f", delta);
    detail += buf;
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 60.0;
  return {ok, detail + " (golden match " + (ok ? "yes" : "no") + ")"};
}

// ---------------------------------------------------------------------------
// Planted informativeness bias

Outcome check_informativeness() {
  const auto t0 = std::chrono::steady_clock::now();
  RetrievalWorldSpec spec;
  spec.w_single = 0.3;
  spec.w_multi = 0.6;
  spec.w_caption = 0.9;
  spec.text_noise = 0;
  GridConfig cfg;
  const auto w = make_retrieval_world(spec, cfg);
  const NegativePool pool(w.records, w.lexicon, w.names);
  const EmbeddingScorer scorer(w.images, w.texts);
  const auto rep = run_grid(pool, std::cref(scorer), cfg);

  auto range = [&](TextKind k) {
    const auto& v = rep.kind_scores[static_cast<std::size_t>(k)].scores;
    return std::pair{*std::min_element(v.begin(), v.end()), *std::max_element(v.begin(), v.end())};
  };
  auto median = [&](TextKind k) {
    const auto& v = rep.kind_scores[static_cast<std::size_t>(k)].scores;
    return quantile(std::vector<double>(v.begin(), v.end()), 0.5);
  };
  const auto rs = range(TextKind::kPromptSingle), rm = range(TextKind::kPromptMulti), rc = range(TextKind::kCapPos);
  const double ms = median(TextKind::kPromptSingle), mm = median(TextKind::kPromptMulti), mc = median(TextKind::kCapPos);
  const bool ordered = ms < mm && mm < mc;
  const bool disjoint = rs.second < rm.first && rm.second < rc.first;
  const double low = rep.cell(TextKind::kPromptSingle, TextKind::kCapError).map;
  const double high = rep.cell(TextKind::kCapPos, TextKind::kCapRandom).map;
  const double secs = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof buf, "medians %.3f < %.3f < %.3f, disjoint %s, mAP %.4f < %.4f", ms, mm, mc,
                disjoint ? "yes" : "no", low, high);
  return {ordered && disjoint && low < high && secs < 60.0, buf};
}

// ---------------------------------------------------------------------------
// Perturbation contract

Outcome check_perturbation() {
  const std::string data = VLMEVAL_TEST_DATA;
  const auto records = read_records(data + "/fixture_records.jsonl");
  const auto lexicon = read_lexicon(data + "/fixture_lexicon.tsv");
  const LexiconMatcher matcher(lexicon);
  std::vector<std::pair<std::size_t, std::size_t>> captions;
  for (std::size_t r = 0; r < records.size(); ++r) {
    for (std::size_t c = 0; c < records[r].captions.size(); ++c) captions.emplace_back(r, c);
  }
  std::size_t violations = 0;
  const std::size_t total = 1000;
  for (std::size_t t = 0; t < total; ++t) {
    const auto [r, c] = captions[t % captions.size()];
    const auto& rec = records[r];
    const auto& orig = rec.captions[c];
    const auto* spans = rec.entity_spans.empty() ? nullptr : &rec.entity_spans[c];
    const auto item = perturb_caption(orig, rec.labels, lexicon, matcher, {}, derive_seed(2024, t), spans);
    const auto& p = *item.provenance;

    // The replaced byte range must be an entity span of the original.
    bool is_span = false;
    if (spans != nullptr && !spans->empty()) {
      for (const auto& s : *spans) is_span |= s.begin == p.span_begin && s.end == p.span_end;
    } else {
      for (const auto& m : matcher.find_all(orig)) is_span |= m.byte_begin == p.span_begin && m.byte_end == p.span_end;
    }
    const std::string prefix = orig.substr(0, p.span_begin), suffix = orig.substr(p.span_end);
    const bool one_span = item.text.size() >= prefix.size() + suffix.size() &&
                          item.text.compare(0, prefix.size(), prefix) == 0 &&
                          item.text.compare(item.text.size() - suffix.size(), suffix.size(), suffix) == 0 &&
                          item.text != orig;
    const bool absent = !rec.has_label(p.replacement_label);
    if (!(is_span && one_span && absent && revert(item) == orig)) ++violations;
  }
  return {violations == 0, std::to_string(total) + " perturbations, " + std::to_string(violations) + " violations"};
}

// ---------------------------------------------------------------------------
// Spearman

// Sum of squared rank differences over every permutation (Heap's algorithm);
// valid without ties, where rho = 1 - 6 D / (n (n^2 - 1)).
double exact_p_oracle(const std::vector<int>& rx, const std::vector<int>& ry) {
  const int n = static_cast<int>(rx.size());
  auto d2 = [&](const std::vector<int>& y) {
    long long d = 0;
    for (int i = 0; i < n; ++i) d += static_cast<long long>(rx[i] - y[i]) * (rx[i] - y[i]);
    return d;
  };
  const long long centre = static_cast<long long>(n) * (n * n - 1) / 6;  // D under rho = 0
  const long long obs = std::llabs(centre - d2(ry));
  std::vector<int> y = ry;
  std::vector<int> c(n, 0);
  long long extreme = std::llabs(centre - d2(y)) >= obs, total = 1;
  int i = 0;
  while (i < n) {
    if (c[i] < i) {
      std::swap(y[i % 2 == 0 ? 0 : c[i]], y[i]);
      extreme += std::llabs(centre - d2(y)) >= obs;
      ++total;
      ++c[i];
      i = 0;
    } else {
      c[i] = 0;
      ++i;
    }
  }
  return static_cast<double>(extreme) / static_cast<double>(total);
}

Outcome check_spearman() {
  Rng rng(derive_seed(1, "acceptance-spearman"));
  double worst = 0;
  std::size_t trials = 0;
  for (std::size_t n = 3; n <= 7; ++n) {
    for (int t = 0; t < 200; ++t) {
      std::vector<double> x(n), y(n);
      for (auto& v : x) v = rng.normal();
      for (auto& v : y) v = rng.normal();
      std::vector<int> rx(n), ry(n);
      for (std::size_t i = 0; i < n; ++i) {
        rx[i] = 1 + static_cast<int>(std::count_if(x.begin(), x.end(), [&](double v) { return v < x[i]; }));
        ry[i] = 1 + static_cast<int>(std::count_if(y.begin(), y.end(), [&](double v) { return v < y[i]; }));
      }
      worst = std::max(worst, std::abs(spearman(x, y).p_value - exact_p_oracle(rx, ry)));
      ++trials;
    }
  }
  bool monotone = true;
  for (std::size_t n = 3; n <= 60; ++n) {
    std::vector<double> x(n), up(n), down(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.normal() + static_cast<double>(i) * 10.0;
      up[i] = std::exp(x[i] / 50.0);
      down[i] = -x[i] * x[i] * x[i];
    }
    monotone = monotone && spearman(x, up).rho == 1.0 && spearman(x, down).rho == -1.0;
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu trials n=3..7, max |p diff| %.3g, monotone rho exact %s", trials, worst,
                monotone ? "yes" : "no");
  return {worst <= 0.05 && monotone, buf};
}

// ---------------------------------------------------------------------------
// CLI determinism

int run_cli(const std::string& args, const std::string& log) {
  const std::string cmd = std::string(VLMEVAL_CLI) + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = testutil::slurp_file(e.path().string());
  }
  return out;
}

Outcome check_determinism() {
  testutil::ScratchDir dir("acceptance-cli");
  const auto d = [&](const std::string& s) { return dir.file(s); };
  const std::string log = d("cli.log");
  if (run_cli("synth --kind two-level --epsilon 0.5 --sigma 0.3 --out " + d("w"), log) != 0 ||
      run_cli("synth --kind retrieval --k 20 --out " + d("rw"), log) != 0) {
    return {false, "could not build the synth worlds"};
  }
  const std::string w = d("w"), rw = d("rw"), data = VLMEVAL_TEST_DATA;
  dir.write("tmpl.txt", "a photo of a {}\nan image of a {}\n");
  const std::vector<std::pair<std::string, std::string>> jobs{
      {"synth-two-level", "synth --kind two-level --epsilon 0.5 --sigma 0.3"},
      {"synth-retrieval", "synth --kind retrieval --k 20"},
      {"hierarchy", "hierarchy validate --edges " + w + "/edges.tsv --names " + w + "/names.tsv"},
      {"two-level", "two-level --images " + w + "/images.vleb --records " + w + "/records.jsonl --map " + w +
                        "/two_level.tsv --fg-prompts " + w + "/fg_prompts.vleb --cg-prompts " + w + "/cg_prompts.vleb"},
      {"multilevel", "multilevel --images " + w + "/images.vleb --prompts " + w + "/class_prompts.vleb --records " +
                         w + "/records.jsonl --edges " + w + "/edges.tsv --names " + w + "/names.tsv"},
      {"retrieval-manifest", "retrieval --k 20 --records " + rw + "/records.jsonl --lexicon " + rw +
                                 "/lexicon.tsv --names " + rw + "/names.tsv --images " + rw + "/images.vleb"},
      {"retrieval", "retrieval --k 20 --records " + rw + "/records.jsonl --lexicon " + rw + "/lexicon.tsv --names " +
                        rw + "/names.tsv --images " + rw + "/images.vleb --texts " + rw + "/texts.vleb"},
      {"perturb", "perturb --lexicon " + data + "/fixture_lexicon.tsv --records " + data + "/fixture_records.jsonl"},
      {"freq", "freq --edges " + w + "/edges.tsv --names " + w + "/names.tsv --lexicon " + w + "/lexicon.tsv --shards " +
                   w + "/shards.tsv --retrieved " + w + "/retrieved.tsv"},
      {"score-cosine", "score --mode cosine --images " + w + "/images.vleb --texts " + w + "/class_prompts.vleb"},
      {"score-ensemble", "score --mode ensemble --prompts " + w + "/class_prompts.vleb"},
      {"score-manifest", "score --mode manifest --templates " + d("tmpl.txt") + " --names " + w + "/names.tsv"},
  };
  std::vector<std::string> bad;
  for (const auto& [name, args] : jobs) {
    const auto a = d(name + "-t1"), b = d(name + "-t8");
    if (run_cli(args + " --threads 1 --out " + a, log) != 0 || run_cli(args + " --threads 8 --out " + b, log) != 0) {
      bad.push_back(name + "(exit)");
      continue;
    }
    const auto ta = tree_bytes(a), tb = tree_bytes(b);
    if (ta != tb || ta.empty()) bad.push_back(name);
  }
  std::string detail = std::to_string(jobs.size()) + " invocations";
  for (const auto& b : bad) detail += ", differs: " + b;
  return {bad.empty(), detail};
}

// ---------------------------------------------------------------------------
// Format round trip

Outcome check_round_trip() {
  Rng rng(derive_seed(1, "acceptance-format"));
  testutil::ScratchDir dir("acceptance-format");
  std::size_t bad = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t rows = rng.below(12), cols = 1 + rng.below(9);
    auto fill = [&](std::vector<float>& v) {
      for (auto& x : v) {
        const auto pick = rng.below(20);
        x = pick == 0 ? -0.0f : pick == 1 ? std::numeric_limits<float>::denorm_min() : static_cast<float>(rng.normal());
      }
    };
    auto key = [&](std::size_t i) { return "k" + std::to_string(i) + (rng.below(2) ? "\xc3\xa9" : "") + "#x"; };
    const auto a = dir.file("a" + std::to_string(t) + ".vleb"), b = dir.file("b" + std::to_string(t) + ".vleb");
    if (t % 2 == 0) {
      EmbeddingMatrix m(rows, cols);
      fill(m.data);
      for (std::size_t i = 0; i < rows; ++i) m.keys[i] = key(i);
      write_matrix(m, a);
      write_matrix(read_embeddings(a), b);
    } else {
      ScoreMatrix m(rows + 1, cols);
      fill(m.data);
      for (std::size_t i = 0; i <= rows; ++i) m.image_keys[i] = key(i);
      for (std::size_t j = 0; j < cols; ++j) m.text_keys[j] = "t" + std::to_string(j);
      write_matrix(m, a);
      write_matrix(read_scores(a), b);
    }
    if (testutil::slurp_file(a) != testutil::slurp_file(b)) ++bad;
  }
  return {bad == 0, "100 matrices, " + std::to_string(bad) + " mismatches"};
}

// ---------------------------------------------------------------------------
// Frequency analysis

Outcome check_freq() {
  WorldSpec ws;
  ws.n_cg = 4;
  ws.fg_per_cg = 4;
  ws.images_per_fg = 2;
  ws.dim = 16;
  const auto w = make_world(ws);
  CorpusSpec cs;
  cs.captions_per_leaf = 40;
  cs.leaf_min = cs.leaf_max = 24;  // three times the ancestor mentions
  cs.self_min = cs.self_max = 8;
  const auto corpus = make_caption_corpus(w, cs);

  std::vector<std::string> all;
  for (const auto& [scope, caps] : corpus.shards) all.insert(all.end(), caps.begin(), caps.end());
  const auto single = count_mentions(all, w.lexicon);
  MentionTable merged;
  merged.labels = w.lexicon.labels();
  for (std::size_t p = 0; p < 4; ++p) {
    std::vector<std::string> part;
    for (std::size_t i = p; i < all.size(); i += 4) part.push_back(all[i]);
    merged.merge(count_mentions(part, w.lexicon));
  }
  const bool additive = merged == single;

  MentionTable scoped;
  scoped.labels = w.lexicon.labels();
  for (const auto& [scope, caps] : corpus.shards) scoped.merge(count_mentions(caps, w.lexicon, scope));
  const auto counts = ancestor_aggregate(w.hierarchy, leaf_counts(w.hierarchy, corpus.retrieved, scoped), scoped);
  const auto rep = frequency_gap(w.hierarchy, counts);
  std::size_t positive = 0;
  for (const auto& e : rep.entries) positive += e.gap && *e.gap > 0;
  return {additive && positive == rep.entries.size() && !rep.entries.empty(),
          std::string("4-way merge ") + (additive ? "exact" : "differs") + ", positive gaps " +
              std::to_string(positive) + "/" + std::to_string(rep.entries.size())};
}

}  // namespace

int main() {
  report("ap-oracle-equivalence", check_ap);
  report("propagation-equivalence", check_propagation);
  report("planted-granularity-bias", check_granularity);
  report("planted-informativeness-bias", check_informativeness);
  report("perturbation-contract", check_perturbation);
  report("spearman-calibration", check_spearman);
  report("determinism-under-parallelism", check_determinism);
  report("format-round-trip", check_round_trip);
  report("freq-shard-additivity", check_freq);
  std::printf("%d failure(s)\n", failures);
  return failures == 0 ? 0 : 1;
}
