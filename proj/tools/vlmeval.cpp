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

// vlmeval command-line entry point.
//
// Every subcommand writes into --out: report.json, report.txt, config.json
// (resolved parameters plus SHA-256 of every input file) and any CSV series.
// Exit codes: 0 ok, 1 usage, 2 data error, 3 internal invariant violation.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vlmeval/vlmeval.hpp"

namespace fs = std::filesystem;
using namespace vlmeval;

namespace {

struct Common {
  std::string out;
  std::uint64_t seed = 42;
  unsigned threads = 1;
};

/// Collects the config echo as the command runs.
class Run {
 public:
  Run(std::string subcommand, const Common& c) : common_(c) {
    config_["subcommand"] = std::move(subcommand);
    config_["params"] = Json::object();
    config_["inputs"] = Json::object();
  }

  void param(const std::string& key, Json value) { config_["params"][key] = std::move(value); }

  /// Records the input digest and returns the path.
  const std::string& input(const std::string& key, const std::string& path) {
    config_["inputs"][key] = Json{{"path", path}, {"sha256", sha256_file(path)}};
    return path;
  }

  fs::path path(const std::string& name) const { return fs::path(common_.out) / name; }

  void finish(const Json& report, const std::string& table) {
    write_json(path("config.json"), config_);
    write_json(path("report.json"), report);
    write_text(path("report.txt"), table);
    std::cout << table;
  }

  const Common& common() const { return common_; }

 private:
  Common common_;
  Json config_;
};

void prepare_out(const Common& c) {
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec) fail(Errc::kIoFailure, "cannot create output directory " + c.out + ": " + ec.message());
}

std::map<LabelId, std::string> names_from_lexicon(const Lexicon& lex) {
  std::map<LabelId, std::string> names;
  for (std::size_t i = 0; i < lex.size(); ++i) names[lex.labels()[i]] = lex.synonyms(i).front();
  return names;
}

Json spearman_json(const SpearmanResult& r) {
  return Json{{"rho", num(r.rho)}, {"p_value", num(r.p_value)}, {"n", r.n}, {"exact_p", r.exact_p}};
}

Json map_json(const MapResult& m) {
  Json per = Json::array();
  for (const auto& c : m.per_class) per.push_back(Json{{"label", c.label}, {"ap", num(c.ap)}});
  return Json{{"map", num(m.map)}, {"classes", m.per_class.size()}, {"excluded", m.excluded}, {"per_class", per}};
}

std::string pct(double v) { return fmt(100.0 * v, 2); }

std::string signed_pct(double v) { return (v >= 0 ? "+" : "") + fmt(100.0 * v, 2); }

void write_tsv_pairs(const fs::path& path, const std::vector<std::pair<std::string, std::string>>& rows) {
  std::string body;
  for (const auto& [a, b] : rows) body += a + "\t" + b + "\n";
  write_text(path, body);
}

// ---------------------------------------------------------------------------
// hierarchy validate

struct HierarchyArgs {
  std::string edges, names;
};

int cmd_hierarchy_validate(const Common& c, const HierarchyArgs& a) {
  prepare_out(c);
  Run run("hierarchy validate", c);
  const auto edges = read_edges(run.input("edges", a.edges));
  std::map<LabelId, std::string> names;
  if (!a.names.empty()) names = read_names(run.input("names", a.names));
  const auto h = Hierarchy::build(edges, names);

  std::vector<std::size_t> per_level(h.max_level() + 1, 0);
  for (std::size_t i = 0; i < h.size(); ++i) ++per_level[h.level(i)];
  Json rep;
  rep["nodes"] = h.size();
  rep["edges"] = edges.size();
  rep["roots"] = h.roots().size();
  rep["leaves"] = h.leaves().size();
  rep["max_level"] = h.max_level();
  rep["nodes_per_level"] = per_level;
  rep["warnings"] = h.warnings();

  TextTable t({"property", "value"});
  t.add({"nodes", std::to_string(h.size())});
  t.add({"edges", std::to_string(edges.size())});
  t.add({"roots", std::to_string(h.roots().size())});
  t.add({"leaves", std::to_string(h.leaves().size())});
  t.add({"max level", std::to_string(h.max_level())});
  std::string table = "hierarchy ok\n" + t.render();
  for (const auto& w : h.warnings()) table += "warning: " + w + "\n";
  run.finish(rep, table);
  return 0;
}

// ---------------------------------------------------------------------------
// two-level

struct TwoLevelArgs {
  std::string images, records, map, fg_prompts, cg_prompts;
  bool no_renorm = false;
};

int cmd_two_level(const Common& c, const TwoLevelArgs& a) {
  prepare_out(c);
  Run run("two-level", c);
  run.param("renormalize", !a.no_renorm);
  if (a.cg_prompts.empty()) fail(Errc::kMissingEmbedding, "--cg-prompts: a CG prompt table is required");
  const auto images = read_embeddings(run.input("images", a.images));
  const auto records = read_records(run.input("records", a.records));
  const auto map = read_two_level(run.input("map", a.map));
  const auto fg = ensemble_table(read_embeddings(run.input("fg_prompts", a.fg_prompts)), !a.no_renorm);
  const auto cg = ensemble_table(read_embeddings(run.input("cg_prompts", a.cg_prompts)), !a.no_renorm);
  const auto r = evaluate_two_level(images, records, map, fg, cg, !a.no_renorm, c.threads);

  Json rep;
  rep["images"] = r.images;
  rep["fg_direct"] = num(r.fg_direct);
  rep["cg_direct"] = num(r.cg_direct);
  rep["cg_fg_label"] = num(r.cg_fg_label);
  rep["cg_fg_label_delta"] = num(r.delta_label());
  rep["cg_fg_emb"] = num(r.cg_fg_emb);
  rep["cg_fg_emb_delta"] = num(r.delta_emb());
  rep["text_fg_to_cg_accuracy"] = num(r.text_classification);
  rep["warnings"] = map.warnings;

  TextTable t({"FG_direct", "CG_direct", "CG_FG-label (delta)", "CG_FG-emb (delta)", "text FG->CG"});
  t.add({pct(r.fg_direct), pct(r.cg_direct), pct(r.cg_fg_label) + " (" + signed_pct(r.delta_label()) + ")",
         pct(r.cg_fg_emb) + " (" + signed_pct(r.delta_emb()) + ")", pct(r.text_classification)});
  run.finish(rep, "top-1 accuracy (%), " + std::to_string(r.images) + " images\n" + t.render());
  return 0;
}

// ---------------------------------------------------------------------------
// multilevel

struct MultilevelArgs {
  std::string scores, images, prompts, records, edges, names;
  bool no_renorm = false;
};

int cmd_multilevel(const Common& c, const MultilevelArgs& a) {
  prepare_out(c);
  Run run("multilevel", c);
  run.param("renormalize", !a.no_renorm);
  const auto records = read_records(run.input("records", a.records));
  std::map<LabelId, std::string> names;
  if (!a.names.empty()) names = read_names(run.input("names", a.names));
  const auto h = Hierarchy::build(read_edges(run.input("edges", a.edges)), names);

  ScoreMatrix s;
  if (!a.scores.empty()) {
    s = read_scores(run.input("scores", a.scores));
  } else {
    if (a.images.empty() || a.prompts.empty()) {
      fail(Errc::kInvalidArgument, "give --scores, or --images with --prompts");
    }
    const auto images = read_embeddings(run.input("images", a.images));
    const auto table = ensemble_table(read_embeddings(run.input("prompts", a.prompts)), !a.no_renorm);
    s = cosine_scores(images, table.matrix, c.threads);
  }
  const auto r = evaluate_multilevel(s, records, h, c.threads);

  Json rep;
  rep["images"] = s.n_images;
  rep["leaves"] = map_json(r.leaves);
  Json anc = Json::object();
  for (const auto& [st, m] : r.ancestors) anc[std::string(strategy_name(st))] = map_json(m);
  rep["ancestors"] = anc;
  const double raw = r.ancestor(Strategy::kRaw).map;
  Json deltas = Json::object();
  for (const auto& [st, m] : r.ancestors) {
    if (st != Strategy::kRaw) deltas[std::string(strategy_name(st))] = num(m.map - raw);
  }
  rep["ancestor_deltas"] = deltas;

  TextTable t({"set", "mAP", "delta", "classes", "excluded"});
  t.add({"leaves", pct(r.leaves.map), "", std::to_string(r.leaves.per_class.size()),
         std::to_string(r.leaves.excluded.size())});
  for (const auto& [st, m] : r.ancestors) {
    t.add({"ancestor_" + std::string(strategy_name(st)), pct(m.map), st == Strategy::kRaw ? "" : signed_pct(m.map - raw),
           std::to_string(m.per_class.size()), std::to_string(m.excluded.size())});
  }
  std::string table = "multi-label mAP (%), " + std::to_string(s.n_images) + " images\n" + t.render();

  Csv per_class({"strategy", "label", "level", "ap"});
  for (const auto& cl : r.leaves.per_class) per_class.add({"leaf_direct", cl.label, std::to_string(h.level_of(cl.label)), fmt(cl.ap, 6)});
  Csv levels({"strategy", "level", "count", "min", "q1", "median", "q3", "max"});
  for (const auto& [st, m] : r.ancestors) {
    std::map<LabelId, double> per;
    for (const auto& cl : m.per_class) {
      per[cl.label] = cl.ap;
      per_class.add({std::string(strategy_name(st)), cl.label, std::to_string(h.level_of(cl.label)), fmt(cl.ap, 6)});
    }
    for (const auto& ls : level_stats(per, h)) {
      levels.add({std::string(strategy_name(st)), std::to_string(ls.level), std::to_string(ls.count), fmt(ls.min, 6),
                  fmt(ls.q1, 6), fmt(ls.median, 6), fmt(ls.q3, 6), fmt(ls.max, 6)});
    }
  }
  std::vector<std::pair<std::string, std::string>> delta_rows;
  for (const auto& [y, d] : r.delta_leaf) delta_rows.emplace_back(y, fmt(d, 9));
  write_tsv_pairs(run.path("delta_leaf.tsv"), delta_rows);
  write_text(run.path("per_class.csv"), per_class.str());
  write_text(run.path("level_stats.csv"), levels.str());
  run.finish(rep, table);
  return 0;
}

// ---------------------------------------------------------------------------
// retrieval

struct RetrievalArgs {
  std::string records, lexicon, names, images, texts, single_templates, multi_templates;
  std::size_t k = 100;
  std::size_t bins = 40;
};

int cmd_retrieval(const Common& c, const RetrievalArgs& a) {
  prepare_out(c);
  Run run("retrieval", c);
  run.param("seed", c.seed);
  run.param("k", a.k);
  run.param("histogram_bins", a.bins);
  const auto records = read_records(run.input("records", a.records));
  const auto lexicon = read_lexicon(run.input("lexicon", a.lexicon));
  auto names = a.names.empty() ? names_from_lexicon(lexicon) : read_names(run.input("names", a.names));

  GridConfig cfg;
  cfg.k = a.k;
  cfg.seed = c.seed;
  cfg.threads = c.threads;
  cfg.histogram_bins = a.bins;
  if (!a.single_templates.empty()) cfg.prompts.single = read_templates(run.input("single_templates", a.single_templates));
  if (!a.multi_templates.empty()) cfg.prompts.multi = read_templates(run.input("multi_templates", a.multi_templates));
  run.param("single_templates", cfg.prompts.single.templates());
  run.param("multi_templates", cfg.prompts.multi.templates());

  const NegativePool pool(records, lexicon, names);
  const auto tasks = build_tasks(pool, cfg);
  const auto manifest = collect_texts(tasks);
  write_tsv_pairs(run.path("texts_to_embed.tsv"), manifest);

  if (a.texts.empty()) {
    Json rep{{"status", "needs_text_embeddings"}, {"texts", manifest.size()}, {"manifest", "texts_to_embed.tsv"}};
    run.finish(rep, "wrote texts_to_embed.tsv with " + std::to_string(manifest.size()) +
                        " texts; embed them and rerun with --texts\n");
    return 0;
  }
  const auto images = read_embeddings(run.input("images", a.images));
  const auto texts = read_embeddings(run.input("texts", a.texts));
  check_alignment(images, records);
  const EmbeddingScorer scorer(images, texts);
  std::size_t missing = 0;
  for (const auto& [tid, text] : manifest) missing += scorer.has(tid) ? 0 : 1;
  if (missing > 0) {
    fail(Errc::kMissingTextScore, std::to_string(missing) + " of " + std::to_string(manifest.size()) +
                                      " texts have no embedding in " + a.texts + "; see texts_to_embed.tsv");
  }
  const auto rep_grid = evaluate_grid(tasks, scorer, records, cfg);

  Json rep;
  rep["status"] = "ok";
  rep["queries"] = rep_grid.queries;
  rep["texts"] = manifest.size();
  Json cells = Json::array();
  TextTable t({"positive \\ negative", "cap_random", "cap_relevant", "cap_error"});
  for (std::size_t p = 0; p < 3; ++p) {
    std::vector<std::string> row{std::string(kind_name(kPositiveKinds[p]))};
    for (std::size_t n = 0; n < 3; ++n) {
      const auto& cell = rep_grid.cells[p][n];
      cells.push_back(Json{{"positive", kind_name(cell.positive)},
                           {"negative", kind_name(cell.negative)},
                           {"map", num(cell.map)},
                           {"evaluated", cell.evaluated},
                           {"dropped", cell.dropped},
                           {"dropped_by_reason", cell.dropped_by_reason},
                           {"short_negative_sets", cell.short_negative_sets}});
      check_invariant(cell.evaluated + cell.dropped == rep_grid.queries, "query accounting does not add up");
      row.push_back(pct(cell.map));
    }
    t.add(row);
  }
  rep["grid"] = cells;

  Json kinds = Json::object();
  Csv hist({"kind", "bin_lo", "bin_hi", "count"});
  for (const auto& ks : rep_grid.kind_scores) {
    std::vector<double> v(ks.scores.begin(), ks.scores.end());
    Json k{{"count", v.size()}};
    if (!v.empty()) {
      k["min"] = num(quantile(v, 0.0));
      k["q1"] = num(quantile(v, 0.25));
      k["median"] = num(quantile(v, 0.5));
      k["q3"] = num(quantile(v, 0.75));
      k["max"] = num(quantile(v, 1.0));
    }
    kinds[std::string(kind_name(ks.kind))] = k;
    const auto h = make_histogram(ks.scores, cfg.histogram_bins);
    const double width = (h.hi - h.lo) / static_cast<double>(h.counts.size());
    for (std::size_t b = 0; b < h.counts.size(); ++b) {
      hist.add({std::string(kind_name(ks.kind)), fmt(h.lo + width * static_cast<double>(b), 6),
                fmt(h.lo + width * static_cast<double>(b + 1), 6), std::to_string(h.counts[b])});
    }
  }
  rep["score_distribution"] = kinds;
  write_text(run.path("histograms.csv"), hist.str());

  std::string area_line;
  try {
    const auto area = area_score_correlation(records, rep_grid.single_label_scores);
    Json ac;
    ac["mean_class_rho"] = num(area.mean_class_rho);
    ac["strong_classes"] = area.strong_classes;
    ac["pooled"] = area.pooled ? spearman_json(*area.pooled) : Json(nullptr);
    Json per = Json::array();
    Csv area_csv({"label", "n", "rho", "p_value", "status"});
    for (const auto& cc : area.per_class) {
      per.push_back(Json{{"label", cc.label},
                         {"n", cc.n},
                         {"status", cc.status},
                         {"spearman", cc.result ? spearman_json(*cc.result) : Json(nullptr)}});
      area_csv.add({cc.label, std::to_string(cc.n), cc.result ? fmt(cc.result->rho, 6) : "",
                    cc.result ? fmt(cc.result->p_value, 6) : "", cc.status});
    }
    ac["per_class"] = per;
    rep["area_correlation"] = ac;
    write_text(run.path("area_correlation.csv"), area_csv.str());
    area_line = "area vs single-label score: mean class rho " + fmt(area.mean_class_rho) + ", strong classes " +
                std::to_string(area.strong_classes) + "\n";
  } catch (const Error& e) {
    if (e.code() != Errc::kMissingBoxes) throw;
    rep["area_correlation"] = Json{{"skipped", e.what()}};
    area_line = "area analysis skipped: " + std::string(e.what()) + "\n";
  }
  run.finish(rep, "retrieval mAP (%), " + std::to_string(rep_grid.queries) + " queries, k = " +
                      std::to_string(a.k) + "\n" + t.render() + area_line);
  return 0;
}

// ---------------------------------------------------------------------------
// perturb

struct PerturbArgs {
  std::string caption, labels, records, lexicon, names;
};

Json item_json(const TextItem& item) {
  const auto& p = *item.provenance;
  return Json{{"perturbed", item.text},
              {"span_begin", p.span_begin},
              {"span_end", p.span_end},
              {"original", p.original},
              {"replacement", p.replacement},
              {"replacement_label", p.replacement_label}};
}

int cmd_perturb(const Common& c, const PerturbArgs& a) {
  prepare_out(c);
  Run run("perturb", c);
  run.param("seed", c.seed);
  const auto lexicon = read_lexicon(run.input("lexicon", a.lexicon));
  const auto names = a.names.empty() ? names_from_lexicon(lexicon) : read_names(run.input("names", a.names));
  const LexiconMatcher matcher(lexicon);
  const std::uint64_t base = derive_seed(c.seed, "perturb");

  if (a.records.empty()) {
    if (a.caption.empty()) fail(Errc::kInvalidArgument, "give --caption or --records");
    run.param("caption", a.caption);
    run.param("labels", a.labels);
    std::vector<LabelId> labels;
    std::stringstream ss(a.labels);
    for (std::string y; std::getline(ss, y, ',');) {
      if (!y.empty()) labels.push_back(y);
    }
    const auto item = perturb_caption(a.caption, labels, lexicon, matcher, names, base);
    Json rep = item_json(item);
    rep["caption"] = a.caption;
    run.finish(rep, item.text + "\n");
    return 0;
  }

  const auto records = read_records(run.input("records", a.records));
  std::vector<std::size_t> first(records.size() + 1, 0);
  for (std::size_t r = 0; r < records.size(); ++r) first[r + 1] = first[r] + records[r].captions.size();
  std::vector<Json> lines(first.back());
  parallel_for(records.size(), c.threads, [&](std::size_t r) {
    const auto& rec = records[r];
    for (std::size_t ci = 0; ci < rec.captions.size(); ++ci) {
      Json j{{"image_id", rec.image_id}, {"caption_index", ci}, {"caption", rec.captions[ci]}};
      try {
        const auto* spans = rec.entity_spans.empty() ? nullptr : &rec.entity_spans[ci];
        const auto item = perturb_caption(rec.captions[ci], rec.labels, lexicon, matcher, names,
                                          derive_seed(base, first[r] + ci), spans);
        j.update(item_json(item));
      } catch (const Error& e) {
        if (e.code() != Errc::kNoReplaceableSpan && e.code() != Errc::kEmptyReplacementPool) throw;
        j["error"] = errc_name(e.code());
      }
      lines[first[r] + ci] = std::move(j);
    }
  });
  std::string body;
  std::map<std::string, std::size_t> errors;
  std::size_t ok = 0;
  for (const auto& j : lines) {
    body += j.dump() + "\n";
    if (j.contains("error")) {
      ++errors[j["error"].get<std::string>()];
    } else {
      ++ok;
    }
  }
  write_text(run.path("perturbed.jsonl"), body);
  Json rep{{"captions", lines.size()}, {"perturbed", ok}, {"skipped_by_reason", errors}};
  TextTable t({"captions", "perturbed", "skipped"});
  t.add({std::to_string(lines.size()), std::to_string(ok), std::to_string(lines.size() - ok)});
  run.finish(rep, t.render());
  return 0;
}

// ---------------------------------------------------------------------------
// freq

struct FreqArgs {
  std::string edges, names, lexicon, shards, retrieved, delta_leaf;
  bool literal = false;
};

int cmd_freq(const Common& c, const FreqArgs& a) {
  prepare_out(c);
  Run run("freq", c);
  run.param("literal_freq_gap", a.literal);
  std::map<LabelId, std::string> names;
  if (!a.names.empty()) names = read_names(run.input("names", a.names));
  const auto h = Hierarchy::build(read_edges(run.input("edges", a.edges)), names);
  const auto lexicon = read_lexicon(run.input("lexicon", a.lexicon));
  const auto shards = read_shard_manifest(run.input("shards", a.shards));
  for (std::size_t i = 0; i < shards.size(); ++i) run.input("shard_" + std::to_string(i), shards[i].path);
  const auto retrieved = read_retrieved_counts(run.input("retrieved", a.retrieved));

  const auto mentions = count_shards(shards, lexicon, c.threads);
  const auto counts = ancestor_aggregate(h, leaf_counts(h, retrieved, mentions), mentions);
  const auto freq = class_frequency(counts);
  auto gap = frequency_gap(h, counts, a.literal);

  Json rep;
  rep["captions"] = mentions.captions;
  rep["shards"] = shards.size();
  rep["formula"] = a.literal ? "literal" : "mentions";
  Json classes = Json::array();
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto& y = h.id(i);
    const auto& cc = counts.at(y);
    auto q = freq.q.find(y);
    classes.push_back(Json{{"label", y},
                           {"level", h.level(i)},
                           {"n", cc.n},
                           {"m", cc.m},
                           {"m_self", cc.m_self},
                           {"q", q == freq.q.end() ? Json(nullptr) : num(q->second)}});
  }
  rep["classes"] = classes;
  rep["undefined_gap"] = gap.undefined;

  std::optional<GapCorrelation> corr;
  if (!a.delta_leaf.empty()) {
    std::map<LabelId, double> delta;
    detail::read_tsv(run.input("delta_leaf", a.delta_leaf), "delta",
                     [&](const std::vector<std::string>& f, const std::string& where) {
                       if (f.size() != 2) fail(Errc::kParseError, where + ": expected label<TAB>delta");
                       try {
                         delta[f[0]] = std::stod(f[1]);
                       } catch (const std::exception&) {
                         fail(Errc::kParseError, where + ": bad delta '" + f[1] + "'");
                       }
                     });
    corr = correlate_gap_vs_delta(gap, delta);
    for (auto& e : gap.entries) {
      if (auto it = delta.find(e.label); it != delta.end()) e.delta_leaf = it->second;
    }
    rep["correlation"] = spearman_json(corr->spearman);
  }

  Json entries = Json::array();
  Csv scatter({"label", "level", "freq_gap", "delta_leaf"});
  TextTable t({"ancestor", "level", "n", "m", "m_self", "freq_gap", "delta_leaf"});
  for (const auto& e : gap.entries) {
    const auto& cc = counts.at(e.label);
    entries.push_back(Json{{"label", e.label},
                           {"level", e.level},
                           {"freq_gap", e.gap ? num(*e.gap) : Json(nullptr)},
                           {"delta_leaf", e.delta_leaf ? num(*e.delta_leaf) : Json(nullptr)}});
    scatter.add({e.label, std::to_string(e.level), e.gap ? fmt(*e.gap, 6) : "", e.delta_leaf ? fmt(*e.delta_leaf, 6) : ""});
    t.add({e.label, std::to_string(e.level), std::to_string(cc.n), std::to_string(cc.m), std::to_string(cc.m_self),
           e.gap ? fmt(*e.gap) : "undef", e.delta_leaf ? fmt(*e.delta_leaf) : ""});
  }
  rep["gaps"] = entries;
  write_text(run.path("scatter.csv"), scatter.str());
  std::string table = "frequency gap over " + std::to_string(mentions.captions) + " captions\n" + t.render();
  if (corr) {
    table += "spearman(freq_gap, delta_leaf) = " + fmt(corr->spearman.rho) + ", p = " + fmt(corr->spearman.p_value) +
             ", n = " + std::to_string(corr->spearman.n) + "\n";
  }
  run.finish(rep, table);
  return 0;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string kind = "two-level";
  WorldSpec world;
  RetrievalWorldSpec retrieval;
  std::size_t k = 100;
};

void write_lexicon(const fs::path& path, const std::map<LabelId, std::string>& names) {
  std::vector<std::pair<std::string, std::string>> rows(names.begin(), names.end());
  write_tsv_pairs(path, rows);
}

int cmd_synth(const Common& c, SynthArgs a) {
  prepare_out(c);
  Run run("synth", c);
  run.param("kind", a.kind);
  Json rep;
  std::string table;
  if (a.kind == "two-level") {
    a.world.seed = c.seed;
    const auto& s = a.world;
    run.param("n_cg", s.n_cg);
    run.param("fg_per_cg", s.fg_per_cg);
    run.param("images_per_fg", s.images_per_fg);
    run.param("dim", s.dim);
    run.param("ancestor_noise", s.ancestor_noise);
    run.param("image_noise", s.image_noise);
    run.param("seed", s.seed);
    const auto w = make_world(s);
    std::string edges;
    for (const auto& e : w.hierarchy.to_edges()) edges += e.child + "\t" + e.parent + "\n";
    write_text(run.path("edges.tsv"), edges);
    write_lexicon(run.path("names.tsv"), w.names);
    write_lexicon(run.path("lexicon.tsv"), w.names);
    std::vector<std::pair<std::string, std::string>> map_rows;
    for (const auto& e : w.map.to_edges()) map_rows.emplace_back(e.parent, e.child);
    write_tsv_pairs(run.path("two_level.tsv"), map_rows);
    write_records(w.records, run.path("records.jsonl").string());
    write_matrix(w.images, run.path("images.vleb").string());
    write_matrix(w.fg_table.matrix, run.path("fg_prompts.vleb").string());
    write_matrix(w.cg_table.matrix, run.path("cg_prompts.vleb").string());
    write_matrix(w.all_classes().matrix, run.path("class_prompts.vleb").string());

    CorpusSpec cs;
    cs.seed = s.seed;
    const auto corpus = make_caption_corpus(w, cs);
    fs::create_directories(run.path("shards"));
    std::string manifest, retrieved;
    for (const auto& [scope, caps] : corpus.shards) {
      std::string body;
      for (const auto& cap : caps) body += cap + "\n";
      write_text(run.path("shards") / (scope + ".txt"), body);
      manifest += "shards/" + scope + ".txt\t" + std::to_string(caps.size()) + "\t" + scope + "\n";
      retrieved += scope + "\t" + std::to_string(corpus.retrieved.at(scope)) + "\n";
    }
    write_text(run.path("shards.tsv"), manifest);
    write_text(run.path("retrieved.tsv"), retrieved);
    rep = Json{{"kind", a.kind}, {"images", w.images.rows}, {"fg_classes", w.fg_table.size()},
               {"cg_classes", w.cg_table.size()}, {"shards", corpus.shards.size()}};
    table = "two-level world: " + std::to_string(w.images.rows) + " images, " + std::to_string(w.fg_table.size()) +
            " FG / " + std::to_string(w.cg_table.size()) + " CG classes\n";
  } else if (a.kind == "retrieval") {
    a.retrieval.seed = c.seed;
    const auto& s = a.retrieval;
    run.param("n_labels", s.n_labels);
    run.param("n_images", s.n_images);
    run.param("dim", s.dim);
    run.param("w_single", s.w_single);
    run.param("w_multi", s.w_multi);
    run.param("w_caption", s.w_caption);
    run.param("w_error", s.w_error);
    run.param("text_noise", s.text_noise);
    run.param("seed", s.seed);
    run.param("k", a.k);
    GridConfig g;
    g.k = a.k;
    g.seed = c.seed;
    g.threads = c.threads;
    const auto w = make_retrieval_world(s, g);
    write_records(w.records, run.path("records.jsonl").string());
    write_lexicon(run.path("lexicon.tsv"), w.names);
    write_lexicon(run.path("names.tsv"), w.names);
    write_matrix(w.images, run.path("images.vleb").string());
    write_matrix(w.texts, run.path("texts.vleb").string());
    rep = Json{{"kind", a.kind}, {"images", w.images.rows}, {"texts", w.texts.rows}};
    table = "retrieval world: " + std::to_string(w.images.rows) + " images, " + std::to_string(w.texts.rows) +
            " texts embedded for seed " + std::to_string(c.seed) + ", k " + std::to_string(a.k) + "\n";
  } else {
    fail(Errc::kInvalidArgument, "--kind must be two-level or retrieval");
  }
  run.finish(rep, table);
  return 0;
}

// ---------------------------------------------------------------------------
// score

struct ScoreArgs {
  std::string mode = "cosine";
  std::string images, texts, prompts, names, templates, classes;
  bool no_renorm = false;
};

int cmd_score(const Common& c, const ScoreArgs& a) {
  prepare_out(c);
  Run run("score", c);
  run.param("mode", a.mode);
  Json rep{{"mode", a.mode}};
  std::string table;
  if (a.mode == "cosine") {
    const auto img = read_embeddings(run.input("images", a.images));
    const auto txt = read_embeddings(run.input("texts", a.texts));
    const auto s = cosine_scores(img, txt, c.threads);
    write_matrix(s, run.path("scores.vleb").string());
    rep["images"] = s.n_images;
    rep["texts"] = s.n_texts;
    table = "wrote scores.vleb (" + std::to_string(s.n_images) + " x " + std::to_string(s.n_texts) + ")\n";
  } else if (a.mode == "ensemble") {
    run.param("renormalize", !a.no_renorm);
    const auto t = ensemble_table(read_embeddings(run.input("prompts", a.prompts)), !a.no_renorm);
    write_matrix(t.matrix, run.path("class_table.vleb").string());
    rep["classes"] = t.size();
    table = "wrote class_table.vleb (" + std::to_string(t.size()) + " classes)\n";
  } else if (a.mode == "manifest") {
    const auto names = read_names(run.input("names", a.names));
    const auto templates = a.templates.empty() ? PromptTemplateSet() : read_templates(run.input("templates", a.templates));
    run.param("templates", templates.templates());
    std::vector<LabelId> classes;
    if (a.classes.empty()) {
      for (const auto& [y, n] : names) classes.push_back(y);
    } else {
      detail::read_tsv(run.input("classes", a.classes), "classes",
                       [&](const std::vector<std::string>& f, const std::string&) { classes.push_back(f[0]); });
    }
    const auto manifest = class_prompt_manifest(classes, names, templates);
    write_tsv_pairs(run.path("prompts_to_embed.tsv"), manifest);
    rep["prompts"] = manifest.size();
    table = "wrote prompts_to_embed.tsv (" + std::to_string(manifest.size()) + " prompts)\n";
  } else {
    fail(Errc::kInvalidArgument, "--mode must be cosine, ensemble or manifest");
  }
  run.finish(rep, table);
  return 0;
}

int exit_code_for(Errc code) { return code == Errc::kInvariantViolation ? 3 : 2; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchy-aware zero-shot evaluation for vision-language embeddings"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", common.out, "output directory")->required();
    sub->add_option("--seed", common.seed, "root seed");
    sub->add_option("--threads", common.threads, "worker threads")->check(CLI::Range(1u, 1024u));
  };

  auto* hier = app.add_subcommand("hierarchy", "hierarchy tools");
  hier->require_subcommand(1);
  auto* validate = hier->add_subcommand("validate", "check a hierarchy for cycles and summarize it");
  HierarchyArgs ha;
  add_common(validate);
  validate->add_option("--edges", ha.edges, "child<TAB>parent edge file")->required();
  validate->add_option("--names", ha.names, "label<TAB>name file");

  auto* two = app.add_subcommand("two-level", "FG/CG top-1 accuracy with label and embedding propagation");
  TwoLevelArgs ta;
  add_common(two);
  two->add_option("--images", ta.images, "image embeddings (.vleb)")->required();
  two->add_option("--records", ta.records, "image records (.jsonl)")->required();
  two->add_option("--map", ta.map, "cg<TAB>fg map")->required();
  two->add_option("--fg-prompts", ta.fg_prompts, "FG prompt embeddings (.vleb)")->required();
  two->add_option("--cg-prompts", ta.cg_prompts, "CG prompt embeddings (.vleb)");
  two->add_flag("--no-renorm", ta.no_renorm, "keep plain means when averaging embeddings");

  auto* multi = app.add_subcommand("multilevel", "multi-label mAP with score propagation");
  MultilevelArgs ma;
  add_common(multi);
  multi->add_option("--scores", ma.scores, "score matrix (.vleb)");
  multi->add_option("--images", ma.images, "image embeddings (.vleb)");
  multi->add_option("--prompts", ma.prompts, "class prompt embeddings (.vleb)");
  multi->add_option("--records", ma.records, "image records (.jsonl)")->required();
  multi->add_option("--edges", ma.edges, "child<TAB>parent edge file")->required();
  multi->add_option("--names", ma.names, "label<TAB>name file");
  multi->add_flag("--no-renorm", ma.no_renorm, "keep plain means when averaging embeddings");

  auto* retr = app.add_subcommand("retrieval", "image-to-text retrieval grid over hard positives and negatives");
  RetrievalArgs ra;
  add_common(retr);
  retr->add_option("--records", ra.records, "image records (.jsonl)")->required();
  retr->add_option("--lexicon", ra.lexicon, "label<TAB>synonym lexicon")->required();
  retr->add_option("--names", ra.names, "label<TAB>name file");
  retr->add_option("--images", ra.images, "image embeddings (.vleb)")->required();
  retr->add_option("--texts", ra.texts, "text embeddings keyed by text id (.vleb)");
  retr->add_option("--single-templates", ra.single_templates, "single-label prompt templates");
  retr->add_option("--multi-templates", ra.multi_templates, "multi-label prompt templates");
  retr->add_option("--k", ra.k, "negatives per query")->check(CLI::PositiveNumber);
  retr->add_option("--bins", ra.bins, "histogram bins")->check(CLI::PositiveNumber);

  auto* pert = app.add_subcommand("perturb", "replace one entity in a caption");
  PerturbArgs pa;
  add_common(pert);
  pert->add_option("--caption", pa.caption, "caption text");
  pert->add_option("--labels", pa.labels, "comma-separated image labels");
  pert->add_option("--records", pa.records, "perturb every caption of these records");
  pert->add_option("--lexicon", pa.lexicon, "label<TAB>synonym lexicon")->required();
  pert->add_option("--names", pa.names, "label<TAB>name file");

  auto* freq = app.add_subcommand("freq", "class-name frequency gap in caption shards");
  FreqArgs fa;
  add_common(freq);
  freq->add_option("--edges", fa.edges, "child<TAB>parent edge file")->required();
  freq->add_option("--names", fa.names, "label<TAB>name file");
  freq->add_option("--lexicon", fa.lexicon, "label<TAB>synonym lexicon")->required();
  freq->add_option("--shards", fa.shards, "shard manifest: path<TAB>count[<TAB>scope]")->required();
  freq->add_option("--retrieved", fa.retrieved, "label<TAB>retrieved-image count")->required();
  freq->add_option("--delta-leaf", fa.delta_leaf, "label<TAB>delta from multilevel");
  freq->add_flag("--literal-freq-gap", fa.literal, "use the literal count-difference formula");

  auto* syn = app.add_subcommand("synth", "write a synthetic world directory");
  SynthArgs sa;
  add_common(syn);
  syn->add_option("--kind", sa.kind, "two-level or retrieval");
  syn->add_option("--n-cg", sa.world.n_cg);
  syn->add_option("--fg-per-cg", sa.world.fg_per_cg);
  syn->add_option("--images-per-fg", sa.world.images_per_fg);
  syn->add_option("--dim", sa.world.dim, "two-level embedding dimension");
  syn->add_option("--epsilon", sa.world.ancestor_noise, "CG prompt noise");
  syn->add_option("--sigma", sa.world.image_noise, "image noise");
  syn->add_option("--n-labels", sa.retrieval.n_labels);
  syn->add_option("--n-images", sa.retrieval.n_images);
  syn->add_option("--retrieval-dim", sa.retrieval.dim);
  syn->add_option("--w-single", sa.retrieval.w_single);
  syn->add_option("--w-multi", sa.retrieval.w_multi);
  syn->add_option("--w-caption", sa.retrieval.w_caption);
  syn->add_option("--w-error", sa.retrieval.w_error);
  syn->add_option("--text-noise", sa.retrieval.text_noise);
  syn->add_option("--k", sa.k, "negatives per query the texts are embedded for");

  auto* score = app.add_subcommand("score", "cosine scores, template ensembles and prompt manifests");
  ScoreArgs sc;
  add_common(score);
  score->add_option("--mode", sc.mode, "cosine, ensemble or manifest");
  score->add_option("--images", sc.images, "image embeddings (.vleb)");
  score->add_option("--texts", sc.texts, "text embeddings (.vleb)");
  score->add_option("--prompts", sc.prompts, "per-template prompt embeddings keyed class#t");
  score->add_option("--names", sc.names, "label<TAB>name file");
  score->add_option("--templates", sc.templates, "prompt templates, one per line");
  score->add_option("--classes", sc.classes, "class ids, one per line");
  score->add_flag("--no-renorm", sc.no_renorm, "keep plain means");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*validate) return cmd_hierarchy_validate(common, ha);
    if (*two) return cmd_two_level(common, ta);
    if (*multi) return cmd_multilevel(common, ma);
    if (*retr) return cmd_retrieval(common, ra);
    if (*pert) return cmd_perturb(common, pa);
    if (*freq) return cmd_freq(common, fa);
    if (*syn) return cmd_synth(common, sa);
    if (*score) return cmd_score(common, sc);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
