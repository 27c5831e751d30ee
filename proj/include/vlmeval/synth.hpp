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

// Synthetic worlds with analytically known answers.
//
// Two-level world: FG prompt rows are orthonormal centers; each CG prompt row
// is the normalized mean of its children plus `ancestor_noise` times a
// standard normal vector, renormalized. Image embeddings are their FG center
// plus `image_noise` times a standard normal vector projected onto the
// orthogonal complement of the centers, renormalized. Image noise therefore
// never changes which FG prompt wins, while noisy CG prompts pick up its
// off-span components.
//
// Retrieval world: label directions, one private direction per image and a
// spare subspace for text-specific directions. Each text kind is placed so its
// noiseless cosine with the query image equals a planted weight.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <span>
#include <map>
#include <string>
#include <vector>

#include "vlmeval/error.hpp"
#include "vlmeval/hierarchy.hpp"
#include "vlmeval/retrieval.hpp"
#include "vlmeval/rng.hpp"
#include "vlmeval/scoring.hpp"
#include "vlmeval/tensor_store.hpp"
#include "vlmeval/text_match.hpp"

namespace vlmeval {

/// Pronounceable, distinct for index < 12^3.
inline std::string synth_name(std::size_t index) {
  static constexpr const char* kSyl[] = {"ka", "lo", "mi", "ru", "se", "ta", "vo", "ne", "pi", "du", "ge", "zo"};
  std::string out;
  std::size_t v = index;
  for (int i = 0; i < 3; ++i) {
    out += kSyl[v % 12];
    v /= 12;
  }
  return out;
}

namespace detail {

inline std::vector<double> normal_vector(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  for (double& x : v) x = rng.normal();
  return v;
}

inline double dotd(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline void normalize_d(std::vector<double>& v) {
  const double n = std::sqrt(dotd(v, v));
  check_invariant(n > 0, "cannot normalize a zero vector");
  for (double& x : v) x /= n;
}

inline void project_out(std::vector<double>& v, const std::vector<std::vector<double>>& basis) {
  // Two passes of modified Gram-Schmidt keep the residual orthogonal to ~1e-15.
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& b : basis) {
      const double c = dotd(v, b);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * b[i];
    }
  }
}

/// `count` orthonormal vectors from seeded Gaussian draws.
inline std::vector<std::vector<double>> orthonormal_set(Rng& rng, std::size_t count, std::size_t dim) {
  std::vector<std::vector<double>> basis;
  while (basis.size() < count) {
    auto v = normal_vector(rng, dim);
    project_out(v, basis);
    if (std::sqrt(dotd(v, v)) < 1e-6) continue;
    normalize_d(v);
    basis.push_back(std::move(v));
  }
  return basis;
}

inline void store_row(EmbeddingMatrix& m, std::size_t r, const std::vector<double>& v) {
  auto row = m.row(r);
  for (std::size_t i = 0; i < v.size(); ++i) row[i] = static_cast<float>(v[i]);
}

}  // namespace detail

struct WorldSpec {
  std::size_t n_cg = 4;
  std::size_t fg_per_cg = 4;
  std::size_t images_per_fg = 50;
  std::size_t dim = 64;
  double ancestor_noise = 0;
  double image_noise = 0;
  std::uint64_t seed = 7;
};

struct SynthWorld {
  WorldSpec spec;
  TwoLevelMap map;
  Hierarchy hierarchy;
  std::map<LabelId, std::string> names;
  ClassEmbeddingTable fg_table;
  ClassEmbeddingTable cg_table;
  EmbeddingMatrix images;
  std::vector<ImageRecord> records;
  Lexicon lexicon;

  /// FG rows followed by CG rows, for multi-level scoring.
  ClassEmbeddingTable all_classes() const {
    ClassEmbeddingTable t{EmbeddingMatrix(fg_table.size() + cg_table.size(), fg_table.matrix.dim)};
    t.matrix.data = fg_table.matrix.data;
    t.matrix.data.insert(t.matrix.data.end(), cg_table.matrix.data.begin(), cg_table.matrix.data.end());
    t.matrix.keys = fg_table.matrix.keys;
    t.matrix.keys.insert(t.matrix.keys.end(), cg_table.matrix.keys.begin(), cg_table.matrix.keys.end());
    return t;
  }
};

inline SynthWorld make_world(const WorldSpec& spec) {
  if (spec.n_cg == 0 || spec.fg_per_cg == 0 || spec.images_per_fg == 0) {
    fail(Errc::kInvalidArgument, "world counts must be >= 1");
  }
  if (spec.ancestor_noise < 0 || spec.image_noise < 0) fail(Errc::kInvalidArgument, "noise must be >= 0");
  const std::size_t n_fg = spec.n_cg * spec.fg_per_cg;
  if (spec.dim < n_fg) {
    fail(Errc::kDimTooSmall, "dim " + std::to_string(spec.dim) + " < " + std::to_string(n_fg) + " FG classes");
  }
  if (n_fg + spec.n_cg > 12 * 12 * 12) fail(Errc::kInvalidArgument, "too many classes for synthetic names");

  SynthWorld w;
  w.spec = spec;
  char buf[32];
  for (std::size_t c = 0; c < spec.n_cg; ++c) {
    std::snprintf(buf, sizeof buf, "cg%02zu", c);
    const LabelId cg = buf;
    w.map.cg_classes.push_back(cg);
    w.names[cg] = synth_name(c);
    auto& kids = w.map.fg_children[cg];
    for (std::size_t f = 0; f < spec.fg_per_cg; ++f) {
      std::snprintf(buf, sizeof buf, "fg%02zu_%02zu", c, f);
      kids.push_back(buf);
      w.names[buf] = synth_name(spec.n_cg + c * spec.fg_per_cg + f);
    }
  }
  w.hierarchy = Hierarchy::build(w.map.to_edges(), w.names);
  const auto fg_ids = w.map.fg_classes();

  Rng center_rng(derive_seed(spec.seed, "centers"));
  const auto centers = detail::orthonormal_set(center_rng, n_fg, spec.dim);

  w.fg_table.matrix = EmbeddingMatrix(n_fg, spec.dim);
  for (std::size_t f = 0; f < n_fg; ++f) {
    w.fg_table.matrix.keys[f] = fg_ids[f];
    detail::store_row(w.fg_table.matrix, f, centers[f]);
  }

  // CG rows start from the same float mean cg_embedding_from_fg computes.
  const auto plain = cg_embedding_from_fg(w.map, w.fg_table, true);
  Rng cg_rng(derive_seed(spec.seed, "cg-noise"));
  w.cg_table.matrix = EmbeddingMatrix(spec.n_cg, spec.dim);
  for (std::size_t c = 0; c < spec.n_cg; ++c) {
    w.cg_table.matrix.keys[c] = w.map.cg_classes[c];
    const auto noise = detail::normal_vector(cg_rng, spec.dim);
    if (spec.ancestor_noise == 0) {
      std::copy(plain.matrix.row(c).begin(), plain.matrix.row(c).end(), w.cg_table.matrix.row(c).begin());
      continue;
    }
    std::vector<double> v(spec.dim);
    for (std::size_t d = 0; d < spec.dim; ++d) v[d] = plain.matrix.row(c)[d] + spec.ancestor_noise * noise[d];
    detail::normalize_d(v);
    detail::store_row(w.cg_table.matrix, c, v);
  }

  const std::size_t n_images = n_fg * spec.images_per_fg;
  Rng img_rng(derive_seed(spec.seed, "image-noise"));
  w.images = EmbeddingMatrix(n_images, spec.dim);
  for (std::size_t f = 0, r = 0; f < n_fg; ++f) {
    for (std::size_t k = 0; k < spec.images_per_fg; ++k, ++r) {
      auto noise = detail::normal_vector(img_rng, spec.dim);
      detail::project_out(noise, centers);
      std::vector<double> v(spec.dim);
      for (std::size_t d = 0; d < spec.dim; ++d) v[d] = centers[f][d] + spec.image_noise * noise[d];
      detail::normalize_d(v);
      std::snprintf(buf, sizeof buf, "img%05zu", r);
      w.images.keys[r] = buf;
      detail::store_row(w.images, r, v);

      ImageRecord rec;
      rec.image_id = buf;
      rec.width = 64;
      rec.height = 48;
      rec.labels = {fg_ids[f]};
      const double side = 8.0 + static_cast<double>(k % 5) * 8.0;
      rec.boxes.push_back({fg_ids[f], 0, 0, side, std::min(side, rec.height)});
      const auto& fg_name = w.names[fg_ids[f]];
      rec.captions = {"a " + fg_name + " in picture " + std::to_string(r),
                      "a photo showing one " + fg_name + " number " + std::to_string(k)};
      w.records.push_back(std::move(rec));
    }
  }
  for (const auto& [id, name] : w.names) w.lexicon.add(id, name);
  return w;
}

/// Caption corpus planted on top of a two-level world: each FG class gets one
/// scoped shard of `captions_per_leaf` captions; of these, a seeded number in
/// [leaf_min, leaf_max] name the FG class and [self_min, self_max] name its CG
/// parent, the rest name neither.
struct CorpusSpec {
  std::size_t captions_per_leaf = 40;
  std::size_t leaf_min = 18, leaf_max = 30;
  std::size_t self_min = 4, self_max = 10;
  std::uint64_t seed = 7;
};

struct SynthCorpus {
  std::map<LabelId, std::vector<std::string>> shards;  // scope -> captions
  std::map<LabelId, std::uint64_t> retrieved;          // n per leaf
};

inline SynthCorpus make_caption_corpus(const SynthWorld& w, const CorpusSpec& spec) {
  if (spec.leaf_max + spec.self_max > spec.captions_per_leaf || spec.leaf_min > spec.leaf_max ||
      spec.self_min > spec.self_max) {
    fail(Errc::kInvalidArgument, "corpus mention counts do not fit captions_per_leaf");
  }
  SynthCorpus out;
  Rng rng(derive_seed(spec.seed, "corpus"));
  const auto parent = w.map.fg_parent();
  for (const auto& fg : w.map.fg_classes()) {
    const std::size_t leaf = spec.leaf_min + rng.below(spec.leaf_max - spec.leaf_min + 1);
    const std::size_t self = spec.self_min + rng.below(spec.self_max - spec.self_min + 1);
    std::vector<std::string> caps;
    for (std::size_t i = 0; i < spec.captions_per_leaf; ++i) {
      const std::string tag = " seen in photo " + std::to_string(i);
      if (i < leaf) {
        caps.push_back("a " + w.names.at(fg) + tag);
      } else if (i < leaf + self) {
        caps.push_back("some " + w.names.at(parent.at(fg)) + tag);
      } else {
        caps.push_back("an object" + tag);
      }
    }
    shuffle(rng, std::span<std::string>(caps));
    out.shards[fg] = std::move(caps);
    out.retrieved[fg] = spec.captions_per_leaf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Retrieval world

struct RetrievalWorldSpec {
  std::size_t n_labels = 8;
  std::size_t n_images = 40;
  std::size_t min_labels = 2;
  std::size_t max_labels = 3;
  std::size_t captions_per_image = 3;
  std::size_t dim = 128;
  /// Planted noiseless cosine with the query image per text kind.
  double w_single = 0.3;
  double w_multi = 0.6;
  double w_caption = 0.9;
  double w_error = 0.9;
  double text_noise = 0;
  std::uint64_t seed = 7;
};

struct RetrievalWorld {
  RetrievalWorldSpec spec;
  std::vector<ImageRecord> records;
  std::map<LabelId, std::string> names;
  Lexicon lexicon;
  EmbeddingMatrix images;
  EmbeddingMatrix texts;  // keyed by text_id
};

/// Builds the world and embeds every text a grid run with `grid` will use.
inline RetrievalWorld make_retrieval_world(const RetrievalWorldSpec& spec, const GridConfig& grid) {
  if (!(spec.w_single <= spec.w_multi && spec.w_multi <= spec.w_caption)) {
    fail(Errc::kInvalidArgument, "weights must be non-decreasing in label count");
  }
  if (spec.min_labels == 0 || spec.min_labels > spec.max_labels || spec.max_labels > spec.n_labels ||
      spec.n_images == 0 || spec.captions_per_image == 0) {
    fail(Errc::kInvalidArgument, "bad label or image counts");
  }
  const std::size_t needed = spec.n_labels + spec.n_images + 1;
  if (spec.dim < needed) {
    fail(Errc::kDimTooSmall, "dim " + std::to_string(spec.dim) + " < " + std::to_string(needed));
  }
  // Label weight inside an image embedding; leaves room for a private part.
  const double p = 1.0 / std::sqrt(static_cast<double>(spec.max_labels) + 1.0);
  const double single_coef = spec.w_single / p;
  const double multi_max = p * std::sqrt(static_cast<double>(spec.min_labels));
  if (single_coef > 1.0 || spec.w_multi > multi_max || spec.w_caption > 1.0 || spec.w_error > 1.0 ||
      spec.w_single < 0) {
    fail(Errc::kInvalidArgument, "weights not reachable with this label layout");
  }

  RetrievalWorld w;
  w.spec = spec;
  char buf[32];
  std::vector<LabelId> label_ids;
  for (std::size_t a = 0; a < spec.n_labels; ++a) {
    std::snprintf(buf, sizeof buf, "lab%02zu", a);
    label_ids.push_back(buf);
    w.names[buf] = synth_name(a);
    w.lexicon.add(buf, synth_name(a));
  }

  Rng rng(derive_seed(spec.seed, "retrieval-world"));
  w.images = EmbeddingMatrix(spec.n_images, spec.dim);
  for (std::size_t i = 0; i < spec.n_images; ++i) {
    ImageRecord rec;
    std::snprintf(buf, sizeof buf, "rimg%04zu", i);
    rec.image_id = buf;
    rec.width = 100;
    rec.height = 100;
    const std::size_t count = spec.min_labels + rng.below(spec.max_labels - spec.min_labels + 1);
    for (std::size_t idx : sample_without_replacement(rng, spec.n_labels, count)) rec.labels.push_back(label_ids[idx]);
    for (std::size_t b = 0; b < rec.labels.size(); ++b) {
      rec.boxes.push_back({rec.labels[b], 0, 0, 10.0 + 10.0 * static_cast<double>(b), 20});
    }
    for (std::size_t c = 0; c < spec.captions_per_image; ++c) {
      const auto& a = w.names[rec.labels[c % rec.labels.size()]];
      const auto& b = w.names[rec.labels[(c + 1) % rec.labels.size()]];
      rec.captions.push_back("a " + a + " next to a " + b + " in scene " + std::to_string(i) + " view " +
                             std::to_string(c));
    }
    const double q = std::sqrt(1.0 - p * p * static_cast<double>(rec.labels.size()));
    auto row = w.images.row(i);
    for (const auto& y : rec.labels) row[w.lexicon.index_of(y)] = static_cast<float>(p);
    row[spec.n_labels + i] = static_cast<float>(q);
    w.images.keys[i] = rec.image_id;
    w.records.push_back(std::move(rec));
  }

  // Every text the grid will score, with the role it was first used in.
  const NegativePool pool(w.records, w.lexicon, w.names);
  const auto tasks = build_tasks(pool, grid);
  struct Role {
    TextKind kind;
    std::size_t image = 0;
    std::vector<LabelId> labels;
  };
  std::map<std::string, Role> roles;
  std::map<std::string, std::size_t> image_index;
  for (std::size_t i = 0; i < w.records.size(); ++i) image_index[w.records[i].image_id] = i;
  auto note = [&](const TextItem& item, std::size_t query) {
    const auto tid = text_id(item.text);
    if (roles.contains(tid)) return;
    Role r{item.kind, query, item.labels};
    if (item.source_image) r.image = image_index.at(*item.source_image);
    roles.emplace(tid, std::move(r));
  };
  for (const auto& t : tasks) {
    for (const auto& list : t.positives) {
      for (const auto& item : list) note(item, t.query);
    }
    for (const auto& draw : t.negatives) {
      for (const auto& item : draw.items) note(item, t.query);
    }
  }

  const auto manifest = collect_texts(tasks);
  const std::size_t spare_lo = spec.n_labels + spec.n_images;
  const std::uint64_t text_seed = derive_seed(spec.seed, "retrieval-texts");
  w.texts = EmbeddingMatrix(manifest.size(), spec.dim);
  for (std::size_t r = 0; r < manifest.size(); ++r) {
    const auto& [tid, text] = manifest[r];
    const Role& role = roles.at(tid);
    Rng trng(derive_seed(text_seed, text));
    std::vector<double> z(spec.dim, 0.0);
    for (std::size_t d = spare_lo; d < spec.dim; ++d) z[d] = trng.normal();
    detail::normalize_d(z);

    std::vector<double> v(spec.dim, 0.0);
    auto place = [&](const std::vector<double>& dir, double weight) {
      for (std::size_t d = 0; d < spec.dim; ++d) v[d] = weight * dir[d] + std::sqrt(1.0 - weight * weight) * z[d];
    };
    auto image_dir = [&](std::size_t i) {
      std::vector<double> x(spec.dim);
      const auto row = w.images.row(i);
      for (std::size_t d = 0; d < spec.dim; ++d) x[d] = row[d];
      detail::normalize_d(x);
      return x;
    };
    switch (role.kind) {
      case TextKind::kPromptSingle:
      case TextKind::kPromptMulti: {
        std::vector<double> u(spec.dim, 0.0);
        for (const auto& y : role.labels) u[w.lexicon.index_of(y)] = 1.0;
        detail::normalize_d(u);
        const double k = static_cast<double>(role.labels.size());
        const double weight = role.kind == TextKind::kPromptSingle ? spec.w_single : spec.w_multi;
        place(u, weight / (p * std::sqrt(k)));
        break;
      }
      case TextKind::kCapError:
        place(image_dir(role.image), spec.w_error);
        break;
      default:
        place(image_dir(role.image), spec.w_caption);
        break;
    }
    if (spec.text_noise > 0) {
      for (std::size_t d = 0; d < spec.dim; ++d) v[d] += spec.text_noise * trng.normal();
    }
    detail::normalize_d(v);
    w.texts.keys[r] = tid;
    detail::store_row(w.texts, r, v);
  }
  return w;
}

}  // namespace vlmeval
