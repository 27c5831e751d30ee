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

// Label hierarchy: a rooted DAG (forests allowed) of opaque label ids.

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vlmeval/error.hpp"

namespace vlmeval {

using LabelId = std::string;

struct Edge {
  LabelId child;
  LabelId parent;
  bool operator==(const Edge&) const = default;
};

class Hierarchy {
 public:
  using Index = std::size_t;

  /// Validates and indexes the graph. Duplicate edges are dropped and reported
  /// through warnings(); cycles, empty input and names for ids that never
  /// appear in an edge are errors.
  static Hierarchy build(const std::vector<Edge>& edges,
                         const std::map<LabelId, std::string>& names = {}) {
    if (edges.empty()) fail(Errc::kEmptyHierarchy, "edge list is empty");
    Hierarchy h;
    auto intern = [&h](const LabelId& id) {
      if (id.empty()) fail(Errc::kParseError, "empty label id");
      auto [it, inserted] = h.index_.try_emplace(id, h.ids_.size());
      if (inserted) {
        h.ids_.push_back(id);
        h.parents_.emplace_back();
        h.children_.emplace_back();
      }
      return it->second;
    };
    for (const auto& e : edges) {
      const Index c = intern(e.child);
      const Index p = intern(e.parent);
      auto& ps = h.parents_[c];
      if (std::find(ps.begin(), ps.end(), p) != ps.end()) {
        h.warnings_.push_back("duplicate edge " + e.child + " -> " + e.parent + " ignored");
        continue;
      }
      ps.push_back(p);
      h.children_[p].push_back(c);
    }
    h.names_.resize(h.ids_.size());
    for (Index i = 0; i < h.ids_.size(); ++i) h.names_[i] = h.ids_[i];
    for (const auto& [id, name] : names) {
      auto it = h.index_.find(id);
      if (it == h.index_.end()) fail(Errc::kUnknownLabel, "name given for unknown label '" + id + "'");
      h.names_[it->second] = name;
    }
    h.topo_sort();
    h.compute_levels();
    h.compute_leaf_descendants();
    return h;
  }

  std::size_t size() const { return ids_.size(); }
  const std::vector<LabelId>& ids() const { return ids_; }
  const LabelId& id(Index i) const { return ids_[i]; }
  const std::string& name(Index i) const { return names_[i]; }
  const std::string& name(const LabelId& y) const { return names_[index(y)]; }

  bool contains(const LabelId& y) const { return index_.contains(y); }
  Index index(const LabelId& y) const {
    auto it = index_.find(y);
    if (it == index_.end()) fail(Errc::kUnknownLabel, "unknown label '" + y + "'");
    return it->second;
  }
  std::optional<Index> find(const LabelId& y) const {
    auto it = index_.find(y);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const std::vector<Index>& parents(Index i) const { return parents_[i]; }
  const std::vector<Index>& children(Index i) const { return children_[i]; }
  bool is_leaf(Index i) const { return children_[i].empty(); }
  bool is_root(Index i) const { return parents_[i].empty(); }

  /// Parents before children.
  const std::vector<Index>& topological_order() const { return topo_; }
  std::vector<Index> roots() const { return filter([this](Index i) { return is_root(i); }); }
  std::vector<Index> leaves() const { return filter([this](Index i) { return is_leaf(i); }); }
  std::vector<Index> ancestors_only() const {
    return filter([this](Index i) { return !is_leaf(i); });
  }

  /// Sorted, duplicate-free leaf indices reachable downward from i ({i} for a leaf).
  const std::vector<Index>& leaf_descendants(Index i) const { return leaf_desc_[i]; }
  std::vector<LabelId> leaf_descendants(const LabelId& y) const {
    std::vector<LabelId> out;
    for (Index l : leaf_desc_[index(y)]) out.push_back(ids_[l]);
    return out;
  }

  /// Longest parent path from any root; roots are level 0.
  std::size_t level(Index i) const { return level_[i]; }
  std::size_t level_of(const LabelId& y) const { return level_[index(y)]; }
  std::size_t max_level() const { return *std::max_element(level_.begin(), level_.end()); }

  /// All strict ancestors of i, sorted.
  std::vector<Index> ancestors(Index i) const {
    std::vector<char> seen(size(), 0);
    std::vector<Index> stack(parents_[i].begin(), parents_[i].end());
    std::vector<Index> out;
    while (!stack.empty()) {
      const Index p = stack.back();
      stack.pop_back();
      if (seen[p]) continue;
      seen[p] = 1;
      out.push_back(p);
      for (Index q : parents_[p]) stack.push_back(q);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  /// Canonical edge list (node order, then parent order); build(to_edges())
  /// reproduces an equal hierarchy.
  std::vector<Edge> to_edges() const {
    std::vector<Edge> out;
    for (Index c = 0; c < size(); ++c) {
      for (Index p : parents_[c]) out.push_back({ids_[c], ids_[p]});
    }
    return out;
  }
  std::map<LabelId, std::string> names_map() const {
    std::map<LabelId, std::string> out;
    for (Index i = 0; i < size(); ++i) out[ids_[i]] = names_[i];
    return out;
  }

  const std::vector<std::string>& warnings() const { return warnings_; }

  /// Structural equality keyed by label id (insertion order is ignored).
  friend bool operator==(const Hierarchy& a, const Hierarchy& b) {
    auto canon = [](const Hierarchy& h) {
      std::map<LabelId, std::pair<std::string, std::vector<LabelId>>> m;
      for (Index i = 0; i < h.size(); ++i) {
        std::vector<LabelId> ps;
        for (Index p : h.parents_[i]) ps.push_back(h.ids_[p]);
        std::sort(ps.begin(), ps.end());
        m[h.ids_[i]] = {h.names_[i], std::move(ps)};
      }
      return m;
    };
    return canon(a) == canon(b);
  }

 private:
  template <typename Pred>
  std::vector<Index> filter(Pred pred) const {
    std::vector<Index> out;
    for (Index i = 0; i < size(); ++i) {
      if (pred(i)) out.push_back(i);
    }
    return out;
  }

  void topo_sort() {
    const std::size_t n = size();
    std::vector<std::size_t> indegree(n);
    for (Index i = 0; i < n; ++i) indegree[i] = parents_[i].size();
    std::vector<Index> ready;
    for (Index i = n; i-- > 0;) {
      if (indegree[i] == 0) ready.push_back(i);
    }
    topo_.reserve(n);
    while (!ready.empty()) {
      const Index u = ready.back();
      ready.pop_back();
      topo_.push_back(u);
      const auto& cs = children_[u];
      for (auto it = cs.rbegin(); it != cs.rend(); ++it) {
        if (--indegree[*it] == 0) ready.push_back(*it);
      }
    }
    if (topo_.size() != n) fail(Errc::kCycleDetected, describe_cycle(indegree));
  }

  // Walk parent edges among unresolved nodes until a node repeats.
  std::string describe_cycle(const std::vector<std::size_t>& indegree) const {
    Index start = 0;
    while (indegree[start] == 0) ++start;
    std::vector<std::ptrdiff_t> pos(size(), -1);
    std::vector<Index> path;
    Index u = start;
    while (pos[u] < 0) {
      pos[u] = static_cast<std::ptrdiff_t>(path.size());
      path.push_back(u);
      for (Index p : parents_[u]) {
        if (indegree[p] > 0) {
          u = p;
          break;
        }
      }
    }
    std::string out = "cycle";
    for (auto i = static_cast<std::size_t>(pos[u]); i < path.size(); ++i) {
      out += (i == static_cast<std::size_t>(pos[u]) ? ": " : " -> ") + ids_[path[i]];
    }
    out += " -> " + ids_[u];
    return out;
  }

  void compute_levels() {
    level_.assign(size(), 0);
    for (Index u : topo_) {
      for (Index c : children_[u]) level_[c] = std::max(level_[c], level_[u] + 1);
    }
  }

  void compute_leaf_descendants() {
    leaf_desc_.assign(size(), {});
    for (auto it = topo_.rbegin(); it != topo_.rend(); ++it) {
      const Index u = *it;
      if (children_[u].empty()) {
        leaf_desc_[u] = {u};
        continue;
      }
      std::vector<Index> acc;
      for (Index c : children_[u]) {
        std::vector<Index> merged;
        merged.reserve(acc.size() + leaf_desc_[c].size());
        std::set_union(acc.begin(), acc.end(), leaf_desc_[c].begin(), leaf_desc_[c].end(),
                       std::back_inserter(merged));
        acc.swap(merged);
      }
      leaf_desc_[u] = std::move(acc);
    }
  }

  std::vector<LabelId> ids_;
  std::vector<std::string> names_;
  std::unordered_map<LabelId, Index> index_;
  std::vector<std::vector<Index>> parents_;
  std::vector<std::vector<Index>> children_;
  std::vector<Index> topo_;
  std::vector<std::size_t> level_;
  std::vector<std::vector<Index>> leaf_desc_;
  std::vector<std::string> warnings_;
};

/// Coarse-grained classes and their fine-grained children, in file order.
struct TwoLevelMap {
  std::vector<LabelId> cg_classes;
  std::map<LabelId, std::vector<LabelId>> fg_children;
  std::vector<std::string> warnings;

  std::vector<LabelId> fg_classes() const {
    std::vector<LabelId> out;
    for (const auto& cg : cg_classes) {
      const auto& fgs = fg_children.at(cg);
      out.insert(out.end(), fgs.begin(), fgs.end());
    }
    return out;
  }

  std::map<LabelId, LabelId> fg_parent() const {
    std::map<LabelId, LabelId> out;
    for (const auto& cg : cg_classes) {
      for (const auto& fg : fg_children.at(cg)) out[fg] = cg;
    }
    return out;
  }

  std::vector<Edge> to_edges() const {
    std::vector<Edge> out;
    for (const auto& cg : cg_classes) {
      for (const auto& fg : fg_children.at(cg)) out.push_back({fg, cg});
    }
    return out;
  }
};

namespace detail {

template <typename OnFields>
void read_tsv(const std::string& path, const char* what, OnFields on_fields) {
  std::ifstream in(path);
  if (!in) fail(Errc::kIoFailure, std::string("cannot open ") + what + " file " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    on_fields(fields, path + ":" + std::to_string(line_no));
  }
}

}  // namespace detail

/// `child_id<TAB>parent_id` per line.
inline std::vector<Edge> read_edges(const std::string& path) {
  std::vector<Edge> edges;
  detail::read_tsv(path, "edge", [&](const std::vector<std::string>& f, const std::string& where) {
    if (f.size() != 2 || f[0].empty() || f[1].empty()) {
      fail(Errc::kParseError, where + ": expected child_id<TAB>parent_id");
    }
    edges.push_back({f[0], f[1]});
  });
  return edges;
}

/// `label_id<TAB>display name` per line.
inline std::map<LabelId, std::string> read_names(const std::string& path) {
  std::map<LabelId, std::string> names;
  detail::read_tsv(path, "names", [&](const std::vector<std::string>& f, const std::string& where) {
    if (f.size() < 2 || f[0].empty()) fail(Errc::kParseError, where + ": expected label_id<TAB>name");
    std::string name = f[1];
    for (std::size_t i = 2; i < f.size(); ++i) name += "\t" + f[i];
    names[f[0]] = name;
  });
  return names;
}

/// `cg_id<TAB>fg_id` per line; a line with an empty fg field declares a CG
/// class that may stay empty (kept, with a warning).
inline TwoLevelMap read_two_level(const std::string& path) {
  TwoLevelMap map;
  std::map<LabelId, std::string> owner;
  detail::read_tsv(path, "two-level map", [&](const std::vector<std::string>& f, const std::string& where) {
    if (f.empty() || f.size() > 2 || f[0].empty()) fail(Errc::kParseError, where + ": expected cg_id<TAB>fg_id");
    const auto& cg = f[0];
    if (!map.fg_children.contains(cg)) {
      map.cg_classes.push_back(cg);
      map.fg_children[cg];
    }
    if (f.size() < 2 || f[1].empty()) return;
    const auto& fg = f[1];
    if (auto it = owner.find(fg); it != owner.end()) {
      fail(Errc::kDuplicateFgAssignment, where + ": fg '" + fg + "' already assigned to '" + it->second + "'");
    }
    owner[fg] = cg;
    map.fg_children[cg].push_back(fg);
  });
  for (const auto& cg : map.cg_classes) {
    if (map.fg_children[cg].empty()) map.warnings.push_back("EmptyCgClass: " + cg);
  }
  return map;
}

}  // namespace vlmeval
