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

#include <gtest/gtest.h>

#include <functional>
#include <set>

#include "test_util.hpp"
#include "vlmeval/hierarchy.hpp"

using namespace vlmeval;
using vlmeval::testutil::ScratchDir;

namespace {

std::set<LabelId> ids(const Hierarchy& h, const std::vector<Hierarchy::Index>& v) {
  std::set<LabelId> out;
  for (auto i : v) out.insert(h.id(i));
  return out;
}

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::kInvariantViolation;
}

}  // namespace

TEST(Hierarchy, SmallestTree) {
  const auto h = Hierarchy::build({{"B", "A"}, {"C", "A"}});
  EXPECT_EQ(ids(h, h.roots()), (std::set<LabelId>{"A"}));
  EXPECT_EQ(ids(h, h.leaves()), (std::set<LabelId>{"B", "C"}));
  EXPECT_EQ(ids(h, h.ancestors_only()), (std::set<LabelId>{"A"}));
  EXPECT_EQ(h.name("B"), "B");
}

TEST(Hierarchy, TwoCycleIsRejected) {
  EXPECT_EQ(code_of([] { Hierarchy::build({{"A", "B"}, {"B", "A"}}); }), Errc::kCycleDetected);
  EXPECT_EQ(code_of([] { Hierarchy::build({{"A", "A"}}); }), Errc::kCycleDetected);
  try {
    Hierarchy::build({{"X", "R"}, {"A", "X"}, {"B", "A"}, {"C", "B"}, {"A", "C"}});
    FAIL();
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("A"), std::string::npos);
    EXPECT_NE(msg.find("C"), std::string::npos);
    EXPECT_EQ(msg.find("R"), std::string::npos);
  }
}

TEST(Hierarchy, ErrorsOnEmptyAndUnknownName) {
  EXPECT_EQ(code_of([] { Hierarchy::build({}); }), Errc::kEmptyHierarchy);
  EXPECT_EQ(code_of([] { Hierarchy::build({{"B", "A"}}, {{"Z", "zed"}}); }), Errc::kUnknownLabel);
  EXPECT_EQ(code_of([] { Hierarchy::build({{"", "A"}}); }), Errc::kParseError);
}

TEST(Hierarchy, DuplicateEdgeWarns) {
  const auto h = Hierarchy::build({{"B", "A"}, {"B", "A"}});
  EXPECT_EQ(h.parents(h.index("B")).size(), 1u);
  EXPECT_EQ(h.warnings().size(), 1u);
}

TEST(Hierarchy, LeafDescendants) {
  // A -> B -> D, A -> C
  const auto h = Hierarchy::build({{"B", "A"}, {"C", "A"}, {"D", "B"}});
  const auto d = h.leaf_descendants(LabelId("D"));
  EXPECT_EQ(d, (std::vector<LabelId>{"D"}));
  const auto a = h.leaf_descendants(LabelId("A"));
  EXPECT_EQ(std::set<LabelId>(a.begin(), a.end()), (std::set<LabelId>{"C", "D"}));
  EXPECT_EQ(a.size(), 2u);
}

TEST(Hierarchy, DiamondHasNoDuplicates) {
  const auto h = Hierarchy::build({{"B", "A"}, {"C", "A"}, {"D", "B"}, {"D", "C"}});
  EXPECT_EQ(h.leaf_descendants(LabelId("A")), (std::vector<LabelId>{"D"}));
  EXPECT_EQ(h.level_of("D"), 2u);
  EXPECT_EQ(ids(h, h.ancestors(h.index("D"))), (std::set<LabelId>{"A", "B", "C"}));
}

TEST(Hierarchy, Levels) {
  const auto h = Hierarchy::build({{"B", "A"}, {"C", "B"}});
  EXPECT_EQ(h.level_of("A"), 0u);
  EXPECT_EQ(h.level_of("B"), 1u);
  EXPECT_EQ(h.level_of("C"), 2u);
  EXPECT_EQ(h.max_level(), 2u);
  // Longest path wins when a node is reachable at two depths.
  const auto g = Hierarchy::build({{"B", "A"}, {"C", "B"}, {"C", "A"}});
  EXPECT_EQ(g.level_of("C"), 2u);
}

TEST(Hierarchy, TopologicalOrderPutsParentsFirst) {
  const auto h = Hierarchy::build({{"D", "B"}, {"B", "A"}, {"C", "A"}, {"D", "C"}});
  std::vector<std::size_t> pos(h.size());
  const auto& topo = h.topological_order();
  for (std::size_t i = 0; i < topo.size(); ++i) pos[topo[i]] = i;
  for (std::size_t v = 0; v < h.size(); ++v) {
    for (auto p : h.parents(v)) EXPECT_LT(pos[p], pos[v]);
  }
}

// Property: on random DAGs, leaf descendants equal a DFS oracle, levels equal
// the longest root path, and the canonical edge list rebuilds an equal graph.
TEST(Hierarchy, RandomDagProperties) {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const auto edges = testutil::random_dag(rng, 2 + rng.below(25));
    const auto h = Hierarchy::build(edges);
    std::map<LabelId, std::vector<LabelId>> kids;
    for (const auto& e : edges) kids[e.parent].push_back(e.child);
    std::function<void(const LabelId&, std::set<LabelId>&)> dfs = [&](const LabelId& y, std::set<LabelId>& out) {
      if (!kids.contains(y)) {
        out.insert(y);
        return;
      }
      for (const auto& c : kids[y]) dfs(c, out);
    };
    std::function<std::size_t(const LabelId&)> depth = [&](const LabelId& y) -> std::size_t {
      std::size_t best = 0;
      for (const auto& e : edges) {
        if (e.child == y) best = std::max(best, depth(e.parent) + 1);
      }
      return best;
    };
    for (std::size_t i = 0; i < h.size(); ++i) {
      std::set<LabelId> expect;
      dfs(h.id(i), expect);
      const auto got = h.leaf_descendants(h.id(i));
      ASSERT_EQ(std::set<LabelId>(got.begin(), got.end()), expect);
      ASSERT_EQ(got.size(), expect.size());
      ASSERT_EQ(h.level(i), depth(h.id(i)));
    }
    const auto again = Hierarchy::build(h.to_edges(), h.names_map());
    ASSERT_TRUE(again == h);
  }
}

TEST(Hierarchy, ReadEdgesAndNames) {
  ScratchDir dir("hier");
  const auto edges = dir.write("e.tsv", "# comment\nB\tA\r\n\nC\tA\n");
  const auto names = dir.write("n.tsv", "A\tanimal\nB\tdog\n");
  const auto h = Hierarchy::build(read_edges(edges), read_names(names));
  EXPECT_EQ(h.size(), 3u);
  EXPECT_EQ(h.name("A"), "animal");
  EXPECT_EQ(h.name("C"), "C");
  const auto bad = dir.write("bad.tsv", "B\tA\nonlyone\n");
  try {
    read_edges(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kParseError);
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos);
  }
  EXPECT_EQ(code_of([&] { read_edges(dir.file("missing.tsv")); }), Errc::kIoFailure);
}

TEST(TwoLevel, ToyMap) {
  ScratchDir dir("two");
  const auto path = dir.write("m.tsv", "cat\tlion\ncat\ttiger\ndog\tpug\ndog\tbeagle\n");
  const auto m = read_two_level(path);
  EXPECT_EQ(m.cg_classes, (std::vector<LabelId>{"cat", "dog"}));
  EXPECT_EQ(m.fg_classes(), (std::vector<LabelId>{"lion", "tiger", "pug", "beagle"}));
  EXPECT_EQ(m.fg_parent().at("pug"), "dog");
  const auto h = Hierarchy::build(m.to_edges());
  EXPECT_EQ(h.leaves().size(), 4u);
  EXPECT_TRUE(m.warnings.empty());
}

TEST(TwoLevel, DuplicateAssignmentAndEmptyClass) {
  ScratchDir dir("two_bad");
  const auto dup = dir.write("d.tsv", "cat\tlion\ndog\tlion\n");
  EXPECT_EQ(code_of([&] { read_two_level(dup); }), Errc::kDuplicateFgAssignment);
  const auto empty = dir.write("e.tsv", "cat\tlion\nbird\n");
  const auto m = read_two_level(empty);
  EXPECT_EQ(m.cg_classes.size(), 2u);
  ASSERT_EQ(m.warnings.size(), 1u);
  EXPECT_NE(m.warnings[0].find("bird"), std::string::npos);
}
