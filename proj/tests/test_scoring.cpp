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

#include <cmath>

#include "test_util.hpp"
#include "vlmeval/scoring.hpp"

using namespace vlmeval;

namespace {

EmbeddingMatrix rows(std::vector<std::vector<float>> v, std::vector<std::string> keys) {
  EmbeddingMatrix m(v.size(), v.empty() ? 0 : v[0].size());
  for (std::size_t i = 0; i < v.size(); ++i) std::copy(v[i].begin(), v[i].end(), m.row(i).begin());
  m.keys = std::move(keys);
  return m;
}

ScoreMatrix score_row(const std::vector<std::string>& cols, const std::vector<float>& vals) {
  ScoreMatrix s(1, cols.size());
  s.image_keys = {"img"};
  s.text_keys = cols;
  s.data = vals;
  return s;
}

float col(const ScoreMatrix& s, const std::string& key) {
  for (std::size_t j = 0; j < s.n_texts; ++j) {
    if (s.text_keys[j] == key) return s.at(0, j);
  }
  ADD_FAILURE() << "no column " << key;
  return 0;
}

}  // namespace

TEST(Cosine, HandValues) {
  const auto img = rows({{3, 4}, {1, 0}}, {"a", "b"});
  const auto txt = rows({{4, 3}, {0, 2}, {2, 0}}, {"x", "y", "z"});
  const auto s = cosine_scores(img, txt);
  EXPECT_FLOAT_EQ(s.at(0, 0), 24.0f / 25.0f);
  EXPECT_FLOAT_EQ(s.at(1, 1), 0.0f);
  EXPECT_FLOAT_EQ(s.at(1, 2), 1.0f);
  EXPECT_EQ(s.image_keys, img.keys);
  EXPECT_EQ(s.text_keys, txt.keys);
}

TEST(Cosine, ErrorsAndThreadInvariance) {
  EXPECT_THROW(cosine_scores(rows({{1, 0}}, {"a"}), rows({{1, 0, 0}}, {"x"})), Error);
  try {
    cosine_scores(rows({{0, 0}}, {"a"}), rows({{1, 0}}, {"x"}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kZeroNormRow);
  }
  Rng rng(1);
  const auto img = testutil::random_embeddings(rng, 37, 16, "i");
  const auto txt = testutil::random_embeddings(rng, 11, 16, "t");
  const auto one = cosine_scores(img, txt, 1);
  EXPECT_EQ(one, cosine_scores(img, txt, 8));
  for (float v : one.data) {
    EXPECT_LE(v, 1.0f);
    EXPECT_GE(v, -1.0f);
  }
}

TEST(ClassEmbedding, Averaging) {
  const auto single = class_embedding(rows({{3, 4}}, {"c#0"}));
  EXPECT_FLOAT_EQ(single[0], 0.6f);
  EXPECT_FLOAT_EQ(single[1], 0.8f);
  const auto two = class_embedding(rows({{1, 0}, {0, 1}}, {"c#0", "c#1"}));
  EXPECT_FLOAT_EQ(two[0], static_cast<float>(std::sqrt(0.5)));
  EXPECT_FLOAT_EQ(two[1], static_cast<float>(std::sqrt(0.5)));
  try {
    class_embedding(rows({{1, -2}, {-1, 2}}, {"c#0", "c#1"}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kZeroNormMean);
  }
}

TEST(ClassEmbedding, EnsembleTableGroupsByClass) {
  const auto per = rows({{1, 0}, {2, 0}, {0, 1}, {1, 1}}, {"dog#0", "cat#0", "dog#1", "cat#1"});
  const auto t = ensemble_table(per);
  EXPECT_EQ(t.class_ids(), (std::vector<LabelId>{"dog", "cat"}));
  EXPECT_FLOAT_EQ(t.matrix.row(0)[0], static_cast<float>(std::sqrt(0.5)));
  // cat: mean (1.5, 0.5)
  EXPECT_NEAR(t.matrix.row(1)[0], 1.5 / std::sqrt(2.5), 1e-7);
  EXPECT_NO_THROW(t.check_unit_norm());
  const auto plain = ensemble_table(per, false);
  EXPECT_FLOAT_EQ(plain.matrix.row(1)[0], 1.5f);
  EXPECT_THROW(plain.check_unit_norm(), Error);
}

TEST(Templates, FillAndManifest) {
  const PromptTemplateSet t({"a photo of a {}", "{} in the wild"});
  EXPECT_EQ(t.fill(0, "dog"), "a photo of a dog");
  EXPECT_EQ(t.fill(1, "dog"), "dog in the wild");
  EXPECT_THROW(PromptTemplateSet({"no slot"}), Error);
  EXPECT_THROW(PromptTemplateSet({"{} and {}"}), Error);
  EXPECT_THROW(PromptTemplateSet(std::vector<std::string>{}), Error);
  const auto m = class_prompt_manifest({"n1", "n2"}, {{"n1", "dog"}}, t);
  ASSERT_EQ(m.size(), 4u);
  EXPECT_EQ(m[1], (std::pair<std::string, std::string>{"n1#1", "dog in the wild"}));
  EXPECT_EQ(m[2].second, "a photo of a n2");
  testutil::ScratchDir dir("tpl");
  EXPECT_EQ(read_templates(dir.write("t.txt", "x {}\r\n\n{} y\n")).size(), 2u);
}

TEST(CgFromFg, SingleChildAndOrthogonalPair) {
  TwoLevelMap map;
  map.cg_classes = {"A", "B"};
  map.fg_children["A"] = {"a1"};
  map.fg_children["B"] = {"b1", "b2"};
  ClassEmbeddingTable fg{rows({{0.6f, 0.8f, 0}, {1, 0, 0}, {0, 1, 0}}, {"a1", "b1", "b2"})};
  const auto cg = cg_embedding_from_fg(map, fg);
  EXPECT_EQ(cg.class_ids(), map.cg_classes);
  EXPECT_FLOAT_EQ(cg.matrix.row(0)[0], 0.6f);
  EXPECT_FLOAT_EQ(cg.matrix.row(0)[1], 0.8f);
  EXPECT_NEAR(norm2(cg.matrix.row(1)), 1.0, 1e-7);
  EXPECT_FLOAT_EQ(cg.matrix.row(1)[0], cg.matrix.row(1)[1]);
  const auto raw = cg_embedding_from_fg(map, fg, false);
  EXPECT_FLOAT_EQ(raw.matrix.row(1)[0], 0.5f);

  map.fg_children["B"].push_back("zz");
  try {
    cg_embedding_from_fg(map, fg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kMissingFgEmbedding);
  }
}

TEST(Propagation, ChildIsMaxOverChildren) {
  const auto h = Hierarchy::build({{"B", "A"}, {"C", "A"}});
  const auto s = score_row({"A", "B", "C"}, {0.1f, 0.6f, 0.4f});
  const auto r = propagate_child(s, h);
  EXPECT_FLOAT_EQ(col(r.scores, "A"), 0.6f);
  EXPECT_FLOAT_EQ(col(r.scores, "B"), 0.6f);
  EXPECT_FLOAT_EQ(col(r.scores, "C"), 0.4f);
}

TEST(Propagation, FourNodeTree) {
  // A -> B -> D, A -> C
  const auto h = Hierarchy::build({{"B", "A"}, {"C", "A"}, {"D", "B"}});
  const auto s = score_row({"A", "B", "C", "D"}, {0.2f, 0.6f, 0.4f, 0.7f});
  EXPECT_FLOAT_EQ(col(propagate_leaf(s, h).scores, "A"), 0.7f);
  EXPECT_FLOAT_EQ(col(propagate_leaf_self(s, h).scores, "A"), 0.7f);
  EXPECT_FLOAT_EQ(col(propagate_child(s, h).scores, "A"), 0.6f);
  EXPECT_EQ(propagate(s, h, Strategy::kRaw).scores, s);
}

TEST(Propagation, OwnRawWinsUnderLeafSelf) {
  const auto h = Hierarchy::build({{"B", "A"}, {"C", "A"}});
  const auto s = score_row({"A", "B", "C"}, {0.9f, 0.6f, 0.4f});
  EXPECT_FLOAT_EQ(col(propagate_leaf_self(s, h).scores, "A"), 0.9f);
  EXPECT_FLOAT_EQ(col(propagate_leaf(s, h).scores, "A"), 0.6f);
}

TEST(Propagation, DepthTwoLeafEqualsChild) {
  Rng rng(4);
  const auto h = Hierarchy::build({{"B", "A"}, {"C", "A"}, {"D", "A"}});
  for (int t = 0; t < 20; ++t) {
    const auto s = score_row({"A", "B", "C", "D"}, {static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
                                                    static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform())});
    EXPECT_EQ(propagate_leaf(s, h).scores, propagate_child(s, h).scores);
  }
}

TEST(Propagation, MissingColumnAndExtraColumns) {
  const auto h = Hierarchy::build({{"B", "A"}});
  try {
    propagate_leaf(score_row({"B"}, {0.5f}), h);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kMissingClassColumn);
  }
  const auto r = propagate_leaf(score_row({"X", "A", "B"}, {0.9f, 0.1f, 0.5f}), h);
  EXPECT_FLOAT_EQ(col(r.scores, "X"), 0.9f);
  EXPECT_FLOAT_EQ(col(r.scores, "A"), 0.5f);
  EXPECT_THROW(propagate(score_row({"A", "B"}, {0, 0}), h, Strategy::kFgEmb), Error);
}

TEST(TwoLevelLabels, ParentOfArgmaxWithLowIndexTies) {
  TwoLevelMap map;
  map.cg_classes = {"animal", "vehicle"};
  map.fg_children["animal"] = {"retriever", "tabby"};
  map.fg_children["vehicle"] = {"car"};
  ScoreMatrix s(3, 3);
  s.image_keys = {"i0", "i1", "i2"};
  s.text_keys = {"car", "retriever", "tabby"};
  s.data = {0.1f, 0.9f, 0.3f,   // retriever
            0.5f, 0.5f, 0.2f,   // tie: car has the lower column
            0.2f, 0.3f, 0.3f};  // tie inside animal
  const auto r = propagate_labels_two_level(s, map);
  EXPECT_EQ(r.labels, (std::vector<LabelId>{"animal", "vehicle", "animal"}));
  EXPECT_EQ(r.fg_argmax, (std::vector<std::size_t>{1, 0, 1}));
  EXPECT_EQ(predict(s), (std::vector<LabelId>{"retriever", "car", "retriever"}));

  TwoLevelMap one;
  one.cg_classes = {"only"};
  one.fg_children["only"] = {"retriever"};
  EXPECT_EQ(propagate_labels_two_level(s, one).labels, (std::vector<LabelId>(3, "only")));

  map.fg_children["vehicle"].push_back("bus");
  EXPECT_THROW(propagate_labels_two_level(s, map), Error);
}
