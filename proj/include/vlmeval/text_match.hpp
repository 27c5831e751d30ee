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

// Case-insensitive, word-boundary, longest-match lookup of label synonyms in
// free text. Shared by caption perturbation and corpus mention counting.

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vlmeval/error.hpp"

namespace vlmeval {

struct Token {
  std::size_t begin = 0;  // byte offsets into the source text
  std::size_t end = 0;
  std::string folded;
};

/// Word characters are ASCII alphanumerics and every non-ASCII byte, so UTF-8
/// words stay whole. Only ASCII letters are case-folded.
inline bool is_word_byte(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') ||
         (c >= 'A' && c <= 'Z') || c >= 0x80;
}

inline std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_word_byte(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    Token tok;
    tok.begin = i;
    while (i < text.size() && is_word_byte(static_cast<unsigned char>(text[i]))) {
      char c = text[i];
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
      tok.folded.push_back(c);
      ++i;
    }
    tok.end = i;
    tokens.push_back(std::move(tok));
  }
  return tokens;
}

/// Label -> synonyms, with labels kept in first-seen order.
class Lexicon {
 public:
  void add(const std::string& label, const std::string& synonym) {
    auto [it, inserted] = index_.try_emplace(label, labels_.size());
    if (inserted) {
      labels_.push_back(label);
      synonyms_.emplace_back();
    }
    auto& syns = synonyms_[it->second];
    if (std::find(syns.begin(), syns.end(), synonym) == syns.end()) syns.push_back(synonym);
  }

  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<std::string>& synonyms(std::size_t label_index) const {
    return synonyms_[label_index];
  }
  bool contains(const std::string& label) const { return index_.contains(label); }
  std::size_t index_of(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) fail(Errc::kUnknownLabel, "label '" + label + "' not in lexicon");
    return it->second;
  }
  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }

 private:
  std::vector<std::string> labels_;
  std::vector<std::vector<std::string>> synonyms_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// `label_id<TAB>synonym` per line; blank lines and `#` comments skipped.
inline Lexicon read_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::kIoFailure, "cannot open lexicon " + path);
  Lexicon lex;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size()) {
      fail(Errc::kParseError, path + ":" + std::to_string(line_no) + ": expected label<TAB>synonym");
    }
    lex.add(line.substr(0, tab), line.substr(tab + 1));
  }
  return lex;
}

struct Match {
  std::size_t byte_begin = 0;
  std::size_t byte_end = 0;
  std::vector<std::size_t> labels;  // lexicon label indices, ascending
};

class LexiconMatcher {
 public:
  explicit LexiconMatcher(const Lexicon& lexicon) {
    for (std::size_t li = 0; li < lexicon.size(); ++li) {
      for (const auto& syn : lexicon.synonyms(li)) {
        const auto toks = tokenize(syn);
        if (toks.empty()) continue;
        std::string key = join(toks, 0, toks.size());
        auto& labels = phrases_[key];
        if (std::find(labels.begin(), labels.end(), li) == labels.end()) {
          labels.insert(std::upper_bound(labels.begin(), labels.end(), li), li);
        }
        max_tokens_ = std::max(max_tokens_, toks.size());
      }
    }
  }

  /// Non-overlapping matches scanning left to right; at each token the longest
  /// synonym starting there wins.
  std::vector<Match> find_all(std::string_view text) const {
    std::vector<Match> out;
    const auto toks = tokenize(text);
    std::size_t i = 0;
    while (i < toks.size()) {
      bool matched = false;
      const std::size_t longest = std::min(max_tokens_, toks.size() - i);
      for (std::size_t len = longest; len >= 1; --len) {
        auto it = phrases_.find(join(toks, i, i + len));
        if (it != phrases_.end()) {
          out.push_back(Match{toks[i].begin, toks[i + len - 1].end, it->second});
          i += len;
          matched = true;
          break;
        }
      }
      if (!matched) ++i;
    }
    return out;
  }

  std::size_t max_tokens() const { return max_tokens_; }

 private:
  static std::string join(const std::vector<Token>& toks, std::size_t lo, std::size_t hi) {
    std::string key;
    for (std::size_t i = lo; i < hi; ++i) {
      if (i > lo) key.push_back(' ');
      key += toks[i].folded;
    }
    return key;
  }

  std::unordered_map<std::string, std::vector<std::size_t>> phrases_;
  std::size_t max_tokens_ = 0;
};

}  // namespace vlmeval
