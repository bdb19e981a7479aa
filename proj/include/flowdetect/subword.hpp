// SPDX-FileCopyrightText: (c) 2026 The flowdetect Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "flowdetect/error.hpp"
#include "flowdetect/nss_tokenizer.hpp"

namespace flowdetect {

namespace detail {

/// Splits UTF-8 text into code points (each kept as its byte string).
inline std::vector<std::string> code_points(std::string_view text) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < text.size();) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = lead < 0x80 ? 1 : (lead >> 5) == 0x6 ? 2 : (lead >> 4) == 0xe ? 3 : (lead >> 3) == 0x1e ? 4 : 1;
    len = std::min(len, text.size() - i);
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

inline bool is_ascii_punct(char c) { return static_cast<unsigned char>(c) < 0x80 && std::ispunct(static_cast<unsigned char>(c)); }

}  // namespace detail

/// Whitespace split, with every ASCII punctuation character as its own word.
inline std::vector<std::string> pre_tokenize(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (detail::is_ascii_punct(c)) {
      flush();
      words.emplace_back(1, c);
    } else {
      current.push_back(c);
    }
  }
  flush();
  return words;
}

/// Flow serialized the way a natural-language tokenizer would see it.
inline std::string flow_text(const FlowRecord& record) {
  std::string out;
  for (std::size_t i = 0; i < record.values.size(); ++i) {
    if (i) out.push_back(',');
    out += record.values[i];
  }
  return out;
}

/// WordPiece-style vocabulary: specials, every training character, then
/// merged pieces in merge order. Pieces match at any word position; the
/// continuation marker only decorates non-initial pieces when rendered.
class SubwordVocab {
 public:
  static constexpr std::size_t kDefaultMaxInputChars = 100;

  const std::string& continuation_marker() const { return marker_; }
  std::size_t max_input_chars() const { return max_input_chars_; }
  std::size_t size() const { return tokens_.size(); }
  std::span<const std::string> tokens() const { return tokens_; }
  bool contains(std::string_view piece) const { return ids_.contains(std::string(piece)); }

  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
      throw Error(Errc::unknown_id, "subword id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }

  /// Greedy longest-match ids for one flow text; no framing, no truncation.
  std::vector<TokenId> piece_ids(std::string_view text) const {
    std::vector<TokenId> out;
    for (const auto& word : pre_tokenize(text)) append_word(word, out);
    return out;
  }

  /// Pieces as strings, continuation pieces prefixed with the marker.
  std::vector<std::string> render(std::string_view text) const {
    std::vector<std::string> out;
    for (const auto& word : pre_tokenize(text)) {
      std::vector<TokenId> ids;
      append_word(word, ids);
      for (std::size_t i = 0; i < ids.size(); ++i)
        out.push_back((i > 0 && ids[i] != kUnkId ? marker_ : std::string{}) + tokens_[ids[i]]);
    }
    return out;
  }

  std::string serialize() const {
    std::string out = "# subword continuation=" + marker_ + " max_input_chars=" + std::to_string(max_input_chars_) + "\n";
    for (std::size_t id = 0; id < tokens_.size(); ++id) out += std::to_string(id) + "\t" + tokens_[id] + "\n";
    return out;
  }

  static SubwordVocab deserialize(std::string_view text) {
    auto fail = [](const std::string& why) { return Error(Errc::format_version_mismatch, "subword vocab: " + why); };
    constexpr std::string_view kHeader = "# subword continuation=";
    if (!text.starts_with(kHeader)) throw fail("missing header");
    auto eol = text.find('\n');
    auto header = text.substr(kHeader.size(), eol - kHeader.size());
    auto space = header.find(" max_input_chars=");
    if (space == std::string_view::npos) throw fail("missing max_input_chars");
    SubwordVocab vocab;
    vocab.tokens_.clear();
    vocab.marker_ = std::string(header.substr(0, space));
    vocab.max_input_chars_ = std::stoul(std::string(header.substr(space + 17)));
    for (std::size_t pos = eol + 1; pos < text.size();) {
      auto end = text.find('\n', pos);
      if (end == std::string_view::npos) throw fail("truncated final line");
      auto line = text.substr(pos, end - pos);
      auto tab = line.find('\t');
      if (tab == std::string_view::npos || line.substr(0, tab) != std::to_string(vocab.tokens_.size()))
        throw fail("malformed line");
      vocab.tokens_.emplace_back(line.substr(tab + 1));
      pos = end + 1;
    }
    for (TokenId id = 0; id < kFirstCorpusId; ++id)
      if (vocab.tokens_.size() <= static_cast<std::size_t>(id) || vocab.tokens_[id] != kSpecialTokens[id])
        throw fail("special tokens missing");
    vocab.index();
    return vocab;
  }

  bool operator==(const SubwordVocab& o) const {
    return tokens_ == o.tokens_ && marker_ == o.marker_ && max_input_chars_ == o.max_input_chars_;
  }

 private:
  friend SubwordVocab train_subword_vocab(std::span<const std::string>, std::size_t);

  SubwordVocab() : tokens_(std::begin(kSpecialTokens), std::end(kSpecialTokens)) {}

  void index() {
    ids_.clear();
    longest_piece_ = 1;
    for (std::size_t id = kFirstCorpusId; id < tokens_.size(); ++id) {
      ids_.emplace(tokens_[id], static_cast<TokenId>(id));
      longest_piece_ = std::max(longest_piece_, detail::code_points(tokens_[id]).size());
    }
  }

  void append_word(const std::string& word, std::vector<TokenId>& out) const {
    const auto chars = detail::code_points(word);
    if (chars.size() > max_input_chars_) {
      out.push_back(kUnkId);
      return;
    }
    const std::size_t mark = out.size();
    std::size_t start = 0;
    std::string candidate;
    while (start < chars.size()) {
      std::size_t end = std::min(chars.size(), start + longest_piece_);
      TokenId found = kUnkId;
      for (; end > start; --end) {
        candidate.clear();
        for (std::size_t k = start; k < end; ++k) candidate += chars[k];
        if (auto it = ids_.find(candidate); it != ids_.end()) {
          found = it->second;
          break;
        }
      }
      if (found == kUnkId) {
        // An unmatched character makes the whole word unknown.
        out.resize(mark);
        out.push_back(kUnkId);
        return;
      }
      out.push_back(found);
      start = end;
    }
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  std::string marker_ = "##";
  std::size_t max_input_chars_ = kDefaultMaxInputChars;
  std::size_t longest_piece_ = 1;
};

/// Iterative highest-frequency pair merging over pre-tokenized words until
/// the vocabulary (specials included) reaches target_size or nothing merges.
/// Frequency ties go to the lexicographically smallest (left, right) pair.
inline SubwordVocab train_subword_vocab(std::span<const std::string> corpus, std::size_t target_size) {
  if (corpus.empty()) throw Error(Errc::corpus_empty, "subword training corpus is empty");

  std::map<std::string, std::int64_t> word_counts;
  for (const auto& text : corpus)
    for (auto& w : pre_tokenize(text)) ++word_counts[w];
  if (word_counts.empty()) throw Error(Errc::corpus_empty, "subword training corpus has no words");

  std::set<std::string> alphabet;
  for (const auto& [word, count] : word_counts)
    for (auto& c : detail::code_points(word)) alphabet.insert(c);
  if (target_size < alphabet.size() + kFirstCorpusId)
    throw Error(Errc::target_too_small, "target size " + std::to_string(target_size) + " below alphabet size " +
                                            std::to_string(alphabet.size()) + " + 4 specials");

  SubwordVocab vocab;
  std::vector<std::string> symbols(alphabet.begin(), alphabet.end());  // symbol id -> text
  std::unordered_map<std::string, std::uint32_t> symbol_ids;
  for (std::uint32_t i = 0; i < symbols.size(); ++i) symbol_ids.emplace(symbols[i], i);
  vocab.tokens_.insert(vocab.tokens_.end(), symbols.begin(), symbols.end());

  struct Word {
    std::vector<std::uint32_t> parts;
    std::int64_t count;
  };
  std::vector<Word> words;
  words.reserve(word_counts.size());
  for (const auto& [word, count] : word_counts) {
    Word w{{}, count};
    for (auto& c : detail::code_points(word)) w.parts.push_back(symbol_ids.at(c));
    words.push_back(std::move(w));
  }

  std::unordered_map<std::uint64_t, std::int64_t> pair_counts;
  while (vocab.tokens_.size() < target_size) {
    pair_counts.clear();
    for (const auto& w : words)
      for (std::size_t i = 0; i + 1 < w.parts.size(); ++i)
        pair_counts[(static_cast<std::uint64_t>(w.parts[i]) << 32) | w.parts[i + 1]] += w.count;
    if (pair_counts.empty()) break;

    std::uint64_t best = 0;
    std::int64_t best_count = -1;
    for (const auto& [key, count] : pair_counts) {
      if (count < best_count) continue;
      if (count == best_count) {
        const auto& l = symbols[key >> 32];
        const auto& r = symbols[key & 0xffffffffu];
        const auto& bl = symbols[best >> 32];
        const auto& br = symbols[best & 0xffffffffu];
        if (std::tie(l, r) >= std::tie(bl, br)) continue;
      }
      best = key;
      best_count = count;
    }
    const auto left = static_cast<std::uint32_t>(best >> 32);
    const auto right = static_cast<std::uint32_t>(best & 0xffffffffu);
    const std::string merged = symbols[left] + symbols[right];

    std::uint32_t merged_id;
    if (auto it = symbol_ids.find(merged); it != symbol_ids.end()) {
      merged_id = it->second;
    } else {
      merged_id = static_cast<std::uint32_t>(symbols.size());
      symbols.push_back(merged);
      symbol_ids.emplace(merged, merged_id);
      vocab.tokens_.push_back(merged);
    }
    for (auto& w : words) {
      std::vector<std::uint32_t> next;
      next.reserve(w.parts.size());
      for (std::size_t i = 0; i < w.parts.size(); ++i) {
        if (i + 1 < w.parts.size() && w.parts[i] == left && w.parts[i + 1] == right) {
          next.push_back(merged_id);
          ++i;
        } else {
          next.push_back(w.parts[i]);
        }
      }
      w.parts = std::move(next);
    }
  }
  vocab.index();
  return vocab;
}

/// [CLS] pieces [SEP], truncated and padded to max_len.
inline TokenSequence encode_subword(std::string_view text, const SubwordVocab& vocab,
                                    std::size_t max_len = kMaxSequence) {
  const auto ids = vocab.piece_ids(text);
  return frame_sequence(ids, std::max<std::size_t>(max_len, 2));
}

inline CorpusStats corpus_stats(const FlowTable& table, const SubwordVocab& vocab, std::size_t max_len = kMaxSequence) {
  return detail::measure_corpus(table, "subword",
                                [&](const FlowRecord& r) { return encode_subword(flow_text(r), vocab, max_len); });
}

}  // namespace flowdetect
