// SPDX-FileCopyrightText: (c) 2026 The flowdetect Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowdetect/error.hpp"
#include "flowdetect/flow_ingest.hpp"

namespace flowdetect {

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kClsId = 2;
inline constexpr TokenId kSepId = 3;
inline constexpr TokenId kFirstCorpusId = 4;
inline constexpr std::size_t kMaxSequence = 512;

inline constexpr std::string_view kSpecialTokens[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};

inline bool is_special_token(std::string_view token) {
  return std::find(std::begin(kSpecialTokens), std::end(kSpecialTokens), token) != std::end(kSpecialTokens);
}

/// How numeric feature values become tokens.
///  raw:        every distinct string is its own token.
///  log_bucket: numerals collapse to "num:b<k>" / "num:-b<k>" with
///              k = round(10 * log10(1 + |x|)); other strings stay raw.
enum class Quantization { raw, log_bucket };

inline std::string_view to_string(Quantization q) { return q == Quantization::raw ? "raw" : "log_bucket"; }

inline Quantization quantization_from_string(std::string_view text) {
  if (text == "raw") return Quantization::raw;
  if (text == "log_bucket" || text == "log-bucket") return Quantization::log_bucket;
  throw Error(Errc::invalid_argument, "unknown quantization policy '" + std::string(text) + "'");
}

inline long log_bucket_index(double x) { return std::lround(10.0 * std::log10(1.0 + std::fabs(x))); }

inline std::string quantize(std::string_view value, Quantization q) {
  if (q == Quantization::raw) return std::string(value);
  auto number = parse_number(value);
  if (!number) return std::string(value);
  return (*number < 0 ? "num:-b" : "num:b") + std::to_string(log_bucket_index(*number));
}

/// Token/id mapping with PAD=0, UNK=1, CLS=2, SEP=3 reserved. Immutable once
/// built; the only ways to obtain one are building from a corpus or loading.
class Vocabulary {
 public:
  static Vocabulary from_records(std::span<const FlowRecord> records, Quantization q) {
    if (records.empty()) throw Error(Errc::empty_table, "cannot build a vocabulary from no records");
    Vocabulary vocab(q);
    for (const auto& record : records) {
      for (const auto& value : record.values) {
        auto token = quantize(value, q);
        if (is_special_token(token) || vocab.corpus_.contains(token)) continue;
        vocab.corpus_.emplace(token, static_cast<TokenId>(vocab.tokens_.size()));
        vocab.tokens_.push_back(std::move(token));
      }
    }
    return vocab;
  }

  /// Corpus id of an already-quantized token, UNK when absent.
  TokenId id_of(std::string_view token) const {
    auto it = corpus_.find(std::string(token));
    return it == corpus_.end() ? kUnkId : it->second;
  }

  bool contains(std::string_view token) const { return corpus_.contains(std::string(token)); }

  TokenId lookup_value(std::string_view raw_value) const { return id_of(quantize(raw_value, quantization_)); }

  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
      throw Error(Errc::unknown_id, "id " + std::to_string(id) + " outside vocabulary of size " +
                                        std::to_string(tokens_.size()));
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::size_t size() const { return tokens_.size(); }
  std::size_t corpus_size() const { return tokens_.size() - kFirstCorpusId; }
  Quantization quantization() const { return quantization_; }

  bool operator==(const Vocabulary& other) const {
    return quantization_ == other.quantization_ && tokens_ == other.tokens_;
  }

  // File format: "# quantization=<policy>" then one "id<TAB>token" line per
  // entry, specials first. Tabs, newlines and backslashes in tokens are escaped.
  std::string serialize() const {
    std::string out = "# quantization=" + std::string(to_string(quantization_)) + "\n";
    for (std::size_t id = 0; id < tokens_.size(); ++id) {
      out += std::to_string(id);
      out.push_back('\t');
      for (char c : tokens_[id]) {
        switch (c) {
          case '\\': out += "\\\\"; break;
          case '\t': out += "\\t"; break;
          case '\n': out += "\\n"; break;
          case '\r': out += "\\r"; break;
          default: out.push_back(c);
        }
      }
      out.push_back('\n');
    }
    return out;
  }

  static Vocabulary deserialize(std::string_view text) {
    constexpr std::string_view kHeader = "# quantization=";
    auto fail = [](const std::string& why) { return Error(Errc::format_version_mismatch, "vocab file: " + why); };
    if (!text.starts_with(kHeader)) throw fail("missing quantization header");
    auto eol = text.find('\n');
    Vocabulary vocab(quantization_from_string(text.substr(kHeader.size(), eol - kHeader.size())));
    vocab.tokens_.clear();
    std::size_t pos = eol == std::string_view::npos ? text.size() : eol + 1;
    while (pos < text.size()) {
      auto end = text.find('\n', pos);
      if (end == std::string_view::npos) throw fail("truncated final line");
      auto line = text.substr(pos, end - pos);
      auto tab = line.find('\t');
      if (tab == std::string_view::npos) throw fail("line without tab");
      if (line.substr(0, tab) != std::to_string(vocab.tokens_.size())) throw fail("ids not dense and ordered");
      std::string token;
      for (std::size_t i = tab + 1; i < line.size(); ++i) {
        if (line[i] != '\\' || i + 1 == line.size()) {
          token.push_back(line[i]);
          continue;
        }
        const char e = line[++i];
        token.push_back(e == 't' ? '\t' : e == 'n' ? '\n' : e == 'r' ? '\r' : e);
      }
      vocab.tokens_.push_back(std::move(token));
      pos = end + 1;
    }
    for (TokenId id = 0; id < kFirstCorpusId; ++id)
      if (vocab.tokens_.size() <= static_cast<std::size_t>(id) || vocab.tokens_[id] != kSpecialTokens[id])
        throw fail("special tokens missing or out of order");
    for (std::size_t id = kFirstCorpusId; id < vocab.tokens_.size(); ++id)
      if (!vocab.corpus_.emplace(vocab.tokens_[id], static_cast<TokenId>(id)).second)
        throw fail("duplicate token '" + vocab.tokens_[id] + "'");
    return vocab;
  }

 private:
  explicit Vocabulary(Quantization q) : quantization_(q), tokens_(std::begin(kSpecialTokens), std::end(kSpecialTokens)) {}

  Quantization quantization_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> corpus_;
};

/// Ids assigned in first-occurrence order over the table's records.
inline Vocabulary build_vocab(const FlowTable& train, Quantization q = Quantization::raw) {
  if (train.empty()) throw Error(Errc::empty_table, "build_vocab on empty table '" + train.schema.dataset_name + "'");
  return Vocabulary::from_records(train.records, q);
}

struct TokenSequence {
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> mask;
  std::size_t true_length = 0;

  std::size_t size() const { return ids.size(); }
  bool operator==(const TokenSequence&) const = default;
};

/// Dynamic window: the feature-token budget per flow, capped at 512.
struct WindowSpec {
  static constexpr std::size_t cap = kMaxSequence;
  std::size_t window = 1;

  /// Padded length: window + CLS + SEP, never above the cap.
  std::size_t sequence_length() const { return std::min(window + 2, cap); }
  /// Feature tokens that actually fit between CLS and SEP.
  std::size_t feature_capacity() const { return sequence_length() - 2; }

  bool operator==(const WindowSpec&) const = default;
};

/// window = min(max feature-token count over the training flows, 512).
/// NSS emits exactly one token per feature, so len(f) is the value count
/// and the vocabulary does not change it.
inline WindowSpec compute_window(std::span<const FlowRecord> train) {
  if (train.empty()) throw Error(Errc::empty_table, "compute_window on empty training split");
  std::size_t longest = 0;
  for (const auto& record : train) longest = std::max(longest, record.values.size());
  return WindowSpec{std::clamp<std::size_t>(longest, 1, WindowSpec::cap)};
}

inline WindowSpec compute_window(const FlowTable& train, const Vocabulary& /*vocab*/) {
  if (train.empty()) throw Error(Errc::empty_table, "compute_window on empty table '" + train.schema.dataset_name + "'");
  return compute_window(train.records);
}

/// Frames raw ids as [CLS] ids... [SEP] PAD..., keeping at most `length - 2` ids.
inline TokenSequence frame_sequence(std::span<const TokenId> body, std::size_t length) {
  TokenSequence seq;
  seq.ids.assign(length, kPadId);
  seq.mask.assign(length, 0);
  const std::size_t kept = std::min(body.size(), length - 2);
  seq.ids[0] = kClsId;
  std::copy_n(body.begin(), kept, seq.ids.begin() + 1);
  seq.ids[kept + 1] = kSepId;
  seq.true_length = kept + 2;
  std::fill_n(seq.mask.begin(), seq.true_length, std::uint8_t{1});
  return seq;
}

/// One token per feature value (UNK when unseen), head-truncated to the window.
inline TokenSequence encode_flow(const FlowRecord& record, const Vocabulary& vocab, const WindowSpec& spec) {
  std::vector<TokenId> body;
  const std::size_t kept = std::min(record.values.size(), spec.feature_capacity());
  body.reserve(kept);
  for (std::size_t i = 0; i < kept; ++i) body.push_back(vocab.lookup_value(record.values[i]));
  return frame_sequence(body, spec.sequence_length());
}

/// Boundary split of a separator-joined flow line, then encode_flow.
inline TokenSequence encode_text(std::string_view flow_text, std::string_view separator, const Vocabulary& vocab,
                                 const WindowSpec& spec) {
  FlowRecord record;
  std::size_t pos = 0;
  while (true) {
    auto next = flow_text.find(separator, pos);
    record.values.emplace_back(flow_text.substr(pos, next - pos));
    if (next == std::string_view::npos) break;
    pos = next + separator.size();
  }
  return encode_flow(record, vocab, spec);
}

inline std::vector<TokenSequence> encode_all(std::span<const FlowRecord> records, const Vocabulary& vocab,
                                             const WindowSpec& spec) {
  std::vector<TokenSequence> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(encode_flow(r, vocab, spec));
  return out;
}

/// Tokens at non-special positions; UNK decodes to "[UNK]".
inline std::vector<std::string> decode(const TokenSequence& seq, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    const TokenId id = seq.ids[i];
    const auto& token = vocab.token(id);
    if (id == kUnkId) {
      out.push_back(token);
    } else if (id >= kFirstCorpusId && seq.mask[i]) {
      out.push_back(token);
    }
  }
  return out;
}

struct CorpusStats {
  std::string dataset;
  std::string tokenizer;
  std::string perturbation = "-";
  std::size_t max_length = 0;
  double mean_length = 0.0;
  double tokenize_seconds = 0.0;
};

inline nlohmann::json to_json(const CorpusStats& s) {
  return {{"dataset", s.dataset},
          {"tokenizer", s.tokenizer},
          {"perturbation", s.perturbation},
          {"max_length", s.max_length},
          {"mean_length", s.mean_length},
          {"tokenize_seconds", s.tokenize_seconds}};
}

namespace detail {

template <typename EncodeFn>
CorpusStats measure_corpus(const FlowTable& table, std::string tokenizer, EncodeFn&& encode) {
  if (table.empty()) throw Error(Errc::empty_table, "corpus_stats on empty table '" + table.schema.dataset_name + "'");
  CorpusStats stats{table.schema.dataset_name, std::move(tokenizer)};
  std::vector<std::size_t> lengths;
  lengths.reserve(table.size());
  const auto start = std::chrono::steady_clock::now();
  for (const auto& record : table.records) lengths.push_back(encode(record).true_length);
  stats.tokenize_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  double total = 0.0;
  for (auto n : lengths) {
    stats.max_length = std::max(stats.max_length, n);
    total += static_cast<double>(n);
  }
  stats.mean_length = total / static_cast<double>(lengths.size());
  return stats;
}

}  // namespace detail

/// Length statistics (CLS/SEP included, padding excluded) and wall time of a full NSS pass.
inline CorpusStats corpus_stats(const FlowTable& table, const Vocabulary& vocab, const WindowSpec& spec) {
  return detail::measure_corpus(table, "nss",
                                [&](const FlowRecord& r) { return encode_flow(r, vocab, spec); });
}

}  // namespace flowdetect
