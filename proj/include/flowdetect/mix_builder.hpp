// SPDX-FileCopyrightText: (c) 2026 The flowdetect Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowdetect/csv.hpp"
#include "flowdetect/error.hpp"
#include "flowdetect/flow_ingest.hpp"
#include "flowdetect/rng.hpp"

namespace flowdetect {

/// U+241F SYMBOL FOR UNIT SEPARATOR.
inline constexpr char32_t kDefaultSeparator = 0x241F;
inline constexpr int kMixFormatVersion = 1;
inline constexpr std::string_view kMixFormatName = "flowdetect-mix";

inline std::string utf8_encode(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
  return out;
}

struct MixDataset {
  std::vector<FlowRecord> train;
  std::vector<FlowRecord> val;
  std::map<std::string, std::vector<FlowRecord>> tests;
  std::vector<Schema> schemas;  // one per source, build order
  char32_t separator = kDefaultSeparator;
  std::uint64_t seed = 0;
  std::size_t per_source = 0;
  std::size_t test_per_source = 0;
  std::string split_policy = "global-after-shuffle";

  bool operator==(const MixDataset&) const = default;

  const Schema& schema_for(const std::string& source) const {
    for (const auto& s : schemas)
      if (s.dataset_name == source) return s;
    throw Error(Errc::invalid_argument, "unknown source '" + source + "'");
  }
};

struct SeparatorCollision {
  std::string source;
  std::size_t row = 0;  // 0-based record index
  std::string column;
};

/// First cell (feature value or raw label) containing the separator, if any.
inline std::optional<SeparatorCollision> validate_separator(std::span<const FlowTable> tables, char32_t separator) {
  const auto needle = utf8_encode(separator);
  for (const auto& table : tables) {
    const auto features = table.schema.feature_columns();
    const auto& label_name = table.schema.columns.at(table.schema.label_index()).name;
    for (std::size_t r = 0; r < table.records.size(); ++r) {
      const auto& record = table.records[r];
      for (std::size_t k = 0; k < record.values.size(); ++k)
        if (record.values[k].find(needle) != std::string::npos)
          return SeparatorCollision{table.schema.dataset_name, r, k < features.size() ? features[k].name : "?"};
      if (record.raw_label.find(needle) != std::string::npos)
        return SeparatorCollision{table.schema.dataset_name, r, label_name};
    }
    if (table.schema.dataset_name.find(needle) != std::string::npos)
      return SeparatorCollision{table.schema.dataset_name, 0, "<source name>"};
  }
  return std::nullopt;
}

/// Per source: `per_source` records without replacement; the union is
/// shuffled and split 4:1 (val = floor(n/5)); then `test_per_source`
/// non-repeat records per source are drawn from the unsampled remainder,
/// excluding anything identical to a train/val record.
inline MixDataset build_mix(std::span<const FlowTable> tables, std::size_t per_source, std::size_t test_per_source,
                            std::uint64_t seed, char32_t separator = kDefaultSeparator) {
  if (tables.empty()) throw Error(Errc::invalid_argument, "build_mix needs at least one table");
  std::set<std::string> names;
  for (const auto& t : tables)
    if (!names.insert(t.schema.dataset_name).second)
      throw Error(Errc::invalid_argument, "duplicate source '" + t.schema.dataset_name + "'");
  if (auto hit = validate_separator(tables, separator))
    throw Error(Errc::separator_collision, "source '" + hit->source + "' row " + std::to_string(hit->row + 1) +
                                               " column '" + hit->column + "' contains the separator");
  for (const auto& t : tables)
    if (t.size() < per_source + test_per_source)
      throw Error(Errc::insufficient_records, "source '" + t.schema.dataset_name + "' has " + std::to_string(t.size()) +
                                                  " records, needs " + std::to_string(per_source + test_per_source));

  MixDataset mix;
  mix.separator = separator;
  mix.seed = seed;
  mix.per_source = per_source;
  mix.test_per_source = test_per_source;

  std::vector<std::vector<std::size_t>> remaining(tables.size());
  std::vector<FlowRecord> pool;
  pool.reserve(per_source * tables.size());
  for (std::size_t s = 0; s < tables.size(); ++s) {
    const auto& table = tables[s];
    mix.schemas.push_back(table.schema);
    std::vector<std::size_t> idx(table.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "sample/" + table.schema.dataset_name));
    for (std::size_t i = 0; i < per_source; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
    for (std::size_t i = 0; i < per_source; ++i) {
      pool.push_back(table.records[idx[i]]);
      pool.back().source = table.schema.dataset_name;
    }
    remaining[s].assign(idx.begin() + static_cast<std::ptrdiff_t>(per_source), idx.end());
    std::sort(remaining[s].begin(), remaining[s].end());
  }

  Rng shuffle_rng(derive_seed(seed, "shuffle"));
  shuffle_rng.shuffle(std::span<FlowRecord>(pool));
  const std::size_t n_val = pool.size() / 5;
  const auto split = pool.begin() + static_cast<std::ptrdiff_t>(pool.size() - n_val);
  mix.train.assign(std::make_move_iterator(pool.begin()), std::make_move_iterator(split));
  mix.val.assign(std::make_move_iterator(split), std::make_move_iterator(pool.end()));

  RecordSet seen;
  seen.reserve(mix.train.size() + mix.val.size());
  seen.insert(mix.train.begin(), mix.train.end());
  seen.insert(mix.val.begin(), mix.val.end());

  for (std::size_t s = 0; s < tables.size(); ++s) {
    const auto& table = tables[s];
    const auto& name = table.schema.dataset_name;
    Rng rng(derive_seed(seed, "test/" + name));
    rng.shuffle(std::span<std::size_t>(remaining[s]));
    auto& test = mix.tests[name];
    test.reserve(test_per_source);
    for (auto i : remaining[s]) {
      if (test.size() == test_per_source) break;
      FlowRecord record = table.records[i];
      record.source = name;
      if (seen.insert(record).second) test.push_back(std::move(record));
    }
    if (test.size() < test_per_source)
      throw Error(Errc::insufficient_records, "source '" + name + "' yields only " + std::to_string(test.size()) +
                                                  " non-repeat test records disjoint from train/val, needs " +
                                                  std::to_string(test_per_source));
  }
  return mix;
}

namespace detail {

inline void append_escaped(std::string& out, std::string_view field) {
  for (char c : field) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out.push_back(c);
    }
  }
}

inline std::string unescape(std::string_view field) {
  std::string out;
  out.reserve(field.size());
  for (std::size_t i = 0; i < field.size(); ++i) {
    if (field[i] == '\\' && i + 1 < field.size()) {
      const char e = field[++i];
      out.push_back(e == 'n' ? '\n' : e == 'r' ? '\r' : e);
    } else {
      out.push_back(field[i]);
    }
  }
  return out;
}

// One record per line: source SEP label SEP raw_label SEP value...
inline std::string write_split(std::span<const FlowRecord> records, const std::string& sep) {
  std::string out;
  for (const auto& r : records) {
    append_escaped(out, r.source);
    out += sep;
    out += to_string(r.label);
    out += sep;
    append_escaped(out, r.raw_label);
    for (const auto& v : r.values) {
      out += sep;
      append_escaped(out, v);
    }
    out.push_back('\n');
  }
  return out;
}

inline std::vector<FlowRecord> read_split(std::string_view text, const std::string& sep, const std::string& file) {
  std::vector<FlowRecord> out;
  std::size_t line_no = 0;
  for (std::size_t pos = 0; pos < text.size();) {
    ++line_no;
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) throw Error(Errc::format_version_mismatch, file + ": truncated last line");
    auto line = text.substr(pos, end - pos);
    std::vector<std::string> fields;
    for (std::size_t p = 0;;) {
      auto q = line.find(sep, p);
      fields.push_back(unescape(line.substr(p, q - p)));
      if (q == std::string_view::npos) break;
      p = q + sep.size();
    }
    if (fields.size() < 3 || (fields[1] != "attack" && fields[1] != "normal"))
      throw Error(Errc::format_version_mismatch, file + ":" + std::to_string(line_no) + ": malformed record");
    FlowRecord r;
    r.source = std::move(fields[0]);
    r.label = fields[1] == "attack" ? Label::attack : Label::normal;
    r.raw_label = std::move(fields[2]);
    r.values.assign(std::make_move_iterator(fields.begin() + 3), std::make_move_iterator(fields.end()));
    out.push_back(std::move(r));
    pos = end + 1;
  }
  return out;
}

}  // namespace detail

/// Writes mix.json (format, version, seed, separator, per-source schemas)
/// plus train.txt, val.txt and test_<source>.txt.
inline void serialize_mix(const MixDataset& mix, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(Errc::io_error, "cannot create '" + dir.string() + "': " + ec.message());
  const auto sep = utf8_encode(mix.separator);

  nlohmann::json sources = nlohmann::json::array();
  nlohmann::json test_files = nlohmann::json::object();
  for (const auto& schema : mix.schemas) {
    sources.push_back({{"name", schema.dataset_name}, {"schema", schema_to_json(schema)}});
  }
  for (const auto& [name, records] : mix.tests) test_files[name] = "test_" + name + ".txt";

  char code_point[16];
  std::snprintf(code_point, sizeof code_point, "U+%04X", static_cast<unsigned>(mix.separator));
  nlohmann::json header = {{"format", kMixFormatName},
                           {"version", kMixFormatVersion},
                           {"seed", mix.seed},
                           {"separator", code_point},
                           {"per_source", mix.per_source},
                           {"test_per_source", mix.test_per_source},
                           {"split_policy", mix.split_policy},
                           {"sources", sources},
                           {"files", {{"train", "train.txt"}, {"val", "val.txt"}, {"tests", test_files}}},
                           {"counts", {{"train", mix.train.size()}, {"val", mix.val.size()}}}};

  csv::write_file((dir / "mix.json").string(), header.dump(2) + "\n");
  csv::write_file((dir / "train.txt").string(), detail::write_split(mix.train, sep));
  csv::write_file((dir / "val.txt").string(), detail::write_split(mix.val, sep));
  for (const auto& [name, records] : mix.tests)
    csv::write_file((dir / ("test_" + name + ".txt")).string(), detail::write_split(records, sep));
}

inline MixDataset load_mix(const std::filesystem::path& dir) {
  const auto header_path = (dir / "mix.json").string();
  const auto text = csv::read_file(header_path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::format_version_mismatch, header_path + ": unreadable header (" + e.what() + ")");
  }
  if (!header.is_object() || header.value("format", "") != kMixFormatName ||
      header.value("version", -1) != kMixFormatVersion)
    throw Error(Errc::format_version_mismatch,
                header_path + ": expected " + std::string(kMixFormatName) + " v" + std::to_string(kMixFormatVersion));

  MixDataset mix;
  try {
    mix.seed = header.at("seed").get<std::uint64_t>();
    const auto cp = header.at("separator").get<std::string>();
    if (!cp.starts_with("U+")) throw Error(Errc::format_version_mismatch, header_path + ": bad separator");
    mix.separator = static_cast<char32_t>(std::stoul(cp.substr(2), nullptr, 16));
    mix.per_source = header.at("per_source").get<std::size_t>();
    mix.test_per_source = header.at("test_per_source").get<std::size_t>();
    mix.split_policy = header.at("split_policy").get<std::string>();
    for (const auto& s : header.at("sources")) mix.schemas.push_back(schema_from_json(s.at("schema")));
    const auto sep = utf8_encode(mix.separator);
    const auto& files = header.at("files");
    auto read = [&](const std::string& name) {
      auto path = (dir / name).string();
      return detail::read_split(csv::read_file(path), sep, path);
    };
    mix.train = read(files.at("train").get<std::string>());
    mix.val = read(files.at("val").get<std::string>());
    for (const auto& [name, file] : files.at("tests").items()) mix.tests[name] = read(file.get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::format_version_mismatch, header_path + ": " + e.what());
  } catch (const std::invalid_argument&) {
    throw Error(Errc::format_version_mismatch, header_path + ": bad separator code point");
  }
  return mix;
}

}  // namespace flowdetect
