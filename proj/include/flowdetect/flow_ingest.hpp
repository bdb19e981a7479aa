// SPDX-FileCopyrightText: (c) 2026 The flowdetect Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowdetect/csv.hpp"
#include "flowdetect/error.hpp"
#include "flowdetect/rng.hpp"

namespace flowdetect {

enum class ColumnKind { numeric, categorical, label, ignored, automatic };

inline std::string_view to_string(ColumnKind kind) {
  switch (kind) {
    case ColumnKind::numeric: return "numeric";
    case ColumnKind::categorical: return "categorical";
    case ColumnKind::label: return "label";
    case ColumnKind::ignored: return "ignored";
    case ColumnKind::automatic: return "auto";
  }
  return "auto";
}

inline ColumnKind column_kind_from_string(std::string_view text) {
  if (text == "numeric") return ColumnKind::numeric;
  if (text == "categorical") return ColumnKind::categorical;
  if (text == "label") return ColumnKind::label;
  if (text == "ignored") return ColumnKind::ignored;
  if (text == "auto") return ColumnKind::automatic;
  throw Error(Errc::invalid_schema, "unknown column kind '" + std::string(text) + "'");
}

enum class Label { normal = 0, attack = 1 };

inline std::string_view to_string(Label label) { return label == Label::attack ? "attack" : "normal"; }

struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::automatic;

  bool operator==(const Column&) const = default;
};

struct Schema {
  std::string dataset_name;
  std::vector<Column> columns;
  std::set<std::string> label_normal_values;
  char delimiter = ',';
  bool has_header = true;

  bool operator==(const Schema&) const = default;

  /// Throws MissingLabelColumn / InvalidSchema when the invariants fail.
  void validate() const {
    std::size_t labels = 0;
    std::set<std::string_view> names;
    for (const auto& column : columns) {
      if (column.kind == ColumnKind::label) ++labels;
      if (!names.insert(column.name).second)
        throw Error(Errc::invalid_schema, dataset_name + ": duplicate column '" + column.name + "'");
    }
    if (labels == 0) throw Error(Errc::missing_label_column, dataset_name + ": no column has kind 'label'");
    if (labels > 1) throw Error(Errc::invalid_schema, dataset_name + ": more than one label column");
    if (delimiter == '"' || delimiter == '\n' || delimiter == '\r')
      throw Error(Errc::invalid_schema, dataset_name + ": unusable delimiter");
  }

  std::size_t label_index() const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i].kind == ColumnKind::label) return i;
    throw Error(Errc::missing_label_column, dataset_name + ": no column has kind 'label'");
  }

  /// Schema positions of the columns that become FlowRecord values.
  std::vector<std::size_t> feature_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i].kind != ColumnKind::label && columns[i].kind != ColumnKind::ignored) out.push_back(i);
    return out;
  }

  std::vector<Column> feature_columns() const {
    std::vector<Column> out;
    for (auto i : feature_indices()) out.push_back(columns[i]);
    return out;
  }
};

struct FlowRecord {
  std::vector<std::string> values;
  Label label = Label::normal;
  std::string source;
  std::string raw_label;  // kept for run metadata and lossless re-serialization

  bool operator==(const FlowRecord&) const = default;
};

/// Identity used for dedup and disjointness: (source, values, label).
inline bool same_identity(const FlowRecord& a, const FlowRecord& b) {
  return a.label == b.label && a.source == b.source && a.values == b.values;
}

struct RecordIdentityHash {
  std::size_t operator()(const FlowRecord& r) const {
    std::uint64_t h = fnv1a64(r.source);
    h = mix64(h ^ static_cast<std::uint64_t>(r.label));
    for (const auto& v : r.values) h = mix64(fnv1a64(v, h) ^ v.size());
    return static_cast<std::size_t>(h);
  }
};

struct RecordIdentityEqual {
  bool operator()(const FlowRecord& a, const FlowRecord& b) const { return same_identity(a, b); }
};

using RecordSet = std::unordered_set<FlowRecord, RecordIdentityHash, RecordIdentityEqual>;

struct FlowTable {
  Schema schema;
  std::vector<FlowRecord> records;

  bool operator==(const FlowTable&) const = default;
  bool empty() const { return records.empty(); }
  std::size_t size() const { return records.size(); }
};

namespace detail {

inline std::string fold_label(std::string_view raw) {
  auto begin = raw.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return {};
  auto end = raw.find_last_not_of(" \t\r\n");
  std::string out(raw.substr(begin, end - begin + 1));
  while (!out.empty() && out.back() == '.') out.pop_back();
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace detail

/// Case-folded, trimmed, trailing-dot-stripped membership test against the
/// schema's normal values. Total.
inline Label normalize_label(std::string_view raw, const Schema& schema) {
  const std::string folded = detail::fold_label(raw);
  for (const auto& normal : schema.label_normal_values)
    if (detail::fold_label(normal) == folded) return Label::normal;
  return Label::attack;
}

/// Whole-string finite decimal number (optional sign, fraction, exponent).
inline std::optional<double> parse_number(std::string_view text) {
  if (text.empty()) return std::nullopt;
  std::string_view body = text;
  if (body.front() == '+') body.remove_prefix(1);
  if (body.empty() || !(std::isdigit(static_cast<unsigned char>(body.front())) || body.front() == '.' ||
                        body.front() == '-'))
    return std::nullopt;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), value, std::chars_format::general);
  if (ec != std::errc() || ptr != body.data() + body.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

/// Parses CSV text under `schema`. Row numbers in errors are physical line numbers.
inline FlowTable parse_dataset_text(std::string_view text, const Schema& schema) {
  schema.validate();
  const auto label_at = schema.label_index();
  const auto features = schema.feature_indices();

  FlowTable table{schema, {}};
  auto rows = csv::parse(text, schema.delimiter);
  std::size_t first = schema.has_header && !rows.empty() ? 1 : 0;
  if (schema.has_header && !rows.empty() && rows[0].fields.size() != schema.columns.size())
    throw MalformedRowError(rows[0].line, "header has " + std::to_string(rows[0].fields.size()) +
                                              " fields, schema declares " + std::to_string(schema.columns.size()));
  table.records.reserve(rows.size() - first);
  for (std::size_t r = first; r < rows.size(); ++r) {
    auto& fields = rows[r].fields;
    if (fields.size() != schema.columns.size())
      throw MalformedRowError(rows[r].line, "expected " + std::to_string(schema.columns.size()) + " fields, found " +
                                                std::to_string(fields.size()));
    FlowRecord record;
    record.values.reserve(features.size());
    for (auto i : features) record.values.push_back(std::move(fields[i]));
    record.raw_label = std::move(fields[label_at]);
    record.label = normalize_label(record.raw_label, schema);
    record.source = schema.dataset_name;
    table.records.push_back(std::move(record));
  }
  return table;
}

inline FlowTable parse_dataset(const std::string& path, const Schema& schema) {
  return parse_dataset_text(csv::read_file(path), schema);
}

/// Inverse of parse_dataset_text: ignored columns are written empty, the
/// label column carries the raw label.
inline std::string write_dataset_text(const FlowTable& table) {
  const auto& schema = table.schema;
  const auto label_at = schema.label_index();
  const auto features = schema.feature_indices();
  std::string out;
  if (schema.has_header) {
    std::vector<std::string> header;
    for (const auto& c : schema.columns) header.push_back(c.name);
    csv::append_row(out, header, schema.delimiter);
  }
  std::vector<std::string> fields(schema.columns.size());
  for (const auto& record : table.records) {
    if (record.values.size() != features.size())
      throw Error(Errc::shape_mismatch, "record width does not match schema '" + schema.dataset_name + "'");
    std::fill(fields.begin(), fields.end(), std::string{});
    for (std::size_t k = 0; k < features.size(); ++k) fields[features[k]] = record.values[k];
    fields[label_at] = record.raw_label;
    csv::append_row(out, fields, schema.delimiter);
  }
  return out;
}

/// Kind per feature column (value position). `auto` columns resolve to
/// numeric iff every non-empty value parses as a finite number and at least
/// one value is non-empty.
inline std::vector<ColumnKind> column_kinds(const FlowTable& table) {
  if (table.empty()) throw Error(Errc::empty_table, "column_kinds on empty table '" + table.schema.dataset_name + "'");
  auto columns = table.schema.feature_columns();
  std::vector<ColumnKind> kinds;
  kinds.reserve(columns.size());
  for (std::size_t k = 0; k < columns.size(); ++k) {
    if (columns[k].kind != ColumnKind::automatic) {
      kinds.push_back(columns[k].kind);
      continue;
    }
    bool any = false;
    bool numeric = true;
    for (const auto& record : table.records) {
      const auto& v = record.values.at(k);
      if (v.empty()) continue;
      any = true;
      if (!parse_number(v)) {
        numeric = false;
        break;
      }
    }
    kinds.push_back(any && numeric ? ColumnKind::numeric : ColumnKind::categorical);
  }
  return kinds;
}

/// Copy of the schema with `auto` feature columns replaced by their inferred kinds.
inline Schema resolve_schema(const FlowTable& table) {
  Schema out = table.schema;
  if (table.empty()) return out;
  auto kinds = column_kinds(table);
  auto idx = out.feature_indices();
  for (std::size_t k = 0; k < idx.size(); ++k) out.columns[idx[k]].kind = kinds[k];
  return out;
}

// Schema manifest (JSON):
//   {"datasets": [{"name": "nsl_kdd", "delimiter": ",", "has_header": false,
//                  "label_normal_values": ["normal"], "file": "KDDTrain+.txt",
//                  "columns": [{"name": "duration", "kind": "numeric"}, ...]}]}

inline nlohmann::json schema_to_json(const Schema& schema) {
  nlohmann::json columns = nlohmann::json::array();
  for (const auto& c : schema.columns) columns.push_back({{"name", c.name}, {"kind", to_string(c.kind)}});
  return {{"name", schema.dataset_name},
          {"delimiter", std::string(1, schema.delimiter)},
          {"has_header", schema.has_header},
          {"label_normal_values", schema.label_normal_values},
          {"columns", columns}};
}

inline Schema schema_from_json(const nlohmann::json& j) {
  try {
    Schema schema;
    schema.dataset_name = j.at("name").get<std::string>();
    const auto delimiter = j.value("delimiter", std::string(","));
    if (delimiter.size() != 1) throw Error(Errc::invalid_schema, schema.dataset_name + ": delimiter must be one character");
    schema.delimiter = delimiter[0];
    schema.has_header = j.value("has_header", true);
    for (const auto& v : j.value("label_normal_values", std::vector<std::string>{"normal"}))
      schema.label_normal_values.insert(v);
    for (const auto& c : j.at("columns")) {
      if (c.is_string()) {
        schema.columns.push_back({c.get<std::string>(), ColumnKind::automatic});
      } else {
        schema.columns.push_back({c.at("name").get<std::string>(), column_kind_from_string(c.value("kind", "auto"))});
      }
    }
    schema.validate();
    return schema;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::invalid_schema, e.what());
  }
}

struct ManifestEntry {
  Schema schema;
  std::optional<std::string> file;  // resolved against the manifest directory
};

inline std::vector<ManifestEntry> load_schema_manifest(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(csv::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::invalid_schema, path + ": " + e.what());
  }
  if (!j.contains("datasets") || !j["datasets"].is_array())
    throw Error(Errc::invalid_schema, path + ": missing 'datasets' array");
  const auto base = std::filesystem::path(path).parent_path();
  std::vector<ManifestEntry> out;
  std::set<std::string> names;
  for (const auto& d : j["datasets"]) {
    ManifestEntry entry{schema_from_json(d), std::nullopt};
    if (!names.insert(entry.schema.dataset_name).second)
      throw Error(Errc::invalid_schema, path + ": duplicate dataset '" + entry.schema.dataset_name + "'");
    if (d.contains("file")) entry.file = (base / d["file"].get<std::string>()).string();
    out.push_back(std::move(entry));
  }
  return out;
}

}  // namespace flowdetect
