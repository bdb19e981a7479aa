// SPDX-FileCopyrightText: (c) 2026 The flowdetect Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowdetect/error.hpp"
#include "flowdetect/flow_ingest.hpp"
#include "flowdetect/rng.hpp"

namespace flowdetect {

enum class NoiseKind { poisson, uniform, gaussian, laplace };

inline constexpr NoiseKind kAllNoiseKinds[] = {NoiseKind::poisson, NoiseKind::uniform, NoiseKind::gaussian,
                                               NoiseKind::laplace};

inline std::string_view to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::poisson: return "poisson";
    case NoiseKind::uniform: return "uniform";
    case NoiseKind::gaussian: return "gaussian";
    case NoiseKind::laplace: return "laplace";
  }
  return "gaussian";
}

inline NoiseKind noise_kind_from_string(std::string_view text) {
  for (auto k : kAllNoiseKinds)
    if (to_string(k) == text) return k;
  throw Error(Errc::invalid_argument, "unknown perturbation '" + std::string(text) + "'");
}

/// Theoretical variance of the centered noise: lambda, a^2/3, sigma^2, 2b^2.
inline double noise_variance(NoiseKind kind, double scale) {
  switch (kind) {
    case NoiseKind::poisson: return scale;
    case NoiseKind::uniform: return scale * scale / 3.0;
    case NoiseKind::gaussian: return scale * scale;
    case NoiseKind::laplace: return 2.0 * scale * scale;
  }
  return 0.0;
}

/// Fourth central moment, for standard errors of the sample variance.
inline double noise_fourth_moment(NoiseKind kind, double scale) {
  const double s4 = scale * scale * scale * scale;
  switch (kind) {
    case NoiseKind::poisson: return scale * (1.0 + 3.0 * scale);
    case NoiseKind::uniform: return s4 / 5.0;
    case NoiseKind::gaussian: return 3.0 * s4;
    case NoiseKind::laplace: return 24.0 * s4;
  }
  return 0.0;
}

/// One centered draw.
///  poisson:  P(lambda) - lambda; sequential-search inversion for lambda <= 30,
///            rounded normal approximation above.
///  uniform:  affine map of a unit draw onto [-a, a).
///  gaussian: polar method.
///  laplace:  inverse CDF.
inline double sample_noise(NoiseKind kind, double scale, Rng& rng) {
  switch (kind) {
    case NoiseKind::poisson: {
      const double lambda = scale;
      if (lambda <= 0.0) return 0.0;
      double k;
      if (lambda <= 30.0) {
        const double u = rng.uniform01();
        double p = std::exp(-lambda);
        double cdf = p;
        k = 0.0;
        while (u > cdf && p > 0.0) {
          k += 1.0;
          p *= lambda / k;
          cdf += p;
        }
      } else {
        k = std::max(0.0, std::round(lambda + std::sqrt(lambda) * rng.normal()));
      }
      return k - lambda;
    }
    case NoiseKind::uniform:
      return scale * (2.0 * rng.uniform01() - 1.0);
    case NoiseKind::gaussian:
      return scale * rng.normal();
    case NoiseKind::laplace: {
      const double u = rng.open01() - 0.5;
      const double magnitude = -scale * std::log(1.0 - 2.0 * std::fabs(u));
      return u < 0.0 ? -magnitude : magnitude;
    }
  }
  return 0.0;
}

struct MomentReport {
  double mean = 0.0;
  double variance = 0.0;  // population variance of the drawn stream
  double min = 0.0;
  double max = 0.0;
  std::size_t n = 0;
};

inline MomentReport moment_report(NoiseKind kind, double scale, std::size_t n_draws, std::uint64_t seed) {
  if (n_draws == 0) throw Error(Errc::invalid_argument, "moment_report needs at least one draw");
  Rng rng(seed);
  MomentReport r;
  r.min = std::numeric_limits<double>::infinity();
  r.max = -std::numeric_limits<double>::infinity();
  double m2 = 0.0;
  for (std::size_t i = 0; i < n_draws; ++i) {
    const double x = sample_noise(kind, scale, rng);
    ++r.n;
    const double delta = x - r.mean;
    r.mean += delta / static_cast<double>(r.n);
    m2 += delta * (x - r.mean);
    r.min = std::min(r.min, x);
    r.max = std::max(r.max, x);
  }
  r.variance = m2 / static_cast<double>(r.n);
  return r;
}

enum class ScaleMode { absolute, column_std };

struct PerturbSpec {
  NoiseKind kind = NoiseKind::gaussian;
  double scale = 1.0;  // lambda | half-width a | sigma | diversity b; a multiplier in column_std mode
  std::uint64_t seed = 0;
  bool clip_nonnegative = true;
  bool round_to_precision = true;
  ScaleMode scale_mode = ScaleMode::absolute;

  bool operator==(const PerturbSpec&) const = default;
};

/// Defaults for "--scale auto": lambda = 4 for poisson; a = sigma = b =
/// 1 x the column's standard deviation for the others.
inline PerturbSpec auto_scaled(NoiseKind kind, std::uint64_t seed) {
  PerturbSpec spec;
  spec.kind = kind;
  spec.seed = seed;
  if (kind == NoiseKind::poisson) {
    spec.scale = 4.0;
  } else {
    spec.scale = 1.0;
    spec.scale_mode = ScaleMode::column_std;
  }
  return spec;
}

inline nlohmann::json to_json(const PerturbSpec& spec) {
  return {{"kind", to_string(spec.kind)},
          {"scale", spec.scale},
          {"scale_mode", spec.scale_mode == ScaleMode::absolute ? "absolute" : "column_std"},
          {"seed", spec.seed},
          {"clip_nonnegative", spec.clip_nonnegative},
          {"round", spec.round_to_precision}};
}

/// Population standard deviation of every numeric feature column (0 elsewhere).
inline std::vector<double> column_std(std::span<const FlowRecord> records, std::span<const ColumnKind> kinds) {
  std::vector<double> out(kinds.size(), 0.0);
  for (std::size_t k = 0; k < kinds.size(); ++k) {
    if (kinds[k] != ColumnKind::numeric) continue;
    double mean = 0.0, m2 = 0.0;
    std::size_t n = 0;
    for (const auto& r : records) {
      if (k >= r.values.size()) continue;
      auto x = parse_number(r.values[k]);
      if (!x) continue;
      ++n;
      const double d = *x - mean;
      mean += d / static_cast<double>(n);
      m2 += d * (*x - mean);
    }
    out[k] = n ? std::sqrt(m2 / static_cast<double>(n)) : 0.0;
  }
  return out;
}

/// Per-source column statistics frozen from a training split.
using ColumnStats = std::map<std::string, std::vector<double>>;

namespace detail {

/// Digits after the decimal point; nullopt for exponent notation.
inline std::optional<int> decimal_places(std::string_view text) {
  if (text.find_first_of("eE") != std::string_view::npos) return std::nullopt;
  auto dot = text.find('.');
  return dot == std::string_view::npos ? 0 : static_cast<int>(text.size() - dot - 1);
}

inline std::string format_number(double value, std::optional<int> places) {
  char buffer[64];
  std::to_chars_result res;
  if (places) {
    res = std::to_chars(buffer, buffer + sizeof buffer, value, std::chars_format::fixed, *places);
  } else {
    res = std::to_chars(buffer, buffer + sizeof buffer, value);
  }
  std::string out(buffer, res.ptr);
  if (out.starts_with('-') && out.find_first_not_of("-0.") == std::string::npos) out.erase(0, 1);
  return out;
}

}  // namespace detail

struct PerturbResult {
  FlowTable table;
  bool no_numeric_columns = false;
  std::size_t cells_perturbed = 0;
};

/// Adds centered noise to every parseable numeric cell, in record-major,
/// column-minor order from a single stream seeded by spec.seed. Categorical
/// cells are copied byte for byte. A cell whose value does not change keeps
/// its original text.
inline PerturbResult perturb_table(const FlowTable& table, const PerturbSpec& spec, std::span<const ColumnKind> kinds,
                                   std::span<const double> column_scales = {}) {
  if (!(spec.scale >= 0.0) || !std::isfinite(spec.scale))
    throw Error(Errc::invalid_argument, "perturbation scale must be finite and >= 0");
  PerturbResult result{table, false, 0};
  const bool any_numeric = std::find(kinds.begin(), kinds.end(), ColumnKind::numeric) != kinds.end();
  if (!any_numeric) {
    result.no_numeric_columns = true;
    return result;
  }
  std::vector<double> scales(kinds.size(), spec.scale);
  if (spec.scale_mode == ScaleMode::column_std) {
    std::vector<double> stds =
        column_scales.empty() ? column_std(table.records, kinds) : std::vector<double>(column_scales.begin(), column_scales.end());
    if (stds.size() != kinds.size()) throw Error(Errc::shape_mismatch, "column scale count does not match kinds");
    for (std::size_t k = 0; k < kinds.size(); ++k) scales[k] = spec.scale * stds[k];
  }

  Rng rng(spec.seed);
  for (auto& record : result.table.records) {
    for (std::size_t k = 0; k < record.values.size() && k < kinds.size(); ++k) {
      if (kinds[k] != ColumnKind::numeric) continue;
      auto& cell = record.values[k];
      auto x = parse_number(cell);
      if (!x) continue;
      double y = *x + sample_noise(spec.kind, scales[k], rng);
      if (spec.clip_nonnegative && *x >= 0.0 && y < 0.0) y = 0.0;
      auto text = detail::format_number(y, spec.round_to_precision ? detail::decimal_places(cell) : std::nullopt);
      auto back = parse_number(text);
      if (back && *back == *x) continue;
      cell = std::move(text);
      ++result.cells_perturbed;
    }
  }
  return result;
}

/// Perturbs a record list that may mix sources, keeping its order. Each
/// source uses its own kinds, its own column statistics (column_std mode)
/// and a stream derived from spec.seed and the source name.
inline std::vector<FlowRecord> perturb_records(std::span<const FlowRecord> records, const PerturbSpec& spec,
                                               const std::map<std::string, std::vector<ColumnKind>>& kinds,
                                               const ColumnStats& stats = {}) {
  std::vector<FlowRecord> out(records.begin(), records.end());
  std::map<std::string, std::vector<std::size_t>> by_source;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto [it, fresh] = by_source.try_emplace(records[i].source);
    if (fresh) order.push_back(records[i].source);
    it->second.push_back(i);
  }
  for (const auto& source : order) {
    auto k = kinds.find(source);
    if (k == kinds.end()) throw Error(Errc::invalid_argument, "no column kinds for source '" + source + "'");
    const auto& idx = by_source[source];
    FlowTable table;
    table.records.reserve(idx.size());
    for (auto i : idx) table.records.push_back(records[i]);
    PerturbSpec local = spec;
    local.seed = derive_seed(spec.seed, "perturb/" + source);
    std::span<const double> scales;
    if (auto s = stats.find(source); s != stats.end()) scales = s->second;
    auto result = perturb_table(table, local, k->second, scales);
    for (std::size_t j = 0; j < idx.size(); ++j) out[idx[j]] = std::move(result.table.records[j]);
  }
  return out;
}

}  // namespace flowdetect
