// SPDX-FileCopyrightText: (c) 2026 The flowdetect Authors
//
// SPDX-License-Identifier: Apache-2.0

// Deterministic stand-in corpora: a separable flow table for end-to-end
// learning checks, and CSV generators shaped like the four public IDS
// datasets (column count, value formats, label conventions).

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "flowdetect/csv.hpp"
#include "flowdetect/error.hpp"
#include "flowdetect/flow_ingest.hpp"
#include "flowdetect/rng.hpp"

namespace flowdetect::synthetic {

/// Index of the feature that decides the label in separable_table().
inline constexpr std::size_t kDecisiveFeature = 3;
inline constexpr std::string_view kAttackFlag = "flagX";

inline Schema separable_schema(std::string name = "synthetic") {
  Schema s;
  s.dataset_name = std::move(name);
  s.columns = {{"proto", ColumnKind::categorical},   {"duration", ColumnKind::numeric},
               {"src_bytes", ColumnKind::numeric},    {"flag", ColumnKind::categorical},
               {"dst_bytes", ColumnKind::numeric},    {"count", ColumnKind::numeric},
               {"srv_count", ColumnKind::numeric},    {"same_srv_rate", ColumnKind::numeric},
               {"label", ColumnKind::label}};
  s.label_normal_values = {"normal"};
  return s;
}

/// Balanced two-class table where a record is an attack iff its flag
/// feature equals "flagX". Every other feature is drawn independently of
/// the label: integers 0-999 and two-decimal rates.
inline FlowTable separable_table(std::size_t n, std::uint64_t seed, std::string name = "synthetic") {
  static constexpr std::string_view protos[] = {"tcp", "udp", "icmp"};
  static constexpr std::string_view benign_flags[] = {"flagA", "flagB", "flagC"};
  FlowTable table{separable_schema(name), {}};
  table.records.reserve(n);
  Rng rng(seed);
  auto integer = [&] { return std::to_string(rng.below(1000)); };
  for (std::size_t i = 0; i < n; ++i) {
    const bool attack = rng.below(2) == 1;
    FlowRecord r;
    r.source = table.schema.dataset_name;
    r.label = attack ? Label::attack : Label::normal;
    r.raw_label = attack ? "attack" : "normal";
    r.values.emplace_back(protos[rng.below(3)]);
    r.values.push_back(integer());
    r.values.push_back(integer());
    r.values.emplace_back(attack ? kAttackFlag : benign_flags[rng.below(3)]);
    r.values.push_back(integer());
    r.values.push_back(integer());
    r.values.push_back(integer());
    const auto rate = rng.below(101);
    r.values.push_back(std::to_string(rate / 100) + "." + (rate % 100 < 10 ? "0" : "") + std::to_string(rate % 100));
    table.records.push_back(std::move(r));
  }
  return table;
}

enum class DatasetStyle { nsl_kdd, kdd99, unsw_nb15, x_iiotid };

inline constexpr DatasetStyle kAllStyles[] = {DatasetStyle::nsl_kdd, DatasetStyle::kdd99, DatasetStyle::unsw_nb15,
                                              DatasetStyle::x_iiotid};

inline std::string_view to_string(DatasetStyle s) {
  switch (s) {
    case DatasetStyle::nsl_kdd: return "nsl_kdd";
    case DatasetStyle::kdd99: return "kdd99";
    case DatasetStyle::unsw_nb15: return "unsw_nb15";
    case DatasetStyle::x_iiotid: return "x_iiotid";
  }
  return "nsl_kdd";
}

inline DatasetStyle dataset_style_from_string(std::string_view text) {
  for (auto s : kAllStyles)
    if (to_string(s) == text) return s;
  throw Error(Errc::invalid_argument, "unknown dataset style '" + std::string(text) + "'");
}

namespace detail {

enum class Gen { count, small, flag01, rate, real6, big, category, ip, date, timestamp, port, row_id };

struct ColumnGen {
  std::string name;
  Gen gen;
  std::vector<std::string> choices = {};  // categories; attack records favour the tail half
  double scale = 1000.0;
};

inline std::string fixed(double v, int places) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", places, v);
  return buf;
}

inline std::string draw(const ColumnGen& c, bool attack, Rng& rng, std::size_t row) {
  // Attacks skew towards the upper part of numeric ranges.
  const double u = attack ? 0.3 + 0.7 * rng.uniform01() : 0.8 * rng.uniform01();
  switch (c.gen) {
    case Gen::count: return std::to_string(static_cast<long long>(std::floor(std::exp(u * std::log(c.scale + 1.0)) - 1.0)));
    case Gen::small: return std::to_string(static_cast<long long>(u * c.scale));
    case Gen::flag01: return rng.uniform01() < (attack ? 0.6 : 0.1) ? "1" : "0";
    case Gen::rate: return fixed(std::round(100.0 * u) / 100.0, 2);
    case Gen::real6: return fixed(std::exp(u * std::log(c.scale + 1.0)) - 1.0, 6);
    case Gen::big: return std::to_string(rng.below(4294967296ull));
    case Gen::category: {
      const std::size_t n = c.choices.size();
      const std::size_t half = (n + 1) / 2;
      const std::size_t i = attack && rng.uniform01() < 0.7 ? half - 1 + rng.below(n - half + 1) : rng.below(half);
      return c.choices[i];
    }
    case Gen::ip:
      return "192.168." + std::to_string(rng.below(attack ? 4 : 2)) + "." + std::to_string(1 + rng.below(254));
    case Gen::date: return std::to_string(1 + rng.below(28)) + "/0" + std::to_string(1 + rng.below(9)) + "/2020";
    case Gen::timestamp: return std::to_string(1577836800 + rng.below(31536000));
    case Gen::port: return std::to_string(attack ? rng.below(1024) : 1024 + rng.below(64511));
    case Gen::row_id: return std::to_string(row + 1);
  }
  return {};
}

struct StyleSpec {
  Schema schema;
  std::vector<ColumnGen> features;  // in schema order, non-label columns only
  std::vector<std::string> normal_labels;
  std::vector<std::string> attack_labels;
};

inline std::vector<ColumnGen> kdd_features() {
  using G = Gen;
  std::vector<ColumnGen> f = {
      {"duration", G::count, {}, 5000},
      {"protocol_type", G::category, {"tcp", "udp", "icmp"}},
      {"service", G::category, {"http", "smtp", "ftp_data", "domain_u", "private", "ecr_i", "eco_i", "other"}},
      {"flag", G::category, {"SF", "S1", "RSTO", "REJ", "S0", "RSTR", "SH"}},
      {"src_bytes", G::count, {}, 100000},
      {"dst_bytes", G::count, {}, 100000},
      {"land", G::flag01},
      {"wrong_fragment", G::small, {}, 3},
      {"urgent", G::small, {}, 2},
      {"hot", G::small, {}, 6},
      {"num_failed_logins", G::small, {}, 2},
      {"logged_in", G::flag01},
      {"num_compromised", G::small, {}, 4},
      {"root_shell", G::flag01},
      {"su_attempted", G::small, {}, 2},
      {"num_root", G::small, {}, 5},
      {"num_file_creations", G::small, {}, 4},
      {"num_shells", G::small, {}, 2},
      {"num_access_files", G::small, {}, 3},
      {"num_outbound_cmds", G::small, {}, 1},
      {"is_host_login", G::flag01},
      {"is_guest_login", G::flag01},
      {"count", G::small, {}, 511},
      {"srv_count", G::small, {}, 511},
  };
  for (auto n : {"serror_rate", "srv_serror_rate", "rerror_rate", "srv_rerror_rate", "same_srv_rate", "diff_srv_rate",
                 "srv_diff_host_rate"})
    f.push_back({n, G::rate});
  f.push_back({"dst_host_count", G::small, {}, 255});
  f.push_back({"dst_host_srv_count", G::small, {}, 255});
  for (auto n : {"dst_host_same_srv_rate", "dst_host_diff_srv_rate", "dst_host_same_src_port_rate",
                 "dst_host_srv_diff_host_rate", "dst_host_serror_rate", "dst_host_srv_serror_rate",
                 "dst_host_rerror_rate", "dst_host_srv_rerror_rate"})
    f.push_back({n, G::rate});
  return f;
}

inline StyleSpec style_spec(DatasetStyle style) {
  using G = Gen;
  StyleSpec spec;
  auto& s = spec.schema;
  s.dataset_name = std::string(to_string(style));
  switch (style) {
    case DatasetStyle::nsl_kdd:
    case DatasetStyle::kdd99: {
      const bool nsl = style == DatasetStyle::nsl_kdd;
      spec.features = kdd_features();
      s.has_header = false;
      const std::string dot = nsl ? "" : ".";
      spec.normal_labels = {"normal" + dot};
      for (auto a : {"neptune", "smurf", "satan", "ipsweep", "portsweep", "back", "teardrop", "warezclient"})
        spec.attack_labels.push_back(a + dot);
      s.label_normal_values = {"normal"};
      for (const auto& c : spec.features)
        s.columns.push_back({c.name, c.gen == G::category ? ColumnKind::categorical : ColumnKind::numeric});
      s.columns.push_back({"class", ColumnKind::label});
      if (nsl) {
        spec.features.push_back({"difficulty", G::small, {}, 21});
        s.columns.push_back({"difficulty", ColumnKind::ignored});
      }
      break;
    }
    case DatasetStyle::unsw_nb15: {
      s.has_header = true;
      spec.features = {
          {"id", G::row_id},
          {"dur", G::real6, {}, 60},
          {"proto", G::category, {"tcp", "udp", "arp", "unas", "ospf", "sctp"}},
          {"service", G::category, {"-", "http", "dns", "ftp", "smtp", "ftp-data"}},
          {"state", G::category, {"FIN", "CON", "INT", "REQ", "RST"}},
          {"spkts", G::count, {}, 10000},
          {"dpkts", G::count, {}, 10000},
          {"sbytes", G::count, {}, 1000000},
          {"dbytes", G::count, {}, 1000000},
          {"rate", G::real6, {}, 100000},
          {"sttl", G::category, {"31", "62", "0", "254", "252"}},
          {"dttl", G::category, {"29", "252", "0", "253"}},
          {"sload", G::real6, {}, 1e8},
          {"dload", G::real6, {}, 1e8},
          {"sloss", G::count, {}, 500},
          {"dloss", G::count, {}, 500},
          {"sinpkt", G::real6, {}, 1000},
          {"dinpkt", G::real6, {}, 1000},
          {"sjit", G::real6, {}, 10000},
          {"djit", G::real6, {}, 10000},
          {"swin", G::category, {"255", "0"}},
          {"stcpb", G::big},
          {"dtcpb", G::big},
          {"dwin", G::category, {"255", "0"}},
          {"tcprtt", G::real6, {}, 1},
          {"synack", G::real6, {}, 1},
          {"ackdat", G::real6, {}, 1},
          {"smean", G::count, {}, 1500},
          {"dmean", G::count, {}, 1500},
          {"trans_depth", G::small, {}, 3},
          {"response_body_len", G::count, {}, 100000},
          {"ct_srv_src", G::small, {}, 63},
          {"ct_state_ttl", G::small, {}, 6},
          {"ct_dst_ltm", G::small, {}, 50},
          {"ct_src_dport_ltm", G::small, {}, 50},
          {"ct_dst_sport_ltm", G::small, {}, 46},
          {"ct_dst_src_ltm", G::small, {}, 63},
          {"is_ftp_login", G::flag01},
          {"ct_ftp_cmd", G::small, {}, 3},
          {"ct_flw_http_mthd", G::small, {}, 16},
          {"ct_src_ltm", G::small, {}, 60},
          {"ct_srv_dst", G::small, {}, 62},
          {"is_sm_ips_ports", G::flag01},
          {"attack_cat", G::category, {"Normal", "Generic", "Exploits", "Fuzzers", "DoS", "Reconnaissance"}},
      };
      spec.normal_labels = {"0"};
      spec.attack_labels = {"1"};
      s.label_normal_values = {"0"};
      for (const auto& c : spec.features) {
        ColumnKind kind = c.gen == G::category ? ColumnKind::categorical : ColumnKind::numeric;
        if (c.name == "id" || c.name == "attack_cat") kind = ColumnKind::ignored;
        s.columns.push_back({c.name, kind});
      }
      s.columns.push_back({"label", ColumnKind::label});
      break;
    }
    case DatasetStyle::x_iiotid: {
      s.has_header = true;
      spec.features = {
          {"Date", G::date},
          {"Timestamp", G::timestamp},
          {"Scr_IP", G::ip},
          {"Scr_port", G::port},
          {"Des_IP", G::ip},
          {"Des_port", G::port},
          {"Protocol", G::category, {"tcp", "udp", "icmp"}},
          {"Service", G::category, {"http", "mqtt", "coap", "-", "dns", "ssh", "ftp"}},
          {"Duration", G::real6, {}, 100},
          {"Scr_bytes", G::count, {}, 100000},
          {"Des_bytes", G::count, {}, 100000},
          {"Conn_state", G::small, {}, 12},
          {"missed_bytes", G::count, {}, 1000},
      };
      for (auto n : {"is_syn_only", "Is_SYN_ACK", "is_pure_ack", "is_with_payload", "FIN_or_RST", "Bad_checksum",
                     "is_SYN_with_RST"})
        spec.features.push_back({n, G::flag01});
      for (auto n : {"Scr_pkts", "Scr_ip_bytes", "Des_pkts", "Des_ip_bytes"}) spec.features.push_back({n, G::count, {}, 50000});
      spec.features.push_back({"anomaly_alert", G::flag01});
      spec.features.push_back({"total_bytes", G::count, {}, 200000});
      spec.features.push_back({"total_packet", G::count, {}, 5000});
      for (auto n : {"paket_rate", "byte_rate", "Scr_packts_ratio", "Des_pkts_ratio", "Scr_bytes_ratio", "Des_bytes_ratio"})
        spec.features.push_back({n, G::real6, {}, 1000});
      for (auto n : {"user_time", "nice_time", "system_time", "iowait_time", "ideal_time", "tps", "rtps", "wtps",
                     "ldavg_1", "kbmemused", "num_Proc/s", "num_cswch/s"}) {
        spec.features.push_back({std::string("Avg_") + n, G::real6, {}, 100});
        spec.features.push_back({std::string("Std_") + n, G::real6, {}, 10});
      }
      spec.features.push_back({"OSSEC_alert", G::flag01});
      spec.features.push_back({"OSSEC_alert_level", G::small, {}, 12});
      for (auto n : {"Login_attempt", "Succesful_login", "File_activity", "Process_activity",
                     "read_write_physical.process", "is_privileged"})
        spec.features.push_back({n, G::flag01});
      spec.features.push_back({"class1", G::category, {"Normal", "Reconnaissance", "Weaponization", "Exploitation"}});
      spec.features.push_back({"class2", G::category, {"Normal", "Scanning", "BruteForce", "MITM", "Exfiltration"}});
      spec.normal_labels = {"Normal"};
      spec.attack_labels = {"Attack"};
      s.label_normal_values = {"Normal"};
      for (const auto& c : spec.features) {
        ColumnKind kind = (c.gen == G::category || c.gen == G::ip || c.gen == G::date) ? ColumnKind::categorical
                                                                                          : ColumnKind::numeric;
        if (c.name == "class1" || c.name == "class2") kind = ColumnKind::ignored;
        s.columns.push_back({c.name, kind});
      }
      s.columns.push_back({"class3", ColumnKind::label});
      break;
    }
  }
  return spec;
}

}  // namespace detail

inline Schema styled_schema(DatasetStyle style) { return detail::style_spec(style).schema; }

/// CSV text with the dataset's header convention; about half the rows are attacks.
inline std::string styled_csv(DatasetStyle style, std::size_t n, std::uint64_t seed) {
  const auto spec = detail::style_spec(style);
  const auto& schema = spec.schema;
  Rng rng(seed);
  std::string out;
  std::vector<std::string> row;
  if (schema.has_header) {
    for (const auto& c : schema.columns) row.push_back(c.name);
    csv::append_row(out, row, schema.delimiter);
  }
  const std::size_t label_at = schema.label_index();
  for (std::size_t i = 0; i < n; ++i) {
    const bool attack = rng.below(2) == 1;
    row.clear();
    std::size_t f = 0;
    for (std::size_t k = 0; k < schema.columns.size(); ++k) {
      if (k == label_at) {
        const auto& pool = attack ? spec.attack_labels : spec.normal_labels;
        row.push_back(pool[rng.below(pool.size())]);
      } else {
        row.push_back(detail::draw(spec.features[f++], attack, rng, i));
      }
    }
    csv::append_row(out, row, schema.delimiter);
  }
  return out;
}

inline FlowTable styled_table(DatasetStyle style, std::size_t n, std::uint64_t seed) {
  return parse_dataset_text(styled_csv(style, n, seed), styled_schema(style));
}

}  // namespace flowdetect::synthetic
