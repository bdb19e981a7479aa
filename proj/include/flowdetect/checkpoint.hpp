// SPDX-FileCopyrightText: (c) 2026 The flowdetect Authors
//
// SPDX-License-Identifier: Apache-2.0

// Binary tensor container. Layout, all integers little-endian:
//   "FDCK" u32 version  u32 kind (0 model, 1 adapter)
//   u64 header length, header JSON (config / adapter metadata)
//   u32 tensor count, then per tensor: u32 name length, name,
//   u64 rows, u64 cols, rows*cols float32 values.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "flowdetect/error.hpp"
#include "flowdetect/tiny_encoder.hpp"

namespace flowdetect {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

enum class CheckpointKind : std::uint32_t { model = 0, adapter = 1 };

template <typename Int>
void put(std::string& out, Int v) {
  char buf[sizeof(Int)];
  std::memcpy(buf, &v, sizeof(Int));
  out.append(buf, sizeof(Int));
}

class Reader {
 public:
  Reader(std::string_view data, std::string origin) : data_(data), origin_(std::move(origin)) {}

  template <typename Int>
  Int get() {
    Int v;
    std::memcpy(&v, take(sizeof(Int)).data(), sizeof(Int));
    return v;
  }

  std::string_view take(std::size_t n) {
    if (n > data_.size() - pos_) throw Error(Errc::format_version_mismatch, origin_ + ": truncated checkpoint");
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
  std::string origin_;
};

template <typename Visit>
std::string encode_container(CheckpointKind kind, const nlohmann::json& header, std::size_t count, Visit&& visit) {
  std::string out = "FDCK";
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(kind));
  const std::string h = header.dump();
  put<std::uint64_t>(out, h.size());
  out += h;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(count));
  visit([&](const std::string& name, const Tensor<float>& t, bool) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint64_t>(out, t.rows);
    put<std::uint64_t>(out, t.cols);
    const auto* bytes = reinterpret_cast<const char*>(t.data.data());
    out.append(bytes, t.data.size() * sizeof(float));
  });
  return out;
}

struct Decoded {
  nlohmann::json header;
  std::map<std::string, Tensor<float>> tensors;
};

inline Decoded decode_container(std::string_view data, CheckpointKind expected, const std::string& origin) {
  Reader in(data, origin);
  if (in.take(4) != "FDCK") throw Error(Errc::format_version_mismatch, origin + ": not a checkpoint file");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw Error(Errc::format_version_mismatch, origin + ": checkpoint version " + std::to_string(version) +
                                                   ", expected " + std::to_string(kCheckpointVersion));
  if (in.get<std::uint32_t>() != static_cast<std::uint32_t>(expected))
    throw Error(Errc::format_version_mismatch, origin + ": wrong checkpoint kind");
  Decoded d;
  const auto hlen = in.get<std::uint64_t>();
  try {
    d.header = nlohmann::json::parse(in.take(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::format_version_mismatch, origin + ": bad header: " + e.what());
  }
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(in.take(in.get<std::uint32_t>()));
    const auto rows = in.get<std::uint64_t>();
    const auto cols = in.get<std::uint64_t>();
    Tensor<float> t(rows, cols);
    auto bytes = in.take(rows * cols * sizeof(float));
    std::memcpy(t.data.data(), bytes.data(), bytes.size());
    d.tensors.emplace(std::move(name), std::move(t));
  }
  if (!in.done()) throw Error(Errc::format_version_mismatch, origin + ": trailing bytes");
  return d;
}

template <typename Target>
void fill_from(Target& target, std::map<std::string, Tensor<float>>& tensors, const std::string& origin) {
  std::size_t used = 0;
  target.visit([&](const std::string& name, Tensor<float>& t, bool) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error(Errc::shape_mismatch, origin + ": missing tensor " + name);
    if (!it->second.same_shape(t)) throw Error(Errc::shape_mismatch, origin + ": shape mismatch for " + name);
    t = std::move(it->second);
    ++used;
  });
  if (used != tensors.size()) throw Error(Errc::shape_mismatch, origin + ": unexpected extra tensors");
}

inline std::string read_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_binary(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::io_error, "write failed for " + path.string());
}

}  // namespace detail

inline std::string encode_model(const ModelParams<float>& params, const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json header = {{"config", to_json(params.config)}, {"dtype", "float32"}, {"extra", extra}};
  std::size_t count = 0;
  params.visit([&](const std::string&, const Tensor<float>&, bool) { ++count; });
  return detail::encode_container(detail::CheckpointKind::model, header, count,
                                  [&](auto&& f) { params.visit(f); });
}

inline ModelParams<float> decode_model(std::string_view bytes, const std::string& origin = "checkpoint") {
  auto d = detail::decode_container(bytes, detail::CheckpointKind::model, origin);
  ModelParams<float> params;
  try {
    params = init_model<float>(model_config_from_json(d.header.at("config")), 0);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::format_version_mismatch, origin + ": bad config block: " + e.what());
  }
  detail::fill_from(params, d.tensors, origin);
  return params;
}

inline std::string encode_adapter(const LoraAdapter<float>& adapter) {
  nlohmann::json targets = nlohmann::json::array();
  for (auto t : adapter.targets) targets.push_back(to_string(t));
  nlohmann::json header = {{"rank", adapter.rank},
                           {"targets", targets},
                           {"scaling", adapter.scaling},
                           {"n_layers", adapter.layers.size()},
                           {"dtype", "float32"}};
  std::size_t count = 0;
  adapter.visit([&](const std::string&, const Tensor<float>&, bool) { ++count; });
  return detail::encode_container(detail::CheckpointKind::adapter, header, count,
                                  [&](auto&& f) { adapter.visit(f); });
}

/// Shapes are checked against `base`.
inline LoraAdapter<float> decode_adapter(std::string_view bytes, const ModelParams<float>& base,
                                         const std::string& origin = "adapter") {
  auto d = detail::decode_container(bytes, detail::CheckpointKind::adapter, origin);
  LoraAdapter<float> adapter;
  try {
    std::vector<LoraTarget> targets;
    for (const auto& t : d.header.at("targets")) targets.push_back(lora_target_from_string(t.get<std::string>()));
    if (d.header.at("n_layers").get<std::size_t>() != base.layers.size())
      throw Error(Errc::shape_mismatch, origin + ": adapter layer count differs from model");
    adapter.rank = d.header.at("rank").get<std::size_t>();
    adapter.targets = targets;
    adapter.scaling = d.header.at("scaling").get<double>();
    adapter.layers.resize(base.layers.size());
    for (std::size_t l = 0; l < base.layers.size(); ++l)
      for (auto t : targets) {
        const auto& w = base.layers[l].weight(t);
        adapter.layers[l][static_cast<std::size_t>(t)] =
            LoraPair<float>{Tensor<float>(adapter.rank, w.cols), Tensor<float>(w.rows, adapter.rank)};
      }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::format_version_mismatch, origin + ": bad adapter header: " + e.what());
  }
  detail::fill_from(adapter, d.tensors, origin);
  return adapter;
}

inline void save_model(const std::filesystem::path& path, const ModelParams<float>& params,
                       const nlohmann::json& extra = nlohmann::json::object()) {
  detail::write_binary(path, encode_model(params, extra));
}

inline ModelParams<float> load_model(const std::filesystem::path& path) {
  return decode_model(detail::read_binary(path), path.string());
}

/// Header "extra" block of a model checkpoint (run metadata).
inline nlohmann::json model_extra(const std::filesystem::path& path) {
  const auto bytes = detail::read_binary(path);
  return detail::decode_container(bytes, detail::CheckpointKind::model, path.string()).header.value("extra", nlohmann::json::object());
}

inline void save_adapter(const std::filesystem::path& path, const LoraAdapter<float>& adapter) {
  detail::write_binary(path, encode_adapter(adapter));
}

inline LoraAdapter<float> load_adapter(const std::filesystem::path& path, const ModelParams<float>& base) {
  return decode_adapter(detail::read_binary(path), base, path.string());
}

}  // namespace flowdetect
