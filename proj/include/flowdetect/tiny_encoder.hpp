// SPDX-FileCopyrightText: (c) 2026 The flowdetect Authors
//
// SPDX-License-Identifier: Apache-2.0

// Small pre-layer-norm transformer encoder for binary flow classification,
// with optional low-rank adapters (h = W0 x + B A x) on selected matrices.
// Forward and reverse-mode gradients are written out by hand; the scalar type
// is a template parameter so gradient checks can run in double.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowdetect/error.hpp"
#include "flowdetect/nss_tokenizer.hpp"
#include "flowdetect/rng.hpp"
#include "flowdetect/tensor.hpp"

namespace flowdetect {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t max_seq = 0;
  std::size_t n_classes = 2;
  double dropout_p = 0.1;

  bool operator==(const ModelConfig&) const = default;

  void validate() const {
    auto bad = [](const std::string& why) { return Error(Errc::invalid_config, why); };
    if (vocab_size == 0) throw bad("vocab_size must be positive");
    if (d_model == 0 || n_heads == 0 || d_ff == 0 || n_layers == 0) throw bad("dimensions must be positive");
    if (d_model % n_heads != 0)
      throw bad("d_model " + std::to_string(d_model) + " not divisible by n_heads " + std::to_string(n_heads));
    if (max_seq < 2 || max_seq > kMaxSequence) throw bad("max_seq must lie in [2, 512]");
    if (n_classes < 2) throw bad("n_classes must be >= 2");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw bad("dropout_p must lie in [0, 1)");
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},     {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},       {"d_ff", c.d_ff},           {"max_seq", c.max_seq},
          {"n_classes", c.n_classes},   {"dropout_p", c.dropout_p}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.max_seq = j.at("max_seq").get<std::size_t>();
  c.n_classes = j.at("n_classes").get<std::size_t>();
  c.dropout_p = j.at("dropout_p").get<double>();
  return c;
}

enum class LoraTarget { query = 0, key, value, output, ff_in, ff_out };
inline constexpr std::size_t kLoraTargetCount = 6;

inline std::string_view to_string(LoraTarget t) {
  static constexpr std::string_view names[] = {"wq", "wk", "wv", "wo", "w1", "w2"};
  return names[static_cast<int>(t)];
}

inline LoraTarget lora_target_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kLoraTargetCount; ++i)
    if (to_string(static_cast<LoraTarget>(i)) == s) return static_cast<LoraTarget>(i);
  if (s == "q") return LoraTarget::query;
  if (s == "k") return LoraTarget::key;
  if (s == "v") return LoraTarget::value;
  if (s == "o") return LoraTarget::output;
  throw Error(Errc::invalid_argument, "unknown LoRA target '" + std::string(s) + "'");
}

/// Weight matrices are stored (out x in) and applied as y = W x + b.
template <typename T>
struct LayerParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ln1_g, ln1_b, ln2_g, ln2_b;
  Tensor<T> w1, b1, w2, b2;

  Tensor<T>& weight(LoraTarget t) { return const_cast<Tensor<T>&>(std::as_const(*this).weight(t)); }
  const Tensor<T>& weight(LoraTarget t) const {
    switch (t) {
      case LoraTarget::query: return wq;
      case LoraTarget::key: return wk;
      case LoraTarget::value: return wv;
      case LoraTarget::output: return wo;
      case LoraTarget::ff_in: return w1;
      case LoraTarget::ff_out: return w2;
    }
    return wq;
  }

  bool operator==(const LayerParams&) const = default;
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  Tensor<T> tok_emb;  // vocab_size x d_model
  Tensor<T> pos_emb;  // max_seq x d_model
  std::vector<LayerParams<T>> layers;
  Tensor<T> head_w;  // n_classes x d_model
  Tensor<T> head_b;

  bool operator==(const ModelParams&) const = default;

  /// f(name, tensor, is_weight_matrix) over every tensor in a fixed order.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Tensor<T>& t, bool) { n += t.size(); });
    return n;
  }

  std::size_t head_parameter_count() const { return head_w.size() + head_b.size(); }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.config = config;
    out.tok_emb = tok_emb.template cast<U>();
    out.pos_emb = pos_emb.template cast<U>();
    for (const auto& l : layers) {
      LayerParams<U> c;
      c.wq = l.wq.template cast<U>(), c.bq = l.bq.template cast<U>();
      c.wk = l.wk.template cast<U>(), c.bk = l.bk.template cast<U>();
      c.wv = l.wv.template cast<U>(), c.bv = l.bv.template cast<U>();
      c.wo = l.wo.template cast<U>(), c.bo = l.bo.template cast<U>();
      c.ln1_g = l.ln1_g.template cast<U>(), c.ln1_b = l.ln1_b.template cast<U>();
      c.ln2_g = l.ln2_g.template cast<U>(), c.ln2_b = l.ln2_b.template cast<U>();
      c.w1 = l.w1.template cast<U>(), c.b1 = l.b1.template cast<U>();
      c.w2 = l.w2.template cast<U>(), c.b2 = l.b2.template cast<U>();
      out.layers.push_back(std::move(c));
    }
    out.head_w = head_w.template cast<U>();
    out.head_b = head_b.template cast<U>();
    return out;
  }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    f(std::string("tok_emb"), self.tok_emb, true);
    f(std::string("pos_emb"), self.pos_emb, true);
    for (std::size_t i = 0; i < self.layers.size(); ++i) {
      auto& l = self.layers[i];
      const std::string p = "layer" + std::to_string(i) + ".";
      f(p + "wq", l.wq, true), f(p + "bq", l.bq, false);
      f(p + "wk", l.wk, true), f(p + "bk", l.bk, false);
      f(p + "wv", l.wv, true), f(p + "bv", l.bv, false);
      f(p + "wo", l.wo, true), f(p + "bo", l.bo, false);
      f(p + "ln1_g", l.ln1_g, false), f(p + "ln1_b", l.ln1_b, false);
      f(p + "ln2_g", l.ln2_g, false), f(p + "ln2_b", l.ln2_b, false);
      f(p + "w1", l.w1, true), f(p + "b1", l.b1, false);
      f(p + "w2", l.w2, true), f(p + "b2", l.b2, false);
    }
    f(std::string("head.w"), self.head_w, true);
    f(std::string("head.b"), self.head_b, false);
  }
};

/// Closed-form parameter count for a config.
inline std::size_t model_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.d_ff;
  const std::size_t per_layer = 4 * (d * d + d) + (f * d + f) + (d * f + d) + 4 * d;
  return c.vocab_size * d + c.max_seq * d + c.n_layers * per_layer + c.n_classes * d + c.n_classes;
}

template <typename T>
struct LoraPair {
  Tensor<T> a;  // r x in
  Tensor<T> b;  // out x r
  bool operator==(const LoraPair&) const = default;
};

template <typename T>
struct LoraAdapter {
  std::size_t rank = 0;
  std::vector<LoraTarget> targets;
  double scaling = 1.0;  // multiplies BA; 1 keeps h = W0 x + BAx literal
  std::vector<std::array<std::optional<LoraPair<T>>, kLoraTargetCount>> layers;

  bool operator==(const LoraAdapter&) const = default;

  const LoraPair<T>* find(std::size_t layer, LoraTarget t) const {
    const auto& slot = layers.at(layer)[static_cast<std::size_t>(t)];
    return slot ? &*slot : nullptr;
  }

  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Tensor<T>& t, bool) { n += t.size(); });
    return n;
  }

  template <typename U>
  LoraAdapter<U> cast() const {
    LoraAdapter<U> out;
    out.rank = rank;
    out.targets = targets;
    out.scaling = scaling;
    out.layers.resize(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l)
      for (std::size_t t = 0; t < kLoraTargetCount; ++t)
        if (layers[l][t]) out.layers[l][t] = LoraPair<U>{layers[l][t]->a.template cast<U>(), layers[l][t]->b.template cast<U>()};
    return out;
  }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    for (std::size_t l = 0; l < self.layers.size(); ++l)
      for (std::size_t t = 0; t < kLoraTargetCount; ++t)
        if (self.layers[l][t]) {
          const std::string p = "layer" + std::to_string(l) + "." + std::string(to_string(static_cast<LoraTarget>(t)));
          f(p + ".lora_a", self.layers[l][t]->a, true);
          f(p + ".lora_b", self.layers[l][t]->b, true);
        }
  }
};

namespace detail {

template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng, double stddev) {
  for (auto& v : t.data) v = static_cast<T>(stddev * rng.normal());
}

}  // namespace detail

/// Normal init scaled by 1/sqrt(fan_in) for matrices, unit-variance
/// embeddings, zero biases, unit layer-norm gains.
template <typename T = float>
ModelParams<T> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t d = config.d_model, f = config.d_ff;
  Rng rng(seed);
  ModelParams<T> p;
  p.config = config;
  p.tok_emb = Tensor<T>(config.vocab_size, d);
  p.pos_emb = Tensor<T>(config.max_seq, d);
  detail::fill_normal(p.tok_emb, rng, 1.0);
  detail::fill_normal(p.pos_emb, rng, 1.0);
  const double s_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double s_f = 1.0 / std::sqrt(static_cast<double>(f));
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    LayerParams<T> l;
    for (auto* w : {&l.wq, &l.wk, &l.wv, &l.wo}) {
      *w = Tensor<T>(d, d);
      detail::fill_normal(*w, rng, s_d);
    }
    l.bq = l.bk = l.bv = l.bo = Tensor<T>(1, d);
    l.ln1_g = l.ln2_g = Tensor<T>(1, d, T{1});
    l.ln1_b = l.ln2_b = Tensor<T>(1, d);
    l.w1 = Tensor<T>(f, d);
    detail::fill_normal(l.w1, rng, s_d);
    l.b1 = Tensor<T>(1, f);
    l.w2 = Tensor<T>(d, f);
    detail::fill_normal(l.w2, rng, s_f);
    l.b2 = Tensor<T>(1, d);
    p.layers.push_back(std::move(l));
  }
  p.head_w = Tensor<T>(config.n_classes, d);
  detail::fill_normal(p.head_w, rng, s_d);
  p.head_b = Tensor<T>(1, config.n_classes);
  return p;
}

/// Allocates A (r x in, small centered normal) and B (out x r, zeros) for each
/// target in every layer. Rank must satisfy 4r <= min(in, out).
template <typename T>
LoraAdapter<T> attach_lora(const ModelParams<T>& params, std::size_t rank, std::vector<LoraTarget> targets,
                           std::uint64_t seed, double scaling = 1.0) {
  if (rank == 0) throw Error(Errc::invalid_argument, "LoRA rank must be >= 1");
  if (targets.empty()) throw Error(Errc::invalid_argument, "LoRA needs at least one target matrix");
  std::sort(targets.begin(), targets.end());
  targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
  LoraAdapter<T> adapter;
  adapter.rank = rank;
  adapter.targets = targets;
  adapter.scaling = scaling;
  adapter.layers.resize(params.layers.size());
  Rng rng(seed);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    for (auto t : targets) {
      const auto& w = params.layers[l].weight(t);
      const std::size_t out = w.rows, in = w.cols;
      if (4 * rank > std::min(in, out))
        throw Error(Errc::rank_too_large, "rank " + std::to_string(rank) + " exceeds min(" + std::to_string(out) + ", " +
                                              std::to_string(in) + ")/4 for " + std::string(to_string(t)));
      LoraPair<T> pair{Tensor<T>(rank, in), Tensor<T>(out, rank)};
      detail::fill_normal(pair.a, rng, 1.0 / std::sqrt(static_cast<double>(in)));
      adapter.layers[l][static_cast<std::size_t>(t)] = std::move(pair);
    }
  }
  return adapter;
}

namespace detail {

template <typename T>
void check_adapter_shapes(const ModelParams<T>& params, const LoraAdapter<T>& adapter) {
  if (adapter.layers.size() != params.layers.size())
    throw Error(Errc::shape_mismatch, "adapter layer count differs from model");
  for (std::size_t l = 0; l < params.layers.size(); ++l)
    for (std::size_t t = 0; t < kLoraTargetCount; ++t) {
      const auto* pair = adapter.find(l, static_cast<LoraTarget>(t));
      if (!pair) continue;
      const auto& w = params.layers[l].weight(static_cast<LoraTarget>(t));
      if (pair->a.cols != w.cols || pair->b.rows != w.rows || pair->a.rows != pair->b.cols)
        throw Error(Errc::shape_mismatch, "adapter shape mismatch at layer " + std::to_string(l));
    }
}

}  // namespace detail

/// W0 + scaling * B A for every adapted matrix.
template <typename T>
ModelParams<T> merge_lora(const ModelParams<T>& params, const LoraAdapter<T>& adapter) {
  detail::check_adapter_shapes(params, adapter);
  ModelParams<T> merged = params;
  for (std::size_t l = 0; l < params.layers.size(); ++l)
    for (std::size_t t = 0; t < kLoraTargetCount; ++t) {
      const auto* pair = adapter.find(l, static_cast<LoraTarget>(t));
      if (!pair) continue;
      auto delta = matmul(pair->b, pair->a);
      auto& w = merged.layers[l].weight(static_cast<LoraTarget>(t));
      const T s = static_cast<T>(adapter.scaling);
      for (std::size_t i = 0; i < w.size(); ++i) w.data[i] += s * delta.data[i];
    }
  return merged;
}

/// Named gradient tensors; exactly the trainable set of the call that made it.
template <typename T>
struct Gradients {
  std::map<std::string, Tensor<T>> tensors;

  bool contains(const std::string& name) const { return tensors.contains(name); }
  const Tensor<T>& at(const std::string& name) const { return tensors.at(name); }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors) n += t.size();
    return n;
  }
};

/// Full fine-tuning trains every base tensor; with an adapter only the
/// adapter factors and the classifier head train.
template <typename T>
std::size_t trainable_parameter_count(const ModelParams<T>& params, const LoraAdapter<T>* adapter) {
  return adapter ? adapter->parameter_count() + params.head_parameter_count() : params.parameter_count();
}

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor;
  bool decayed;
};

template <typename T>
std::vector<ParamRef<T>> trainable_parameters(ModelParams<T>& params, LoraAdapter<T>* adapter) {
  std::vector<ParamRef<T>> out;
  if (adapter) {
    adapter->visit([&](const std::string& n, Tensor<T>& t, bool decay) { out.push_back({n, &t, decay}); });
    out.push_back({"head.w", &params.head_w, true});
    out.push_back({"head.b", &params.head_b, false});
  } else {
    params.visit([&](const std::string& n, Tensor<T>& t, bool decay) { out.push_back({n, &t, decay}); });
  }
  return out;
}

struct LossOptions {
  double l2 = 0.0;                    // 0.5 * l2 * sum of squared trainable weight matrices
  std::vector<double> class_weights;  // empty = all ones
};

template <typename T>
struct LossAndGrads {
  T loss{0};       // data loss + L2 penalty
  T data_loss{0};  // weighted mean negative log-likelihood
  Gradients<T> grads;
};

namespace detail {

constexpr double kLayerNormEps = 1e-5;

template <typename T>
T gelu(T x) {
  constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  const T inner = c * (x + T(0.044715) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(inner));
}

template <typename T>
T gelu_grad(T x) {
  constexpr T c = static_cast<T>(0.7978845608028654);
  const T inner = c * (x + T(0.044715) * x * x * x);
  const T t = std::tanh(inner);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * c * (T(1) + T(3) * T(0.044715) * x * x);
}

template <typename T>
struct LayerCache {
  std::vector<T> x_in, xhat1, rstd1, a1, q, k, v, uq, uk, uv, probs, ctx, uo, attn, drop1;
  std::vector<T> x_mid, xhat2, rstd2, a2, h, g, u1, u2, ff, drop2;
};

template <typename T>
struct SequenceCache {
  std::size_t length = 0;
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> key_mask;
  std::vector<T> drop0;
  std::vector<LayerCache<T>> layers;
  std::vector<T> x_final;
  std::vector<T> logits;
};

template <typename T>
struct GradSink {
  ModelParams<T>* base = nullptr;       // null: base frozen, head still accumulated into head_w/head_b
  LoraAdapter<T>* adapter = nullptr;
  Tensor<T>* head_w = nullptr;
  Tensor<T>* head_b = nullptr;
};

template <typename T>
void linear_forward(const T* x, std::size_t L, const Tensor<T>& W, const Tensor<T>& b, const LoraPair<T>* lora, T scale,
                    T* y, std::vector<T>& u) {
  const std::size_t in = W.cols, out = W.rows;
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t o = 0; o < out; ++o) y[t * out + o] = b.data[o] + kernels::dot(W.row(o), x + t * in, in);
  if (!lora) return;
  const std::size_t r = lora->a.rows;
  u.assign(L * r, T{0});
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t j = 0; j < r; ++j) u[t * r + j] = kernels::dot(lora->a.row(j), x + t * in, in);
    for (std::size_t o = 0; o < out; ++o) y[t * out + o] += scale * kernels::dot(lora->b.row(o), u.data() + t * r, r);
  }
}

/// Accumulates dx (if non-null), base grads (if dW/db non-null) and adapter grads.
template <typename T>
void linear_backward(const T* x, std::size_t L, const Tensor<T>& W, const LoraPair<T>* lora, T scale,
                     const std::vector<T>& u, const T* dy, T* dx, Tensor<T>* dW, Tensor<T>* db, LoraPair<T>* dlora) {
  const std::size_t in = W.cols, out = W.rows;
  for (std::size_t t = 0; t < L; ++t) {
    const T* dyt = dy + t * out;
    const T* xt = x + t * in;
    for (std::size_t o = 0; o < out; ++o) {
      const T g = dyt[o];
      if (dx) kernels::axpy(g, W.row(o), dx + t * in, in);
      if (dW) kernels::axpy(g, xt, dW->row(o), in);
      if (db) db->data[o] += g;
    }
  }
  if (!lora) return;
  const std::size_t r = lora->a.rows;
  std::vector<T> du(r);
  for (std::size_t t = 0; t < L; ++t) {
    const T* dyt = dy + t * out;
    const T* xt = x + t * in;
    const T* ut = u.data() + t * r;
    std::fill(du.begin(), du.end(), T{0});
    for (std::size_t o = 0; o < out; ++o) {
      const T g = scale * dyt[o];
      kernels::axpy(g, lora->b.row(o), du.data(), r);
      if (dlora) kernels::axpy(g, ut, dlora->b.row(o), r);
    }
    for (std::size_t j = 0; j < r; ++j) {
      if (dlora) kernels::axpy(du[j], xt, dlora->a.row(j), in);
      if (dx) kernels::axpy(du[j], lora->a.row(j), dx + t * in, in);
    }
  }
}

template <typename T>
void layer_norm_forward(const T* x, std::size_t L, std::size_t d, const Tensor<T>& g, const Tensor<T>& b, T* xhat,
                        T* rstd, T* y) {
  for (std::size_t t = 0; t < L; ++t) {
    const T* xt = x + t * d;
    T mean{0};
    for (std::size_t i = 0; i < d; ++i) mean += xt[i];
    mean /= static_cast<T>(d);
    T var{0};
    for (std::size_t i = 0; i < d; ++i) var += (xt[i] - mean) * (xt[i] - mean);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    rstd[t] = rs;
    for (std::size_t i = 0; i < d; ++i) {
      xhat[t * d + i] = (xt[i] - mean) * rs;
      y[t * d + i] = g.data[i] * xhat[t * d + i] + b.data[i];
    }
  }
}

template <typename T>
void layer_norm_backward(const T* xhat, const T* rstd, std::size_t L, std::size_t d, const Tensor<T>& g, const T* dy,
                         T* dx, Tensor<T>* dg, Tensor<T>* db) {
  std::vector<T> dxhat(d);
  for (std::size_t t = 0; t < L; ++t) {
    const T* dyt = dy + t * d;
    const T* xh = xhat + t * d;
    T mean_dxhat{0}, mean_dxhat_xhat{0};
    for (std::size_t i = 0; i < d; ++i) {
      if (dg) dg->data[i] += dyt[i] * xh[i];
      if (db) db->data[i] += dyt[i];
      dxhat[i] = dyt[i] * g.data[i];
      mean_dxhat += dxhat[i];
      mean_dxhat_xhat += dxhat[i] * xh[i];
    }
    mean_dxhat /= static_cast<T>(d);
    mean_dxhat_xhat /= static_cast<T>(d);
    for (std::size_t i = 0; i < d; ++i) dx[t * d + i] += rstd[t] * (dxhat[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
  }
}

template <typename T>
void make_dropout(std::vector<T>& mask, std::size_t n, double p, bool active, Rng* rng) {
  if (!active || p <= 0.0) {
    mask.clear();
    return;
  }
  mask.resize(n);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (auto& m : mask) m = rng->uniform01() < p ? T{0} : keep_scale;
}

template <typename T>
void apply_mask(std::vector<T>& x, const std::vector<T>& mask) {
  if (mask.empty()) return;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] *= mask[i];
}

/// Runs one sequence over its first `length` positions. Positions whose
/// mask is 0 never act as attention keys, so trailing padding beyond
/// `length` cannot influence any computed row.
template <typename T>
void forward_sequence(const ModelParams<T>& p, const LoraAdapter<T>* adapter, const TokenSequence& seq,
                      std::size_t length, bool train_mode, Rng* dropout_rng, SequenceCache<T>& c) {
  const auto& cfg = p.config;
  const std::size_t d = cfg.d_model, H = cfg.n_heads, dh = d / H, F = cfg.d_ff, L = length;
  const T lora_scale = adapter ? static_cast<T>(adapter->scaling) : T{1};
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));
  const bool drop = train_mode && cfg.dropout_p > 0.0;

  c.length = L;
  c.ids.assign(seq.ids.begin(), seq.ids.begin() + static_cast<std::ptrdiff_t>(L));
  c.key_mask.assign(seq.mask.begin(), seq.mask.begin() + static_cast<std::ptrdiff_t>(L));
  c.layers.resize(cfg.n_layers);

  std::vector<T> x(L * d);
  for (std::size_t t = 0; t < L; ++t) {
    const T* te = p.tok_emb.row(static_cast<std::size_t>(c.ids[t]));
    const T* pe = p.pos_emb.row(t);
    for (std::size_t i = 0; i < d; ++i) x[t * d + i] = te[i] + pe[i];
  }
  make_dropout(c.drop0, L * d, cfg.dropout_p, drop, dropout_rng);
  apply_mask(x, c.drop0);

  for (std::size_t li = 0; li < cfg.n_layers; ++li) {
    const auto& lp = p.layers[li];
    auto& lc = c.layers[li];
    auto lora = [&](LoraTarget t) { return adapter ? adapter->find(li, t) : nullptr; };

    lc.x_in = x;
    lc.xhat1.resize(L * d), lc.rstd1.resize(L), lc.a1.resize(L * d);
    layer_norm_forward(x.data(), L, d, lp.ln1_g, lp.ln1_b, lc.xhat1.data(), lc.rstd1.data(), lc.a1.data());
    lc.q.resize(L * d), lc.k.resize(L * d), lc.v.resize(L * d);
    linear_forward(lc.a1.data(), L, lp.wq, lp.bq, lora(LoraTarget::query), lora_scale, lc.q.data(), lc.uq);
    linear_forward(lc.a1.data(), L, lp.wk, lp.bk, lora(LoraTarget::key), lora_scale, lc.k.data(), lc.uk);
    linear_forward(lc.a1.data(), L, lp.wv, lp.bv, lora(LoraTarget::value), lora_scale, lc.v.data(), lc.uv);

    lc.probs.assign(H * L * L, T{0});
    lc.ctx.assign(L * d, T{0});
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < L; ++i) {
        T* prow = lc.probs.data() + (h * L + i) * L;
        T max_score = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < L; ++j) {
          if (!c.key_mask[j]) continue;
          prow[j] = kernels::dot(lc.q.data() + i * d + off, lc.k.data() + j * d + off, dh) * inv_sqrt_dh;
          max_score = std::max(max_score, prow[j]);
        }
        if (max_score == -std::numeric_limits<T>::infinity()) continue;  // no visible key
        T sum{0};
        for (std::size_t j = 0; j < L; ++j) {
          if (!c.key_mask[j]) continue;
          prow[j] = std::exp(prow[j] - max_score);
          sum += prow[j];
        }
        for (std::size_t j = 0; j < L; ++j) {
          if (!c.key_mask[j]) continue;
          prow[j] /= sum;
          kernels::axpy(prow[j], lc.v.data() + j * d + off, lc.ctx.data() + i * d + off, dh);
        }
      }
    }
    lc.attn.resize(L * d);
    linear_forward(lc.ctx.data(), L, lp.wo, lp.bo, lora(LoraTarget::output), lora_scale, lc.attn.data(), lc.uo);
    make_dropout(lc.drop1, L * d, cfg.dropout_p, drop, dropout_rng);
    std::vector<T> attn = lc.attn;
    apply_mask(attn, lc.drop1);
    for (std::size_t i = 0; i < L * d; ++i) x[i] += attn[i];

    lc.x_mid = x;
    lc.xhat2.resize(L * d), lc.rstd2.resize(L), lc.a2.resize(L * d);
    layer_norm_forward(x.data(), L, d, lp.ln2_g, lp.ln2_b, lc.xhat2.data(), lc.rstd2.data(), lc.a2.data());
    lc.h.resize(L * F), lc.g.resize(L * F);
    linear_forward(lc.a2.data(), L, lp.w1, lp.b1, lora(LoraTarget::ff_in), lora_scale, lc.h.data(), lc.u1);
    for (std::size_t i = 0; i < L * F; ++i) lc.g[i] = gelu(lc.h[i]);
    lc.ff.resize(L * d);
    linear_forward(lc.g.data(), L, lp.w2, lp.b2, lora(LoraTarget::ff_out), lora_scale, lc.ff.data(), lc.u2);
    make_dropout(lc.drop2, L * d, cfg.dropout_p, drop, dropout_rng);
    std::vector<T> ff = lc.ff;
    apply_mask(ff, lc.drop2);
    for (std::size_t i = 0; i < L * d; ++i) x[i] += ff[i];
  }
  c.x_final = std::move(x);

  const std::size_t C = cfg.n_classes;
  c.logits.resize(C);
  for (std::size_t k = 0; k < C; ++k) c.logits[k] = p.head_b.data[k] + kernels::dot(p.head_w.row(k), c.x_final.data(), d);
}

template <typename T>
void backward_sequence(const ModelParams<T>& p, const LoraAdapter<T>* adapter, const SequenceCache<T>& c,
                       const T* dlogits, GradSink<T>& sink) {
  const auto& cfg = p.config;
  const std::size_t d = cfg.d_model, H = cfg.n_heads, dh = d / H, F = cfg.d_ff, L = c.length, C = cfg.n_classes;
  const T lora_scale = adapter ? static_cast<T>(adapter->scaling) : T{1};
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));
  ModelParams<T>* gb = sink.base;

  std::vector<T> dx(L * d, T{0});
  for (std::size_t k = 0; k < C; ++k) {
    kernels::axpy(dlogits[k], c.x_final.data(), sink.head_w->row(k), d);
    sink.head_b->data[k] += dlogits[k];
    kernels::axpy(dlogits[k], p.head_w.row(k), dx.data(), d);
  }

  std::vector<T> dy, dtmp, da, dq, dk, dv, dctx, dh_buf, dprow(L);
  for (std::size_t li = cfg.n_layers; li-- > 0;) {
    const auto& lp = p.layers[li];
    const auto& lc = c.layers[li];
    auto lora = [&](LoraTarget t) { return adapter ? adapter->find(li, t) : nullptr; };
    auto dlora = [&](LoraTarget t) -> LoraPair<T>* {
      if (!sink.adapter) return nullptr;
      auto& slot = sink.adapter->layers[li][static_cast<std::size_t>(t)];
      return slot ? &*slot : nullptr;
    };
    LayerParams<T>* gl = gb ? &gb->layers[li] : nullptr;

    // Feed-forward sublayer: x_out = x_mid + drop(W2 gelu(W1 LN2(x_mid)))
    dy = dx;
    apply_mask(dy, lc.drop2);
    std::vector<T> dg(L * F, T{0});
    linear_backward(lc.g.data(), L, lp.w2, lora(LoraTarget::ff_out), lora_scale, lc.u2, dy.data(), dg.data(),
                    gl ? &gl->w2 : nullptr, gl ? &gl->b2 : nullptr, dlora(LoraTarget::ff_out));
    for (std::size_t i = 0; i < L * F; ++i) dg[i] *= gelu_grad(lc.h[i]);
    da.assign(L * d, T{0});
    linear_backward(lc.a2.data(), L, lp.w1, lora(LoraTarget::ff_in), lora_scale, lc.u1, dg.data(), da.data(),
                    gl ? &gl->w1 : nullptr, gl ? &gl->b1 : nullptr, dlora(LoraTarget::ff_in));
    layer_norm_backward(lc.xhat2.data(), lc.rstd2.data(), L, d, lp.ln2_g, da.data(), dx.data(), gl ? &gl->ln2_g : nullptr,
                        gl ? &gl->ln2_b : nullptr);

    // Attention sublayer: x_mid = x_in + drop(Wo attn(LN1(x_in)))
    dy = dx;
    apply_mask(dy, lc.drop1);
    dctx.assign(L * d, T{0});
    linear_backward(lc.ctx.data(), L, lp.wo, lora(LoraTarget::output), lora_scale, lc.uo, dy.data(), dctx.data(),
                    gl ? &gl->wo : nullptr, gl ? &gl->bo : nullptr, dlora(LoraTarget::output));
    dq.assign(L * d, T{0}), dk.assign(L * d, T{0}), dv.assign(L * d, T{0});
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < L; ++i) {
        const T* prow = lc.probs.data() + (h * L + i) * L;
        const T* dci = dctx.data() + i * d + off;
        T weighted{0};
        for (std::size_t j = 0; j < L; ++j) {
          if (!c.key_mask[j]) {
            dprow[j] = T{0};
            continue;
          }
          dprow[j] = kernels::dot(dci, lc.v.data() + j * d + off, dh);
          kernels::axpy(prow[j], dci, dv.data() + j * d + off, dh);
          weighted += prow[j] * dprow[j];
        }
        for (std::size_t j = 0; j < L; ++j) {
          if (!c.key_mask[j]) continue;
          const T ds = prow[j] * (dprow[j] - weighted) * inv_sqrt_dh;
          kernels::axpy(ds, lc.k.data() + j * d + off, dq.data() + i * d + off, dh);
          kernels::axpy(ds, lc.q.data() + i * d + off, dk.data() + j * d + off, dh);
        }
      }
    }
    da.assign(L * d, T{0});
    linear_backward(lc.a1.data(), L, lp.wq, lora(LoraTarget::query), lora_scale, lc.uq, dq.data(), da.data(),
                    gl ? &gl->wq : nullptr, gl ? &gl->bq : nullptr, dlora(LoraTarget::query));
    linear_backward(lc.a1.data(), L, lp.wk, lora(LoraTarget::key), lora_scale, lc.uk, dk.data(), da.data(),
                    gl ? &gl->wk : nullptr, gl ? &gl->bk : nullptr, dlora(LoraTarget::key));
    linear_backward(lc.a1.data(), L, lp.wv, lora(LoraTarget::value), lora_scale, lc.uv, dv.data(), da.data(),
                    gl ? &gl->wv : nullptr, gl ? &gl->bv : nullptr, dlora(LoraTarget::value));
    layer_norm_backward(lc.xhat1.data(), lc.rstd1.data(), L, d, lp.ln1_g, da.data(), dx.data(), gl ? &gl->ln1_g : nullptr,
                        gl ? &gl->ln1_b : nullptr);
  }

  if (!gb) return;
  apply_mask(dx, c.drop0);
  for (std::size_t t = 0; t < L; ++t) {
    kernels::axpy(T{1}, dx.data() + t * d, gb->tok_emb.row(static_cast<std::size_t>(c.ids[t])), d);
    kernels::axpy(T{1}, dx.data() + t * d, gb->pos_emb.row(t), d);
  }
}

/// Rows past the last unmasked position are skipped.
inline std::size_t active_length(const TokenSequence& seq) {
  std::size_t n = seq.mask.size();
  while (n > 0 && !seq.mask[n - 1]) --n;
  return std::max<std::size_t>(n, 1);
}

template <typename T>
void check_batch(const ModelParams<T>& p, std::span<const TokenSequence> batch) {
  for (const auto& seq : batch) {
    if (seq.ids.size() != p.config.max_seq || seq.mask.size() != p.config.max_seq)
      throw Error(Errc::shape_mismatch, "sequence length " + std::to_string(seq.ids.size()) + " != max_seq " +
                                            std::to_string(p.config.max_seq));
    for (auto id : seq.ids)
      if (id < 0 || static_cast<std::size_t>(id) >= p.config.vocab_size)
        throw Error(Errc::id_out_of_range, "token id " + std::to_string(id) + " outside vocabulary of size " +
                                               std::to_string(p.config.vocab_size));
  }
}

inline Rng dropout_stream(std::uint64_t dropout_seed, std::size_t index) {
  return Rng(mix64(dropout_seed ^ mix64(static_cast<std::uint64_t>(index) + 1)));
}

}  // namespace detail

/// Logits (batch x n_classes) read at the CLS position. Each row depends only
/// on its own sequence; dropout is active only in train_mode.
template <typename T>
Tensor<T> forward(const ModelParams<T>& params, const LoraAdapter<T>* adapter, std::span<const TokenSequence> batch,
                  bool train_mode = false, std::uint64_t dropout_seed = 0) {
  detail::check_batch(params, batch);
  if (adapter) detail::check_adapter_shapes(params, *adapter);
  Tensor<T> logits(batch.size(), params.config.n_classes);
  detail::SequenceCache<T> cache;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    Rng rng = detail::dropout_stream(dropout_seed, b);
    detail::forward_sequence(params, adapter, batch[b], detail::active_length(batch[b]), train_mode, &rng, cache);
    std::copy(cache.logits.begin(), cache.logits.end(), logits.row(b));
  }
  return logits;
}

/// Per-head attention probabilities (n_heads x len x len, row-major) of one
/// layer, computed over the full padded length.
template <typename T>
std::vector<T> attention_probabilities(const ModelParams<T>& params, const LoraAdapter<T>* adapter,
                                       const TokenSequence& seq, std::size_t layer) {
  const TokenSequence* one = &seq;
  detail::check_batch(params, std::span<const TokenSequence>(one, 1));
  detail::SequenceCache<T> cache;
  detail::forward_sequence(params, adapter, seq, seq.ids.size(), false, nullptr, cache);
  return cache.layers.at(layer).probs;
}

/// Weighted mean cross-entropy at the true class plus the L2 penalty, and
/// gradients for the trainable set only (W0 receives none when an adapter
/// is given).
template <typename T>
LossAndGrads<T> loss_and_grads(const ModelParams<T>& params, const LoraAdapter<T>* adapter,
                               std::span<const TokenSequence> batch, std::span<const int> labels, bool train_mode,
                               std::uint64_t dropout_seed = 0, const LossOptions& options = {}) {
  if (batch.empty()) throw Error(Errc::invalid_argument, "empty batch");
  if (labels.size() != batch.size()) throw Error(Errc::shape_mismatch, "labels and batch differ in size");
  const std::size_t C = params.config.n_classes;
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= C)
      throw Error(Errc::label_out_of_range, "label " + std::to_string(y) + " outside [0, " + std::to_string(C) + ")");
  if (!options.class_weights.empty() && options.class_weights.size() != C)
    throw Error(Errc::shape_mismatch, "class weight count differs from n_classes");
  detail::check_batch(params, batch);
  if (adapter) detail::check_adapter_shapes(params, *adapter);

  // Gradient accumulators shaped like the trainable set.
  std::optional<ModelParams<T>> gbase;
  std::optional<LoraAdapter<T>> gadapter;
  Tensor<T> head_w(params.head_w.rows, params.head_w.cols), head_b(1, C);
  detail::GradSink<T> sink;
  if (adapter) {
    gadapter = *adapter;
    gadapter->visit([](const std::string&, Tensor<T>& t, bool) { t.zero(); });
    sink.adapter = &*gadapter;
    sink.head_w = &head_w;
    sink.head_b = &head_b;
  } else {
    gbase = params;
    gbase->visit([](const std::string&, Tensor<T>& t, bool) { t.zero(); });
    sink.base = &*gbase;
    sink.head_w = &gbase->head_w;
    sink.head_b = &gbase->head_b;
  }

  LossAndGrads<T> result;
  const T inv_batch = T(1) / static_cast<T>(batch.size());
  detail::SequenceCache<T> cache;
  std::vector<T> dlogits(C);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    Rng rng = detail::dropout_stream(dropout_seed, b);
    detail::forward_sequence(params, adapter, batch[b], detail::active_length(batch[b]), train_mode, &rng, cache);
    const auto& z = cache.logits;
    const T zmax = *std::max_element(z.begin(), z.end());
    T sum{0};
    for (std::size_t k = 0; k < C; ++k) sum += std::exp(z[k] - zmax);
    const T log_norm = zmax + std::log(sum);
    const auto y = static_cast<std::size_t>(labels[b]);
    const T w = options.class_weights.empty() ? T{1} : static_cast<T>(options.class_weights[y]);
    result.data_loss += w * (log_norm - z[y]) * inv_batch;
    for (std::size_t k = 0; k < C; ++k)
      dlogits[k] = w * inv_batch * (std::exp(z[k] - log_norm) - (k == y ? T{1} : T{0}));
    detail::backward_sequence(params, adapter, cache, dlogits.data(), sink);
  }

  // L2 on trainable weight matrices.
  const T l2 = static_cast<T>(options.l2);
  T penalty{0};
  auto add_l2 = [&](const Tensor<T>& value, Tensor<T>& grad, bool decayed) {
    if (!decayed || l2 == T{0}) return;
    for (std::size_t i = 0; i < value.size(); ++i) {
      penalty += value.data[i] * value.data[i];
      grad.data[i] += l2 * value.data[i];
    }
  };
  if (adapter) {
    std::vector<std::pair<const Tensor<T>*, bool>> values;
    adapter->visit([&](const std::string&, const Tensor<T>& t, bool decay) { values.emplace_back(&t, decay); });
    std::size_t i = 0;
    gadapter->visit([&](const std::string& name, Tensor<T>& g, bool) {
      add_l2(*values[i].first, g, values[i].second);
      result.grads.tensors.emplace(name, std::move(g));
      ++i;
    });
    add_l2(params.head_w, head_w, true);
    result.grads.tensors.emplace("head.w", std::move(head_w));
    result.grads.tensors.emplace("head.b", std::move(head_b));
  } else {
    std::vector<std::pair<const Tensor<T>*, bool>> values;
    params.visit([&](const std::string&, const Tensor<T>& t, bool decay) { values.emplace_back(&t, decay); });
    std::size_t i = 0;
    gbase->visit([&](const std::string& name, Tensor<T>& g, bool) {
      add_l2(*values[i].first, g, values[i].second);
      result.grads.tensors.emplace(name, std::move(g));
      ++i;
    });
  }
  result.loss = result.data_loss + T(0.5) * l2 * penalty;
  return result;
}

}  // namespace flowdetect
