// SPDX-FileCopyrightText: (c) 2026 The flowdetect Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowdetect/error.hpp"
#include "flowdetect/flow_ingest.hpp"
#include "flowdetect/nss_tokenizer.hpp"
#include "flowdetect/perturb.hpp"
#include "flowdetect/rng.hpp"
#include "flowdetect/subword.hpp"
#include "flowdetect/tiny_encoder.hpp"

namespace flowdetect {

enum class TrainMode { full_ft, lora };

inline std::string_view to_string(TrainMode m) { return m == TrainMode::lora ? "lora" : "full_ft"; }

inline TrainMode train_mode_from_string(std::string_view s) {
  if (s == "full_ft" || s == "full") return TrainMode::full_ft;
  if (s == "lora") return TrainMode::lora;
  throw Error(Errc::invalid_argument, "unknown training mode '" + std::string(s) + "'");
}

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 10;
  double l2_coeff = 1e-4;
  std::size_t early_stop_patience = 2;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::full_ft;
  std::size_t lora_rank = 8;
  std::vector<LoraTarget> lora_targets = {LoraTarget::query, LoraTarget::value};
  double lora_scaling = 1.0;
  std::vector<double> class_weights;  // empty = uniform

  void validate() const {
    auto bad = [](const std::string& why) { return Error(Errc::invalid_config, why); };
    if (batch_size < 1) throw bad("batch_size must be >= 1");
    if (early_stop_patience < 1) throw bad("early_stop_patience must be >= 1");
    if (max_epochs < 1) throw bad("max_epochs must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw bad("learning_rate must be positive");
    if (!(l2_coeff >= 0.0)) throw bad("l2_coeff must be >= 0");
    for (double w : class_weights)
      if (!(w >= 0.0) || !std::isfinite(w)) throw bad("class weights must be finite and >= 0");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json targets = nlohmann::json::array();
  for (auto t : c.lora_targets) targets.push_back(to_string(t));
  return {{"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"l2_coeff", c.l2_coeff},
          {"early_stop_patience", c.early_stop_patience},
          {"seed", c.seed},
          {"mode", to_string(c.mode)},
          {"lora_rank", c.lora_rank},
          {"lora_targets", targets},
          {"lora_scaling", c.lora_scaling},
          {"class_weights", c.class_weights}};
}

inline std::string config_hash(const nlohmann::json& resolved) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(resolved.dump())));
  return buf;
}

/// Adam with bias correction; moments keyed by parameter name.
template <typename T>
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::span<const ParamRef<T>> params, const Gradients<T>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& ref : params) {
      const auto& g = grads.at(ref.name);
      auto& slot = moments_[ref.name];
      if (slot.m.size() != g.size()) {
        slot.m.assign(g.size(), 0.0);
        slot.v.assign(g.size(), 0.0);
      }
      auto& w = ref.tensor->data;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = static_cast<double>(g.data[i]);
        slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * gi;
        slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * gi * gi;
        const double update = lr_ * (slot.m[i] / c1) / (std::sqrt(slot.v[i] / c2) + eps_);
        w[i] = static_cast<T>(static_cast<double>(w[i]) - update);
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double epoch_seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0: no epoch completed with a finite loss
  std::string stop_reason;     // max_epochs | early_stop | non_finite_loss
};

inline nlohmann::json to_json(const EpochRecord& e) {
  return {{"epoch", e.epoch},
          {"train_loss", e.train_loss},
          {"val_loss", e.val_loss},
          {"val_accuracy", e.val_accuracy},
          {"epoch_seconds", e.epoch_seconds}};
}

/// One JSON object per line.
inline std::string history_jsonl(const TrainHistory& h) {
  std::string out;
  for (const auto& e : h.epochs) out += to_json(e).dump() + "\n";
  return out;
}

struct ValidationResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Runs epochs until max_epochs, until validation loss has not improved for
/// `patience` consecutive epochs, or until a loss goes non-finite. Returns
/// the state snapshot with the lowest validation loss.
///   run_epoch(State&, epoch) -> mean training loss
///   validate(const State&)   -> ValidationResult
template <typename State, typename RunEpoch, typename Validate>
std::pair<State, TrainHistory> train_with_early_stopping(State state, std::size_t max_epochs, std::size_t patience,
                                                         RunEpoch&& run_epoch, Validate&& validate) {
  TrainHistory history;
  history.stop_reason = "max_epochs";
  State best = state;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = run_epoch(state, epoch);
    if (!std::isfinite(rec.train_loss)) {
      history.stop_reason = "non_finite_loss";
      break;
    }
    const auto v = validate(static_cast<const State&>(state));
    rec.val_loss = v.loss;
    rec.val_accuracy = v.accuracy;
    rec.epoch_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    history.epochs.push_back(rec);
    if (!std::isfinite(v.loss)) {
      history.stop_reason = "non_finite_loss";
      break;
    }
    if (v.loss < best_loss) {
      best_loss = v.loss;
      best = state;
      history.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= patience) {
      history.stop_reason = "early_stop";
      break;
    }
  }
  return {std::move(best), std::move(history)};
}

/// Tokenized split with integer labels (1 = attack).
struct LabeledSequences {
  std::vector<TokenSequence> seqs;
  std::vector<int> labels;

  std::size_t size() const { return seqs.size(); }
  bool empty() const { return seqs.empty(); }
};

inline std::vector<int> label_vector(std::span<const FlowRecord> records) {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.label == Label::attack ? 1 : 0);
  return out;
}

inline LabeledSequences encode_labeled(std::span<const FlowRecord> records, const Vocabulary& vocab,
                                       const WindowSpec& window) {
  return {encode_all(records, vocab, window), label_vector(records)};
}

inline LabeledSequences encode_labeled(std::span<const FlowRecord> records, const SubwordVocab& vocab,
                                       std::size_t max_len) {
  LabeledSequences out;
  out.seqs.reserve(records.size());
  for (const auto& r : records) out.seqs.push_back(encode_subword(flow_text(r), vocab, max_len));
  out.labels = label_vector(records);
  return out;
}

/// Padded length for subword sequences: longest training flow plus
/// CLS/SEP, capped at 512.
inline std::size_t subword_sequence_length(std::span<const FlowRecord> train, const SubwordVocab& vocab) {
  std::size_t longest = 0;
  for (const auto& r : train) longest = std::max(longest, vocab.piece_ids(flow_text(r)).size());
  return std::min(longest + 2, kMaxSequence);
}

inline constexpr std::size_t kEvalChunk = 256;

/// Argmax class per sequence (ties go to class 0), eval mode.
template <typename T>
std::vector<int> predict(const ModelParams<T>& params, const LoraAdapter<T>* adapter, std::span<const TokenSequence> seqs) {
  std::vector<int> out;
  out.reserve(seqs.size());
  for (std::size_t start = 0; start < seqs.size(); start += kEvalChunk) {
    auto chunk = seqs.subspan(start, std::min(kEvalChunk, seqs.size() - start));
    auto logits = forward(params, adapter, chunk, false);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const T* row = logits.row(i);
      out.push_back(static_cast<int>(std::max_element(row, row + logits.cols) - row));
    }
  }
  return out;
}

/// Unweighted mean cross-entropy and accuracy, eval mode.
template <typename T>
ValidationResult validation_metrics(const ModelParams<T>& params, const LoraAdapter<T>* adapter,
                                    const LabeledSequences& data) {
  double loss = 0.0;
  std::size_t correct = 0;
  const std::span<const TokenSequence> seqs(data.seqs);
  for (std::size_t start = 0; start < seqs.size(); start += kEvalChunk) {
    auto chunk = seqs.subspan(start, std::min(kEvalChunk, seqs.size() - start));
    auto logits = forward(params, adapter, chunk, false);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const T* row = logits.row(i);
      const double zmax = static_cast<double>(*std::max_element(row, row + logits.cols));
      double sum = 0.0;
      for (std::size_t k = 0; k < logits.cols; ++k) sum += std::exp(static_cast<double>(row[k]) - zmax);
      const int y = data.labels[start + i];
      loss += zmax + std::log(sum) - static_cast<double>(row[y]);
      const auto pred = static_cast<int>(std::max_element(row, row + logits.cols) - row);
      correct += pred == y;
    }
  }
  const auto n = static_cast<double>(seqs.size());
  return {loss / n, static_cast<double>(correct) / n};
}

template <typename T>
struct TrainResult {
  ModelParams<T> params;
  std::optional<LoraAdapter<T>> adapter;
  TrainHistory history;
  double train_seconds = 0.0;
  std::size_t trainable_params = 0;
};

/// Mini-batch Adam over tokenized splits with seeded epoch shuffles and
/// early stopping on validation loss. In LoRA mode an adapter is attached
/// (unless one is supplied) and only the adapter and classifier head move.
/// An empty validation split falls back to validating on the training split.
template <typename T>
TrainResult<T> fit(const TrainConfig& config, ModelParams<T> params, std::optional<LoraAdapter<T>> adapter,
                   const LabeledSequences& train, const LabeledSequences& val) {
  config.validate();
  if (train.empty()) throw Error(Errc::empty_train_split, "training split is empty");
  if (train.labels.size() != train.seqs.size() || val.labels.size() != val.seqs.size())
    throw Error(Errc::shape_mismatch, "labels and sequences differ in count");
  if (config.mode == TrainMode::lora && !adapter)
    adapter = attach_lora(params, config.lora_rank, config.lora_targets, derive_seed(config.seed, "lora"),
                          config.lora_scaling);
  if (config.mode == TrainMode::full_ft && adapter)
    throw Error(Errc::invalid_argument, "full fine-tuning does not take an adapter");

  struct State {
    ModelParams<T> params;
    std::optional<LoraAdapter<T>> adapter;
  };
  const LabeledSequences& validation = val.empty() ? train : val;
  LossOptions loss_options{config.l2_coeff, config.class_weights};
  Adam<T> optimizer(config.learning_rate);
  const std::size_t n = train.size();

  auto run_epoch = [&](State& s, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffler(derive_seed(config.seed, "epoch/" + std::to_string(epoch)));
    shuffler.shuffle(std::span<std::size_t>(order));
    auto* ad = s.adapter ? &*s.adapter : nullptr;
    const auto refs = trainable_parameters(s.params, ad);
    std::vector<TokenSequence> batch;
    std::vector<int> labels;
    double total = 0.0;
    std::size_t step = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size, ++step) {
      const std::size_t end = std::min(n, start + config.batch_size);
      batch.clear();
      labels.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(train.seqs[order[i]]);
        labels.push_back(train.labels[order[i]]);
      }
      const auto dropout_seed =
          derive_seed(config.seed, "dropout/" + std::to_string(epoch) + "/" + std::to_string(step));
      auto r = loss_and_grads<T>(s.params, ad, batch, labels, true, dropout_seed, loss_options);
      if (!std::isfinite(static_cast<double>(r.loss))) return std::numeric_limits<double>::quiet_NaN();
      optimizer.step(refs, r.grads);
      total += static_cast<double>(r.data_loss) * static_cast<double>(end - start);
    }
    return total / static_cast<double>(n);
  };
  auto validate = [&](const State& s) {
    return validation_metrics(s.params, s.adapter ? &*s.adapter : nullptr, validation);
  };

  TrainResult<T> result;
  result.trainable_params = trainable_parameter_count(params, adapter ? &*adapter : nullptr);
  const auto start = std::chrono::steady_clock::now();
  auto [best, history] = train_with_early_stopping(State{std::move(params), std::move(adapter)}, config.max_epochs,
                                                   config.early_stop_patience, run_epoch, validate);
  result.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  result.params = std::move(best.params);
  result.adapter = std::move(best.adapter);
  result.history = std::move(history);
  return result;
}

/// NSS-tokenized supervised fine-tuning. `vocab` and `window` must come
/// from `train`; a window that disagrees with the training split is rejected.
template <typename T>
TrainResult<T> sft_train(const TrainConfig& config, ModelParams<T> params, std::optional<LoraAdapter<T>> adapter,
                         std::span<const FlowRecord> train, std::span<const FlowRecord> val, const Vocabulary& vocab,
                         const WindowSpec& window) {
  if (train.empty()) throw Error(Errc::empty_train_split, "training split is empty");
  if (compute_window(train) != window)
    throw Error(Errc::invalid_argument, "window was not derived from this training split");
  if (params.config.max_seq != window.sequence_length() || params.config.vocab_size != vocab.size())
    throw Error(Errc::shape_mismatch, "model config does not match vocabulary/window");
  return fit(config, std::move(params), std::move(adapter), encode_labeled(train, vocab, window),
             encode_labeled(val, vocab, window));
}

inline ModelConfig model_config_for(const ModelConfig& dims, std::size_t vocab_size, std::size_t max_seq) {
  ModelConfig c = dims;
  c.vocab_size = vocab_size;
  c.max_seq = max_seq;
  return c;
}

// ---------------------------------------------------------------- metrics

struct EvalReport {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
  std::vector<std::string> undefined;  // metrics that hit the 0/0 convention
  std::string dataset;
  std::string tokenizer = "nss";
  std::string mode;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::optional<nlohmann::json> perturbation;
  double wall_seconds = 0.0;

  std::size_t total() const { return tp + fp + tn + fn; }
};

/// Derived metrics with attack as the positive class; 0/0 yields 0 and is
/// listed in `undefined`.
inline void fill_metrics(EvalReport& r) {
  r.undefined.clear();
  const auto ratio = [&](std::size_t num, std::size_t den, const char* name) {
    if (den == 0) {
      r.undefined.emplace_back(name);
      return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  };
  r.accuracy = ratio(r.tp + r.tn, r.total(), "accuracy");
  r.precision = ratio(r.tp, r.tp + r.fp, "precision");
  r.recall = ratio(r.tp, r.tp + r.fn, "recall");
  const double pr = r.precision + r.recall;
  if (pr == 0.0) {
    r.undefined.emplace_back("f1");
    r.f1 = 0.0;
  } else {
    r.f1 = 2.0 * r.precision * r.recall / pr;
  }
}

inline EvalReport report_from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
  EvalReport r;
  r.tp = tp, r.fp = fp, r.tn = tn, r.fn = fn;
  fill_metrics(r);
  return r;
}

inline EvalReport report_from_predictions(std::span<const int> predicted, std::span<const int> actual) {
  if (predicted.size() != actual.size()) throw Error(Errc::shape_mismatch, "prediction and label counts differ");
  EvalReport r;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const bool p = predicted[i] == 1, a = actual[i] == 1;
    if (p && a) ++r.tp;
    else if (p) ++r.fp;
    else if (a) ++r.fn;
    else ++r.tn;
  }
  fill_metrics(r);
  return r;
}

inline double f1_from(double precision, double recall) {
  return precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

/// Timing is left out unless asked for, so equal runs give equal bytes.
inline nlohmann::json to_json(const EvalReport& r, bool include_timing = false) {
  nlohmann::json j = {{"dataset", r.dataset},
                      {"tokenizer", r.tokenizer},
                      {"mode", r.mode},
                      {"seed", r.seed},
                      {"config_hash", r.config_hash},
                      {"perturbation", r.perturbation ? *r.perturbation : nlohmann::json(nullptr)},
                      {"n", r.total()},
                      {"tp", r.tp},
                      {"fp", r.fp},
                      {"tn", r.tn},
                      {"fn", r.fn},
                      {"accuracy", r.accuracy},
                      {"precision", r.precision},
                      {"recall", r.recall},
                      {"f1", r.f1},
                      {"undefined", r.undefined}};
  if (include_timing) j["wall_seconds"] = r.wall_seconds;
  return j;
}

inline nlohmann::json reports_json(std::span<const EvalReport> reports, bool include_timing = false) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : reports) arr.push_back(to_json(r, include_timing));
  return arr;
}

namespace detail {

inline std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

inline std::string render_rows(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  auto line = [&](const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c) out += "  ";
      const auto pad = std::string(width[c] - cells[c].size(), ' ');
      out += c == 0 ? cells[c] + pad : pad + cells[c];
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out + "\n";
  };
  std::size_t total = 2 * (header.size() - 1);
  for (auto w : width) total += w;
  std::string out = line(header) + std::string(total, '-') + "\n";
  for (const auto& row : rows) out += line(row);
  return out;
}

inline std::string perturbation_label(const EvalReport& r) {
  if (!r.perturbation) return "clean";
  return r.perturbation->value("kind", std::string("?"));
}

}  // namespace detail

/// Aligned text table: one row per report.
inline std::string render_table(std::span<const EvalReport> reports) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : reports)
    rows.push_back({r.dataset, detail::perturbation_label(r), r.tokenizer, r.mode, std::to_string(r.total()),
                    detail::fmt4(r.accuracy), detail::fmt4(r.precision), detail::fmt4(r.recall), detail::fmt4(r.f1)});
  return detail::render_rows({"Dataset", "Perturbation", "Tokenizer", "Mode", "N", "Accuracy", "Precision", "Recall",
                              "F1-score"},
                             rows);
}

template <typename T>
EvalReport evaluate_sequences(const ModelParams<T>& params, const LoraAdapter<T>* adapter, const LabeledSequences& test) {
  if (test.empty()) throw Error(Errc::empty_test_set, "test set is empty");
  const auto start = std::chrono::steady_clock::now();
  auto preds = predict(params, adapter, std::span<const TokenSequence>(test.seqs));
  auto r = report_from_predictions(preds, test.labels);
  r.mode = adapter ? "lora" : "full_ft";
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

/// NSS-tokenized evaluation with the training split's vocabulary and window.
template <typename T>
EvalReport evaluate(const ModelParams<T>& params, const LoraAdapter<T>* adapter, std::span<const FlowRecord> test,
                    const Vocabulary& vocab, const WindowSpec& window, std::string dataset = {}) {
  if (test.empty()) throw Error(Errc::empty_test_set, "test set is empty");
  auto r = evaluate_sequences(params, adapter, encode_labeled(test, vocab, window));
  r.dataset = std::move(dataset);
  return r;
}

// ------------------------------------------------------------- robustness

/// Clean report first, then one per spec, all over the same record order.
/// Kinds and column statistics are those frozen from the training split.
template <typename T>
std::vector<EvalReport> robustness_run(const ModelParams<T>& params, const LoraAdapter<T>* adapter,
                                       std::span<const FlowRecord> clean_test, const Vocabulary& vocab,
                                       const WindowSpec& window, const std::map<std::string, std::vector<ColumnKind>>& kinds,
                                       const ColumnStats& stats, std::span<const PerturbSpec> specs,
                                       const std::string& dataset = {}) {
  std::vector<EvalReport> out;
  out.push_back(evaluate(params, adapter, clean_test, vocab, window, dataset));
  for (const auto& spec : specs) {
    const auto perturbed = perturb_records(clean_test, spec, kinds, stats);
    auto r = evaluate(params, adapter, std::span<const FlowRecord>(perturbed), vocab, window, dataset);
    r.perturbation = to_json(spec);
    out.push_back(std::move(r));
  }
  return out;
}

/// The four families at their automatic scales.
inline std::vector<PerturbSpec> default_perturbations(std::uint64_t seed) {
  std::vector<PerturbSpec> out;
  for (auto kind : kAllNoiseKinds) out.push_back(auto_scaled(kind, derive_seed(seed, to_string(kind))));
  return out;
}

// --------------------------------------------------------------- ablation

struct AblationFlags {
  bool sft = true;
  bool nss = true;
  bool lora = true;
  bool operator==(const AblationFlags&) const = default;
};

/// Untrained baseline plus the four fine-tuned combinations.
inline constexpr AblationFlags kAblationGrid[] = {
    {false, false, false}, {true, false, false}, {true, true, false}, {true, false, true}, {true, true, true}};

struct AblationRow {
  AblationFlags flags;
  EvalReport report;
  double fine_tune_seconds = 0.0;
  double seconds_per_epoch = 0.0;
  std::size_t epochs = 0;
  std::size_t sequence_length = 0;
  std::size_t trainable_params = 0;
};

struct AblationSetup {
  ModelConfig dims;  // vocab_size and max_seq are filled per tokenizer
  TrainConfig train;
  std::size_t subword_vocab_size = 1000;
  std::string dataset;
};

/// Trains and evaluates each flag combination from a fresh initialization
/// with the same seed. Tokenizers are fit on `train` only; `nss` off
/// switches to the subword tokenizer; `sft` off evaluates the untrained model.
inline std::vector<AblationRow> ablation_run(std::span<const AblationFlags> grid, std::span<const FlowRecord> train,
                                             std::span<const FlowRecord> val, std::span<const FlowRecord> test,
                                             const AblationSetup& setup) {
  if (train.empty()) throw Error(Errc::empty_train_split, "training split is empty");
  if (test.empty()) throw Error(Errc::empty_test_set, "test set is empty");

  const auto vocab = Vocabulary::from_records(train, Quantization::raw);
  const auto window = compute_window(train);
  std::vector<std::string> texts;
  texts.reserve(train.size());
  for (const auto& r : train) texts.push_back(flow_text(r));
  const auto subword = train_subword_vocab(texts, setup.subword_vocab_size);
  const std::size_t subword_len = subword_sequence_length(train, subword);

  struct Encoded {
    LabeledSequences train, val, test;
    ModelConfig config;
  };
  std::optional<Encoded> nss_data, sub_data;
  auto data_for = [&](bool nss) -> const Encoded& {
    auto& slot = nss ? nss_data : sub_data;
    if (!slot) {
      if (nss) {
        slot = Encoded{encode_labeled(train, vocab, window), encode_labeled(val, vocab, window),
                       encode_labeled(test, vocab, window),
                       model_config_for(setup.dims, vocab.size(), window.sequence_length())};
      } else {
        slot = Encoded{encode_labeled(train, subword, subword_len), encode_labeled(val, subword, subword_len),
                       encode_labeled(test, subword, subword_len),
                       model_config_for(setup.dims, subword.size(), subword_len)};
      }
    }
    return *slot;
  };

  std::vector<AblationRow> rows;
  for (const auto& flags : grid) {
    const auto& data = data_for(flags.nss);
    auto params = init_model<float>(data.config, derive_seed(setup.train.seed, "init"));
    AblationRow row;
    row.flags = flags;
    row.sequence_length = data.config.max_seq;
    TrainConfig tc = setup.train;
    tc.mode = flags.lora ? TrainMode::lora : TrainMode::full_ft;
    if (flags.sft) {
      auto trained = fit<float>(tc, std::move(params), std::nullopt, data.train, data.val);
      row.fine_tune_seconds = trained.train_seconds;
      row.epochs = trained.history.epochs.size();
      row.seconds_per_epoch = row.epochs ? trained.train_seconds / static_cast<double>(row.epochs) : 0.0;
      row.trainable_params = trained.trainable_params;
      row.report = evaluate_sequences(trained.params, trained.adapter ? &*trained.adapter : nullptr, data.test);
    } else {
      row.report = evaluate_sequences<float>(params, nullptr, data.test);
      row.report.mode = "untrained";
    }
    row.report.dataset = setup.dataset;
    row.report.tokenizer = flags.nss ? "nss" : "subword";
    row.report.seed = setup.train.seed;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json to_json(const AblationRow& row) {
  return {{"sft", row.flags.sft},
          {"nss", row.flags.nss},
          {"lora", row.flags.lora},
          {"fine_tune_seconds", row.fine_tune_seconds},
          {"seconds_per_epoch", row.seconds_per_epoch},
          {"epochs", row.epochs},
          {"sequence_length", row.sequence_length},
          {"trainable_params", row.trainable_params},
          {"report", to_json(row.report)}};
}

inline std::string render_ablation_table(std::span<const AblationRow> rows) {
  auto mark = [](bool b) { return std::string(b ? "yes" : "no"); };
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows) {
    char time[32];
    std::snprintf(time, sizeof time, "%.2f", r.fine_tune_seconds);
    cells.push_back({mark(r.flags.sft), mark(r.flags.nss), mark(r.flags.lora), r.flags.sft ? time : "-",
                     std::to_string(r.sequence_length), detail::fmt4(r.report.accuracy),
                     detail::fmt4(r.report.precision), detail::fmt4(r.report.recall), detail::fmt4(r.report.f1)});
  }
  return detail::render_rows({"SFT", "NSS", "LoRA", "Time (s)", "SeqLen", "Accuracy", "Precision", "Recall", "F1-score"},
                             cells);
}

}  // namespace flowdetect
