// SPDX-FileCopyrightText: (c) 2026 The flowdetect Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace flowdetect {

enum class Errc {
  io_error,
  malformed_row,
  missing_label_column,
  invalid_schema,
  empty_table,
  unknown_id,
  corpus_empty,
  target_too_small,
  insufficient_records,
  separator_collision,
  format_version_mismatch,
  invalid_config,
  id_out_of_range,
  shape_mismatch,
  label_out_of_range,
  rank_too_large,
  empty_train_split,
  empty_test_set,
  non_finite_loss,
  invalid_argument,
};

constexpr std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::io_error: return "IoError";
    case Errc::malformed_row: return "MalformedRow";
    case Errc::missing_label_column: return "MissingLabelColumn";
    case Errc::invalid_schema: return "InvalidSchema";
    case Errc::empty_table: return "EmptyTable";
    case Errc::unknown_id: return "UnknownId";
    case Errc::corpus_empty: return "CorpusEmpty";
    case Errc::target_too_small: return "TargetTooSmall";
    case Errc::insufficient_records: return "InsufficientRecords";
    case Errc::separator_collision: return "SeparatorCollision";
    case Errc::format_version_mismatch: return "FormatVersionMismatch";
    case Errc::invalid_config: return "InvalidConfig";
    case Errc::id_out_of_range: return "IdOutOfRange";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::label_out_of_range: return "LabelOutOfRange";
    case Errc::rank_too_large: return "RankTooLarge";
    case Errc::empty_train_split: return "EmptyTrainSplit";
    case Errc::empty_test_set: return "EmptyTestSet";
    case Errc::non_finite_loss: return "NonFiniteLoss";
    case Errc::invalid_argument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Single exception type for the library; `code()` says which contract failed.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Parse failure carrying the 1-based physical line number of the offending row.
class MalformedRowError : public Error {
 public:
  MalformedRowError(std::size_t row, const std::string& message)
      : Error(Errc::malformed_row, "row " + std::to_string(row) + ": " + message), row_(row) {}

  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

}  // namespace flowdetect
