#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace finrag {

/// Failure categories shared by every module. Names mirror the error
/// vocabulary of the public contracts so callers can branch on them.
enum class Errc {
  // exam datasets
  MissingFile,
  MalformedRow,
  InvalidAnswerLetter,
  EmptyAnswer,
  NonLetterCharacter,
  // model gateway
  Timeout,
  UpstreamError,
  RateLimited,
  UnsupportedByBackend,
  DimensionMismatch,
  EmptyText,
  ConfigError,
  // prompts
  MissingExplanationForCoT,
  AlphabetMismatch,
  UnsupportedLanguage,
  TemplateError,
  // scoring
  EmptyScores,
  NonFiniteScore,
  UnsupportedOptionCount,
  NoAnswerFound,
  IdMismatch,
  // harness
  PartialRun,
  CorruptLog,
  // corpus
  NoDelimiter,
  UncategorizableItem,
  // indices
  DuplicateId,
  ZeroVector,
  RaggedDimensions,
  UnknownId,
  InvalidArgument,
  CorruptIndex,
  // documents
  DuplicateDocId,
  EmptyBodyAndSummary,
  InvalidDocument,
  SourceUnavailable,
  QueryRejected,
  StorageError,
  // agents
  ModelError,
  UncitedIndex,
  // finfact
  UnparseableGeneration,
  UnparseableVerdict,
  NoVerdicts,
  ManifestMismatch,
};

std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// HTTP-ish upstream failure carrying the status code.
class UpstreamError : public Error {
 public:
  UpstreamError(int status, const std::string& what)
      : Error(Errc::UpstreamError, "status " + std::to_string(status) + ": " + what),
        status_(status) {}

  int status() const noexcept { return status_; }

 private:
  int status_;
};

/// Row-level CSV failure (1-based data row number, header excluded).
class MalformedRow : public Error {
 public:
  MalformedRow(std::size_t row_no, const std::string& reason)
      : Error(Errc::MalformedRow, "row " + std::to_string(row_no) + ": " + reason),
        row_no_(row_no) {}

  std::size_t row_no() const noexcept { return row_no_; }

 private:
  std::size_t row_no_;
};

class CorruptLog : public Error {
 public:
  CorruptLog(std::size_t line_no, const std::string& reason)
      : Error(Errc::CorruptLog, "line " + std::to_string(line_no) + ": " + reason),
        line_no_(line_no) {}

  std::size_t line_no() const noexcept { return line_no_; }

 private:
  std::size_t line_no_;
};

}  // namespace finrag
