#include "finrag/error.hpp"

namespace finrag {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::MissingFile: return "MissingFile";
    case Errc::MalformedRow: return "MalformedRow";
    case Errc::InvalidAnswerLetter: return "InvalidAnswerLetter";
    case Errc::EmptyAnswer: return "EmptyAnswer";
    case Errc::NonLetterCharacter: return "NonLetterCharacter";
    case Errc::Timeout: return "Timeout";
    case Errc::UpstreamError: return "UpstreamError";
    case Errc::RateLimited: return "RateLimited";
    case Errc::UnsupportedByBackend: return "UnsupportedByBackend";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::EmptyText: return "EmptyText";
    case Errc::ConfigError: return "ConfigError";
    case Errc::MissingExplanationForCoT: return "MissingExplanationForCoT";
    case Errc::AlphabetMismatch: return "AlphabetMismatch";
    case Errc::UnsupportedLanguage: return "UnsupportedLanguage";
    case Errc::TemplateError: return "TemplateError";
    case Errc::EmptyScores: return "EmptyScores";
    case Errc::NonFiniteScore: return "NonFiniteScore";
    case Errc::UnsupportedOptionCount: return "UnsupportedOptionCount";
    case Errc::NoAnswerFound: return "NoAnswerFound";
    case Errc::IdMismatch: return "IdMismatch";
    case Errc::PartialRun: return "PartialRun";
    case Errc::CorruptLog: return "CorruptLog";
    case Errc::NoDelimiter: return "NoDelimiter";
    case Errc::UncategorizableItem: return "UncategorizableItem";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::ZeroVector: return "ZeroVector";
    case Errc::RaggedDimensions: return "RaggedDimensions";
    case Errc::UnknownId: return "UnknownId";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::CorruptIndex: return "CorruptIndex";
    case Errc::DuplicateDocId: return "DuplicateDocId";
    case Errc::EmptyBodyAndSummary: return "EmptyBodyAndSummary";
    case Errc::InvalidDocument: return "InvalidDocument";
    case Errc::SourceUnavailable: return "SourceUnavailable";
    case Errc::QueryRejected: return "QueryRejected";
    case Errc::StorageError: return "StorageError";
    case Errc::ModelError: return "ModelError";
    case Errc::UncitedIndex: return "UncitedIndex";
    case Errc::UnparseableGeneration: return "UnparseableGeneration";
    case Errc::UnparseableVerdict: return "UnparseableVerdict";
    case Errc::NoVerdicts: return "NoVerdicts";
    case Errc::ManifestMismatch: return "ManifestMismatch";
  }
  return "Unknown";
}

}  // namespace finrag
