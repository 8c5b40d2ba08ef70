#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace finrag {

enum class SourceType { report, news, market, macro, custom };

std::string_view to_string(SourceType t) noexcept;
/// Throws Error(InvalidDocument) for unknown names.
SourceType parse_source_type(std::string_view s);

struct Document {
  std::string id;
  SourceType source_type = SourceType::news;
  std::string title;
  std::string summary;
  std::string body;
  std::vector<std::string> company_names;
  /// Unix seconds, UTC.
  std::int64_t published_at = 0;
  std::optional<std::string> url;
  std::optional<std::string> pdf_link;
  /// Structured payload, e.g. candlestick rows for market documents.
  std::optional<nlohmann::json> attachment;

  friend bool operator==(const Document&, const Document&) = default;
};

/// JSONL field names match the struct; published_at is an ISO-8601 UTC string.
nlohmann::json to_json(const Document& d);
/// Throws Error(InvalidDocument) on missing id/published_at or bad types.
Document document_from_json(const nlohmann::json& j);

struct Paragraph {
  std::string doc_id;
  int ordinal = 0;
  std::string text;

  /// "<doc_id>:<ordinal>".
  std::string ref() const { return doc_id + ":" + std::to_string(ordinal); }
  friend bool operator==(const Paragraph&, const Paragraph&) = default;
};

/// Body lines, trimmed, blanks dropped; falls back to the summary. Throws
/// Error(EmptyBodyAndSummary) when both are blank.
std::vector<Paragraph> split_paragraphs(const Document& d);

/// Splits "<doc_id>:<ordinal>" at the last colon.
std::optional<std::pair<std::string, int>> parse_paragraph_ref(std::string_view ref);

}  // namespace finrag
