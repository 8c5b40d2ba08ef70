#include "finrag/document.hpp"

#include <charconv>

#include "finrag/error.hpp"
#include "finrag/text.hpp"

namespace finrag {

std::string_view to_string(SourceType t) noexcept {
  switch (t) {
    case SourceType::report: return "report";
    case SourceType::news: return "news";
    case SourceType::market: return "market";
    case SourceType::macro: return "macro";
    case SourceType::custom: return "custom";
  }
  return "news";
}

SourceType parse_source_type(std::string_view s) {
  if (s == "report") return SourceType::report;
  if (s == "news") return SourceType::news;
  if (s == "market") return SourceType::market;
  if (s == "macro") return SourceType::macro;
  if (s == "custom") return SourceType::custom;
  throw Error(Errc::InvalidDocument, "unknown source_type '" + std::string(s) + "'");
}

nlohmann::json to_json(const Document& d) {
  nlohmann::json j = {{"id", d.id},
                      {"source_type", to_string(d.source_type)},
                      {"title", d.title},
                      {"summary", d.summary},
                      {"body", d.body},
                      {"company_names", d.company_names},
                      {"published_at", text::format_timestamp(d.published_at)}};
  if (d.url) j["url"] = *d.url;
  if (d.pdf_link) j["pdf_link"] = *d.pdf_link;
  if (d.attachment) j["attachment"] = *d.attachment;
  return j;
}

Document document_from_json(const nlohmann::json& j) {
  Document d;
  try {
    d.id = j.at("id").get<std::string>();
    d.source_type = parse_source_type(j.value("source_type", std::string("news")));
    d.title = j.value("title", std::string());
    d.summary = j.value("summary", std::string());
    d.body = j.value("body", std::string());
    d.company_names = j.value("company_names", std::vector<std::string>{});
    const auto& ts = j.at("published_at");
    d.published_at = ts.is_number() ? ts.get<std::int64_t>() : text::parse_timestamp(ts.get<std::string>());
    if (j.contains("url") && !j["url"].is_null()) d.url = j["url"].get<std::string>();
    if (j.contains("pdf_link") && !j["pdf_link"].is_null()) d.pdf_link = j["pdf_link"].get<std::string>();
    if (j.contains("attachment") && !j["attachment"].is_null()) d.attachment = j["attachment"];
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidDocument, e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::InvalidDocument) throw;
    throw Error(Errc::InvalidDocument, e.what());
  }
  if (text::trim(d.id).empty()) throw Error(Errc::InvalidDocument, "empty id");
  return d;
}

std::vector<Paragraph> split_paragraphs(const Document& d) {
  std::vector<Paragraph> out;
  for (const auto& line : text::split(d.body, '\n')) {
    std::string t = text::trim(line);
    if (t.empty()) continue;
    out.push_back({d.id, static_cast<int>(out.size()), std::move(t)});
  }
  if (out.empty()) {
    std::string s = text::trim(d.summary);
    if (s.empty()) throw Error(Errc::EmptyBodyAndSummary, d.id);
    out.push_back({d.id, 0, std::move(s)});
  }
  return out;
}

std::optional<std::pair<std::string, int>> parse_paragraph_ref(std::string_view ref) {
  const auto colon = ref.rfind(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 1 == ref.size()) return std::nullopt;
  int ordinal = 0;
  const auto tail = ref.substr(colon + 1);
  const auto [ptr, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), ordinal);
  if (ec != std::errc() || ptr != tail.data() + tail.size() || ordinal < 0) return std::nullopt;
  return std::pair{std::string(ref.substr(0, colon)), ordinal};
}

}  // namespace finrag
