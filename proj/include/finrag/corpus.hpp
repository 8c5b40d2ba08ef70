#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "finrag/exam.hpp"

namespace finrag {

class ModelClient;

struct RawItem {
  std::string id;
  std::string text;
  std::string source_tag;
};

struct CorpusItem {
  std::string id;
  /// Text after prefix/suffix stripping; re-cleaning it is a no-op.
  std::string raw_text;
  std::string question;
  std::string answer_text;
  std::vector<std::string> options;
  std::optional<LetterSet> answer_set;
  std::optional<std::string> explanation;
  std::string dedup_key;
  std::string source_tag;

  friend bool operator==(const CorpusItem&, const CorpusItem&) = default;
};

nlohmann::json to_json(const CorpusItem& item);
CorpusItem corpus_item_from_json(const nlohmann::json& j);

/// Splits at the last answer delimiter and trims both halves. Throws
/// Error(NoDelimiter), Error(EmptyText) for an empty question half and
/// Error(EmptyAnswer) for an empty answer half.
std::pair<std::string, std::string> split_qa(std::string_view raw,
                                             const std::vector<std::string>& delimiters = {});

/// Chinese ideographs of `question`, in order, truncated to 30.
std::string dedup_key(std::string_view question);

/// Lettered options found in a question ("A. x B. y", "(A) x", "A、x" ...).
/// Empty unless at least A and B are present.
std::vector<std::string> parse_options(std::string_view question);

/// The question text before its first option marker (all of it when there are
/// no options).
std::string question_stem(std::string_view question);

struct CleanConfig {
  std::string version = "builtin";
  /// ECMAScript patterns, anchored at the start / end of the text. They match
  /// UTF-8 bytes, so negated sets of CJK punctuation misfire; use `.*?` instead.
  std::vector<std::string> strip_prefixes;
  std::vector<std::string> strip_suffixes;
  std::vector<std::string> delimiters = {"答案:", "答案：", "Answer:"};

  static CleanConfig load(const std::filesystem::path& file);
  static CleanConfig from_json(const nlohmann::json& j);
};

struct Rejected {
  RawItem item;
  /// no_delimiter, empty_question, empty_answer or duplicate.
  std::string reason;
};

struct CleanResult {
  std::vector<CorpusItem> kept;
  std::vector<Rejected> rejected;
};

/// Parses one raw item without deduplication; throws on parse failure.
CorpusItem parse_item(const RawItem& raw, const CleanConfig& config);

/// First occurrence per dedup key survives; items with an empty key are never
/// treated as duplicates. Parsing runs on `workers` threads; the result only
/// depends on input order.
CleanResult clean_corpus(const std::vector<RawItem>& items, const CleanConfig& config = {}, int workers = 1);

std::vector<RawItem> read_raw_jsonl(const std::filesystem::path& file);
std::vector<CorpusItem> read_corpus_jsonl(const std::filesystem::path& file);
void write_corpus_jsonl(const std::filesystem::path& file, const std::vector<CorpusItem>& items);
void write_rejects_jsonl(const std::filesystem::path& file, const std::vector<Rejected>& rejected);

/// Ordered (metric name, value) rows with the corpus statistics table names.
using StatsReport = std::vector<std::pair<std::string, double>>;

/// Lengths are in code points; "Others" counts items whose option count is
/// outside {2, 3, 4, 5}, option-less items included.
StatsReport corpus_stats(const std::vector<CorpusItem>& items);
std::string format_stats(const StatsReport& report);

enum class InstructionCategory { knowledge_inquiry, calculation_reasoning, reading_comprehension, logical_judgment };

std::string_view to_string(InstructionCategory c) noexcept;

struct InstructionRecord {
  InstructionCategory category = InstructionCategory::knowledge_inquiry;
  std::string instruction;
  std::string input;
  std::string output;
};

nlohmann::json to_json(const InstructionRecord& r);

struct CategoryRules {
  /// Minimum share of digits/operators among the non-space characters of the
  /// explanation (or answer) for calculation_reasoning.
  double calc_ratio_threshold = 0.12;
  std::vector<std::string> judgment_markers = {"判断", "是否正确", "对错", "true or false", "true/false"};
  std::vector<std::string> judgment_answers = {"正确", "错误", "对", "错", "√", "×", "true", "false"};
  /// Consulted only for items no heuristic can place.
  ModelClient* classifier = nullptr;
};

/// Share of digit/operator code points among non-space ones.
double numeric_ratio(std::string_view s);

/// Heuristic category, or nullopt when none applies.
std::optional<InstructionCategory> classify(const CorpusItem& item, const CategoryRules& rules);

struct ExportResult {
  std::vector<InstructionRecord> records;
  /// (item id, reason) for UncategorizableItem.
  std::vector<std::pair<std::string, std::string>> uncategorized;
};

ExportResult export_instructions(const std::vector<CorpusItem>& items, const CategoryRules& rules = {});

}  // namespace finrag
