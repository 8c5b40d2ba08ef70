#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "finrag/document.hpp"
#include "finrag/gateway.hpp"
#include "finrag/prompt.hpp"

namespace finrag {

enum class FactKind { structural, conversational };
enum class FactCategory { financial, political, technical, sports };

std::string_view to_string(FactKind k) noexcept;
std::string_view to_string(FactCategory c) noexcept;
FactKind parse_fact_kind(std::string_view s);
FactCategory parse_fact_category(std::string_view s);

struct FactQA {
  std::string id;
  FactKind kind = FactKind::structural;
  FactCategory category = FactCategory::financial;
  int year = 0;
  std::string question;
  /// Required for structural items.
  std::optional<std::string> gold_answer;
  std::string source_article_id;
};

nlohmann::json to_json(const FactQA& q);
/// Throws Error(InvalidArgument) for a structural item without gold_answer.
FactQA factqa_from_json(const nlohmann::json& j);
std::vector<FactQA> read_factqa_jsonl(const std::filesystem::path& file);
void write_factqa_jsonl(const std::filesystem::path& file, const std::vector<FactQA>& items);

enum class Dimension { factual, relevant, informational };
inline constexpr Dimension kDimensions[] = {Dimension::factual, Dimension::relevant, Dimension::informational};
enum class Outcome { a_wins, b_wins, tie };

std::string_view to_string(Dimension d) noexcept;
std::string_view to_string(Outcome o) noexcept;
Dimension parse_dimension(std::string_view s);
Outcome parse_outcome(std::string_view s);

struct JudgeVerdict {
  std::string qa_id;
  std::string system_a;
  std::string system_b;
  std::map<Dimension, Outcome> per_dimension;
  /// Some judgement could not be parsed and was counted as a tie.
  bool unparseable = false;
};

nlohmann::json to_json(const JudgeVerdict& v);
/// Throws Error(InvalidArgument) unless all three dimensions are present.
JudgeVerdict verdict_from_json(const nlohmann::json& j);
std::vector<JudgeVerdict> read_verdicts_jsonl(const std::filesystem::path& file);
void write_verdicts_jsonl(const std::filesystem::path& file, const std::vector<JudgeVerdict>& verdicts);

/// structural.txt, conversational.txt and judge.txt from a directory.
class FinfactPrompts {
 public:
  static FinfactPrompts from_directory(const std::filesystem::path& dir);
  static FinfactPrompts defaults();
  std::string render(const std::string& name, const std::map<std::string, std::string>& values) const;

 private:
  std::map<std::string, PromptTemplate> templates_;
};

struct GenerationOptions {
  FactCategory category = FactCategory::financial;
  int year = 0;
  int max_items = 8;
};

/// Parses the model's item list. Items that break the invariants (a
/// structural item without an answer, an empty question) are skipped and
/// logged. Throws Error(InvalidDocument) for an empty article,
/// Error(ModelError) when the model fails and Error(UnparseableGeneration) when
/// no JSON item list comes back after one retry.
std::vector<FactQA> generate_factqa(const Document& article, FactKind kind, const GenerationOptions& options,
                                    ModelClient& model, const FinfactPrompts& prompts);

/// Verdicts of one ordering, in that ordering's terms: a_wins means the
/// response shown first won.
struct OrderedJudgement {
  std::map<Dimension, Outcome> outcome;
  bool unparseable = false;
};

/// Parses {"factual": "1"|"2"|"tie", ...}; missing or bad values are ties and
/// set unparseable.
OrderedJudgement parse_judgement(std::string_view response);

/// Combines the judgement with A shown first and the one with B shown first
/// (already mapped back to A/B terms). Agreement stands; disagreement is a tie.
Outcome reconcile(Outcome a_first, Outcome b_first) noexcept;

/// Reference text for the judge: the gold answer for structural items and the
/// article for conversational ones.
std::string judge_reference(const FactQA& qa, const std::optional<Document>& article);

/// Judges both orderings and reconciles each dimension. Throws
/// Error(InvalidArgument) for an empty response or missing reference and
/// Error(ModelError) when the judge fails.
JudgeVerdict judge_pairwise(const FactQA& qa, const std::string& reference, const std::string& system_a,
                            const std::string& resp_a, const std::string& system_b, const std::string& resp_b,
                            ModelClient& judge, const FinfactPrompts& prompts);

struct WinRate {
  double win = 0.0;
  double tie = 0.0;
  double loss = 0.0;
  std::size_t n = 0;
};

/// Outcomes from `system`'s side over every verdict it appears in, restricted
/// to one opponent when given. Throws Error(NoVerdicts).
WinRate win_rate(const std::vector<JudgeVerdict>& verdicts, const std::string& system, Dimension dimension,
                 const std::optional<std::string>& opponent = std::nullopt);

/// Report JSON: per system, pooled and per opponent, per dimension.
nlohmann::json win_rate_report(const std::vector<JudgeVerdict>& verdicts);
/// One row per (system, opponent, dimension): system,opponent,dimension,win,tie,loss,n.
std::string win_rate_csv(const std::vector<JudgeVerdict>& verdicts);

/// Declared dataset counts. Article counts are by the news source's category
/// and year; question counts by kind.
struct FinfactManifest {
  std::map<std::string, int> articles_by_category;
  std::map<int, int> articles_by_year;
  std::map<std::string, int> questions_by_kind;
  int total_questions = 0;

  static FinfactManifest from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Counts of the published dataset: 120 financial and 30 each of political,
/// technical and sports articles, 70 per year for 2021 to 2023, 877 structural
/// and 637 conversational questions, 1514 in total.
FinfactManifest published_manifest_counts();

/// Internal totals: category and year article counts agree and the kinds sum
/// to the question total. Throws Error(ManifestMismatch).
void validate_manifest_totals(const FinfactManifest& manifest);

/// validate_manifest_totals, then checks that every item cites a known article
/// and that the distinct cited articles per category and year and the items
/// per kind equal the declared counts. Throws Error(ManifestMismatch) naming
/// the first difference.
void validate_manifest(const FinfactManifest& manifest, const std::vector<FactQA>& items,
                       const std::vector<Document>& articles);

}  // namespace finrag
