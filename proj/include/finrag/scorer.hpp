#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "finrag/exam.hpp"

namespace finrag {

enum class EvalMode { answer_only, chain_of_thought };

std::string_view to_string(EvalMode mode) noexcept;
/// Accepts "ao"/"answer_only" and "cot"/"chain_of_thought".
EvalMode parse_mode(std::string_view s);

/// Natural-log score per option letter.
using OptionScores = std::map<char, double>;

enum class PredictionStatus { ok, no_answer, error };

struct ScoredPrediction {
  std::string question_id;
  EvalMode mode = EvalMode::answer_only;
  std::optional<OptionScores> per_option_log_prob;
  /// Empty only when status != ok.
  LetterSet predicted;
  std::optional<std::string> raw_output;
  std::optional<bool> correct;
  PredictionStatus status = PredictionStatus::ok;
};

/// Argmax letter; ties go to the alphabetically first letter.
char select_single(const OptionScores& scores);

/// Every subset of size >= 2 of the first n letters, ordered by size and then
/// lexicographically. Size is 2^n - n - 1. Supports 2 <= n <= 5.
std::vector<LetterSet> enumerate_combinations(int n);

/// Combination maximizing the summed log-probability of its members after
/// log-softmax normalization; ties go to the combination that comes first in
/// canonical order.
LetterSet select_multi(const OptionScores& scores);

/// Final answer letters from a free-form reasoning trace. Throws
/// Error(NoAnswerFound) when neither a declaration nor a bare letter run is found.
LetterSet parse_cot_answer(std::string_view raw, LetterSet alphabet, bool multi);

/// Inverse of parse_cot_answer for a single declaration line.
std::string render_answer_line(LetterSet answer, Language lang);

/// Expected accuracy of uniform guessing for a category.
double random_baseline(const QuestionCategory& category);

struct SubjectAccuracy {
  std::size_t n = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  friend bool operator==(const SubjectAccuracy&, const SubjectAccuracy&) = default;
};

struct AccuracyReport {
  std::map<std::string, SubjectAccuracy> per_subject;
  std::map<std::string, SubjectAccuracy> per_category;
  SubjectAccuracy total;
  /// Predictions whose output held no parseable answer.
  std::size_t no_answer = 0;
  /// Predictions that failed at the model call.
  std::size_t errors = 0;
  /// Questions without visible gold, excluded from n.
  std::size_t unscored = 0;

  /// Macro mean over the categories present.
  double category_average() const;
  friend bool operator==(const AccuracyReport&, const AccuracyReport&) = default;
};

/// One row of evidence for the aggregation fold.
struct GradedItem {
  std::string subject;
  std::string category;
  std::optional<LetterSet> gold;
  LetterSet predicted;
  PredictionStatus status = PredictionStatus::ok;
};

/// Exact-set-match accuracy. `categories` maps subject to category label; subjects
/// absent from it are reported under "uncategorized". Throws Error(IdMismatch)
/// unless prediction and gold ids correspond one to one.
AccuracyReport aggregate(const std::vector<ScoredPrediction>& predictions,
                         const std::vector<ExamQuestion>& gold,
                         const std::map<std::string, std::string>& categories = {});
AccuracyReport aggregate_items(const std::vector<GradedItem>& items);

nlohmann::json to_json(const AccuracyReport& report);
AccuracyReport report_from_json(const nlohmann::json& j);

/// Aligned text table with one row per model and one column per category
/// (plus the average), preceded by a random-baseline row.
std::string format_report_table(const std::vector<std::pair<std::string, AccuracyReport>>& rows);

}  // namespace finrag
