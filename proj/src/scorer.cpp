#include "finrag/scorer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <set>

#include "finrag/error.hpp"
#include "finrag/text.hpp"

namespace finrag {

std::string_view to_string(EvalMode mode) noexcept {
  return mode == EvalMode::answer_only ? "answer_only" : "chain_of_thought";
}

EvalMode parse_mode(std::string_view s) {
  if (s == "ao" || s == "answer_only") return EvalMode::answer_only;
  if (s == "cot" || s == "chain_of_thought") return EvalMode::chain_of_thought;
  throw Error(Errc::ConfigError, "unknown mode '" + std::string(s) + "'");
}

namespace {

void check_scores(const OptionScores& scores) {
  if (scores.empty()) throw Error(Errc::EmptyScores, "no option scores");
  for (const auto& [letter, v] : scores) {
    if (!std::isfinite(v)) {
      throw Error(Errc::NonFiniteScore, std::string("score for ") + letter + " is not finite");
    }
  }
}

}  // namespace

char select_single(const OptionScores& scores) {
  check_scores(scores);
  auto best = scores.begin();
  for (auto it = std::next(scores.begin()); it != scores.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  return best->first;
}

std::vector<LetterSet> enumerate_combinations(int n) {
  if (n < 2 || n > 5) {
    throw Error(Errc::UnsupportedOptionCount, "option count " + std::to_string(n));
  }
  std::vector<LetterSet> out;
  for (int size = 2; size <= n; ++size) {
    std::vector<std::string> words;
    for (unsigned mask = 0; mask < (1U << n); ++mask) {
      if (std::popcount(mask) != size) continue;
      std::string w;
      for (int i = 0; i < n; ++i) {
        if ((mask >> i) & 1U) w.push_back(static_cast<char>('A' + i));
      }
      words.push_back(std::move(w));
    }
    std::sort(words.begin(), words.end());  // "AB" < "AC" < "BC"
    for (const auto& w : words) out.push_back(LetterSet::of(w));
  }
  return out;
}

LetterSet select_multi(const OptionScores& scores) {
  check_scores(scores);
  const int n = static_cast<int>(scores.size());
  std::vector<char> keys;
  std::vector<double> values;
  for (const auto& [k, v] : scores) {
    keys.push_back(k);
    values.push_back(v);
  }
  // Sizes differ across combinations, so scores must be true log-probabilities
  // for the joint sums to be comparable; log-softmax also makes the choice
  // invariant to a constant shift of the input.
  const double top = *std::max_element(values.begin(), values.end());
  double mass = 0.0;
  for (double v : values) mass += std::exp(v - top);
  const double log_z = top + std::log(mass);
  for (double& v : values) v -= log_z;
  LetterSet best;
  double best_sum = -INFINITY;
  for (LetterSet combo : enumerate_combinations(n)) {
    double sum = 0.0;
    LetterSet mapped;
    for (char pos : combo.letters()) {
      const auto idx = static_cast<std::size_t>(pos - 'A');
      sum += values[idx];
      mapped.insert(keys[idx]);
    }
    if (sum > best_sum) {
      best_sum = sum;
      best = mapped;
    }
  }
  return best;
}

namespace {

bool is_ascii_letter(char32_t c) { return (c >= U'a' && c <= U'z') || (c >= U'A' && c <= U'Z'); }

bool is_letter_separator(char32_t c) {
  return c == U',' || c == U'，' || c == U'、' || c == U' ' || c == U'/' || c == U'和' ||
         c == U'&';
}

// Letters following a declaration marker at `pos`; empty when the text there is
// not a clean letter run.
LetterSet letters_after(const std::u32string& s, std::size_t pos, LetterSet alphabet) {
  while (pos < s.size() && (text::is_space(s[pos]) || s[pos] == U':' || s[pos] == U'：' ||
                            s[pos] == U'(' || s[pos] == U'（' || s[pos] == U'*' ||
                            s[pos] == U'"' || s[pos] == U'“' || s[pos] == U'【' ||
                            s[pos] == U'[' || s[pos] == U'选' || s[pos] == U'项')) {
    ++pos;
  }
  LetterSet out;
  std::size_t i = pos;
  std::size_t last_letter_end = pos;
  while (i < s.size()) {
    const char32_t c = s[i];
    if (c >= U'A' && c <= U'Z' && alphabet.contains(static_cast<char>(c))) {
      out.insert(static_cast<char>(c));
      ++i;
      last_letter_end = i;
    } else if (!out.empty() && is_letter_separator(c)) {
      ++i;
    } else {
      break;
    }
  }
  if (out.empty()) return {};
  // "Answer: Apple" is prose, not a letter.
  if (last_letter_end < s.size() && is_ascii_letter(s[last_letter_end])) return {};
  return out;
}

LetterSet last_standalone_run(const std::u32string& s, LetterSet alphabet) {
  LetterSet found;
  std::size_t i = 0;
  while (i < s.size()) {
    if (!is_ascii_letter(s[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    LetterSet run;
    bool valid = true;
    while (j < s.size() && is_ascii_letter(s[j])) {
      const char32_t c = s[j];
      if (c >= U'A' && c <= U'Z' && alphabet.contains(static_cast<char>(c))) {
        run.insert(static_cast<char>(c));
      } else {
        valid = false;
      }
      ++j;
    }
    if (valid && !run.empty()) found = run;
    i = j;
  }
  return found;
}

LetterSet first_letter(LetterSet s) { return LetterSet::of(std::string(1, s.letters().front())); }

}  // namespace

LetterSet parse_cot_answer(std::string_view raw, LetterSet alphabet, bool multi) {
  if (text::trim(raw).empty()) throw Error(Errc::NoAnswerFound, "empty output");
  const std::u32string s = text::decode_utf8(raw);
  std::u32string lower = s;
  for (auto& c : lower) {
    if (c >= U'A' && c <= U'Z') c = c - U'A' + U'a';
  }
  static const std::u32string kMarkers[] = {U"答案是", U"答案为", U"答案應為", U"答案应为",
                                            U"答案应该是", U"答案：", U"答案:", U"answer is",
                                            U"answer:", U"answer :"};
  std::size_t best_pos = std::u32string::npos;
  LetterSet best;
  for (const auto& marker : kMarkers) {
    std::size_t pos = lower.find(marker);
    while (pos != std::u32string::npos) {
      const std::size_t after = pos + marker.size();
      LetterSet got = letters_after(s, after, alphabet);
      if (!got.empty() && (best_pos == std::u32string::npos || pos > best_pos)) {
        best_pos = pos;
        best = got;
      }
      pos = lower.find(marker, pos + 1);
    }
  }
  if (best.empty()) best = last_standalone_run(s, alphabet);
  if (best.empty()) throw Error(Errc::NoAnswerFound, "no answer letter in output");
  if (!multi && best.size() > 1) best = first_letter(best);
  return best;
}

std::string render_answer_line(LetterSet answer, Language lang) {
  return (lang == Language::zh ? "答案：" : "Answer: ") + answer.str();
}

double random_baseline(const QuestionCategory& category) {
  const int n = category.option_count;
  if (category.multi_answer) return 1.0 / static_cast<double>((1 << n) - n - 1);
  return 1.0 / static_cast<double>(n);
}

double AccuracyReport::category_average() const {
  if (per_category.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& [_, acc] : per_category) sum += acc.accuracy;
  return sum / static_cast<double>(per_category.size());
}

namespace {

void tally(SubjectAccuracy& acc, bool correct) {
  ++acc.n;
  if (correct) ++acc.correct;
}

void finish(SubjectAccuracy& acc) {
  acc.accuracy = acc.n ? static_cast<double>(acc.correct) / static_cast<double>(acc.n) : 0.0;
}

}  // namespace

AccuracyReport aggregate_items(const std::vector<GradedItem>& items) {
  AccuracyReport r;
  for (const auto& item : items) {
    if (item.status == PredictionStatus::no_answer) ++r.no_answer;
    if (item.status == PredictionStatus::error) ++r.errors;
    if (!item.gold) {
      ++r.unscored;
      continue;
    }
    const bool correct = item.status == PredictionStatus::ok && item.predicted == *item.gold;
    tally(r.per_subject[item.subject], correct);
    tally(r.per_category[item.category.empty() ? "uncategorized" : item.category], correct);
    tally(r.total, correct);
  }
  for (auto& [_, acc] : r.per_subject) finish(acc);
  for (auto& [_, acc] : r.per_category) finish(acc);
  finish(r.total);
  return r;
}

AccuracyReport aggregate(const std::vector<ScoredPrediction>& predictions,
                         const std::vector<ExamQuestion>& gold,
                         const std::map<std::string, std::string>& categories) {
  if (predictions.empty() || predictions.size() != gold.size()) {
    throw Error(Errc::IdMismatch, std::to_string(predictions.size()) + " predictions for " +
                                      std::to_string(gold.size()) + " questions");
  }
  std::map<std::string, const ScoredPrediction*> by_id;
  for (const auto& p : predictions) {
    if (!by_id.emplace(p.question_id, &p).second) {
      throw Error(Errc::IdMismatch, "duplicate prediction for " + p.question_id);
    }
  }
  std::vector<GradedItem> items;
  items.reserve(gold.size());
  for (const auto& q : gold) {
    auto it = by_id.find(q.id);
    if (it == by_id.end()) throw Error(Errc::IdMismatch, "no prediction for " + q.id);
    const auto cat = categories.find(q.subject);
    items.push_back(GradedItem{q.subject, cat == categories.end() ? "" : cat->second, q.answer,
                               it->second->predicted, it->second->status});
  }
  return aggregate_items(items);
}

namespace {

nlohmann::json acc_json(const SubjectAccuracy& a) {
  return {{"n", a.n}, {"correct", a.correct}, {"accuracy", a.accuracy}};
}

SubjectAccuracy acc_from_json(const nlohmann::json& j) {
  return {j.at("n").get<std::size_t>(), j.at("correct").get<std::size_t>(),
          j.at("accuracy").get<double>()};
}

}  // namespace

nlohmann::json to_json(const AccuracyReport& r) {
  nlohmann::json j;
  j["total"] = acc_json(r.total);
  j["per_subject"] = nlohmann::json::object();
  for (const auto& [k, v] : r.per_subject) j["per_subject"][k] = acc_json(v);
  j["per_category"] = nlohmann::json::object();
  for (const auto& [k, v] : r.per_category) j["per_category"][k] = acc_json(v);
  j["category_average"] = r.category_average();
  j["no_answer"] = r.no_answer;
  j["errors"] = r.errors;
  j["unscored"] = r.unscored;
  return j;
}

AccuracyReport report_from_json(const nlohmann::json& j) {
  AccuracyReport r;
  r.total = acc_from_json(j.at("total"));
  for (const auto& [k, v] : j.at("per_subject").items()) r.per_subject[k] = acc_from_json(v);
  for (const auto& [k, v] : j.at("per_category").items()) r.per_category[k] = acc_from_json(v);
  r.no_answer = j.value("no_answer", std::size_t{0});
  r.errors = j.value("errors", std::size_t{0});
  r.unscored = j.value("unscored", std::size_t{0});
  return r;
}

std::string format_report_table(const std::vector<std::pair<std::string, AccuracyReport>>& rows) {
  static const char* kColumns[] = {"CPA-SA", "CPA-MA", "CFA-L1", "CFA-L2"};
  std::size_t name_width = 6;
  for (const auto& [name, _] : rows) name_width = std::max(name_width, name.size());

  auto cell = [](std::optional<double> v) {
    char buf[16];
    if (!v) return std::string("-");
    std::snprintf(buf, sizeof(buf), "%.2f", *v * 100.0);
    return std::string(buf);
  };
  auto line = [&](const std::string& name, const std::vector<std::string>& cells) {
    char buf[64];
    std::string out = name + std::string(name_width - name.size(), ' ');
    for (const auto& c : cells) {
      std::snprintf(buf, sizeof(buf), " %8s", c.c_str());
      out += buf;
    }
    return out + "\n";
  };

  std::string out = line("Model", {"CPA-SA", "CPA-MA", "CFA-L1", "CFA-L2", "Avg"});
  out += std::string(name_width + 9 * 5, '-') + "\n";
  std::vector<std::string> baseline;
  double base_sum = 0.0;
  for (const char* c : kColumns) {
    const double b = random_baseline(QuestionCategory::parse(c));
    base_sum += b;
    baseline.push_back(cell(b));
  }
  baseline.push_back(cell(base_sum / 4.0));
  out += line("Random", baseline);
  for (const auto& [name, report] : rows) {
    std::vector<std::string> cells;
    for (const char* c : kColumns) {
      auto it = report.per_category.find(c);
      cells.push_back(cell(it == report.per_category.end() ? std::nullopt
                                                           : std::optional(it->second.accuracy)));
    }
    cells.push_back(cell(report.per_category.empty() ? std::nullopt
                                                     : std::optional(report.category_average())));
    out += line(name, cells);
  }
  out +=
      "\nnote: the CPA-MA random baseline is uniform choice over the 2^4-4-1 = 11 multi-letter\n"
      "      combinations of four options (9.09%); a 10.00% figure does not follow from that count.\n";
  return out;
}

}  // namespace finrag
