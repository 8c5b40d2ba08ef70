#include "finrag/answering.hpp"

#include "finrag/error.hpp"

namespace finrag {

ScoredPrediction predict(ModelClient& client, const std::string& prompt, const ExamQuestion& target,
                         bool multi_answer, EvalMode mode, int max_tokens) {
  ScoredPrediction p;
  p.question_id = target.id;
  p.mode = mode;
  const LetterSet alphabet = target.alphabet();
  if (mode == EvalMode::answer_only) {
    std::vector<std::string> candidates;
    for (char c : alphabet.letters()) candidates.emplace_back(1, c);
    const auto res = client.score_candidates(prompt, candidates, true);
    OptionScores scores;
    for (const auto& [k, v] : res.log_probs) scores[k.front()] = v;
    p.per_option_log_prob = scores;
    if (multi_answer) {
      p.predicted = select_multi(scores);
    } else {
      p.predicted = LetterSet::of(std::string(1, select_single(scores)));
    }
  } else {
    GenerateParams params;
    params.temperature = 0.0;
    params.max_tokens = max_tokens;
    p.raw_output = client.generate(prompt, params);
    try {
      p.predicted = parse_cot_answer(*p.raw_output, alphabet, multi_answer);
    } catch (const Error& e) {
      if (e.code() != Errc::NoAnswerFound) throw;
      p.status = PredictionStatus::no_answer;
    }
  }
  if (target.answer) p.correct = p.status == PredictionStatus::ok && p.predicted == *target.answer;
  return p;
}

}  // namespace finrag
