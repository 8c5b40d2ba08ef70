#pragma once

#include <string>

#include "finrag/exam.hpp"
#include "finrag/gateway.hpp"
#include "finrag/scorer.hpp"

namespace finrag {

/// Answers one rendered prompt. Answer-only mode scores the option letters and
/// picks via select_single/select_multi; CoT mode generates and parses. A CoT
/// output without a parseable answer yields status no_answer, never a throw.
ScoredPrediction predict(ModelClient& client, const std::string& prompt, const ExamQuestion& target,
                         bool multi_answer, EvalMode mode, int max_tokens = 1024);

}  // namespace finrag
