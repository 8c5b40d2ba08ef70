#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "finrag/exam.hpp"
#include "finrag/gateway.hpp"
#include "finrag/scorer.hpp"

namespace finrag {

struct SubjectSpec {
  std::string name;
  QuestionCategory category = QuestionCategory::of(CategoryName::CPA_SA);
  /// Display name used in the instruction; defaults to name with '_' as ' '.
  std::string label;
};

struct RbflSettings {
  bool enabled = false;
  std::filesystem::path pool;
  std::string embedder;
  bool ascending = true;
};

struct RunConfig {
  std::filesystem::path dataset_root;
  std::vector<SubjectSpec> subjects;
  std::string model;
  /// Model registry file; callers may also pass a registry directly.
  std::filesystem::path models_config;
  int k_shots = 5;
  EvalMode mode = EvalMode::answer_only;
  Language language = Language::zh;
  int workers = 1;
  std::uint64_t seed = 0;
  Split split = Split::val;
  std::filesystem::path output_dir;
  std::filesystem::path templates;
  RbflSettings rbfl;
  int max_tokens = 1024;

  /// Relative paths resolve against `base`. Throws Error(ConfigError).
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
  static RunConfig load(const std::filesystem::path& file);
  nlohmann::json to_json() const;
  void validate() const;
};

struct RunOutcome {
  AccuracyReport report;
  /// Questions evaluated by this invocation (excludes those found in the log).
  std::size_t evaluated = 0;
  /// "subject/id" of questions whose model call failed; they are not logged.
  std::vector<std::string> failed;
  bool partial() const { return !failed.empty(); }
};

/// Evaluates every selected question once and writes records.jsonl,
/// report.json, report.txt and config.json into cfg.output_dir. Errors on
/// individual questions are counted, never fatal; see RunOutcome::partial.
RunOutcome run_benchmark(const RunConfig& cfg, const ModelRegistry& registry);
RunOutcome run_benchmark(const RunConfig& cfg);

/// Continues a run from its output directory, evaluating only questions
/// without a record. A truncated final line is discarded; any other bad line
/// or a repeated id throws CorruptLog.
RunOutcome resume_run(const std::filesystem::path& output_dir, const ModelRegistry& registry);
RunOutcome resume_run(const std::filesystem::path& output_dir);

/// Rebuilds the report from records.jsonl without calling any model.
AccuracyReport replay_log(const std::filesystem::path& output_dir);

struct LogRecord {
  std::string question_id;
  std::string subject;
  std::string category;
  std::optional<LetterSet> gold;
  LetterSet predicted;
  PredictionStatus status = PredictionStatus::ok;
  nlohmann::json raw;
};

/// Parses records.jsonl. `truncated` reports whether a partial last line was dropped.
std::vector<LogRecord> read_log(const std::filesystem::path& file, bool* truncated = nullptr);

}  // namespace finrag
