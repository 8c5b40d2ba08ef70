#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "finrag/exam.hpp"
#include "finrag/scorer.hpp"

namespace finrag {

struct Demonstration {
  std::string problem;
  std::vector<std::string> options;
  LetterSet answer;
  std::optional<std::string> explanation;

  static Demonstration from_question(const ExamQuestion& q);
};

struct DemonstrationSet {
  std::string instruction;
  /// Rendered in the order given; k = 0 is zero-shot.
  std::vector<Demonstration> examples;
  Language language = Language::zh;
  EvalMode mode = EvalMode::answer_only;
};

/// Fixed step-by-step cue. Throws Error(UnsupportedLanguage) for anything but zh/en.
std::string render_cot_cue(std::string_view language);
std::string render_cot_cue(Language language);

/// One (language, mode) template file. Sections start with a line "@@ <name>";
/// placeholders are written {{name}}. See templates/README.md.
class PromptTemplate {
 public:
  static PromptTemplate parse(std::string_view content);
  static PromptTemplate load(const std::filesystem::path& file);

  const std::string& section(const std::string& name) const;
  bool has_section(const std::string& name) const { return sections_.contains(name); }

 private:
  std::map<std::string, std::string> sections_;
};

/// Substitutes {{name}} placeholders; unknown names raise Error(TemplateError).
std::string fill_placeholders(std::string_view tmpl, const std::map<std::string, std::string>& values);

/// Templates for every (language, mode), read from `<dir>/<lang>/<mode>.txt`.
class PromptBuilder {
 public:
  static PromptBuilder from_directory(const std::filesystem::path& dir);

  const PromptTemplate& get(Language lang, EvalMode mode) const;

  /// Instruction text for a subject, picking the multi-answer wording when needed.
  std::string instruction(Language lang, EvalMode mode, std::string_view subject,
                          bool multi_answer) const;

  DemonstrationSet make_set(Language lang, EvalMode mode, std::string_view subject, bool multi_answer,
                            std::vector<Demonstration> examples) const;

  /// Instruction, examples (with explanations in CoT mode), then the target
  /// ending at the answer cue. Never renders the target's answer or explanation.
  std::string build_prompt(const DemonstrationSet& dset, const ExamQuestion& target) const;

 private:
  std::map<std::pair<Language, EvalMode>, PromptTemplate> templates_;
};

/// "A. text" lines joined by '\n'.
std::string render_options(const std::vector<std::string>& options);

/// Default location of the bundled templates (FINRAG_TEMPLATES overrides).
std::filesystem::path default_template_dir();

}  // namespace finrag
