#include "finrag/prompt.hpp"

#include <cstdlib>

#include "finrag/error.hpp"
#include "finrag/text.hpp"

#ifndef FINRAG_TEMPLATE_DIR
#define FINRAG_TEMPLATE_DIR "templates"
#endif

namespace finrag {

Demonstration Demonstration::from_question(const ExamQuestion& q) {
  if (!q.answer) throw Error(Errc::InvalidArgument, "demonstration " + q.id + " has no answer");
  return {q.stem, q.options, *q.answer, q.explanation};
}

std::string render_cot_cue(Language language) {
  return language == Language::zh ? "让我们一步一步思考。" : "Let's think step by step.";
}

std::string render_cot_cue(std::string_view language) { return render_cot_cue(parse_language(language)); }

PromptTemplate PromptTemplate::parse(std::string_view content) {
  PromptTemplate t;
  std::string current;
  std::string body;
  bool in_section = false;
  auto flush = [&] {
    if (!in_section) return;
    while (!body.empty() && (body.back() == '\n' || body.back() == '\r')) body.pop_back();
    if (!t.sections_.emplace(current, body).second) {
      throw Error(Errc::TemplateError, "duplicate section '" + current + "'");
    }
    body.clear();
  };
  for (const auto& line : text::split(content, '\n')) {
    if (text::starts_with(line, "@@#")) continue;
    if (text::starts_with(line, "@@")) {
      flush();
      current = text::trim(std::string_view(line).substr(2));
      if (current.empty()) throw Error(Errc::TemplateError, "unnamed section");
      in_section = true;
      continue;
    }
    if (!in_section) {
      if (!text::trim(line).empty()) throw Error(Errc::TemplateError, "text before first section");
      continue;
    }
    body += line;
    body += '\n';
  }
  flush();
  return t;
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& file) {
  if (!std::filesystem::exists(file)) throw Error(Errc::TemplateError, "missing template " + file.string());
  return parse(text::read_file(file));
}

const std::string& PromptTemplate::section(const std::string& name) const {
  auto it = sections_.find(name);
  if (it == sections_.end()) throw Error(Errc::TemplateError, "template lacks section '" + name + "'");
  return it->second;
}

std::string fill_placeholders(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find("{{", pos);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    const auto close = tmpl.find("}}", open + 2);
    if (close == std::string_view::npos) throw Error(Errc::TemplateError, "unterminated placeholder");
    out.append(tmpl.substr(pos, open - pos));
    const std::string name(tmpl.substr(open + 2, close - open - 2));
    auto it = values.find(name);
    if (it == values.end()) throw Error(Errc::TemplateError, "unknown placeholder '" + name + "'");
    out += it->second;
    pos = close + 2;
  }
  return out;
}

std::string render_options(const std::vector<std::string>& options) {
  std::string out;
  for (std::size_t i = 0; i < options.size(); ++i) {
    if (i) out += '\n';
    out += static_cast<char>('A' + i);
    out += ". ";
    out += options[i];
  }
  return out;
}

PromptBuilder PromptBuilder::from_directory(const std::filesystem::path& dir) {
  PromptBuilder b;
  for (Language lang : {Language::zh, Language::en}) {
    for (EvalMode mode : {EvalMode::answer_only, EvalMode::chain_of_thought}) {
      const auto file = dir / std::string(to_string(lang)) / (std::string(to_string(mode)) + ".txt");
      b.templates_.emplace(std::pair{lang, mode}, PromptTemplate::load(file));
    }
  }
  return b;
}

const PromptTemplate& PromptBuilder::get(Language lang, EvalMode mode) const {
  auto it = templates_.find({lang, mode});
  if (it == templates_.end()) throw Error(Errc::TemplateError, "no template loaded");
  return it->second;
}

std::string PromptBuilder::instruction(Language lang, EvalMode mode, std::string_view subject,
                                       bool multi_answer) const {
  const auto& t = get(lang, mode);
  const std::string& body =
      multi_answer && t.has_section("instruction_multi") ? t.section("instruction_multi")
                                                         : t.section("instruction");
  return fill_placeholders(body, {{"subject", std::string(subject)}});
}

DemonstrationSet PromptBuilder::make_set(Language lang, EvalMode mode, std::string_view subject,
                                         bool multi_answer, std::vector<Demonstration> examples) const {
  return {instruction(lang, mode, subject, multi_answer), std::move(examples), lang, mode};
}

std::string PromptBuilder::build_prompt(const DemonstrationSet& dset, const ExamQuestion& target) const {
  const auto& t = get(dset.language, dset.mode);
  const bool cot = dset.mode == EvalMode::chain_of_thought;
  const std::string cue = render_cot_cue(dset.language);
  std::vector<std::string> blocks;
  if (!dset.instruction.empty()) blocks.push_back(dset.instruction);
  for (std::size_t i = 0; i < dset.examples.size(); ++i) {
    const auto& ex = dset.examples[i];
    if (ex.options.size() != target.options.size()) {
      throw Error(Errc::AlphabetMismatch, "example " + std::to_string(i + 1) + " has " +
                                              std::to_string(ex.options.size()) + " options, target has " +
                                              std::to_string(target.options.size()));
    }
    if (!ex.answer.subset_of(LetterSet::first_n(static_cast<int>(ex.options.size())))) {
      throw Error(Errc::AlphabetMismatch, "example answer outside its options");
    }
    if (cot && (!ex.explanation || text::trim(*ex.explanation).empty())) {
      throw Error(Errc::MissingExplanationForCoT, "example " + std::to_string(i + 1));
    }
    std::map<std::string, std::string> values{{"question", text::trim(ex.problem)},
                                              {"options", render_options(ex.options)},
                                              {"answer", ex.answer.str()},
                                              {"cot_cue", cue}};
    values["explanation"] = ex.explanation ? text::trim(*ex.explanation) : std::string();
    blocks.push_back(fill_placeholders(t.section("example"), values));
  }
  blocks.push_back(fill_placeholders(t.section("target"), {{"question", text::trim(target.stem)},
                                                           {"options", render_options(target.options)},
                                                           {"cot_cue", cue}}));
  std::string prompt = text::join(blocks, "\n\n");
  while (!prompt.empty() && (prompt.back() == ' ' || prompt.back() == '\n' || prompt.back() == '\t' ||
                             prompt.back() == '\r')) {
    prompt.pop_back();
  }
  return prompt;
}

std::filesystem::path default_template_dir() {
  if (const char* env = std::getenv("FINRAG_TEMPLATES"); env && *env) return env;
  return FINRAG_TEMPLATE_DIR;
}

}  // namespace finrag
