#include <doctest.h>

#include <cstdlib>

#include "finrag/error.hpp"
#include "finrag/prompt.hpp"
#include "golden.hpp"
#include "support.hpp"

using namespace finrag;

namespace {

PromptBuilder builder() { return PromptBuilder::from_directory(default_template_dir()); }

int count(const std::string& hay, const std::string& needle) {
  int n = 0;
  for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + needle.size())) ++n;
  return n;
}

}  // namespace

TEST_SUITE("prompt") {
  TEST_CASE("golden prompts are byte-identical") {
    const bool update = std::getenv("FINRAG_UPDATE_GOLDEN") != nullptr;
    for (auto lang : {Language::zh, Language::en}) {
      for (auto mode : {EvalMode::answer_only, EvalMode::chain_of_thought}) {
        for (int k : {0, 5}) {
          const auto name = testing::golden_name(lang, mode, k);
          const auto prompt = testing::golden_prompt(lang, mode, k);
          if (update) text::write_file(testing::golden_dir() / name, prompt);
          CAPTURE(name);
          CHECK(prompt == text::read_file(testing::golden_dir() / name));
        }
      }
    }
  }

  TEST_CASE("zero-shot answer-only ends at the cue") {
    const auto p = testing::golden_prompt(Language::en, EvalMode::answer_only, 0);
    CHECK(text::ends_with(p, "Answer:"));
    CHECK(count(p, "Answer:") == 1);
    CHECK(p.rfind("The following are single-choice questions about accounting.", 0) == 0);
  }

  TEST_CASE("five shots give five answer lines before the cue") {
    const auto p = testing::golden_prompt(Language::en, EvalMode::answer_only, 5);
    CHECK(count(p, "Answer: ") == 5);
    CHECK(count(p, "Answer:") == 6);
    CHECK(testing::golden_prompt(Language::en, EvalMode::answer_only, 5) == p);
  }

  TEST_CASE("prompt length grows with k") {
    const auto b = builder();
    const auto dev = testing::synthetic_questions("s", 5, 4, false, 3, Split::dev);
    const auto target = testing::synthetic_questions("s", 1, 4, false, 4)[0];
    for (auto mode : {EvalMode::answer_only, EvalMode::chain_of_thought}) {
      std::size_t last = 0;
      for (int k = 0; k <= 5; ++k) {
        std::vector<Demonstration> shots;
        for (int i = 0; i < k; ++i) shots.push_back(Demonstration::from_question(dev[static_cast<std::size_t>(i)]));
        const auto p = b.build_prompt(b.make_set(Language::en, mode, "s", false, shots), target);
        CHECK(p.size() >= last);
        last = p.size();
      }
    }
  }

  TEST_CASE("the target's answer and explanation never appear") {
    const auto b = builder();
    auto target = testing::synthetic_questions("s", 1, 4, false, 4)[0];
    target.explanation = "SECRET-EXPLANATION";
    target.answer = LetterSet::of("D");
    for (auto lang : {Language::zh, Language::en}) {
      for (auto mode : {EvalMode::answer_only, EvalMode::chain_of_thought}) {
        const auto p = b.build_prompt(b.make_set(lang, mode, "s", false, {}), target);
        CHECK(p.find("SECRET-EXPLANATION") == std::string::npos);
        CHECK_FALSE(text::ends_with(p, "D"));
      }
    }
  }

  TEST_CASE("language swap keeps option letters and order") {
    const auto en = testing::golden_prompt(Language::en, EvalMode::answer_only, 0);
    const auto b = builder();
    const auto target = parse_dataset(text::read_file(testing::golden_dir() / "en_target.csv"), "g", Split::val)[0];
    const auto zh = b.build_prompt(b.make_set(Language::zh, EvalMode::answer_only, "会计", false, {}), target);
    const auto opts = render_options(target.options);
    CHECK(en.find(opts) != std::string::npos);
    CHECK(zh.find(opts) != std::string::npos);
  }

  TEST_CASE("option lines") {
    CHECK(render_options({"x", "y", "z"}) == "A. x\nB. y\nC. z");
  }

  TEST_CASE("step-by-step cues") {
    CHECK(render_cot_cue("en") == render_cot_cue(Language::en));
    CHECK(render_cot_cue("zh") == render_cot_cue(Language::zh));
    CHECK(render_cot_cue("en") != render_cot_cue("zh"));
    try {
      render_cot_cue("fr");
      FAIL("expected UnsupportedLanguage");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::UnsupportedLanguage);
    }
  }

  TEST_CASE("chain-of-thought examples need explanations") {
    const auto b = builder();
    auto dev = testing::synthetic_questions("s", 1, 4, false, 3, Split::dev);
    dev[0].explanation.reset();
    const auto target = testing::synthetic_questions("s", 1, 4, false, 4)[0];
    const auto set = b.make_set(Language::en, EvalMode::chain_of_thought, "s", false,
                                {Demonstration::from_question(dev[0])});
    try {
      b.build_prompt(set, target);
      FAIL("expected MissingExplanationForCoT");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::MissingExplanationForCoT);
    }
  }

  TEST_CASE("examples must share the target's alphabet") {
    const auto b = builder();
    const auto dev = testing::synthetic_questions("s", 1, 3, false, 3, Split::dev);
    const auto target = testing::synthetic_questions("s", 1, 4, false, 4)[0];
    const auto set =
        b.make_set(Language::en, EvalMode::answer_only, "s", false, {Demonstration::from_question(dev[0])});
    try {
      b.build_prompt(set, target);
      FAIL("expected AlphabetMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::AlphabetMismatch);
    }
  }

  TEST_CASE("multi-answer subjects use the multi instruction") {
    const auto b = builder();
    CHECK(b.instruction(Language::en, EvalMode::answer_only, "audit", true).find("two or more") != std::string::npos);
    CHECK(b.instruction(Language::en, EvalMode::answer_only, "audit", false).find("single-choice") !=
          std::string::npos);
  }

  TEST_CASE("template parsing and placeholders") {
    const auto t = PromptTemplate::parse("@@# comment\n@@ a\nhello {{name}}\n\n@@ b\nbye\n");
    CHECK(t.section("a") == "hello {{name}}");
    CHECK(t.section("b") == "bye");
    CHECK_FALSE(t.has_section("c"));
    CHECK(fill_placeholders(t.section("a"), {{"name", "x"}}) == "hello x");
    try {
      fill_placeholders("{{unknown}}", {});
      FAIL("expected TemplateError");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::TemplateError);
    }
  }
}
