#include <doctest.h>

#include <random>

#include "finrag/doc_store.hpp"
#include "finrag/error.hpp"
#include "finrag/finfact.hpp"
#include "support.hpp"

using namespace finrag;

namespace {

/// Judge that prefers the response containing "GOOD", wherever it is shown.
class ContentJudge : public Backend {
 public:
  std::string generate(const std::string& prompt, const GenerateParams&, const RequestContext&) override {
    const bool one = section(prompt, "response_1").find("GOOD") != std::string::npos;
    const bool two = section(prompt, "response_2").find("GOOD") != std::string::npos;
    const std::string v = one == two ? "tie" : one ? "1" : "2";
    return nlohmann::json{{"factual", v}, {"relevant", v}, {"informational", v}}.dump();
  }

 private:
  static std::string section(const std::string& p, const std::string& tag) {
    const auto a = p.find("<" + tag + ">");
    const auto b = p.find("</" + tag + ">");
    return p.substr(a, b - a);
  }
};

std::shared_ptr<ModelClient> content_judge() {
  const auto h = testing::stub_handle("judge", "scripted");
  return std::make_shared<ModelClient>(h, std::make_shared<ContentJudge>());
}

JudgeVerdict verdict(const std::string& id, const std::string& a, const std::string& b, Outcome o) {
  JudgeVerdict v{id, a, b, {}, false};
  for (auto d : kDimensions) v.per_dimension[d] = o;
  return v;
}

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::InvalidArgument;
}

FactQA structural(const std::string& id, const std::string& article) {
  FactQA q;
  q.id = id;
  q.question = "问题";
  q.gold_answer = "答案";
  q.source_article_id = article;
  q.year = 2023;
  return q;
}

}  // namespace

TEST_SUITE("finfact") {
  TEST_CASE("structural generation keeps only answered items") {
    const auto articles = read_documents_jsonl(testing::data_dir() / "finfact/articles.jsonl");
    REQUIRE(articles.size() == 3);
    auto model = testing::stub_client(
        "scripted",
        {{"default", R"({"items": [{"question": "下调多少个百分点？", "answer": "0.5个百分点"},
                                   {"question": "释放多少资金？", "answer": ""},
                                   {"question": "", "answer": "x"},
                                   {"question": "谁做出决定？", "answer": "中国人民银行"}]})"}});
    const auto items = generate_factqa(articles[0], FactKind::structural, {FactCategory::financial, 2023, 8}, *model,
                                       FinfactPrompts::defaults());
    REQUIRE(items.size() == 2);
    CHECK(items[0].gold_answer == "0.5个百分点");
    CHECK(items[1].id == "a-fin-1-s2");
    CHECK(items[1].source_article_id == "a-fin-1");
    CHECK(items[1].year == 2023);
    const auto capped = generate_factqa(articles[0], FactKind::structural, {FactCategory::financial, 2023, 1}, *model,
                                        FinfactPrompts::defaults());
    CHECK(capped.size() == 1);
    const auto conv = generate_factqa(articles[0], FactKind::conversational, {FactCategory::financial, 2023, 8},
                                      *model, FinfactPrompts::defaults());
    CHECK(conv.size() == 3);
    CHECK_FALSE(conv[1].gold_answer.has_value());
    auto junk = testing::stub_client("scripted", {{"default", "I cannot do that."}});
    CHECK(code_of([&] {
            generate_factqa(articles[0], FactKind::structural, {}, *junk, FinfactPrompts::defaults());
          }) == Errc::UnparseableGeneration);
    auto empty = articles[0];
    empty.body = " ";
    CHECK(code_of([&] { generate_factqa(empty, FactKind::structural, {}, *model, FinfactPrompts::defaults()); }) ==
          Errc::InvalidDocument);
  }

  TEST_CASE("items round trip and structural items need answers") {
    testing::TempDir dir;
    std::vector<FactQA> items = {structural("q1", "a-fin-1")};
    items.push_back(items[0]);
    items[1].id = "q2";
    items[1].kind = FactKind::conversational;
    items[1].gold_answer.reset();
    write_factqa_jsonl(dir / "qa.jsonl", items);
    const auto back = read_factqa_jsonl(dir / "qa.jsonl");
    REQUIRE(back.size() == 2);
    CHECK(back[1].kind == FactKind::conversational);
    auto j = to_json(items[0]);
    j.erase("gold_answer");
    CHECK_THROWS_AS(factqa_from_json(j), Error);
  }

  TEST_CASE("the judge sees both orderings") {
    auto judge = content_judge();
    const auto prompts = FinfactPrompts::defaults();
    const auto qa = structural("q1", "a-fin-1");
    const auto win = judge_pairwise(qa, "答案", "rag", "GOOD answer", "base", "weak answer", *judge, prompts);
    for (auto d : kDimensions) CHECK(win.per_dimension.at(d) == Outcome::a_wins);
    const auto loss = judge_pairwise(qa, "答案", "rag", "weak", "base", "GOOD", *judge, prompts);
    for (auto d : kDimensions) CHECK(loss.per_dimension.at(d) == Outcome::b_wins);
    const auto same = judge_pairwise(qa, "答案", "rag", "same text", "base", "same text", *judge, prompts);
    for (auto d : kDimensions) CHECK(same.per_dimension.at(d) == Outcome::tie);
    auto first_always = testing::stub_client(
        "scripted", {{"default", R"({"factual": "1", "relevant": "1", "informational": "1"})"}});
    const auto biased = judge_pairwise(qa, "答案", "rag", "GOOD", "base", "weak", *first_always, prompts);
    for (auto d : kDimensions) CHECK(biased.per_dimension.at(d) == Outcome::tie);
    CHECK(code_of([&] { judge_pairwise(qa, "答案", "rag", "", "base", "x", *judge, prompts); }) ==
          Errc::InvalidArgument);
  }

  TEST_CASE("reconciling orderings") {
    CHECK(reconcile(Outcome::a_wins, Outcome::a_wins) == Outcome::a_wins);
    CHECK(reconcile(Outcome::b_wins, Outcome::b_wins) == Outcome::b_wins);
    CHECK(reconcile(Outcome::a_wins, Outcome::b_wins) == Outcome::tie);
    CHECK(reconcile(Outcome::tie, Outcome::a_wins) == Outcome::tie);
    const auto partial = parse_judgement(R"({"factual": "2", "relevant": "maybe"})");
    CHECK(partial.outcome.at(Dimension::factual) == Outcome::b_wins);
    CHECK(partial.outcome.at(Dimension::relevant) == Outcome::tie);
    CHECK(partial.unparseable);
  }

  TEST_CASE("win rates") {
    std::vector<JudgeVerdict> vs;
    for (int i = 0; i < 7; ++i) vs.push_back(verdict("w" + std::to_string(i), "rag", "base", Outcome::a_wins));
    for (int i = 0; i < 3; ++i) vs.push_back(verdict("l" + std::to_string(i), "rag", "base", Outcome::b_wins));
    const auto r = win_rate(vs, "rag", Dimension::factual);
    CHECK(std::abs(r.win - 0.7) < 1e-12);
    CHECK(std::abs(r.loss - 0.3) < 1e-12);
    CHECK(r.n == 10);
    const auto other = win_rate(vs, "base", Dimension::factual);
    CHECK(std::abs(other.win - 0.3) < 1e-12);
    std::vector<JudgeVerdict> ties = {verdict("t", "rag", "base", Outcome::tie)};
    CHECK(win_rate(ties, "rag", Dimension::relevant).tie == 1.0);
    CHECK(code_of([&] { win_rate(vs, "nobody", Dimension::factual); }) == Errc::NoVerdicts);
    CHECK(code_of([&] { win_rate(vs, "rag", Dimension::factual, std::string("nobody")); }) == Errc::NoVerdicts);
  }

  TEST_CASE("win rates are antisymmetric") {
    std::mt19937_64 rng(5);
    const std::vector<std::string> systems = {"rag", "base", "chat"};
    const Outcome outcomes[] = {Outcome::a_wins, Outcome::b_wins, Outcome::tie};
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<JudgeVerdict> vs;
      const int n = std::uniform_int_distribution<int>(1, 40)(rng);
      for (int i = 0; i < n; ++i) {
        const auto a = std::uniform_int_distribution<std::size_t>(0, 2)(rng);
        const auto b = (a + std::uniform_int_distribution<std::size_t>(1, 2)(rng)) % 3;
        JudgeVerdict v{"q" + std::to_string(i), systems[a], systems[b], {}, false};
        for (auto d : kDimensions) v.per_dimension[d] = outcomes[std::uniform_int_distribution<int>(0, 2)(rng)];
        vs.push_back(v);
      }
      for (const auto& x : systems) {
        for (const auto& y : systems) {
          if (x == y) continue;
          for (auto d : kDimensions) {
            WinRate xy, yx;
            try {
              xy = win_rate(vs, x, d, y);
              yx = win_rate(vs, y, d, x);
            } catch (const Error&) {
              continue;
            }
            CHECK(std::abs(xy.win - yx.loss) < 1e-12);
            CHECK(std::abs(xy.tie - yx.tie) < 1e-12);
            CHECK(std::abs(xy.win + xy.tie + xy.loss - 1.0) < 1e-12);
          }
        }
      }
    }
  }

  TEST_CASE("report and csv") {
    std::vector<JudgeVerdict> vs = {verdict("a", "rag", "base", Outcome::a_wins),
                                    verdict("b", "rag", "base", Outcome::tie)};
    vs[1].unparseable = true;
    const auto report = win_rate_report(vs);
    CHECK(report.at("verdicts") == 2);
    CHECK(report.at("unparseable") == 1);
    CHECK(report.at("systems").at("rag").at("pooled").at("factual").at("win") == 0.5);
    const auto csv = win_rate_csv(vs);
    CHECK(csv.rfind("system,opponent,dimension,win,tie,loss,n\n", 0) == 0);
    CHECK(csv.find("rag,base,factual,0.500000,0.500000,0.000000,2") != std::string::npos);
    testing::TempDir dir;
    write_verdicts_jsonl(dir / "v.jsonl", vs);
    const auto back = read_verdicts_jsonl(dir / "v.jsonl");
    REQUIRE(back.size() == 2);
    CHECK(back[1].unparseable);
    CHECK(back[0].per_dimension == vs[0].per_dimension);
  }

  TEST_CASE("the published counts are internally consistent") {
    const auto m = published_manifest_counts();
    CHECK(m.articles_by_category.at("financial") == 120);
    CHECK(m.articles_by_category.at("sports") == 30);
    CHECK(m.articles_by_year.at(2022) == 70);
    CHECK(m.questions_by_kind.at("structural") == 877);
    CHECK(m.questions_by_kind.at("conversational") == 637);
    CHECK(m.total_questions == 1514);
    CHECK_NOTHROW(validate_manifest_totals(m));
    CHECK(FinfactManifest::from_json(m.to_json()).to_json() == m.to_json());
    auto broken = m;
    broken.total_questions = 1500;
    CHECK(code_of([&] { validate_manifest_totals(broken); }) == Errc::ManifestMismatch);
  }

  TEST_CASE("a dataset is checked against its manifest") {
    const auto articles = read_documents_jsonl(testing::data_dir() / "finfact/articles.jsonl");
    std::vector<FactQA> items = {structural("q1", "a-fin-1"), structural("q2", "a-fin-2"), structural("q3", "a-tech-1")};
    items[2].category = FactCategory::technical;
    items[2].kind = FactKind::conversational;
    items[2].gold_answer.reset();
    FinfactManifest m;
    m.articles_by_category = {{"financial", 2}, {"technical", 1}};
    m.articles_by_year = {{2023, 3}};
    m.questions_by_kind = {{"structural", 2}, {"conversational", 1}};
    m.total_questions = 3;
    CHECK_NOTHROW(validate_manifest(m, items, articles));
    auto dangling = items;
    dangling[0].source_article_id = "missing";
    CHECK(code_of([&] { validate_manifest(m, dangling, articles); }) == Errc::ManifestMismatch);
    auto wrong = m;
    wrong.articles_by_category = {{"financial", 3}};
    CHECK(code_of([&] { validate_manifest(wrong, items, articles); }) == Errc::ManifestMismatch);
  }
}
