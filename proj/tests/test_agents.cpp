#include <doctest.h>

#include <set>

#include "finrag/agents.hpp"
#include "finrag/error.hpp"
#include "qa_fixture.hpp"

using namespace finrag;

namespace {

class FailingBackend : public Backend {
 public:
  std::string generate(const std::string&, const GenerateParams&, const RequestContext&) override {
    throw UpstreamError(500, "unavailable");
  }
};

std::shared_ptr<ModelClient> failing_client() {
  register_stub("always-fail", [](const ModelHandle&) { return std::make_shared<FailingBackend>(); });
  return testing::stub_client("always-fail");
}

/// Scripted replies that count generate calls.
class Counting : public Backend {
 public:
  explicit Counting(std::shared_ptr<Backend> inner) : inner_(std::move(inner)) {}
  std::string generate(const std::string& p, const GenerateParams& g, const RequestContext& c) override {
    ++calls;
    return inner_->generate(p, g, c);
  }
  int calls = 0;

 private:
  std::shared_ptr<Backend> inner_;
};

struct Counted {
  std::shared_ptr<Counting> backend;
  std::shared_ptr<ModelClient> client;
};

Counted counted(nlohmann::json params) {
  const auto h = testing::stub_handle("scripted", "scripted", std::move(params));
  auto b = std::make_shared<Counting>(make_backend(h));
  return {b, std::make_shared<ModelClient>(h, b)};
}

DialogueTurn user(const std::string& t) { return {Role::user, t, {}, 0, std::nullopt, false}; }
DialogueTurn assistant(const std::string& t) { return {Role::assistant, t, {}, 0, std::nullopt, false}; }

ScoredParagraph para(const std::string& doc, int ordinal, const std::string& text, double score) {
  return {{doc, ordinal, text}, score};
}

KnowledgeBundle bundle_of(std::initializer_list<std::string> texts) {
  KnowledgeBundle b;
  int i = 0;
  for (const auto& t : texts) {
    ++i;
    b.entries.push_back({i, "d:" + std::to_string(i - 1), t, 1.0, false});
  }
  return b;
}

}  // namespace

TEST_SUITE("agents") {
  TEST_CASE("rewriting resolves a pronoun from the history") {
    auto agent = testing::stub_client("rule-agent");
    const auto prompts = AgentPrompts::defaults();
    const std::vector<DialogueTurn> history = {user("文心一言用户数有多少？"), assistant("文心一言用户数突破两亿[1]")};
    const auto r = rewrite_query(history, "它和通义千问比怎么样？", *agent, prompts);
    CHECK_FALSE(r.fallback);
    CHECK(r.rewritten_query.find("文心一言") != std::string::npos);
    CHECK(r.rewritten_query.find("通义千问") != std::string::npos);
    const auto plain = rewrite_query({}, "小米SU7的配置", *agent, prompts);
    CHECK(std::find(plain.keywords.begin(), plain.keywords.end(), "su7") != plain.keywords.end());
    for (const auto& k : plain.keywords) CHECK(text::length(k) <= kMaxKeywordChars);
    CHECK_THROWS_AS(rewrite_query({}, "   ", *agent, prompts), Error);
  }

  TEST_CASE("unparseable rewrites fall back to the trimmed query") {
    const auto prompts = AgentPrompts::defaults();
    auto prose = counted({{"default", "Sure! The query is about taxes."}});
    const auto r = rewrite_query({}, "  增值税税率是多少？ ", *prose.client, prompts);
    CHECK(r.fallback);
    CHECK(r.rewritten_query == "增值税税率是多少？");
    CHECK_FALSE(r.keywords.empty());
    CHECK(prose.backend->calls == 2);
    const auto failed = rewrite_query({}, "增值税", *failing_client(), prompts);
    CHECK(failed.fallback);
    auto fenced = testing::stub_client(
        "scripted", {{"default", "```json\n{\"rewritten_query\": \"增值税税率\", \"keywords\": [\"增值税\"]}\n```"}});
    const auto ok = rewrite_query({}, "税率?", *fenced, prompts);
    CHECK_FALSE(ok.fallback);
    CHECK(ok.rewritten_query == "增值税税率");
  }

  TEST_CASE("intentions") {
    auto agent = testing::stub_client("rule-agent");
    const auto prompts = AgentPrompts::defaults();
    const auto hold = detect_intention("贵州茅台值得长期持有吗？", *agent, prompts);
    CHECK(hold.needs_market_data);
    CHECK(hold.needs_reports);
    CHECK(hold.sources.contains(SourceType::market));
    CHECK(hold.sources.contains(SourceType::report));
    const auto vat = detect_intention("增值税是什么？", *agent, prompts);
    CHECK(vat.sources.contains(SourceType::news));
    CHECK_FALSE(vat.sources.contains(SourceType::market));
    CHECK_FALSE(vat.needs_market_data);
    CHECK(rule_intention("5月CPI同比涨幅").sources.contains(SourceType::macro));
    const auto fb = detect_intention("贵州茅台值得长期持有吗？", *failing_client(), prompts);
    CHECK(fb.fallback);
    CHECK(fb.sources == std::set<SourceType>{SourceType::news});
    CHECK(fb.confidence == 0.0);
  }

  TEST_CASE("knowledge fits the budget") {
    const std::vector<ScoredParagraph> hits = {para("a", 0, "一二三四五六七八九十", 0.9),
                                               para("a", 0, "一二三四五六七八九十", 0.9),
                                               para("b", 0, "一二三。四五六七。", 0.8), para("c", 0, "很长的段落。", 0.1)};
    const auto b = extract_refine(hits, "问题", 15);
    REQUIRE(b.entries.size() == 2);
    CHECK(b.entries[0].text == "一二三四五六七八九十");
    CHECK(b.entries[1].text == "一二三。");
    CHECK(b.entries[1].index == 2);
    CHECK(b.total_chars() == 14);
    CHECK(extract_refine(hits, "问题", 0).entries.empty());
    CHECK(extract_refine({}, "问题", 100).entries.empty());
    CHECK_THROWS_AS(extract_refine({hits[3], hits[0]}, "问题", 100), Error);
    for (int budget : {1, 5, 9, 10, 11, 13, 20, 40}) CHECK(extract_refine(hits, "问题", budget).total_chars() <= static_cast<std::size_t>(budget));
  }

  TEST_CASE("condensed passages are flagged") {
    const auto prompts = AgentPrompts::defaults();
    auto condenser = testing::stub_client("scripted", {{"default", "浓缩"}});
    const auto b = extract_refine({para("a", 0, "第一句很长很长。第二句。", 1.0)}, "问题", 4, condenser.get(), &prompts);
    REQUIRE(b.entries.size() == 1);
    CHECK(b.entries[0].text == "浓缩");
    CHECK(b.entries[0].condensed);
    auto agent = testing::stub_client("rule-agent");
    const auto v = extract_refine({para("a", 0, "第一句。第二句很长很长。", 1.0)}, "问题", 6, agent.get(), &prompts);
    REQUIRE(v.entries.size() == 1);
    CHECK(v.entries[0].text == "第一句。");
    CHECK_FALSE(v.entries[0].condensed);
  }

  TEST_CASE("citations map to bundle entries") {
    const auto prompts = AgentPrompts::defaults();
    const auto bundle = bundle_of({"甲", "乙", "丙"});
    auto model = testing::stub_client("scripted", {{"default", "营收增长[1]，估值合理[3]。"}});
    const auto r = generate_response(bundle, "问题", {}, *model, prompts);
    REQUIRE(r.citations.size() == 2);
    CHECK(r.citations[0].index == 1);
    CHECK(r.citations[1].paragraph_ref == "d:2");
    auto bad = counted({{"default", "见[7]"}});
    try {
      generate_response(bundle, "问题", {}, *bad.client, prompts);
      FAIL("expected UncitedIndex");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::UncitedIndex);
    }
    CHECK(bad.backend->calls == 2);
    auto fixes = testing::stub_client(
        "scripted", {{"table", nlohmann::json::array({{"Valid entries", "改正[2]"}})}, {"default", "见[7]"}});
    const auto fixed = generate_response(bundle, "问题", {}, *fixes, prompts);
    CHECK(fixed.attempts == 2);
    CHECK(fixed.citations.at(0).paragraph_ref == "d:1");
    CHECK_THROWS_AS(generate_response(bundle, "问题", {}, *failing_client(), prompts), Error);
  }

  TEST_CASE("an empty bundle yields the insufficient-knowledge answer") {
    auto model = counted({{"default", "x"}});
    const auto r = generate_response({}, "增值税？", {}, *model.client, AgentPrompts::defaults());
    CHECK(r.answer == insufficient_knowledge_answer("增值税？"));
    CHECK(r.citations.empty());
    CHECK(model.backend->calls == 0);
    CHECK(insufficient_knowledge_answer("VAT?") != insufficient_knowledge_answer("增值税？"));
    CHECK(parse_citation_markers("a[2] b[1][2] c[x]") == std::vector<int>{2, 1});
  }

  TEST_CASE("pipeline answers cite only retrieved text") {
    auto kb = testing::qa_knowledge_base();
    QaPipeline pipeline(*kb, testing::rule_agents(), AgentPrompts::defaults());
    for (const auto& q : testing::qa_queries()) {
      CAPTURE(q.query);
      const auto r = pipeline.answer({}, q.query, testing::kQaNowMs);
      CHECK_FALSE(r.turn.failed);
      const auto& entries = r.trace.at("bundle").at("entries");
      if (q.expect_empty) {
        CHECK(entries.empty());
        CHECK(r.turn.citations.empty());
        CHECK(r.turn.text == insufficient_knowledge_answer(q.query));
        continue;
      }
      CHECK_FALSE(r.turn.citations.empty());
      for (const auto& c : r.turn.citations) {
        REQUIRE(c.index >= 1);
        REQUIRE(c.index <= static_cast<int>(entries.size()));
        const auto& entry = entries[static_cast<std::size_t>(c.index - 1)];
        CHECK(entry.at("paragraph_ref") == c.paragraph_ref);
        const auto p = kb->store().paragraph(c.paragraph_ref);
        REQUIRE(p.has_value());
        if (!entry.at("condensed").get<bool>()) {
          CHECK(p->text.find(entry.at("text").get<std::string>()) != std::string::npos);
        }
      }
    }
  }

  TEST_CASE("pipeline degrades when agents fail") {
    auto kb = testing::qa_knowledge_base();
    auto agents = testing::rule_agents();
    agents.rewriter = failing_client();
    agents.intention = failing_client();
    QaPipeline degraded(*kb, agents, AgentPrompts::defaults());
    const auto r = degraded.answer({}, "飞天茅台批发价最近怎么样？", testing::kQaNowMs);
    CHECK_FALSE(r.turn.failed);
    CHECK(r.trace.at("rewrite").at("fallback").get<bool>());
    CHECK(r.trace.at("intention").at("fallback").get<bool>());
    CHECK_FALSE(r.turn.citations.empty());
    agents = testing::rule_agents();
    agents.responder = failing_client();
    QaPipeline mute(*kb, agents, AgentPrompts::defaults());
    const auto f = mute.answer({}, "飞天茅台批发价最近怎么样？", testing::kQaNowMs);
    CHECK(f.turn.failed);
    CHECK(f.turn.citations.empty());
    CHECK_FALSE(f.trace.at("errors").empty());
  }

  TEST_CASE("sessions thread history into the rewrite") {
    auto kb = testing::qa_knowledge_base();
    QaPipeline pipeline(*kb, testing::rule_agents(), AgentPrompts::defaults());
    Session s;
    s.id = "s";
    pipeline.answer_in_session(s, "贵州茅台一季度营业收入是多少？", testing::kQaNowMs);
    const auto second = pipeline.answer_in_session(s, "它的估值水平如何？", testing::kQaNowMs);
    CHECK(second.trace.at("rewrite").at("rewritten_query").get<std::string>().find("茅台") != std::string::npos);
    REQUIRE(s.turns.size() == 4);
    for (std::size_t i = 1; i < s.turns.size(); ++i) CHECK(s.turns[i].timestamp > s.turns[i - 1].timestamp);
    CHECK(s.turns[0].role == Role::user);
    CHECK(s.turns[3].role == Role::assistant);
  }

  TEST_CASE("the pipeline is deterministic") {
    auto kb = testing::qa_knowledge_base();
    QaPipeline pipeline(*kb, testing::rule_agents(), AgentPrompts::defaults());
    for (const std::string q : {"比亚迪海外销量如何？", "Nvidia market value", "贵州茅台值得长期持有吗？"}) {
      const auto a = pipeline.answer({}, q, testing::kQaNowMs);
      const auto b = pipeline.answer({}, q, testing::kQaNowMs);
      CHECK(a.turn.text == b.turn.text);
      CHECK(a.trace.dump() == b.trace.dump());
    }
  }

  TEST_CASE("history rendering keeps the most recent turns") {
    std::vector<DialogueTurn> h;
    for (int i = 0; i < 10; ++i) h.push_back(i % 2 ? assistant("a" + std::to_string(i)) : user("u" + std::to_string(i)));
    const auto r = render_history(h, 3);
    CHECK(r == "Assistant: a7\nUser: u8\nAssistant: a9");
    CHECK(extract_json_object("noise {\"a\": 1} tail")->at("a") == 1);
    CHECK_FALSE(extract_json_object("no json").has_value());
  }
}
