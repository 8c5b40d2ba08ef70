#include <doctest.h>

#include <fstream>
#include <set>

#include "finrag/corpus.hpp"
#include "finrag/error.hpp"
#include "support.hpp"

using namespace finrag;

namespace {

double metric(const StatsReport& r, const std::string& name) {
  for (const auto& [k, v] : r) {
    if (k == name) return v;
  }
  FAIL("missing metric " << name);
  return 0;
}

std::vector<RawItem> raws(const std::vector<std::string>& texts) {
  std::vector<RawItem> out;
  for (std::size_t i = 0; i < texts.size(); ++i) out.push_back({"r" + std::to_string(i), texts[i], "t"});
  return out;
}

std::vector<RawItem> as_raw(const std::vector<CorpusItem>& items) {
  std::vector<RawItem> out;
  for (const auto& it : items) out.push_back({it.id, it.raw_text, it.source_tag});
  return out;
}

}  // namespace

TEST_SUITE("corpus") {
  TEST_CASE("question and answer split at the last delimiter") {
    CHECK(split_qa("税率是?A.13% B.9% 答案: A。解析…") == std::pair<std::string, std::string>{"税率是?A.13% B.9%", "A。解析…"});
    CHECK(split_qa("Q… Answer: B") == std::pair<std::string, std::string>{"Q…", "B"});
    CHECK(split_qa("答案：先说答案：C").second == "C");
    try {
      split_qa("no delimiter here");
      FAIL("expected NoDelimiter");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::NoDelimiter);
    }
    CHECK_THROWS_AS(split_qa("Answer: B"), Error);
    CHECK_THROWS_AS(split_qa("Question? Answer:  "), Error);
  }

  TEST_CASE("dedup keys keep the first 30 ideographs") {
    CHECK(dedup_key("增值税率?(A) 13%") == "增值税率");
    CHECK(dedup_key("增值税，率是多少？") == dedup_key("增值税率是多少?"));
    const std::string forty = [] {
      std::string s;
      for (int i = 0; i < 40; ++i) s += "税";
      return s;
    }();
    CHECK(text::length(dedup_key(forty)) == 30);
    CHECK(dedup_key("English only").empty());
  }

  TEST_CASE("options are found in several marker styles") {
    CHECK(parse_options("税率是?A.13% B.9%") == std::vector<std::string>{"13%", "9%"});
    CHECK(parse_options("Pick (A) one (B) two (C) three").size() == 3);
    CHECK(parse_options("选择 A、甲 B、乙 C、丙 D、丁").size() == 4);
    CHECK(parse_options("Only A. one").empty());
    CHECK(parse_options("Which A.Unemployment B.Permits").size() == 2);
    CHECK(parse_options("The A.B. rule and the C.D. rule").empty());
    CHECK(question_stem("税率是?A.13% B.9%") == "税率是?");
  }

  TEST_CASE("ten items with three duplicates keep seven") {
    const auto r = clean_corpus(raws({
        "什么是增值税? 答案：一种流转税", "什么是增值税！ 答案：流转税", "资产负债表的作用? 答案：反映财务状况",
        "利润表的作用? 答案：反映经营成果", "什么是 增值税? 答案：流转税。", "现金流量表的作用? 答案：反映现金流",
        "资产负债表的作用 ? 答案：财务状况", "市盈率的含义? 答案：价格与收益之比", "折旧的含义? 答案：成本分摊",
        "商誉的含义? 答案：合并溢价"}));
    CHECK(r.kept.size() == 7);
    CHECK(r.rejected.size() == 3);
    for (const auto& rej : r.rejected) CHECK(rej.reason == "duplicate");
    CHECK(r.rejected[0].item.id == "r1");
  }

  TEST_CASE("empty input gives empty output") {
    const auto r = clean_corpus({});
    CHECK(r.kept.empty());
    CHECK(r.rejected.empty());
  }

  TEST_CASE("trailing whitespace does not hide a duplicate") {
    const auto r = clean_corpus(raws({"什么是增值税? 答案：流转税", "什么是增值税? 答案：流转税   \n\t"}));
    CHECK(r.kept.size() == 1);
    CHECK(r.kept[0].id == "r0");
  }

  TEST_CASE("rejections carry reasons and the counts add up") {
    const auto input = raws({"no delimiter", "答案：只有答案", "问题？答案：", "好问题？答案：好", "好问题？答案：好"});
    const auto r = clean_corpus(input);
    std::multiset<std::string> reasons;
    for (const auto& rej : r.rejected) reasons.insert(rej.reason);
    CHECK(reasons == std::multiset<std::string>{"duplicate", "empty_answer", "empty_question", "no_delimiter"});
    CHECK(r.kept.size() + r.rejected.size() == input.size());
  }

  TEST_CASE("crafted fixture keeps 163 of 200 and rejects exactly the known duplicates") {
    const auto input = read_raw_jsonl(testing::data_dir() / "corpus/raw_200.jsonl");
    REQUIRE(input.size() == 200);
    const auto r = clean_corpus(input);
    CHECK(r.kept.size() == 163);
    std::set<std::string> expected;
    for (const auto& line : text::split(text::read_file(testing::data_dir() / "corpus/duplicates.txt"), '\n')) {
      if (!line.empty()) expected.insert(line);
    }
    std::set<std::string> rejected;
    for (const auto& rej : r.rejected) {
      CHECK(rej.reason == "duplicate");
      rejected.insert(rej.item.id);
    }
    CHECK(rejected == expected);
    CHECK(clean_corpus(input, {}, 4).kept == r.kept);
  }

  TEST_CASE("cleaning is idempotent") {
    const auto input = read_raw_jsonl(testing::data_dir() / "corpus/raw_200.jsonl");
    const auto once = clean_corpus(input);
    const auto twice = clean_corpus(as_raw(once.kept));
    CHECK(twice.kept == once.kept);
    CHECK(twice.rejected.empty());
  }

  TEST_CASE("strip patterns come from config") {
    const auto cfg = CleanConfig::from_json(nlohmann::json::parse(
        R"({"version": "t1", "strip_prefixes": ["\\d+[.、]\\s*", "【.*?】"], "strip_suffixes": ["（来源.*?）"]})"));
    const auto item = parse_item({"x", "【单选】12. 什么是增值税? 答案：流转税（来源：教材）", ""}, cfg);
    CHECK(item.raw_text == "什么是增值税? 答案：流转税");
    CHECK(parse_item({"x", item.raw_text, ""}, cfg) == item);
    CHECK_THROWS_AS(CleanConfig::from_json(nlohmann::json::parse(R"({"strip_prefixes": ["("]})")), Error);
  }

  TEST_CASE("average text length over five items") {
    std::vector<std::string> texts;
    for (int len : {10, 20, 30, 40, 50}) texts.push_back(std::string(static_cast<std::size_t>(len - 9), 'x') + "Answer: A");
    const auto r = clean_corpus(raws(texts));
    REQUIRE(r.kept.size() == 5);
    const auto s = corpus_stats(r.kept);
    CHECK(metric(s, "Average text length") == 30);
    CHECK(metric(s, "Minimum text length") == 10);
    CHECK(metric(s, "Maximum text length") == 50);
    CHECK(metric(s, "Average question length") == 21);
    CHECK(metric(s, "Average answer length") == 1);
  }

  TEST_CASE("four-option corpus tallies") {
    const auto r = clean_corpus(raws({"Q1 A. w B. x C. y D. z Answer: A", "Q2 A. w B. x C. y D. z Answer: B"}));
    const auto s = corpus_stats(r.kept);
    CHECK(metric(s, "With 4 options") == 2);
    CHECK(metric(s, "Others") == 0);
  }

  TEST_CASE("mixed fixture matches the hand tally") {
    const auto r = clean_corpus(raws({
        "Q1 A. x B. y Answer: A",
        "Q2 A. x B. y C. z Answer: B",
        "Q3 A. x B. y C. z D. w Answer: C",
        "Q4 A. x B. y C. z D. w Answer: D",
        "Q5 A. x B. y C. z D. w E. v Answer: E",
        "Q6 no options Answer: yes",
        "Q7 A. a B. b C. c D. d E. e F. f Answer: F",
        "第八题 A.甲 B.乙 答案：A",
        "第八题？A.甲 B.乙 答案：B",
    }));
    const auto s = corpus_stats(r.kept);
    CHECK(metric(s, "Total items") == 8);
    CHECK(metric(s, "Unique items") == 8);
    CHECK(metric(s, "With 2 options") == 2);
    CHECK(metric(s, "With 3 options") == 1);
    CHECK(metric(s, "With 4 options") == 2);
    CHECK(metric(s, "With 5 options") == 1);
    CHECK(metric(s, "Others") == 2);
    // Before deduplication the repeated stem shows up as fewer unique items.
    std::vector<CorpusItem> all;
    for (const auto& raw : raws({"第八题 A.甲 B.乙 答案：A", "第八题？A.甲 B.乙 答案：B"})) all.push_back(parse_item(raw, {}));
    const auto pre = corpus_stats(all);
    CHECK(metric(pre, "Total items") == 2);
    CHECK(metric(pre, "Unique items") == 1);
  }

  TEST_CASE("the stats report carries every metric name") {
    const auto s = corpus_stats(clean_corpus(read_raw_jsonl(testing::data_dir() / "corpus/raw_200.jsonl")).kept);
    const std::vector<std::string> names = {"Total items",          "Unique items",          "Average text length",
                                            "Minimum text length",  "Maximum text length",   "Average question length",
                                            "Average answer length", "With 2 options",       "With 3 options",
                                            "With 4 options",       "With 5 options",        "Others"};
    REQUIRE(s.size() == names.size());
    const auto table = format_stats(s);
    for (std::size_t i = 0; i < names.size(); ++i) {
      CHECK(s[i].first == names[i]);
      CHECK(table.find(names[i]) != std::string::npos);
    }
    CHECK(metric(s, "Unique items") <= metric(s, "Total items"));
    CHECK(metric(s, "Total items") == 163);
  }

  TEST_CASE("instruction categories") {
    auto one = [](const std::string& t) { return parse_item({"x", t, ""}, {}); };
    CHECK(classify(one("什么是增值税? 答案：增值税是对增值额征收的流转税。"), {}) == InstructionCategory::knowledge_inquiry);
    CHECK(classify(one("利润200万元，股本100万股，每股收益? 答案：2元。解析：200/100=2"), {}) ==
          InstructionCategory::calculation_reasoning);
    CHECK(classify(one("判断：企业所得税税率为25%。 答案：正确"), {}) == InstructionCategory::logical_judgment);
    CHECK(classify(one("下列属于流动资产的是? A.存货 B.商誉 答案：A"), {}) == InstructionCategory::reading_comprehension);
    CHECK_FALSE(classify(one("下列属于流动资产的是? A.存货 B.商誉 答案：见教材"), {}).has_value());
  }

  TEST_CASE("labeled fixture agrees with the heuristics") {
    std::ifstream in(testing::data_dir() / "corpus/labeled_20.jsonl");
    std::string line;
    int total = 0;
    int agree = 0;
    std::vector<CorpusItem> items;
    while (std::getline(in, line)) {
      const auto j = nlohmann::json::parse(line);
      const auto item = parse_item({j["id"], j["text"], "labeled"}, {});
      const auto got = classify(item, {});
      ++total;
      CAPTURE(j["text"].get<std::string>());
      CHECK(got.has_value());
      if (got && to_string(*got) == j["label"].get<std::string>()) ++agree;
      items.push_back(item);
    }
    CHECK(total == 20);
    CHECK(agree == 20);
    const auto exported = export_instructions(items);
    CHECK(exported.records.size() == 20);
    CHECK(exported.uncategorized.empty());
  }

  TEST_CASE("a classifier model places items the rules cannot") {
    auto model = testing::stub_client("scripted", {{"default", "logical_judgment"}});
    CategoryRules rules;
    rules.classifier = model.get();
    const auto item = parse_item({"u", "下列属于流动资产的是? A.存货 B.商誉 答案：见教材", ""}, {});
    const auto with = export_instructions({item}, rules);
    REQUIRE(with.records.size() == 1);
    CHECK(with.records[0].category == InstructionCategory::logical_judgment);
    const auto without = export_instructions({item});
    CHECK(without.records.empty());
    CHECK(without.uncategorized.size() == 1);
  }

  TEST_CASE("numeric ratio") {
    CHECK(numeric_ratio("") == 0.0);
    CHECK(numeric_ratio("12 ab") == doctest::Approx(0.5));
    CHECK(numeric_ratio("200/100=2") == 1.0);
  }

  TEST_CASE("jsonl round trip") {
    testing::TempDir dir;
    const auto kept = clean_corpus(read_raw_jsonl(testing::data_dir() / "corpus/raw_200.jsonl")).kept;
    write_corpus_jsonl(dir / "c.jsonl", kept);
    CHECK(read_corpus_jsonl(dir / "c.jsonl") == kept);
  }
}
