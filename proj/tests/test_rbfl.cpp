#include <doctest.h>

#include <set>

#include "finrag/corpus.hpp"
#include "finrag/error.hpp"
#include "finrag/rbfl.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace finrag;

namespace {

std::shared_ptr<ModelClient> embedder(int dim = 32) {
  return testing::stub_client("hash-embed", {{"dim", dim}}, ModelKind::embedding);
}

const CorpusPool& fixture_pool() {
  static const CorpusPool pool = [] {
    auto items = clean_corpus(read_raw_jsonl(testing::data_dir() / "corpus/raw_200.jsonl")).kept;
    return CorpusPool::build(std::move(items), *embedder());
  }();
  return pool;
}

ExamQuestion target_like(const CorpusItem& item, const std::string& id) {
  ExamQuestion q;
  q.id = id;
  q.subject = "fixture";
  q.stem = question_stem(item.question);
  q.options = item.options;
  q.answer = item.answer_set;
  return q;
}

std::vector<std::pair<std::string, std::vector<float>>> rows_of(const VectorIndex& idx) {
  std::vector<std::pair<std::string, std::vector<float>>> rows;
  for (const auto& id : idx.ids()) rows.emplace_back(id, idx.vector(id));
  return rows;
}

}  // namespace

TEST_SUITE("rbfl") {
  TEST_CASE("five distinct shots, none of them the query itself") {
    const auto& pool = fixture_pool();
    auto emb = embedder();
    const auto& item = pool.items()[2];
    RbflConfig cfg;
    const auto r = retrieve_for_question(pool, *emb, target_like(item, item.id), cfg);
    REQUIRE(r.shots.size() == 5);
    CHECK_FALSE(r.pool_exhausted);
    std::set<std::string> ids;
    for (const auto& s : r.shots) {
      ids.insert(s.id);
      CHECK(s.id != item.id);
      CHECK(pool.item(s.id).options.size() == item.options.size());
    }
    CHECK(ids.size() == 5);
    for (std::size_t i = 1; i < r.shots.size(); ++i) CHECK(r.shots[i - 1].score <= r.shots[i].score);
  }

  TEST_CASE("k of zero retrieves nothing") {
    auto emb = embedder();
    RbflConfig cfg;
    cfg.k_shots = 0;
    const auto& item = fixture_pool().items()[0];
    CHECK(retrieve_for_question(fixture_pool(), *emb, target_like(item, "x"), cfg).shots.empty());
    CHECK(retrieve_shots(fixture_pool(), *emb, "anything", 0).shots.empty());
    cfg.k_shots = -1;
    CHECK_THROWS_AS(retrieve_for_question(fixture_pool(), *emb, target_like(item, "x"), cfg), Error);
  }

  TEST_CASE("a pool of three is exhausted at k five") {
    auto emb = embedder();
    std::vector<CorpusItem> items(fixture_pool().items().begin(), fixture_pool().items().begin() + 3);
    const auto pool = CorpusPool::build(items, *emb);
    const auto r = retrieve_shots(pool, *emb, "some problem", 5);
    CHECK(r.shots.size() == 3);
    CHECK(r.pool_exhausted);
  }

  TEST_CASE("scripted embeddings select the nearby cluster") {
    std::vector<CorpusItem> items;
    nlohmann::json vectors = nlohmann::json::object();
    for (int i = 0; i < 10; ++i) {
      CorpusItem it = parse_item({"p" + std::to_string(i), "问题" + std::to_string(i) + "? 答案：好", "t"}, {});
      const bool near = i % 2 == 0;
      vectors[it.question] = near ? std::vector<float>{1.0f, 0.05f * static_cast<float>(i), 0.0f}
                                  : std::vector<float>{0.0f, 0.05f * static_cast<float>(i), 1.0f};
      items.push_back(it);
    }
    vectors["query"] = std::vector<float>{1.0f, 0.0f, 0.0f};
    auto emb = testing::stub_client("scripted-embed", {{"vectors", vectors}}, ModelKind::embedding);
    const auto pool = CorpusPool::build(items, *emb);
    const auto r = retrieve_shots(pool, *emb, "query", 5, false);
    std::vector<std::string> ids;
    for (const auto& s : r.shots) ids.push_back(s.id);
    CHECK(ids == std::vector<std::string>{"p0", "p2", "p4", "p6", "p8"});
    const auto asc = retrieve_shots(pool, *emb, "query", 5, true);
    CHECK(asc.shots.front().id == "p8");
    CHECK(asc.shots.back().id == "p0");
  }

  TEST_CASE("a target present in the pool under another id is excluded by its dedup key") {
    const auto& pool = fixture_pool();
    auto emb = embedder();
    for (std::size_t i = 0; i < 40; ++i) {
      const auto& item = pool.items()[i];
      if (item.dedup_key.empty() || item.options.size() < 2) continue;
      RbflConfig cfg;
      const auto r = retrieve_for_question(pool, *emb, target_like(item, "exam-" + item.id), cfg);
      for (const auto& s : r.shots) {
        CHECK(s.id != item.id);
        CHECK(pool.item(s.id).dedup_key != item.dedup_key);
      }
    }
  }

  TEST_CASE("smaller k is a prefix of larger k") {
    const auto& pool = fixture_pool();
    auto emb = embedder();
    const auto big = retrieve_shots(pool, *emb, "增值税税率计算", 8, false);
    for (int k = 1; k < 8; ++k) {
      const auto small = retrieve_shots(pool, *emb, "增值税税率计算", k, false);
      REQUIRE(small.shots.size() == static_cast<std::size_t>(k));
      for (int i = 0; i < k; ++i) CHECK(small.shots[static_cast<std::size_t>(i)].id == big.shots[static_cast<std::size_t>(i)].id);
    }
  }

  TEST_CASE("exclude-set retrieval matches destructive removal") {
    const auto& pool = fixture_pool();
    auto emb = embedder();
    const auto rows = rows_of(pool.index());
    for (const std::string text : {"折旧", "what is a bond", "每股收益怎么算", "资产负债表", "利率"}) {
      const auto q = emb->embed({text}).front();
      for (int k : {1, 5, 12}) {
        const auto hits = iterative_top1(pool.index(), q, k, {});
        const auto want = oracle::destructive_retrieval(rows, q, k);
        std::vector<std::string> got;
        for (const auto& h : hits) got.push_back(h.ref_id);
        CHECK(got == want);
      }
    }
  }

  TEST_CASE("retrieval is deterministic and leaves the index intact") {
    const auto& pool = fixture_pool();
    auto emb = embedder();
    const auto before = pool.index().count();
    const auto a = retrieve_shots(pool, *emb, "毛利率", 5);
    const auto b = retrieve_shots(pool, *emb, "毛利率", 5);
    REQUIRE(a.shots.size() == b.shots.size());
    for (std::size_t i = 0; i < a.shots.size(); ++i) CHECK(a.shots[i].id == b.shots[i].id);
    CHECK(pool.index().count() == before);
  }

  TEST_CASE("pool save and load") {
    testing::TempDir dir;
    fixture_pool().save(dir / "pool.idx");
    const auto loaded = CorpusPool::load(dir / "pool.idx");
    CHECK(loaded.items() == fixture_pool().items());
    CHECK(loaded.index().ids() == fixture_pool().index().ids());
  }

  TEST_CASE("an exam answered with retrieved shots") {
    const auto& pool = fixture_pool();
    auto emb = embedder();
    auto model = testing::stub_client("echo");
    const auto builder = PromptBuilder::from_directory(default_template_dir());
    const auto& item = pool.items()[3];
    RbflConfig cfg;
    const auto pred = answer_with_rbfl(cfg, pool, *emb, *model, builder, target_like(item, "t1"), "财务", false);
    CHECK(pred.retrieval.shots.size() == 5);
    for (const auto& s : pred.retrieval.shots) CHECK(pred.prompt.find(question_stem(pool.item(s.id).question)) != std::string::npos);
  }
}
