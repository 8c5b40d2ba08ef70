#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "finrag/error.hpp"
#include "finrag/text.hpp"
#include "finrag/vector_index.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace finrag;

namespace {

using Rows = std::vector<std::pair<std::string, std::vector<float>>>;

Rows random_rows(std::mt19937_64& rng, int n, int d) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  Rows rows;
  for (int i = 0; i < n; ++i) {
    std::vector<float> v(static_cast<std::size_t>(d));
    do {
      for (auto& x : v) x = g(rng);
    } while (std::all_of(v.begin(), v.end(), [](float x) { return x == 0.0f; }));
    rows.emplace_back("v" + std::to_string(i), std::move(v));
  }
  return rows;
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

}  // namespace

TEST_SUITE("vector_index") {
  TEST_CASE("cosine examples") {
    CHECK(cosine({1, 0}, {2, 0}) == doctest::Approx(1.0));
    CHECK(cosine({1, 0}, {0, 3}) == doctest::Approx(0.0));
    CHECK(std::abs(cosine({1, 0}, {1, 1}) - 0.70710678118654752) < 1e-9);
    CHECK(cosine({0, 0}, {1, 1}) == 0.0);
  }

  TEST_CASE("add, count and rejected records") {
    VectorIndex idx(3);
    idx.add("a", {1, 0, 0});
    idx.add("b", {0, 1, 0});
    CHECK(idx.count() == 2);
    CHECK(idx.contains("a"));
    CHECK(code_of([&] { idx.add("a", {0, 0, 1}); }) == Errc::DuplicateId);
    CHECK(code_of([&] { idx.add("z", {0, 0, 0}); }) == Errc::ZeroVector);
    CHECK(code_of([&] { idx.add("w", {1, 0}); }) == Errc::DimensionMismatch);
    CHECK(code_of([&] { idx.top_k({1, 0}, 1); }) == Errc::DimensionMismatch);
    CHECK(code_of([&] { idx.top_k({1, 0, 0}, 0); }) == Errc::InvalidArgument);
    CHECK(idx.count() == 2);
  }

  TEST_CASE("removing the top hit promotes the runner-up") {
    VectorIndex idx = VectorIndex::build({{"a", {1, 0}}, {"b", {1, 0.2f}}, {"c", {0, 1}}});
    auto hits = idx.top_k({1, 0}, 2);
    REQUIRE(hits.size() == 2);
    CHECK(hits[0].ref_id == "a");
    CHECK(hits[1].ref_id == "b");
    idx.remove({"a"});
    hits = idx.top_k({1, 0}, 1);
    CHECK(hits[0].ref_id == "b");
    CHECK(code_of([&] { idx.remove({"b", "missing"}); }) == Errc::UnknownId);
    CHECK(idx.contains("b"));
    idx.remove({"b", "c"});
    CHECK(idx.count() == 0);
    CHECK(idx.top_k({1, 0}, 3).empty());
  }

  TEST_CASE("ties break by id") {
    const auto idx = VectorIndex::build({{"z", {1, 0}}, {"m", {2, 0}}, {"a", {3, 0}}});
    const auto hits = idx.top_k({1, 0}, 3);
    CHECK(hits[0].ref_id == "a");
    CHECK(hits[1].ref_id == "m");
    CHECK(hits[2].ref_id == "z");
  }

  TEST_CASE("top-k agrees with a brute-force scan") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 100; ++trial) {
      const int n = std::uniform_int_distribution<int>(1, 500)(rng);
      const int d = std::uniform_int_distribution<int>(1, 64)(rng);
      const int k = std::uniform_int_distribution<int>(1, 20)(rng);
      const auto rows = random_rows(rng, n, d);
      const auto idx = VectorIndex::build(rows);
      const auto q = random_rows(rng, 1, d)[0].second;
      std::set<std::string> exclude;
      std::unordered_set<std::string> exclude_u;
      for (int i = 0; i < n; i += 7) {
        exclude.insert(rows[static_cast<std::size_t>(i)].first);
        exclude_u.insert(rows[static_cast<std::size_t>(i)].first);
      }
      const auto got = idx.top_k(q, k, exclude_u);
      const auto want = oracle::brute_top_k(rows, q, k, exclude);
      REQUIRE(got.size() == want.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].ref_id == want[i].id);
        CHECK(std::abs(got[i].score - want[i].score) < 1e-9);
      }
    }
  }

  TEST_CASE("scaling a query does not change the ranking") {
    std::mt19937_64 rng(11);
    const auto rows = random_rows(rng, 200, 16);
    const auto idx = VectorIndex::build(rows);
    auto q = random_rows(rng, 1, 16)[0].second;
    const auto base = idx.top_k(q, 10);
    for (auto& x : q) x *= 37.5f;
    const auto scaled = idx.top_k(q, 10);
    REQUIRE(base.size() == scaled.size());
    for (std::size_t i = 0; i < base.size(); ++i) CHECK(base[i].ref_id == scaled[i].ref_id);
  }

  TEST_CASE("save and load preserve vectors and scores") {
    std::mt19937_64 rng(3);
    const auto rows = random_rows(rng, 120, 24);
    auto idx = VectorIndex::build(rows);
    idx.remove({"v5", "v17"});
    testing::TempDir dir;
    idx.save(dir / "i.idx");
    const auto loaded = VectorIndex::load(dir / "i.idx");
    CHECK(loaded.count() == idx.count());
    CHECK(loaded.dim() == 24);
    CHECK(loaded.ids() == idx.ids());
    for (const auto& id : idx.ids()) CHECK(loaded.vector(id) == idx.vector(id));
    const auto q = random_rows(rng, 1, 24)[0].second;
    const auto a = idx.top_k(q, 15);
    const auto b = loaded.top_k(q, 15);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].ref_id == b[i].ref_id);
      CHECK(std::abs(a[i].score - b[i].score) <= 1e-12);
    }
  }

  TEST_CASE("a truncated file is rejected") {
    testing::TempDir dir;
    VectorIndex::build({{"a", {1, 2}}}).save(dir / "i.idx");
    const auto bytes = text::read_file(dir / "i.idx");
    text::write_file(dir / "t.idx", bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(VectorIndex::load(dir / "t.idx"), Error);
    text::write_file(dir / "m.idx", "XXXX" + bytes.substr(4));
    CHECK_THROWS_AS(VectorIndex::load(dir / "m.idx"), Error);
  }
}
