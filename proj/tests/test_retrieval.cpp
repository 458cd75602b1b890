#include <gtest/gtest.h>

#include <random>
#include <set>

#include "oracles.hpp"
#include "recap/retrieval.hpp"
#include "test_support.hpp"

using namespace recap;
namespace rt = recap::testing;

namespace {

std::vector<std::string> ids_of(const Ranking& r) {
  std::vector<std::string> out;
  for (const auto& e : r.entries) out.push_back(e.id);
  return out;
}

std::vector<std::string> ids_of(const std::vector<oracle::Scored>& r) {
  std::vector<std::string> out;
  for (const auto& e : r) out.push_back(e.id);
  return out;
}

PatchView view(const std::vector<float>& m, std::size_t rows, std::size_t dim) { return {m.data(), rows, dim}; }

}  // namespace

TEST(GlobalTopk, SelfSimilarityRanksFirst) {
  std::mt19937_64 rng(1);
  auto db = rt::random_store(rng, 50, 16, 0);
  auto r = global_topk(db[17], db, 5);
  ASSERT_EQ(r.entries.size(), 5u);
  EXPECT_EQ(r.entries[0].id, db[17].id);
  EXPECT_NEAR(r.entries[0].score, 1.0, 1e-6);
}

TEST(GlobalTopk, TwoAxisExample) {
  auto db = EmbeddingStore::from_records(2, 0, {{"id1", {1, 0}, {}, 0}, {"id2", {0, 1}, {}, 0}});
  EmbeddingRecord q{"q", {1, 0}, {}, 0};
  auto r = global_topk(q, db, 2);
  ASSERT_EQ(r.entries.size(), 2u);
  EXPECT_EQ(r.entries[0], (RankEntry{"id1", 1.0}));
  EXPECT_EQ(r.entries[1], (RankEntry{"id2", 0.0}));
}

TEST(GlobalTopk, MatchesFullSortOracle) {
  std::mt19937_64 rng(2);
  auto db = rt::random_store(rng, 200, 16, 0);
  for (int t = 0; t < 20; ++t) {
    auto q = rt::random_record(rng, "q", 16, 0);
    auto got = global_topk(q, db, 10);
    auto want = oracle::topk_full_sort(q, db, 10);
    ASSERT_EQ(ids_of(got), ids_of(want));
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got.entries[i].score, want[i].score, 1e-6);
  }
}

TEST(GlobalTopk, ReturnsEverythingWhenKExceedsSize) {
  std::mt19937_64 rng(3);
  auto db = rt::random_store(rng, 7, 4, 0);
  auto r = global_topk(db[0], db, 100);
  EXPECT_EQ(r.entries.size(), 7u);
  EXPECT_TRUE(std::is_sorted(r.entries.begin(), r.entries.end(), ranks_before));
}

TEST(GlobalTopk, TiesBreakById) {
  auto db = EmbeddingStore::from_records(2, 0, {{"c", {1, 0}, {}, 0}, {"a", {1, 0}, {}, 0}, {"b", {1, 0}, {}, 0}});
  EmbeddingRecord q{"q", {1, 0}, {}, 0};
  EXPECT_EQ(ids_of(global_topk(q, db, 2)), (std::vector<std::string>{"a", "b"}));
}

TEST(GlobalTopk, Errors) {
  std::mt19937_64 rng(4);
  auto db = rt::random_store(rng, 3, 4, 0);
  EXPECT_THROW(global_topk(rt::random_record(rng, "q", 5, 0), db, 1), DimensionError);
  EXPECT_THROW(global_topk(db[0], db, 0), ConfigError);
}

TEST(Mnns, HandEnumeratedExample) {
  const std::vector<float> q{1, 0, 0, 1};
  const std::vector<float> c{1, 0};
  // forward: (1 + 0) / 2 = 0.5, backward: 1
  EXPECT_NEAR(mnns_score(view(q, 2, 2), view(c, 1, 2)), 0.75, 1e-12);
  EXPECT_NEAR(mnns_score(view(c, 1, 2), view(q, 2, 2)), 0.75, 1e-12);
}

TEST(Mnns, SelfScoreIsOne) {
  std::mt19937_64 rng(5);
  for (std::size_t p : {1u, 3u, 4u, 7u, 13u}) {
    for (std::size_t d : {3u, 8u, 17u, 64u}) {
      auto m = rt::random_unit_rows(rng, p, d);
      EXPECT_NEAR(mnns_score(view(m, p, d), view(m, p, d)), 1.0, 1e-6) << p << "x" << d;
    }
  }
}

TEST(Mnns, MatchesNestedLoopOracle) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 50; ++t) {
    auto q = rt::random_unit_rows(rng, 5, 8);
    auto c = rt::random_unit_rows(rng, 7, 8);
    EXPECT_NEAR(mnns_score(view(q, 5, 8), view(c, 7, 8)), oracle::mnns(q, 5, c, 7, 8), 1e-6);
  }
  // Shapes that exercise every tile remainder.
  std::uniform_int_distribution<std::size_t> rows(1, 30), dims(1, 40);
  for (int t = 0; t < 100; ++t) {
    const std::size_t pq = rows(rng), pc = rows(rng), d = dims(rng);
    auto q = rt::random_unit_rows(rng, pq, d);
    auto c = rt::random_unit_rows(rng, pc, d);
    const double a = mnns_score(view(q, pq, d), view(c, pc, d));
    EXPECT_NEAR(a, oracle::mnns(q, pq, c, pc, d), 1e-6);
    EXPECT_EQ(a, mnns_score(view(c, pc, d), view(q, pq, d))) << "symmetry is exact";
    EXPECT_GE(a, -1.0);
    EXPECT_LE(a, 1.0 + 1e-6);
  }
}

TEST(Mnns, Errors) {
  const std::vector<float> a{1, 0}, b{1, 0, 0};
  EXPECT_THROW(mnns_score(view(a, 1, 2), view(b, 1, 3)), DimensionError);
  EXPECT_THROW(mnns_score(view(a, 0, 2), view(a, 1, 2)), EmptyPatchError);
}

TEST(Rerank, SingleCandidateGetsMnnsScore) {
  std::mt19937_64 rng(7);
  auto db = rt::random_store(rng, 5, 8, 4);
  auto q = rt::random_record(rng, "q", 8, 4);
  Ranking in{"q", {{db[2].id, 0.123}}};
  auto out = rerank(q, in, db);
  ASSERT_EQ(out.entries.size(), 1u);
  EXPECT_EQ(out.entries[0].id, db[2].id);
  EXPECT_NEAR(out.entries[0].score, oracle::mnns(q.patches, 4, db[2].patches, 4, 8), 1e-6);
}

TEST(Rerank, ExactPatchMatchWins) {
  std::mt19937_64 rng(8);
  auto db = rt::random_store(rng, 100, 16, 9);
  EmbeddingRecord q = db[42];
  q.id = "query";
  q.global = rt::random_unit(rng, 16);  // stage-1 order is unrelated
  auto stage1 = global_topk(q, db, 100);
  auto out = rerank(q, stage1, db);
  EXPECT_EQ(out.entries[0].id, db[42].id);
  EXPECT_NEAR(out.entries[0].score, 1.0, 1e-6);
}

TEST(Rerank, MatchesBruteForceOracleAndIsPermutation) {
  std::mt19937_64 rng(9);
  auto db = rt::random_store(rng, 200, 16, 6);
  for (int t = 0; t < 20; ++t) {
    auto q = rt::noisy_copy(rng, db[t * 7], "q" + std::to_string(t), 0.05);
    auto stage1 = global_topk(q, db, 30);
    auto out = rerank(q, stage1, db, 3);
    auto want = oracle::mnns_sort(q, db, ids_of(stage1));
    ASSERT_EQ(ids_of(out), ids_of(want));
    auto a = ids_of(out), b = ids_of(stage1);
    EXPECT_EQ(std::multiset<std::string>(a.begin(), a.end()), std::multiset<std::string>(b.begin(), b.end()));
  }
}

TEST(Rerank, MissingPatchesNamesId) {
  auto with = EmbeddingStore::from_records(2, 1, {{"p", {1, 0}, {1, 0}, 1}});
  auto without = EmbeddingStore::from_records(2, 0, {{"np", {1, 0}, {}, 0}});
  EmbeddingRecord q{"q", {1, 0}, {1, 0}, 1};
  try {
    rerank(q, Ranking{"q", {{"np", 1.0}}}, without);
    FAIL();
  } catch (const MissingPatchesError& e) {
    EXPECT_NE(std::string(e.what()).find("np"), std::string::npos);
  }
  EmbeddingRecord bare{"bare", {1, 0}, {}, 0};
  EXPECT_THROW(rerank(bare, Ranking{"bare", {{"p", 1.0}}}, with), MissingPatchesError);
}

TEST(Retrieve, NoRerankEqualsGlobalTopk) {
  std::mt19937_64 rng(10);
  auto db = rt::random_store(rng, 60, 8, 4);
  auto q = rt::random_record(rng, "q", 8, 4);
  EXPECT_EQ(retrieve(q, db, {10, false}), global_topk(q, db, 10));
}

TEST(Retrieve, FullDepthEqualsExhaustiveMnnsSort) {
  std::mt19937_64 rng(11);
  auto db = rt::random_store(rng, 80, 8, 5);
  std::vector<std::string> all;
  for (const auto& r : db.records()) all.push_back(r.id);
  for (int t = 0; t < 5; ++t) {
    auto q = rt::random_record(rng, "q", 8, 5);
    EXPECT_EQ(ids_of(retrieve(q, db, {200, true})), ids_of(oracle::mnns_sort(q, db, all)));
  }
}

TEST(Retrieve, StoredRecordRanksFirst) {
  std::mt19937_64 rng(12);
  auto db = rt::random_store(rng, 60, 8, 4);
  EXPECT_EQ(retrieve(db[9], db, {}).entries.front().id, db[9].id);
}

TEST(Retrieve, BatchIsIndependentOfThreadCount) {
  std::mt19937_64 rng(13);
  auto db = rt::random_store(rng, 120, 16, 6);
  std::vector<EmbeddingRecord> queries;
  for (int i = 0; i < 16; ++i) queries.push_back(rt::noisy_copy(rng, db[i * 5], "q" + std::to_string(i), 0.1));
  const auto one = retrieve_all(queries, db, {20, true}, 1);
  for (unsigned th : {2u, 4u, 8u}) EXPECT_EQ(retrieve_all(queries, db, {20, true}, th), one);
  for (std::size_t i = 0; i < queries.size(); ++i) EXPECT_EQ(one[i], retrieve(queries[i], db, {20, true}));
}

TEST(Retrieve, BatchErrorNamesQuery) {
  std::mt19937_64 rng(14);
  auto db = rt::random_store(rng, 10, 4, 2);
  std::vector<EmbeddingRecord> queries{rt::random_record(rng, "fine", 4, 2), rt::random_record(rng, "bad", 4, 0)};
  try {
    retrieve_all(queries, db, {}, 2);
    FAIL();
  } catch (const QueryError& e) {
    EXPECT_EQ(e.query_id(), "bad");
  }
}

TEST(RankingIo, SixDecimalLinesRoundTrip) {
  Ranking r{"q\"1", {{"a", 0.5}, {"b", -1e-9}, {"c", 1.0 / 3.0}}};
  EXPECT_EQ(format_ranking_line(r),
            R"({"query_id":"q\"1","results":[{"id":"a","score":0.500000},{"id":"b","score":0.000000},)"
            R"({"id":"c","score":0.333333}]})");
  rt::TempDir dir;
  std::vector<Ranking> rs{r, Ranking{"empty", {}}};
  write_rankings(dir / "r.jsonl", rs);
  auto back = read_rankings(dir / "r.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].query_id, "q\"1");
  EXPECT_DOUBLE_EQ(back[0].entries[2].score, 0.333333);
  EXPECT_TRUE(back[1].entries.empty());
}
