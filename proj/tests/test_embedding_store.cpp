#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "recap/embedding_store.hpp"
#include "test_support.hpp"

using namespace recap;
using recap::testing::TempDir;

namespace {

EmbeddingRecord rec(std::string id, std::vector<float> global, std::vector<float> patches = {}, std::size_t rows = 0) {
  return {std::move(id), std::move(global), std::move(patches), rows};
}

double norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += double(x) * x;
  return std::sqrt(s);
}

// Hand-assembled header, independent of the writer.
std::string header(std::uint32_t version, std::uint32_t flags, std::uint32_t dim, std::uint32_t patches,
                   std::uint64_t count) {
  std::string h = "RECAPEMB";
  auto put = [&](std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) h.push_back(char((v >> (8 * i)) & 0xFF));
  };
  put(version, 4);
  put(flags, 4);
  put(dim, 4);
  put(patches, 4);
  put(count, 8);
  return h;
}

std::string f32le(float x) {
  std::uint32_t u;
  std::memcpy(&u, &x, 4);
  std::string s;
  for (int i = 0; i < 4; ++i) s.push_back(char((u >> (8 * i)) & 0xFF));
  return s;
}

}  // namespace

TEST(EmbeddingStore, IngestNormalizesVectors) {
  TempDir dir;
  auto raw = EmbeddingStore::from_records(4, 0, {rec("a", {2, 0, 0, 0}), rec("b", {0, 3, 4, 0})}, false);
  write_embeddings(raw, dir / "raw.bin");

  auto store = ingest_embeddings(dir / "raw.bin");
  ASSERT_EQ(store.size(), 2u);
  EXPECT_EQ(store[0].id, "a");
  EXPECT_EQ(store[0].global, (std::vector<float>{1, 0, 0, 0}));
  EXPECT_FLOAT_EQ(store[1].global[1], 0.6f);
  EXPECT_FLOAT_EQ(store[1].global[2], 0.8f);

  auto kept = ingest_embeddings(dir / "raw.bin", false);
  EXPECT_EQ(kept[0].global[0], 2.0f);
}

TEST(EmbeddingStore, NormalizedVectorsHaveUnitNorm) {
  std::mt19937_64 rng(7);
  std::vector<EmbeddingRecord> recs;
  std::uniform_real_distribution<float> u(-5.f, 5.f);
  for (int i = 0; i < 50; ++i) {
    EmbeddingRecord r{"r" + std::to_string(i), std::vector<float>(16), std::vector<float>(3 * 16), 3};
    for (auto& x : r.global) x = u(rng);
    for (auto& x : r.patches) x = u(rng);
    recs.push_back(std::move(r));
  }
  auto store = EmbeddingStore::from_records(16, 3, std::move(recs));
  for (const auto& r : store.records()) {
    EXPECT_NEAR(norm(r.global), 1.0, 1e-5);
    for (std::size_t p = 0; p < r.patch_rows; ++p) EXPECT_NEAR(norm(r.patch_view().row(p)), 1.0, 1e-5);
  }
}

TEST(EmbeddingStore, EmptyStoreIsHeaderOnly) {
  TempDir dir;
  auto empty = EmbeddingStore::from_records(8, 0, {});
  write_embeddings(empty, dir / "e.bin");
  EXPECT_EQ(std::filesystem::file_size(dir / "e.bin"), kEmbeddingHeaderSize);
  EXPECT_EQ(kEmbeddingHeaderSize, 32u);  // 8 magic + 4 x u32 + u64
  EXPECT_EQ(recap::testing::read_file(dir / "e.bin"), header(1, 0, 8, 0, 0));

  auto back = ingest_embeddings(dir / "e.bin");
  EXPECT_TRUE(back.empty());
  EXPECT_EQ(back.dim(), 8u);
  EXPECT_EQ(back, empty);
}

TEST(EmbeddingStore, FileSizeMatchesLayout) {
  TempDir dir;
  std::mt19937_64 rng(3);
  // P=4, D=8, 3 records with ids of length 1, 2, 3.
  std::vector<EmbeddingRecord> recs;
  for (std::string id : {"a", "bb", "ccc"}) recs.push_back(recap::testing::random_record(rng, id, 8, 4));
  auto store = EmbeddingStore::from_records(8, 4, std::move(recs));
  write_embeddings(store, dir / "p.bin");
  // header + sum(2 + id_len + (1 + P) * D * 4)
  const std::uintmax_t expected = 32 + (2 + 1 + 5 * 8 * 4) + (2 + 2 + 5 * 8 * 4) + (2 + 3 + 5 * 8 * 4);
  EXPECT_EQ(std::filesystem::file_size(dir / "p.bin"), expected);
  EXPECT_EQ(serialized_size(store), expected);
}

TEST(EmbeddingStore, ParsesHandAssembledFile) {
  std::string bytes = header(1, 1, 2, 1, 1);
  bytes += std::string("\x02\x00", 2) + "id";
  bytes += f32le(0.6f) + f32le(0.8f);  // global
  bytes += f32le(1.0f) + f32le(0.0f);  // one patch row
  auto store = parse_embeddings(bytes);
  ASSERT_EQ(store.size(), 1u);
  EXPECT_EQ(store.patch_count(), 1u);
  EXPECT_EQ(store.get("id").global, (std::vector<float>{0.6f, 0.8f}));
  EXPECT_EQ(store.get("id").patches, (std::vector<float>{1.0f, 0.0f}));
}

TEST(EmbeddingStore, RoundTripIsBitExact) {
  TempDir dir;
  std::mt19937_64 rng(11);
  for (std::size_t patches : {0u, 5u}) {
    auto store = recap::testing::random_store(rng, 200, 16, patches);
    write_embeddings(store, dir / "s.bin");
    auto back = ingest_embeddings(dir / "s.bin");
    EXPECT_EQ(back, store);
    write_embeddings(back, dir / "s2.bin");
    EXPECT_EQ(recap::testing::read_file(dir / "s.bin"), recap::testing::read_file(dir / "s2.bin"));
  }
}

TEST(EmbeddingStore, GetAgreesWithLinearScan) {
  std::mt19937_64 rng(5);
  auto store = recap::testing::random_store(rng, 1000, 4, 0);
  std::uniform_int_distribution<std::size_t> pick(0, 999);
  for (int t = 0; t < 200; ++t) {
    const auto& want = store[pick(rng)];
    const EmbeddingRecord* scanned = nullptr;
    for (const auto& r : store.records())
      if (r.id == want.id) scanned = &r;
    EXPECT_EQ(&store.get(want.id), scanned);
    EXPECT_EQ(store.get(want.id).id, want.id);
  }
  EXPECT_THROW(store.get("missing"), NotFoundError);
  EXPECT_EQ(store.find("missing"), nullptr);
}

TEST(EmbeddingStore, RejectsZeroVectorNamingId) {
  try {
    EmbeddingStore::from_records(2, 0, {rec("ok", {1, 0}), rec("zero", {0, 0})});
    FAIL() << "expected DegenerateVectorError";
  } catch (const DegenerateVectorError& e) {
    EXPECT_NE(std::string(e.what()).find("zero"), std::string::npos);
  }
  EXPECT_NO_THROW(EmbeddingStore::from_records(2, 0, {rec("zero", {0, 0})}, false));
}

TEST(EmbeddingStore, RejectsDuplicateIds) {
  EXPECT_THROW(EmbeddingStore::from_records(2, 0, {rec("a", {1, 0}), rec("a", {0, 1})}), DuplicateIdError);
}

TEST(EmbeddingStore, RejectsMalformedFiles) {
  const std::string good = header(1, 0, 2, 0, 1) + std::string("\x01\x00", 2) + "x" + f32le(1) + f32le(0);
  EXPECT_NO_THROW(parse_embeddings(good));

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(parse_embeddings(bad_magic), FormatError);
  EXPECT_THROW(parse_embeddings("RECAP"), FormatError);
  EXPECT_THROW(parse_embeddings(header(2, 0, 2, 0, 0)), FormatError);        // version
  EXPECT_THROW(parse_embeddings(header(1, 0, 0, 0, 0)), FormatError);        // dim 0
  EXPECT_THROW(parse_embeddings(header(1, 1, 2, 0, 0)), FormatError);        // flag without P
  EXPECT_THROW(parse_embeddings(header(1, 0, 2, 3, 0)), FormatError);        // P without flag
  EXPECT_THROW(parse_embeddings(header(1, 4, 2, 0, 0)), FormatError);        // unknown flag
  EXPECT_THROW(parse_embeddings(good.substr(0, good.size() - 1)), FormatError);  // truncated payload
  EXPECT_THROW(parse_embeddings(good + "z"), FormatError);                   // trailing bytes
  EXPECT_THROW(parse_embeddings(header(1, 0, 2, 0, 1000000)), FormatError);  // count vs payload
  // Header declares D=3 but payload holds D=2 floats.
  EXPECT_THROW(parse_embeddings(header(1, 0, 3, 0, 1) + std::string("\x01\x00", 2) + "x" + f32le(1) + f32le(0)),
               FormatError);
  // Empty id and invalid UTF-8.
  EXPECT_THROW(parse_embeddings(header(1, 0, 1, 0, 1) + std::string("\x00\x00", 2) + f32le(1)), FormatError);
  EXPECT_THROW(parse_embeddings(header(1, 0, 1, 0, 1) + std::string("\x01\x00\xff", 3) + f32le(1)), FormatError);
  // Duplicate ids in the file.
  const std::string rec1 = std::string("\x01\x00", 2) + "x" + f32le(1);
  EXPECT_THROW(parse_embeddings(header(1, 0, 1, 0, 2) + rec1 + rec1), DuplicateIdError);
}

TEST(EmbeddingStore, MissingFileIsIoError) {
  EXPECT_THROW(ingest_embeddings("/nonexistent/dir/x.bin"), IoError);
  auto store = EmbeddingStore::from_records(1, 0, {});
  EXPECT_THROW(write_embeddings(store, "/nonexistent/dir/x.bin"), IoError);
}

TEST(EmbeddingStore, AcceptsMultibyteUtf8Ids) {
  auto store = EmbeddingStore::from_records(1, 0, {rec("caf\xc3\xa9", {1}), rec("\xe6\x97\xa5", {1})});
  auto back = parse_embeddings(serialize_embeddings(store));
  EXPECT_EQ(back, store);
}
