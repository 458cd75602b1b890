#pragma once

// Two-stage image retrieval.
//
// Stage 1 scans every database record and keeps the top-k global cosine
// similarities (dot products of unit vectors). Stage 2 re-scores those
// candidates with the mutual nearest neighbour similarity (MNNS) of their
// patch matrices:
//
//   MNNS(Q, C) = 1/2 * ( mean_i max_j <q_i, c_j> + mean_j max_i <c_j, q_i> )
//
// The same quantity is sometimes written "MMNS"; both names refer to this.
// Rankings are ordered by score descending, ties by id ascending, so every
// result is deterministic regardless of thread count.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "recap/embedding_store.hpp"
#include "recap/errors.hpp"
#include "recap/jsonl.hpp"
#include "recap/parallel.hpp"
#include "recap/similarity_kernel.hpp"

namespace recap {

struct RankEntry {
  std::string id;
  double score = 0.0;

  friend bool operator==(const RankEntry&, const RankEntry&) = default;
};

struct Ranking {
  std::string query_id;
  std::vector<RankEntry> entries;

  friend bool operator==(const Ranking&, const Ranking&) = default;
};

// Strict weak ordering used by every ranking: score descending, then id
// ascending in byte order.
inline bool ranks_before(const RankEntry& a, const RankEntry& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

struct RetrievalConfig {
  std::size_t top_k = 100;
  bool rerank = true;

  void validate() const {
    if (top_k < 1) throw ConfigError("top_k must be >= 1");
  }
};

// Raised by batch retrieval; names the query that failed.
class QueryError : public Error {
 public:
  QueryError(std::string query_id, const std::string& message)
      : Error("query '" + query_id + "': " + message), query_id_(std::move(query_id)) {}
  const std::string& query_id() const { return query_id_; }

 private:
  std::string query_id_;
};

inline Ranking global_topk(const EmbeddingRecord& query, const EmbeddingStore& db, std::size_t k) {
  if (k < 1) throw ConfigError("k must be >= 1");
  if (query.dim() != db.dim()) {
    throw DimensionError("query '" + query.id + "' has dim " + std::to_string(query.dim()) + ", database has " +
                         std::to_string(db.dim()));
  }
  const std::size_t n = db.size();
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) scores[i] = kernel::dot(query.global, db[i].global);

  auto before = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return db[a].id < db[b].id;
  };
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t keep = std::min(k, n);
  if (keep < n) {
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), before);
    order.resize(keep);
  }
  std::sort(order.begin(), order.end(), before);

  Ranking out{query.id, {}};
  out.entries.reserve(keep);
  for (std::size_t i : order) out.entries.push_back({db[i].id, scores[i]});
  return out;
}

inline double mnns_score(PatchView q, PatchView c) {
  if (q.empty() || c.empty()) throw EmptyPatchError("patch matrices must have at least one row");
  if (q.dim != c.dim) {
    throw DimensionError("patch dims differ: " + std::to_string(q.dim) + " vs " + std::to_string(c.dim));
  }
  std::vector<float> row_max(q.rows), col_max(c.rows);
  kernel::row_col_max(q.data, q.rows, c.data, c.rows, q.dim, row_max, col_max);

  double forward = 0.0;
  for (float m : row_max) forward += m;
  double backward = 0.0;
  for (float m : col_max) backward += m;
  return 0.5 * (forward / static_cast<double>(q.rows) + backward / static_cast<double>(c.rows));
}

// Re-scores candidates by MNNS; `threads` spreads candidates over workers.
inline Ranking rerank(const EmbeddingRecord& query, const Ranking& candidates, const EmbeddingStore& db,
                      unsigned threads = 1) {
  if (!query.has_patches()) throw MissingPatchesError("query '" + query.id + "' has no patch matrix");
  std::vector<const EmbeddingRecord*> recs;
  recs.reserve(candidates.entries.size());
  for (const auto& e : candidates.entries) {
    const auto& r = db.get(e.id);
    if (!r.has_patches()) throw MissingPatchesError("candidate '" + r.id + "' has no patch matrix");
    recs.push_back(&r);
  }

  Ranking out{candidates.query_id, std::vector<RankEntry>(recs.size())};
  parallel_for(recs.size(), threads, [&](std::size_t i) {
    out.entries[i] = {recs[i]->id, mnns_score(query.patch_view(), recs[i]->patch_view())};
  });
  std::sort(out.entries.begin(), out.entries.end(), ranks_before);
  return out;
}

inline Ranking retrieve(const EmbeddingRecord& query, const EmbeddingStore& db, const RetrievalConfig& cfg,
                        unsigned threads = 1) {
  cfg.validate();
  Ranking stage1 = global_topk(query, db, cfg.top_k);
  if (!cfg.rerank) return stage1;
  return rerank(query, stage1, db, threads);
}

// Retrieves every query, parallel across queries. Output order equals input
// order. The first failing query (by position) is reported as QueryError.
inline std::vector<Ranking> retrieve_all(std::span<const EmbeddingRecord> queries, const EmbeddingStore& db,
                                         const RetrievalConfig& cfg, unsigned threads = 1) {
  cfg.validate();
  std::vector<Ranking> out(queries.size());
  parallel_for(queries.size(), threads, [&](std::size_t i) {
    try {
      out[i] = retrieve(queries[i], db, cfg);
    } catch (const QueryError&) {
      throw;
    } catch (const Error& e) {
      throw QueryError(queries[i].id, e.what());
    }
  });
  return out;
}

// JSON-lines serialization: {"query_id": ..., "results": [{"id": ..., "score": ...}]}
// with scores printed to six decimals.
inline std::string format_ranking_line(const Ranking& r) {
  std::string s = "{\"query_id\":" + json(r.query_id).dump() + ",\"results\":[";
  char buf[64];
  for (std::size_t i = 0; i < r.entries.size(); ++i) {
    double v = r.entries[i].score;
    std::snprintf(buf, sizeof buf, "%.6f", v);
    if (std::string_view(buf) == "-0.000000") std::snprintf(buf, sizeof buf, "%.6f", 0.0);
    if (i) s += ',';
    s += "{\"id\":" + json(r.entries[i].id).dump() + ",\"score\":" + buf + "}";
  }
  s += "]}";
  return s;
}

inline std::vector<Ranking> read_rankings(const std::filesystem::path& path) {
  std::vector<Ranking> out;
  for_each_jsonl(path, [&](const json& obj, std::size_t lineno) {
    Ranking r;
    r.query_id = require_string(obj, "query_id", where(path, lineno));
    auto it = obj.find("results");
    if (it == obj.end() || !it->is_array()) throw FormatError(where(path, lineno) + ": missing \"results\" array");
    for (const auto& e : *it) {
      if (!e.is_object()) throw FormatError(where(path, lineno) + ": result entries must be objects");
      r.entries.push_back({require_string(e, "id", where(path, lineno)), e.at("score").get<double>()});
    }
    out.push_back(std::move(r));
  });
  return out;
}

inline void write_rankings(const std::filesystem::path& path, std::span<const Ranking> rankings) {
  LineWriter w(path);
  for (const auto& r : rankings) w.line(format_ranking_line(r));
  w.close();
}

}  // namespace recap
