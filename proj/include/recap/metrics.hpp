#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "recap/errors.hpp"
#include "recap/jsonl.hpp"
#include "recap/retrieval.hpp"

namespace recap {

// ---------------------------------------------------------------------------
// Tokenization

struct TokenizedCaption {
  std::string raw;
  std::vector<std::string> tokens;

  std::size_t length() const { return tokens.size(); }
};

// Lowercases, maps every character outside [a-z0-9'] to a space and splits
// on whitespace. Non-ASCII bytes count as separators.
inline TokenizedCaption tokenize(std::string_view text) {
  TokenizedCaption out{std::string(text), {}};
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(std::tolower(static_cast<unsigned char>(ch)));
    if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '\'') {
      cur.push_back(static_cast<char>(c));
    } else if (!cur.empty()) {
      out.tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.tokens.push_back(std::move(cur));
  return out;
}

// ---------------------------------------------------------------------------
// Length penalty

inline double gaussian_penalty(long long len_c, long long len_s, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("sigma must be > 0");
  const double diff = static_cast<double>(len_c - len_s);
  return std::exp(-(diff * diff) / (2.0 * sigma * sigma));
}

// ---------------------------------------------------------------------------
// N-gram statistics. An n-gram is keyed by its tokens joined with single
// spaces; tokens never contain whitespace so the key is unambiguous.

inline std::vector<std::string> ngrams(std::span<const std::string> tokens, std::size_t n) {
  std::vector<std::string> out;
  if (n == 0 || tokens.size() < n) return out;
  out.reserve(tokens.size() - n + 1);
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (std::size_t k = 1; k < n; ++k) {
      key += ' ';
      key += tokens[i + k];
    }
    out.push_back(std::move(key));
  }
  return out;
}

struct DocFreqTable {
  std::size_t corpus_size = 0;
  std::unordered_map<std::string, std::size_t> df;

  // Unseen n-grams count as appearing in one document.
  double idf(const std::string& ngram) const {
    auto it = df.find(ngram);
    const double d = it == df.end() ? 1.0 : static_cast<double>(it->second);
    return std::log(static_cast<double>(corpus_size) / d);
  }
};

using ReferenceGroup = std::vector<TokenizedCaption>;

// corpus_size = number of groups; df[g] = number of groups where g occurs in
// at least one reference.
inline DocFreqTable build_docfreq(std::span<const ReferenceGroup> groups, std::size_t max_n = 4) {
  if (groups.empty()) throw ConfigError("document-frequency corpus is empty");
  if (max_n < 1 || max_n > 4) throw ConfigError("max_n must be in [1, 4]");
  DocFreqTable t;
  t.corpus_size = groups.size();
  for (const auto& group : groups) {
    std::unordered_set<std::string> seen;
    for (const auto& ref : group)
      for (std::size_t n = 1; n <= max_n; ++n)
        for (auto& g : ngrams(ref.tokens, n)) seen.insert(std::move(g));
    for (const auto& g : seen) ++t.df[g];
  }
  return t;
}

inline json docfreq_to_json(const DocFreqTable& t) {
  json df = json::object();
  for (const auto& [k, v] : t.df) df[k] = v;
  return json{{"corpus_size", t.corpus_size}, {"df", std::move(df)}};
}

inline DocFreqTable docfreq_from_json(const json& j) {
  DocFreqTable t;
  try {
    t.corpus_size = j.at("corpus_size").get<std::size_t>();
    for (const auto& [k, v] : j.at("df").items()) t.df[k] = v.get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("document-frequency table: ") + e.what());
  }
  if (t.corpus_size == 0) throw FormatError("document-frequency table: corpus_size must be positive");
  for (const auto& [k, v] : t.df) {
    if (v == 0 || v > t.corpus_size) throw FormatError("document-frequency table: df out of range for '" + k + "'");
  }
  return t;
}

inline DocFreqTable load_docfreq(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw FormatError(path.string() + ": malformed JSON");
  return docfreq_from_json(j);
}

inline void save_docfreq(const DocFreqTable& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << docfreq_to_json(t).dump() << '\n';
  if (!out) throw IoError("error writing " + path.string());
}

struct NGramTfIdf {
  std::size_t n = 1;
  std::unordered_map<std::string, double> weights;

  double norm() const {
    double s = 0.0;
    for (const auto& [k, w] : weights) s += w * w;
    return std::sqrt(s);
  }
};

// weight(g) = count(g) / (#n-grams in caption) * log(N / df(g)).
inline NGramTfIdf tfidf(const TokenizedCaption& caption, std::size_t n, const DocFreqTable& dft) {
  NGramTfIdf v{n, {}};
  const auto grams = ngrams(caption.tokens, n);
  if (grams.empty()) return v;
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& g : grams) ++counts[g];
  const double total = static_cast<double>(grams.size());
  for (const auto& [g, c] : counts) v.weights[g] = static_cast<double>(c) / total * dft.idf(g);
  return v;
}

// ---------------------------------------------------------------------------
// CIDEr-D with Gaussian length penalty

struct CiderConfig {
  double sigma = 6.0;
  std::size_t max_n = 4;

  void validate() const {
    if (!(sigma > 0.0)) throw ConfigError("sigma must be > 0");
    if (max_n < 1 || max_n > 4) throw ConfigError("max_n must be in [1, 4]");
  }
};

// Score for one n-gram order:
//   10/m * sum_j penalty(l(c), l(s_j)) * <min(g(c), g(s_j)), g(s_j)> / (|g(c)| |g(s_j)|)
// where a term with a zero-norm vector contributes 0.
inline double cider_d_n(const TokenizedCaption& candidate, std::span<const TokenizedCaption> refs, std::size_t n,
                        const DocFreqTable& dft, double sigma) {
  const NGramTfIdf gc = tfidf(candidate, n, dft);
  const double nc = gc.norm();
  double sum = 0.0;
  for (const auto& ref : refs) {
    const NGramTfIdf gs = tfidf(ref, n, dft);
    const double ns = gs.norm();
    if (nc == 0.0 || ns == 0.0) continue;
    double clipped = 0.0;
    for (const auto& [g, ws] : gs.weights) {
      auto it = gc.weights.find(g);
      if (it != gc.weights.end()) clipped += std::min(it->second, ws) * ws;
    }
    const auto lc = static_cast<long long>(candidate.length());
    const auto ls = static_cast<long long>(ref.length());
    sum += gaussian_penalty(lc, ls, sigma) * clipped / (nc * ns);
  }
  return 10.0 / static_cast<double>(refs.size()) * sum;
}

// Unweighted mean of the per-order scores for n = 1..max_n.
inline double cider_d(const TokenizedCaption& candidate, std::span<const TokenizedCaption> refs,
                      const DocFreqTable& dft, const CiderConfig& cfg = {}) {
  cfg.validate();
  if (refs.empty()) throw ConfigError("CIDEr-D needs at least one reference");
  double total = 0.0;
  for (std::size_t n = 1; n <= cfg.max_n; ++n) total += cider_d_n(candidate, refs, n, dft, cfg.sigma);
  return total / static_cast<double>(cfg.max_n);
}

// ---------------------------------------------------------------------------
// CLIPScore over precomputed embeddings: w * max(cos, 0).

inline double clip_score(std::span<const float> image_emb, std::span<const float> text_emb, double w = 2.5) {
  if (image_emb.size() != text_emb.size()) {
    throw DimensionError("image/text embedding dims differ: " + std::to_string(image_emb.size()) + " vs " +
                         std::to_string(text_emb.size()));
  }
  if (!(w > 0.0)) throw ConfigError("CLIPScore weight must be > 0");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < image_emb.size(); ++i) {
    dot += double(image_emb[i]) * text_emb[i];
    na += double(image_emb[i]) * image_emb[i];
    nb += double(text_emb[i]) * text_emb[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return w * std::max(dot / std::sqrt(na * nb), 0.0);
}

// ---------------------------------------------------------------------------
// Retrieval metrics

using RelevanceMap = std::unordered_map<std::string, std::set<std::string>>;

struct RetrievalReport {
  double mean_ap = 0.0;
  std::map<std::size_t, double> recall;
  std::vector<double> average_precision;  // per ranking, input order
};

inline double average_precision(const Ranking& r, const std::set<std::string>& relevant) {
  if (relevant.empty()) return 0.0;
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < r.entries.size(); ++i) {
    if (relevant.count(r.entries[i].id)) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(relevant.size());
}

inline RetrievalReport retrieval_metrics(std::span<const Ranking> rankings, const RelevanceMap& truth,
                                         std::span<const std::size_t> ks) {
  for (std::size_t k : ks)
    if (k < 1) throw ConfigError("recall cutoffs must be >= 1");
  RetrievalReport rep;
  std::map<std::size_t, std::size_t> hits;
  for (std::size_t k : ks) hits[k] = 0;
  for (const auto& r : rankings) {
    auto it = truth.find(r.query_id);
    if (it == truth.end()) throw MissingTruthError("no ground truth for query '" + r.query_id + "'");
    const double ap = average_precision(r, it->second);
    rep.average_precision.push_back(ap);
    rep.mean_ap += ap;
    std::optional<std::size_t> first_hit;
    for (std::size_t i = 0; i < r.entries.size(); ++i) {
      if (it->second.count(r.entries[i].id)) {
        first_hit = i;
        break;
      }
    }
    for (auto& [k, h] : hits)
      if (first_hit && *first_hit < k) ++h;
  }
  const double q = static_cast<double>(rankings.size());
  if (!rankings.empty()) rep.mean_ap /= q;
  for (const auto& [k, h] : hits) rep.recall[k] = rankings.empty() ? 0.0 : static_cast<double>(h) / q;
  return rep;
}

// Truth file: JSON-lines {"query_id": ..., "relevant": [ids]}.
inline RelevanceMap load_truth(const std::filesystem::path& path) {
  RelevanceMap truth;
  for_each_jsonl(path, [&](const json& obj, std::size_t lineno) {
    auto id = require_string(obj, "query_id", where(path, lineno));
    auto& set = truth[id];
    for (const auto& r : obj.at("relevant")) set.insert(r.get<std::string>());
  });
  return truth;
}

// Captions file: JSON-lines {"id": ..., "caption": ...}; file order kept.
inline std::vector<std::pair<std::string, std::string>> read_captions(const std::filesystem::path& path) {
  std::vector<std::pair<std::string, std::string>> out;
  std::unordered_set<std::string> seen;
  for_each_jsonl(path, [&](const json& obj, std::size_t lineno) {
    auto id = require_string(obj, "id", where(path, lineno));
    if (!seen.insert(id).second) throw DuplicateIdError(where(path, lineno) + ": duplicate id '" + id + "'");
    out.emplace_back(std::move(id), require_string(obj, "caption", where(path, lineno)));
  });
  return out;
}

// References file: JSON-lines {"id": ..., "references": [...]}; file order kept.
inline std::vector<std::pair<std::string, std::vector<std::string>>> read_references(
    const std::filesystem::path& path) {
  std::vector<std::pair<std::string, std::vector<std::string>>> out;
  std::unordered_set<std::string> seen;
  for_each_jsonl(path, [&](const json& obj, std::size_t lineno) {
    auto id = require_string(obj, "id", where(path, lineno));
    if (!seen.insert(id).second) throw DuplicateIdError(where(path, lineno) + ": duplicate id '" + id + "'");
    out.emplace_back(std::move(id), obj.at("references").get<std::vector<std::string>>());
  });
  return out;
}

struct MetricReport {
  std::optional<RetrievalReport> retrieval;
  std::optional<double> cider;
  std::optional<double> clip_score;
};

inline json report_to_json(const MetricReport& rep) {
  json j = json::object();
  if (rep.retrieval) {
    j["mAP"] = rep.retrieval->mean_ap;
    json rec = json::object();
    for (const auto& [k, v] : rep.retrieval->recall) rec[std::to_string(k)] = v;
    j["recall"] = std::move(rec);
  }
  if (rep.cider) j["cider"] = *rep.cider;
  if (rep.clip_score) j["clip_score"] = *rep.clip_score;
  return j;
}

}  // namespace recap
