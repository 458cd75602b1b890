#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "recap/errors.hpp"
#include "recap/jsonl.hpp"
#include "recap/prompt_template.hpp"

namespace recap {

struct WebCaption {
  std::string image_ref;
  std::string caption;

  friend bool operator==(const WebCaption&, const WebCaption&) = default;
};

struct ArticleRecord {
  std::string id;
  std::string title;
  std::string body;
  std::string url;
  std::vector<std::string> image_ids;
  std::optional<std::string> summary;
  std::optional<std::vector<WebCaption>> web_captions;

  friend bool operator==(const ArticleRecord&, const ArticleRecord&) = default;
};

inline json article_to_json(const ArticleRecord& a) {
  json j{{"id", a.id}, {"title", a.title}, {"body", a.body}, {"url", a.url}, {"image_ids", a.image_ids}};
  if (a.summary) j["summary"] = *a.summary;
  if (a.web_captions) {
    json arr = json::array();
    for (const auto& w : *a.web_captions) arr.push_back({{"image_ref", w.image_ref}, {"caption", w.caption}});
    j["web_captions"] = std::move(arr);
  }
  return j;
}

inline ArticleRecord article_from_json(const json& j, const std::string& where) {
  ArticleRecord a;
  a.id = require_string(j, "id", where);
  if (a.id.empty()) throw FormatError(where + ": empty article id");
  auto opt_string = [&](const char* key) -> std::string {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return {};
    if (!it->is_string()) throw FormatError(where + ": field \"" + key + "\" must be a string");
    return it->get<std::string>();
  };
  a.title = opt_string("title");
  a.body = opt_string("body");
  a.url = opt_string("url");
  if (auto it = j.find("image_ids"); it != j.end()) a.image_ids = it->get<std::vector<std::string>>();
  if (auto it = j.find("summary"); it != j.end() && !it->is_null()) a.summary = it->get<std::string>();
  if (auto it = j.find("web_captions"); it != j.end() && !it->is_null()) {
    a.web_captions.emplace();
    for (const auto& w : *it) {
      a.web_captions->push_back({require_string(w, "image_ref", where), require_string(w, "caption", where)});
    }
  }
  return a;
}

// Id-indexed article collection; iteration follows file order.
class Corpus {
 public:
  Corpus() = default;

  explicit Corpus(std::vector<ArticleRecord> articles) : articles_(std::move(articles)) {
    for (std::size_t i = 0; i < articles_.size(); ++i) {
      if (!by_id_.emplace(articles_[i].id, i).second) {
        throw DuplicateIdError("duplicate article id '" + articles_[i].id + "'");
      }
      // An image claimed by several articles resolves to the first one.
      for (const auto& img : articles_[i].image_ids) by_image_.emplace(img, i);
    }
  }

  std::span<const ArticleRecord> articles() const { return articles_; }
  std::size_t size() const { return articles_.size(); }
  bool empty() const { return articles_.empty(); }

  const ArticleRecord* find(std::string_view id) const {
    auto it = by_id_.find(std::string(id));
    return it == by_id_.end() ? nullptr : &articles_[it->second];
  }
  const ArticleRecord& get(std::string_view id) const {
    if (const auto* a = find(id)) return *a;
    throw NotFoundError("no article with id '" + std::string(id) + "'");
  }
  const ArticleRecord* find_by_image(std::string_view image_id) const {
    auto it = by_image_.find(std::string(image_id));
    return it == by_image_.end() ? nullptr : &articles_[it->second];
  }

 private:
  std::vector<ArticleRecord> articles_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::unordered_map<std::string, std::size_t> by_image_;
};

inline Corpus load_corpus(const std::filesystem::path& path) {
  std::vector<ArticleRecord> articles;
  std::unordered_map<std::string, std::size_t> seen;
  for_each_jsonl(path, [&](const json& obj, std::size_t lineno) {
    auto a = article_from_json(obj, where(path, lineno));
    if (auto [it, fresh] = seen.emplace(a.id, lineno); !fresh) {
      throw DuplicateIdError(where(path, lineno) + ": duplicate article id '" + a.id + "' (first on line " +
                             std::to_string(it->second) + ")");
    }
    articles.push_back(std::move(a));
  });
  return Corpus(std::move(articles));
}

inline void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  LineWriter w(path);
  for (const auto& a : corpus.articles()) w.line(article_to_json(a).dump());
  w.close();
}

// ---------------------------------------------------------------------------

struct CrawledImage {
  std::string caption;
  std::vector<float> embedding;
};

struct WebCaptionMatch {
  std::string caption;
  double score = 0.0;
  std::size_t index = 0;
};

inline double cosine(std::span<const float> a, std::span<const float> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * b[i];
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

// Picks the crawled caption whose image is most similar to the retrieved
// image. Ties go to the earliest entry.
inline WebCaptionMatch match_web_caption(std::span<const float> retrieved, std::span<const CrawledImage> crawled) {
  if (crawled.empty()) throw NoCandidatesError("no crawled image-caption pairs to match against");
  WebCaptionMatch best;
  for (std::size_t i = 0; i < crawled.size(); ++i) {
    if (crawled[i].embedding.size() != retrieved.size()) {
      throw DimensionError("crawled image " + std::to_string(i) + " has dim " +
                           std::to_string(crawled[i].embedding.size()) + ", expected " +
                           std::to_string(retrieved.size()));
    }
    const double s = cosine(retrieved, crawled[i].embedding);
    if (i == 0 || s > best.score) best = {crawled[i].caption, s, i};
  }
  return best;
}

// ---------------------------------------------------------------------------

struct ContextBundle {
  std::string generic_caption;
  std::optional<std::string> web_caption;
  std::string title;
  std::string summary;
};

struct Prompt {
  std::string system;
  std::string user;
};

inline Prompt build_prompt(const ContextBundle& b) {
  if (b.generic_caption.empty()) throw IncompleteBundleError("context bundle has no generic caption");
  if (b.summary.empty()) throw IncompleteBundleError("context bundle has no article summary");
  if (b.title.empty()) throw IncompleteBundleError("context bundle has no article title");

  const std::pair<std::string_view, std::string_view> subs[] = {
      {"<generic_caption>", b.generic_caption},
      {"<web_caption>", b.web_caption ? std::string_view(*b.web_caption) : prompt::kMissingWebCaption},
      {"<title>", b.title},
      {"<summary_article_content>", b.summary},
  };

  // Single left-to-right pass, so substituted text is never re-scanned.
  std::string user;
  std::string_view rest = prompt::kUser;
  while (!rest.empty()) {
    bool matched = false;
    if (rest.front() == '<') {
      for (const auto& [key, value] : subs) {
        if (rest.starts_with(key)) {
          user += value;
          rest.remove_prefix(key.size());
          matched = true;
          break;
        }
      }
    }
    if (!matched) {
      user += rest.front();
      rest.remove_prefix(1);
    }
  }
  return {std::string(prompt::kSystem), std::move(user)};
}

// JSON-lines {"id": ..., "text": ...} produced by external generators.
inline std::map<std::string, std::string> read_generated(const std::filesystem::path& path) {
  std::map<std::string, std::string> out;
  for_each_jsonl(path, [&](const json& obj, std::size_t lineno) {
    auto id = require_string(obj, "id", where(path, lineno));
    auto text = require_string(obj, "text", where(path, lineno));
    if (!out.emplace(id, std::move(text)).second) {
      throw DuplicateIdError(where(path, lineno) + ": duplicate id '" + id + "'");
    }
  });
  return out;
}

}  // namespace recap
