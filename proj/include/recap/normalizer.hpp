#pragma once

// Caption length normalization aimed at the CIDEr-D length penalty.
//
//   gaussian_truncate  hard cut after max_words
//   semantic_truncate  drops non-entity words first, keeping named entities
//   enrich             appends pooled named entities up to min_words
//   normalize          enrich, then semantic_truncate
//
// Words are whitespace-delimited surface forms with their original casing
// and punctuation; each carries an entity flag.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "recap/errors.hpp"
#include "recap/metrics.hpp"

namespace recap {

struct Caption {
  std::vector<std::string> words;
  std::vector<bool> entity_mask;

  std::size_t size() const { return words.size(); }
  std::string text() const {
    std::string s;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i) s += ' ';
      s += words[i];
    }
    return s;
  }
  friend bool operator==(const Caption&, const Caption&) = default;
};

inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

namespace detail {

inline bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

// Word with leading/trailing ASCII punctuation removed: "(Obama," -> "Obama".
inline std::string_view word_core(std::string_view w) {
  std::size_t b = 0, e = w.size();
  while (b < e && std::ispunct(static_cast<unsigned char>(w[b]))) ++b;
  while (e > b && std::ispunct(static_cast<unsigned char>(w[e - 1]))) --e;
  return w.substr(b, e - b);
}

inline std::string fold(std::string_view w) {
  std::string s(word_core(w));
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline bool ends_sentence(std::string_view w) {
  std::size_t e = w.size();
  while (e > 0 && (w[e - 1] == '"' || w[e - 1] == '\'' || w[e - 1] == ')' || w[e - 1] == ']')) --e;
  return e > 0 && (w[e - 1] == '.' || w[e - 1] == '!' || w[e - 1] == '?');
}

inline bool ends_phrase(std::string_view w) {
  return !w.empty() && std::ispunct(static_cast<unsigned char>(w.back())) && w.back() != '\'';
}

inline bool is_capitalized(std::string_view w) {
  auto core = word_core(w);
  return !core.empty() && std::isupper(static_cast<unsigned char>(core.front()));
}

inline bool has_digit(std::string_view w) {
  return std::any_of(w.begin(), w.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

inline bool is_all_caps(std::string_view w) {
  std::size_t letters = 0;
  for (char c : w) {
    if (std::islower(static_cast<unsigned char>(c))) return false;
    if (std::isupper(static_cast<unsigned char>(c))) ++letters;
  }
  return letters >= 2;
}

inline bool contains_sequence(std::span<const std::string> folded, std::span<const std::string> needle) {
  if (needle.empty() || needle.size() > folded.size()) return false;
  return std::search(folded.begin(), folded.end(), needle.begin(), needle.end()) != folded.end();
}

}  // namespace detail

// Heuristic named-entity mask:
//  (a) maximal runs of capitalized words, unless the run is a single
//      sentence-initial word; runs do not cross sentence ends,
//  (b) words containing a digit,
//  (c) all-caps words with at least two letters.
// A sentence starts at position 0 and after a word ending in . ! or ?.
inline std::vector<bool> recognize_entities(std::span<const std::string> words) {
  std::vector<bool> mask(words.size(), false);
  std::size_t i = 0;
  while (i < words.size()) {
    if (!detail::is_capitalized(words[i])) {
      ++i;
      continue;
    }
    const bool sentence_start = i == 0 || detail::ends_sentence(words[i - 1]);
    std::size_t j = i + 1;
    while (j < words.size() && detail::is_capitalized(words[j]) && !detail::ends_sentence(words[j - 1])) ++j;
    if (j - i > 1 || !sentence_start) std::fill(mask.begin() + i, mask.begin() + j, true);
    i = j;
  }
  for (std::size_t k = 0; k < words.size(); ++k) {
    if (detail::has_digit(words[k]) || detail::is_all_caps(words[k])) mask[k] = true;
  }
  return mask;
}

// Marks every case-insensitive occurrence of each explicit entity.
inline std::vector<bool> mark_entities(std::span<const std::string> words, std::span<const std::string> entities) {
  std::vector<bool> mask(words.size(), false);
  std::vector<std::string> folded;
  folded.reserve(words.size());
  for (const auto& w : words) folded.push_back(detail::fold(w));
  for (const auto& e : entities) {
    std::vector<std::string> needle;
    for (const auto& w : split_words(e)) needle.push_back(detail::fold(w));
    if (needle.empty()) continue;
    auto it = folded.begin();
    while ((it = std::search(it, folded.end(), needle.begin(), needle.end())) != folded.end()) {
      const auto pos = static_cast<std::size_t>(it - folded.begin());
      std::fill(mask.begin() + pos, mask.begin() + pos + needle.size(), true);
      ++it;
    }
  }
  return mask;
}

inline Caption make_caption(std::string_view text) {
  Caption c{split_words(text), {}};
  c.entity_mask = recognize_entities(c.words);
  return c;
}

inline Caption make_caption(std::string_view text, std::span<const std::string> explicit_entities) {
  Caption c{split_words(text), {}};
  c.entity_mask = mark_entities(c.words, explicit_entities);
  return c;
}

// ---------------------------------------------------------------------------

enum class EntitySource { web_caption, title, summary };

struct PoolEntity {
  std::vector<std::string> words;
  EntitySource source;
};

// Entities in priority order (web caption, then title, then summary),
// deduplicated case-insensitively.
class EntityPool {
 public:
  EntityPool() = default;

  // Returns false when an equal entity is already pooled or `words` is empty.
  bool add(std::vector<std::string> words, EntitySource source) {
    std::vector<std::string> key;
    std::vector<std::string> clean;
    for (const auto& w : words) {
      auto core = detail::word_core(w);
      if (core.empty()) continue;
      clean.emplace_back(core);
      key.push_back(detail::fold(w));
    }
    if (clean.empty()) return false;
    if (std::find(keys_.begin(), keys_.end(), key) != keys_.end()) return false;
    keys_.push_back(std::move(key));
    entries_.push_back({std::move(clean), source});
    return true;
  }

  // Adds every recognized entity run in `text`. Runs break at punctuation.
  void add_from_text(std::string_view text, EntitySource source) {
    const auto words = split_words(text);
    const auto mask = recognize_entities(words);
    std::vector<std::string> run;
    for (std::size_t i = 0; i <= words.size(); ++i) {
      const bool take = i < words.size() && mask[i];
      if (take) run.push_back(words[i]);
      if (!take || detail::ends_phrase(words[i])) {
        if (!run.empty()) add(std::move(run), source);
        run.clear();
      }
    }
  }

  static EntityPool from_sources(std::optional<std::string_view> web_caption, std::optional<std::string_view> title,
                                 std::optional<std::string_view> summary) {
    EntityPool pool;
    if (web_caption) pool.add_from_text(*web_caption, EntitySource::web_caption);
    if (title) pool.add_from_text(*title, EntitySource::title);
    if (summary) pool.add_from_text(*summary, EntitySource::summary);
    return pool;
  }

  std::span<const PoolEntity> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

 private:
  std::vector<PoolEntity> entries_;
  std::vector<std::vector<std::string>> keys_;
};

// ---------------------------------------------------------------------------

enum class ImportanceMode { tail, idf };

struct NormalizerConfig {
  std::size_t max_words = 104;
  std::size_t min_words = 90;
  ImportanceMode importance = ImportanceMode::tail;

  void validate() const {
    if (max_words < 1 || min_words < 1) throw ConfigError("word limits must be >= 1");
    if (min_words > max_words) throw ConfigError("min_words must not exceed max_words");
  }
};

inline Caption gaussian_truncate(const Caption& c, std::size_t max_words) {
  if (max_words < 1) throw ConfigError("max_words must be >= 1");
  if (c.size() <= max_words) return c;
  const auto n = static_cast<std::ptrdiff_t>(max_words);
  return {{c.words.begin(), c.words.begin() + n}, {c.entity_mask.begin(), c.entity_mask.begin() + n}};
}

// Removes non-entity words until the caption fits. In tail mode the highest
// index goes first; in idf mode the lowest-IDF word goes first (ties: higher
// index first). If only entity words remain and the caption is still too
// long, the remainder is cut with gaussian_truncate.
inline Caption semantic_truncate(const Caption& c, std::size_t max_words, ImportanceMode mode = ImportanceMode::tail,
                                 const DocFreqTable* dft = nullptr) {
  if (max_words < 1) throw ConfigError("max_words must be >= 1");
  if (c.size() <= max_words) return c;
  if (mode == ImportanceMode::idf && dft == nullptr) {
    throw ConfigError("idf importance mode needs a document-frequency table");
  }

  std::vector<std::size_t> removable;
  for (std::size_t i = 0; i < c.size(); ++i)
    if (!c.entity_mask[i]) removable.push_back(i);

  if (mode == ImportanceMode::tail) {
    std::reverse(removable.begin(), removable.end());
  } else {
    std::vector<double> weight(c.size(), 0.0);
    for (std::size_t i : removable)
      for (const auto& tok : tokenize(c.words[i]).tokens) weight[i] = std::max(weight[i], dft->idf(tok));
    std::stable_sort(removable.begin(), removable.end(), [&](std::size_t a, std::size_t b) {
      if (weight[a] != weight[b]) return weight[a] < weight[b];
      return a > b;
    });
  }

  const std::size_t excess = c.size() - max_words;
  std::vector<bool> drop(c.size(), false);
  for (std::size_t k = 0; k < std::min(excess, removable.size()); ++k) drop[removable[k]] = true;

  Caption out;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (drop[i]) continue;
    out.words.push_back(c.words[i]);
    out.entity_mask.push_back(c.entity_mask[i]);
  }
  return gaussian_truncate(out, max_words);
}

// Appends pool entities in order, skipping any already present in the
// caption, until it reaches min_words or the pool runs out.
inline Caption enrich(const Caption& c, const EntityPool& pool, std::size_t min_words) {
  if (min_words < 1) throw ConfigError("min_words must be >= 1");
  if (c.size() >= min_words) return c;
  Caption out = c;
  std::vector<std::string> folded;
  folded.reserve(min_words);
  for (const auto& w : out.words) folded.push_back(detail::fold(w));
  for (const auto& e : pool.entries()) {
    if (out.size() >= min_words) break;
    std::vector<std::string> key;
    for (const auto& w : e.words) key.push_back(detail::fold(w));
    if (detail::contains_sequence(folded, key)) continue;
    for (std::size_t k = 0; k < e.words.size(); ++k) {
      out.words.push_back(e.words[k]);
      out.entity_mask.push_back(true);
      folded.push_back(key[k]);
    }
  }
  return out;
}

inline Caption normalize(const Caption& c, const EntityPool& pool, const NormalizerConfig& cfg = {},
                         const DocFreqTable* dft = nullptr) {
  cfg.validate();
  return semantic_truncate(enrich(c, pool, cfg.min_words), cfg.max_words, cfg.importance, dft);
}

}  // namespace recap
