// recap: batch command-line front end.
//
// Exit codes: 0 success, 1 processing error, 2 usage or I/O error.
// Diagnostics and progress go to stderr; stdout stays machine-readable.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "CLI11.hpp"
#include "recap/recap.hpp"

namespace fs = std::filesystem;
using recap::json;

namespace {

struct RetrieveOptions {
  std::string db, queries, output;
  std::size_t top_k = 100;
  bool no_rerank = false;
  unsigned threads = 1;
};

struct EvalOptions {
  std::string rankings, truth, captions, references, docfreq, clip_images, clip_texts, output;
  std::vector<std::size_t> ks{1, 10};
  double sigma = 6.0;
  std::size_t max_n = 4;
  double clip_weight = 2.5;
};

struct NormalizeOptions {
  std::string input, output, docfreq;
  std::size_t max_words = 104;
  std::size_t min_words = 90;
  std::string importance = "tail";
};

struct PromptOptions {
  std::string rankings, corpus, generic, summaries, web_captions, output, text_dir;
};

struct IngestOptions {
  std::string input, output;
  bool no_normalize = false;
};

struct MatchOptions {
  std::string retrieved, crawled, output;
};

struct CiderOptions {
  std::string candidates, references, docfreq, output;
  double sigma = 6.0;
  std::size_t max_n = 4;
};

struct DocfreqOptions {
  std::string references, output;
  std::size_t max_n = 4;
};

// Writes to a file, or to stdout when path is empty.
class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty()) {
      file_.open(path, std::ios::binary | std::ios::trunc);
      if (!file_) throw recap::IoError("cannot open " + path + " for writing");
    }
    path_ = path;
  }
  std::ostream& stream() { return path_.empty() ? std::cout : file_; }
  void close() {
    stream().flush();
    if (!stream()) throw recap::IoError("error writing " + (path_.empty() ? std::string("<stdout>") : path_));
  }

 private:
  std::string path_;
  std::ofstream file_;
};

recap::DocFreqTable docfreq_from_references(const std::vector<std::pair<std::string, std::vector<std::string>>>& refs,
                                            std::size_t max_n) {
  std::vector<recap::ReferenceGroup> groups;
  groups.reserve(refs.size());
  for (const auto& [id, texts] : refs) {
    recap::ReferenceGroup g;
    for (const auto& t : texts) g.push_back(recap::tokenize(t));
    groups.push_back(std::move(g));
  }
  return recap::build_docfreq(groups, max_n);
}

int run_ingest(const IngestOptions& o) {
  auto store = recap::ingest_embeddings(o.input, !o.no_normalize);
  recap::write_embeddings(store, o.output);
  std::cerr << "ingested " << store.size() << " records (dim " << store.dim() << ", patches "
            << store.patch_count() << ")\n";
  return 0;
}

int run_retrieve(const RetrieveOptions& o) {
  const auto db = recap::ingest_embeddings(o.db);
  const auto queries = recap::ingest_embeddings(o.queries);
  recap::RetrievalConfig cfg{o.top_k, !o.no_rerank};
  cfg.validate();
  if (o.threads < 1) throw recap::ConfigError("--threads must be >= 1");
  std::cerr << "retrieving " << queries.size() << " queries against " << db.size() << " records\n";
  const auto rankings = recap::retrieve_all(queries.records(), db, cfg, o.threads);
  recap::write_rankings(o.output, rankings);
  return 0;
}

double mean_cider(const std::vector<std::pair<std::string, std::string>>& captions,
                  const std::vector<std::pair<std::string, std::vector<std::string>>>& refs,
                  const recap::DocFreqTable& dft, const recap::CiderConfig& cfg,
                  std::vector<std::pair<std::string, double>>* per_caption = nullptr) {
  std::unordered_map<std::string, const std::vector<std::string>*> by_id;
  for (const auto& [id, texts] : refs) by_id[id] = &texts;
  double total = 0.0;
  for (const auto& [id, text] : captions) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw recap::MissingTruthError("no references for caption '" + id + "'");
    std::vector<recap::TokenizedCaption> tok;
    for (const auto& r : *it->second) tok.push_back(recap::tokenize(r));
    const double s = recap::cider_d(recap::tokenize(text), tok, dft, cfg);
    if (per_caption) per_caption->emplace_back(id, s);
    total += s;
  }
  return captions.empty() ? 0.0 : total / static_cast<double>(captions.size());
}

int run_eval(const EvalOptions& o) {
  recap::MetricReport report;
  if (o.rankings.empty() != o.truth.empty()) throw recap::ConfigError("--rankings and --truth go together");
  if (o.captions.empty() != o.references.empty()) throw recap::ConfigError("--captions and --references go together");
  if (o.clip_images.empty() != o.clip_texts.empty()) {
    throw recap::ConfigError("--clip-images and --clip-texts go together");
  }
  if (o.rankings.empty() && o.captions.empty() && o.clip_images.empty()) {
    throw recap::ConfigError("nothing to evaluate: pass rankings, captions or CLIP embeddings");
  }

  if (!o.rankings.empty()) {
    const auto rankings = recap::read_rankings(o.rankings);
    const auto truth = recap::load_truth(o.truth);
    report.retrieval = recap::retrieval_metrics(rankings, truth, o.ks);
  }
  if (!o.captions.empty()) {
    const auto captions = recap::read_captions(o.captions);
    const auto refs = recap::read_references(o.references);
    const auto dft = o.docfreq.empty() ? docfreq_from_references(refs, o.max_n) : recap::load_docfreq(o.docfreq);
    report.cider = mean_cider(captions, refs, dft, {o.sigma, o.max_n});
  }
  if (!o.clip_images.empty()) {
    const auto images = recap::ingest_embeddings(o.clip_images);
    const auto texts = recap::ingest_embeddings(o.clip_texts);
    double total = 0.0;
    for (const auto& t : texts.records()) total += recap::clip_score(images.get(t.id).global, t.global, o.clip_weight);
    report.clip_score = texts.empty() ? 0.0 : total / static_cast<double>(texts.size());
  }

  Output out(o.output);
  out.stream() << recap::report_to_json(report).dump() << '\n';
  out.close();
  return 0;
}

int run_normalize(const NormalizeOptions& o) {
  recap::NormalizerConfig cfg{o.max_words, o.min_words,
                              o.importance == "idf" ? recap::ImportanceMode::idf : recap::ImportanceMode::tail};
  cfg.validate();
  std::optional<recap::DocFreqTable> dft;
  if (!o.docfreq.empty()) dft = recap::load_docfreq(o.docfreq);
  if (cfg.importance == recap::ImportanceMode::idf && !dft) {
    throw recap::ConfigError("--importance-mode idf needs --docfreq");
  }

  auto optional_string = [](const json& obj, const char* key) -> std::optional<std::string> {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return std::nullopt;
    return it->get<std::string>();
  };

  recap::LineWriter w(o.output);
  std::size_t n = 0;
  recap::for_each_jsonl(o.input, [&](const json& obj, std::size_t lineno) {
    const auto where = recap::where(o.input, lineno);
    const auto id = recap::require_string(obj, "id", where);
    const auto text = recap::require_string(obj, "caption", where);
    recap::Caption caption;
    if (auto it = obj.find("entities"); it != obj.end() && !it->is_null()) {
      caption = recap::make_caption(text, it->get<std::vector<std::string>>());
    } else {
      caption = recap::make_caption(text);
    }
    const auto web = optional_string(obj, "web_caption");
    const auto title = optional_string(obj, "title");
    const auto summary = optional_string(obj, "summary");
    const auto pool = recap::EntityPool::from_sources(web, title, summary);
    const auto result = recap::normalize(caption, pool, cfg, dft ? &*dft : nullptr);
    w.line(json{{"id", id}, {"caption", result.text()}}.dump());
    ++n;
  });
  w.close();
  std::cerr << "normalized " << n << " captions\n";
  return 0;
}

int run_build_prompt(const PromptOptions& o) {
  const auto rankings = recap::read_rankings(o.rankings);
  const auto corpus = recap::load_corpus(o.corpus);
  const auto generic = recap::read_generated(o.generic);
  std::map<std::string, std::string> summaries, web;
  if (!o.summaries.empty()) summaries = recap::read_generated(o.summaries);
  if (!o.web_captions.empty()) web = recap::read_generated(o.web_captions);
  if (!o.text_dir.empty()) fs::create_directories(o.text_dir);

  std::optional<recap::LineWriter> w;
  if (!o.output.empty()) w.emplace(o.output);
  for (const auto& r : rankings) {
    if (r.entries.empty()) throw recap::QueryError(r.query_id, "ranking has no results");
    const std::string& top = r.entries.front().id;
    const auto* article = corpus.find_by_image(top);
    if (!article) article = corpus.find(top);
    if (!article) throw recap::QueryError(r.query_id, "unmatched article id '" + top + "'");

    recap::ContextBundle b;
    if (auto it = generic.find(r.query_id); it != generic.end()) b.generic_caption = it->second;
    b.title = article->title;
    if (auto it = summaries.find(article->id); it != summaries.end()) {
      b.summary = it->second;
    } else if (article->summary) {
      b.summary = *article->summary;
    }
    if (auto it = web.find(r.query_id); it != web.end()) {
      b.web_caption = it->second;
    } else if (article->web_captions) {
      for (const auto& wc : *article->web_captions) {
        if (wc.image_ref == top) {
          b.web_caption = wc.caption;
          break;
        }
      }
    }

    recap::Prompt p;
    try {
      p = recap::build_prompt(b);
    } catch (const recap::Error& e) {
      throw recap::QueryError(r.query_id, e.what());
    }
    if (w) {
      w->line(json{{"query_id", r.query_id}, {"article_id", article->id}, {"image_id", top}, {"system", p.system},
                   {"user", p.user}}
                  .dump());
    }
    if (!o.text_dir.empty()) {
      for (const auto& [suffix, text] : {std::pair{".system.txt", &p.system}, std::pair{".user.txt", &p.user}}) {
        const auto path = fs::path(o.text_dir) / (r.query_id + suffix);
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        f << *text;
        if (!f) throw recap::IoError("error writing " + path.string());
      }
    }
  }
  if (w) w->close();
  return 0;
}

int run_match(const MatchOptions& o) {
  const auto store = recap::ingest_embeddings(o.retrieved);
  recap::LineWriter w(o.output);
  recap::for_each_jsonl(o.crawled, [&](const json& obj, std::size_t lineno) {
    const auto where = recap::where(o.crawled, lineno);
    const auto id = recap::require_string(obj, "id", where);
    std::vector<recap::CrawledImage> crawled;
    for (const auto& c : obj.at("candidates")) {
      crawled.push_back({recap::require_string(c, "caption", where), c.at("embedding").get<std::vector<float>>()});
    }
    const auto m = recap::match_web_caption(store.get(id).global, crawled);
    w.line(json{{"id", id}, {"text", m.caption}, {"score", m.score}}.dump());
  });
  w.close();
  return 0;
}

int run_cider(const CiderOptions& o) {
  const auto captions = recap::read_captions(o.candidates);
  const auto refs = recap::read_references(o.references);
  const auto dft = o.docfreq.empty() ? docfreq_from_references(refs, o.max_n) : recap::load_docfreq(o.docfreq);
  std::vector<std::pair<std::string, double>> scores;
  const double mean = mean_cider(captions, refs, dft, {o.sigma, o.max_n}, &scores);
  Output out(o.output);
  for (const auto& [id, s] : scores) out.stream() << json{{"id", id}, {"cider", s}}.dump() << '\n';
  out.close();
  std::cerr << "mean CIDEr-D over " << scores.size() << " captions: " << mean << '\n';
  return 0;
}

int run_docfreq(const DocfreqOptions& o) {
  const auto refs = recap::read_references(o.references);
  recap::save_docfreq(docfreq_from_references(refs, o.max_n), o.output);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"recap: retrieval, caption evaluation and caption normalization"};
  app.require_subcommand(1);
  // Accepted before or after the subcommand. Keys live in a [subcommand]
  // section, e.g. "[retrieve]" then "top-k=20"; flags on the command line win.
  app.set_config("--config", "", "INI/TOML config file with one section per subcommand");
  app.fallthrough();

  IngestOptions ingest;
  auto* c_ingest = app.add_subcommand("ingest-embeddings", "Validate and L2-normalize a RECAPEMB file");
  c_ingest->add_option("--input", ingest.input, "Input RECAPEMB file")->required()->check(CLI::ExistingFile);
  c_ingest->add_option("--output", ingest.output, "Output RECAPEMB file")->required();
  c_ingest->add_flag("--no-normalize", ingest.no_normalize, "Keep vectors as stored");

  RetrieveOptions retrieve;
  auto* c_retrieve = app.add_subcommand("retrieve", "Two-stage retrieval for every query");
  c_retrieve->add_option("--db", retrieve.db, "Database RECAPEMB file")->required()->check(CLI::ExistingFile);
  c_retrieve->add_option("--queries", retrieve.queries, "Query RECAPEMB file")->required()->check(CLI::ExistingFile);
  c_retrieve->add_option("--output", retrieve.output, "Ranking JSON-lines output")->required();
  c_retrieve->add_option("--top-k", retrieve.top_k, "Stage-1 candidates")->capture_default_str()->check(
      CLI::PositiveNumber);
  c_retrieve->add_flag("--no-rerank", retrieve.no_rerank, "Skip patch-level re-ranking");
  c_retrieve->add_option("--threads", retrieve.threads, "Worker threads")->capture_default_str()->check(
      CLI::PositiveNumber);

  EvalOptions eval;
  auto* c_eval = app.add_subcommand("eval", "Retrieval metrics, CIDEr-D and CLIPScore report");
  c_eval->add_option("--rankings", eval.rankings, "Ranking JSON-lines")->check(CLI::ExistingFile);
  c_eval->add_option("--truth", eval.truth, "Ground truth JSON-lines")->check(CLI::ExistingFile);
  c_eval->add_option("--ks", eval.ks, "Recall cutoffs")->capture_default_str()->delimiter(',');
  c_eval->add_option("--captions", eval.captions, "Candidate captions JSON-lines")->check(CLI::ExistingFile);
  c_eval->add_option("--references", eval.references, "Reference captions JSON-lines")->check(CLI::ExistingFile);
  c_eval->add_option("--docfreq", eval.docfreq, "Document-frequency table JSON")->check(CLI::ExistingFile);
  c_eval->add_option("--sigma", eval.sigma, "Length penalty sigma")->capture_default_str();
  c_eval->add_option("--max-n", eval.max_n, "Largest n-gram order")->capture_default_str()->check(CLI::Range(1, 4));
  c_eval->add_option("--clip-images", eval.clip_images, "Image embeddings for CLIPScore")->check(CLI::ExistingFile);
  c_eval->add_option("--clip-texts", eval.clip_texts, "Caption text embeddings for CLIPScore")
      ->check(CLI::ExistingFile);
  c_eval->add_option("--clip-weight", eval.clip_weight, "CLIPScore weight")->capture_default_str();
  c_eval->add_option("--output", eval.output, "Report path (stdout when omitted)");

  NormalizeOptions norm;
  auto* c_norm = app.add_subcommand("normalize", "Normalize caption lengths");
  c_norm->add_option("--input", norm.input, "Caption JSON-lines")->required()->check(CLI::ExistingFile);
  c_norm->add_option("--output", norm.output, "Normalized caption JSON-lines")->required();
  c_norm->add_option("--max-words", norm.max_words)->capture_default_str()->check(CLI::PositiveNumber);
  c_norm->add_option("--min-words", norm.min_words)->capture_default_str()->check(CLI::PositiveNumber);
  c_norm->add_option("--importance-mode", norm.importance, "Which non-entity words go first")
      ->capture_default_str()
      ->check(CLI::IsMember({"tail", "idf"}));
  c_norm->add_option("--docfreq", norm.docfreq, "Document-frequency table (idf mode)")->check(CLI::ExistingFile);

  PromptOptions prompt;
  auto* c_prompt = app.add_subcommand("build-prompt", "Build caption-generation prompts from top-1 retrievals");
  c_prompt->add_option("--rankings", prompt.rankings)->required()->check(CLI::ExistingFile);
  c_prompt->add_option("--corpus", prompt.corpus, "Article corpus JSON-lines")->required()->check(CLI::ExistingFile);
  c_prompt->add_option("--generic", prompt.generic, "Generic captions {id,text} keyed by query")
      ->required()
      ->check(CLI::ExistingFile);
  c_prompt->add_option("--summaries", prompt.summaries, "Summaries {id,text} keyed by article")
      ->check(CLI::ExistingFile);
  c_prompt->add_option("--web-captions", prompt.web_captions, "Web captions {id,text} keyed by query")
      ->check(CLI::ExistingFile);
  c_prompt->add_option("--output", prompt.output, "Prompt JSON-lines output");
  c_prompt->add_option("--text-dir", prompt.text_dir, "Also write <query>.system.txt / <query>.user.txt here");

  MatchOptions match;
  auto* c_match = app.add_subcommand("match-web-captions", "Assign each retrieved image its crawled web caption");
  c_match->add_option("--retrieved", match.retrieved, "RECAPEMB with retrieved image embeddings")
      ->required()
      ->check(CLI::ExistingFile);
  c_match->add_option("--crawled", match.crawled, "Crawled pairs JSON-lines")->required()->check(CLI::ExistingFile);
  c_match->add_option("--output", match.output, "Web caption {id,text,score} JSON-lines")->required();

  CiderOptions cider;
  auto* c_cider = app.add_subcommand("cider", "Per-caption CIDEr-D scores");
  c_cider->add_option("--candidates", cider.candidates)->required()->check(CLI::ExistingFile);
  c_cider->add_option("--references", cider.references)->required()->check(CLI::ExistingFile);
  c_cider->add_option("--docfreq", cider.docfreq)->check(CLI::ExistingFile);
  c_cider->add_option("--sigma", cider.sigma)->capture_default_str();
  c_cider->add_option("--max-n", cider.max_n)->capture_default_str()->check(CLI::Range(1, 4));
  c_cider->add_option("--output", cider.output, "Score JSON-lines (stdout when omitted)");

  DocfreqOptions docfreq;
  auto* c_df = app.add_subcommand("docfreq", "Build a document-frequency table from references");
  c_df->add_option("--references", docfreq.references)->required()->check(CLI::ExistingFile);
  c_df->add_option("--max-n", docfreq.max_n)->capture_default_str()->check(CLI::Range(1, 4));
  c_df->add_option("--output", docfreq.output)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*c_ingest) return run_ingest(ingest);
    if (*c_retrieve) return run_retrieve(retrieve);
    if (*c_eval) return run_eval(eval);
    if (*c_norm) return run_normalize(norm);
    if (*c_prompt) return run_build_prompt(prompt);
    if (*c_match) return run_match(match);
    if (*c_cider) return run_cider(cider);
    if (*c_df) return run_docfreq(docfreq);
  } catch (const recap::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
