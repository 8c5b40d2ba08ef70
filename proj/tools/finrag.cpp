// finrag: command-line front end for evaluation, corpus tooling, indices,
// document ingestion, the QA service and FinFact judging.
#include <CLI11.hpp>

#include <csignal>
#include <iostream>
#include <map>

#include <spdlog/spdlog.h>

#include "finrag/corpus.hpp"
#include "finrag/doc_store.hpp"
#include "finrag/error.hpp"
#include "finrag/finfact.hpp"
#include "finrag/harness.hpp"
#include "finrag/rbfl.hpp"
#include "finrag/service.hpp"
#include "finrag/text.hpp"

namespace {

using namespace finrag;

std::atomic<QaService*> g_service{nullptr};

void on_signal(int) {
  if (auto* s = g_service.load()) s->stop();
}

ServiceConfig service_config(const std::string& path) {
  ServiceConfig cfg = path.empty() ? ServiceConfig{} : ServiceConfig::load(path);
  cfg.apply_env();
  return cfg;
}

std::map<std::string, std::string> read_responses(const std::string& file) {
  std::map<std::string, std::string> out;
  for (const auto& line : text::split(text::read_file(file), '\n')) {
    if (text::trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line);
    out[j.at("qa_id").get<std::string>()] = j.at("response").get<std::string>();
  }
  return out;
}

void print_json(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"finrag: financial exam evaluation, retrieval-based few-shot prompting and cited QA"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging and model request tracing");

  // eval
  auto* eval = app.add_subcommand("eval", "Run an exam benchmark");
  std::string eval_config, eval_mode, eval_pool, eval_models, eval_output;
  int eval_workers = 0, eval_shots = -1;
  bool eval_resume = false, eval_rbfl = false;
  eval->add_option("--config", eval_config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  eval->add_option("--workers", eval_workers, "Worker threads")->check(CLI::PositiveNumber);
  eval->add_flag("--resume", eval_resume, "Continue the run in the output directory");
  eval->add_option("--mode", eval_mode, "ao or cot")->check(CLI::IsMember({"ao", "cot"}));
  eval->add_option("--shots", eval_shots, "Demonstrations per prompt")->check(CLI::NonNegativeNumber);
  eval->add_flag("--rbfl", eval_rbfl, "Retrieve demonstrations from a corpus pool");
  eval->add_option("--pool", eval_pool, "Corpus pool index for --rbfl");
  eval->add_option("--models", eval_models, "Model registry (JSON)");
  eval->add_option("--output", eval_output, "Output directory");

  auto* replay = app.add_subcommand("replay", "Rebuild a report from records.jsonl");
  std::string replay_dir;
  replay->add_option("dir", replay_dir, "Run output directory")->required()->check(CLI::ExistingDirectory);

  // corpus
  auto* corpus = app.add_subcommand("corpus", "Clean and export the exemplar corpus");
  corpus->require_subcommand(1);
  auto* clean = corpus->add_subcommand("clean", "Split, normalize and deduplicate raw items");
  std::string clean_in, clean_out, clean_rejects, clean_cfg;
  int clean_workers = 1;
  clean->add_option("--input", clean_in, "Raw JSONL")->required()->check(CLI::ExistingFile);
  clean->add_option("--output", clean_out, "Cleaned JSONL")->required();
  clean->add_option("--rejects", clean_rejects, "Rejected items JSONL (default: <output>.rejects.jsonl)");
  clean->add_option("--config", clean_cfg, "Cleaning rules (JSON)")->check(CLI::ExistingFile);
  clean->add_option("--workers", clean_workers, "Parser threads")->check(CLI::PositiveNumber);
  auto* stats = corpus->add_subcommand("stats", "Corpus statistics");
  std::string stats_in;
  bool stats_json = false;
  stats->add_option("--input", stats_in, "Cleaned JSONL")->required()->check(CLI::ExistingFile);
  stats->add_flag("--json", stats_json, "Print JSON instead of a table");
  auto* exportc = corpus->add_subcommand("export-instructions", "Categorized instruction data");
  std::string export_in, export_out, export_uncat;
  exportc->add_option("--input", export_in, "Cleaned JSONL")->required()->check(CLI::ExistingFile);
  exportc->add_option("--output", export_out, "Instruction JSONL")->required();
  exportc->add_option("--uncategorized", export_uncat, "Ids that fit no category (JSONL)");

  // index
  auto* index = app.add_subcommand("index", "Build or query a corpus pool index");
  index->require_subcommand(1);
  auto* ibuild = index->add_subcommand("build", "Embed a cleaned corpus");
  std::string ib_corpus, ib_models, ib_embedder, ib_output;
  ibuild->add_option("--corpus", ib_corpus, "Cleaned JSONL")->required()->check(CLI::ExistingFile);
  ibuild->add_option("--models", ib_models, "Model registry (JSON)")->required()->check(CLI::ExistingFile);
  ibuild->add_option("--embedder", ib_embedder, "Embedding model id")->required();
  ibuild->add_option("--output", ib_output, "Index file")->required();
  auto* iquery = index->add_subcommand("query", "Nearest exemplars for a text");
  std::string iq_pool, iq_models, iq_embedder, iq_text;
  int iq_k = 5;
  iquery->add_option("--pool", iq_pool, "Index file")->required()->check(CLI::ExistingFile);
  iquery->add_option("--models", iq_models, "Model registry (JSON)")->required()->check(CLI::ExistingFile);
  iquery->add_option("--embedder", iq_embedder, "Embedding model id")->required();
  iquery->add_option("--text", iq_text, "Query text")->required();
  iquery->add_option("-k", iq_k, "Number of shots")->check(CLI::PositiveNumber);

  // documents
  std::string svc_config;
  auto* ingest = app.add_subcommand("ingest", "Add documents to the store");
  std::string ingest_file;
  ingest->add_option("file", ingest_file, "Documents JSONL")->required()->check(CLI::ExistingFile);
  ingest->add_option("--config", svc_config, "Service configuration (JSON)");
  auto* fetch = app.add_subcommand("fetch", "Run one fetcher");
  std::string fetch_source, fetch_query;
  int fetch_limit = 10;
  fetch->add_option("--source", fetch_source, "Fetcher name")->required();
  fetch->add_option("--query", fetch_query, "Query for a realtime fetcher");
  fetch->add_option("--limit", fetch_limit, "Realtime result limit");
  fetch->add_option("--config", svc_config, "Service configuration (JSON)");
  auto* search = app.add_subcommand("search", "Search the document store");
  std::string search_text, search_mode = "text";
  int search_k = 10;
  search->add_option("--text", search_text, "Query")->required();
  search->add_option("--mode", search_mode, "text or vector")->check(CLI::IsMember({"text", "vector"}));
  search->add_option("-k", search_k, "Hits")->check(CLI::PositiveNumber);
  search->add_option("--config", svc_config, "Service configuration (JSON)");
  auto* serve = app.add_subcommand("serve", "Run the QA HTTP service");
  int serve_port = -1;
  serve->add_option("--config", svc_config, "Service configuration (JSON)");
  serve->add_option("--port", serve_port, "Port (0 picks a free one)");

  // finfact
  auto* finfact = app.add_subcommand("finfact", "FinFact question generation and judging");
  finfact->require_subcommand(1);
  auto* fgen = finfact->add_subcommand("generate", "Questions from news articles");
  std::string fg_articles, fg_kind = "structural", fg_category = "financial", fg_models, fg_model, fg_output;
  int fg_year = 0, fg_max = 8;
  fgen->add_option("--articles", fg_articles, "Articles JSONL")->required()->check(CLI::ExistingFile);
  fgen->add_option("--kind", fg_kind, "structural or conversational")
      ->check(CLI::IsMember({"structural", "conversational"}));
  fgen->add_option("--category", fg_category, "financial, political, technical or sports");
  fgen->add_option("--year", fg_year, "Year of the news source");
  fgen->add_option("--max-items", fg_max, "Questions per article")->check(CLI::PositiveNumber);
  fgen->add_option("--models", fg_models, "Model registry (JSON)")->required()->check(CLI::ExistingFile);
  fgen->add_option("--model", fg_model, "Generator model id")->required();
  fgen->add_option("--output", fg_output, "FactQA JSONL")->required();
  auto* fjudge = finfact->add_subcommand("judge", "Pairwise judging of two systems");
  std::string fj_qa, fj_articles, fj_resp_a, fj_resp_b, fj_sys_a, fj_sys_b, fj_models, fj_judge, fj_output;
  fjudge->add_option("--qa", fj_qa, "FactQA JSONL")->required()->check(CLI::ExistingFile);
  fjudge->add_option("--articles", fj_articles, "Articles JSONL (conversational references)");
  fjudge->add_option("--system-a", fj_sys_a, "Name of system A")->required();
  fjudge->add_option("--responses-a", fj_resp_a, "JSONL {qa_id, response}")->required()->check(CLI::ExistingFile);
  fjudge->add_option("--system-b", fj_sys_b, "Name of system B")->required();
  fjudge->add_option("--responses-b", fj_resp_b, "JSONL {qa_id, response}")->required()->check(CLI::ExistingFile);
  fjudge->add_option("--models", fj_models, "Model registry (JSON)")->required()->check(CLI::ExistingFile);
  fjudge->add_option("--judge", fj_judge, "Judge model id")->required();
  fjudge->add_option("--output", fj_output, "Verdicts JSONL")->required();
  auto* freport = finfact->add_subcommand("report", "Win rates from verdicts");
  std::string fr_verdicts, fr_json, fr_csv;
  freport->add_option("--verdicts", fr_verdicts, "Verdicts JSONL")->required()->check(CLI::ExistingFile);
  freport->add_option("--json", fr_json, "Report JSON path (default: stdout)");
  freport->add_option("--csv", fr_csv, "Bar-chart CSV path");
  auto* fvalidate = finfact->add_subcommand("validate", "Check a dataset against its manifest");
  std::string fv_manifest, fv_qa, fv_articles;
  fvalidate->add_option("--manifest", fv_manifest, "Manifest JSON")->required()->check(CLI::ExistingFile);
  fvalidate->add_option("--qa", fv_qa, "FactQA JSONL")->required()->check(CLI::ExistingFile);
  fvalidate->add_option("--articles", fv_articles, "Articles JSONL")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);
  set_trace(verbose);

  try {
    if (*eval) {
      auto j = nlohmann::json::parse(text::read_file(eval_config));
      if (eval_workers > 0) j["workers"] = eval_workers;
      if (!eval_mode.empty()) j["mode"] = eval_mode;
      if (eval_shots >= 0) j["k_shots"] = eval_shots;
      if (eval_rbfl) j["rbfl"]["enabled"] = true;
      if (!eval_pool.empty()) j["rbfl"]["pool"] = std::filesystem::absolute(eval_pool).string();
      if (!eval_models.empty()) j["models"] = std::filesystem::absolute(eval_models).string();
      if (!eval_output.empty()) j["output_dir"] = std::filesystem::absolute(eval_output).string();
      const auto cfg = RunConfig::from_json(j, std::filesystem::path(eval_config).parent_path());
      RunOutcome out;
      if (eval_resume) {
        const auto models = cfg.models_config.empty() ? ModelRegistry{} : ModelRegistry::load(cfg.models_config);
        out = resume_run(cfg.output_dir, models);
      } else {
        out = run_benchmark(cfg);
      }
      std::cout << format_report_table({{cfg.model, out.report}});
      if (out.partial()) {
        std::cerr << out.failed.size() << " question(s) failed; rerun with --resume to retry them\n";
        return 2;
      }
      return 0;
    }
    if (*replay) {
      std::string label = "replay";
      const auto cfg_file = std::filesystem::path(replay_dir) / "config.json";
      if (std::filesystem::exists(cfg_file)) {
        label = nlohmann::json::parse(text::read_file(cfg_file)).value("model", label);
      }
      std::cout << format_report_table({{label, replay_log(replay_dir)}});
      return 0;
    }
    if (*clean) {
      const CleanConfig cfg = clean_cfg.empty() ? CleanConfig{} : CleanConfig::load(clean_cfg);
      const auto result = clean_corpus(read_raw_jsonl(clean_in), cfg, clean_workers);
      write_corpus_jsonl(clean_out, result.kept);
      write_rejects_jsonl(clean_rejects.empty() ? clean_out + ".rejects.jsonl" : clean_rejects, result.rejected);
      std::cout << "kept " << result.kept.size() << ", rejected " << result.rejected.size() << "\n";
      return 0;
    }
    if (*stats) {
      const auto report = corpus_stats(read_corpus_jsonl(stats_in));
      if (stats_json) {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& [name, value] : report) j.push_back({{"metric", name}, {"value", value}});
        print_json(j);
      } else {
        std::cout << format_stats(report);
      }
      return 0;
    }
    if (*exportc) {
      const auto result = export_instructions(read_corpus_jsonl(export_in));
      std::string out;
      for (const auto& r : result.records) out += to_json(r).dump() + "\n";
      text::write_file(export_out, out);
      if (!export_uncat.empty()) {
        std::string un;
        for (const auto& [id, reason] : result.uncategorized) {
          un += nlohmann::json{{"id", id}, {"reason", reason}}.dump() + "\n";
        }
        text::write_file(export_uncat, un);
      }
      std::cout << "exported " << result.records.size() << ", uncategorized " << result.uncategorized.size() << "\n";
      return 0;
    }
    if (*ibuild) {
      auto registry = ModelRegistry::load(ib_models);
      const auto pool = CorpusPool::build(read_corpus_jsonl(ib_corpus), *registry.get(ib_embedder));
      pool.save(ib_output);
      std::cout << "indexed " << pool.size() << " items, dimension " << pool.index().dim() << "\n";
      return 0;
    }
    if (*iquery) {
      auto registry = ModelRegistry::load(iq_models);
      const auto pool = CorpusPool::load(iq_pool);
      const auto r = retrieve_shots(pool, *registry.get(iq_embedder), iq_text, iq_k, false);
      nlohmann::json j = nlohmann::json::array();
      for (const auto& s : r.shots) j.push_back({{"id", s.id}, {"score", s.score}, {"question", pool.item(s.id).question}});
      print_json(j);
      return 0;
    }
    if (*ingest) {
      auto qa = QaApp::build(service_config(svc_config));
      const auto r = qa->kb->ingest_all(read_documents_jsonl(ingest_file));
      print_json({{"fetched", r.fetched}, {"new", r.new_docs}, {"skipped", r.skipped}});
      return 0;
    }
    if (*fetch) {
      auto qa = QaApp::build(service_config(svc_config));
      const auto& f = qa->fetcher(fetch_source);
      if (f.kind == FetcherKind::periodic) {
        const auto r = run_periodic(f, *qa->kb);
        print_json({{"fetched", r.fetched}, {"new", r.new_docs}, {"skipped", r.skipped}});
      } else {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& d : run_realtime(f, *qa->kb, fetch_query, fetch_limit)) j.push_back(to_json(d));
        print_json(j);
      }
      return 0;
    }
    if (*search) {
      auto qa = QaApp::build(service_config(svc_config));
      nlohmann::json j = nlohmann::json::array();
      if (search_mode == "text") {
        for (const auto& h : qa->kb->text_index().search(search_text, search_k, text::now_seconds())) {
          j.push_back({{"doc_id", h.doc_id},
                       {"final_score", h.final_score},
                       {"match_score", h.match_score},
                       {"recency_factor", h.recency_factor},
                       {"source_type", to_string(h.source_type)}});
        }
      } else {
        for (const auto& h : qa->kb->search_vector(search_text, search_k)) {
          j.push_back({{"ref_id", h.ref_id}, {"score", h.score}});
        }
      }
      print_json(j);
      return 0;
    }
    if (*serve) {
      auto cfg = service_config(svc_config);
      if (serve_port >= 0) cfg.port = serve_port;
      auto qa = QaApp::build(cfg);
      std::vector<Fetcher> periodic;
      for (const auto& f : qa->fetchers) {
        if (f.kind == FetcherKind::periodic) periodic.push_back(f);
      }
      std::unique_ptr<PeriodicScheduler> scheduler;
      if (!periodic.empty()) scheduler = std::make_unique<PeriodicScheduler>(periodic, *qa->kb);
      QaService service(*qa, cfg.token);
      const int port = service.bind(cfg.bind, cfg.port);
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      spdlog::info("listening on {}:{} with {} documents", cfg.bind, port, qa->docs->count());
      service.listen();
      g_service = nullptr;
      return 0;
    }
    if (*fgen) {
      auto registry = ModelRegistry::load(fg_models);
      auto model = registry.get(fg_model);
      const auto prompts = FinfactPrompts::defaults();
      GenerationOptions opts{parse_fact_category(fg_category), fg_year, fg_max};
      std::vector<FactQA> all;
      for (const auto& article : read_documents_jsonl(fg_articles)) {
        try {
          auto items = generate_factqa(article, parse_fact_kind(fg_kind), opts, *model, prompts);
          all.insert(all.end(), items.begin(), items.end());
        } catch (const Error& e) {
          if (e.code() != Errc::UnparseableGeneration) throw;
          spdlog::warn("{}", e.what());
        }
      }
      write_factqa_jsonl(fg_output, all);
      std::cout << "generated " << all.size() << " questions\n";
      return 0;
    }
    if (*fjudge) {
      auto registry = ModelRegistry::load(fj_models);
      auto judge = registry.get(fj_judge);
      const auto prompts = FinfactPrompts::defaults();
      std::map<std::string, Document> articles;
      if (!fj_articles.empty()) {
        for (auto& d : read_documents_jsonl(fj_articles)) articles.emplace(d.id, std::move(d));
      }
      const auto resp_a = read_responses(fj_resp_a);
      const auto resp_b = read_responses(fj_resp_b);
      std::vector<JudgeVerdict> verdicts;
      for (const auto& qa : read_factqa_jsonl(fj_qa)) {
        const auto a = resp_a.find(qa.id);
        const auto b = resp_b.find(qa.id);
        if (a == resp_a.end() || b == resp_b.end()) {
          spdlog::warn("{}: missing a response, skipped", qa.id);
          continue;
        }
        auto art = articles.find(qa.source_article_id);
        const auto ref = judge_reference(qa, art == articles.end() ? std::nullopt : std::optional(art->second));
        verdicts.push_back(judge_pairwise(qa, ref, fj_sys_a, a->second, fj_sys_b, b->second, *judge, prompts));
      }
      write_verdicts_jsonl(fj_output, verdicts);
      std::cout << "judged " << verdicts.size() << " questions\n";
      return 0;
    }
    if (*freport) {
      const auto verdicts = read_verdicts_jsonl(fr_verdicts);
      const auto report = win_rate_report(verdicts);
      if (fr_json.empty()) {
        print_json(report);
      } else {
        text::write_file(fr_json, report.dump(2) + "\n");
      }
      if (!fr_csv.empty()) text::write_file(fr_csv, win_rate_csv(verdicts));
      return 0;
    }
    if (*fvalidate) {
      const auto manifest = FinfactManifest::from_json(nlohmann::json::parse(text::read_file(fv_manifest)));
      validate_manifest(manifest, read_factqa_jsonl(fv_qa), read_documents_jsonl(fv_articles));
      std::cout << "manifest ok: " << manifest.total_questions << " questions\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
