#include "finrag/harness.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <spdlog/spdlog.h>

#include "finrag/answering.hpp"
#include "finrag/error.hpp"
#include "finrag/prompt.hpp"
#include "finrag/rbfl.hpp"
#include "finrag/text.hpp"

namespace finrag {

namespace fs = std::filesystem;

namespace {

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

std::string status_name(PredictionStatus s) {
  switch (s) {
    case PredictionStatus::ok: return "ok";
    case PredictionStatus::no_answer: return "no_answer";
    case PredictionStatus::error: return "error";
  }
  return "ok";
}

PredictionStatus parse_status(const std::string& s) {
  if (s == "ok") return PredictionStatus::ok;
  if (s == "no_answer") return PredictionStatus::no_answer;
  if (s == "error") return PredictionStatus::error;
  throw Error(Errc::InvalidArgument, "unknown status " + s);
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j, const fs::path& base) {
  RunConfig c;
  try {
    c.dataset_root = resolve(j.at("dataset_root").get<std::string>(), base);
    for (const auto& s : j.at("subjects")) {
      SubjectSpec spec;
      if (s.is_string()) {
        spec.name = s.get<std::string>();
      } else {
        spec.name = s.at("name").get<std::string>();
        spec.category = QuestionCategory::parse(s.value("category", std::string("CPA-SA")));
        spec.label = s.value("label", std::string());
      }
      if (spec.label.empty()) {
        spec.label = spec.name;
        std::replace(spec.label.begin(), spec.label.end(), '_', ' ');
      }
      c.subjects.push_back(std::move(spec));
    }
    c.model = j.at("model").get<std::string>();
    if (j.contains("models")) c.models_config = resolve(j["models"].get<std::string>(), base);
    c.k_shots = j.value("k_shots", c.k_shots);
    c.mode = parse_mode(j.value("mode", std::string("ao")));
    c.language = parse_language(j.value("language", std::string("zh")));
    c.workers = j.value("workers", c.workers);
    c.seed = j.value("seed", c.seed);
    c.split = parse_split(j.value("split", std::string("val")));
    c.output_dir = resolve(j.at("output_dir").get<std::string>(), base);
    if (j.contains("templates")) c.templates = resolve(j["templates"].get<std::string>(), base);
    c.max_tokens = j.value("max_tokens", c.max_tokens);
    if (j.contains("rbfl")) {
      const auto& r = j["rbfl"];
      c.rbfl.enabled = r.value("enabled", false);
      if (r.contains("pool")) c.rbfl.pool = resolve(r["pool"].get<std::string>(), base);
      c.rbfl.embedder = r.value("embedder", std::string());
      c.rbfl.ascending = r.value("ascending", true);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, std::string("run config: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::ConfigError) throw;
    throw Error(Errc::ConfigError, e.what());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const fs::path& file) {
  try {
    return from_json(nlohmann::json::parse(text::read_file(file)), fs::absolute(file).parent_path());
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, file.string() + ": " + e.what());
  }
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json subs = nlohmann::json::array();
  for (const auto& s : subjects) {
    subs.push_back({{"name", s.name}, {"category", s.category.label()}, {"label", s.label}});
  }
  nlohmann::json j = {{"dataset_root", fs::absolute(dataset_root).string()},
                      {"subjects", subs},
                      {"model", model},
                      {"k_shots", k_shots},
                      {"mode", to_string(mode)},
                      {"language", to_string(language)},
                      {"workers", workers},
                      {"seed", seed},
                      {"split", to_string(split)},
                      {"output_dir", fs::absolute(output_dir).string()},
                      {"max_tokens", max_tokens},
                      {"rbfl",
                       {{"enabled", rbfl.enabled},
                        {"pool", rbfl.pool.empty() ? "" : fs::absolute(rbfl.pool).string()},
                        {"embedder", rbfl.embedder},
                        {"ascending", rbfl.ascending}}}};
  if (!models_config.empty()) j["models"] = fs::absolute(models_config).string();
  if (!templates.empty()) j["templates"] = fs::absolute(templates).string();
  return j;
}

void RunConfig::validate() const {
  if (subjects.empty()) throw Error(Errc::ConfigError, "no subjects selected");
  if (model.empty()) throw Error(Errc::ConfigError, "no model selected");
  if (workers < 1) throw Error(Errc::ConfigError, "workers must be >= 1");
  if (k_shots < 0) throw Error(Errc::ConfigError, "k_shots must be >= 0");
  if (!rbfl.enabled && k_shots > kDevQuestionsPerSubject) {
    throw Error(Errc::ConfigError, "k_shots exceeds the " + std::to_string(kDevQuestionsPerSubject) +
                                       " dev questions per subject");
  }
  if (rbfl.enabled && (rbfl.pool.empty() || rbfl.embedder.empty())) {
    throw Error(Errc::ConfigError, "rbfl needs a pool and an embedder");
  }
  if (output_dir.empty()) throw Error(Errc::ConfigError, "no output_dir");
  std::set<std::string> names;
  for (const auto& s : subjects) {
    if (!names.insert(s.name).second) throw Error(Errc::ConfigError, "subject listed twice: " + s.name);
  }
}

std::vector<LogRecord> read_log(const fs::path& file, bool* truncated) {
  if (truncated) *truncated = false;
  std::vector<LogRecord> out;
  if (!fs::exists(file)) return out;
  const std::string content = text::read_file(file);
  const auto lines = text::split(content, '\n');
  std::set<std::string> seen;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& line = lines[i];
    const bool last = i + 1 == lines.size();
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      // Only an unterminated final line is an interrupted write.
      if (last) {
        if (truncated) *truncated = true;
        break;
      }
      throw CorruptLog(i + 1, "not valid JSON");
    }
    LogRecord r;
    try {
      r.question_id = j.at("question_id").get<std::string>();
      r.subject = j.at("subject").get<std::string>();
      r.category = j.at("category").get<std::string>();
      if (!j.at("gold").is_null()) r.gold = LetterSet::of(j["gold"].get<std::string>());
      r.predicted = LetterSet::of(j.at("predicted").get<std::string>());
      r.status = parse_status(j.at("status").get<std::string>());
    } catch (const std::exception& e) {
      throw CorruptLog(i + 1, e.what());
    }
    if (!seen.insert(r.question_id).second) throw CorruptLog(i + 1, "duplicate id " + r.question_id);
    r.raw = std::move(j);
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

struct WorkItem {
  std::string key;
  const SubjectSpec* subject = nullptr;
  const ExamQuestion* question = nullptr;
  const DemonstrationSet* demos = nullptr;
};

/// Single consumer of finished records; fsyncs every 32 lines.
class LogWriter {
 public:
  explicit LogWriter(const fs::path& file) {
    fd_ = ::open(file.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd_ < 0) throw Error(Errc::StorageError, "cannot open " + file.string());
    thread_ = std::jthread([this] { loop(); });
  }
  ~LogWriter() { close(); }

  void push(std::string line) {
    {
      std::lock_guard lock(mu_);
      queue_.push_back(std::move(line));
    }
    cv_.notify_one();
  }

  void close() {
    if (fd_ < 0) return;
    {
      std::lock_guard lock(mu_);
      done_ = true;
    }
    cv_.notify_one();
    if (thread_.joinable()) thread_.join();
    ::fsync(fd_);
    ::close(fd_);
    fd_ = -1;
  }

 private:
  void loop() {
    std::size_t since_sync = 0;
    for (;;) {
      std::string line;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return done_ || !queue_.empty(); });
        if (queue_.empty()) return;
        line = std::move(queue_.front());
        queue_.pop_front();
      }
      line += '\n';
      std::size_t off = 0;
      while (off < line.size()) {
        const auto n = ::write(fd_, line.data() + off, line.size() - off);
        if (n <= 0) {
          spdlog::error("records write failed");
          return;
        }
        off += static_cast<std::size_t>(n);
      }
      if (++since_sync == 32) {
        ::fsync(fd_);
        since_sync = 0;
      }
    }
  }

  int fd_ = -1;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::string> queue_;
  bool done_ = false;
  std::jthread thread_;
};

fs::path template_dir(const RunConfig& cfg) { return cfg.templates.empty() ? default_template_dir() : cfg.templates; }

std::string json_letters(const std::optional<LetterSet>& s) { return s ? s->str() : std::string(); }

void write_reports(const RunConfig& cfg, const AccuracyReport& report) {
  nlohmann::json j = to_json(report);
  j["model"] = cfg.model;
  j["mode"] = to_string(cfg.mode);
  j["language"] = to_string(cfg.language);
  j["k_shots"] = cfg.k_shots;
  text::write_file(cfg.output_dir / "report.json", j.dump(2) + "\n");
  std::string txt = format_report_table({{cfg.model, report}});
  txt += "\nper subject\n";
  for (const auto& [name, acc] : report.per_subject) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "  %-32s %5zu/%-5zu %6.2f%%\n", name.c_str(), acc.correct, acc.n,
                  100.0 * acc.accuracy);
    txt += buf;
  }
  txt += "no_answer " + std::to_string(report.no_answer) + ", errors " + std::to_string(report.errors) +
         ", unscored " + std::to_string(report.unscored) + "\n";
  text::write_file(cfg.output_dir / "report.txt", txt);
}

AccuracyReport report_from_records(const std::vector<LogRecord>& records) {
  std::vector<GradedItem> items;
  items.reserve(records.size());
  for (const auto& r : records) items.push_back({r.subject, r.category, r.gold, r.predicted, r.status});
  return aggregate_items(items);
}

RunOutcome execute(const RunConfig& cfg, const ModelRegistry& registry, bool resume) {
  cfg.validate();
  auto client = registry.get(cfg.model);
  const PromptBuilder builder = PromptBuilder::from_directory(template_dir(cfg));

  std::optional<CorpusPool> pool;
  std::shared_ptr<ModelClient> embedder;
  if (cfg.rbfl.enabled) {
    pool = CorpusPool::load(cfg.rbfl.pool);
    embedder = registry.get(cfg.rbfl.embedder);
  }

  // Questions and plain few-shot demonstrations per subject.
  std::map<std::string, std::vector<ExamQuestion>> questions;
  std::map<std::string, DemonstrationSet> demos;
  for (const auto& s : cfg.subjects) {
    questions[s.name] = load_dataset(cfg.dataset_root, s.name, cfg.split, cfg.language);
    std::vector<Demonstration> shots;
    if (!cfg.rbfl.enabled && cfg.k_shots > 0) {
      const auto dev = load_dataset(cfg.dataset_root, s.name, Split::dev, cfg.language);
      if (static_cast<int>(dev.size()) < cfg.k_shots) {
        throw Error(Errc::ConfigError, s.name + " has only " + std::to_string(dev.size()) + " dev questions");
      }
      for (int i = 0; i < cfg.k_shots; ++i) shots.push_back(Demonstration::from_question(dev[static_cast<std::size_t>(i)]));
    }
    demos[s.name] = builder.make_set(cfg.language, cfg.mode, s.label, s.category.multi_answer, std::move(shots));
  }

  fs::create_directories(cfg.output_dir);
  text::write_file(cfg.output_dir / "config.json", cfg.to_json().dump(2) + "\n");
  const fs::path log_file = cfg.output_dir / "records.jsonl";
  if (!resume) fs::remove(log_file);
  bool truncated = false;
  auto existing = read_log(log_file, &truncated);
  if (truncated) {
    // Rewrite without the partial line so appends start on a fresh line.
    std::string kept;
    for (const auto& r : existing) kept += r.raw.dump() + "\n";
    text::write_file(log_file, kept);
  }
  std::set<std::string> done;
  for (const auto& r : existing) done.insert(r.question_id);

  std::vector<WorkItem> work;
  for (const auto& s : cfg.subjects) {
    for (const auto& q : questions[s.name]) {
      WorkItem w{s.name + "/" + q.id, &s, &q, &demos[s.name]};
      if (!done.contains(w.key)) work.push_back(w);
    }
  }

  const auto workers = static_cast<std::size_t>(cfg.workers);
  std::vector<std::vector<const WorkItem*>> shards(workers);
  for (const auto& w : work) shards[text::fnv1a(w.key) % workers].push_back(&w);

  std::mutex results_mu;
  std::vector<LogRecord> fresh;
  std::vector<std::string> failed;
  {
    LogWriter writer(log_file);
    auto run_shard = [&](std::size_t shard) {
      for (const WorkItem* w : shards[shard]) {
        const auto start = std::chrono::steady_clock::now();
        nlohmann::json rec;
        LogRecord lr;
        try {
          std::string prompt;
          ScoredPrediction pred;
          nlohmann::json shots = nlohmann::json::array();
          if (pool) {
            RbflConfig rc;
            rc.k_shots = cfg.k_shots;
            rc.ascending = cfg.rbfl.ascending;
            rc.mode = cfg.mode;
            rc.language = cfg.language;
            auto r = answer_with_rbfl(rc, *pool, *embedder, *client, builder, *w->question, w->subject->label,
                                      w->subject->category.multi_answer);
            prompt = std::move(r.prompt);
            pred = std::move(r.prediction);
            for (const auto& s : r.retrieval.shots) shots.push_back({{"id", s.id}, {"score", s.score}});
            if (r.retrieval.pool_exhausted) rec["pool_exhausted"] = true;
          } else {
            prompt = builder.build_prompt(*w->demos, *w->question);
            pred = predict(*client, prompt, *w->question, w->subject->category.multi_answer, cfg.mode,
                           cfg.max_tokens);
          }
          lr.question_id = w->key;
          lr.subject = w->subject->name;
          lr.category = std::string(w->subject->category.label());
          lr.gold = w->question->answer;
          lr.predicted = pred.predicted;
          lr.status = pred.status;
          rec["question_id"] = lr.question_id;
          rec["subject"] = lr.subject;
          rec["category"] = lr.category;
          rec["prompt_hash"] = text::hex64(text::fnv1a(prompt));
          if (pred.raw_output) rec["raw_output"] = *pred.raw_output;
          if (pred.per_option_log_prob) {
            nlohmann::json scores = nlohmann::json::object();
            for (const auto& [k, v] : *pred.per_option_log_prob) scores[std::string(1, k)] = v;
            rec["scores"] = scores;
          }
          rec["predicted"] = pred.predicted.str();
          rec["gold"] = lr.gold ? nlohmann::json(json_letters(lr.gold)) : nlohmann::json(nullptr);
          rec["status"] = status_name(pred.status);
          if (!shots.empty()) rec["shots"] = shots;
          rec["latency_ms"] =
              std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
          rec["timestamp"] = text::format_timestamp(text::now_seconds());
        } catch (const Error& e) {
          spdlog::warn("{}: {}", w->key, e.what());
          std::lock_guard lock(results_mu);
          failed.push_back(w->key);
          continue;
        }
        lr.raw = rec;
        writer.push(rec.dump());
        std::lock_guard lock(results_mu);
        fresh.push_back(std::move(lr));
      }
    };
    if (workers == 1) {
      run_shard(0);
    } else {
      std::vector<std::jthread> pool_threads;
      for (std::size_t t = 0; t < workers; ++t) pool_threads.emplace_back(run_shard, t);
    }
    writer.close();
  }

  RunOutcome out;
  out.evaluated = fresh.size();
  std::sort(failed.begin(), failed.end());
  out.failed = failed;
  existing.insert(existing.end(), std::make_move_iterator(fresh.begin()), std::make_move_iterator(fresh.end()));
  out.report = report_from_records(existing);
  out.report.errors = failed.size();
  write_reports(cfg, out.report);
  return out;
}

ModelRegistry registry_for(const RunConfig& cfg) {
  if (cfg.models_config.empty()) throw Error(Errc::ConfigError, "run config names no models file");
  return ModelRegistry::load(cfg.models_config);
}

}  // namespace

RunOutcome run_benchmark(const RunConfig& cfg, const ModelRegistry& registry) {
  return execute(cfg, registry, false);
}

RunOutcome run_benchmark(const RunConfig& cfg) { return execute(cfg, registry_for(cfg), false); }

RunOutcome resume_run(const fs::path& output_dir, const ModelRegistry& registry) {
  const auto file = output_dir / "config.json";
  if (!fs::exists(file)) throw Error(Errc::MissingFile, file.string());
  auto cfg = RunConfig::from_json(nlohmann::json::parse(text::read_file(file)));
  cfg.output_dir = output_dir;
  read_log(output_dir / "records.jsonl");
  return execute(cfg, registry, true);
}

RunOutcome resume_run(const fs::path& output_dir) {
  const auto file = output_dir / "config.json";
  if (!fs::exists(file)) throw Error(Errc::MissingFile, file.string());
  auto cfg = RunConfig::from_json(nlohmann::json::parse(text::read_file(file)));
  return resume_run(output_dir, registry_for(cfg));
}

AccuracyReport replay_log(const fs::path& output_dir) {
  return report_from_records(read_log(output_dir / "records.jsonl"));
}

}  // namespace finrag
