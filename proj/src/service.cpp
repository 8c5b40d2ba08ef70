#include <httplib.h>

#include "finrag/service.hpp"

#include <openssl/rand.h>
#include <sqlite3.h>

#include <chrono>
#include <cstdlib>

#include <spdlog/spdlog.h>

#include "finrag/error.hpp"
#include "finrag/text.hpp"

namespace finrag {

namespace {

std::int64_t wall_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

/// Runs one prepared statement to completion, collecting text columns.
std::vector<std::vector<std::string>> query_rows(SqliteDb& db, const char* sql, const std::vector<std::string>& args) {
  std::lock_guard lock(db.mutex());
  sqlite3_stmt* st = nullptr;
  if (sqlite3_prepare_v2(db.handle(), sql, -1, &st, nullptr) != SQLITE_OK) {
    throw Error(Errc::StorageError, sqlite3_errmsg(db.handle()));
  }
  for (std::size_t i = 0; i < args.size(); ++i) {
    sqlite3_bind_text(st, static_cast<int>(i + 1), args[i].data(), static_cast<int>(args[i].size()), SQLITE_TRANSIENT);
  }
  std::vector<std::vector<std::string>> rows;
  int rc = 0;
  while ((rc = sqlite3_step(st)) == SQLITE_ROW) {
    std::vector<std::string> row;
    for (int c = 0; c < sqlite3_column_count(st); ++c) {
      const auto* p = reinterpret_cast<const char*>(sqlite3_column_text(st, c));
      row.emplace_back(p ? std::string(p, static_cast<std::size_t>(sqlite3_column_bytes(st, c))) : std::string());
    }
    rows.push_back(std::move(row));
  }
  const std::string err = rc == SQLITE_DONE ? "" : sqlite3_errmsg(db.handle());
  sqlite3_finalize(st);
  if (!err.empty()) throw Error(Errc::StorageError, err);
  return rows;
}

nlohmann::json error_body(const std::string& code, const std::string& message) {
  return {{"error", code}, {"message", message}};
}

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

nlohmann::json text_hit_json(const TextHit& h) {
  return {{"doc_id", h.doc_id},
          {"match_score", h.match_score},
          {"recency_factor", h.recency_factor},
          {"final_score", h.final_score},
          {"published_at", text::format_timestamp(h.published_at)},
          {"source_type", to_string(h.source_type)}};
}

int status_for(Errc code) {
  switch (code) {
    case Errc::InvalidDocument:
    case Errc::InvalidArgument:
    case Errc::QueryRejected: return 400;
    case Errc::DuplicateDocId: return 409;
    case Errc::EmptyBodyAndSummary: return 422;
    case Errc::SourceUnavailable:
    case Errc::ModelError:
    case Errc::Timeout:
    case Errc::UpstreamError:
    case Errc::RateLimited: return 502;
    default: return 500;
  }
}

}  // namespace

std::string random_id(std::size_t bytes) {
  std::vector<unsigned char> buf(bytes);
  if (RAND_bytes(buf.data(), static_cast<int>(buf.size())) != 1) {
    throw Error(Errc::StorageError, "no entropy for id generation");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned char b : buf) {
    out += kHex[b >> 4];
    out += kHex[b & 15];
  }
  return out;
}

SessionStore::SessionStore(const std::string& path) : db_(std::make_unique<SqliteDb>(path)) {
  db_->exec(
      "CREATE TABLE IF NOT EXISTS sessions(id TEXT PRIMARY KEY, created_at INTEGER NOT NULL);"
      "CREATE TABLE IF NOT EXISTS turns(session_id TEXT NOT NULL REFERENCES sessions(id), seq INTEGER NOT NULL, "
      "json TEXT NOT NULL, PRIMARY KEY(session_id, seq));"
      "CREATE TABLE IF NOT EXISTS traces(id TEXT PRIMARY KEY, session_id TEXT NOT NULL, json TEXT NOT NULL);");
}

SessionStore::~SessionStore() = default;

std::shared_ptr<Session> SessionStore::create(std::int64_t now_ms) {
  auto s = std::make_shared<Session>();
  s->id = random_id();
  s->created_at = now_ms;
  query_rows(*db_, "INSERT INTO sessions(id, created_at) VALUES(?, ?)", {s->id, std::to_string(now_ms)});
  std::lock_guard lock(cache_mu_);
  cache_[s->id] = s;
  return s;
}

std::shared_ptr<Session> SessionStore::find(const std::string& id) {
  std::lock_guard lock(cache_mu_);
  if (auto it = cache_.find(id); it != cache_.end()) return it->second;
  const auto rows = query_rows(*db_, "SELECT created_at FROM sessions WHERE id = ?", {id});
  if (rows.empty()) return nullptr;
  auto s = std::make_shared<Session>();
  s->id = id;
  s->created_at = std::stoll(rows[0][0]);
  for (const auto& r : query_rows(*db_, "SELECT json FROM turns WHERE session_id = ? ORDER BY seq", {id})) {
    s->turns.push_back(turn_from_json(nlohmann::json::parse(r[0])));
  }
  cache_[id] = s;
  return s;
}

void SessionStore::append_turn(const std::string& session_id, const DialogueTurn& turn) {
  query_rows(*db_,
             "INSERT INTO turns(session_id, seq, json) "
             "VALUES(?1, (SELECT COALESCE(MAX(seq), -1) + 1 FROM turns WHERE session_id = ?1), ?2)",
             {session_id, to_json(turn).dump()});
}

void SessionStore::put_trace(const std::string& trace_id, const std::string& session_id, const nlohmann::json& trace) {
  query_rows(*db_, "INSERT INTO traces(id, session_id, json) VALUES(?, ?, ?)", {trace_id, session_id, trace.dump()});
}

std::optional<nlohmann::json> SessionStore::trace(const std::string& trace_id) const {
  const auto rows = query_rows(*db_, "SELECT json FROM traces WHERE id = ?", {trace_id});
  if (rows.empty()) return std::nullopt;
  return nlohmann::json::parse(rows[0][0]);
}

ServiceConfig ServiceConfig::from_json(const nlohmann::json& j, const std::filesystem::path& base) {
  auto resolve = [&](const std::string& p) -> std::filesystem::path {
    if (p.empty()) return {};
    const std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
  };
  ServiceConfig c;
  try {
    c.bind = j.value("bind", c.bind);
    c.port = j.value("port", c.port);
    c.token = j.value("token", c.token);
    c.store_dir = resolve(j.value("store", c.store_dir.string()));
    c.models_config = resolve(j.value("models", std::string()));
    c.templates = resolve(j.value("templates", std::string()));
    if (j.contains("agents")) {
      const auto& a = j["agents"];
      c.rewriter = a.value("rewriter", c.rewriter);
      c.intention = a.value("intention", c.intention);
      c.refiner = a.value("refiner", c.refiner);
      c.responder = a.value("responder", c.responder);
      c.embedder = a.value("embedder", c.embedder);
    }
    if (j.contains("pipeline")) {
      const auto& p = j["pipeline"];
      c.pipeline.recall_k = p.value("recall_k", c.pipeline.recall_k);
      c.pipeline.rerank_k = p.value("rerank_k", c.pipeline.rerank_k);
      c.pipeline.budget_chars = p.value("budget_chars", c.pipeline.budget_chars);
      c.pipeline.history_turns = p.value("history_turns", c.pipeline.history_turns);
      c.pipeline.realtime_limit = p.value("realtime_limit", c.pipeline.realtime_limit);
    }
    for (const auto& f : j.value("fetchers", nlohmann::json::array())) {
      FetcherConfig fc;
      fc.name = f.at("name").get<std::string>();
      const auto kind = f.value("kind", std::string("periodic"));
      if (kind != "periodic" && kind != "realtime") throw Error(Errc::ConfigError, "unknown fetcher kind " + kind);
      fc.kind = kind == "periodic" ? FetcherKind::periodic : FetcherKind::realtime;
      fc.source_type = parse_source_type(f.value("source_type", std::string("news")));
      if (f.contains("schedule_seconds")) fc.schedule_seconds = f["schedule_seconds"].get<int>();
      fc.adapter = f.value("adapter", std::string("file"));
      if (fc.adapter == "file") {
        fc.location = resolve(f.at("path").get<std::string>()).string();
      } else if (fc.adapter == "http") {
        fc.location = f.at("url").get<std::string>();
      } else {
        throw Error(Errc::ConfigError, "unknown adapter " + fc.adapter);
      }
      if (fc.kind == FetcherKind::periodic && (!fc.schedule_seconds || *fc.schedule_seconds < 1)) {
        throw Error(Errc::ConfigError, fc.name + ": periodic fetchers need schedule_seconds >= 1");
      }
      c.fetchers.push_back(std::move(fc));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::ConfigError) throw;
    throw Error(Errc::ConfigError, e.what());
  }
  return c;
}

ServiceConfig ServiceConfig::load(const std::filesystem::path& file) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text::read_file(file));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, file.string() + ": " + e.what());
  }
  return from_json(j, file.parent_path());
}

void ServiceConfig::apply_env() {
  if (const char* v = std::getenv("FINRAG_BIND"); v && *v) bind = v;
  if (const char* v = std::getenv("FINRAG_PORT"); v && *v) {
    try {
      port = std::stoi(v);
    } catch (const std::exception&) {
      throw Error(Errc::ConfigError, std::string("FINRAG_PORT is not a number: ") + v);
    }
  }
  if (const char* v = std::getenv("FINRAG_TOKEN"); v) token = v;
  if (const char* v = std::getenv("FINRAG_STORE"); v && *v) store_dir = v;
}

Fetcher make_fetcher(const FetcherConfig& cfg) {
  Fetcher f;
  f.name = cfg.name;
  f.kind = cfg.kind;
  f.source_type = cfg.source_type;
  if (cfg.schedule_seconds) f.schedule = std::chrono::seconds(*cfg.schedule_seconds);
  if (cfg.adapter == "http") {
    f.adapter = std::make_shared<HttpAdapter>(cfg.location);
  } else {
    f.adapter = std::make_shared<FileDropAdapter>(cfg.location);
  }
  return f;
}

std::unique_ptr<QaApp> QaApp::build(const ServiceConfig& cfg) {
  ModelRegistry registry = cfg.models_config.empty() ? ModelRegistry{} : ModelRegistry::load(cfg.models_config);
  return build(cfg, std::move(registry));
}

std::unique_ptr<QaApp> QaApp::build(const ServiceConfig& cfg, ModelRegistry registry) {
  auto app = std::make_unique<QaApp>();
  app->registry = std::move(registry);
  // The built-in agent keeps a bare configuration runnable offline.
  if (!app->registry.contains("agent")) {
    ModelHandle h;
    h.id = "agent";
    h.endpoint = "stub:rule-agent";
    app->registry.add(h);
  }
  app->docs = std::make_shared<DocStore>((cfg.store_dir / "docs.db").string());
  std::shared_ptr<ModelClient> embedder = cfg.embedder.empty() ? nullptr : app->registry.get(cfg.embedder);
  app->kb = std::make_unique<KnowledgeBase>(app->docs, embedder);
  app->sessions = std::make_unique<SessionStore>((cfg.store_dir / "sessions.db").string());
  AgentModels models;
  models.rewriter = app->registry.get(cfg.rewriter);
  models.intention = app->registry.get(cfg.intention);
  if (!cfg.refiner.empty()) models.refiner = app->registry.get(cfg.refiner);
  models.responder = app->registry.get(cfg.responder);
  auto prompts = cfg.templates.empty() ? AgentPrompts::defaults() : AgentPrompts::from_directory(cfg.templates / "agents");
  std::vector<Fetcher> realtime;
  for (const auto& fc : cfg.fetchers) {
    app->fetchers.push_back(make_fetcher(fc));
    if (fc.kind == FetcherKind::realtime) realtime.push_back(app->fetchers.back());
  }
  app->pipeline = std::make_unique<QaPipeline>(*app->kb, models, std::move(prompts), cfg.pipeline, realtime);
  return app;
}

const Fetcher& QaApp::fetcher(const std::string& name) const {
  for (const auto& f : fetchers) {
    if (f.name == name) return f;
  }
  throw Error(Errc::ConfigError, "no fetcher named " + name);
}

std::vector<std::string> stream_chunks(std::string_view answer, std::size_t max_chars) {
  if (max_chars == 0) throw Error(Errc::InvalidArgument, "chunk size must be positive");
  const auto cps = text::decode_utf8(answer);
  std::vector<std::string> out;
  std::u32string cur;
  for (char32_t c : cps) {
    cur.push_back(c);
    const bool boundary = c == U'。' || c == U'！' || c == U'？' || c == U'.' || c == U'!' || c == U'?' || c == U'\n';
    if (boundary || cur.size() >= max_chars) {
      out.push_back(text::encode_utf8(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(text::encode_utf8(cur));
  return out;
}

struct QaService::Impl {
  QaApp& app;
  std::string token;
  httplib::Server server;
  std::function<std::int64_t()> clock = wall_ms;

  Impl(QaApp& a, std::string t) : app(a), token(std::move(t)) { routes(); }

  void routes() {
    server.set_logger([](const httplib::Request& req, const httplib::Response& res) {
      spdlog::info("{} {} {} {}", req.method, req.path, res.status, req.remote_addr);
    });
    server.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
      if (token.empty() || req.path == "/healthz") return httplib::Server::HandlerResponse::Unhandled;
      if (req.get_header_value("Authorization") != "Bearer " + token) {
        send_json(res, 401, error_body("unauthorized", "missing or wrong bearer token"));
        return httplib::Server::HandlerResponse::Handled;
      }
      return httplib::Server::HandlerResponse::Unhandled;
    });
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const Error& e) {
        send_json(res, status_for(e.code()), error_body(std::string(to_string(e.code())), e.what()));
      } catch (const std::exception& e) {
        send_json(res, 500, error_body("internal", e.what()));
      }
    });

    server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"status", "ok"}});
    });

    server.Post("/v1/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      if (!text::trim(req.body).empty()) {
        auto body = nlohmann::json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object()) {
          send_json(res, 400, error_body("bad_request", "body must be a JSON object"));
          return;
        }
      }
      auto s = app.sessions->create(clock());
      send_json(res, 201, {{"session_id", s->id}, {"created_at", s->created_at}});
    });

    server.Get(R"(/v1/sessions/([0-9a-f]+))", [this](const httplib::Request& req, httplib::Response& res) {
      auto s = app.sessions->find(req.matches[1]);
      if (!s) {
        send_json(res, 404, error_body("not_found", "unknown session"));
        return;
      }
      std::lock_guard lock(s->mu);
      nlohmann::json turns = nlohmann::json::array();
      for (const auto& t : s->turns) turns.push_back(to_json(t));
      send_json(res, 200, {{"session_id", s->id}, {"created_at", s->created_at}, {"turns", turns}});
    });

    server.Post(R"(/v1/sessions/([0-9a-f]+)/chat)", [this](const httplib::Request& req, httplib::Response& res) {
      chat(req.matches[1], req, res);
    });
    // Ids outside the hex alphabet can never exist.
    server.Post(R"(/v1/sessions/([^/]+)/chat)", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, 404, error_body("not_found", "unknown session"));
    });

    server.Get(R"(/v1/traces/([0-9a-f]+))", [this](const httplib::Request& req, httplib::Response& res) {
      auto t = app.sessions->trace(req.matches[1]);
      if (!t) {
        send_json(res, 404, error_body("not_found", "unknown trace"));
        return;
      }
      send_json(res, 200, *t);
    });

    server.Get(R"(/v1/paragraphs/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string ref = httplib::detail::decode_url(req.matches[1], false);
      auto p = app.docs->paragraph(ref);
      if (!p) {
        send_json(res, 404, error_body("not_found", "unknown paragraph"));
        return;
      }
      nlohmann::json body = {{"ref", p->ref()}, {"doc_id", p->doc_id}, {"ordinal", p->ordinal}, {"text", p->text}};
      if (auto d = app.docs->get(p->doc_id)) {
        body["title"] = d->title;
        body["source_type"] = to_string(d->source_type);
        body["published_at"] = text::format_timestamp(d->published_at);
        if (d->url) body["url"] = *d->url;
        if (d->pdf_link) body["pdf_link"] = *d->pdf_link;
      }
      send_json(res, 200, body);
    });

    server.Post("/v1/ingest", [this](const httplib::Request& req, httplib::Response& res) {
      const auto docs = parse_documents_jsonl(req.body);
      const auto r = app.kb->ingest_all(docs);
      send_json(res, 200, {{"fetched", r.fetched}, {"new", r.new_docs}, {"skipped", r.skipped}});
    });

    server.Get("/v1/search", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string q = req.get_param_value("q");
      const std::string mode = req.has_param("mode") ? req.get_param_value("mode") : "text";
      int k = 10;
      if (req.has_param("k")) {
        try {
          k = std::stoi(req.get_param_value("k"));
        } catch (const std::exception&) {
          k = 0;
        }
      }
      if (k < 1) {
        send_json(res, 400, error_body("bad_request", "k must be a positive integer"));
        return;
      }
      nlohmann::json hits = nlohmann::json::array();
      if (mode == "text") {
        for (const auto& h : app.kb->text_index().search(q, k, clock() / 1000)) hits.push_back(text_hit_json(h));
      } else if (mode == "vector") {
        for (const auto& h : app.kb->search_vector(q, k)) hits.push_back({{"ref_id", h.ref_id}, {"score", h.score}});
      } else {
        send_json(res, 400, error_body("bad_request", "mode must be text or vector"));
        return;
      }
      send_json(res, 200, hits);
    });
  }

  void chat(const std::string& id, const httplib::Request& req, httplib::Response& res) {
    auto body = nlohmann::json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object()) {
      send_json(res, 400, error_body("bad_request", "body must be a JSON object"));
      return;
    }
    auto session = app.sessions->find(id);
    if (!session) {
      send_json(res, 404, error_body("not_found", "unknown session"));
      return;
    }
    const auto q = body.find("query");
    if (q == body.end() || !q->is_string() || text::trim(q->get<std::string>()).empty()) {
      send_json(res, 422, error_body("empty_query", "query must be a non-empty string"));
      return;
    }
    const std::string query = q->get<std::string>();
    const std::string trace_id = random_id();
    DialogueTurn answer;
    {
      std::lock_guard lock(session->mu);
      const std::int64_t last = session->turns.empty() ? 0 : session->turns.back().timestamp;
      DialogueTurn user{Role::user, query, {}, std::max(clock(), last + 1), std::nullopt, false};
      auto result = app.pipeline->answer(session->turns, query, user.timestamp);
      answer = std::move(result.turn);
      answer.timestamp = user.timestamp + 1;
      answer.trace_id = trace_id;
      result.trace["trace_id"] = trace_id;
      result.trace["session_id"] = session->id;
      app.sessions->put_trace(trace_id, session->id, result.trace);
      app.sessions->append_turn(session->id, user);
      app.sessions->append_turn(session->id, answer);
      session->turns.push_back(std::move(user));
      session->turns.push_back(answer);
    }
    if (answer.failed) {
      send_json(res, 502, {{"error", "pipeline_failed"}, {"trace_id", trace_id}, {"turn", to_json(answer)}});
      return;
    }
    std::string stream;
    for (const auto& chunk : stream_chunks(answer.text)) {
      stream += nlohmann::json{{"type", "chunk"}, {"text", chunk}}.dump() + "\n";
    }
    const auto turn_json = to_json(answer);
    stream += nlohmann::json{{"type", "final"},
                             {"citations", turn_json["citations"]},
                             {"trace_id", trace_id},
                             {"turn", turn_json}}
                  .dump() +
              "\n";
    auto shared = std::make_shared<std::string>(std::move(stream));
    res.status = 200;
    res.set_chunked_content_provider("application/x-ndjson",
                                     [shared](std::size_t offset, httplib::DataSink& sink) {
                                       // One event per write so clients can render progressively.
                                       if (offset >= shared->size()) {
                                         sink.done();
                                         return true;
                                       }
                                       const auto end = shared->find('\n', offset);
                                       sink.write(shared->data() + offset, end - offset + 1);
                                       return true;
                                     });
  }
};

QaService::QaService(QaApp& app, std::string token) : impl_(std::make_unique<Impl>(app, std::move(token))) {}

QaService::~QaService() { stop(); }

int QaService::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw Error(Errc::ConfigError, "cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw Error(Errc::ConfigError, "cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void QaService::listen() { impl_->server.listen_after_bind(); }

void QaService::stop() {
  if (impl_) impl_->server.stop();
}

bool QaService::running() const { return impl_->server.is_running(); }

void QaService::set_clock(std::function<std::int64_t()> clock) { impl_->clock = std::move(clock); }

}  // namespace finrag
