#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "finrag/agents.hpp"
#include "finrag/doc_store.hpp"
#include "finrag/gateway.hpp"

namespace finrag {

/// Hex of `bytes` cryptographically random bytes.
std::string random_id(std::size_t bytes = 16);

/// Sessions, turns and traces. Survives restarts; turn writes for one session
/// are serialized by the caller holding the session's mutex.
class SessionStore {
 public:
  explicit SessionStore(const std::string& path);
  ~SessionStore();

  /// New session with an unguessable id.
  std::shared_ptr<Session> create(std::int64_t now_ms);
  /// Loaded on first use after a restart; null for unknown ids.
  std::shared_ptr<Session> find(const std::string& id);

  void append_turn(const std::string& session_id, const DialogueTurn& turn);
  void put_trace(const std::string& trace_id, const std::string& session_id, const nlohmann::json& trace);
  std::optional<nlohmann::json> trace(const std::string& trace_id) const;

 private:
  std::unique_ptr<SqliteDb> db_;
  std::mutex cache_mu_;
  std::map<std::string, std::shared_ptr<Session>> cache_;
};

struct FetcherConfig {
  std::string name;
  FetcherKind kind = FetcherKind::periodic;
  SourceType source_type = SourceType::news;
  std::optional<int> schedule_seconds;
  /// "file" (with path) or "http" (with url).
  std::string adapter;
  std::string location;
};

/// Everything `finrag serve` needs. Relative paths resolve against the
/// config file's directory.
struct ServiceConfig {
  std::string bind = "127.0.0.1";
  int port = 8080;
  /// Empty disables the bearer check.
  std::string token;
  std::filesystem::path store_dir = "finrag-store";
  std::filesystem::path models_config;
  std::filesystem::path templates;
  std::string rewriter = "agent";
  std::string intention = "agent";
  std::string refiner;
  std::string responder = "agent";
  std::string embedder;
  PipelineConfig pipeline;
  std::vector<FetcherConfig> fetchers;

  static ServiceConfig from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
  static ServiceConfig load(const std::filesystem::path& file);
  /// FINRAG_BIND, FINRAG_PORT, FINRAG_TOKEN and FINRAG_STORE take precedence.
  void apply_env();
};

Fetcher make_fetcher(const FetcherConfig& cfg);

/// The wired-up system behind the service and the CLI.
struct QaApp {
  ModelRegistry registry;
  std::shared_ptr<DocStore> docs;
  std::unique_ptr<KnowledgeBase> kb;
  std::unique_ptr<SessionStore> sessions;
  std::unique_ptr<QaPipeline> pipeline;
  std::vector<Fetcher> fetchers;

  static std::unique_ptr<QaApp> build(const ServiceConfig& cfg);
  static std::unique_ptr<QaApp> build(const ServiceConfig& cfg, ModelRegistry registry);
  const Fetcher& fetcher(const std::string& name) const;
};

/// Splits an answer into stream chunks at sentence ends and every `max_chars`
/// code points; concatenating the chunks gives the answer back.
std::vector<std::string> stream_chunks(std::string_view answer, std::size_t max_chars = 48);

/// HTTP front for a QaApp.
///
///   POST /v1/sessions                 -> 201 {"session_id"}
///   GET  /v1/sessions/{id}            -> {"session_id", "created_at", "turns"}
///   POST /v1/sessions/{id}/chat       -> NDJSON: {"type":"chunk","text"}... then
///                                        {"type":"final","citations","trace_id","turn"}
///   GET  /v1/traces/{id}              -> trace JSON
///   GET  /v1/paragraphs/{ref}         -> {"ref","doc_id","ordinal","text","title",...}
///   POST /v1/ingest  (JSONL body)     -> {"fetched","new","skipped"}
///   GET  /v1/search?q=&mode=text|vector&k= -> hit list
///   GET  /healthz
class QaService {
 public:
  QaService(QaApp& app, std::string token = {});
  ~QaService();
  QaService(const QaService&) = delete;
  QaService& operator=(const QaService&) = delete;

  /// Binds (port 0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  void stop();
  bool running() const;

  /// Milliseconds clock used for turn timestamps; replaceable in tests.
  void set_clock(std::function<std::int64_t()> clock);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace finrag
