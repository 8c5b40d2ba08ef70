#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

#include "finrag/document.hpp"
#include "finrag/gateway.hpp"
#include "finrag/text_index.hpp"
#include "finrag/vector_index.hpp"

struct sqlite3;

namespace finrag {

/// Thin RAII wrapper over one SQLite connection; every call is serialized.
class SqliteDb {
 public:
  /// ":memory:" opens a private in-memory database.
  explicit SqliteDb(const std::string& path);
  ~SqliteDb();
  SqliteDb(const SqliteDb&) = delete;
  SqliteDb& operator=(const SqliteDb&) = delete;

  sqlite3* handle() const { return db_; }
  std::recursive_mutex& mutex() const { return mu_; }
  void exec(const std::string& sql);

 private:
  sqlite3* db_ = nullptr;
  mutable std::recursive_mutex mu_;
};

/// Documents, paragraphs and paragraph vectors.
///
/// Schema:
///   documents(id TEXT PRIMARY KEY, source_type TEXT, published_at INTEGER, json TEXT)
///   paragraphs(doc_id TEXT, ordinal INTEGER, text TEXT, PRIMARY KEY(doc_id, ordinal))
///   paragraph_vectors(ref TEXT PRIMARY KEY, dim INTEGER, data BLOB)  -- little-endian f32
class DocStore {
 public:
  explicit DocStore(const std::string& path);

  /// Writes the document, its paragraphs and optional vectors in one
  /// transaction. Throws Error(DuplicateDocId); nothing persists on failure.
  void insert(const Document& doc, const std::vector<Paragraph>& paragraphs,
              const std::vector<std::vector<float>>& vectors = {});

  bool contains(const std::string& id) const;
  std::optional<Document> get(const std::string& id) const;
  std::optional<Paragraph> paragraph(const std::string& ref) const;
  std::vector<Paragraph> paragraphs(const std::string& doc_id) const;
  std::vector<Document> documents() const;
  std::vector<std::pair<std::string, std::vector<float>>> paragraph_vectors() const;
  std::size_t count() const;

 private:
  std::unique_ptr<SqliteDb> db_;
};

struct IngestReport {
  std::size_t fetched = 0;
  std::size_t new_docs = 0;
  std::size_t skipped = 0;
};

/// Document store plus the two retrieval indices kept in step with it.
class KnowledgeBase {
 public:
  /// Rebuilds both indices from the store. `embedder` may be null, in which
  /// case vector search is unavailable.
  KnowledgeBase(std::shared_ptr<DocStore> store, std::shared_ptr<ModelClient> embedder,
                TextIndexConfig text_config = {});

  /// Validates, embeds and persists one document, then indexes it.
  /// Throws DuplicateDocId, EmptyBodyAndSummary or InvalidDocument.
  std::vector<Paragraph> ingest(const Document& doc);
  /// Skips ids already stored.
  IngestReport ingest_all(const std::vector<Document>& docs);

  DocStore& store() { return *store_; }
  const DocStore& store() const { return *store_; }
  const TextIndex& text_index() const { return text_; }
  const VectorIndex& paragraph_index() const { return vectors_; }
  ModelClient* embedder() const { return embedder_.get(); }

  /// Embedding search over paragraphs; empty when no embedder is configured.
  std::vector<SimilarityHit> search_vector(const std::string& query, int k) const;

 private:
  std::shared_ptr<DocStore> store_;
  std::shared_ptr<ModelClient> embedder_;
  TextIndex text_;
  VectorIndex vectors_;
  std::mutex ingest_mu_;
};

/// Reads one Document per non-blank line.
std::vector<Document> parse_documents_jsonl(std::string_view content);
std::vector<Document> read_documents_jsonl(const std::filesystem::path& file);

enum class FetcherKind { periodic, realtime };

class SourceAdapter {
 public:
  virtual ~SourceAdapter() = default;
  /// Latest listing for periodic collection.
  virtual std::vector<Document> list();
  /// Ranked results for a live query.
  virtual std::vector<Document> search(const std::string& query, int limit);
};

/// Every *.jsonl file in a directory, in file-name order.
class FileDropAdapter : public SourceAdapter {
 public:
  explicit FileDropAdapter(std::filesystem::path dir) : dir_(std::move(dir)) {}
  std::vector<Document> list() override;

 private:
  std::filesystem::path dir_;
};

/// GET <url> returns JSONL for list(); GET <url>?q=..&limit=.. for search().
class HttpAdapter : public SourceAdapter {
 public:
  explicit HttpAdapter(std::string url, int timeout_ms = 10000) : url_(std::move(url)), timeout_ms_(timeout_ms) {}
  std::vector<Document> list() override;
  std::vector<Document> search(const std::string& query, int limit) override;

 private:
  std::string get(const std::string& path_and_query);
  std::string url_;
  int timeout_ms_;
};

/// Canned results keyed by exact query; list() returns every document once.
class FixtureAdapter : public SourceAdapter {
 public:
  explicit FixtureAdapter(std::map<std::string, std::vector<Document>> by_query)
      : by_query_(std::move(by_query)) {}
  std::vector<Document> list() override;
  std::vector<Document> search(const std::string& query, int limit) override;

 private:
  std::map<std::string, std::vector<Document>> by_query_;
};

struct Fetcher {
  std::string name;
  FetcherKind kind = FetcherKind::periodic;
  SourceType source_type = SourceType::news;
  /// Required for periodic fetchers.
  std::optional<std::chrono::seconds> schedule;
  std::shared_ptr<SourceAdapter> adapter;
};

/// Ingests unseen ids from the adapter's listing. Throws
/// Error(SourceUnavailable) with the store untouched.
IngestReport run_periodic(const Fetcher& fetcher, KnowledgeBase& kb);

/// Up to `limit` live results, tagged with the fetcher's source type and
/// ingested (already-stored ids are returned but not re-ingested). Throws
/// Error(QueryRejected) for an empty query or limit < 1.
std::vector<Document> run_realtime(const Fetcher& fetcher, KnowledgeBase& kb, const std::string& query, int limit);

/// Runs every periodic fetcher on its schedule on one background thread.
/// Failures are logged and retried on the next cycle.
class PeriodicScheduler {
 public:
  PeriodicScheduler(std::vector<Fetcher> fetchers, KnowledgeBase& kb);
  ~PeriodicScheduler();
  void stop();
  /// Completed cycles across all fetchers, successful or not.
  std::size_t cycles() const { return cycles_; }

 private:
  std::vector<Fetcher> fetchers_;
  KnowledgeBase& kb_;
  std::atomic<std::size_t> cycles_{0};
  std::jthread thread_;
};

/// One daily bar of market data.
struct Candle {
  std::string date;
  double open = 0, close = 0, high = 0, low = 0, volume = 0;
};

/// Market document: one text line per bar plus the rows as an attachment.
Document render_market_document(const std::string& id, const std::string& symbol, const std::string& company,
                                const std::vector<Candle>& candles, std::int64_t published_at);

}  // namespace finrag
