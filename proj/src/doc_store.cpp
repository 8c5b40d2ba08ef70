#include "finrag/doc_store.hpp"

#include <sqlite3.h>

#include <algorithm>
#include <array>
#include <bit>
#include <condition_variable>
#include <cstring>
#include <set>

#include <spdlog/spdlog.h>

#include "finrag/error.hpp"
#include "finrag/text.hpp"

namespace finrag {

namespace {

float swap_to_little(float f) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(float)>>(f);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<float>(bytes);
  }
  return f;
}

class Stmt {
 public:
  Stmt(sqlite3* db, const char* sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql, -1, &st_, nullptr) != SQLITE_OK) {
      throw Error(Errc::StorageError, std::string("prepare: ") + sqlite3_errmsg(db));
    }
  }
  ~Stmt() { sqlite3_finalize(st_); }
  Stmt(const Stmt&) = delete;
  Stmt& operator=(const Stmt&) = delete;

  Stmt& bind(int i, const std::string& s) {
    sqlite3_bind_text(st_, i, s.data(), static_cast<int>(s.size()), SQLITE_TRANSIENT);
    return *this;
  }
  Stmt& bind(int i, std::int64_t v) {
    sqlite3_bind_int64(st_, i, v);
    return *this;
  }
  Stmt& bind_blob(int i, const void* data, int n) {
    sqlite3_bind_blob(st_, i, data, n, SQLITE_TRANSIENT);
    return *this;
  }
  /// True while a row is available.
  bool step() {
    const int rc = sqlite3_step(st_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    throw Error(Errc::StorageError, sqlite3_errmsg(db_));
  }
  std::string text(int col) const {
    const auto* p = reinterpret_cast<const char*>(sqlite3_column_text(st_, col));
    return p ? std::string(p, static_cast<std::size_t>(sqlite3_column_bytes(st_, col))) : std::string();
  }
  std::int64_t int64(int col) const { return sqlite3_column_int64(st_, col); }
  std::vector<float> floats(int col) const {
    const auto n = static_cast<std::size_t>(sqlite3_column_bytes(st_, col));
    std::vector<float> out(n / 4);
    if (n) std::memcpy(out.data(), sqlite3_column_blob(st_, col), out.size() * 4);
    for (auto& f : out) f = swap_to_little(f);
    return out;
  }

 private:
  sqlite3* db_;
  sqlite3_stmt* st_ = nullptr;
};

}  // namespace

SqliteDb::SqliteDb(const std::string& path) {
  if (path != ":memory:") {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  }
  if (sqlite3_open_v2(path.c_str(), &db_, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX,
                      nullptr) != SQLITE_OK) {
    const std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
    sqlite3_close(db_);
    db_ = nullptr;
    throw Error(Errc::StorageError, "open " + path + ": " + msg);
  }
  sqlite3_busy_timeout(db_, 5000);
  exec("PRAGMA journal_mode=WAL");
  exec("PRAGMA foreign_keys=ON");
}

SqliteDb::~SqliteDb() { sqlite3_close(db_); }

void SqliteDb::exec(const std::string& sql) {
  std::lock_guard lock(mu_);
  char* err = nullptr;
  if (sqlite3_exec(db_, sql.c_str(), nullptr, nullptr, &err) != SQLITE_OK) {
    const std::string msg = err ? err : "unknown";
    sqlite3_free(err);
    throw Error(Errc::StorageError, msg);
  }
}

DocStore::DocStore(const std::string& path) : db_(std::make_unique<SqliteDb>(path)) {
  db_->exec(
      "CREATE TABLE IF NOT EXISTS documents(id TEXT PRIMARY KEY, source_type TEXT NOT NULL, "
      "published_at INTEGER NOT NULL, json TEXT NOT NULL);"
      "CREATE TABLE IF NOT EXISTS paragraphs(doc_id TEXT NOT NULL REFERENCES documents(id), ordinal INTEGER NOT NULL, "
      "text TEXT NOT NULL, PRIMARY KEY(doc_id, ordinal));"
      "CREATE TABLE IF NOT EXISTS paragraph_vectors(ref TEXT PRIMARY KEY, dim INTEGER NOT NULL, data BLOB NOT NULL);");
}

void DocStore::insert(const Document& doc, const std::vector<Paragraph>& paragraphs,
                      const std::vector<std::vector<float>>& vectors) {
  if (!vectors.empty() && vectors.size() != paragraphs.size()) {
    throw Error(Errc::InvalidArgument, "one vector per paragraph required");
  }
  std::lock_guard lock(db_->mutex());
  if (contains(doc.id)) throw Error(Errc::DuplicateDocId, doc.id);
  db_->exec("BEGIN IMMEDIATE");
  try {
    Stmt d(db_->handle(), "INSERT INTO documents(id, source_type, published_at, json) VALUES(?,?,?,?)");
    d.bind(1, doc.id).bind(2, std::string(to_string(doc.source_type))).bind(3, doc.published_at);
    d.bind(4, to_json(doc).dump());
    d.step();
    for (std::size_t i = 0; i < paragraphs.size(); ++i) {
      const auto& para = paragraphs[i];
      Stmt p(db_->handle(), "INSERT INTO paragraphs(doc_id, ordinal, text) VALUES(?,?,?)");
      p.bind(1, para.doc_id).bind(2, static_cast<std::int64_t>(para.ordinal)).bind(3, para.text);
      p.step();
      if (vectors.empty()) continue;
      std::vector<float> le = vectors[i];
      for (auto& f : le) f = swap_to_little(f);
      Stmt v(db_->handle(), "INSERT INTO paragraph_vectors(ref, dim, data) VALUES(?,?,?)");
      v.bind(1, para.ref()).bind(2, static_cast<std::int64_t>(le.size()));
      v.bind_blob(3, le.data(), static_cast<int>(le.size() * sizeof(float)));
      v.step();
    }
    db_->exec("COMMIT");
  } catch (...) {
    db_->exec("ROLLBACK");
    throw;
  }
}

bool DocStore::contains(const std::string& id) const {
  std::lock_guard lock(db_->mutex());
  Stmt s(db_->handle(), "SELECT 1 FROM documents WHERE id = ?");
  s.bind(1, id);
  return s.step();
}

std::optional<Document> DocStore::get(const std::string& id) const {
  std::lock_guard lock(db_->mutex());
  Stmt s(db_->handle(), "SELECT json FROM documents WHERE id = ?");
  s.bind(1, id);
  if (!s.step()) return std::nullopt;
  return document_from_json(nlohmann::json::parse(s.text(0)));
}

std::optional<Paragraph> DocStore::paragraph(const std::string& ref) const {
  const auto parsed = parse_paragraph_ref(ref);
  if (!parsed) return std::nullopt;
  std::lock_guard lock(db_->mutex());
  Stmt s(db_->handle(), "SELECT text FROM paragraphs WHERE doc_id = ? AND ordinal = ?");
  s.bind(1, parsed->first).bind(2, static_cast<std::int64_t>(parsed->second));
  if (!s.step()) return std::nullopt;
  return Paragraph{parsed->first, parsed->second, s.text(0)};
}

std::vector<Paragraph> DocStore::paragraphs(const std::string& doc_id) const {
  std::lock_guard lock(db_->mutex());
  Stmt s(db_->handle(), "SELECT ordinal, text FROM paragraphs WHERE doc_id = ? ORDER BY ordinal");
  s.bind(1, doc_id);
  std::vector<Paragraph> out;
  while (s.step()) out.push_back({doc_id, static_cast<int>(s.int64(0)), s.text(1)});
  return out;
}

std::vector<Document> DocStore::documents() const {
  std::lock_guard lock(db_->mutex());
  Stmt s(db_->handle(), "SELECT json FROM documents ORDER BY rowid");
  std::vector<Document> out;
  while (s.step()) out.push_back(document_from_json(nlohmann::json::parse(s.text(0))));
  return out;
}

std::vector<std::pair<std::string, std::vector<float>>> DocStore::paragraph_vectors() const {
  std::lock_guard lock(db_->mutex());
  Stmt s(db_->handle(), "SELECT ref, data FROM paragraph_vectors ORDER BY rowid");
  std::vector<std::pair<std::string, std::vector<float>>> out;
  while (s.step()) out.emplace_back(s.text(0), s.floats(1));
  return out;
}

std::size_t DocStore::count() const {
  std::lock_guard lock(db_->mutex());
  Stmt s(db_->handle(), "SELECT COUNT(*) FROM documents");
  s.step();
  return static_cast<std::size_t>(s.int64(0));
}

KnowledgeBase::KnowledgeBase(std::shared_ptr<DocStore> store, std::shared_ptr<ModelClient> embedder,
                             TextIndexConfig text_config)
    : store_(std::move(store)), embedder_(std::move(embedder)), text_(text_config) {
  for (const auto& d : store_->documents()) text_.index_document(d);
  for (const auto& [ref, vec] : store_->paragraph_vectors()) vectors_.add(ref, vec);
}

std::vector<Paragraph> KnowledgeBase::ingest(const Document& doc) {
  if (text::trim(doc.id).empty()) throw Error(Errc::InvalidDocument, "empty id");
  if (doc.published_at > text::now_seconds() + 86400) {
    throw Error(Errc::InvalidDocument, doc.id + " is published in the future");
  }
  auto paragraphs = split_paragraphs(doc);
  std::lock_guard lock(ingest_mu_);
  if (store_->contains(doc.id)) throw Error(Errc::DuplicateDocId, doc.id);
  std::vector<std::vector<float>> vecs;
  if (embedder_) {
    std::vector<std::string> texts;
    for (const auto& p : paragraphs) texts.push_back(p.text);
    vecs = embedder_->embed(texts);
    if (vectors_.count() > 0 && static_cast<int>(vecs.front().size()) != vectors_.dim()) {
      throw Error(Errc::DimensionMismatch, "embedder dimension changed");
    }
  }
  store_->insert(doc, paragraphs, vecs);
  text_.index_document(doc);
  for (std::size_t i = 0; i < vecs.size(); ++i) vectors_.add(paragraphs[i].ref(), vecs[i]);
  return paragraphs;
}

IngestReport KnowledgeBase::ingest_all(const std::vector<Document>& docs) {
  IngestReport r;
  r.fetched = docs.size();
  for (const auto& d : docs) {
    if (store_->contains(d.id)) {
      ++r.skipped;
      continue;
    }
    try {
      ingest(d);
      ++r.new_docs;
    } catch (const Error& e) {
      if (e.code() != Errc::DuplicateDocId) throw;
      ++r.skipped;
    }
  }
  return r;
}

std::vector<SimilarityHit> KnowledgeBase::search_vector(const std::string& query, int k) const {
  if (!embedder_ || vectors_.count() == 0 || text::trim(query).empty()) return {};
  return vectors_.top_k(embedder_->embed({query}).front(), k);
}

std::vector<Document> parse_documents_jsonl(std::string_view content) {
  std::vector<Document> out;
  std::size_t line_no = 0;
  for (const auto& line : text::split(content, '\n')) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(document_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::InvalidDocument, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<Document> read_documents_jsonl(const std::filesystem::path& file) {
  return parse_documents_jsonl(text::read_file(file));
}

std::vector<Document> SourceAdapter::list() { throw Error(Errc::SourceUnavailable, "adapter has no listing"); }

std::vector<Document> SourceAdapter::search(const std::string&, int) {
  throw Error(Errc::SourceUnavailable, "adapter has no live search");
}

std::vector<Document> FileDropAdapter::list() {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir_, ec)) throw Error(Errc::SourceUnavailable, dir_.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir_, ec)) {
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  }
  if (ec) throw Error(Errc::SourceUnavailable, dir_.string() + ": " + ec.message());
  std::sort(files.begin(), files.end());
  std::vector<Document> out;
  for (const auto& f : files) {
    auto docs = read_documents_jsonl(f);
    out.insert(out.end(), std::make_move_iterator(docs.begin()), std::make_move_iterator(docs.end()));
  }
  return out;
}

std::vector<Document> FixtureAdapter::list() {
  std::vector<Document> out;
  std::set<std::string> seen;
  for (const auto& [_, docs] : by_query_) {
    for (const auto& d : docs) {
      if (seen.insert(d.id).second) out.push_back(d);
    }
  }
  return out;
}

std::vector<Document> FixtureAdapter::search(const std::string& query, int limit) {
  auto it = by_query_.find(query);
  if (it == by_query_.end()) return {};
  const auto n = std::min<std::size_t>(it->second.size(), static_cast<std::size_t>(std::max(limit, 0)));
  return {it->second.begin(), it->second.begin() + static_cast<std::ptrdiff_t>(n)};
}

IngestReport run_periodic(const Fetcher& fetcher, KnowledgeBase& kb) {
  if (fetcher.kind != FetcherKind::periodic) throw Error(Errc::InvalidArgument, fetcher.name + " is not periodic");
  if (!fetcher.adapter) throw Error(Errc::SourceUnavailable, fetcher.name + " has no adapter");
  auto docs = fetcher.adapter->list();
  for (auto& d : docs) d.source_type = fetcher.source_type;
  return kb.ingest_all(docs);
}

std::vector<Document> run_realtime(const Fetcher& fetcher, KnowledgeBase& kb, const std::string& query, int limit) {
  if (fetcher.kind != FetcherKind::realtime) throw Error(Errc::InvalidArgument, fetcher.name + " is not realtime");
  if (text::trim(query).empty()) throw Error(Errc::QueryRejected, "empty query");
  if (limit < 1) throw Error(Errc::QueryRejected, "limit must be >= 1");
  if (!fetcher.adapter) throw Error(Errc::SourceUnavailable, fetcher.name + " has no adapter");
  auto docs = fetcher.adapter->search(query, limit);
  if (static_cast<int>(docs.size()) > limit) docs.resize(static_cast<std::size_t>(limit));
  for (auto& d : docs) {
    d.source_type = fetcher.source_type;
    if (!kb.store().contains(d.id)) {
      try {
        kb.ingest(d);
      } catch (const Error& e) {
        if (e.code() != Errc::DuplicateDocId) throw;
      }
    }
  }
  return docs;
}

PeriodicScheduler::PeriodicScheduler(std::vector<Fetcher> fetchers, KnowledgeBase& kb)
    : fetchers_(std::move(fetchers)), kb_(kb) {
  for (const auto& f : fetchers_) {
    if (f.kind != FetcherKind::periodic || !f.schedule) {
      throw Error(Errc::ConfigError, f.name + ": periodic fetchers need a schedule");
    }
  }
  thread_ = std::jthread([this](std::stop_token st) {
    std::vector<std::chrono::steady_clock::time_point> due(fetchers_.size(), std::chrono::steady_clock::now());
    std::mutex mu;
    std::condition_variable_any cv;
    while (!st.stop_requested()) {
      const auto now = std::chrono::steady_clock::now();
      auto next = now + std::chrono::hours(24);
      for (std::size_t i = 0; i < fetchers_.size(); ++i) {
        if (due[i] <= now) {
          try {
            const auto r = run_periodic(fetchers_[i], kb_);
            spdlog::info("{}: fetched {}, new {}, skipped {}", fetchers_[i].name, r.fetched, r.new_docs, r.skipped);
          } catch (const std::exception& e) {
            spdlog::warn("{}: {}", fetchers_[i].name, e.what());
          }
          ++cycles_;
          due[i] = now + *fetchers_[i].schedule;
        }
        next = std::min(next, due[i]);
      }
      std::unique_lock lock(mu);
      cv.wait_until(lock, st, next, [] { return false; });
    }
  });
}

PeriodicScheduler::~PeriodicScheduler() { stop(); }

void PeriodicScheduler::stop() {
  if (thread_.joinable()) {
    thread_.request_stop();
    thread_.join();
  }
}

Document render_market_document(const std::string& id, const std::string& symbol, const std::string& company,
                                const std::vector<Candle>& candles, std::int64_t published_at) {
  Document d;
  d.id = id;
  d.source_type = SourceType::market;
  d.title = company + " (" + symbol + ") daily prices";
  d.company_names = {company};
  d.published_at = published_at;
  nlohmann::json rows = nlohmann::json::array();
  std::string body;
  for (const auto& c : candles) {
    char line[256];
    std::snprintf(line, sizeof line, "%s %s %s open %.2f close %.2f high %.2f low %.2f volume %.0f", c.date.c_str(),
                  company.c_str(), symbol.c_str(), c.open, c.close, c.high, c.low, c.volume);
    body += line;
    body += '\n';
    rows.push_back({{"date", c.date}, {"open", c.open}, {"close", c.close}, {"high", c.high}, {"low", c.low},
                    {"volume", c.volume}});
  }
  if (!candles.empty()) {
    const auto& first = candles.front();
    const auto& last = candles.back();
    char summary[256];
    std::snprintf(summary, sizeof summary, "%s %s closed at %.2f on %s, %+.2f%% since %s", company.c_str(),
                  symbol.c_str(), last.close, last.date.c_str(),
                  first.close != 0 ? 100.0 * (last.close - first.close) / first.close : 0.0, first.date.c_str());
    d.summary = summary;
  }
  d.body = body;
  d.attachment = nlohmann::json{{"symbol", symbol}, {"candles", rows}};
  return d;
}

}  // namespace finrag
