#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace finrag {

enum class ModelKind { chat_generation, scored_completion, embedding };

std::string_view to_string(ModelKind kind) noexcept;
ModelKind parse_model_kind(std::string_view s);

struct RetryPolicy {
  int max_attempts = 3;
  int backoff_base_ms = 100;
};

struct ModelHandle {
  std::string id;
  ModelKind kind = ModelKind::chat_generation;
  /// "stub:<name>" or an http(s) base URL such as "https://host/v1".
  std::string endpoint;
  int max_in_flight = 4;
  int timeout_ms = 60000;
  RetryPolicy retry;
  std::uint64_t seed = 0;
  /// Upstream model name sent in request bodies.
  std::string model;
  /// Environment variable holding the bearer key.
  std::string api_key_env = "FINRAG_API_KEY";
  /// Stub parameters (table, scores, dim, ...).
  nlohmann::json stub = nlohmann::json::object();

  bool is_stub() const { return endpoint.rfind("stub:", 0) == 0; }
  std::string stub_name() const { return is_stub() ? endpoint.substr(5) : std::string(); }

  static ModelHandle from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct GenerateParams {
  double temperature = 0.0;
  int max_tokens = 512;
  std::vector<std::string> stop;
};

struct ScoredCompletionResult {
  std::map<std::string, double> log_probs;
  std::string model_id;
  double latency_ms = 0.0;
};

/// Identifies one logical request; shared by all its retry attempts.
struct RequestContext {
  std::string request_key;
  int attempt = 1;
};

/// One upstream or stub. Implementations report failures by throwing
/// finrag::Error (Timeout, UpstreamError, UnsupportedByBackend, ...).
class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string generate(const std::string& prompt, const GenerateParams& params,
                               const RequestContext& ctx);
  /// Raw natural-log scores per candidate; missing candidates may be omitted.
  virtual std::map<std::string, double> score(const std::string& prompt,
                                              const std::vector<std::string>& candidates,
                                              const RequestContext& ctx);
  virtual std::vector<std::vector<float>> embed(const std::vector<std::string>& texts,
                                                const RequestContext& ctx);
};

/// Score standing in for "impossible" when a backend cannot rank a candidate.
inline constexpr double kMissingLogProb = -1e9;

/// Truncates at the earliest occurrence of any stop sequence.
std::string apply_stop(std::string text, const std::vector<std::string>& stop);

/// log-softmax over the map values.
std::map<std::string, double> normalize_log_probs(const std::map<std::string, double>& raw);

/// Replaces every occurrence of `secret` with "[REDACTED]".
std::string redact(std::string text, const std::string& secret);

/// Enables request/response logging for all clients.
void set_trace(bool enabled);
bool trace_enabled();

/// Thread-safe front for one handle: bounded concurrency, retries, stop
/// sequences, log-prob normalization and score emulation for chat backends.
class ModelClient {
 public:
  ModelClient(ModelHandle handle, std::shared_ptr<Backend> backend);

  const ModelHandle& handle() const { return handle_; }

  std::string generate(const std::string& prompt, const GenerateParams& params = {});
  ScoredCompletionResult score_candidates(const std::string& prompt,
                                          const std::vector<std::string>& candidates,
                                          bool normalize = true);
  std::vector<std::vector<float>> embed(const std::vector<std::string>& texts);

  /// Highest number of simultaneously outstanding backend calls observed.
  int peak_in_flight() const;

 private:
  template <class F>
  auto call(const std::string& op, const std::string& payload, F&& f) -> decltype(f(RequestContext{}));
  void acquire();
  void release();

  ModelHandle handle_;
  std::shared_ptr<Backend> backend_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  int in_flight_ = 0;
  int peak_ = 0;
  std::atomic<std::uint64_t> seq_{0};
};

using BackendFactory = std::function<std::shared_ptr<Backend>(const ModelHandle&)>;

/// Builds the backend for a handle: a registered stub or the HTTP client.
std::shared_ptr<Backend> make_backend(const ModelHandle& handle);

/// Backend for "stub:rule-agent": a deterministic stand-in for the QA agents
/// that reads the tags of the agent templates. Defined with the agents.
std::shared_ptr<Backend> make_rule_agent_backend(const ModelHandle& handle);

/// Adds or replaces a stub factory under "stub:<name>".
void register_stub(const std::string& name, BackendFactory factory);

/// Named handles loaded from a JSON config: {"models": [ {...}, ... ]}.
class ModelRegistry {
 public:
  static ModelRegistry from_json(const nlohmann::json& j);
  static ModelRegistry load(const std::filesystem::path& file);

  void add(ModelHandle handle);
  void add(ModelHandle handle, std::shared_ptr<Backend> backend);
  bool contains(const std::string& id) const { return clients_.contains(id); }
  /// Throws Error(ConfigError) for unknown ids.
  std::shared_ptr<ModelClient> get(const std::string& id) const;
  std::vector<std::string> ids() const;

 private:
  std::map<std::string, std::shared_ptr<ModelClient>> clients_;
};

/// Deterministic feature-hashed embedding of UTF-8 code point unigrams and
/// bigrams, L2-normalized. Shared by the hash-embed stub and tests.
std::vector<float> hash_embedding(std::string_view text, int dim, std::uint64_t seed = 0);

}  // namespace finrag
