#include "finrag/gateway.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <spdlog/spdlog.h>

#include "finrag/error.hpp"
#include "finrag/text.hpp"

namespace finrag {

std::shared_ptr<Backend> make_http_backend(const ModelHandle& handle);

std::string_view to_string(ModelKind kind) noexcept {
  switch (kind) {
    case ModelKind::chat_generation: return "chat_generation";
    case ModelKind::scored_completion: return "scored_completion";
    case ModelKind::embedding: return "embedding";
  }
  return "chat_generation";
}

ModelKind parse_model_kind(std::string_view s) {
  if (s == "chat_generation") return ModelKind::chat_generation;
  if (s == "scored_completion") return ModelKind::scored_completion;
  if (s == "embedding") return ModelKind::embedding;
  throw Error(Errc::ConfigError, "unknown model kind '" + std::string(s) + "'");
}

ModelHandle ModelHandle::from_json(const nlohmann::json& j) {
  ModelHandle h;
  try {
    h.id = j.at("id").get<std::string>();
    h.kind = parse_model_kind(j.at("kind").get<std::string>());
    h.endpoint = j.at("endpoint").get<std::string>();
    h.max_in_flight = j.value("max_in_flight", h.max_in_flight);
    h.timeout_ms = j.value("timeout_ms", h.timeout_ms);
    if (j.contains("retry")) {
      h.retry.max_attempts = j["retry"].value("max_attempts", h.retry.max_attempts);
      h.retry.backoff_base_ms = j["retry"].value("backoff_base_ms", h.retry.backoff_base_ms);
    }
    h.seed = j.value("seed", std::uint64_t{0});
    h.model = j.value("model", h.id);
    h.api_key_env = j.value("api_key_env", h.api_key_env);
    if (j.contains("stub")) h.stub = j["stub"];
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, std::string("model handle: ") + e.what());
  }
  if (h.id.empty()) throw Error(Errc::ConfigError, "model handle without id");
  if (h.max_in_flight < 1) throw Error(Errc::ConfigError, h.id + ": max_in_flight must be >= 1");
  if (h.retry.max_attempts < 1) throw Error(Errc::ConfigError, h.id + ": retry.max_attempts must be >= 1");
  return h;
}

nlohmann::json ModelHandle::to_json() const {
  return {{"id", id},
          {"kind", to_string(kind)},
          {"endpoint", endpoint},
          {"max_in_flight", max_in_flight},
          {"timeout_ms", timeout_ms},
          {"retry", {{"max_attempts", retry.max_attempts}, {"backoff_base_ms", retry.backoff_base_ms}}},
          {"seed", seed},
          {"model", model},
          {"api_key_env", api_key_env},
          {"stub", stub}};
}

std::string Backend::generate(const std::string&, const GenerateParams&, const RequestContext&) {
  throw Error(Errc::UnsupportedByBackend, "backend cannot generate text");
}

std::map<std::string, double> Backend::score(const std::string&, const std::vector<std::string>&,
                                             const RequestContext&) {
  throw Error(Errc::UnsupportedByBackend, "backend returns no log-probabilities");
}

std::vector<std::vector<float>> Backend::embed(const std::vector<std::string>&, const RequestContext&) {
  throw Error(Errc::UnsupportedByBackend, "backend cannot embed");
}

std::string apply_stop(std::string text, const std::vector<std::string>& stop) {
  std::size_t cut = text.size();
  for (const auto& s : stop) {
    if (s.empty()) continue;
    cut = std::min(cut, text.find(s));
  }
  text.resize(cut);
  return text;
}

std::map<std::string, double> normalize_log_probs(const std::map<std::string, double>& raw) {
  if (raw.empty()) return {};
  double mx = -std::numeric_limits<double>::infinity();
  for (const auto& [_, v] : raw) mx = std::max(mx, v);
  double sum = 0.0;
  for (const auto& [_, v] : raw) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  std::map<std::string, double> out;
  for (const auto& [k, v] : raw) out[k] = v - lse;
  return out;
}

std::string redact(std::string text, const std::string& secret) {
  if (secret.empty()) return text;
  for (auto pos = text.find(secret); pos != std::string::npos; pos = text.find(secret, pos)) {
    text.replace(pos, secret.size(), "[REDACTED]");
    pos += 10;
  }
  return text;
}

namespace {

std::atomic<bool> g_trace{false};

std::uint64_t mix(std::uint64_t x) {
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ULL;
  x ^= x >> 33;
  return x;
}

double unit_hash(std::uint64_t seed, std::string_view a, std::string_view b) {
  const std::uint64_t h = mix(text::fnv1a(b, text::fnv1a(a, mix(seed + 0x9e3779b97f4a7c15ULL))));
  return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

class EchoBackend : public Backend {
 public:
  std::string generate(const std::string& prompt, const GenerateParams&, const RequestContext&) override {
    return prompt;
  }
};

/// Ordered (substring, response) rules; first match wins.
class ScriptedBackend : public Backend {
 public:
  explicit ScriptedBackend(const nlohmann::json& cfg) {
    if (cfg.contains("table")) {
      const auto& t = cfg["table"];
      if (t.is_object()) {
        for (auto it = t.begin(); it != t.end(); ++it) rules_.emplace_back(it.key(), it.value().get<std::string>());
      } else {
        for (const auto& row : t) rules_.emplace_back(row.at(0).get<std::string>(), row.at(1).get<std::string>());
      }
    }
    default_ = cfg.value("default", std::string());
  }
  std::string generate(const std::string& prompt, const GenerateParams&, const RequestContext&) override {
    for (const auto& [needle, response] : rules_) {
      if (prompt.find(needle) != std::string::npos) return response;
    }
    return default_;
  }

 private:
  std::vector<std::pair<std::string, std::string>> rules_;
  std::string default_;
};

class FixedScoreBackend : public Backend {
 public:
  explicit FixedScoreBackend(const nlohmann::json& cfg) {
    for (auto it = cfg.at("scores").begin(); it != cfg.at("scores").end(); ++it) {
      scores_[it.key()] = it.value().get<double>();
    }
  }
  std::map<std::string, double> score(const std::string&, const std::vector<std::string>& candidates,
                                      const RequestContext&) override {
    std::map<std::string, double> out;
    for (const auto& c : candidates) {
      auto it = scores_.find(c);
      if (it != scores_.end()) out[c] = it->second;
    }
    return out;
  }

 private:
  std::map<std::string, double> scores_;
};

class UniformBackend : public Backend {
 public:
  std::map<std::string, double> score(const std::string&, const std::vector<std::string>& candidates,
                                      const RequestContext&) override {
    std::map<std::string, double> out;
    for (const auto& c : candidates) out[c] = std::log(1.0 / static_cast<double>(candidates.size()));
    return out;
  }
};

/// Scores drawn from a hash of (seed, prompt, candidate).
class RandomScoreBackend : public Backend {
 public:
  explicit RandomScoreBackend(std::uint64_t seed) : seed_(seed) {}
  std::map<std::string, double> score(const std::string& prompt, const std::vector<std::string>& candidates,
                                      const RequestContext&) override {
    std::map<std::string, double> out;
    for (const auto& c : candidates) out[c] = std::log(1e-6 + unit_hash(seed_, prompt, c));
    return out;
  }

 private:
  std::uint64_t seed_;
};

/// Emits "<prefix><choice>" with the choice picked by a hash of (seed, prompt).
class RandomChoiceBackend : public Backend {
 public:
  RandomChoiceBackend(const nlohmann::json& cfg, std::uint64_t seed) : seed_(seed) {
    for (const auto& c : cfg.at("choices")) choices_.push_back(c.get<std::string>());
    if (choices_.empty()) throw Error(Errc::ConfigError, "random-choice stub needs choices");
    prefix_ = cfg.value("prefix", std::string("Answer: "));
  }
  std::string generate(const std::string& prompt, const GenerateParams&, const RequestContext&) override {
    const auto i = static_cast<std::size_t>(unit_hash(seed_, prompt, "choice") * choices_.size());
    return prefix_ + choices_[std::min(i, choices_.size() - 1)];
  }

 private:
  std::uint64_t seed_;
  std::vector<std::string> choices_;
  std::string prefix_;
};

class HashEmbedBackend : public Backend {
 public:
  HashEmbedBackend(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}
  std::vector<std::vector<float>> embed(const std::vector<std::string>& texts, const RequestContext&) override {
    std::vector<std::vector<float>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(hash_embedding(t, dim_, seed_));
    return out;
  }

 private:
  int dim_;
  std::uint64_t seed_;
};

/// Looks texts up in a table; unknown texts fall back to hash embeddings.
class ScriptedEmbedBackend : public Backend {
 public:
  ScriptedEmbedBackend(const nlohmann::json& cfg, std::uint64_t seed) : seed_(seed) {
    for (auto it = cfg.at("vectors").begin(); it != cfg.at("vectors").end(); ++it) {
      table_[it.key()] = it.value().get<std::vector<float>>();
    }
    dim_ = table_.empty() ? cfg.value("dim", 64) : static_cast<int>(table_.begin()->second.size());
  }
  std::vector<std::vector<float>> embed(const std::vector<std::string>& texts, const RequestContext&) override {
    std::vector<std::vector<float>> out;
    for (const auto& t : texts) {
      auto it = table_.find(t);
      out.push_back(it != table_.end() ? it->second : hash_embedding(t, dim_, seed_));
    }
    return out;
  }

 private:
  std::map<std::string, std::vector<float>> table_;
  int dim_ = 64;
  std::uint64_t seed_;
};

std::mutex& factories_mutex() {
  static std::mutex mu;
  return mu;
}

std::map<std::string, BackendFactory>& factories() {
  static std::map<std::string, BackendFactory> f = {
      {"echo", [](const ModelHandle&) { return std::make_shared<EchoBackend>(); }},
      {"scripted", [](const ModelHandle& h) { return std::make_shared<ScriptedBackend>(h.stub); }},
      {"fixed", [](const ModelHandle& h) { return std::make_shared<FixedScoreBackend>(h.stub); }},
      {"uniform", [](const ModelHandle&) { return std::make_shared<UniformBackend>(); }},
      {"random-score", [](const ModelHandle& h) { return std::make_shared<RandomScoreBackend>(h.seed); }},
      {"random-choice",
       [](const ModelHandle& h) { return std::make_shared<RandomChoiceBackend>(h.stub, h.seed); }},
      {"hash-embed",
       [](const ModelHandle& h) { return std::make_shared<HashEmbedBackend>(h.stub.value("dim", 64), h.seed); }},
      {"rule-agent", make_rule_agent_backend},
      {"scripted-embed",
       [](const ModelHandle& h) { return std::make_shared<ScriptedEmbedBackend>(h.stub, h.seed); }},
  };
  return f;
}

bool is_finite_map(const std::map<std::string, double>& m) {
  for (const auto& [_, v] : m) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace

void set_trace(bool enabled) { g_trace = enabled; }
bool trace_enabled() { return g_trace; }

std::vector<float> hash_embedding(std::string_view t, int dim, std::uint64_t seed) {
  if (dim < 1) throw Error(Errc::InvalidArgument, "embedding dimension must be positive");
  std::vector<double> acc(static_cast<std::size_t>(dim), 0.0);
  const auto cps = text::decode_utf8(t);
  auto bump = [&](std::u32string_view gram) {
    std::string key = text::encode_utf8(gram);
    const std::uint64_t h = mix(text::fnv1a(key, text::fnv1a("hash-embed", seed)));
    acc[h % static_cast<std::uint64_t>(dim)] += 1.0;
  };
  for (std::size_t i = 0; i < cps.size(); ++i) {
    bump(std::u32string_view(cps).substr(i, 1));
    if (i + 1 < cps.size()) bump(std::u32string_view(cps).substr(i, 2));
  }
  double norm = 0.0;
  for (double v : acc) norm += v * v;
  norm = std::sqrt(norm);
  std::vector<float> out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(norm > 0 ? acc[i] / norm : 0.0);
  return out;
}

ModelClient::ModelClient(ModelHandle handle, std::shared_ptr<Backend> backend)
    : handle_(std::move(handle)), backend_(std::move(backend)) {
  if (handle_.max_in_flight < 1) throw Error(Errc::ConfigError, handle_.id + ": max_in_flight must be >= 1");
}

void ModelClient::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return in_flight_ < handle_.max_in_flight; });
  ++in_flight_;
  peak_ = std::max(peak_, in_flight_);
}

void ModelClient::release() {
  {
    std::lock_guard lock(mu_);
    --in_flight_;
  }
  cv_.notify_one();
}

int ModelClient::peak_in_flight() const {
  std::lock_guard lock(mu_);
  return peak_;
}

template <class F>
auto ModelClient::call(const std::string& op, const std::string& payload, F&& f)
    -> decltype(f(RequestContext{})) {
  RequestContext ctx;
  ctx.request_key = handle_.id + "-" + op + "-" + text::hex64(text::fnv1a(payload)) + "-" +
                    std::to_string(seq_.fetch_add(1));
  const std::string secret = [&] {
    const char* k = std::getenv(handle_.api_key_env.c_str());
    return k ? std::string(k) : std::string();
  }();
  if (g_trace) {
    spdlog::info("[{}] {} request {}: {}", handle_.id, op, ctx.request_key, redact(payload, secret));
  }
  int last_status = 0;
  Errc last_code = Errc::UpstreamError;
  std::string last_message;
  for (int attempt = 1; attempt <= handle_.retry.max_attempts; ++attempt) {
    ctx.attempt = attempt;
    acquire();
    try {
      auto result = f(ctx);
      release();
      return result;
    } catch (const UpstreamError& e) {
      release();
      last_status = e.status();
      last_code = Errc::UpstreamError;
      last_message = e.what();
      const bool retryable = e.status() == 429 || e.status() >= 500 || e.status() == 0;
      if (!retryable) throw;
    } catch (const Error& e) {
      release();
      if (e.code() != Errc::Timeout) throw;
      last_code = Errc::Timeout;
      last_message = e.what();
    } catch (...) {
      release();
      throw;
    }
    if (g_trace) spdlog::warn("[{}] attempt {} failed: {}", handle_.id, attempt, redact(last_message, secret));
    if (attempt < handle_.retry.max_attempts && handle_.retry.backoff_base_ms > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(handle_.retry.backoff_base_ms << (attempt - 1)));
    }
  }
  if (last_code == Errc::Timeout) throw Error(Errc::Timeout, redact(last_message, secret));
  if (last_status == 429) {
    throw Error(Errc::RateLimited, handle_.id + " after " + std::to_string(handle_.retry.max_attempts) + " attempts");
  }
  throw UpstreamError(last_status, redact(last_message, secret));
}

std::string ModelClient::generate(const std::string& prompt, const GenerateParams& params) {
  if (prompt.empty()) throw Error(Errc::InvalidArgument, "empty prompt");
  if (handle_.kind == ModelKind::embedding) {
    throw Error(Errc::UnsupportedByBackend, handle_.id + " is an embedding handle");
  }
  std::string out = call("generate", prompt, [&](const RequestContext& ctx) {
    return backend_->generate(prompt, params, ctx);
  });
  out = apply_stop(std::move(out), params.stop);
  if (g_trace) spdlog::info("[{}] generate response: {}", handle_.id, out);
  return out;
}

ScoredCompletionResult ModelClient::score_candidates(const std::string& prompt,
                                                     const std::vector<std::string>& candidates,
                                                     bool normalize) {
  if (candidates.empty()) throw Error(Errc::InvalidArgument, "no candidates");
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    for (std::size_t j = i + 1; j < candidates.size(); ++j) {
      if (candidates[i] == candidates[j]) throw Error(Errc::InvalidArgument, "duplicate candidate " + candidates[i]);
    }
  }
  const auto start = std::chrono::steady_clock::now();
  std::map<std::string, double> raw;
  if (handle_.kind == ModelKind::chat_generation) {
    GenerateParams p;
    p.temperature = 0.0;
    p.max_tokens = 4;
    const std::string out = text::trim(call("generate", prompt, [&](const RequestContext& ctx) {
      return backend_->generate(prompt, p, ctx);
    }));
    std::string chosen;
    for (const auto& c : candidates) {
      if (text::starts_with(out, c)) {
        chosen = c;
        break;
      }
    }
    for (const auto& c : candidates) raw[c] = c == chosen ? 0.0 : kMissingLogProb;
  } else if (handle_.kind == ModelKind::scored_completion) {
    raw = call("score", prompt, [&](const RequestContext& ctx) { return backend_->score(prompt, candidates, ctx); });
  } else {
    throw Error(Errc::UnsupportedByBackend, handle_.id + " is an embedding handle");
  }
  ScoredCompletionResult res;
  res.model_id = handle_.id;
  for (const auto& c : candidates) {
    auto it = raw.find(c);
    res.log_probs[c] = it == raw.end() ? kMissingLogProb : it->second;
  }
  if (!is_finite_map(res.log_probs)) throw Error(Errc::NonFiniteScore, handle_.id + " returned a non-finite score");
  if (normalize) res.log_probs = normalize_log_probs(res.log_probs);
  res.latency_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return res;
}

std::vector<std::vector<float>> ModelClient::embed(const std::vector<std::string>& texts) {
  if (handle_.kind != ModelKind::embedding) {
    throw Error(Errc::UnsupportedByBackend, handle_.id + " is not an embedding handle");
  }
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (texts[i].empty()) throw Error(Errc::EmptyText, "text " + std::to_string(i) + " is empty");
  }
  if (texts.empty()) return {};
  auto out = call("embed", text::join(texts, "\n"),
                  [&](const RequestContext& ctx) { return backend_->embed(texts, ctx); });
  if (out.size() != texts.size()) {
    throw Error(Errc::DimensionMismatch, "expected " + std::to_string(texts.size()) + " vectors, got " +
                                             std::to_string(out.size()));
  }
  for (const auto& v : out) {
    if (v.size() != out.front().size() || v.empty()) throw Error(Errc::DimensionMismatch, "ragged embeddings");
  }
  return out;
}

void register_stub(const std::string& name, BackendFactory factory) {
  std::lock_guard lock(factories_mutex());
  factories()[name] = std::move(factory);
}

std::shared_ptr<Backend> make_backend(const ModelHandle& handle) {
  if (!handle.is_stub()) {
    if (text::starts_with(handle.endpoint, "http://") || text::starts_with(handle.endpoint, "https://")) {
      return make_http_backend(handle);
    }
    throw Error(Errc::ConfigError, handle.id + ": unsupported endpoint '" + handle.endpoint + "'");
  }
  BackendFactory f;
  {
    std::lock_guard lock(factories_mutex());
    auto it = factories().find(handle.stub_name());
    if (it == factories().end()) throw Error(Errc::ConfigError, "unknown stub '" + handle.stub_name() + "'");
    f = it->second;
  }
  try {
    return f(handle);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, handle.id + ": " + e.what());
  }
}

ModelRegistry ModelRegistry::from_json(const nlohmann::json& j) {
  ModelRegistry r;
  if (!j.contains("models") || !j["models"].is_array()) throw Error(Errc::ConfigError, "config lacks a models array");
  for (const auto& m : j["models"]) r.add(ModelHandle::from_json(m));
  return r;
}

ModelRegistry ModelRegistry::load(const std::filesystem::path& file) {
  try {
    return from_json(nlohmann::json::parse(text::read_file(file)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, file.string() + ": " + e.what());
  }
}

void ModelRegistry::add(ModelHandle handle) {
  auto backend = make_backend(handle);
  add(std::move(handle), std::move(backend));
}

void ModelRegistry::add(ModelHandle handle, std::shared_ptr<Backend> backend) {
  const std::string id = handle.id;
  if (clients_.contains(id)) throw Error(Errc::ConfigError, "duplicate model id '" + id + "'");
  clients_[id] = std::make_shared<ModelClient>(std::move(handle), std::move(backend));
}

std::shared_ptr<ModelClient> ModelRegistry::get(const std::string& id) const {
  auto it = clients_.find(id);
  if (it == clients_.end()) throw Error(Errc::ConfigError, "unknown model '" + id + "'");
  return it->second;
}

std::vector<std::string> ModelRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : clients_) out.push_back(id);
  return out;
}

}  // namespace finrag
