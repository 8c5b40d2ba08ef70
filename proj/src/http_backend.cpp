// HTTP clients: the OpenAI-compatible model upstream (/chat/completions,
// /completions with logprobs, /embeddings) and the document source adapter.
#include <httplib.h>

#include <algorithm>
#include <cstdlib>

#include "finrag/doc_store.hpp"
#include "finrag/error.hpp"
#include "finrag/gateway.hpp"
#include "finrag/text.hpp"

namespace finrag {

namespace {

struct Url {
  std::string scheme_host_port;
  std::string base_path;
};

Url split_url(const std::string& endpoint) {
  const auto scheme_end = endpoint.find("://");
  const auto path_start = endpoint.find('/', scheme_end + 3);
  Url u;
  u.scheme_host_port = endpoint.substr(0, path_start);
  u.base_path = path_start == std::string::npos ? "" : endpoint.substr(path_start);
  while (!u.base_path.empty() && u.base_path.back() == '/') u.base_path.pop_back();
  return u;
}

class HttpBackend : public Backend {
 public:
  explicit HttpBackend(ModelHandle handle) : handle_(std::move(handle)), url_(split_url(handle_.endpoint)) {}

  std::string generate(const std::string& prompt, const GenerateParams& params, const RequestContext& ctx) override {
    nlohmann::json body = {{"model", handle_.model},
                           {"messages", {{{"role", "user"}, {"content", prompt}}}},
                           {"temperature", params.temperature},
                           {"max_tokens", params.max_tokens}};
    if (!params.stop.empty()) body["stop"] = params.stop;
    const auto res = post("/chat/completions", body, ctx);
    try {
      return res.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw UpstreamError(200, std::string("unexpected chat response: ") + e.what());
    }
  }

  std::map<std::string, double> score(const std::string& prompt, const std::vector<std::string>& candidates,
                                      const RequestContext& ctx) override {
    nlohmann::json body = {{"model", handle_.model}, {"prompt", prompt}, {"max_tokens", 1},
                           {"temperature", 0},       {"logprobs", 20}};
    const auto res = post("/completions", body, ctx);
    const nlohmann::json* top = nullptr;
    try {
      const auto& lp = res.at("choices").at(0).at("logprobs");
      if (lp.is_null()) throw Error(Errc::UnsupportedByBackend, handle_.id + " returned no logprobs");
      top = &lp.at("top_logprobs").at(0);
    } catch (const nlohmann::json::exception&) {
      throw Error(Errc::UnsupportedByBackend, handle_.id + " returned no logprobs");
    }
    std::map<std::string, double> out;
    for (auto it = top->begin(); it != top->end(); ++it) {
      const std::string tok = text::trim(it.key());
      if (std::find(candidates.begin(), candidates.end(), tok) == candidates.end()) continue;
      const double v = it.value().get<double>();
      auto [slot, inserted] = out.emplace(tok, v);
      if (!inserted) slot->second = std::max(slot->second, v);
    }
    return out;
  }

  std::vector<std::vector<float>> embed(const std::vector<std::string>& texts, const RequestContext& ctx) override {
    const auto res = post("/embeddings", {{"model", handle_.model}, {"input", texts}}, ctx);
    std::vector<std::vector<float>> out(texts.size());
    try {
      const auto& data = res.at("data");
      if (data.size() != texts.size()) throw Error(Errc::DimensionMismatch, "embedding count mismatch");
      for (std::size_t i = 0; i < data.size(); ++i) {
        const std::size_t idx = data[i].value("index", i);
        if (idx >= out.size()) throw Error(Errc::DimensionMismatch, "embedding index out of range");
        out[idx] = data[i].at("embedding").get<std::vector<float>>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw UpstreamError(200, std::string("unexpected embeddings response: ") + e.what());
    }
    for (const auto& v : out) {
      if (v.size() != out.front().size()) throw Error(Errc::DimensionMismatch, "ragged embeddings from upstream");
    }
    return out;
  }

 private:
  nlohmann::json post(const std::string& path, const nlohmann::json& body, const RequestContext& ctx) {
    httplib::Client cli(url_.scheme_host_port);
    const auto secs = handle_.timeout_ms / 1000;
    const auto usecs = (handle_.timeout_ms % 1000) * 1000;
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    httplib::Headers headers = {{"Idempotency-Key", ctx.request_key}};
    if (const char* key = std::getenv(handle_.api_key_env.c_str()); key && *key) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    auto res = cli.Post(url_.base_path + path, headers, body.dump(), "application/json");
    if (!res) {
      const auto err = res.error();
      if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout || err == httplib::Error::Write) {
        throw Error(Errc::Timeout, handle_.id + ": " + httplib::to_string(err));
      }
      throw UpstreamError(0, handle_.id + ": " + httplib::to_string(err));
    }
    if (res->status != 200) throw UpstreamError(res->status, handle_.id + ": " + text::take(res->body, 200));
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception&) {
      throw UpstreamError(res->status, handle_.id + ": response is not JSON");
    }
  }

  ModelHandle handle_;
  Url url_;
};

}  // namespace

std::shared_ptr<Backend> make_http_backend(const ModelHandle& handle) {
  return std::make_shared<HttpBackend>(handle);
}

std::string HttpAdapter::get(const std::string& path_and_query) {
  const Url u = split_url(url_);
  httplib::Client cli(u.scheme_host_port);
  cli.set_connection_timeout(std::chrono::milliseconds(timeout_ms_));
  cli.set_read_timeout(std::chrono::milliseconds(timeout_ms_));
  auto res = cli.Get(u.base_path + path_and_query);
  if (!res) throw Error(Errc::SourceUnavailable, url_ + ": " + httplib::to_string(res.error()));
  if (res->status != 200) throw Error(Errc::SourceUnavailable, url_ + ": HTTP " + std::to_string(res->status));
  return res->body;
}

std::vector<Document> HttpAdapter::list() { return parse_documents_jsonl(get("")); }

std::vector<Document> HttpAdapter::search(const std::string& query, int limit) {
  const std::string q = "?q=" + httplib::detail::encode_query_param(query) + "&limit=" + std::to_string(limit);
  return parse_documents_jsonl(get(q));
}

}  // namespace finrag
