#include "finrag/agents.hpp"

#include <algorithm>
#include <cmath>
#include <regex>

#include <spdlog/spdlog.h>

#include "finrag/error.hpp"
#include "finrag/text.hpp"
#include "finrag/text_index.hpp"

namespace finrag {

namespace {

const char* const kAgentNames[] = {"rewrite", "intention", "refine", "respond"};

bool is_sentence_end(const std::u32string& cps, std::size_t i) {
  const char32_t c = cps[i];
  if (c == U'\n' || c == U'。' || c == U'！' || c == U'？' || c == U'；' || c == U'!' || c == U'?') return true;
  // An ASCII period ends a sentence only before whitespace or the end, so
  // decimals such as 3.5 stay intact.
  return c == U'.' && (i + 1 == cps.size() || text::is_space(cps[i + 1]));
}

/// Sentences with their terminators and trailing spaces attached.
std::vector<std::string> split_sentences(std::string_view s) {
  const auto cps = text::decode_utf8(s);
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < cps.size(); ++i) {
    if (!is_sentence_end(cps, i)) continue;
    std::size_t end = i + 1;
    while (end < cps.size() && text::is_space(cps[end])) ++end;
    out.push_back(text::encode_utf8(std::u32string_view(cps).substr(start, end - start)));
    start = end;
    i = end - 1;
  }
  if (start < cps.size()) out.push_back(text::encode_utf8(std::u32string_view(cps).substr(start)));
  return out;
}

std::string one_line(std::string_view s) {
  std::string out(s);
  std::replace(out.begin(), out.end(), '\n', ' ');
  return text::trim(out);
}

std::optional<std::string> tag_body(std::string_view prompt, std::string_view tag) {
  const std::string open = "<" + std::string(tag) + ">";
  const std::string close = "</" + std::string(tag) + ">";
  const auto a = prompt.find(open);
  if (a == std::string_view::npos) return std::nullopt;
  const auto b = prompt.find(close, a + open.size());
  if (b == std::string_view::npos) return std::nullopt;
  return text::trim(prompt.substr(a + open.size(), b - a - open.size()));
}

std::vector<std::string> clean_keywords(const nlohmann::json& arr) {
  std::vector<std::string> out;
  if (!arr.is_array()) return out;
  for (const auto& k : arr) {
    if (!k.is_string()) continue;
    std::string w = text::take(text::trim(k.get<std::string>()), kMaxKeywordChars);
    w = text::trim(w);
    if (!w.empty() && std::find(out.begin(), out.end(), w) == out.end()) out.push_back(std::move(w));
  }
  return out;
}

std::vector<std::string> fallback_keywords(const std::string& q, const TextIndex* idf_source) {
  auto kw = top_keywords(q, idf_source);
  if (kw.empty()) kw.push_back(text::trim(text::take(text::trim(q), kMaxKeywordChars)));
  return kw;
}

std::string failure_answer(std::string_view question) {
  return text::contains_cjk(question) ? "抱歉，暂时无法生成回答，请稍后重试。"
                                      : "Sorry, an answer could not be generated. Please try again later.";
}

bool contains_any(std::string_view hay, std::initializer_list<std::string_view> needles) {
  for (auto n : needles) {
    if (hay.find(n) != std::string_view::npos) return true;
  }
  return false;
}

nlohmann::json to_json(const Intention& i) {
  nlohmann::json sources = nlohmann::json::array();
  for (auto s : i.sources) sources.push_back(to_string(s));
  return {{"sources", sources},
          {"needs_market_data", i.needs_market_data},
          {"needs_reports", i.needs_reports},
          {"confidence", i.confidence},
          {"fallback", i.fallback}};
}

nlohmann::json to_json(const KnowledgeBundle& b) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : b.entries) {
    entries.push_back({{"index", e.index},
                       {"paragraph_ref", e.paragraph_ref},
                       {"text", e.text},
                       {"score", e.score},
                       {"condensed", e.condensed}});
  }
  return {{"budget_chars", b.budget_chars}, {"total_chars", b.total_chars()}, {"entries", entries}};
}

nlohmann::json citations_json(const std::vector<Citation>& cs) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& c : cs) out.push_back({{"index", c.index}, {"paragraph_ref", c.paragraph_ref}});
  return out;
}

/// Deterministic stand-in for the four agents, keyed on the template tags.
class RuleAgentBackend : public Backend {
 public:
  std::string generate(const std::string& prompt, const GenerateParams&, const RequestContext&) override {
    const auto task = tag_body(prompt, "task").value_or("");
    if (task == "rewrite") return rewrite(prompt);
    if (task == "intention") {
      auto j = to_json(rule_intention(tag_body(prompt, "query").value_or("")));
      j.erase("fallback");
      return j.dump();
    }
    if (task == "refine") {
      const auto limit = std::stoul(tag_body(prompt, "limit").value_or("0"));
      return sentence_prefix(tag_body(prompt, "passage").value_or(""), limit);
    }
    if (task == "respond") return respond(prompt);
    throw UpstreamError(400, "rule-agent: unknown task '" + task + "'");
  }

 private:
  static std::string rewrite(const std::string& prompt) {
    const std::string query = tag_body(prompt, "query").value_or("");
    std::string rewritten = query;
    const std::string lower = text::to_lower_ascii(" " + query + " ");
    const bool referential = contains_any(lower, {" it ", " its ", " it?", " they ", " them ", " this ", " that ",
                                                  "它", "其", "该公司", "这家"});
    if (referential) {
      // The most recent user line names what the pronoun points at.
      const auto history = text::split(tag_body(prompt, "history").value_or(""), '\n');
      for (auto it = history.rbegin(); it != history.rend(); ++it) {
        if (text::starts_with(*it, "User: ")) {
          rewritten = query + " (" + it->substr(6) + ")";
          break;
        }
      }
    }
    return nlohmann::json{{"rewritten_query", rewritten}, {"keywords", top_keywords(rewritten, nullptr, 8)}}.dump();
  }

  static std::string respond(const std::string& prompt) {
    static const std::regex entry(R"(^\[(\d+)\]\s*(.*)$)");
    std::string answer;
    int used = 0;
    for (const auto& line : text::split(tag_body(prompt, "knowledge").value_or(""), '\n')) {
      std::smatch m;
      if (used == 3 || !std::regex_match(line, m, entry)) continue;
      const auto sentences = split_sentences(m[2].str());
      if (sentences.empty()) continue;
      if (!answer.empty() && !text::contains_cjk(sentences.front())) answer += ' ';
      answer += text::trim(sentences.front()) + "[" + m[1].str() + "]";
      ++used;
    }
    return answer.empty() ? "No relevant information." : answer;
  }
};

}  // namespace

std::shared_ptr<Backend> make_rule_agent_backend(const ModelHandle&) { return std::make_shared<RuleAgentBackend>(); }

std::string_view to_string(Role r) noexcept { return r == Role::user ? "user" : "assistant"; }

Role parse_role(std::string_view s) {
  if (s == "user") return Role::user;
  if (s == "assistant") return Role::assistant;
  throw Error(Errc::InvalidArgument, "unknown role '" + std::string(s) + "'");
}

nlohmann::json to_json(const DialogueTurn& t) {
  nlohmann::json j = {{"role", to_string(t.role)},
                      {"text", t.text},
                      {"citations", citations_json(t.citations)},
                      {"timestamp", t.timestamp},
                      {"failed", t.failed}};
  if (t.trace_id) j["trace_id"] = *t.trace_id;
  return j;
}

DialogueTurn turn_from_json(const nlohmann::json& j) {
  DialogueTurn t;
  t.role = parse_role(j.at("role").get<std::string>());
  t.text = j.at("text").get<std::string>();
  for (const auto& c : j.value("citations", nlohmann::json::array())) {
    t.citations.push_back({c.at("index").get<int>(), c.at("paragraph_ref").get<std::string>()});
  }
  t.timestamp = j.value("timestamp", std::int64_t{0});
  t.failed = j.value("failed", false);
  if (j.contains("trace_id") && j["trace_id"].is_string()) t.trace_id = j["trace_id"].get<std::string>();
  return t;
}

std::size_t KnowledgeBundle::total_chars() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += text::length(e.text);
  return n;
}

AgentPrompts AgentPrompts::from_directory(const std::filesystem::path& dir) {
  AgentPrompts p;
  for (const char* name : kAgentNames) {
    auto t = PromptTemplate::load(dir / (std::string(name) + ".txt"));
    if (!t.has_section("prompt")) throw Error(Errc::TemplateError, std::string(name) + ".txt has no prompt section");
    p.templates_.emplace(name, std::move(t));
  }
  return p;
}

AgentPrompts AgentPrompts::defaults() { return from_directory(default_template_dir() / "agents"); }

std::string AgentPrompts::render(const std::string& agent, const std::map<std::string, std::string>& values) const {
  auto it = templates_.find(agent);
  if (it == templates_.end()) throw Error(Errc::TemplateError, "no template for agent " + agent);
  return fill_placeholders(it->second.section("prompt"), values);
}

std::string AgentPrompts::section_or_empty(const std::string& agent, const std::string& section) const {
  auto it = templates_.find(agent);
  if (it == templates_.end() || !it->second.has_section(section)) return {};
  return it->second.section(section);
}

std::string render_history(const std::vector<DialogueTurn>& history, std::size_t max_turns) {
  const std::size_t start = history.size() > max_turns ? history.size() - max_turns : 0;
  std::string out;
  for (std::size_t i = start; i < history.size(); ++i) {
    if (!out.empty()) out += '\n';
    out += history[i].role == Role::user ? "User: " : "Assistant: ";
    out += one_line(history[i].text);
  }
  return out;
}

std::optional<nlohmann::json> extract_json_object(std::string_view response) {
  for (auto open = response.find('{'); open != std::string_view::npos; open = response.find('{', open + 1)) {
    for (auto close = response.rfind('}'); close != std::string_view::npos && close > open;
         close = close == 0 ? std::string_view::npos : response.rfind('}', close - 1)) {
      auto j = nlohmann::json::parse(response.substr(open, close - open + 1), nullptr, false);
      if (!j.is_discarded() && j.is_object()) return j;
    }
  }
  return std::nullopt;
}

std::vector<std::string> top_keywords(std::string_view query, const TextIndex* idf_source, std::size_t n) {
  std::vector<std::string> distinct;
  for (auto& t : tokenize(query)) {
    if (t.size() <= 1 && !text::contains_cjk(t)) continue;
    if (std::find(distinct.begin(), distinct.end(), t) == distinct.end()) distinct.push_back(std::move(t));
  }
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t i = 0; i < distinct.size(); ++i) {
    ranked.emplace_back(idf_source ? idf_source->idf(distinct[i]) : 0.0, i);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < ranked.size() && out.size() < n; ++i) {
    out.push_back(text::take(distinct[ranked[i].second], kMaxKeywordChars));
  }
  return out;
}

RewriteResult rewrite_query(const std::vector<DialogueTurn>& history, const std::string& query, ModelClient& model,
                            const AgentPrompts& prompts, const TextIndex* idf_source) {
  if (text::trim(query).empty()) throw Error(Errc::InvalidArgument, "empty query");
  const std::string prompt = prompts.render("rewrite", {{"history", render_history(history)}, {"query", query}});
  for (int attempt = 1; attempt <= 2; ++attempt) {
    std::string response;
    try {
      response = model.generate(prompt, {0.0, 512, {}});
    } catch (const Error& e) {
      spdlog::warn("rewrite attempt {} failed: {}", attempt, e.what());
      continue;
    }
    const auto j = extract_json_object(response);
    if (!j || !j->contains("rewritten_query") || !(*j)["rewritten_query"].is_string()) continue;
    RewriteResult r;
    r.rewritten_query = one_line((*j)["rewritten_query"].get<std::string>());
    if (r.rewritten_query.empty()) continue;
    r.keywords = clean_keywords(j->value("keywords", nlohmann::json::array()));
    if (r.keywords.empty()) r.keywords = fallback_keywords(r.rewritten_query, idf_source);
    return r;
  }
  return {text::trim(query), fallback_keywords(query, idf_source), true};
}

Intention rule_intention(std::string_view query) {
  const std::string q = text::to_lower_ascii(query);
  Intention in;
  bool matched = false;
  if (contains_any(q, {"worth", "hold", "buy", "sell", "valuation", "invest", "target price", "值得", "持有", "买入",
                       "卖出", "估值", "投资价值", "目标价"})) {
    in.needs_market_data = in.needs_reports = matched = true;
  }
  if (contains_any(q, {"stock price", "share price", "price trend", "market trend", "candlestick", "股价", "行情",
                       "走势", "涨幅", "跌幅", "k线"})) {
    in.needs_market_data = matched = true;
  }
  if (contains_any(q, {"research report", "analyst", "rating", "研报", "研究报告", "评级"})) {
    in.needs_reports = matched = true;
  }
  if (contains_any(q, {"gdp", "cpi", "ppi", "pmi", "inflation", "interest rate", "monetary policy", "macro", "宏观",
                       "通胀", "利率", "货币政策", "制造业", "经济增长"})) {
    in.sources.insert(SourceType::macro);
    matched = true;
  }
  if (in.needs_market_data) in.sources.insert(SourceType::market);
  if (in.needs_reports) in.sources.insert(SourceType::report);
  in.sources.insert(SourceType::news);
  if (!matched) in.sources.insert(SourceType::report);
  in.confidence = matched ? 0.9 : 0.5;
  return in;
}

Intention detect_intention(const std::string& rewritten, ModelClient& model, const AgentPrompts& prompts) {
  if (text::trim(rewritten).empty()) throw Error(Errc::InvalidArgument, "empty query");
  const std::string prompt = prompts.render("intention", {{"query", rewritten}});
  for (int attempt = 1; attempt <= 2; ++attempt) {
    std::string response;
    try {
      response = model.generate(prompt, {0.0, 256, {}});
    } catch (const Error& e) {
      spdlog::warn("intention attempt {} failed: {}", attempt, e.what());
      continue;
    }
    const auto j = extract_json_object(response);
    if (!j || !j->contains("sources") || !(*j)["sources"].is_array()) continue;
    Intention in;
    for (const auto& s : (*j)["sources"]) {
      if (!s.is_string()) continue;
      try {
        in.sources.insert(parse_source_type(s.get<std::string>()));
      } catch (const Error&) {
        // Unknown source names are ignored rather than failing the query.
      }
    }
    const auto flag = [&](const char* key) {
      auto it = j->find(key);
      return it != j->end() && it->is_boolean() && it->get<bool>();
    };
    in.needs_market_data = flag("needs_market_data") || in.sources.contains(SourceType::market);
    in.needs_reports = flag("needs_reports") || in.sources.contains(SourceType::report);
    if (in.needs_market_data) in.sources.insert(SourceType::market);
    if (in.needs_reports) in.sources.insert(SourceType::report);
    if (in.sources.empty()) in.sources.insert(SourceType::news);
    const auto conf = j->find("confidence");
    const double c = conf != j->end() && conf->is_number() ? conf->get<double>() : 0.0;
    in.confidence = std::isfinite(c) ? std::clamp(c, 0.0, 1.0) : 0.0;
    return in;
  }
  Intention fallback;
  fallback.sources = {SourceType::news};
  fallback.fallback = true;
  return fallback;
}

std::string sentence_prefix(std::string_view s, std::size_t limit) {
  std::string out;
  std::size_t used = 0;
  for (const auto& sentence : split_sentences(s)) {
    const std::size_t n = text::length(sentence);
    if (used + n > limit) break;
    out += sentence;
    used += n;
  }
  // Trailing spaces belong to the gap between sentences, not the text.
  while (!out.empty() && std::isspace(static_cast<unsigned char>(out.back()))) out.pop_back();
  return out;
}

KnowledgeBundle extract_refine(const std::vector<ScoredParagraph>& hits, const std::string& question, int budget_chars,
                               ModelClient* model, const AgentPrompts* prompts) {
  if (budget_chars < 0) throw Error(Errc::InvalidArgument, "budget must be >= 0");
  for (std::size_t i = 1; i < hits.size(); ++i) {
    if (hits[i].score > hits[i - 1].score) throw Error(Errc::InvalidArgument, "hits must be sorted by score");
  }
  KnowledgeBundle bundle;
  bundle.budget_chars = budget_chars;
  std::size_t remaining = static_cast<std::size_t>(budget_chars);
  std::set<std::string> seen;
  for (const auto& hit : hits) {
    if (remaining == 0) break;
    const std::string ref = hit.paragraph.ref();
    const std::string body = text::trim(hit.paragraph.text);
    if (body.empty() || !seen.insert(ref).second) continue;
    KnowledgeEntry e;
    e.paragraph_ref = ref;
    e.score = hit.score;
    if (text::length(body) <= remaining) {
      e.text = body;
    } else {
      if (model && prompts) {
        try {
          const std::string prompt = prompts->render(
              "refine", {{"question", question}, {"passage", body}, {"limit", std::to_string(remaining)}});
          std::string condensed = one_line(model->generate(prompt, {0.0, 1024, {}}));
          if (!condensed.empty() && text::length(condensed) <= remaining) {
            e.text = std::move(condensed);
            e.condensed = e.text != body.substr(0, e.text.size());
          }
        } catch (const Error& err) {
          spdlog::warn("refine of {} failed: {}", ref, err.what());
        }
      }
      if (e.text.empty()) e.text = sentence_prefix(body, remaining);
      if (e.text.empty()) continue;
    }
    remaining -= text::length(e.text);
    e.index = static_cast<int>(bundle.entries.size()) + 1;
    bundle.entries.push_back(std::move(e));
  }
  return bundle;
}

std::string insufficient_knowledge_answer(std::string_view question) {
  return text::contains_cjk(question) ? "抱歉，知识库中没有找到足够的信息来回答这个问题。"
                                      : "Sorry, there is insufficient knowledge to answer this question.";
}

std::vector<int> parse_citation_markers(std::string_view answer) {
  static const std::regex marker(R"(\[(\d{1,6})\])");
  std::vector<int> out;
  const std::string s(answer);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), marker); it != std::sregex_iterator(); ++it) {
    const int n = std::stoi((*it)[1].str());
    if (std::find(out.begin(), out.end(), n) == out.end()) out.push_back(n);
  }
  return out;
}

GeneratedResponse generate_response(const KnowledgeBundle& bundle, const std::string& question,
                                    const std::vector<DialogueTurn>& history, ModelClient& model,
                                    const AgentPrompts& prompts) {
  GeneratedResponse out;
  if (bundle.entries.empty()) {
    out.answer = insufficient_knowledge_answer(question);
    return out;
  }
  std::string knowledge;
  for (const auto& e : bundle.entries) {
    if (!knowledge.empty()) knowledge += '\n';
    knowledge += "[" + std::to_string(e.index) + "] " + one_line(e.text);
  }
  const std::string base = prompts.render(
      "respond", {{"history", render_history(history)}, {"question", question}, {"knowledge", knowledge}});
  std::string prompt = base;
  for (int attempt = 1; attempt <= 2; ++attempt) {
    out.attempts = attempt;
    std::string answer;
    try {
      answer = text::trim(model.generate(prompt, {0.0, 1024, {}}));
    } catch (const Error& e) {
      throw Error(Errc::ModelError, e.what());
    }
    if (answer.empty()) throw Error(Errc::ModelError, "empty response");
    std::vector<Citation> citations;
    bool sound = true;
    for (int n : parse_citation_markers(answer)) {
      if (n < 1 || n > static_cast<int>(bundle.entries.size())) {
        sound = false;
        break;
      }
      citations.push_back({n, bundle.entries[static_cast<std::size_t>(n - 1)].paragraph_ref});
    }
    if (sound) {
      out.answer = std::move(answer);
      out.citations = std::move(citations);
      return out;
    }
    const std::string note = prompts.section_or_empty("respond", "retry");
    prompt = base + "\n\n" + fill_placeholders(note, {{"max_index", std::to_string(bundle.entries.size())}});
  }
  throw Error(Errc::UncitedIndex, "answer cites entries outside 1.." + std::to_string(bundle.entries.size()));
}

QaPipeline::QaPipeline(KnowledgeBase& kb, AgentModels models, AgentPrompts prompts, PipelineConfig config,
                       std::vector<Fetcher> realtime)
    : kb_(kb), models_(std::move(models)), prompts_(std::move(prompts)), config_(config), realtime_(std::move(realtime)) {
  if (!models_.rewriter || !models_.intention || !models_.responder) {
    throw Error(Errc::ConfigError, "rewriter, intention and responder models are required");
  }
  if (config_.recall_k < 1 || config_.rerank_k < 1 || config_.budget_chars < 0) {
    throw Error(Errc::ConfigError, "recall_k and rerank_k must be >= 1 and budget_chars >= 0");
  }
  for (const auto& f : realtime_) {
    if (f.kind != FetcherKind::realtime) throw Error(Errc::ConfigError, f.name + " is not a realtime fetcher");
  }
}

PipelineResult QaPipeline::answer(const std::vector<DialogueTurn>& history, const std::string& query,
                                  std::int64_t now_ms) const {
  const std::int64_t now_s = now_ms / 1000;
  nlohmann::json trace = {{"query", query}, {"timestamp", now_ms}, {"history_turns", history.size()}};
  nlohmann::json errors = nlohmann::json::array();
  auto record_error = [&](const char* stage, const std::string& message) {
    errors.push_back({{"stage", stage}, {"message", message}});
    spdlog::warn("pipeline {}: {}", stage, message);
  };
  const std::vector<DialogueTurn> recent(
      history.end() - static_cast<std::ptrdiff_t>(std::min(history.size(), config_.history_turns)), history.end());

  RewriteResult rw;
  try {
    rw = rewrite_query(recent, query, *models_.rewriter, prompts_, &kb_.text_index());
  } catch (const std::exception& e) {
    record_error("rewrite", e.what());
    rw = {text::trim(query), fallback_keywords(query, &kb_.text_index()), true};
  }
  trace["rewrite"] = {{"rewritten_query", rw.rewritten_query}, {"keywords", rw.keywords}, {"fallback", rw.fallback}};

  Intention intent;
  try {
    intent = detect_intention(rw.rewritten_query, *models_.intention, prompts_);
  } catch (const std::exception& e) {
    record_error("intention", e.what());
    intent.sources = {SourceType::news};
    intent.fallback = true;
  }
  trace["intention"] = to_json(intent);

  // Recall: text search per source, pooled by doc id.
  const std::string search_text = rw.rewritten_query + " " + text::join(rw.keywords, " ");
  std::map<std::string, double> doc_score;
  std::vector<std::string> doc_order;
  nlohmann::json recall = nlohmann::json::object();
  for (SourceType s : intent.sources) {
    nlohmann::json hits_json = nlohmann::json::array();
    try {
      for (const auto& h : kb_.text_index().search(search_text, config_.recall_k, now_s,
                                                   [s](SourceType t) { return t == s; })) {
        hits_json.push_back({{"doc_id", h.doc_id},
                             {"match_score", h.match_score},
                             {"recency_factor", h.recency_factor},
                             {"final_score", h.final_score}});
        if (doc_score.emplace(h.doc_id, h.final_score).second) doc_order.push_back(h.doc_id);
      }
    } catch (const std::exception& e) {
      record_error("recall", e.what());
    }
    recall[std::string(to_string(s))] = hits_json;
  }
  trace["recall"] = recall;

  nlohmann::json realtime_json = nlohmann::json::array();
  for (const auto& f : realtime_) {
    if (!intent.sources.contains(f.source_type)) continue;
    nlohmann::json entry = {{"fetcher", f.name}};
    try {
      nlohmann::json ids = nlohmann::json::array();
      for (const auto& d : run_realtime(f, kb_, rw.rewritten_query, config_.realtime_limit)) {
        ids.push_back(d.id);
        if (doc_score.emplace(d.id, 0.0).second) doc_order.push_back(d.id);
      }
      entry["doc_ids"] = ids;
    } catch (const std::exception& e) {
      entry["error"] = e.what();
      record_error("realtime", e.what());
    }
    realtime_json.push_back(entry);
  }
  trace["realtime"] = realtime_json;

  // Rerank the recalled paragraphs by embedding similarity; without vectors
  // the recall order stands.
  std::stable_sort(doc_order.begin(), doc_order.end(), [&](const std::string& a, const std::string& b) {
    return doc_score[a] > doc_score[b];
  });
  std::vector<ScoredParagraph> candidates;
  for (const auto& id : doc_order) {
    for (auto& p : kb_.store().paragraphs(id)) candidates.push_back({std::move(p), doc_score[id]});
  }
  std::string rerank_method = "text";
  const auto& vindex = kb_.paragraph_index();
  if (kb_.embedder() && vindex.count() > 0 && !candidates.empty()) {
    try {
      const auto qv = kb_.embedder()->embed({rw.rewritten_query}).front();
      std::vector<ScoredParagraph> scored;
      for (auto& c : candidates) {
        const auto ref = c.paragraph.ref();
        if (!vindex.contains(ref)) continue;
        scored.push_back({c.paragraph, cosine(qv, vindex.vector(ref))});
      }
      if (!scored.empty()) {
        std::stable_sort(scored.begin(), scored.end(), [](const ScoredParagraph& a, const ScoredParagraph& b) {
          if (a.score != b.score) return a.score > b.score;
          return a.paragraph.ref() < b.paragraph.ref();
        });
        candidates = std::move(scored);
        rerank_method = "embedding";
      }
    } catch (const std::exception& e) {
      record_error("rerank", e.what());
    }
  }
  if (candidates.size() > static_cast<std::size_t>(config_.rerank_k)) {
    candidates.resize(static_cast<std::size_t>(config_.rerank_k));
  }
  nlohmann::json rerank = nlohmann::json::array();
  for (const auto& c : candidates) rerank.push_back({{"paragraph_ref", c.paragraph.ref()}, {"score", c.score}});
  trace["rerank"] = {{"method", rerank_method}, {"hits", rerank}};

  KnowledgeBundle bundle;
  try {
    bundle = extract_refine(candidates, rw.rewritten_query, config_.budget_chars, models_.refiner.get(), &prompts_);
  } catch (const std::exception& e) {
    record_error("refine", e.what());
    bundle = extract_refine(candidates, rw.rewritten_query, config_.budget_chars);
  }
  trace["bundle"] = to_json(bundle);

  PipelineResult result;
  result.turn.role = Role::assistant;
  result.turn.timestamp = now_ms;
  try {
    auto resp = generate_response(bundle, query, recent, *models_.responder, prompts_);
    result.turn.text = std::move(resp.answer);
    result.turn.citations = std::move(resp.citations);
    trace["response"] = {{"attempts", resp.attempts}, {"citations", citations_json(result.turn.citations)}};
  } catch (const std::exception& e) {
    record_error("respond", e.what());
    result.turn.text = failure_answer(query);
    result.turn.failed = true;
    trace["response"] = {{"failed", true}};
  }
  trace["errors"] = errors;
  result.trace = std::move(trace);
  return result;
}

PipelineResult QaPipeline::answer_in_session(Session& session, const std::string& query, std::int64_t now_ms) const {
  std::lock_guard lock(session.mu);
  const std::int64_t last = session.turns.empty() ? now_ms - 1 : session.turns.back().timestamp;
  DialogueTurn user{Role::user, query, {}, std::max(now_ms, last + 1), std::nullopt, false};
  auto result = answer(session.turns, query, user.timestamp);
  result.turn.timestamp = user.timestamp + 1;
  session.turns.push_back(std::move(user));
  session.turns.push_back(result.turn);
  return result;
}

}  // namespace finrag
