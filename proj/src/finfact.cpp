#include "finrag/finfact.hpp"

#include <algorithm>
#include <set>

#include <spdlog/spdlog.h>

#include "finrag/error.hpp"
#include "finrag/text.hpp"

namespace finrag {

namespace {

/// First JSON value in a response, tolerating prose and code fences around it.
std::optional<nlohmann::json> first_json(std::string_view response, char open, char close) {
  for (auto a = response.find(open); a != std::string_view::npos; a = response.find(open, a + 1)) {
    for (auto b = response.rfind(close); b != std::string_view::npos && b > a;
         b = b == 0 ? std::string_view::npos : response.rfind(close, b - 1)) {
      auto j = nlohmann::json::parse(response.substr(a, b - a + 1), nullptr, false);
      if (!j.is_discarded()) return j;
    }
  }
  return std::nullopt;
}

std::optional<nlohmann::json> item_list(std::string_view response) {
  if (auto obj = first_json(response, '{', '}'); obj && obj->is_object()) {
    auto it = obj->find("items");
    if (it != obj->end() && it->is_array()) return *it;
  }
  if (auto arr = first_json(response, '[', ']'); arr && arr->is_array()) return arr;
  return std::nullopt;
}

Outcome flip(Outcome o) noexcept {
  switch (o) {
    case Outcome::a_wins: return Outcome::b_wins;
    case Outcome::b_wins: return Outcome::a_wins;
    case Outcome::tie: return Outcome::tie;
  }
  return Outcome::tie;
}

std::string optional_string(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  return it != j.end() && it->is_string() ? text::trim(it->get<std::string>()) : std::string();
}

template <class T, class F>
std::vector<T> read_jsonl(const std::filesystem::path& file, F parse) {
  std::vector<T> out;
  std::size_t line_no = 0;
  for (const auto& line : text::split(text::read_file(file), '\n')) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(parse(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::InvalidArgument, file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void mismatch_if(bool bad, const std::string& what) {
  if (bad) throw Error(Errc::ManifestMismatch, what);
}

}  // namespace

std::string_view to_string(FactKind k) noexcept { return k == FactKind::structural ? "structural" : "conversational"; }

std::string_view to_string(FactCategory c) noexcept {
  switch (c) {
    case FactCategory::financial: return "financial";
    case FactCategory::political: return "political";
    case FactCategory::technical: return "technical";
    case FactCategory::sports: return "sports";
  }
  return "financial";
}

FactKind parse_fact_kind(std::string_view s) {
  if (s == "structural") return FactKind::structural;
  if (s == "conversational") return FactKind::conversational;
  throw Error(Errc::InvalidArgument, "unknown question kind '" + std::string(s) + "'");
}

FactCategory parse_fact_category(std::string_view s) {
  for (auto c : {FactCategory::financial, FactCategory::political, FactCategory::technical, FactCategory::sports}) {
    if (to_string(c) == s) return c;
  }
  throw Error(Errc::InvalidArgument, "unknown category '" + std::string(s) + "'");
}

nlohmann::json to_json(const FactQA& q) {
  nlohmann::json j = {{"id", q.id},
                      {"kind", to_string(q.kind)},
                      {"category", to_string(q.category)},
                      {"year", q.year},
                      {"question", q.question},
                      {"source_article_id", q.source_article_id}};
  if (q.gold_answer) j["gold_answer"] = *q.gold_answer;
  return j;
}

FactQA factqa_from_json(const nlohmann::json& j) {
  FactQA q;
  q.id = j.at("id").get<std::string>();
  q.kind = parse_fact_kind(j.at("kind").get<std::string>());
  q.category = parse_fact_category(j.value("category", std::string("financial")));
  q.year = j.value("year", 0);
  q.question = j.at("question").get<std::string>();
  q.source_article_id = j.at("source_article_id").get<std::string>();
  if (j.contains("gold_answer") && j["gold_answer"].is_string()) q.gold_answer = j["gold_answer"].get<std::string>();
  if (q.kind == FactKind::structural && (!q.gold_answer || text::trim(*q.gold_answer).empty())) {
    throw Error(Errc::InvalidArgument, q.id + ": structural item without gold_answer");
  }
  return q;
}

std::vector<FactQA> read_factqa_jsonl(const std::filesystem::path& file) {
  return read_jsonl<FactQA>(file, factqa_from_json);
}

void write_factqa_jsonl(const std::filesystem::path& file, const std::vector<FactQA>& items) {
  std::string out;
  for (const auto& q : items) out += to_json(q).dump() + "\n";
  text::write_file(file, out);
}

std::string_view to_string(Dimension d) noexcept {
  switch (d) {
    case Dimension::factual: return "factual";
    case Dimension::relevant: return "relevant";
    case Dimension::informational: return "informational";
  }
  return "factual";
}

std::string_view to_string(Outcome o) noexcept {
  switch (o) {
    case Outcome::a_wins: return "a_wins";
    case Outcome::b_wins: return "b_wins";
    case Outcome::tie: return "tie";
  }
  return "tie";
}

Dimension parse_dimension(std::string_view s) {
  for (auto d : kDimensions) {
    if (to_string(d) == s) return d;
  }
  throw Error(Errc::InvalidArgument, "unknown dimension '" + std::string(s) + "'");
}

Outcome parse_outcome(std::string_view s) {
  for (auto o : {Outcome::a_wins, Outcome::b_wins, Outcome::tie}) {
    if (to_string(o) == s) return o;
  }
  throw Error(Errc::InvalidArgument, "unknown outcome '" + std::string(s) + "'");
}

nlohmann::json to_json(const JudgeVerdict& v) {
  nlohmann::json dims = nlohmann::json::object();
  for (const auto& [d, o] : v.per_dimension) dims[std::string(to_string(d))] = to_string(o);
  return {{"qa_id", v.qa_id},
          {"system_a", v.system_a},
          {"system_b", v.system_b},
          {"per_dimension", dims},
          {"unparseable", v.unparseable}};
}

JudgeVerdict verdict_from_json(const nlohmann::json& j) {
  JudgeVerdict v;
  v.qa_id = j.at("qa_id").get<std::string>();
  v.system_a = j.at("system_a").get<std::string>();
  v.system_b = j.at("system_b").get<std::string>();
  const auto& dims = j.at("per_dimension");
  for (auto d : kDimensions) {
    const std::string key(to_string(d));
    if (!dims.contains(key)) throw Error(Errc::InvalidArgument, v.qa_id + ": missing dimension " + key);
    v.per_dimension[d] = parse_outcome(dims[key].get<std::string>());
  }
  v.unparseable = j.value("unparseable", false);
  return v;
}

std::vector<JudgeVerdict> read_verdicts_jsonl(const std::filesystem::path& file) {
  return read_jsonl<JudgeVerdict>(file, verdict_from_json);
}

void write_verdicts_jsonl(const std::filesystem::path& file, const std::vector<JudgeVerdict>& verdicts) {
  std::string out;
  for (const auto& v : verdicts) out += to_json(v).dump() + "\n";
  text::write_file(file, out);
}

FinfactPrompts FinfactPrompts::from_directory(const std::filesystem::path& dir) {
  FinfactPrompts p;
  for (const char* name : {"structural", "conversational", "judge"}) {
    auto t = PromptTemplate::load(dir / (std::string(name) + ".txt"));
    if (!t.has_section("prompt")) throw Error(Errc::TemplateError, std::string(name) + ".txt has no prompt section");
    p.templates_.emplace(name, std::move(t));
  }
  return p;
}

FinfactPrompts FinfactPrompts::defaults() { return from_directory(default_template_dir() / "finfact"); }

std::string FinfactPrompts::render(const std::string& name, const std::map<std::string, std::string>& values) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) throw Error(Errc::TemplateError, "no finfact template " + name);
  return fill_placeholders(it->second.section("prompt"), values);
}

std::vector<FactQA> generate_factqa(const Document& article, FactKind kind, const GenerationOptions& options,
                                    ModelClient& model, const FinfactPrompts& prompts) {
  if (text::trim(article.body).empty()) throw Error(Errc::InvalidDocument, article.id + " has an empty body");
  if (options.max_items < 1) throw Error(Errc::InvalidArgument, "max_items must be >= 1");
  const std::string prompt = prompts.render(std::string(to_string(kind)), {{"title", article.title},
                                                                           {"article", article.body},
                                                                           {"max_items", std::to_string(options.max_items)}});
  std::optional<nlohmann::json> items;
  for (int attempt = 1; attempt <= 2 && !items; ++attempt) {
    std::string response;
    try {
      response = model.generate(prompt, {0.0, 2048, {}});
    } catch (const Error& e) {
      throw Error(Errc::ModelError, e.what());
    }
    items = item_list(response);
  }
  if (!items) throw Error(Errc::UnparseableGeneration, article.id + ": no item list in the response");
  std::vector<FactQA> out;
  const char tag = kind == FactKind::structural ? 's' : 'c';
  for (const auto& item : *items) {
    if (static_cast<int>(out.size()) == options.max_items) break;
    if (!item.is_object()) {
      spdlog::warn("{}: skipping a non-object item", article.id);
      continue;
    }
    FactQA q;
    q.kind = kind;
    q.category = options.category;
    q.year = options.year;
    q.source_article_id = article.id;
    q.question = optional_string(item, "question");
    const std::string answer = optional_string(item, "answer");
    if (q.question.empty()) {
      spdlog::warn("{}: skipping an item without a question", article.id);
      continue;
    }
    if (kind == FactKind::structural) {
      if (answer.empty()) {
        spdlog::warn("{}: skipping structural item without an answer: {}", article.id, q.question);
        continue;
      }
      q.gold_answer = answer;
    }
    q.id = article.id + "-" + tag + std::to_string(out.size() + 1);
    out.push_back(std::move(q));
  }
  return out;
}

OrderedJudgement parse_judgement(std::string_view response) {
  OrderedJudgement j;
  const auto obj = first_json(response, '{', '}');
  for (auto d : kDimensions) {
    Outcome o = Outcome::tie;
    bool ok = false;
    if (obj && obj->is_object()) {
      auto it = obj->find(std::string(to_string(d)));
      if (it != obj->end()) {
        const std::string v = it->is_string() ? text::to_lower_ascii(text::trim(it->get<std::string>()))
                              : it->is_number_integer() ? std::to_string(it->get<int>())
                                                        : std::string();
        if (v == "1") {
          o = Outcome::a_wins;
          ok = true;
        } else if (v == "2") {
          o = Outcome::b_wins;
          ok = true;
        } else if (v == "tie") {
          ok = true;
        }
      }
    }
    j.outcome[d] = o;
    if (!ok) j.unparseable = true;
  }
  return j;
}

Outcome reconcile(Outcome a_first, Outcome b_first) noexcept { return a_first == b_first ? a_first : Outcome::tie; }

std::string judge_reference(const FactQA& qa, const std::optional<Document>& article) {
  if (qa.kind == FactKind::structural) {
    if (!qa.gold_answer || text::trim(*qa.gold_answer).empty()) {
      throw Error(Errc::InvalidArgument, qa.id + ": structural item without gold_answer");
    }
    return *qa.gold_answer;
  }
  if (!article || text::trim(article->body).empty()) {
    throw Error(Errc::InvalidArgument, qa.id + ": conversational item needs its article text");
  }
  return article->body;
}

JudgeVerdict judge_pairwise(const FactQA& qa, const std::string& reference, const std::string& system_a,
                            const std::string& resp_a, const std::string& system_b, const std::string& resp_b,
                            ModelClient& judge, const FinfactPrompts& prompts) {
  if (text::trim(resp_a).empty() || text::trim(resp_b).empty()) {
    throw Error(Errc::InvalidArgument, qa.id + ": both responses must be non-empty");
  }
  if (text::trim(reference).empty()) throw Error(Errc::InvalidArgument, qa.id + ": empty reference");
  auto ask = [&](const std::string& first, const std::string& second) {
    const std::string prompt = prompts.render(
        "judge", {{"question", qa.question}, {"reference", reference}, {"response_1", first}, {"response_2", second}});
    OrderedJudgement j;
    for (int attempt = 1; attempt <= 2; ++attempt) {
      try {
        j = parse_judgement(judge.generate(prompt, {0.0, 256, {}}));
      } catch (const Error& e) {
        throw Error(Errc::ModelError, e.what());
      }
      if (!j.unparseable) break;
    }
    return j;
  };
  const auto a_first = ask(resp_a, resp_b);
  const auto b_first = ask(resp_b, resp_a);
  JudgeVerdict v;
  v.qa_id = qa.id;
  v.system_a = system_a;
  v.system_b = system_b;
  v.unparseable = a_first.unparseable || b_first.unparseable;
  for (auto d : kDimensions) v.per_dimension[d] = reconcile(a_first.outcome.at(d), flip(b_first.outcome.at(d)));
  if (v.unparseable) spdlog::warn("{}: unparseable judgement counted as tie", qa.id);
  return v;
}

WinRate win_rate(const std::vector<JudgeVerdict>& verdicts, const std::string& system, Dimension dimension,
                 const std::optional<std::string>& opponent) {
  std::size_t win = 0, tie = 0, loss = 0;
  for (const auto& v : verdicts) {
    if (v.system_a == v.system_b) continue;
    const bool is_a = v.system_a == system;
    if (!is_a && v.system_b != system) continue;
    if (opponent && (is_a ? v.system_b : v.system_a) != *opponent) continue;
    auto it = v.per_dimension.find(dimension);
    const Outcome o = it == v.per_dimension.end() ? Outcome::tie : (is_a ? it->second : flip(it->second));
    if (o == Outcome::a_wins) {
      ++win;
    } else if (o == Outcome::b_wins) {
      ++loss;
    } else {
      ++tie;
    }
  }
  const std::size_t n = win + tie + loss;
  if (n == 0) throw Error(Errc::NoVerdicts, "no verdicts for " + system + (opponent ? " vs " + *opponent : ""));
  const double dn = static_cast<double>(n);
  return {static_cast<double>(win) / dn, static_cast<double>(tie) / dn, static_cast<double>(loss) / dn, n};
}

namespace {

std::map<std::string, std::set<std::string>> opponents_of(const std::vector<JudgeVerdict>& verdicts) {
  std::map<std::string, std::set<std::string>> out;
  for (const auto& v : verdicts) {
    if (v.system_a == v.system_b) continue;
    out[v.system_a].insert(v.system_b);
    out[v.system_b].insert(v.system_a);
  }
  return out;
}

nlohmann::json rate_json(const WinRate& r) {
  return {{"win", r.win}, {"tie", r.tie}, {"loss", r.loss}, {"n", r.n}};
}

}  // namespace

nlohmann::json win_rate_report(const std::vector<JudgeVerdict>& verdicts) {
  nlohmann::json systems = nlohmann::json::object();
  for (const auto& [system, opponents] : opponents_of(verdicts)) {
    nlohmann::json entry = {{"pooled", nlohmann::json::object()}, {"by_opponent", nlohmann::json::object()}};
    for (auto d : kDimensions) {
      entry["pooled"][std::string(to_string(d))] = rate_json(win_rate(verdicts, system, d));
    }
    for (const auto& opp : opponents) {
      for (auto d : kDimensions) {
        entry["by_opponent"][opp][std::string(to_string(d))] = rate_json(win_rate(verdicts, system, d, opp));
      }
    }
    systems[system] = entry;
  }
  std::size_t unparseable = 0;
  for (const auto& v : verdicts) unparseable += v.unparseable ? 1 : 0;
  return {{"verdicts", verdicts.size()}, {"unparseable", unparseable}, {"systems", systems}};
}

std::string win_rate_csv(const std::vector<JudgeVerdict>& verdicts) {
  std::string out = "system,opponent,dimension,win,tie,loss,n\n";
  auto row = [&](const std::string& system, const std::string& opp, Dimension d, const WinRate& r) {
    char buf[128];
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f,%zu\n", r.win, r.tie, r.loss, r.n);
    out += system + "," + opp + "," + std::string(to_string(d)) + buf;
  };
  for (const auto& [system, opponents] : opponents_of(verdicts)) {
    for (auto d : kDimensions) row(system, "*", d, win_rate(verdicts, system, d));
    for (const auto& opp : opponents) {
      for (auto d : kDimensions) row(system, opp, d, win_rate(verdicts, system, d, opp));
    }
  }
  return out;
}

FinfactManifest FinfactManifest::from_json(const nlohmann::json& j) {
  FinfactManifest m;
  try {
    m.articles_by_category = j.at("articles_by_category").get<std::map<std::string, int>>();
    for (const auto& [year, n] : j.at("articles_by_year").items()) m.articles_by_year[std::stoi(year)] = n.get<int>();
    m.questions_by_kind = j.at("questions_by_kind").get<std::map<std::string, int>>();
    m.total_questions = j.at("total_questions").get<int>();
  } catch (const std::exception& e) {
    throw Error(Errc::ManifestMismatch, std::string("malformed manifest: ") + e.what());
  }
  return m;
}

nlohmann::json FinfactManifest::to_json() const {
  nlohmann::json years = nlohmann::json::object();
  for (const auto& [y, n] : articles_by_year) years[std::to_string(y)] = n;
  return {{"articles_by_category", articles_by_category},
          {"articles_by_year", years},
          {"questions_by_kind", questions_by_kind},
          {"total_questions", total_questions}};
}

FinfactManifest published_manifest_counts() {
  FinfactManifest m;
  m.articles_by_category = {{"financial", 120}, {"political", 30}, {"technical", 30}, {"sports", 30}};
  m.articles_by_year = {{2021, 70}, {2022, 70}, {2023, 70}};
  m.questions_by_kind = {{"structural", 877}, {"conversational", 637}};
  m.total_questions = 1514;
  return m;
}

void validate_manifest_totals(const FinfactManifest& m) {
  int by_category = 0, by_year = 0, by_kind = 0;
  for (const auto& [c, n] : m.articles_by_category) {
    parse_fact_category(c);
    mismatch_if(n < 0, "negative count for " + c);
    by_category += n;
  }
  for (const auto& [y, n] : m.articles_by_year) {
    mismatch_if(n < 0, "negative count for " + std::to_string(y));
    by_year += n;
  }
  for (const auto& [k, n] : m.questions_by_kind) {
    parse_fact_kind(k);
    mismatch_if(n < 0, "negative count for " + k);
    by_kind += n;
  }
  mismatch_if(by_category != by_year, "articles by category (" + std::to_string(by_category) + ") != by year (" +
                                          std::to_string(by_year) + ")");
  mismatch_if(by_kind != m.total_questions, "questions by kind (" + std::to_string(by_kind) + ") != total (" +
                                                std::to_string(m.total_questions) + ")");
}

void validate_manifest(const FinfactManifest& manifest, const std::vector<FactQA>& items,
                       const std::vector<Document>& articles) {
  validate_manifest_totals(manifest);
  std::set<std::string> known;
  for (const auto& a : articles) known.insert(a.id);
  std::map<std::string, std::pair<FactCategory, int>> cited;
  std::map<std::string, int> kinds;
  std::set<std::string> ids;
  for (const auto& q : items) {
    mismatch_if(!ids.insert(q.id).second, "duplicate item id " + q.id);
    mismatch_if(!known.contains(q.source_article_id), q.id + " cites unknown article " + q.source_article_id);
    auto [it, fresh] = cited.emplace(q.source_article_id, std::pair{q.category, q.year});
    mismatch_if(!fresh && it->second != std::pair{q.category, q.year},
                "items of article " + q.source_article_id + " disagree on category or year");
    ++kinds[std::string(to_string(q.kind))];
  }
  std::map<std::string, int> categories;
  std::map<int, int> years;
  for (const auto& [_, cy] : cited) {
    ++categories[std::string(to_string(cy.first))];
    ++years[cy.second];
  }
  auto compare = [](const auto& declared, const auto& actual, const std::string& what) {
    std::set<std::string> keys;
    auto key = [](const auto& k) {
      if constexpr (std::is_same_v<std::decay_t<decltype(k)>, int>) {
        return std::to_string(k);
      } else {
        return std::string(k);
      }
    };
    for (const auto& [k, _] : declared) keys.insert(key(k));
    for (const auto& [k, _] : actual) keys.insert(key(k));
    for (const auto& k : keys) {
      int d = 0, a = 0;
      for (const auto& [dk, dn] : declared) {
        if (key(dk) == k) d = dn;
      }
      for (const auto& [ak, an] : actual) {
        if (key(ak) == k) a = an;
      }
      mismatch_if(d != a, what + " " + k + ": declared " + std::to_string(d) + ", found " + std::to_string(a));
    }
  };
  compare(manifest.articles_by_category, categories, "articles in category");
  compare(manifest.articles_by_year, years, "articles in year");
  compare(manifest.questions_by_kind, kinds, "questions of kind");
  mismatch_if(static_cast<int>(items.size()) != manifest.total_questions,
              "declared " + std::to_string(manifest.total_questions) + " questions, found " +
                  std::to_string(items.size()));
}

}  // namespace finrag
