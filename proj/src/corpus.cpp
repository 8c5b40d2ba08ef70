#include "finrag/corpus.hpp"

#include <fstream>
#include <regex>
#include <thread>
#include <unordered_set>
#include <variant>

#include "finrag/error.hpp"
#include "finrag/gateway.hpp"
#include "finrag/scorer.hpp"
#include "finrag/text.hpp"

namespace finrag {

nlohmann::json to_json(const CorpusItem& item) {
  nlohmann::json j = {{"id", item.id},
                      {"raw_text", item.raw_text},
                      {"question", item.question},
                      {"answer_text", item.answer_text},
                      {"options", item.options},
                      {"dedup_key", item.dedup_key},
                      {"source_tag", item.source_tag}};
  j["answer_set"] = item.answer_set ? nlohmann::json(item.answer_set->str()) : nlohmann::json(nullptr);
  j["explanation"] = item.explanation ? nlohmann::json(*item.explanation) : nlohmann::json(nullptr);
  return j;
}

CorpusItem corpus_item_from_json(const nlohmann::json& j) {
  CorpusItem c;
  c.id = j.at("id").get<std::string>();
  c.raw_text = j.value("raw_text", std::string());
  c.question = j.at("question").get<std::string>();
  c.answer_text = j.at("answer_text").get<std::string>();
  c.options = j.value("options", std::vector<std::string>{});
  if (j.contains("answer_set") && !j["answer_set"].is_null()) c.answer_set = LetterSet::of(j["answer_set"].get<std::string>());
  if (j.contains("explanation") && !j["explanation"].is_null()) c.explanation = j["explanation"].get<std::string>();
  c.dedup_key = j.contains("dedup_key") ? j["dedup_key"].get<std::string>() : dedup_key(c.question);
  c.source_tag = j.value("source_tag", std::string());
  return c;
}

std::pair<std::string, std::string> split_qa(std::string_view raw, const std::vector<std::string>& delimiters) {
  static const std::vector<std::string> kDefault = CleanConfig{}.delimiters;
  const auto& delims = delimiters.empty() ? kDefault : delimiters;
  std::size_t best = std::string_view::npos;
  std::size_t best_len = 0;
  for (const auto& d : delims) {
    const auto pos = raw.rfind(d);
    if (pos == std::string_view::npos) continue;
    if (best == std::string_view::npos || pos > best) {
      best = pos;
      best_len = d.size();
    }
  }
  if (best == std::string_view::npos) throw Error(Errc::NoDelimiter, "no answer delimiter");
  std::string q = text::trim(raw.substr(0, best));
  std::string a = text::trim(raw.substr(best + best_len));
  if (q.empty()) throw Error(Errc::EmptyText, "question half is empty");
  if (a.empty()) throw Error(Errc::EmptyAnswer, "answer half is empty");
  return {std::move(q), std::move(a)};
}

std::string dedup_key(std::string_view question) {
  std::string out;
  std::size_t n = 0;
  for (char32_t cp : text::decode_utf8(question)) {
    if (!text::is_cjk_ideograph(cp)) continue;
    text::append_utf8(out, cp);
    if (++n == 30) break;
  }
  return out;
}

namespace {

bool is_ascii_alnum(char32_t c) {
  return (c >= U'0' && c <= U'9') || (c >= U'a' && c <= U'z') || (c >= U'A' && c <= U'Z');
}

struct Marker {
  std::size_t begin = std::u32string::npos;
  std::size_t end = 0;
};

/// Earliest marker for `letter` at or after `from`.
Marker find_marker(const std::u32string& s, char32_t letter, std::size_t from) {
  for (std::size_t i = from; i < s.size(); ++i) {
    const char32_t c = s[i];
    if ((c == U'(' || c == U'（') && i + 2 < s.size() && s[i + 1] == letter &&
        (s[i + 2] == U')' || s[i + 2] == U'）')) {
      return {i, i + 3};
    }
    if (c == letter && i + 1 < s.size() && (i == 0 || !is_ascii_alnum(s[i - 1]))) {
      const char32_t n = s[i + 1];
      if (n == U'.' || n == U'．' || n == U'、' || n == U':' || n == U'：') {
        // "A.." and abbreviations such as "U.S." are not option markers.
        if (n == U'.' && i + 2 < s.size() &&
            (s[i + 2] == U'.' || (is_ascii_alnum(s[i + 2]) && i + 3 < s.size() && s[i + 3] == U'.'))) {
          continue;
        }
        return {i, i + 2};
      }
    }
  }
  return {};
}

struct ParsedAnswer {
  std::optional<LetterSet> letters;
  std::optional<std::string> explanation;
};

ParsedAnswer parse_answer(const std::string& answer_text, std::size_t option_count) {
  ParsedAnswer out;
  if (option_count < 2) return out;
  const auto cps = text::decode_utf8(answer_text);
  LetterSet letters;
  std::size_t i = 0;
  std::size_t after = 0;
  for (; i < cps.size(); ++i) {
    const char32_t c = cps[i];
    if (c >= U'A' && c <= U'Z') {
      letters.insert(static_cast<char>(c));
      after = i + 1;
    } else if (!(c == U',' || c == U'，' || c == U'、' || text::is_space(c))) {
      break;
    }
  }
  if (letters.empty()) return out;
  if (after < cps.size() && is_ascii_alnum(cps[after])) return out;
  if (!letters.subset_of(LetterSet::first_n(static_cast<int>(option_count)))) return out;
  out.letters = letters;
  std::u32string rest = cps.substr(after);
  std::size_t k = 0;
  while (k < rest.size() && (text::is_space(rest[k]) || rest[k] == U'。' || rest[k] == U'.' || rest[k] == U'，' ||
                             rest[k] == U',' || rest[k] == U';' || rest[k] == U'；')) {
    ++k;
  }
  std::string expl = text::encode_utf8(rest.substr(k));
  if (text::starts_with(expl, "解析")) {
    expl = expl.substr(6);
    auto e = text::decode_utf8(expl);
    std::size_t j = 0;
    while (j < e.size() && (e[j] == U':' || e[j] == U'：' || text::is_space(e[j]))) ++j;
    expl = text::encode_utf8(e.substr(j));
  }
  expl = text::trim(expl);
  if (!expl.empty()) out.explanation = expl;
  return out;
}

std::string strip_patterns(std::string s, const std::vector<std::regex>& prefixes,
                           const std::vector<std::regex>& suffixes) {
  for (bool changed = true; changed;) {
    changed = false;
    s = text::trim(s);
    for (const auto& re : prefixes) {
      std::smatch m;
      if (std::regex_search(s, m, re) && m.position(0) == 0 && m.length(0) > 0) {
        s.erase(0, static_cast<std::size_t>(m.length(0)));
        changed = true;
      }
    }
    for (const auto& re : suffixes) {
      std::smatch m;
      if (std::regex_search(s, m, re) && m.length(0) > 0 &&
          static_cast<std::size_t>(m.position(0) + m.length(0)) == s.size()) {
        s.erase(static_cast<std::size_t>(m.position(0)));
        changed = true;
      }
    }
  }
  return s;
}

struct CompiledRules {
  std::vector<std::regex> prefixes;
  std::vector<std::regex> suffixes;
};

CompiledRules compile(const CleanConfig& cfg) {
  CompiledRules r;
  try {
    for (const auto& p : cfg.strip_prefixes) r.prefixes.emplace_back("^(?:" + p + ")");
    for (const auto& p : cfg.strip_suffixes) r.suffixes.emplace_back("(?:" + p + ")$");
  } catch (const std::regex_error& e) {
    throw Error(Errc::ConfigError, std::string("bad strip pattern: ") + e.what());
  }
  return r;
}

CorpusItem parse_compiled(const RawItem& raw, const CleanConfig& config, const CompiledRules& rules) {
  CorpusItem item;
  item.id = raw.id;
  item.source_tag = raw.source_tag;
  item.raw_text = strip_patterns(raw.text, rules.prefixes, rules.suffixes);
  auto [q, a] = split_qa(item.raw_text, config.delimiters);
  item.question = std::move(q);
  item.answer_text = std::move(a);
  item.options = parse_options(item.question);
  auto parsed = parse_answer(item.answer_text, item.options.size());
  item.answer_set = parsed.letters;
  item.explanation = parsed.explanation;
  item.dedup_key = dedup_key(item.question);
  return item;
}

std::string reason_for(const Error& e) {
  switch (e.code()) {
    case Errc::NoDelimiter: return "no_delimiter";
    case Errc::EmptyText: return "empty_question";
    case Errc::EmptyAnswer: return "empty_answer";
    default: return "invalid";
  }
}

}  // namespace

namespace {

std::vector<Marker> option_markers(const std::u32string& s) {
  std::vector<Marker> markers;
  std::size_t from = 0;
  for (char32_t letter = U'A'; letter <= U'Z'; ++letter) {
    const Marker m = find_marker(s, letter, from);
    if (m.begin == std::u32string::npos) break;
    markers.push_back(m);
    from = m.end;
  }
  if (markers.size() < 2) markers.clear();
  return markers;
}

}  // namespace

std::string question_stem(std::string_view question) {
  const auto s = text::decode_utf8(question);
  const auto markers = option_markers(s);
  if (markers.empty()) return text::trim(question);
  return text::trim(text::encode_utf8(s.substr(0, markers.front().begin)));
}

std::vector<std::string> parse_options(std::string_view question) {
  const auto s = text::decode_utf8(question);
  const auto markers = option_markers(s);
  if (markers.empty()) return {};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < markers.size(); ++i) {
    const std::size_t end = i + 1 < markers.size() ? markers[i + 1].begin : s.size();
    out.push_back(text::trim(text::encode_utf8(s.substr(markers[i].end, end - markers[i].end))));
  }
  return out;
}

CleanConfig CleanConfig::from_json(const nlohmann::json& j) {
  CleanConfig c;
  try {
    c.version = j.value("version", c.version);
    c.strip_prefixes = j.value("strip_prefixes", c.strip_prefixes);
    c.strip_suffixes = j.value("strip_suffixes", c.strip_suffixes);
    c.delimiters = j.value("delimiters", c.delimiters);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, std::string("clean config: ") + e.what());
  }
  if (c.delimiters.empty()) throw Error(Errc::ConfigError, "clean config needs at least one delimiter");
  compile(c);
  return c;
}

CleanConfig CleanConfig::load(const std::filesystem::path& file) {
  try {
    return from_json(nlohmann::json::parse(text::read_file(file)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, file.string() + ": " + e.what());
  }
}

CorpusItem parse_item(const RawItem& raw, const CleanConfig& config) {
  return parse_compiled(raw, config, compile(config));
}

CleanResult clean_corpus(const std::vector<RawItem>& items, const CleanConfig& config, int workers) {
  const CompiledRules rules = compile(config);
  std::vector<std::variant<CorpusItem, std::string>> parsed(items.size());
  auto work = [&](std::size_t shard, std::size_t stride) {
    // std::regex objects are read-only here, so sharing them is safe.
    for (std::size_t i = shard; i < items.size(); i += stride) {
      try {
        parsed[i] = parse_compiled(items[i], config, rules);
      } catch (const Error& e) {
        parsed[i] = reason_for(e);
      }
    }
  };
  const auto w = static_cast<std::size_t>(std::max(1, workers));
  if (w == 1 || items.size() < 2) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < w; ++t) pool.emplace_back(work, t, w);
  }

  CleanResult out;
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (auto* reason = std::get_if<std::string>(&parsed[i])) {
      out.rejected.push_back({items[i], *reason});
      continue;
    }
    auto& item = std::get<CorpusItem>(parsed[i]);
    if (!item.dedup_key.empty() && !seen.insert(item.dedup_key).second) {
      out.rejected.push_back({items[i], "duplicate"});
      continue;
    }
    out.kept.push_back(std::move(item));
  }
  return out;
}

std::vector<RawItem> read_raw_jsonl(const std::filesystem::path& file) {
  std::vector<RawItem> out;
  std::size_t line_no = 0;
  for (const auto& line : text::split(text::read_file(file), '\n')) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      RawItem r;
      r.id = j.contains("id") ? (j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump())
                              : std::to_string(line_no);
      r.text = j.at("text").get<std::string>();
      r.source_tag = j.value("source", j.value("source_tag", std::string()));
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::InvalidArgument, file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<CorpusItem> read_corpus_jsonl(const std::filesystem::path& file) {
  std::vector<CorpusItem> out;
  std::size_t line_no = 0;
  for (const auto& line : text::split(text::read_file(file), '\n')) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(corpus_item_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::InvalidArgument, file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_corpus_jsonl(const std::filesystem::path& file, const std::vector<CorpusItem>& items) {
  std::string out;
  for (const auto& item : items) out += to_json(item).dump() + "\n";
  text::write_file(file, out);
}

void write_rejects_jsonl(const std::filesystem::path& file, const std::vector<Rejected>& rejected) {
  std::string out;
  for (const auto& r : rejected) {
    out += nlohmann::json{{"id", r.item.id}, {"text", r.item.text}, {"source", r.item.source_tag}, {"reason", r.reason}}
               .dump() +
           "\n";
  }
  text::write_file(file, out);
}

StatsReport corpus_stats(const std::vector<CorpusItem>& items) {
  const double n = static_cast<double>(items.size());
  std::unordered_set<std::string> keys;
  double text_sum = 0, q_sum = 0, a_sum = 0;
  double text_min = 0, text_max = 0;
  double by_options[4] = {0, 0, 0, 0};
  double others = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    keys.insert(it.dedup_key.empty() ? "\x01" + it.id : it.dedup_key);
    const auto len = static_cast<double>(text::length(it.raw_text));
    text_sum += len;
    text_min = i == 0 ? len : std::min(text_min, len);
    text_max = i == 0 ? len : std::max(text_max, len);
    q_sum += static_cast<double>(text::length(it.question));
    a_sum += static_cast<double>(text::length(it.answer_text));
    const auto k = it.options.size();
    if (k >= 2 && k <= 5) {
      by_options[k - 2] += 1;
    } else {
      others += 1;
    }
  }
  auto avg = [&](double s) { return n > 0 ? s / n : 0.0; };
  return {{"Total items", n},
          {"Unique items", static_cast<double>(keys.size())},
          {"Average text length", avg(text_sum)},
          {"Minimum text length", text_min},
          {"Maximum text length", text_max},
          {"Average question length", avg(q_sum)},
          {"Average answer length", avg(a_sum)},
          {"With 2 options", by_options[0]},
          {"With 3 options", by_options[1]},
          {"With 4 options", by_options[2]},
          {"With 5 options", by_options[3]},
          {"Others", others}};
}

std::string format_stats(const StatsReport& report) {
  std::string out;
  for (const auto& [name, value] : report) {
    char buf[64];
    if (value == static_cast<double>(static_cast<long long>(value))) {
      std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(value));
    } else {
      std::snprintf(buf, sizeof buf, "%.2f", value);
    }
    out += name;
    out.append(name.size() < 26 ? 26 - name.size() : 1, ' ');
    out += buf;
    out += '\n';
  }
  return out;
}

std::string_view to_string(InstructionCategory c) noexcept {
  switch (c) {
    case InstructionCategory::knowledge_inquiry: return "knowledge_inquiry";
    case InstructionCategory::calculation_reasoning: return "calculation_reasoning";
    case InstructionCategory::reading_comprehension: return "reading_comprehension";
    case InstructionCategory::logical_judgment: return "logical_judgment";
  }
  return "knowledge_inquiry";
}

nlohmann::json to_json(const InstructionRecord& r) {
  return {{"category", to_string(r.category)}, {"instruction", r.instruction}, {"input", r.input}, {"output", r.output}};
}

double numeric_ratio(std::string_view s) {
  std::size_t total = 0;
  std::size_t numeric = 0;
  for (char32_t c : text::decode_utf8(s)) {
    if (text::is_space(c)) continue;
    ++total;
    if ((c >= U'0' && c <= U'9') || (c >= U'０' && c <= U'９') || c == U'+' || c == U'-' || c == U'*' ||
        c == U'/' || c == U'=' || c == U'%' || c == U'×' || c == U'÷' || c == U'^' || c == U'.' || c == U'＝' ||
        c == U'％') {
      ++numeric;
    }
  }
  return total ? static_cast<double>(numeric) / static_cast<double>(total) : 0.0;
}

std::optional<InstructionCategory> classify(const CorpusItem& item, const CategoryRules& rules) {
  const std::string q = text::to_lower_ascii(item.question);
  const std::string a = text::to_lower_ascii(item.answer_text);
  for (const auto& m : rules.judgment_markers) {
    if (q.find(m) != std::string::npos) return InstructionCategory::logical_judgment;
  }
  if (!item.answer_set) {
    for (const auto& m : rules.judgment_answers) {
      if (text::starts_with(a, m)) return InstructionCategory::logical_judgment;
    }
  }
  if (!item.options.empty() && !item.answer_set) return std::nullopt;
  const std::string& worked = item.explanation ? *item.explanation : item.answer_text;
  if (numeric_ratio(worked) >= rules.calc_ratio_threshold) return InstructionCategory::calculation_reasoning;
  if (!item.options.empty()) return InstructionCategory::reading_comprehension;
  return InstructionCategory::knowledge_inquiry;
}

namespace {

std::optional<InstructionCategory> ask_classifier(ModelClient& client, const CorpusItem& item) {
  const std::string prompt =
      "Classify the question into exactly one of: knowledge_inquiry, calculation_reasoning, "
      "reading_comprehension, logical_judgment. Reply with the label only.\n\nQuestion: " +
      item.question + "\nAnswer: " + item.answer_text;
  const std::string out = text::to_lower_ascii(text::trim(client.generate(prompt)));
  for (auto c : {InstructionCategory::knowledge_inquiry, InstructionCategory::calculation_reasoning,
                 InstructionCategory::reading_comprehension, InstructionCategory::logical_judgment}) {
    if (out.find(to_string(c)) != std::string::npos) return c;
  }
  return std::nullopt;
}

}  // namespace

ExportResult export_instructions(const std::vector<CorpusItem>& items, const CategoryRules& rules) {
  ExportResult out;
  for (const auto& item : items) {
    auto category = classify(item, rules);
    if (!category && rules.classifier) category = ask_classifier(*rules.classifier, item);
    if (!category) {
      out.uncategorized.emplace_back(item.id, "UncategorizableItem: options without a recoverable answer");
      continue;
    }
    InstructionRecord r;
    r.category = *category;
    r.instruction = item.question;
    r.output = item.answer_text;
    if (*category == InstructionCategory::calculation_reasoning && item.explanation) {
      r.output = *item.explanation;
      if (item.answer_set) {
        r.output += "\n" + render_answer_line(*item.answer_set,
                                              text::contains_cjk(item.question) ? Language::zh : Language::en);
      }
    }
    out.records.push_back(std::move(r));
  }
  return out;
}

}  // namespace finrag
