#include "finrag/text_index.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <set>
#include <sstream>

#include "finrag/error.hpp"
#include "finrag/text.hpp"

namespace finrag {

std::vector<std::string> tokenize(std::string_view input) {
  std::vector<std::string> out;
  const auto cps = text::decode_utf8(input);
  std::size_t i = 0;
  while (i < cps.size()) {
    const char32_t c = cps[i];
    if (text::is_cjk_ideograph(c)) {
      std::size_t j = i;
      while (j < cps.size() && text::is_cjk_ideograph(cps[j])) ++j;
      if (j - i == 1) {
        out.push_back(text::encode_utf8(std::u32string_view(cps).substr(i, 1)));
      } else {
        for (std::size_t k = i; k + 1 < j; ++k) out.push_back(text::encode_utf8(std::u32string_view(cps).substr(k, 2)));
      }
      i = j;
    } else if (c < 0x80 && std::isalnum(static_cast<unsigned char>(c))) {
      std::string word;
      while (i < cps.size() && cps[i] < 0x80 && std::isalnum(static_cast<unsigned char>(cps[i]))) {
        word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(cps[i]))));
        ++i;
      }
      out.push_back(std::move(word));
    } else {
      ++i;
    }
  }
  return out;
}

double TextIndexConfig::weight(Field f) const {
  switch (f) {
    case Field::title: return title_weight;
    case Field::company: return company_weight;
    case Field::summary: return summary_weight;
  }
  return 0.0;
}

double recency_factor(std::int64_t published_at, std::int64_t now, double half_life_days) {
  const double age_days = std::max<double>(0.0, static_cast<double>(now - published_at) / 86400.0);
  return std::exp2(-age_days / half_life_days);
}

TextIndex::TextIndex(TextIndexConfig config) : config_(config) {
  if (!(config_.half_life_days > 0)) throw Error(Errc::ConfigError, "half_life_days must be positive");
}

TextIndex::TextIndex(TextIndex&& other) noexcept
    : config_(other.config_),
      docs_(std::move(other.docs_)),
      doc_pos_(std::move(other.doc_pos_)),
      postings_(std::move(other.postings_)),
      df_(std::move(other.df_)) {}

void TextIndex::index_document(const Document& doc) {
  std::map<std::pair<std::string, Field>, std::uint32_t> tf;
  for (const auto& t : tokenize(doc.title)) ++tf[{t, Field::title}];
  for (const auto& name : doc.company_names) {
    for (const auto& t : tokenize(name)) ++tf[{t, Field::company}];
  }
  for (const auto& t : tokenize(doc.summary)) ++tf[{t, Field::summary}];
  std::unique_lock lock(mu_);
  if (doc_pos_.contains(doc.id)) throw Error(Errc::DuplicateDocId, doc.id);
  add_locked({doc.id, doc.published_at, doc.source_type}, tf);
}

void TextIndex::add_locked(const DocMeta& meta, const std::map<std::pair<std::string, Field>, std::uint32_t>& tf) {
  const auto pos = static_cast<std::uint32_t>(docs_.size());
  docs_.push_back(meta);
  doc_pos_[meta.id] = pos;
  std::string last_term;
  for (const auto& [key, count] : tf) {
    postings_[key.first].push_back({pos, key.second, count});
    if (key.first != last_term) {
      ++df_[key.first];
      last_term = key.first;
    }
  }
}

double TextIndex::idf_locked(std::size_t df) const {
  if (df == 0) return 0.0;
  return std::log(1.0 + static_cast<double>(docs_.size()) / static_cast<double>(df));
}

double TextIndex::idf(const std::string& term) const {
  std::shared_lock lock(mu_);
  auto it = df_.find(term);
  return it == df_.end() ? 0.0 : idf_locked(it->second);
}

std::size_t TextIndex::size() const {
  std::shared_lock lock(mu_);
  return docs_.size();
}

bool TextIndex::contains(const std::string& doc_id) const {
  std::shared_lock lock(mu_);
  return doc_pos_.contains(doc_id);
}

std::vector<TextHit> TextIndex::search(std::string_view query, int k, std::int64_t now,
                                       const std::function<bool(SourceType)>& keep) const {
  if (k < 1) throw Error(Errc::InvalidArgument, "k must be >= 1");
  const auto terms_list = tokenize(query);
  const std::set<std::string> terms(terms_list.begin(), terms_list.end());
  std::shared_lock lock(mu_);
  std::unordered_map<std::uint32_t, double> match;
  for (const auto& t : terms) {
    auto it = postings_.find(t);
    if (it == postings_.end()) continue;
    const double idf = idf_locked(df_.at(t));
    for (const auto& p : it->second) match[p.doc] += config_.weight(p.field) * p.tf * idf;
  }
  std::vector<TextHit> hits;
  hits.reserve(match.size());
  for (const auto& [pos, score] : match) {
    const auto& m = docs_[pos];
    if (keep && !keep(m.source_type)) continue;
    TextHit h;
    h.doc_id = m.id;
    h.match_score = score;
    h.recency_factor = recency_factor(m.published_at, now, config_.half_life_days);
    h.final_score = score * h.recency_factor;
    h.published_at = m.published_at;
    h.source_type = m.source_type;
    hits.push_back(std::move(h));
  }
  auto before = [](const TextHit& a, const TextHit& b) {
    if (a.final_score != b.final_score) return a.final_score > b.final_score;
    if (a.published_at != b.published_at) return a.published_at > b.published_at;
    return a.doc_id < b.doc_id;
  };
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(take), hits.end(), before);
  hits.resize(take);
  return hits;
}

void TextIndex::save(const std::filesystem::path& dir) const {
  std::shared_lock lock(mu_);
  nlohmann::json header = {{"version", kVersion},
                           {"documents", docs_.size()},
                           {"terms", postings_.size()},
                           {"title_weight", config_.title_weight},
                           {"company_weight", config_.company_weight},
                           {"summary_weight", config_.summary_weight},
                           {"half_life_days", config_.half_life_days}};
  std::string docs;
  for (const auto& d : docs_) {
    docs += nlohmann::json{{"id", d.id}, {"published_at", d.published_at}, {"source_type", to_string(d.source_type)}}
                .dump() +
            "\n";
  }
  std::vector<std::string> terms;
  terms.reserve(postings_.size());
  for (const auto& [t, _] : postings_) terms.push_back(t);
  std::sort(terms.begin(), terms.end());
  std::string post;
  for (const auto& t : terms) {
    auto list = postings_.at(t);
    std::sort(list.begin(), list.end(), [&](const Posting& a, const Posting& b) {
      if (docs_[a.doc].id != docs_[b.doc].id) return docs_[a.doc].id < docs_[b.doc].id;
      return a.field < b.field;
    });
    post += t;
    for (const auto& p : list) {
      post += '\t' + std::to_string(p.doc) + ' ' + std::to_string(static_cast<int>(p.field)) + ' ' + std::to_string(p.tf);
    }
    post += '\n';
  }
  text::write_file(dir / "header.json", header.dump(2) + "\n");
  text::write_file(dir / "docs.jsonl", docs);
  text::write_file(dir / "postings.txt", post);
}

TextIndex TextIndex::load(const std::filesystem::path& dir) {
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text::read_file(dir / "header.json"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CorruptIndex, std::string("header: ") + e.what());
  }
  if (header.value("version", 0) != kVersion) throw Error(Errc::CorruptIndex, "unsupported text index version");
  TextIndexConfig cfg;
  cfg.title_weight = header.value("title_weight", cfg.title_weight);
  cfg.company_weight = header.value("company_weight", cfg.company_weight);
  cfg.summary_weight = header.value("summary_weight", cfg.summary_weight);
  cfg.half_life_days = header.value("half_life_days", cfg.half_life_days);
  TextIndex idx(cfg);
  for (const auto& line : text::split(text::read_file(dir / "docs.jsonl"), '\n')) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      DocMeta m{j.at("id").get<std::string>(), j.at("published_at").get<std::int64_t>(),
                parse_source_type(j.at("source_type").get<std::string>())};
      idx.doc_pos_[m.id] = static_cast<std::uint32_t>(idx.docs_.size());
      idx.docs_.push_back(std::move(m));
    } catch (const std::exception& e) {
      throw Error(Errc::CorruptIndex, std::string("docs: ") + e.what());
    }
  }
  for (const auto& line : text::split(text::read_file(dir / "postings.txt"), '\n')) {
    if (line.empty()) continue;
    const auto cols = text::split(line, '\t');
    const std::string& term = cols[0];
    std::set<std::uint32_t> docs_with_term;
    for (std::size_t i = 1; i < cols.size(); ++i) {
      std::istringstream ss(cols[i]);
      std::uint32_t doc = 0;
      int field = 0;
      std::uint32_t tf = 0;
      if (!(ss >> doc >> field >> tf) || field < 0 || field > 2) throw Error(Errc::CorruptIndex, "bad posting for " + term);
      if (doc >= idx.docs_.size()) throw Error(Errc::CorruptIndex, "posting names unknown doc row");
      idx.postings_[term].push_back({doc, static_cast<Field>(field), tf});
      docs_with_term.insert(doc);
    }
    idx.df_[term] = static_cast<std::uint32_t>(docs_with_term.size());
  }
  if (idx.docs_.size() != header.value("documents", std::size_t{0})) {
    throw Error(Errc::CorruptIndex, "document count disagrees with header");
  }
  return idx;
}

}  // namespace finrag
