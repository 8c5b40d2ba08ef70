#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "finrag/document.hpp"

namespace finrag {

/// CJK runs become overlapping character bigrams (a lone character stays a
/// unigram); ASCII letter/digit runs become lowercase words.
std::vector<std::string> tokenize(std::string_view text);

enum class Field : std::uint8_t { title = 0, company = 1, summary = 2 };

struct TextIndexConfig {
  double title_weight = 3.0;
  double company_weight = 2.0;
  double summary_weight = 1.0;
  double half_life_days = 30.0;

  double weight(Field f) const;
};

struct TextHit {
  std::string doc_id;
  double match_score = 0.0;
  double recency_factor = 1.0;
  double final_score = 0.0;
  std::int64_t published_at = 0;
  SourceType source_type = SourceType::news;
};

/// 2^(-age_days / half_life_days); ages in the future count as 0.
double recency_factor(std::int64_t published_at, std::int64_t now, double half_life_days);

/// Field-weighted tf-idf with exponential recency decay. Searches take a shared
/// lock and indexing an exclusive one, so a search sees either the state
/// before or after a write.
class TextIndex {
 public:
  static constexpr int kVersion = 1;

  explicit TextIndex(TextIndexConfig config = {});
  TextIndex(TextIndex&& other) noexcept;
  TextIndex& operator=(TextIndex&&) = delete;

  /// Throws Error(DuplicateDocId).
  void index_document(const Document& doc);

  /// Top k by final score, then newer first, then doc id. `keep` filters by
  /// source type. Throws Error(InvalidArgument) for k < 1.
  std::vector<TextHit> search(std::string_view query, int k, std::int64_t now,
                              const std::function<bool(SourceType)>& keep = nullptr) const;

  /// ln(1 + N / df); 0 for unknown terms.
  double idf(const std::string& term) const;
  std::size_t size() const;
  bool contains(const std::string& doc_id) const;
  const TextIndexConfig& config() const { return config_; }

  /// Directory with header.json, docs.jsonl and postings.txt. Each postings
  /// line is a term followed by tab-separated "<doc row> <field> <tf>"
  /// entries, ordered by doc id.
  void save(const std::filesystem::path& dir) const;
  static TextIndex load(const std::filesystem::path& dir);

 private:
  struct Posting {
    std::uint32_t doc = 0;
    Field field = Field::title;
    std::uint32_t tf = 0;
  };
  struct DocMeta {
    std::string id;
    std::int64_t published_at = 0;
    SourceType source_type = SourceType::news;
  };

  void add_locked(const DocMeta& meta, const std::map<std::pair<std::string, Field>, std::uint32_t>& tf);
  double idf_locked(std::size_t df) const;

  TextIndexConfig config_;
  std::vector<DocMeta> docs_;
  std::unordered_map<std::string, std::uint32_t> doc_pos_;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
  std::unordered_map<std::string, std::uint32_t> df_;
  mutable std::shared_mutex mu_;
};

}  // namespace finrag
