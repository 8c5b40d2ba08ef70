#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "finrag/corpus.hpp"
#include "finrag/exam.hpp"
#include "finrag/gateway.hpp"
#include "finrag/prompt.hpp"
#include "finrag/scorer.hpp"
#include "finrag/vector_index.hpp"

namespace finrag {

/// Candidate exemplars plus their question embeddings. Saved as `<name>.idx`
/// with the items in `<name>.items.jsonl` beside it.
class CorpusPool {
 public:
  CorpusPool() = default;
  CorpusPool(std::vector<CorpusItem> items, VectorIndex index);

  /// Embeds each item's question in batches.
  static CorpusPool build(std::vector<CorpusItem> items, ModelClient& embedder, std::size_t batch = 64);
  static CorpusPool load(const std::filesystem::path& index_file);
  void save(const std::filesystem::path& index_file) const;

  const VectorIndex& index() const { return index_; }
  const std::vector<CorpusItem>& items() const { return items_; }
  const CorpusItem& item(const std::string& id) const;
  std::size_t size() const { return items_.size(); }

 private:
  std::vector<CorpusItem> items_;
  std::unordered_map<std::string, std::size_t> by_id_;
  VectorIndex index_;
};

std::filesystem::path pool_items_path(const std::filesystem::path& index_file);

struct RbflConfig {
  int k_shots = 5;
  /// Most similar shot last, next to the target.
  bool ascending = true;
  /// Only items with the target's option count (and a usable answer) qualify.
  bool match_option_count = true;
  EvalMode mode = EvalMode::answer_only;
  Language language = Language::zh;
};

struct RetrievedShot {
  std::string id;
  double score = 0.0;
};

struct Retrieval {
  /// In prompt order.
  std::vector<RetrievedShot> shots;
  /// Fewer than k candidates remained.
  bool pool_exhausted = false;
};

/// Iterative top-1 retrieval with a growing exclude set, starting from
/// `exclude`. Hits come back in retrieval order (most similar first).
std::vector<SimilarityHit> iterative_top1(const VectorIndex& index, const std::vector<float>& query, int k,
                                          std::unordered_set<std::string> exclude,
                                          const std::function<bool(const std::string&)>& keep = nullptr);

/// Text embedded for a target question: stem followed by its option lines.
std::string retrieval_text(const ExamQuestion& q);

/// Shots for a free-text problem over the whole pool.
Retrieval retrieve_shots(const CorpusPool& pool, ModelClient& embedder, const std::string& problem, int k,
                         bool ascending = true);

/// Shots for an exam question: excludes the question itself (by id and by
/// dedup key) and, when configured, items whose option count differs.
Retrieval retrieve_for_question(const CorpusPool& pool, ModelClient& embedder, const ExamQuestion& target,
                                const RbflConfig& cfg);

Demonstration to_demonstration(const CorpusItem& item);

struct RbflPrediction {
  ScoredPrediction prediction;
  Retrieval retrieval;
  std::string prompt;
};

RbflPrediction answer_with_rbfl(const RbflConfig& cfg, const CorpusPool& pool, ModelClient& embedder,
                                ModelClient& answer_model, const PromptBuilder& builder, const ExamQuestion& target,
                                std::string_view subject_label, bool multi_answer);

}  // namespace finrag
