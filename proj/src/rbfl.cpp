#include "finrag/rbfl.hpp"

#include <algorithm>

#include <spdlog/spdlog.h>

#include "finrag/answering.hpp"
#include "finrag/error.hpp"
#include "finrag/text.hpp"

namespace finrag {

CorpusPool::CorpusPool(std::vector<CorpusItem> items, VectorIndex index)
    : items_(std::move(items)), index_(std::move(index)) {
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (!by_id_.emplace(items_[i].id, i).second) throw Error(Errc::DuplicateId, items_[i].id);
    if (!index_.contains(items_[i].id)) throw Error(Errc::CorruptIndex, "pool item " + items_[i].id + " has no vector");
  }
  if (index_.count() != items_.size()) throw Error(Errc::CorruptIndex, "pool index and items disagree in size");
}

CorpusPool CorpusPool::build(std::vector<CorpusItem> items, ModelClient& embedder, std::size_t batch) {
  std::vector<std::pair<std::string, std::vector<float>>> records;
  records.reserve(items.size());
  for (std::size_t start = 0; start < items.size(); start += batch) {
    const std::size_t end = std::min(items.size(), start + batch);
    std::vector<std::string> texts;
    for (std::size_t i = start; i < end; ++i) texts.push_back(items[i].question);
    auto vecs = embedder.embed(texts);
    for (std::size_t i = start; i < end; ++i) records.emplace_back(items[i].id, std::move(vecs[i - start]));
  }
  auto index = VectorIndex::build(records);
  return CorpusPool(std::move(items), std::move(index));
}

std::filesystem::path pool_items_path(const std::filesystem::path& index_file) {
  auto p = index_file;
  p.replace_extension(".items.jsonl");
  return p;
}

CorpusPool CorpusPool::load(const std::filesystem::path& index_file) {
  auto index = VectorIndex::load(index_file);
  return CorpusPool(read_corpus_jsonl(pool_items_path(index_file)), std::move(index));
}

void CorpusPool::save(const std::filesystem::path& index_file) const {
  index_.save(index_file);
  write_corpus_jsonl(pool_items_path(index_file), items_);
}

const CorpusItem& CorpusPool::item(const std::string& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) throw Error(Errc::UnknownId, id);
  return items_[it->second];
}

std::vector<SimilarityHit> iterative_top1(const VectorIndex& index, const std::vector<float>& query, int k,
                                          std::unordered_set<std::string> exclude,
                                          const std::function<bool(const std::string&)>& keep) {
  std::vector<SimilarityHit> out;
  for (int i = 0; i < k; ++i) {
    auto hits = index.top_k_if(query, 1, [&](const std::string& id) {
      return !exclude.contains(id) && (!keep || keep(id));
    });
    if (hits.empty()) break;
    exclude.insert(hits.front().ref_id);
    out.push_back(std::move(hits.front()));
  }
  return out;
}

std::string retrieval_text(const ExamQuestion& q) {
  return text::trim(q.stem) + "\n" + render_options(q.options);
}

namespace {

Retrieval finish(std::vector<SimilarityHit> hits, int k, bool ascending) {
  Retrieval r;
  r.pool_exhausted = static_cast<int>(hits.size()) < k;
  if (ascending) std::reverse(hits.begin(), hits.end());
  for (auto& h : hits) r.shots.push_back({std::move(h.ref_id), h.score});
  if (r.pool_exhausted) spdlog::warn("PoolExhausted: wanted {} shots, found {}", k, r.shots.size());
  return r;
}

}  // namespace

Retrieval retrieve_shots(const CorpusPool& pool, ModelClient& embedder, const std::string& problem, int k,
                         bool ascending) {
  if (text::trim(problem).empty()) throw Error(Errc::EmptyText, "problem is empty");
  if (k < 0) throw Error(Errc::InvalidArgument, "k must be >= 0");
  if (k == 0) return {};
  const auto query = embedder.embed({problem}).front();
  return finish(iterative_top1(pool.index(), query, k, {}), k, ascending);
}

Retrieval retrieve_for_question(const CorpusPool& pool, ModelClient& embedder, const ExamQuestion& target,
                                const RbflConfig& cfg) {
  if (cfg.k_shots < 0) throw Error(Errc::InvalidArgument, "k must be >= 0");
  if (cfg.k_shots == 0) return {};
  const std::string key = dedup_key(target.stem);
  const std::size_t n_options = target.options.size();
  const bool need_explanation = cfg.mode == EvalMode::chain_of_thought;
  auto keep = [&](const std::string& id) {
    const CorpusItem& it = pool.item(id);
    if (!key.empty() && it.dedup_key == key) return false;
    if (!cfg.match_option_count) return true;
    if (it.options.size() != n_options || !it.answer_set) return false;
    return !need_explanation || it.explanation.has_value();
  };
  const auto query = embedder.embed({retrieval_text(target)}).front();
  return finish(iterative_top1(pool.index(), query, cfg.k_shots, {target.id}, keep), cfg.k_shots, cfg.ascending);
}

Demonstration to_demonstration(const CorpusItem& item) {
  if (!item.answer_set) throw Error(Errc::InvalidArgument, "pool item " + item.id + " has no answer letters");
  return {question_stem(item.question), item.options, *item.answer_set, item.explanation};
}

RbflPrediction answer_with_rbfl(const RbflConfig& cfg, const CorpusPool& pool, ModelClient& embedder,
                                ModelClient& answer_model, const PromptBuilder& builder, const ExamQuestion& target,
                                std::string_view subject_label, bool multi_answer) {
  RbflPrediction out;
  out.retrieval = retrieve_for_question(pool, embedder, target, cfg);
  std::vector<Demonstration> demos;
  for (const auto& shot : out.retrieval.shots) demos.push_back(to_demonstration(pool.item(shot.id)));
  const auto dset = builder.make_set(cfg.language, cfg.mode, subject_label, multi_answer, std::move(demos));
  out.prompt = builder.build_prompt(dset, target);
  out.prediction = predict(answer_model, out.prompt, target, multi_answer, cfg.mode);
  return out;
}

}  // namespace finrag
