#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "finrag/doc_store.hpp"
#include "finrag/gateway.hpp"
#include "finrag/prompt.hpp"

namespace finrag {

enum class Role { user, assistant };
std::string_view to_string(Role r) noexcept;
Role parse_role(std::string_view s);

struct Citation {
  int index = 0;
  std::string paragraph_ref;
};

struct DialogueTurn {
  Role role = Role::user;
  std::string text;
  std::vector<Citation> citations;
  std::int64_t timestamp = 0;
  std::optional<std::string> trace_id;
  /// Set on the explicit failure turn the pipeline emits instead of crashing.
  bool failed = false;
};

nlohmann::json to_json(const DialogueTurn& t);
DialogueTurn turn_from_json(const nlohmann::json& j);

struct RewriteResult {
  std::string rewritten_query;
  std::vector<std::string> keywords;
  /// True when the deterministic fallback was used.
  bool fallback = false;
};

struct Intention {
  std::set<SourceType> sources;
  bool needs_market_data = false;
  bool needs_reports = false;
  double confidence = 0.0;
  bool fallback = false;
};

struct KnowledgeEntry {
  int index = 0;
  std::string paragraph_ref;
  std::string text;
  double score = 0.0;
  /// Model-condensed text; excluded from verbatim checks.
  bool condensed = false;
};

struct KnowledgeBundle {
  std::vector<KnowledgeEntry> entries;
  int budget_chars = 6000;

  /// Sum of entry lengths in code points.
  std::size_t total_chars() const;
};

struct ScoredParagraph {
  Paragraph paragraph;
  double score = 0.0;
};

struct GeneratedResponse {
  std::string answer;
  std::vector<Citation> citations;
  int attempts = 0;
};

/// Agent templates from `<dir>/{rewrite,intention,refine,respond}.txt`, each
/// with a "prompt" section.
class AgentPrompts {
 public:
  static AgentPrompts from_directory(const std::filesystem::path& dir);
  /// templates/agents under the default template directory.
  static AgentPrompts defaults();

  std::string render(const std::string& agent, const std::map<std::string, std::string>& values) const;
  /// Optional section of an agent template; empty when absent.
  std::string section_or_empty(const std::string& agent, const std::string& section) const;

 private:
  std::map<std::string, PromptTemplate> templates_;
};

/// The last `max_turns` turns as "User: ..." / "Assistant: ..." lines.
std::string render_history(const std::vector<DialogueTurn>& history, std::size_t max_turns = 6);

/// The JSON object inside a model response, tolerating surrounding prose and
/// code fences. nullopt when none parses.
std::optional<nlohmann::json> extract_json_object(std::string_view response);

/// Distinct query tokens ordered by descending idf (first occurrence breaks
/// ties), at most `n`.
std::vector<std::string> top_keywords(std::string_view query, const TextIndex* idf_source, std::size_t n = 5);

inline constexpr std::size_t kMaxKeywordChars = 32;

/// Throws Error(InvalidArgument) for an empty query. Model failures and
/// unparseable output (after one retry) yield the deterministic fallback.
RewriteResult rewrite_query(const std::vector<DialogueTurn>& history, const std::string& query, ModelClient& model,
                            const AgentPrompts& prompts, const TextIndex* idf_source = nullptr);

/// Keyword rules standing in for a model: valuation and holding questions need
/// market data and reports; macro terms add macro; news is always searched,
/// and reports too when nothing more specific matched.
Intention rule_intention(std::string_view query);

/// Model failures and unparseable output (after one retry) fall back to
/// {news} with confidence 0.
Intention detect_intention(const std::string& rewritten, ModelClient& model, const AgentPrompts& prompts);

/// Whole sentences of `text` from the start, as many as fit in `limit` code
/// points.
std::string sentence_prefix(std::string_view text, std::size_t limit);

/// Greedy selection in hit order until the budget is spent. Entries are
/// verbatim paragraphs or sentence prefixes of them; with a model, a passage
/// that does not fit may instead be condensed (flagged). Hits must be sorted by
/// descending score.
KnowledgeBundle extract_refine(const std::vector<ScoredParagraph>& hits, const std::string& question, int budget_chars,
                               ModelClient* model = nullptr, const AgentPrompts* prompts = nullptr);

/// Fixed reply for an empty bundle, in the question's language.
std::string insufficient_knowledge_answer(std::string_view question);

/// Every "[n]" marker in order of first appearance.
std::vector<int> parse_citation_markers(std::string_view answer);

/// Empty bundle: the insufficient-knowledge answer with no citations.
/// Otherwise citations are the markers found; an out-of-range marker triggers
/// one regeneration and then Error(UncitedIndex). Model failures throw
/// Error(ModelError).
GeneratedResponse generate_response(const KnowledgeBundle& bundle, const std::string& question,
                                    const std::vector<DialogueTurn>& history, ModelClient& model,
                                    const AgentPrompts& prompts);

struct PipelineConfig {
  int recall_k = 20;
  int rerank_k = 8;
  int budget_chars = 6000;
  std::size_t history_turns = 6;
  int realtime_limit = 5;
};

/// Per-agent models; one client may serve several roles.
struct AgentModels {
  std::shared_ptr<ModelClient> rewriter;
  std::shared_ptr<ModelClient> intention;
  std::shared_ptr<ModelClient> refiner;  // may be null: verbatim selection only
  std::shared_ptr<ModelClient> responder;
};

/// Conversation state. Turns are appended under the session's mutex, so
/// concurrent questions on one session are answered one at a time.
struct Session {
  std::string id;
  std::int64_t created_at = 0;
  std::vector<DialogueTurn> turns;
  std::mutex mu;
};

struct PipelineResult {
  DialogueTurn turn;
  /// Every stage's inputs, outputs and errors.
  nlohmann::json trace;
};

/// Rewrite, intention, per-source recall and rerank, refine, respond.
class QaPipeline {
 public:
  QaPipeline(KnowledgeBase& kb, AgentModels models, AgentPrompts prompts, PipelineConfig config = {},
             std::vector<Fetcher> realtime = {});

  /// Never throws for stage failures: each stage degrades to its fallback and
  /// a response failure yields a failed turn.
  PipelineResult answer(const std::vector<DialogueTurn>& history, const std::string& query, std::int64_t now) const;

  /// Appends the user turn and the answer to the session.
  PipelineResult answer_in_session(Session& session, const std::string& query, std::int64_t now) const;

  const PipelineConfig& config() const { return config_; }

 private:
  KnowledgeBase& kb_;
  AgentModels models_;
  AgentPrompts prompts_;
  PipelineConfig config_;
  std::vector<Fetcher> realtime_;
};


}  // namespace finrag
