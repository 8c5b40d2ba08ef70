#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "finrag/exam.hpp"
#include "finrag/gateway.hpp"
#include "finrag/text.hpp"

namespace finrag::testing {

inline std::filesystem::path data_dir() { return std::filesystem::path(FINRAG_TEST_DATA) / "data"; }

/// Fresh directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("finrag-test-" + text::hex64((static_cast<std::uint64_t>(rd()) << 32) | rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline ModelHandle stub_handle(const std::string& id, const std::string& stub,
                               nlohmann::json params = nlohmann::json::object(),
                               ModelKind kind = ModelKind::chat_generation, std::uint64_t seed = 0) {
  ModelHandle h;
  h.id = id;
  h.kind = kind;
  h.endpoint = "stub:" + stub;
  h.stub = params.is_null() ? nlohmann::json::object() : std::move(params);
  h.seed = seed;
  h.retry.backoff_base_ms = 1;
  return h;
}

inline std::shared_ptr<ModelClient> stub_client(const std::string& stub,
                                                nlohmann::json params = nlohmann::json::object(),
                                                ModelKind kind = ModelKind::chat_generation, std::uint64_t seed = 0) {
  auto h = stub_handle(stub, stub, std::move(params), kind, seed);
  return std::make_shared<ModelClient>(h, make_backend(h));
}

/// Questions with uniformly drawn answers. Multi-answer golds are uniform over
/// the subsets of size >= 2.
inline std::vector<ExamQuestion> synthetic_questions(const std::string& subject, int n, int option_count, bool multi,
                                                     std::uint64_t seed, Split split = Split::val,
                                                     Language lang = Language::en) {
  std::mt19937_64 rng(seed);
  std::vector<LetterSet> combos;
  for (std::uint32_t mask = 0; mask < (1U << option_count); ++mask) {
    LetterSet s;
    for (int b = 0; b < option_count; ++b) {
      if (mask >> b & 1U) s.insert(static_cast<char>('A' + b));
    }
    if (s.size() >= (multi ? 2 : 1) && (multi || s.size() == 1)) combos.push_back(s);
  }
  std::vector<ExamQuestion> out;
  for (int i = 0; i < n; ++i) {
    ExamQuestion q;
    q.id = subject + "-" + to_string(split).data() + std::to_string(i);
    q.subject = subject;
    q.language = lang;
    q.split = split;
    q.stem = lang == Language::zh ? "第" + std::to_string(i) + "题：下列关于" + subject + "的说法正确的是"
                                  : "Question " + std::to_string(i) + " about " + subject + ": which is correct";
    for (int o = 0; o < option_count; ++o) q.options.push_back("option " + std::to_string(i) + "." + std::to_string(o));
    q.answer = combos[std::uniform_int_distribution<std::size_t>(0, combos.size() - 1)(rng)];
    if (split == Split::dev) q.explanation = "Because of rule " + std::to_string(i) + ".";
    out.push_back(std::move(q));
  }
  return out;
}

/// Writes `<root>/dev` (5 questions) and `<root>/val` (n questions) for a subject.
inline void write_exam(const std::filesystem::path& root, const std::string& subject, int n, int option_count,
                       bool multi, std::uint64_t seed, Language lang = Language::en) {
  std::filesystem::create_directories(root / "dev");
  std::filesystem::create_directories(root / "val");
  write_dataset(root, subject, Split::dev,
                synthetic_questions(subject, kDevQuestionsPerSubject, option_count, multi, seed + 1, Split::dev, lang));
  write_dataset(root, subject, Split::val, synthetic_questions(subject, n, option_count, multi, seed, Split::val, lang));
}

}  // namespace finrag::testing
