#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace finrag {

/// Set of option letters A..Z stored as a bitmask; iteration is alphabetical.
class LetterSet {
 public:
  constexpr LetterSet() = default;
  static LetterSet of(std::string_view letters);
  /// {A, B, ..., A+n-1}
  static LetterSet first_n(int n);

  constexpr bool contains(char letter) const noexcept {
    return letter >= 'A' && letter <= 'Z' && (bits_ >> (letter - 'A')) & 1U;
  }
  void insert(char letter);
  constexpr bool empty() const noexcept { return bits_ == 0; }
  int size() const noexcept;
  constexpr bool subset_of(LetterSet other) const noexcept { return (bits_ & ~other.bits_) == 0; }
  constexpr std::uint32_t bits() const noexcept { return bits_; }
  std::vector<char> letters() const;
  /// "AC"
  std::string str() const;

  friend constexpr bool operator==(LetterSet, LetterSet) = default;
  friend constexpr bool operator<(LetterSet a, LetterSet b) noexcept { return a.bits_ < b.bits_; }

 private:
  std::uint32_t bits_ = 0;
};

enum class Language { zh, en };
enum class Split { dev, val, test };

std::string_view to_string(Language lang) noexcept;
std::string_view to_string(Split split) noexcept;
/// Throws Error(UnsupportedLanguage).
Language parse_language(std::string_view s);
Split parse_split(std::string_view s);

enum class CategoryName { CPA_SA, CPA_MA, CFA_L1, CFA_L2 };

struct QuestionCategory {
  CategoryName name;
  int option_count;
  bool multi_answer;

  static QuestionCategory of(CategoryName name) noexcept;
  static QuestionCategory parse(std::string_view s);
  std::string_view label() const noexcept;

  friend bool operator==(const QuestionCategory&, const QuestionCategory&) = default;
};

inline constexpr int kDevQuestionsPerSubject = 5;

struct ExamQuestion {
  std::string id;
  std::string subject;
  Language language = Language::zh;
  std::string stem;
  /// Option texts for letters A, B, ... in order.
  std::vector<std::string> options;
  /// Absent when the split hides the answer.
  std::optional<LetterSet> answer;
  std::optional<std::string> explanation;
  Split split = Split::val;

  LetterSet alphabet() const { return LetterSet::first_n(static_cast<int>(options.size())); }
};

/// Uppercases, drops separators (whitespace, commas, "、"), dedups and sorts.
/// Throws Error(EmptyAnswer) or Error(NonLetterCharacter).
LetterSet normalize_answer(std::string_view raw);

/// `<root>/<split>/<subject>_<split>.csv`
std::filesystem::path dataset_path(const std::filesystem::path& root, std::string_view subject,
                                   Split split);

/// Reads a dataset CSV. Language is inferred from the stems unless given.
std::vector<ExamQuestion> load_dataset(const std::filesystem::path& root, std::string_view subject,
                                       Split split, std::optional<Language> language = std::nullopt);
std::vector<ExamQuestion> parse_dataset(std::string_view csv, std::string_view subject, Split split,
                                        std::optional<Language> language = std::nullopt);

/// Canonical serialization: UTF-8 without BOM, LF line endings, minimal quoting.
std::string format_dataset(const std::vector<ExamQuestion>& questions);
void write_dataset(const std::filesystem::path& root, std::string_view subject, Split split,
                   const std::vector<ExamQuestion>& questions);

namespace csv {

/// RFC 4180 records. Accepts CRLF and a leading BOM.
std::vector<std::vector<std::string>> parse(std::string_view content);
std::string escape(std::string_view field);

}  // namespace csv

}  // namespace finrag
