#include "finrag/exam.hpp"

#include <algorithm>
#include <bit>
#include <map>

#include "finrag/error.hpp"
#include "finrag/text.hpp"

namespace finrag {

LetterSet LetterSet::of(std::string_view letters) {
  LetterSet s;
  for (char c : letters) s.insert(c);
  return s;
}

LetterSet LetterSet::first_n(int n) {
  LetterSet s;
  for (int i = 0; i < n; ++i) s.insert(static_cast<char>('A' + i));
  return s;
}

void LetterSet::insert(char letter) {
  if (letter < 'A' || letter > 'Z') {
    throw Error(Errc::NonLetterCharacter, std::string("'") + letter + "' is not an option letter");
  }
  bits_ |= 1U << (letter - 'A');
}

int LetterSet::size() const noexcept { return std::popcount(bits_); }

std::vector<char> LetterSet::letters() const {
  std::vector<char> out;
  for (int i = 0; i < 26; ++i) {
    if ((bits_ >> i) & 1U) out.push_back(static_cast<char>('A' + i));
  }
  return out;
}

std::string LetterSet::str() const {
  const auto ls = letters();
  return {ls.begin(), ls.end()};
}

std::string_view to_string(Language lang) noexcept { return lang == Language::zh ? "zh" : "en"; }

std::string_view to_string(Split split) noexcept {
  switch (split) {
    case Split::dev: return "dev";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "val";
}

Language parse_language(std::string_view s) {
  if (s == "zh") return Language::zh;
  if (s == "en") return Language::en;
  throw Error(Errc::UnsupportedLanguage, std::string(s));
}

Split parse_split(std::string_view s) {
  if (s == "dev") return Split::dev;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw Error(Errc::InvalidArgument, "unknown split '" + std::string(s) + "'");
}

QuestionCategory QuestionCategory::of(CategoryName name) noexcept {
  switch (name) {
    case CategoryName::CPA_SA: return {name, 4, false};
    case CategoryName::CPA_MA: return {name, 4, true};
    case CategoryName::CFA_L1: return {name, 3, false};
    case CategoryName::CFA_L2: return {name, 3, false};
  }
  return {name, 4, false};
}

QuestionCategory QuestionCategory::parse(std::string_view s) {
  if (s == "CPA-SA") return of(CategoryName::CPA_SA);
  if (s == "CPA-MA") return of(CategoryName::CPA_MA);
  if (s == "CFA-L1") return of(CategoryName::CFA_L1);
  if (s == "CFA-L2") return of(CategoryName::CFA_L2);
  throw Error(Errc::ConfigError, "unknown question category '" + std::string(s) + "'");
}

std::string_view QuestionCategory::label() const noexcept {
  switch (name) {
    case CategoryName::CPA_SA: return "CPA-SA";
    case CategoryName::CPA_MA: return "CPA-MA";
    case CategoryName::CFA_L1: return "CFA-L1";
    case CategoryName::CFA_L2: return "CFA-L2";
  }
  return "?";
}

LetterSet normalize_answer(std::string_view raw) {
  const std::string trimmed = text::trim(raw);
  if (trimmed.empty()) throw Error(Errc::EmptyAnswer, "answer is empty");
  LetterSet out;
  for (char32_t cp : text::decode_utf8(trimmed)) {
    if (text::is_space(cp) || cp == U',' || cp == U'，' || cp == U'、') continue;
    if (cp >= U'a' && cp <= U'z') cp = cp - U'a' + U'A';
    if (cp < U'A' || cp > U'Z') {
      throw Error(Errc::NonLetterCharacter, "unexpected character in answer '" + trimmed + "'");
    }
    out.insert(static_cast<char>(cp));
  }
  if (out.empty()) throw Error(Errc::EmptyAnswer, "answer has no letters");
  return out;
}

namespace csv {

std::vector<std::vector<std::string>> parse(std::string_view content) {
  if (text::starts_with(content, "\xEF\xBB\xBF")) content.remove_prefix(3);
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  std::size_t i = 0;
  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
    record.clear();
  };
  while (i < content.size()) {
    const char c = content[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field.push_back('"');
          i += 2;
          continue;
        }
        quoted = false;
      } else {
        field.push_back(c);
      }
      ++i;
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\r' && i + 1 < content.size() && content[i + 1] == '\n') {
      end_record();
      ++i;
    } else if (c == '\n') {
      end_record();
    } else {
      field.push_back(c);
      field_started = true;
    }
    ++i;
  }
  if (quoted) throw Error(Errc::MalformedRow, "unterminated quoted field");
  if (field_started || !record.empty()) end_record();
  return records;
}

std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace csv

std::filesystem::path dataset_path(const std::filesystem::path& root, std::string_view subject,
                                   Split split) {
  const std::string s(to_string(split));
  return root / s / (std::string(subject) + "_" + s + ".csv");
}

std::vector<ExamQuestion> parse_dataset(std::string_view content, std::string_view subject,
                                        Split split, std::optional<Language> language) {
  const auto records = csv::parse(content);
  if (records.empty()) throw MalformedRow(0, "missing header row");
  const auto& header = records.front();
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[text::trim(header[i])] = i;
  for (const char* required : {"id", "question", "A", "B", "answer"}) {
    if (!col.contains(required)) {
      throw MalformedRow(0, std::string("header lacks column '") + required + "'");
    }
  }
  std::vector<std::size_t> option_cols;
  for (const char* letter : {"A", "B", "C", "D", "E"}) {
    auto it = col.find(letter);
    if (it == col.end()) break;
    option_cols.push_back(it->second);
  }
  const auto expl_col = col.find("explanation");

  std::vector<ExamQuestion> out;
  out.reserve(records.size() - 1);
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& row = records[r];
    if (row.size() != header.size()) {
      throw MalformedRow(r, "expected " + std::to_string(header.size()) + " fields, got " +
                                std::to_string(row.size()));
    }
    ExamQuestion q;
    q.id = text::trim(row[col["id"]]);
    if (q.id.empty()) throw MalformedRow(r, "empty id");
    q.subject = std::string(subject);
    q.stem = row[col["question"]];
    q.split = split;
    bool gap = false;
    for (std::size_t c : option_cols) {
      if (row[c].empty()) {
        gap = true;
        continue;
      }
      if (gap) throw MalformedRow(r, "option letters are not contiguous");
      q.options.push_back(row[c]);
    }
    if (q.options.size() < 2) throw MalformedRow(r, "fewer than two options");

    const std::string& raw_answer = row[col["answer"]];
    if (!text::trim(raw_answer).empty()) {
      LetterSet answer;
      try {
        answer = normalize_answer(raw_answer);
      } catch (const Error& e) {
        throw Error(Errc::InvalidAnswerLetter, "row " + std::to_string(r) + ": " + e.what());
      }
      if (!answer.subset_of(q.alphabet())) {
        throw Error(Errc::InvalidAnswerLetter,
                    "row " + std::to_string(r) + ": answer '" + answer.str() + "' not among options");
      }
      q.answer = answer;
    } else if (split != Split::test) {
      throw MalformedRow(r, "missing answer");
    }
    if (expl_col != col.end() && !row[expl_col->second].empty()) {
      q.explanation = row[expl_col->second];
    } else if (split == Split::dev) {
      throw MalformedRow(r, "dev rows need an explanation");
    }
    q.language = language.value_or(text::contains_cjk(q.stem) ? Language::zh : Language::en);
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<ExamQuestion> load_dataset(const std::filesystem::path& root, std::string_view subject,
                                       Split split, std::optional<Language> language) {
  const auto path = dataset_path(root, subject, split);
  if (!std::filesystem::exists(path)) throw Error(Errc::MissingFile, path.string());
  return parse_dataset(text::read_file(path), subject, split, language);
}

std::string format_dataset(const std::vector<ExamQuestion>& questions) {
  std::size_t option_columns = 4;
  for (const auto& q : questions) option_columns = std::max(option_columns, q.options.size());
  std::string out = "id,question";
  for (std::size_t i = 0; i < option_columns; ++i) {
    out += ',';
    out += static_cast<char>('A' + i);
  }
  out += ",answer,explanation\n";
  for (const auto& q : questions) {
    out += csv::escape(q.id);
    out += ',';
    out += csv::escape(q.stem);
    for (std::size_t i = 0; i < option_columns; ++i) {
      out += ',';
      if (i < q.options.size()) out += csv::escape(q.options[i]);
    }
    out += ',';
    if (q.answer) out += q.answer->str();
    out += ',';
    if (q.explanation) out += csv::escape(*q.explanation);
    out += '\n';
  }
  return out;
}

void write_dataset(const std::filesystem::path& root, std::string_view subject, Split split,
                   const std::vector<ExamQuestion>& questions) {
  text::write_file(dataset_path(root, subject, split), format_dataset(questions));
}

}  // namespace finrag
