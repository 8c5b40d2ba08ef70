#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

// Small UTF-8, string and file helpers used across modules.
namespace finrag::text {

/// Decodes UTF-8 into code points. Invalid bytes decode as U+FFFD.
std::u32string decode_utf8(std::string_view s);
std::string encode_utf8(std::u32string_view s);
void append_utf8(std::string& out, char32_t cp);

/// Number of code points.
std::size_t length(std::string_view s);
/// First `n` code points.
std::string take(std::string_view s, std::size_t n);

bool is_cjk_ideograph(char32_t cp) noexcept;
bool is_space(char32_t cp) noexcept;
bool contains_cjk(std::string_view s);

/// Trims ASCII and Unicode whitespace (including U+3000) from both ends.
std::string trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);

bool starts_with(std::string_view s, std::string_view prefix) noexcept;
bool ends_with(std::string_view s, std::string_view suffix) noexcept;

std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// 64-bit FNV-1a; stable across platforms and runs.
std::uint64_t fnv1a(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept;
std::string hex64(std::uint64_t v);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

/// Unix seconds <-> "YYYY-MM-DDTHH:MM:SSZ". Parsing also accepts a bare date
/// and a numeric string of seconds.
std::int64_t parse_timestamp(std::string_view s);
std::string format_timestamp(std::int64_t unix_seconds);
std::int64_t now_seconds();

}  // namespace finrag::text
