#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace whatif::text {

// Curly quotes become plain quotes, whitespace runs collapse to one space, ends trimmed.
std::string normalize(std::string_view s);

// normalize() plus removal of trailing sentence punctuation; used for restated decisions.
std::string normalize_sentence(std::string_view s);

bool equivalent(std::string_view a, std::string_view b);

bool starts_with_normalized(std::string_view s, std::string_view prefix);

std::string trim(std::string_view s);

std::vector<std::string> split_lines(std::string_view s);

// Non-empty paragraphs separated by one or more newlines.
std::vector<std::string> paragraphs(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

// "1. first\n2. second" with 1-based numbering.
std::string numbered(const std::vector<std::string>& items);

std::string lowercase(std::string_view s);

std::size_t count_occurrences(std::string_view haystack, std::string_view needle);

}  // namespace whatif::text
