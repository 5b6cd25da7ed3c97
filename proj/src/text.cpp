#include "whatif/text.hpp"

#include <algorithm>
#include <cctype>

namespace whatif::text {
namespace {

struct Replacement {
  std::string_view from;
  std::string_view to;
};

constexpr Replacement kQuotes[] = {
    {"\xE2\x80\x9C", "\""},  // left double
    {"\xE2\x80\x9D", "\""},  // right double
    {"\xE2\x80\x98", "'"},   // left single
    {"\xE2\x80\x99", "'"},   // right single
    {"\xC2\xA0", " "},       // nbsp
};

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::string normalize(std::string_view s) {
  std::string plain;
  plain.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    bool replaced = false;
    for (const auto& r : kQuotes) {
      if (s.substr(i, r.from.size()) == r.from) {
        plain += r.to;
        i += r.from.size();
        replaced = true;
        break;
      }
    }
    if (!replaced) plain += s[i++];
  }

  std::string out;
  out.reserve(plain.size());
  bool pending_space = false;
  for (char c : plain) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += c;
  }
  return out;
}

std::string normalize_sentence(std::string_view s) {
  std::string out = normalize(s);
  while (!out.empty() && (out.back() == '.' || out.back() == '!' || out.back() == ' ')) {
    out.pop_back();
  }
  return out;
}

bool equivalent(std::string_view a, std::string_view b) {
  return normalize_sentence(a) == normalize_sentence(b);
}

bool starts_with_normalized(std::string_view s, std::string_view prefix) {
  return normalize(s).starts_with(normalize(prefix));
}

std::string trim(std::string_view s) {
  auto begin = std::find_if_not(s.begin(), s.end(), is_space);
  auto end = std::find_if_not(s.rbegin(), s.rend(), is_space).base();
  return begin < end ? std::string(begin, end) : std::string();
}

std::vector<std::string> split_lines(std::string_view s) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto pos = s.find('\n', start);
    if (pos == std::string_view::npos) {
      if (start < s.size()) lines.emplace_back(s.substr(start));
      break;
    }
    lines.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  for (auto& line : lines) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
  }
  return lines;
}

std::vector<std::string> paragraphs(std::string_view s) {
  std::vector<std::string> out;
  for (const auto& line : split_lines(s)) {
    auto t = trim(line);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string numbered(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += '\n';
    out += std::to_string(i + 1) + ". " + items[i];
  }
  return out;
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return 0;
  std::size_t count = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + needle.size())) {
    ++count;
  }
  return count;
}

}  // namespace whatif::text
