#include "whatif/ink_check.hpp"

#include <functional>

#include "whatif/errors.hpp"
#include "whatif/text.hpp"

namespace whatif::ink {
namespace {

bool is_identifier(std::string_view s) {
  if (s.empty() || (s[0] >= '0' && s[0] <= '9')) return false;
  for (char c : s) {
    if (!((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_')) return false;
  }
  return true;
}

// Position of the first unescaped `c` at or after `from`, or npos.
std::size_t find_unescaped(std::string_view s, char c, std::size_t from) {
  for (std::size_t i = from; i < s.size(); ++i) {
    if (s[i] == '\\') {
      ++i;
    } else if (s[i] == c) {
      return i;
    }
  }
  return std::string_view::npos;
}

}  // namespace

std::string unescape(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) ++i;
    out.push_back(s[i]);
  }
  return out;
}

ParseResult parse(std::string_view script) {
  ParseResult result;
  Story& story = result.story;
  Knot* knot = nullptr;
  Choice* open = nullptr;
  bool have_start = false;
  auto error = [&](int line, const std::string& message) {
    result.errors.push_back("line " + std::to_string(line) + ": " + message);
  };

  const auto lines = text::split_lines(script);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    const std::string line = text::trim(lines[i]);
    if (line.empty() || line.starts_with("//")) continue;

    if (line.starts_with("==")) {
      if (open) error(open->line, "choice has no divert");
      open = nullptr;
      std::string name = line;
      while (!name.empty() && name.front() == '=') name.erase(0, 1);
      while (!name.empty() && name.back() == '=') name.pop_back();
      name = text::trim(name);
      if (!is_identifier(name)) {
        error(n, "invalid knot name '" + name + "'");
        knot = nullptr;
        continue;
      }
      if (story.knots.contains(name)) {
        error(n, "duplicate knot " + name);
        knot = nullptr;
        continue;
      }
      story.knot_order.push_back(name);
      knot = &story.knots[name];
      knot->name = name;
      knot->line = n;
      continue;
    }

    if (line.starts_with("*")) {
      if (!knot) {
        error(n, "choice outside a knot");
        continue;
      }
      if (open) error(open->line, "choice has no divert");
      open = nullptr;
      const std::string rest = text::trim(std::string_view(line).substr(1));
      const std::size_t close = rest.starts_with("[") ? find_unescaped(rest, ']', 1) : std::string::npos;
      if (close == std::string::npos) {
        error(n, "choice label must be written as [label]");
        continue;
      }
      Choice choice{unescape(std::string_view(rest).substr(1, close - 1)), std::nullopt, {}, n};
      const std::string tail = text::trim(std::string_view(rest).substr(close + 1));
      knot->choices.push_back(std::move(choice));
      if (tail.empty()) {
        open = &knot->choices.back();
      } else if (tail.starts_with("->")) {
        const std::string target = text::trim(std::string_view(tail).substr(2));
        if (target != "END") knot->choices.back().target = target;
      } else {
        error(n, "unexpected text after choice label");
      }
      continue;
    }

    if (line.starts_with("->")) {
      const std::string target = text::trim(std::string_view(line).substr(2));
      if (open) {
        if (target != "END") open->target = target;
        open = nullptr;
      } else if (!knot && !have_start) {
        story.start = target;
        have_start = true;
      } else {
        error(n, "divert outside a choice");
      }
      continue;
    }

    if (open) {
      open->body.push_back(unescape(line));
    } else if (!knot) {
      error(n, "text outside a knot");
    } else if (!knot->choices.empty()) {
      error(n, "text after the choices of knot " + knot->name);
    } else {
      knot->text.push_back(unescape(line));
    }
  }
  if (open) error(open->line, "choice has no divert");

  if (!have_start) {
    error(1, "missing start divert");
  } else if (!story.knots.contains(story.start)) {
    error(1, "start divert to unknown knot " + story.start);
  }
  for (const auto& name : story.knot_order) {
    const Knot& k = story.knots.at(name);
    if (k.choices.empty()) error(k.line, "knot " + name + " has no choices");
    for (const auto& c : k.choices) {
      if (c.target && !story.knots.contains(*c.target)) error(c.line, "divert to unknown knot " + *c.target);
    }
  }
  return result;
}

std::vector<Playthrough> walk(const Story& story) {
  std::vector<Playthrough> out;
  std::vector<std::string> labels;
  std::function<void(const std::string&)> visit = [&](const std::string& name) {
    if (labels.size() > story.knots.size()) throw ParseError("script loops back through knot " + name);
    auto it = story.knots.find(name);
    if (it == story.knots.end()) throw ParseError("divert to unknown knot " + name);
    for (const auto& choice : it->second.choices) {
      labels.push_back(choice.label);
      if (choice.target) {
        visit(*choice.target);
      } else {
        out.push_back({labels, text::join(choice.body, "\n")});
      }
      labels.pop_back();
    }
  };
  visit(story.start);
  return out;
}

}  // namespace whatif::ink
