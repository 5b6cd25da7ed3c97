#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "whatif/exporter.hpp"

namespace whatif::ink {

struct Choice {
  std::string label;
  std::optional<std::string> target;  // empty means -> END
  std::vector<std::string> body;      // text shown after choosing, before the divert
  int line = 0;
};

struct Knot {
  std::string name;
  std::vector<std::string> text;
  std::vector<Choice> choices;
  int line = 0;
};

/// The Ink subset written by export_ink: a start divert, knots, text, and choices
/// whose content ends with a divert to a knot or END.
struct Story {
  std::string start;
  std::map<std::string, Knot> knots;
  std::vector<std::string> knot_order;
};

struct ParseResult {
  Story story;
  std::vector<std::string> errors;  // "line N: ..." ; empty means the script is well formed

  bool ok() const { return errors.empty(); }
};

ParseResult parse(std::string_view script);

std::string unescape(std::string_view text);

/// Every playthrough from the start knot. The ending of an END choice is its body text
/// joined by newlines. Throws ParseError if the script does not parse or loops.
std::vector<Playthrough> walk(const Story& story);

}  // namespace whatif::ink
