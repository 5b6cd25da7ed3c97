#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "whatif/narrator.hpp"
#include "whatif/plot_tree.hpp"

namespace whatif {

inline constexpr int kGameFileVersion = 1;

/// Ink identifier for a node id. Characters outside [A-Za-z0-9_] become '_'.
std::string knot_name(const NodeId& id);

/// Backslash-escapes characters that Ink would otherwise read as markup.
std::string ink_escape(std::string_view text, bool choice_label = false);

/// Text the player sees after an ending choice: the final state event of that edge.
std::string epilogue(const PlotEdge& edge);

/// One knot per node in breadth-first order, Original choice first.
/// Throws MissingNarration or NameCollision.
std::string export_ink(const BranchingPlotTree& tree, const NarrationMap& narrations);

/// Game document read by the web player:
/// {version, title, char_name, start, passages: {id: {paragraphs, choices: [{label, target|"END", kind, epilogue?}]}}}
nlohmann::json export_game_json(const BranchingPlotTree& tree, const NarrationMap& narrations);

/// A complete play: the button labels clicked, then the ending reached.
struct Playthrough {
  std::vector<std::string> labels;
  std::string ending;

  friend auto operator<=>(const Playthrough&, const Playthrough&) = default;
};

/// Clicks every button of a game document. Throws ParseError on dead links or cycles.
std::vector<Playthrough> walk_game(const nlohmann::json& game);

}  // namespace whatif
