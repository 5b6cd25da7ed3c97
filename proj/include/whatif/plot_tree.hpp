#pragma once

#include <compare>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace whatif {

struct NodeId {
  std::string value;

  friend auto operator<=>(const NodeId&, const NodeId&) = default;
  friend bool operator==(const NodeId&, const NodeId&) = default;
};

enum class DecisionKind { Original, Alternate };

std::string_view to_string(DecisionKind kind);
DecisionKind decision_kind_from_string(std::string_view s);
char choice_letter(DecisionKind kind);

/// A story state: the protagonist's circumstances, goal, and the two decisions on offer.
struct PlotNode {
  NodeId id;
  std::string state;
  std::string goal;
  std::string key_decision;
  std::string alternate_decision;
  int depth = 1;

  friend bool operator==(const PlotNode&, const PlotNode&) = default;
};

/// Three edge events: restated decision, resulting event, next state.
/// An empty `to_target` means the edge ends the story.
struct PlotEdge {
  NodeId from_node;
  std::optional<NodeId> to_target;
  DecisionKind decision_kind = DecisionKind::Original;
  std::vector<std::string> events;

  bool leads_to_end() const noexcept { return !to_target.has_value(); }

  friend bool operator==(const PlotEdge&, const PlotEdge&) = default;
};

inline constexpr int kTreeFileVersion = 1;
inline constexpr std::size_t kEventsPerEdge = 3;

struct BranchingPlotTree {
  std::string char_name;
  std::string title;
  NodeId root;
  std::map<NodeId, PlotNode> nodes;
  std::vector<PlotEdge> edges;
  // Node count of the original storyline; every complete storyline visits exactly n nodes.
  int n = 0;

  const PlotNode* find_node(const NodeId& id) const;
  const PlotEdge* find_edge(const NodeId& from, DecisionKind kind) const;
  const PlotEdge* incoming_edge(const NodeId& id) const;

  friend bool operator==(const BranchingPlotTree&, const BranchingPlotTree&) = default;
};

/// One root-to-END traversal; `choices[i]` is the decision taken at `node_ids[i]`.
struct StorylinePath {
  std::vector<NodeId> node_ids;
  std::vector<DecisionKind> choices;

  friend bool operator==(const StorylinePath&, const StorylinePath&) = default;
};

/// "OAO..." encoding of the choices.
std::string choice_string(const StorylinePath& path);

/// Parses an "O"/"A" vector; throws std::invalid_argument on any other character.
std::vector<DecisionKind> parse_choices(std::string_view choices);

/// Follows `choices` from the root. Throws InvalidPath if a hop is missing.
StorylinePath follow_choices(const BranchingPlotTree& tree, const std::vector<DecisionKind>& choices);

/// Nodes from the root down to `node` (inclusive) with the choices taken to get there,
/// then the Original chain from `node` to the end of the story.
StorylinePath storyline_through(const BranchingPlotTree& tree, const NodeId& node);

/// Choice letters leading from the root to `node`; empty for the root.
std::string choice_prefix(const BranchingPlotTree& tree, const NodeId& node);

std::vector<std::string> storyline_events(const BranchingPlotTree& tree, const StorylinePath& path);

/// All root-to-END paths; Original before Alternate at every node.
std::vector<StorylinePath> enumerate_storylines(const BranchingPlotTree& tree);

/// Linear storyline node as produced by plot summarization.
struct StorylineNode {
  std::string state;
  std::string goal;
  std::string decision;
  std::vector<std::string> edge_events;
  std::string alternate_decision;
};

/// Builds a single-storyline tree with ids node_1..node_k, the last edge leading to END.
BranchingPlotTree make_storyline_tree(std::string char_name, std::string title,
                                      const std::vector<StorylineNode>& storyline);

/// Fuses `subtree`'s root into the Alternate slot of `at_node` and grafts the rest of its
/// Original-reachable nodes below it. Returns the merged tree; `tree` is left untouched.
BranchingPlotTree merge_branch(const BranchingPlotTree& tree, const NodeId& at_node,
                               const BranchingPlotTree& subtree);

/// Hard invariant violations. Empty means the tree is well formed.
std::vector<std::string> validate(const BranchingPlotTree& tree, bool expect_complete);

/// Soft lexical findings ("To ...", "<char> decides to ...", identical siblings).
std::vector<std::string> lint(const BranchingPlotTree& tree);

nlohmann::json to_json(const BranchingPlotTree& tree);
BranchingPlotTree tree_from_json(const nlohmann::json& doc);

std::string serialize(const BranchingPlotTree& tree);
BranchingPlotTree deserialize(std::string_view text);

void save(const BranchingPlotTree& tree, const std::filesystem::path& destination);
BranchingPlotTree load(const std::filesystem::path& source);

/// SHA-256 over the canonical serialization.
std::string digest(const BranchingPlotTree& tree);

}  // namespace whatif
