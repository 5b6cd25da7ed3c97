#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "whatif/llm_gateway.hpp"
#include "whatif/plot_tree.hpp"

namespace whatif {

/// Second-person game text for one node plus the labels of its two decision buttons.
struct NodeNarration {
  NodeId node_id;
  std::string paragraphs;  // newline-separated
  std::string button_original;
  std::string button_alternate;

  friend bool operator==(const NodeNarration&, const NodeNarration&) = default;
};

using NarrationMap = std::map<NodeId, NodeNarration>;

inline constexpr int kNarrationFileVersion = 1;

nlohmann::json to_json(const NarrationMap& narrations);
NarrationMap narrations_from_json(const nlohmann::json& doc);
void save_narrations(const NarrationMap& narrations, const std::filesystem::path& path);
NarrationMap load_narrations(const std::filesystem::path& path);

/// Edge narrated when entering `node`. The root has no parent, so it gets an opening
/// edge whose only event is the root state.
PlotEdge narration_edge(const BranchingPlotTree& tree, const NodeId& node);

/// The {node} payload of the narration prompt.
nlohmann::json narration_input(const BranchingPlotTree& tree, const NodeId& node);

struct NarratorConfig {
  std::string model_id = "gpt-4";
  double temperature = 0.7;
  int max_output_tokens = 4096;
  int parallel = 1;
  // Where narrate_tree leaves the narrations it finished before a failure.
  std::filesystem::path partial_path;
};

class Narrator {
 public:
  explicit Narrator(Gateway& gateway, NarratorConfig config = {});

  /// Throws EmptyField when a field is still blank after one corrective retry.
  NodeNarration narrate_node(const BranchingPlotTree& tree, const NodeId& node);

  /// Narrates every node reachable from the root, keeping entries of `done` for nodes
  /// that already have one.
  NarrationMap narrate_tree(const BranchingPlotTree& tree, const NarrationMap& done = {});

  /// Style findings: character name mentioned, too few paragraphs.
  std::vector<std::string> warnings() const;

 private:
  void warn(std::string message);

  Gateway& gateway_;
  NarratorConfig config_;
  mutable std::mutex mutex_;
  std::vector<std::string> warnings_;
};

}  // namespace whatif
