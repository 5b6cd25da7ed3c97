#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <json.hpp>

#include "whatif/llm_gateway.hpp"
#include "whatif/pipeline.hpp"
#include "whatif/plot_tree.hpp"
#include "whatif/synthetic_backend.hpp"

namespace whatif::testing {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(WHATIF_FIXTURE_DIR) / name;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("whatif_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// A linear storyline of k nodes in the shape plot summarization produces.
inline std::vector<StorylineNode> linear_storyline(int k, const std::string& who = "Ada",
                                                   const std::string& tag = "s") {
  std::vector<StorylineNode> out;
  for (int i = 1; i <= k; ++i) {
    const std::string t = tag + std::to_string(i);
    out.push_back({i == 1 ? who + " lives quietly." : who + " stands at crossroad " + tag + std::to_string(i - 1) + ".",
                   "To finish chapter " + t + ".",
                   who + " decides to press on with " + t + ".",
                   {who + " decides to press on with " + t + ".", "Chapter " + t + " turns.",
                    who + " stands at crossroad " + t + "."},
                   who + " decides to turn back from " + t + "."});
  }
  return out;
}

inline BranchingPlotTree linear_tree(int k, const std::string& who = "Ada") {
  return make_storyline_tree(who, "Test", linear_storyline(k, who));
}

/// The plot-to-tree document for `storyline`, as a model would return it.
inline nlohmann::json plot_document(const std::vector<StorylineNode>& storyline) {
  nlohmann::json doc = nlohmann::json::object();
  for (std::size_t i = 0; i < storyline.size(); ++i) {
    const auto& n = storyline[i];
    doc["node_" + std::to_string(i + 1)] = {{"state", n.state},
                                            {"goal", n.goal},
                                            {"decision", n.decision},
                                            {"edgeEvents", n.edge_events},
                                            {"alternate_decision", n.alternate_decision}};
  }
  return doc;
}

/// Fully expanded tree from the synthetic backend.
inline BranchingPlotTree mock_expanded_tree(int n, std::uint64_t seed = 0, PipelineConfig config = {}) {
  Gateway gateway(std::make_unique<SyntheticBackend>(seed));
  Pipeline pipeline(gateway, std::move(config));
  auto tree = pipeline.initialize_tree("Ada leaves home.\nAda finds a map.\nAda crosses the sea.", "Ada", "Test", n);
  return pipeline.expand_tree(std::move(tree)).tree;
}

// Independent oracles that read the raw edge list only.

inline std::multimap<std::string, const PlotEdge*> adjacency(const BranchingPlotTree& tree) {
  std::multimap<std::string, const PlotEdge*> out;
  for (const auto& e : tree.edges) out.emplace(e.from_node.value, &e);
  return out;
}

/// Every root-to-END path as (choice string, concatenated events), by brute-force DFS.
inline std::map<std::string, std::vector<std::string>> dfs_paths(const BranchingPlotTree& tree) {
  const auto adj = adjacency(tree);
  std::map<std::string, std::vector<std::string>> out;
  struct Frame {
    std::string node, choices;
    std::vector<std::string> events;
  };
  std::vector<Frame> stack{{tree.root.value, "", {}}};
  while (!stack.empty()) {
    Frame f = stack.back();
    stack.pop_back();
    auto [lo, hi] = adj.equal_range(f.node);
    for (auto it = lo; it != hi; ++it) {
      const PlotEdge& e = *it->second;
      Frame next{e.to_target ? e.to_target->value : "", f.choices + (e.decision_kind == DecisionKind::Original ? "O" : "A"),
                 f.events};
      next.events.insert(next.events.end(), e.events.begin(), e.events.end());
      if (e.to_target) {
        stack.push_back(std::move(next));
      } else {
        out[next.choices] = next.events;
      }
    }
  }
  return out;
}

/// Hash of everything hanging off the edges that existed in `before`, as seen in `after`.
inline std::string frozen_past_fingerprint(const BranchingPlotTree& before, const BranchingPlotTree& after) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& e : before.edges) {
    const PlotEdge* now = after.find_edge(e.from_node, e.decision_kind);
    const PlotNode* node = after.find_node(e.from_node);
    doc.push_back({now ? nlohmann::json(now->events) : nlohmann::json(nullptr),
                   now && now->to_target ? now->to_target->value : "END",
                   node ? nlohmann::json({node->state, node->goal, node->key_decision, node->alternate_decision, node->depth})
                        : nlohmann::json(nullptr)});
  }
  return doc.dump();
}

}  // namespace whatif::testing
