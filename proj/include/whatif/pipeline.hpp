#pragma once

#include <atomic>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "whatif/llm_gateway.hpp"
#include "whatif/plot_tree.hpp"

namespace whatif {

struct KeyEvent {
  int event_id = 0;  // 1-based index into the storyline's events
  std::string event;

  friend bool operator==(const KeyEvent&, const KeyEvent&) = default;
};

/// The three plot points of a three-act storyline.
struct KeyEvents {
  KeyEvent inciting_incident;
  KeyEvent crisis;
  KeyEvent climax;

  friend bool operator==(const KeyEvents&, const KeyEvents&) = default;
};

struct LabeledKeyEvent {
  std::string label;  // inciting_incident | crisis | climax
  KeyEvent key_event;

  friend bool operator==(const LabeledKeyEvent&, const LabeledKeyEvent&) = default;
};

/// Key events that have not happened yet at `branching_event`.
std::vector<LabeledKeyEvent> filter_key_events(const KeyEvents& key_events, int branching_event);

/// Human-readable rendering used for the {mpp} placeholder.
std::string describe_plot_points(const std::vector<LabeledKeyEvent>& plot_points);

struct MetaPrompt {
  int branching_node = 0;
  int branching_event = 0;
  std::string original_decision;
  std::string alternate_decision;
  int new_story_length = 0;
  std::vector<LabeledKeyEvent> major_plot_points;
  std::string prompt_text;

  friend bool operator==(const MetaPrompt&, const MetaPrompt&) = default;
};

/// Line-leading "k." / "k)" markers found in a prompt.
std::vector<int> question_markers(std::string_view prompt);

struct FrontierItem {
  NodeId node;
  std::optional<MetaPrompt> meta;  // generated lazily when absent

  friend bool operator==(const FrontierItem&, const FrontierItem&) = default;
};

inline constexpr int kCheckpointVersion = 1;

struct ExpansionCheckpoint {
  BranchingPlotTree tree;
  std::deque<FrontierItem> frontier;
  int completed = 0;
  std::size_t gateway_calls = 0;
  std::string config_digest;

  friend bool operator==(const ExpansionCheckpoint&, const ExpansionCheckpoint&) = default;
};

nlohmann::json to_json(const ExpansionCheckpoint& checkpoint);
ExpansionCheckpoint checkpoint_from_json(const nlohmann::json& doc);
void save_checkpoint(const ExpansionCheckpoint& checkpoint, const std::filesystem::path& path);
/// Throws CorruptCheckpoint on unreadable, empty, or malformed files.
ExpansionCheckpoint load_checkpoint(const std::filesystem::path& path);

struct PipelineConfig {
  std::string model_id = "gpt-4";
  double generation_temperature = 0.7;
  double extraction_temperature = 0.0;
  int max_output_tokens = 4096;
  // Cap on gateway calls during expansion; defaults to default_budget(n).
  std::optional<std::size_t> budget;
  int parallel = 1;
  std::filesystem::path checkpoint_path;
  // Stop (with a checkpoint) after this many branches in the current run.
  std::optional<int> stop_after_branches;
  std::ostream* progress = nullptr;
  std::function<void(const BranchingPlotTree& before, const BranchingPlotTree& after)> on_merge;
};

/// 8 * 2^n: a full expansion makes about 3.5 * 2^n calls; the rest is retry headroom.
std::size_t default_budget(int n);

struct ExpansionResult {
  BranchingPlotTree tree;
  bool finished = false;
  int completed = 0;
  std::size_t gateway_calls = 0;
};

/// Drives plot summarization, key-event extraction, meta-prompting, branch writing and
/// merging through a Gateway.
class Pipeline {
 public:
  explicit Pipeline(Gateway& gateway, PipelineConfig config = {});

  BranchingPlotTree initialize_tree(const std::string& plot, const std::string& char_name,
                                    const std::string& title, std::optional<int> num_nodes);

  KeyEvents extract_key_events(const std::vector<std::string>& events);

  MetaPrompt generate_meta_prompt(const BranchingPlotTree& tree, const StorylinePath& path,
                                  const NodeId& node_id,
                                  const std::vector<LabeledKeyEvent>& filtered_key_events);

  std::vector<std::string> write_alternate_storyline(const std::vector<std::string>& path_events,
                                                     const MetaPrompt& meta_prompt,
                                                     const std::string& char_name);

  BranchingPlotTree events_to_subtree(const std::vector<std::string>& new_events,
                                      const std::string& char_name);

  /// Branches every node until the tree is full binary. Writes a checkpoint (when a path
  /// is configured) after each merge and before rethrowing any stage error.
  ExpansionResult expand_tree(BranchingPlotTree tree);
  ExpansionResult resume(ExpansionCheckpoint checkpoint);

  std::string config_digest() const;
  const PipelineConfig& config() const { return config_; }
  std::vector<std::string> warnings() const;

 private:
  StructuredResult call(const CompletionRequest& request);
  CompletionRequest make_request(Stage stage, const RenderedPrompt& prompt, SchemaSpec schema,
                                 double temperature, nlohmann::json context) const;
  BranchingPlotTree summarize(const std::string& plot, const std::string& char_name,
                              const std::string& title, std::optional<int> num_nodes);
  KeyEvents key_events_for(const std::vector<std::string>& events);
  MetaPrompt meta_for(const BranchingPlotTree& tree, const NodeId& node);
  void fill_metas(ExpansionCheckpoint& state, std::size_t first);
  ExpansionResult run(ExpansionCheckpoint state);
  void write_checkpoint(const ExpansionCheckpoint& state) const;
  void warn(std::string message);

  Gateway& gateway_;
  PipelineConfig config_;
  std::optional<std::size_t> budget_;
  std::atomic<std::size_t> calls_used_{0};
  mutable std::mutex mutex_;
  std::vector<std::string> warnings_;
  std::map<std::string, std::shared_future<KeyEvents>> key_event_cache_;
};

}  // namespace whatif
