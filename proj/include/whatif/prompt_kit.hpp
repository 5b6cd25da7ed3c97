#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace whatif {

enum class Stage { PlotToTree, KeyEvents, MetaPrompt, WriteStoryline, Narrate };

inline constexpr Stage kAllStages[] = {Stage::PlotToTree, Stage::KeyEvents, Stage::MetaPrompt,
                                       Stage::WriteStoryline, Stage::Narrate};

std::string_view to_string(Stage stage);
/// Throws UnknownStage.
Stage stage_from_string(std::string_view name);

using Bindings = std::map<std::string, std::string, std::less<>>;

struct PromptTemplate {
  Stage stage;
  std::string system_text;
  std::string user_text;
};

struct RenderedPrompt {
  std::string system_text;
  std::string user_text;

  friend bool operator==(const RenderedPrompt&, const RenderedPrompt&) = default;
};

struct SchemaSpec {
  Stage stage = Stage::PlotToTree;
  nlohmann::json document;

  friend bool operator==(const SchemaSpec&, const SchemaSpec&) = default;
};

const PromptTemplate& prompt_template(Stage stage);

/// Placeholder names referenced by the stage's system and user text, sorted.
std::vector<std::string> placeholders(Stage stage);

/// Substitutes every {name} in the stage template. Throws MissingBinding naming
/// each unbound placeholder.
RenderedPrompt render(Stage stage, const Bindings& bindings);

/// Raw text substitution over any template string.
std::string substitute(std::string_view tmpl, const Bindings& bindings);

/// Events to write after branching at `branching_node` of an n-node storyline,
/// counting the branching node's own edge. Throws OutOfRange unless 1 <= t <= n.
int new_story_length(int n, int branching_node);

/// Index (1-based) of a node's decision event in the flattened storyline.
int branching_event_for(int branching_node);

/// "at most 6" when unspecified, otherwise the number.
std::string num_nodes_phrase(std::optional<int> num_nodes);

inline constexpr int kDefaultMaxNodes = 6;

SchemaSpec plot_to_tree_schema(std::optional<int> num_nodes, std::string_view char_name);
SchemaSpec key_events_schema();
SchemaSpec meta_prompt_schema(int branching_event, int new_story_length);
SchemaSpec write_storyline_schema(int event_count);
SchemaSpec narration_schema();

/// Unspecialized schema document as shipped in assets/schemas.
nlohmann::json base_schema(Stage stage);

}  // namespace whatif
