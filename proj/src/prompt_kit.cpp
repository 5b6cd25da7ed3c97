#include "whatif/prompt_kit.hpp"

#include <cctype>
#include <set>

#include "whatif/errors.hpp"

namespace whatif {

namespace assets {
const std::map<std::string, std::string_view, std::less<>>& all();
}

namespace {

using Json = nlohmann::json;

std::string_view file_stem(Stage stage) {
  switch (stage) {
    case Stage::PlotToTree: return "plot_to_tree";
    case Stage::KeyEvents: return "key_events";
    case Stage::MetaPrompt: return "meta_prompt";
    case Stage::WriteStoryline: return "write_storyline";
    case Stage::Narrate: return "narrate";
  }
  throw UnknownStage("unknown stage");
}

std::string asset_text(const std::string& name) {
  const auto& table = assets::all();
  auto it = table.find(name);
  if (it == table.end()) throw Error("missing embedded asset " + name);
  std::string text(it->second);
  if (!text.empty() && text.back() == '\n') text.pop_back();
  return text;
}

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

// Calls on_text for literal runs and on_name for each {identifier}.
template <typename Text, typename Name>
void scan(std::string_view tmpl, Text on_text, Name on_name) {
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{' && i + 1 < tmpl.size() && is_ident_start(tmpl[i + 1])) {
      std::size_t j = i + 1;
      while (j < tmpl.size() && is_ident(tmpl[j])) ++j;
      if (j < tmpl.size() && tmpl[j] == '}') {
        on_name(tmpl.substr(i + 1, j - i - 1));
        i = j + 1;
        continue;
      }
    }
    on_text(tmpl[i]);
    ++i;
  }
}

std::string json_escaped(std::string_view s) {
  std::string quoted = Json(std::string(s)).dump();
  return quoted.substr(1, quoted.size() - 2);
}

}  // namespace

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::PlotToTree: return "PlotToTree";
    case Stage::KeyEvents: return "KeyEvents";
    case Stage::MetaPrompt: return "MetaPrompt";
    case Stage::WriteStoryline: return "WriteStoryline";
    case Stage::Narrate: return "Narrate";
  }
  throw UnknownStage("unknown stage");
}

Stage stage_from_string(std::string_view name) {
  for (Stage s : kAllStages) {
    if (to_string(s) == name || file_stem(s) == name) return s;
  }
  throw UnknownStage("unknown stage '" + std::string(name) + "'");
}

const PromptTemplate& prompt_template(Stage stage) {
  static const std::map<Stage, PromptTemplate> kTemplates = [] {
    std::map<Stage, PromptTemplate> out;
    for (Stage s : kAllStages) {
      const std::string stem(file_stem(s));
      out.emplace(s, PromptTemplate{s, asset_text("prompts/" + stem + ".system.txt"),
                                    asset_text("prompts/" + stem + ".user.txt")});
    }
    return out;
  }();
  auto it = kTemplates.find(stage);
  if (it == kTemplates.end()) throw UnknownStage("unknown stage");
  return it->second;
}

std::vector<std::string> placeholders(Stage stage) {
  std::set<std::string> names;
  const auto& tmpl = prompt_template(stage);
  for (const auto* text : {&tmpl.system_text, &tmpl.user_text}) {
    scan(*text, [](char) {}, [&](std::string_view name) { names.emplace(name); });
  }
  return {names.begin(), names.end()};
}

std::string substitute(std::string_view tmpl, const Bindings& bindings) {
  std::string out;
  std::set<std::string> missing;
  scan(
      tmpl, [&](char c) { out += c; },
      [&](std::string_view name) {
        auto it = bindings.find(name);
        if (it == bindings.end()) {
          missing.emplace(name);
        } else {
          out += it->second;
        }
      });
  if (!missing.empty()) {
    std::string names;
    for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
    throw MissingBinding("unbound placeholder(s): " + names);
  }
  return out;
}

RenderedPrompt render(Stage stage, const Bindings& bindings) {
  std::string missing;
  for (const auto& name : placeholders(stage)) {
    if (!bindings.contains(name)) missing += (missing.empty() ? "" : ", ") + name;
  }
  if (!missing.empty()) throw MissingBinding("unbound placeholder(s): " + missing);
  const auto& tmpl = prompt_template(stage);
  return {substitute(tmpl.system_text, bindings), substitute(tmpl.user_text, bindings)};
}

int new_story_length(int n, int branching_node) {
  if (branching_node < 1 || branching_node > n) {
    throw OutOfRange("branching node " + std::to_string(branching_node) + " outside 1.." +
                     std::to_string(n));
  }
  return (n - branching_node + 1) * 3;
}

int branching_event_for(int branching_node) { return (branching_node - 1) * 3 + 1; }

std::string num_nodes_phrase(std::optional<int> num_nodes) {
  return num_nodes ? std::to_string(*num_nodes) : std::string("at most 6");
}

Json base_schema(Stage stage) {
  return Json::parse(asset_text("schemas/" + std::string(file_stem(stage)) + ".schema.json"));
}

SchemaSpec plot_to_tree_schema(std::optional<int> num_nodes, std::string_view char_name) {
  const std::string raw = asset_text("schemas/plot_to_tree.schema.json");
  Json doc = Json::parse(substitute(raw, {{"char_name", json_escaped(char_name)}}));
  const int count = num_nodes.value_or(kDefaultMaxNodes);
  if (num_nodes) {
    Json required = Json::array();
    for (int i = 1; i <= count; ++i) {
      const std::string key = "node_" + std::to_string(i);
      doc["properties"][key] = {{"$ref", "#/$defs/node"}};
      required.push_back(key);
    }
    doc["required"] = std::move(required);
    doc["minProperties"] = count;
    doc["maxProperties"] = count;
  } else {
    doc["patternProperties"] = {{"^node_[1-9][0-9]*$", {{"$ref", "#/$defs/node"}}}};
    doc["required"] = Json::array({"node_1"});
    doc["minProperties"] = 1;
    doc["maxProperties"] = kDefaultMaxNodes;
  }
  return {Stage::PlotToTree, std::move(doc)};
}

SchemaSpec key_events_schema() { return {Stage::KeyEvents, base_schema(Stage::KeyEvents)}; }

SchemaSpec meta_prompt_schema(int branching_event, int new_story_length) {
  Json doc = base_schema(Stage::MetaPrompt);
  doc["properties"]["branching_event_number"]["const"] = branching_event;
  doc["properties"]["new_story_length"]["const"] = new_story_length;
  return {Stage::MetaPrompt, std::move(doc)};
}

SchemaSpec write_storyline_schema(int event_count) {
  Json doc = base_schema(Stage::WriteStoryline);
  Json& events = doc["properties"]["events"];
  Json required = Json::array();
  for (int i = 1; i <= event_count; ++i) required.push_back(std::to_string(i));
  events["required"] = std::move(required);
  events["minProperties"] = event_count;
  events["maxProperties"] = event_count;
  return {Stage::WriteStoryline, std::move(doc)};
}

SchemaSpec narration_schema() { return {Stage::Narrate, base_schema(Stage::Narrate)}; }

}  // namespace whatif
