#include "whatif/narrator.hpp"

#include <deque>
#include <fstream>
#include <optional>
#include <sstream>

#include "stage_call.hpp"
#include "whatif/errors.hpp"
#include "whatif/prompt_kit.hpp"
#include "whatif/text.hpp"

namespace whatif {
namespace {

using Json = nlohmann::json;

std::vector<NodeId> bfs_order(const BranchingPlotTree& tree) {
  std::vector<NodeId> order;
  std::deque<NodeId> queue{tree.root};
  while (!queue.empty()) {
    NodeId id = queue.front();
    queue.pop_front();
    for (auto kind : {DecisionKind::Original, DecisionKind::Alternate}) {
      const PlotEdge* edge = tree.find_edge(id, kind);
      if (edge && edge->to_target) queue.push_back(*edge->to_target);
    }
    order.push_back(std::move(id));
  }
  return order;
}

}  // namespace

nlohmann::json to_json(const NarrationMap& narrations) {
  Json entries = Json::object();
  for (const auto& [id, n] : narrations) {
    entries[id.value] = {{"paragraphs", n.paragraphs},
                         {"button_original", n.button_original},
                         {"button_alternate", n.button_alternate}};
  }
  return {{"version", kNarrationFileVersion}, {"narrations", std::move(entries)}};
}

NarrationMap narrations_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("version").get<int>() != kNarrationFileVersion) {
      throw SchemaVersionMismatch("unsupported narrations version " + doc.at("version").dump());
    }
    NarrationMap out;
    for (const auto& [id, n] : doc.at("narrations").items()) {
      out[NodeId{id}] = NodeNarration{NodeId{id}, n.at("paragraphs").get<std::string>(),
                                      n.at("button_original").get<std::string>(),
                                      n.at("button_alternate").get<std::string>()};
    }
    return out;
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed narrations: ") + e.what());
  }
}

void save_narrations(const NarrationMap& narrations, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json(narrations).dump(2) << "\n";
}

NarrationMap load_narrations(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  Json doc = Json::parse(buffer.str(), nullptr, false);
  if (doc.is_discarded()) throw ParseError(path.string() + " is not JSON");
  return narrations_from_json(doc);
}

PlotEdge narration_edge(const BranchingPlotTree& tree, const NodeId& node) {
  const PlotNode* n = tree.find_node(node);
  if (!n) throw InvalidPath("unknown node " + node.value);
  if (const PlotEdge* in = tree.incoming_edge(node)) return *in;
  return PlotEdge{node, node, DecisionKind::Original, {n->state}};
}

nlohmann::json narration_input(const BranchingPlotTree& tree, const NodeId& node) {
  const PlotNode& n = *tree.find_node(node);
  return {{"events", narration_edge(tree, node).events},
          {"state", n.state},
          {"goal", n.goal},
          {"decisions", {n.key_decision, n.alternate_decision}}};
}

Narrator::Narrator(Gateway& gateway, NarratorConfig config) : gateway_(gateway), config_(std::move(config)) {
  if (config_.parallel < 1) throw ConfigError("parallel must be >= 1");
}

std::vector<std::string> Narrator::warnings() const {
  std::lock_guard lock(mutex_);
  return warnings_;
}

void Narrator::warn(std::string message) {
  std::lock_guard lock(mutex_);
  warnings_.push_back(std::move(message));
}

NodeNarration Narrator::narrate_node(const BranchingPlotTree& tree, const NodeId& node) {
  const PlotNode* n = tree.find_node(node);
  if (!n) throw PreconditionError("unknown node " + node.value);
  const Json input = narration_input(tree, node);

  SchemaSpec schema = narration_schema();
  const RenderedPrompt prompt = render(Stage::Narrate, {{"char_name", tree.char_name},
                                                        {"JSON_SCHEMA", schema.document.dump(2)},
                                                        {"node", input.dump(2)}});
  CompletionRequest request;
  request.messages = {Message{Role::System, prompt.system_text}, Message{Role::User, prompt.user_text}};
  request.schema = std::move(schema);
  request.temperature = config_.temperature;
  request.model_id = config_.model_id;
  request.max_output_tokens = config_.max_output_tokens;
  request.context = {{"char_name", tree.char_name},
                     {"node_id", node.value},
                     {"events", input.at("events")},
                     {"state", n->state},
                     {"goal", n->goal},
                     {"key_decision", n->key_decision},
                     {"alternate_decision", n->alternate_decision}};

  auto check = [](const Json& doc) {
    std::vector<SchemaIssue> issues;
    for (const char* key : {"paragraphs", "button_text_1", "button_text_2"}) {
      if (text::trim(doc.at(key).get<std::string>()).empty()) {
        issues.push_back({std::string("/") + key, "nonEmpty", std::string(key) + " must not be empty"});
      }
    }
    return issues;
  };
  Json doc = detail::checked_completion<EmptyField>(
      [this](const CompletionRequest& r) { return gateway_.complete_structured(r); }, std::move(request), check);

  NodeNarration out{node, text::trim(doc.at("paragraphs").get<std::string>()),
                    text::trim(doc.at("button_text_1").get<std::string>()),
                    text::trim(doc.at("button_text_2").get<std::string>())};

  if (auto mentions = text::count_occurrences(out.paragraphs, tree.char_name); mentions > 0) {
    warn(node.value + ": narration mentions " + tree.char_name + " " + std::to_string(mentions) + " time(s)");
  }
  const std::size_t expected = tree.incoming_edge(node) ? 3 : 1;
  if (auto count = text::paragraphs(out.paragraphs).size(); count < expected) {
    warn(node.value + ": narration has " + std::to_string(count) + " paragraph(s), expected at least " +
         std::to_string(expected));
  }
  return out;
}

NarrationMap Narrator::narrate_tree(const BranchingPlotTree& tree, const NarrationMap& done) {
  NarrationMap out;
  std::vector<NodeId> order;
  for (auto& id : bfs_order(tree)) {
    if (auto it = done.find(id); it != done.end()) {
      out.insert(*it);
    } else {
      order.push_back(std::move(id));
    }
  }
  std::vector<std::optional<NodeNarration>> results(order.size());
  std::exception_ptr failure;
  try {
    detail::for_each_batched(order.size(), config_.parallel,
                             [&](std::size_t i) { results[i] = narrate_node(tree, order[i]); });
  } catch (...) {
    failure = std::current_exception();
  }
  for (auto& r : results) {
    if (r) out.emplace(r->node_id, std::move(*r));
  }
  if (failure) {
    if (!config_.partial_path.empty()) save_narrations(out, config_.partial_path);
    std::rethrow_exception(failure);
  }
  return out;
}

}  // namespace whatif
