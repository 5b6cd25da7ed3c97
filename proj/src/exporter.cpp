#include "whatif/exporter.hpp"

#include <deque>
#include <functional>
#include <set>
#include <sstream>

#include "whatif/errors.hpp"
#include "whatif/text.hpp"

namespace whatif {
namespace {

using Json = nlohmann::json;

constexpr std::string_view kReservedKnots[] = {"END", "DONE"};

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

// Knot names for every node, checked for collisions.
std::map<NodeId, std::string> knot_names(const BranchingPlotTree& tree) {
  std::map<NodeId, std::string> names;
  std::map<std::string, NodeId> taken;
  for (const auto& [id, node] : tree.nodes) {
    std::string name = knot_name(id);
    for (auto reserved : kReservedKnots) {
      if (name == reserved) throw NameCollision("node id " + id.value + " is a reserved Ink name");
    }
    if (auto [it, inserted] = taken.emplace(name, id); !inserted) {
      throw NameCollision("node ids " + it->second.value + " and " + id.value + " both become knot " + name);
    }
    names[id] = std::move(name);
  }
  return names;
}

const NodeNarration& narration_for(const NarrationMap& narrations, const NodeId& id) {
  auto it = narrations.find(id);
  if (it == narrations.end()) throw MissingNarration("no narration for " + id.value);
  return it->second;
}

struct ChoiceView {
  const std::string* label;
  const PlotEdge* edge;
  DecisionKind kind;
};

std::vector<ChoiceView> choices_of(const BranchingPlotTree& tree, const NodeNarration& narration) {
  std::vector<ChoiceView> out;
  const std::string* labels[] = {&narration.button_original, &narration.button_alternate};
  int i = 0;
  for (auto kind : {DecisionKind::Original, DecisionKind::Alternate}) {
    const PlotEdge* edge = tree.find_edge(narration.node_id, kind);
    if (!edge) throw PreconditionError(narration.node_id.value + " lacks its " + std::string(to_string(kind)) + " edge");
    out.push_back({labels[i++], edge, kind});
  }
  return out;
}

}  // namespace

std::string knot_name(const NodeId& id) {
  std::string out;
  for (char c : id.value) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
    out.push_back(ok ? c : '_');
  }
  if (out.empty() || (out[0] >= '0' && out[0] <= '9')) out.insert(0, "n_");
  return out;
}

std::string ink_escape(std::string_view s, bool choice_label) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    const char next = i + 1 < s.size() ? s[i + 1] : '\0';
    const char prev = i > 0 ? s[i - 1] : '\0';
    bool escape = c == '\\' || c == '{' || c == '}' || c == '|' || c == '#' || c == '[' || c == ']';
    escape = escape || (c == '-' && next == '>') || (c == '<' && (next == '-' || next == '>'));
    escape = escape || (c == '/' && prev == '/' && !out.empty() && out.back() == '/');
    escape = escape || (c == '*' && prev == '/');
    if (i == 0) escape = escape || std::string_view("*+-=~(").find(c) != std::string_view::npos;
    if (choice_label) escape = escape || c == '*';
    if (escape) out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

std::string epilogue(const PlotEdge& edge) {
  return edge.events.empty() ? std::string() : text::normalize(edge.events.back());
}

std::string export_ink(const BranchingPlotTree& tree, const NarrationMap& narrations) {
  const auto names = knot_names(tree);
  const auto order = bfs_order(tree);
  for (const auto& id : order) narration_for(narrations, id);

  std::ostringstream out;
  if (!tree.title.empty()) out << "// " << text::normalize(tree.title) << "\n";
  out << "-> " << names.at(tree.root) << "\n";
  for (const auto& id : order) {
    const NodeNarration& narration = narration_for(narrations, id);
    out << "\n=== " << names.at(id) << " ===\n";
    for (const auto& para : text::paragraphs(narration.paragraphs)) out << ink_escape(para) << "\n\n";
    for (const auto& choice : choices_of(tree, narration)) {
      out << "* [" << ink_escape(text::normalize(*choice.label), true) << "]";
      if (choice.edge->to_target) {
        out << " -> " << names.at(*choice.edge->to_target) << "\n";
      } else {
        out << "\n";
        if (auto text = epilogue(*choice.edge); !text.empty()) out << "    " << ink_escape(text) << "\n";
        out << "    -> END\n";
      }
    }
  }
  return out.str();
}

nlohmann::json export_game_json(const BranchingPlotTree& tree, const NarrationMap& narrations) {
  Json passages = Json::object();
  for (const auto& id : bfs_order(tree)) {
    const NodeNarration& narration = narration_for(narrations, id);
    Json choices = Json::array();
    for (const auto& choice : choices_of(tree, narration)) {
      Json c = {{"label", text::normalize(*choice.label)},
                {"target", choice.edge->to_target ? choice.edge->to_target->value : "END"},
                {"kind", std::string(to_string(choice.kind))}};
      if (!choice.edge->to_target) c["epilogue"] = epilogue(*choice.edge);
      choices.push_back(std::move(c));
    }
    passages[id.value] = {{"paragraphs", text::paragraphs(narration.paragraphs)}, {"choices", std::move(choices)}};
  }
  return {{"version", kGameFileVersion},
          {"title", tree.title},
          {"char_name", tree.char_name},
          {"start", tree.root.value},
          {"passages", std::move(passages)}};
}

std::vector<Playthrough> walk_game(const nlohmann::json& game) {
  try {
    const Json& passages = game.at("passages");
    std::vector<Playthrough> out;
    std::vector<std::string> labels;
    std::function<void(const std::string&)> visit = [&](const std::string& id) {
      if (labels.size() > passages.size()) throw ParseError("game graph loops back through " + id);
      if (!passages.contains(id)) throw ParseError("dead link to passage " + id);
      const Json& choices = passages.at(id).at("choices");
      if (choices.empty()) throw ParseError("passage " + id + " has no choices");
      for (const auto& choice : choices) {
        labels.push_back(choice.at("label").get<std::string>());
        const std::string target = choice.at("target").get<std::string>();
        if (target == "END") {
          out.push_back({labels, choice.value("epilogue", std::string())});
        } else {
          visit(target);
        }
        labels.pop_back();
      }
    };
    visit(game.at("start").get<std::string>());
    return out;
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed game document: ") + e.what());
  }
}

}  // namespace whatif
