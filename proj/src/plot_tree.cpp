#include "whatif/plot_tree.hpp"

#include <deque>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>

#include "whatif/errors.hpp"
#include "whatif/hash.hpp"
#include "whatif/text.hpp"

namespace whatif {
namespace {

using Json = nlohmann::json;

constexpr DecisionKind kKinds[] = {DecisionKind::Original, DecisionKind::Alternate};

class EdgeIndex {
 public:
  explicit EdgeIndex(const BranchingPlotTree& tree) {
    for (const auto& edge : tree.edges) {
      by_slot_.try_emplace({edge.from_node, edge.decision_kind}, &edge);
      if (edge.to_target) parent_.try_emplace(*edge.to_target, &edge);
    }
  }

  const PlotEdge* find(const NodeId& from, DecisionKind kind) const {
    auto it = by_slot_.find({from, kind});
    return it == by_slot_.end() ? nullptr : it->second;
  }

  const PlotEdge* incoming(const NodeId& id) const {
    auto it = parent_.find(id);
    return it == parent_.end() ? nullptr : it->second;
  }

 private:
  std::map<std::pair<NodeId, DecisionKind>, const PlotEdge*> by_slot_;
  std::map<NodeId, const PlotEdge*> parent_;
};

std::string decides_prefix(const std::string& char_name) { return char_name + " decides"; }

}  // namespace

std::string_view to_string(DecisionKind kind) {
  return kind == DecisionKind::Original ? "Original" : "Alternate";
}

DecisionKind decision_kind_from_string(std::string_view s) {
  if (s == "Original") return DecisionKind::Original;
  if (s == "Alternate") return DecisionKind::Alternate;
  throw ParseError("unknown decision_kind '" + std::string(s) + "'");
}

char choice_letter(DecisionKind kind) { return kind == DecisionKind::Original ? 'O' : 'A'; }

const PlotNode* BranchingPlotTree::find_node(const NodeId& id) const {
  auto it = nodes.find(id);
  return it == nodes.end() ? nullptr : &it->second;
}

const PlotEdge* BranchingPlotTree::find_edge(const NodeId& from, DecisionKind kind) const {
  for (const auto& edge : edges) {
    if (edge.from_node == from && edge.decision_kind == kind) return &edge;
  }
  return nullptr;
}

const PlotEdge* BranchingPlotTree::incoming_edge(const NodeId& id) const {
  for (const auto& edge : edges) {
    if (edge.to_target == id) return &edge;
  }
  return nullptr;
}

std::string choice_string(const StorylinePath& path) {
  std::string out;
  for (auto kind : path.choices) out += choice_letter(kind);
  return out;
}

std::vector<DecisionKind> parse_choices(std::string_view choices) {
  std::vector<DecisionKind> out;
  for (char c : choices) {
    if (c == 'O' || c == 'o') {
      out.push_back(DecisionKind::Original);
    } else if (c == 'A' || c == 'a') {
      out.push_back(DecisionKind::Alternate);
    } else {
      throw std::invalid_argument(std::string("invalid choice character '") + c +
                                  "' (expected O or A)");
    }
  }
  return out;
}

StorylinePath follow_choices(const BranchingPlotTree& tree,
                             const std::vector<DecisionKind>& choices) {
  StorylinePath path;
  if (!tree.find_node(tree.root)) throw InvalidPath("tree has no root node");
  EdgeIndex index(tree);
  NodeId current = tree.root;
  for (std::size_t i = 0; i < choices.size(); ++i) {
    const PlotEdge* edge = index.find(current, choices[i]);
    if (!edge) {
      throw InvalidPath("no " + std::string(to_string(choices[i])) + " edge at " + current.value);
    }
    path.node_ids.push_back(current);
    path.choices.push_back(choices[i]);
    if (edge->leads_to_end()) {
      if (i + 1 != choices.size()) throw InvalidPath("story ends before choice " + std::to_string(i + 2));
      break;
    }
    current = *edge->to_target;
  }
  return path;
}

StorylinePath storyline_through(const BranchingPlotTree& tree, const NodeId& node) {
  if (!tree.find_node(node)) throw InvalidPath("unknown node " + node.value);
  EdgeIndex index(tree);

  std::vector<NodeId> ancestors;
  std::vector<DecisionKind> kinds;
  NodeId current = node;
  std::set<NodeId> seen{current};
  while (const PlotEdge* in = index.incoming(current)) {
    ancestors.push_back(in->from_node);
    kinds.push_back(in->decision_kind);
    current = in->from_node;
    if (!seen.insert(current).second) throw InvalidPath("cycle above " + node.value);
  }
  StorylinePath path;
  path.node_ids.assign(ancestors.rbegin(), ancestors.rend());
  path.choices.assign(kinds.rbegin(), kinds.rend());

  current = node;
  for (std::size_t guard = 0; guard <= tree.nodes.size(); ++guard) {
    const PlotEdge* edge = index.find(current, DecisionKind::Original);
    if (!edge) throw InvalidPath("storyline through " + node.value + " stops at " + current.value);
    path.node_ids.push_back(current);
    path.choices.push_back(DecisionKind::Original);
    if (edge->leads_to_end()) return path;
    current = *edge->to_target;
  }
  throw InvalidPath("cycle below " + node.value);
}

std::string choice_prefix(const BranchingPlotTree& tree, const NodeId& node) {
  std::string prefix;
  EdgeIndex index(tree);
  NodeId current = node;
  for (std::size_t guard = 0; guard <= tree.nodes.size(); ++guard) {
    const PlotEdge* in = index.incoming(current);
    if (!in) return {prefix.rbegin(), prefix.rend()};
    prefix += choice_letter(in->decision_kind);
    current = in->from_node;
  }
  throw InvalidPath("cycle above " + node.value);
}

std::vector<std::string> storyline_events(const BranchingPlotTree& tree, const StorylinePath& path) {
  if (path.node_ids.size() != path.choices.size()) {
    throw InvalidPath("path has " + std::to_string(path.node_ids.size()) + " nodes but " +
                      std::to_string(path.choices.size()) + " choices");
  }
  EdgeIndex index(tree);
  std::vector<std::string> events;
  events.reserve(path.node_ids.size() * kEventsPerEdge);
  for (std::size_t i = 0; i < path.node_ids.size(); ++i) {
    const PlotEdge* edge = index.find(path.node_ids[i], path.choices[i]);
    if (!edge) {
      throw InvalidPath("no " + std::string(to_string(path.choices[i])) + " edge at " +
                        path.node_ids[i].value);
    }
    const bool last = i + 1 == path.node_ids.size();
    if (!last && edge->to_target != path.node_ids[i + 1]) {
      throw InvalidPath("edge from " + path.node_ids[i].value + " does not reach " +
                        path.node_ids[i + 1].value);
    }
    events.insert(events.end(), edge->events.begin(), edge->events.end());
  }
  return events;
}

std::vector<StorylinePath> enumerate_storylines(const BranchingPlotTree& tree) {
  std::vector<StorylinePath> out;
  if (!tree.find_node(tree.root)) return out;
  EdgeIndex index(tree);
  StorylinePath current;
  const std::size_t max_depth = tree.nodes.size();

  std::function<void(const NodeId&)> walk = [&](const NodeId& node) {
    if (current.node_ids.size() >= max_depth) return;
    for (auto kind : kKinds) {
      const PlotEdge* edge = index.find(node, kind);
      if (!edge) continue;
      current.node_ids.push_back(node);
      current.choices.push_back(kind);
      if (edge->leads_to_end()) {
        out.push_back(current);
      } else {
        walk(*edge->to_target);
      }
      current.node_ids.pop_back();
      current.choices.pop_back();
    }
  };
  walk(tree.root);
  return out;
}

BranchingPlotTree make_storyline_tree(std::string char_name, std::string title,
                                      const std::vector<StorylineNode>& storyline) {
  BranchingPlotTree tree;
  tree.char_name = std::move(char_name);
  tree.title = std::move(title);
  tree.n = static_cast<int>(storyline.size());
  for (std::size_t i = 0; i < storyline.size(); ++i) {
    const auto& src = storyline[i];
    NodeId id{"node_" + std::to_string(i + 1)};
    if (i == 0) tree.root = id;
    tree.nodes.emplace(id, PlotNode{id, src.state, src.goal, src.decision, src.alternate_decision,
                                    static_cast<int>(i + 1)});
    PlotEdge edge{id, std::nullopt, DecisionKind::Original, src.edge_events};
    if (i + 1 < storyline.size()) edge.to_target = NodeId{"node_" + std::to_string(i + 2)};
    tree.edges.push_back(std::move(edge));
  }
  return tree;
}

BranchingPlotTree merge_branch(const BranchingPlotTree& tree, const NodeId& at_node,
                               const BranchingPlotTree& subtree) {
  const PlotNode* at = tree.find_node(at_node);
  if (!at) throw PreconditionError("merge target " + at_node.value + " not in tree");
  if (tree.find_edge(at_node, DecisionKind::Alternate)) {
    throw AlternateOccupied(at_node.value + " already has an Alternate edge");
  }

  EdgeIndex sub_index(subtree);
  const int expected = tree.n - at->depth + 1;
  int chain = 0;
  {
    NodeId cur = subtree.root;
    while (subtree.find_node(cur) && chain <= static_cast<int>(subtree.nodes.size())) {
      ++chain;
      const PlotEdge* e = sub_index.find(cur, DecisionKind::Original);
      if (!e) {
        chain = -1;
        break;
      }
      if (e->leads_to_end()) break;
      cur = *e->to_target;
    }
  }
  if (chain != expected) {
    throw DepthMismatch("subtree storyline has " + std::to_string(chain) + " nodes, " +
                        at_node.value + " at depth " + std::to_string(at->depth) + " needs " +
                        std::to_string(expected));
  }

  BranchingPlotTree merged = tree;
  const PlotEdge* fused = sub_index.find(subtree.root, DecisionKind::Original);
  const std::string base = "node_" + choice_prefix(tree, at_node) + "A";

  // Breadth-first over the part of the subtree hanging off the fused root's Original edge.
  std::map<NodeId, NodeId> renamed;
  std::deque<std::pair<NodeId, std::string>> queue;
  if (!fused->leads_to_end()) queue.emplace_back(*fused->to_target, "");
  std::vector<NodeId> order;
  std::set<std::string> taken;
  for (const auto& [id, _] : tree.nodes) taken.insert(id.value);
  while (!queue.empty()) {
    auto [sub_id, rel] = queue.front();
    queue.pop_front();
    if (renamed.count(sub_id)) throw DepthMismatch("subtree is not a tree at " + sub_id.value);
    const PlotNode* src = subtree.find_node(sub_id);
    if (!src) throw DepthMismatch("subtree edge targets unknown node " + sub_id.value);

    std::string fresh = base + rel;
    for (int k = 2; taken.count(fresh); ++k) fresh = base + rel + "_" + std::to_string(k);
    taken.insert(fresh);
    NodeId new_id{fresh};
    renamed.emplace(sub_id, new_id);
    order.push_back(sub_id);

    PlotNode node = *src;
    node.id = new_id;
    node.depth = at->depth + 1 + static_cast<int>(rel.size());
    if (node.depth > tree.n) {
      throw DepthMismatch("grafted node " + fresh + " would sit at depth " +
                          std::to_string(node.depth) + " > n=" + std::to_string(tree.n));
    }
    merged.nodes.emplace(new_id, std::move(node));

    for (auto kind : kKinds) {
      const PlotEdge* e = sub_index.find(sub_id, kind);
      if (e && !e->leads_to_end()) queue.emplace_back(*e->to_target, rel + choice_letter(kind));
    }
  }

  auto remap = [&](const std::optional<NodeId>& target) -> std::optional<NodeId> {
    if (!target) return std::nullopt;
    return renamed.at(*target);
  };

  merged.edges.push_back(
      PlotEdge{at_node, remap(fused->to_target), DecisionKind::Alternate, fused->events});
  for (const auto& sub_id : order) {
    for (auto kind : kKinds) {
      const PlotEdge* e = sub_index.find(sub_id, kind);
      if (!e) continue;
      const int depth = merged.nodes.at(renamed.at(sub_id)).depth;
      if (e->leads_to_end() && depth != tree.n) {
        throw DepthMismatch("grafted storyline ends at depth " + std::to_string(depth) +
                            ", expected " + std::to_string(tree.n));
      }
      merged.edges.push_back(PlotEdge{renamed.at(sub_id), remap(e->to_target), kind, e->events});
    }
  }
  if (fused->leads_to_end() && at->depth != tree.n) {
    throw DepthMismatch("fused edge ends the story at depth " + std::to_string(at->depth));
  }
  return merged;
}

std::vector<std::string> validate(const BranchingPlotTree& tree, bool expect_complete) {
  std::vector<std::string> out;
  auto report = [&out](std::string msg) { out.push_back(std::move(msg)); };

  if (tree.n < 1) report("n must be >= 1 (got " + std::to_string(tree.n) + ")");
  if (!tree.find_node(tree.root)) {
    report("root " + tree.root.value + " is not a node");
    return out;
  }

  for (const auto& [id, node] : tree.nodes) {
    if (node.id != id) report("node key " + id.value + " holds id " + node.id.value);
    if (text::trim(node.state).empty()) report(id.value + ": empty state");
    if (text::equivalent(node.key_decision, node.alternate_decision)) {
      report(id.value + ": key_decision equals alternate_decision");
    }
    if (node.depth < 1) report(id.value + ": depth " + std::to_string(node.depth) + " < 1");
    if (tree.n >= 1 && node.depth > tree.n) {
      report(id.value + ": depth " + std::to_string(node.depth) + " exceeds n=" + std::to_string(tree.n));
    }
  }

  std::map<std::pair<NodeId, DecisionKind>, int> slots;
  std::map<NodeId, int> in_degree;
  for (const auto& edge : tree.edges) {
    const std::string where = edge.from_node.value + " (" + std::string(to_string(edge.decision_kind)) + ")";
    const PlotNode* from = tree.find_node(edge.from_node);
    if (!from) report("edge from unknown node " + edge.from_node.value);
    if (edge.events.size() != kEventsPerEdge) {
      report("edge " + where + ": edge event count ≠ 3 (got " + std::to_string(edge.events.size()) + ")");
    }
    for (const auto& ev : edge.events) {
      if (text::trim(ev).empty()) report("edge " + where + ": empty event");
    }
    if (++slots[{edge.from_node, edge.decision_kind}] == 2) {
      report(where + ": more than one " + std::string(to_string(edge.decision_kind)) + " edge");
    }
    if (edge.to_target) {
      const PlotNode* to = tree.find_node(*edge.to_target);
      if (!to) {
        report("edge " + where + " targets unknown node " + edge.to_target->value);
      } else {
        ++in_degree[*edge.to_target];
        if (from && to->depth != from->depth + 1) {
          report("edge " + where + ": depth jumps from " + std::to_string(from->depth) + " to " +
                 std::to_string(to->depth));
        }
      }
    } else if (from && from->depth != tree.n) {
      report("edge " + where + " ends the story at depth " + std::to_string(from->depth) +
             " (expected " + std::to_string(tree.n) + ")");
    }
  }

  const PlotNode& root = tree.nodes.at(tree.root);
  if (root.depth != 1) report("root depth is " + std::to_string(root.depth));
  if (in_degree.count(tree.root)) report("root has an incoming edge");
  for (const auto& [id, node] : tree.nodes) {
    if (id != tree.root && in_degree[id] != 1) {
      report(id.value + ": " + std::to_string(in_degree[id]) + " incoming edges (expected 1)");
    }
    if (!slots.count({id, DecisionKind::Original})) report(id.value + ": missing Original edge");
  }

  // Reachability.
  EdgeIndex index(tree);
  std::set<NodeId> reached{tree.root};
  std::deque<NodeId> queue{tree.root};
  while (!queue.empty()) {
    NodeId cur = queue.front();
    queue.pop_front();
    for (auto kind : kKinds) {
      const PlotEdge* e = index.find(cur, kind);
      if (e && e->to_target && tree.find_node(*e->to_target) && reached.insert(*e->to_target).second) {
        queue.push_back(*e->to_target);
      }
    }
  }
  for (const auto& [id, _] : tree.nodes) {
    if (!reached.count(id)) report(id.value + ": unreachable from root");
  }

  if (expect_complete && out.empty()) {
    for (const auto& [id, _] : tree.nodes) {
      if (!slots.count({id, DecisionKind::Alternate})) report(id.value + ": missing Alternate edge");
    }
    std::size_t leaves = 0;
    for (const auto& edge : tree.edges) leaves += edge.leads_to_end() ? 1 : 0;
    const std::size_t expected_leaves = tree.n >= 1 && tree.n < 63 ? (std::size_t{1} << tree.n) : 0;
    if (leaves != expected_leaves) {
      report("leaf count " + std::to_string(leaves) + " ≠ " + std::to_string(expected_leaves) +
             " (2^n)");
    }
    for (const auto& path : enumerate_storylines(tree)) {
      if (static_cast<int>(path.node_ids.size()) != tree.n) {
        report("storyline " + choice_string(path) + " visits " +
               std::to_string(path.node_ids.size()) + " nodes (expected " + std::to_string(tree.n) + ")");
      }
    }
  }
  return out;
}

std::vector<std::string> lint(const BranchingPlotTree& tree) {
  std::vector<std::string> out;
  const std::string decides_to = tree.char_name + " decides to ";
  for (const auto& [id, node] : tree.nodes) {
    if (!text::starts_with_normalized(node.goal, "To ")) {
      out.push_back(id.value + ": goal does not start with 'To '");
    }
    if (!text::starts_with_normalized(node.key_decision, decides_to)) {
      out.push_back(id.value + ": key_decision does not start with '" + decides_to + "'");
    }
    if (!text::starts_with_normalized(node.alternate_decision, decides_to)) {
      out.push_back(id.value + ": alternate_decision does not start with '" + decides_to + "'");
    }
  }
  for (const auto& edge : tree.edges) {
    if (!edge.events.empty() &&
        !text::starts_with_normalized(edge.events.front(), decides_prefix(tree.char_name))) {
      out.push_back("edge " + edge.from_node.value + " (" + std::string(to_string(edge.decision_kind)) +
                    "): first event does not restate a decision");
    }
  }
  EdgeIndex index(tree);
  for (const auto& [id, _] : tree.nodes) {
    const PlotEdge* o = index.find(id, DecisionKind::Original);
    const PlotEdge* a = index.find(id, DecisionKind::Alternate);
    if (o && a && o->events.size() == a->events.size() &&
        std::equal(o->events.begin(), o->events.end(), a->events.begin(),
                   [](const auto& x, const auto& y) { return text::equivalent(x, y); })) {
      out.push_back(id.value + ": Original and Alternate edges carry identical events");
    }
  }
  return out;
}

nlohmann::json to_json(const BranchingPlotTree& tree) {
  Json nodes = Json::object();
  for (const auto& [id, node] : tree.nodes) {
    nodes[id.value] = {{"id", node.id.value},
                       {"state", node.state},
                       {"goal", node.goal},
                       {"key_decision", node.key_decision},
                       {"alternate_decision", node.alternate_decision},
                       {"depth", node.depth}};
  }
  Json edges = Json::array();
  for (const auto& edge : tree.edges) {
    edges.push_back({{"from_node", edge.from_node.value},
                     {"to_target", edge.to_target ? edge.to_target->value : std::string("END")},
                     {"decision_kind", to_string(edge.decision_kind)},
                     {"events", edge.events}});
  }
  return {{"version", kTreeFileVersion}, {"char_name", tree.char_name}, {"title", tree.title},
          {"n", tree.n},                 {"root", tree.root.value},     {"nodes", std::move(nodes)},
          {"edges", std::move(edges)}};
}

BranchingPlotTree tree_from_json(const nlohmann::json& doc) {
  try {
    if (!doc.is_object()) throw ParseError("tree document is not a JSON object");
    if (!doc.contains("version")) throw ParseError("tree document has no version");
    if (doc.at("version").get<int>() != kTreeFileVersion) {
      throw SchemaVersionMismatch("tree file version " + doc.at("version").dump() +
                                  ", supported " + std::to_string(kTreeFileVersion));
    }
    BranchingPlotTree tree;
    tree.char_name = doc.at("char_name").get<std::string>();
    tree.title = doc.at("title").get<std::string>();
    tree.n = doc.at("n").get<int>();
    tree.root = NodeId{doc.at("root").get<std::string>()};
    for (const auto& [key, value] : doc.at("nodes").items()) {
      PlotNode node{NodeId{value.at("id").get<std::string>()},
                    value.at("state").get<std::string>(),
                    value.at("goal").get<std::string>(),
                    value.at("key_decision").get<std::string>(),
                    value.at("alternate_decision").get<std::string>(),
                    value.at("depth").get<int>()};
      tree.nodes.emplace(NodeId{key}, std::move(node));
    }
    for (const auto& value : doc.at("edges")) {
      PlotEdge edge;
      edge.from_node = NodeId{value.at("from_node").get<std::string>()};
      auto target = value.at("to_target").get<std::string>();
      if (target != "END") edge.to_target = NodeId{target};
      edge.decision_kind = decision_kind_from_string(value.at("decision_kind").get<std::string>());
      edge.events = value.at("events").get<std::vector<std::string>>();
      tree.edges.push_back(std::move(edge));
    }
    return tree;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed tree document: ") + e.what());
  }
}

std::string serialize(const BranchingPlotTree& tree) { return to_json(tree).dump(2) + "\n"; }

BranchingPlotTree deserialize(std::string_view text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("tree file is not valid JSON: ") + e.what());
  }
  return tree_from_json(doc);
}

void save(const BranchingPlotTree& tree, const std::filesystem::path& destination) {
  std::ofstream out(destination, std::ios::binary);
  if (!out) throw Error("cannot write " + destination.string());
  out << serialize(tree);
}

BranchingPlotTree load(const std::filesystem::path& source) {
  std::ifstream in(source, std::ios::binary);
  if (!in) throw ParseError("cannot read " + source.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return deserialize(buffer.str());
}

std::string digest(const BranchingPlotTree& tree) { return sha256_hex(to_json(tree).dump()); }

}  // namespace whatif
