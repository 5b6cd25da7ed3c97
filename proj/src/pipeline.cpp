#include "whatif/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <exception>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "stage_call.hpp"
#include "whatif/errors.hpp"
#include "whatif/hash.hpp"
#include "whatif/text.hpp"

namespace whatif {
namespace {

using Json = nlohmann::json;

thread_local std::size_t t_attempts = 0;

constexpr const char* kKeyEventLabels[] = {"inciting_incident", "crisis", "climax"};

std::string label_phrase(const std::string& label) {
  std::string out = label;
  std::replace(out.begin(), out.end(), '_', ' ');
  return out;
}

std::optional<int> parse_event_id(const Json& v) {
  if (v.is_number_integer()) return v.get<int>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (!s.empty() && s.size() < 9 && std::all_of(s.begin(), s.end(), ::isdigit)) return std::stoi(s);
  }
  return std::nullopt;
}

std::string decision_action(const std::string& decision, const std::string& char_name) {
  std::string s = text::normalize_sentence(decision);
  const std::string prefix = text::normalize(char_name) + " decides to ";
  if (s.starts_with(prefix)) s = s.substr(prefix.size());
  return text::lowercase(s);
}

bool is_count_issue(const SchemaIssue& issue, std::string_view at) {
  return issue.path == at && (issue.keyword == "required" || issue.keyword == "additionalProperties" ||
                              issue.keyword == "minProperties" || issue.keyword == "maxProperties");
}

Json to_json(const LabeledKeyEvent& k) {
  return {{"label", k.label}, {"eventId", k.key_event.event_id}, {"event", k.key_event.event}};
}

Json meta_to_json(const MetaPrompt& m) {
  Json points = Json::array();
  for (const auto& p : m.major_plot_points) points.push_back(to_json(p));
  return {{"branching_node", m.branching_node},
          {"branching_event", m.branching_event},
          {"original_decision", m.original_decision},
          {"alternate_decision", m.alternate_decision},
          {"new_story_length", m.new_story_length},
          {"major_plot_points", std::move(points)},
          {"prompt", m.prompt_text}};
}

MetaPrompt meta_from_json(const Json& j) {
  MetaPrompt m;
  m.branching_node = j.at("branching_node").get<int>();
  m.branching_event = j.at("branching_event").get<int>();
  m.original_decision = j.at("original_decision").get<std::string>();
  m.alternate_decision = j.at("alternate_decision").get<std::string>();
  m.new_story_length = j.at("new_story_length").get<int>();
  for (const auto& p : j.at("major_plot_points")) {
    m.major_plot_points.push_back(
        {p.at("label").get<std::string>(), {p.at("eventId").get<int>(), p.at("event").get<std::string>()}});
  }
  m.prompt_text = j.at("prompt").get<std::string>();
  return m;
}

}  // namespace

std::vector<LabeledKeyEvent> filter_key_events(const KeyEvents& key_events, int branching_event) {
  std::vector<LabeledKeyEvent> kept;
  const KeyEvent* all[] = {&key_events.inciting_incident, &key_events.crisis, &key_events.climax};
  for (int i = 0; i < 3; ++i) {
    if (all[i]->event_id >= branching_event) kept.push_back({kKeyEventLabels[i], *all[i]});
  }
  return kept;
}

std::string describe_plot_points(const std::vector<LabeledKeyEvent>& plot_points) {
  if (plot_points.empty()) return "the remaining events of the original storyline";
  std::vector<std::string> parts;
  for (const auto& p : plot_points) {
    parts.push_back("the " + label_phrase(p.label) + " \"" + text::normalize_sentence(p.key_event.event) +
                    "\" (event " + std::to_string(p.key_event.event_id) + ")");
  }
  if (parts.size() == 1) return parts[0];
  std::string last = parts.back();
  parts.pop_back();
  return text::join(parts, ", ") + (parts.size() > 1 ? "," : "") + " and " + last;
}

std::vector<int> question_markers(std::string_view prompt) {
  std::vector<int> out;
  for (const auto& raw : text::split_lines(prompt)) {
    const std::string line = text::trim(raw);
    std::size_t i = 0;
    while (i < line.size() && i < 3 && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
    if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')')) {
      out.push_back(std::stoi(line.substr(0, i)));
    }
  }
  return out;
}

std::size_t default_budget(int n) {
  if (n >= 60) return std::numeric_limits<std::size_t>::max();
  return std::size_t{8} << std::max(n, 0);
}

// Checkpoint files ---------------------------------------------------------------

nlohmann::json to_json(const ExpansionCheckpoint& checkpoint) {
  Json frontier = Json::array();
  for (const auto& item : checkpoint.frontier) {
    frontier.push_back({{"node_id", item.node.value},
                        {"meta_prompt", item.meta ? meta_to_json(*item.meta) : Json(nullptr)}});
  }
  return {{"version", kCheckpointVersion},
          {"config_digest", checkpoint.config_digest},
          {"tree", to_json(checkpoint.tree)},
          {"frontier", std::move(frontier)},
          {"completed", checkpoint.completed},
          {"gateway_calls", checkpoint.gateway_calls}};
}

ExpansionCheckpoint checkpoint_from_json(const nlohmann::json& doc) {
  try {
    if (!doc.is_object()) throw CorruptCheckpoint("checkpoint is not a JSON object");
    if (doc.at("version").get<int>() != kCheckpointVersion) {
      throw CorruptCheckpoint("unsupported checkpoint version " + doc.at("version").dump());
    }
    ExpansionCheckpoint cp;
    cp.config_digest = doc.at("config_digest").get<std::string>();
    cp.tree = tree_from_json(doc.at("tree"));
    for (const auto& item : doc.at("frontier")) {
      FrontierItem f{NodeId{item.at("node_id").get<std::string>()}, std::nullopt};
      if (!item.at("meta_prompt").is_null()) f.meta = meta_from_json(item.at("meta_prompt"));
      cp.frontier.push_back(std::move(f));
    }
    cp.completed = doc.at("completed").get<int>();
    cp.gateway_calls = doc.value("gateway_calls", std::size_t{0});
    return cp;
  } catch (const Json::exception& e) {
    throw CorruptCheckpoint(std::string("malformed checkpoint: ") + e.what());
  } catch (const ParseError& e) {
    throw CorruptCheckpoint(std::string("malformed checkpoint tree: ") + e.what());
  } catch (const SchemaVersionMismatch& e) {
    throw CorruptCheckpoint(std::string("checkpoint tree: ") + e.what());
  }
}

void save_checkpoint(const ExpansionCheckpoint& checkpoint, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + tmp.string());
    out << to_json(checkpoint).dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

ExpansionCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptCheckpoint("cannot read checkpoint " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  Json doc = Json::parse(buffer.str(), nullptr, false);
  if (doc.is_discarded()) throw CorruptCheckpoint("checkpoint " + path.string() + " is not JSON");
  return checkpoint_from_json(doc);
}

// Pipeline -------------------------------------------------------------------------

Pipeline::Pipeline(Gateway& gateway, PipelineConfig config) : gateway_(gateway), config_(std::move(config)) {
  if (config_.parallel < 1) throw ConfigError("parallel must be >= 1");
}

std::string Pipeline::config_digest() const {
  const Json doc = {{"model_id", config_.model_id},
                    {"generation_temperature", config_.generation_temperature},
                    {"extraction_temperature", config_.extraction_temperature},
                    {"max_output_tokens", config_.max_output_tokens},
                    {"retry_limit", gateway_.retry_limit()}};
  return sha256_hex(doc.dump());
}

std::vector<std::string> Pipeline::warnings() const {
  std::lock_guard lock(mutex_);
  return warnings_;
}

void Pipeline::warn(std::string message) {
  std::lock_guard lock(mutex_);
  warnings_.push_back(std::move(message));
}

StructuredResult Pipeline::call(const CompletionRequest& request) {
  if (budget_) {
    const std::size_t used = calls_used_.fetch_add(1);
    if (used >= *budget_) {
      --calls_used_;
      throw BudgetExceeded("gateway call budget of " + std::to_string(*budget_) + " exhausted");
    }
  }
  StructuredResult result = gateway_.complete_structured(request);
  t_attempts += static_cast<std::size_t>(result.attempts);
  return result;
}

CompletionRequest Pipeline::make_request(Stage stage, const RenderedPrompt& prompt, SchemaSpec schema,
                                         double temperature, nlohmann::json context) const {
  CompletionRequest request;
  request.messages = {Message{Role::System, prompt.system_text}, Message{Role::User, prompt.user_text}};
  request.schema = std::move(schema);
  request.schema.stage = stage;
  request.temperature = temperature;
  request.model_id = config_.model_id;
  request.max_output_tokens = config_.max_output_tokens;
  request.context = std::move(context);
  return request;
}

BranchingPlotTree Pipeline::summarize(const std::string& plot, const std::string& char_name,
                                      const std::string& title, std::optional<int> num_nodes) {
  SchemaSpec schema = plot_to_tree_schema(num_nodes, char_name);
  const RenderedPrompt prompt = render(Stage::PlotToTree, {{"plot", plot},
                                                           {"char_name", char_name},
                                                           {"num_nodes", num_nodes_phrase(num_nodes)},
                                                           {"JSON_SCHEMA", schema.document.dump(2)}});
  Json context = {{"plot", plot}, {"char_name", char_name}};
  context["num_nodes"] = num_nodes ? Json(*num_nodes) : Json(nullptr);
  auto request = make_request(Stage::PlotToTree, prompt, std::move(schema), config_.generation_temperature,
                              std::move(context));

  detail::CallFn gateway_call = [this](const CompletionRequest& r) {
    try {
      return call(r);
    } catch (const SchemaViolation& e) {
      detail::raise_as_if<NodeCountMismatch>(e, [](const SchemaIssue& i) { return is_count_issue(i, ""); });
      throw;
    }
  };
  auto check = [](const Json& doc) {
    std::vector<SchemaIssue> issues;
    for (std::size_t k = 1; k <= doc.size(); ++k) {
      const std::string key = "node_" + std::to_string(k);
      if (!doc.contains(key)) {
        issues.push_back({"", "node_count", "nodes must be numbered node_1..node_" +
                                                std::to_string(doc.size()) + "; missing " + key});
        continue;
      }
      const Json& node = doc.at(key);
      if (text::equivalent(node.at("decision").get<std::string>(),
                           node.at("alternate_decision").get<std::string>())) {
        issues.push_back({"/" + key, "distinct_decisions", "alternate_decision repeats the key decision"});
      }
    }
    return issues;
  };

  Json doc;
  try {
    doc = detail::checked_completion<InvariantViolation>(gateway_call, std::move(request), check);
  } catch (const InvariantViolation& e) {
    detail::raise_as_if<NodeCountMismatch>(e, [](const SchemaIssue& i) { return i.keyword == "node_count"; });
    throw;
  }

  std::vector<StorylineNode> storyline;
  for (std::size_t k = 1; k <= doc.size(); ++k) {
    const Json& node = doc.at("node_" + std::to_string(k));
    storyline.push_back({node.at("state").get<std::string>(), node.at("goal").get<std::string>(),
                         node.at("decision").get<std::string>(),
                         node.at("edgeEvents").get<std::vector<std::string>>(),
                         node.at("alternate_decision").get<std::string>()});
  }
  BranchingPlotTree tree = make_storyline_tree(char_name, title, storyline);
  for (auto& w : lint(tree)) warn("plot-to-tree: " + w);
  if (auto violations = validate(tree, false); !violations.empty()) {
    std::vector<SchemaIssue> issues;
    for (auto& v : violations) issues.push_back({"", "tree", std::move(v)});
    throw InvariantViolation("summarized storyline is not a valid tree: " + describe(issues), issues, 0);
  }
  return tree;
}

BranchingPlotTree Pipeline::initialize_tree(const std::string& plot, const std::string& char_name,
                                            const std::string& title, std::optional<int> num_nodes) {
  if (text::trim(plot).empty()) throw EmptyPlot("plot is empty");
  if (text::trim(char_name).empty()) throw PreconditionError("character name is empty");
  if (num_nodes && *num_nodes < 1) throw PreconditionError("num_nodes must be >= 1");
  return summarize(plot, char_name, title, num_nodes);
}

BranchingPlotTree Pipeline::events_to_subtree(const std::vector<std::string>& new_events,
                                              const std::string& char_name) {
  if (new_events.empty() || new_events.size() % kEventsPerEdge != 0) {
    throw PreconditionError("event count " + std::to_string(new_events.size()) +
                            " is not a positive multiple of 3");
  }
  return summarize(text::join(new_events, "\n"), char_name, "",
                   static_cast<int>(new_events.size() / kEventsPerEdge));
}

KeyEvents Pipeline::extract_key_events(const std::vector<std::string>& events) {
  if (events.size() < 3) {
    throw TooFewEvents("key-event extraction needs at least 3 events, got " + std::to_string(events.size()));
  }
  SchemaSpec schema = key_events_schema();
  const RenderedPrompt prompt =
      render(Stage::KeyEvents, {{"events", text::numbered(events)}, {"JSON_SCHEMA", schema.document.dump(2)}});
  auto request = make_request(Stage::KeyEvents, prompt, std::move(schema), config_.extraction_temperature,
                              {{"events", events}});

  const int count = static_cast<int>(events.size());
  auto check = [count](const Json& doc) {
    std::vector<SchemaIssue> issues;
    int previous = 0;
    for (const char* label : kKeyEventLabels) {
      auto id = parse_event_id(doc.at(label).at("eventId"));
      if (!id || *id < 1 || *id > count) {
        issues.push_back({std::string("/") + label + "/eventId", "ordering",
                          "eventId must be an event number between 1 and " + std::to_string(count)});
        continue;
      }
      if (*id <= previous) {
        issues.push_back({std::string("/") + label + "/eventId", "ordering",
                          "inciting_incident, crisis and climax must come in increasing event order"});
      }
      previous = *id;
    }
    return issues;
  };
  Json doc = detail::checked_completion<OrderingViolation>([this](const auto& r) { return call(r); },
                                                           std::move(request), check);

  KeyEvents out;
  KeyEvent* slots[] = {&out.inciting_incident, &out.crisis, &out.climax};
  for (int i = 0; i < 3; ++i) {
    const Json& j = doc.at(kKeyEventLabels[i]);
    *slots[i] = KeyEvent{*parse_event_id(j.at("eventId")), j.at("event").get<std::string>()};
    if (!text::equivalent(slots[i]->event, events[slots[i]->event_id - 1])) {
      warn(std::string("key events: ") + kKeyEventLabels[i] + " text differs from event " +
           std::to_string(slots[i]->event_id));
    }
  }
  return out;
}

MetaPrompt Pipeline::generate_meta_prompt(const BranchingPlotTree& tree, const StorylinePath& path,
                                          const NodeId& node_id,
                                          const std::vector<LabeledKeyEvent>& filtered_key_events) {
  auto pos = std::find(path.node_ids.begin(), path.node_ids.end(), node_id);
  if (pos == path.node_ids.end()) throw PreconditionError(node_id.value + " is not on the storyline");
  const PlotNode* node = tree.find_node(node_id);
  if (!node) throw PreconditionError("unknown node " + node_id.value);
  if (text::trim(node->alternate_decision).empty()) {
    throw PreconditionError(node_id.value + " has no alternate decision");
  }

  MetaPrompt meta;
  meta.branching_node = static_cast<int>(pos - path.node_ids.begin()) + 1;
  meta.branching_event = branching_event_for(meta.branching_node);
  meta.original_decision = node->key_decision;
  meta.alternate_decision = node->alternate_decision;
  meta.new_story_length = new_story_length(static_cast<int>(path.node_ids.size()), meta.branching_node);
  meta.major_plot_points = filtered_key_events;

  Json points = Json::array();
  for (const auto& p : filtered_key_events) points.push_back(to_json(p));

  SchemaSpec schema = meta_prompt_schema(meta.branching_event, meta.new_story_length);
  const RenderedPrompt prompt =
      render(Stage::MetaPrompt, {{"all_events", text::numbered(storyline_events(tree, path))},
                                 {"branching_event", std::to_string(meta.branching_event)},
                                 {"char_name", tree.char_name},
                                 {"alternate_decision", meta.alternate_decision},
                                 {"original_decision", meta.original_decision},
                                 {"mpp", describe_plot_points(filtered_key_events)},
                                 {"new_story_length", std::to_string(meta.new_story_length)},
                                 {"JSON_SCHEMA", schema.document.dump(2)}});
  auto request = make_request(Stage::MetaPrompt, prompt, std::move(schema), config_.generation_temperature,
                              {{"char_name", tree.char_name},
                               {"branching_node", meta.branching_node},
                               {"branching_event", meta.branching_event},
                               {"new_story_length", meta.new_story_length},
                               {"alternate_decision", meta.alternate_decision},
                               {"original_decision", meta.original_decision},
                               {"major_plot_points", points},
                               {"node_id", node_id.value}});

  const std::string action = decision_action(meta.alternate_decision, tree.char_name);
  auto check = [action](const Json& doc) {
    std::vector<SchemaIssue> issues;
    const std::string prompt_text = doc.at("prompt").get<std::string>();
    if (question_markers(prompt_text) != std::vector<int>{1, 2, 3, 4, 5}) {
      issues.push_back({"/prompt", "questions", "prompt must contain exactly 5 numbered guiding questions (1. to 5.)"});
    }
    if (text::lowercase(text::normalize(prompt_text)).find(action) == std::string::npos) {
      issues.push_back({"/prompt", "alternate_decision", "prompt must mention the alternate decision"});
    }
    return issues;
  };
  Json doc = detail::checked_completion<InvariantViolation>([this](const auto& r) { return call(r); },
                                                            std::move(request), check);
  meta.prompt_text = doc.at("prompt").get<std::string>();
  return meta;
}

std::vector<std::string> Pipeline::write_alternate_storyline(const std::vector<std::string>& path_events,
                                                             const MetaPrompt& meta_prompt,
                                                             const std::string& char_name) {
  if (meta_prompt.new_story_length < 3 || meta_prompt.new_story_length % 3 != 0 ||
      meta_prompt.prompt_text.empty()) {
    throw PreconditionError("meta-prompt is incomplete");
  }
  const int length = meta_prompt.new_story_length;
  SchemaSpec schema = write_storyline_schema(length);
  const RenderedPrompt prompt = render(Stage::WriteStoryline, {{"all_events", text::numbered(path_events)},
                                                               {"prompt", meta_prompt.prompt_text},
                                                               {"JSON_SCHEMA", schema.document.dump(2)}});
  auto request = make_request(Stage::WriteStoryline, prompt, std::move(schema), config_.generation_temperature,
                              {{"char_name", char_name},
                               {"new_story_length", length},
                               {"alternate_decision", meta_prompt.alternate_decision},
                               {"branching_event", meta_prompt.branching_event}});

  detail::CallFn gateway_call = [this](const CompletionRequest& r) {
    try {
      return call(r);
    } catch (const SchemaViolation& e) {
      detail::raise_as_if<CountMismatch>(e, [](const SchemaIssue& i) { return is_count_issue(i, "/events"); });
      throw;
    }
  };
  const std::string& ad = meta_prompt.alternate_decision;
  auto check = [&ad](const Json& doc) {
    std::vector<SchemaIssue> issues;
    if (!text::equivalent(doc.at("events").at("1").get<std::string>(), ad)) {
      issues.push_back({"/events/1", "first_event", "the first event must be the alternate decision: " + ad});
    }
    return issues;
  };
  Json doc = detail::checked_completion<InvariantViolation>(gateway_call, std::move(request), check);

  std::vector<std::string> events;
  for (int i = 1; i <= length; ++i) events.push_back(doc.at("events").at(std::to_string(i)).get<std::string>());
  return events;
}

KeyEvents Pipeline::key_events_for(const std::vector<std::string>& events) {
  const std::string key = sha256_hex(text::join(events, "\n"));
  std::promise<KeyEvents> promise;
  std::shared_future<KeyEvents> future;
  bool owner = false;
  {
    std::lock_guard lock(mutex_);
    auto it = key_event_cache_.find(key);
    if (it == key_event_cache_.end()) {
      future = promise.get_future().share();
      key_event_cache_.emplace(key, future);
      owner = true;
    } else {
      future = it->second;
    }
  }
  if (owner) {
    try {
      promise.set_value(extract_key_events(events));
    } catch (...) {
      promise.set_exception(std::current_exception());
      std::lock_guard lock(mutex_);
      key_event_cache_.erase(key);
    }
  }
  return future.get();
}

MetaPrompt Pipeline::meta_for(const BranchingPlotTree& tree, const NodeId& node) {
  const StorylinePath path = storyline_through(tree, node);
  const KeyEvents key_events = key_events_for(storyline_events(tree, path));
  auto pos = std::find(path.node_ids.begin(), path.node_ids.end(), node);
  const int branching_node = static_cast<int>(pos - path.node_ids.begin()) + 1;
  return generate_meta_prompt(tree, path, node,
                              filter_key_events(key_events, branching_event_for(branching_node)));
}

void Pipeline::fill_metas(ExpansionCheckpoint& state, std::size_t first) {
  std::vector<std::size_t> todo;
  for (std::size_t i = first; i < state.frontier.size(); ++i) {
    if (!state.frontier[i].meta) todo.push_back(i);
  }
  std::vector<std::optional<MetaPrompt>> results(todo.size());
  std::exception_ptr failure;
  try {
    detail::for_each_batched(todo.size(), config_.parallel,
                     [&](std::size_t k) { results[k] = meta_for(state.tree, state.frontier[todo[k]].node); });
  } catch (...) {
    failure = std::current_exception();
  }
  for (std::size_t k = 0; k < todo.size(); ++k) {
    if (results[k]) state.frontier[todo[k]].meta = std::move(results[k]);
  }
  if (failure) std::rethrow_exception(failure);
}

void Pipeline::write_checkpoint(const ExpansionCheckpoint& state) const {
  if (!config_.checkpoint_path.empty()) save_checkpoint(state, config_.checkpoint_path);
}

ExpansionResult Pipeline::expand_tree(BranchingPlotTree tree) {
  if (auto violations = validate(tree, false); !violations.empty()) {
    throw PreconditionError("cannot expand an invalid tree: " + violations.front());
  }
  ExpansionCheckpoint state;
  const StorylinePath original = storyline_through(tree, tree.root);
  for (const auto& id : original.node_ids) {
    if (!tree.find_edge(id, DecisionKind::Alternate)) state.frontier.push_back({id, std::nullopt});
  }
  state.tree = std::move(tree);
  state.config_digest = config_digest();
  return run(std::move(state));
}

ExpansionResult Pipeline::resume(ExpansionCheckpoint checkpoint) {
  if (checkpoint.config_digest != config_digest()) {
    throw ConfigDigestMismatch("checkpoint was written under a different configuration");
  }
  return run(std::move(checkpoint));
}

ExpansionResult Pipeline::run(ExpansionCheckpoint state) {
  budget_ = config_.budget.value_or(default_budget(state.tree.n));
  calls_used_ = state.gateway_calls;
  struct ResetBudget {
    std::optional<std::size_t>& b;
    ~ResetBudget() { b.reset(); }
  } reset{budget_};

  int this_run = 0;
  try {
    fill_metas(state, 0);
    write_checkpoint(state);

    while (!state.frontier.empty()) {
      if (config_.stop_after_branches && this_run >= *config_.stop_after_branches) {
        state.gateway_calls = calls_used_;
        write_checkpoint(state);
        return {state.tree, false, state.completed, state.gateway_calls};
      }
      std::size_t batch = std::min<std::size_t>(state.frontier.size(), static_cast<std::size_t>(config_.parallel));
      if (config_.stop_after_branches) {
        batch = std::min<std::size_t>(batch, static_cast<std::size_t>(*config_.stop_after_branches - this_run));
      }

      struct BranchWork {
        BranchingPlotTree subtree;
        std::size_t attempts = 0;
        std::chrono::steady_clock::duration elapsed{};
      };
      std::vector<BranchWork> work(batch);
      detail::for_each_batched(batch, config_.parallel, [&](std::size_t i) {
        const auto started = std::chrono::steady_clock::now();
        t_attempts = 0;
        FrontierItem& item = state.frontier[i];
        if (!item.meta) item.meta = meta_for(state.tree, item.node);
        const StorylinePath path = storyline_through(state.tree, item.node);
        auto new_events = write_alternate_storyline(storyline_events(state.tree, path), *item.meta,
                                                    state.tree.char_name);
        work[i].subtree = events_to_subtree(new_events, state.tree.char_name);
        work[i].attempts = t_attempts;
        work[i].elapsed = std::chrono::steady_clock::now() - started;
      });

      const std::size_t first_new = state.frontier.size() - batch;
      for (std::size_t i = 0; i < batch; ++i) {
        const NodeId node = state.frontier.front().node;
        BranchingPlotTree merged = merge_branch(state.tree, node, work[i].subtree);
        if (config_.on_merge) config_.on_merge(state.tree, merged);
        state.tree = std::move(merged);
        state.frontier.pop_front();
        ++state.completed;
        ++this_run;

        const PlotEdge* alt = state.tree.find_edge(node, DecisionKind::Alternate);
        for (auto next = alt->to_target; next;) {
          state.frontier.push_back({*next, std::nullopt});
          next = state.tree.find_edge(*next, DecisionKind::Original)->to_target;
        }
        if (config_.progress) {
          const Json line = {
              {"event", "branch"},
              {"node_id", node.value},
              {"attempts", work[i].attempts},
              {"elapsed_ms", std::chrono::duration_cast<std::chrono::milliseconds>(work[i].elapsed).count()},
              {"completed", state.completed}};
          *config_.progress << line.dump() << "\n" << std::flush;
        }
      }
      state.gateway_calls = calls_used_;
      write_checkpoint(state);
      fill_metas(state, first_new);
      state.gateway_calls = calls_used_;
      write_checkpoint(state);
    }
  } catch (...) {
    state.gateway_calls = calls_used_;
    write_checkpoint(state);
    throw;
  }

  for (auto& w : lint(state.tree)) warn("expanded tree: " + w);
  if (auto violations = validate(state.tree, true); !violations.empty()) {
    throw Error("expansion produced an invalid tree: " + violations.front());
  }
  return {std::move(state.tree), true, state.completed, state.gateway_calls};
}

}  // namespace whatif
