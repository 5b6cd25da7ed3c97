// One PASS/FAIL line per acceptance criterion. Exit status is the number of failures.
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <mutex>
#include <random>
#include <sstream>

#include "golden_backend.hpp"
#include "test_util.hpp"
#include "whatif/app.hpp"
#include "whatif/errors.hpp"
#include "whatif/exporter.hpp"
#include "whatif/ink_check.hpp"
#include "whatif/narrator.hpp"
#include "whatif/prompt_kit.hpp"
#include "whatif/text.hpp"

using namespace whatif;
using namespace whatif::testing;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

constexpr double kEndingsSeconds = 5.0;
constexpr double kReplaySeconds = 10.0;
constexpr int kFrozenPastRuns = 1000;
constexpr int kFuzzCasesPerStage = 200;
constexpr int kRetryLimit = 3;

// Criterion outcome: failures are collected, the first few are printed.
struct Check {
  std::vector<std::string> failures;
  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
};

int g_failed = 0;

void report(const std::string& name, const std::function<std::string(Check&)>& body) {
  Check check;
  std::string detail;
  try {
    detail = body(check);
  } catch (const std::exception& e) {
    check.failures.push_back(std::string("unexpected exception: ") + e.what());
  }
  const bool ok = check.failures.empty();
  g_failed += ok ? 0 : 1;
  std::cout << (ok ? "PASS " : "FAIL ") << name << (detail.empty() ? "" : "  (" + detail + ")") << "\n";
  for (std::size_t i = 0; i < check.failures.size() && i < 5; ++i) std::cout << "    " << check.failures[i] << "\n";
  if (check.failures.size() > 5) std::cout << "    ... " << check.failures.size() - 5 << " more\n";
  std::cout.flush();
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string plot_text() {
  return "Ada leaves home.\nAda finds a map.\nAda crosses the sea.\nAda meets a stranger.\nAda loses the map.\n"
         "Ada returns.";
}

json read_json(const std::filesystem::path& p) { return json::parse(read_text(p)); }

using ExchangeLog = std::vector<std::pair<CompletionRequest, std::string>>;

// Forwards to another backend and keeps each request with its response. The log
// outlives the backend, which the run owns.
class TapBackend : public Backend {
 public:
  TapBackend(std::unique_ptr<Backend> inner, std::shared_ptr<ExchangeLog> log)
      : inner_(std::move(inner)), log_(std::move(log)) {}
  std::string send(const CompletionRequest& request) override {
    auto response = inner_->send(request);
    std::lock_guard lock(mutex_);
    log_->emplace_back(request, response);
    return response;
  }

 private:
  std::unique_ptr<Backend> inner_;
  std::shared_ptr<ExchangeLog> log_;
  std::mutex mutex_;
};

// ---------------------------------------------------------------------------------------------

std::string endings_law(Check& c) {
  double slowest = 0;
  for (int n : {1, 2, 3}) {
    TempDir dir;
    RunOptions options;
    options.backend.mode = BackendMode::Mock;
    options.out_dir = dir.path();
    const auto start = Clock::now();
    const auto outcome = run_generate({plot_text(), "Ada", "Test", n}, options);
    const double took = seconds_since(start);
    slowest = std::max(slowest, took);
    const auto tree = load(dir / artifact::kTree);
    const auto paths = enumerate_storylines(tree);
    const std::size_t expected = std::size_t{1} << n;
    c.expect(outcome.finished, "n=" + std::to_string(n) + ": run did not finish");
    c.expect(paths.size() == expected,
             "n=" + std::to_string(n) + ": " + std::to_string(paths.size()) + " storylines");
    c.expect(dfs_paths(tree).size() == expected, "n=" + std::to_string(n) + ": edge-list DFS disagrees");
    for (const auto& p : paths) {
      c.expect(static_cast<int>(p.node_ids.size()) == n, "n=" + std::to_string(n) + ": path of length " +
                                                             std::to_string(p.node_ids.size()));
    }
    c.expect(took < kEndingsSeconds, "n=" + std::to_string(n) + " took " + fixed(took) + " s");
  }
  return "n=1,2,3; slowest " + fixed(slowest) + " s";
}

std::string event_count_law(Check& c) {
  int cases = 0;
  for (int n = 1; n <= 10; ++n) {
    const auto tree = linear_tree(n);
    for (int t = 1; t <= n; ++t) {
      // Oracle: count the events on original edges leaving nodes at depth >= t.
      int oracle = 0;
      for (const auto& e : tree.edges) oracle += tree.find_node(e.from_node)->depth >= t ? static_cast<int>(e.events.size()) : 0;
      c.expect(new_story_length(n, t) == oracle,
               "n=" + std::to_string(n) + " t=" + std::to_string(t) + ": " + std::to_string(new_story_length(n, t)));
      ++cases;
    }
  }
  c.expect(new_story_length(6, 2) == 15, "n=6 t=2 is not 15");
  const auto golden = load_ironman_golden(fixture("ironman_golden.json"));
  c.expect(text::normalize(golden.at("meta_prompt").at("prompt").get<std::string>()).find("list of 15 events") !=
               std::string::npos,
           "worked meta-prompt does not ask for 15 events");
  return std::to_string(cases) + " (n,t) pairs";
}

// Shared by the replay-golden and determinism criteria.
struct ReplayRun {
  TempDir dir;
  ExchangeLog log;
  double seconds = 0;
};

std::unique_ptr<ReplayRun> replay_run() {
  auto run = std::make_unique<ReplayRun>();
  const auto golden = load_ironman_golden(fixture("ironman_golden.json"));
  RunOptions options;
  options.backend.mode = BackendMode::Replay;
  options.backend.cassette_path = fixture("ironman_cassette.json");
  options.out_dir = run->dir.path();
  auto log = std::make_shared<ExchangeLog>();
  const auto start = Clock::now();
  run_generate({golden.at("plot").get<std::string>(), "Tony Stark", "Iron Man", 6}, options,
               std::make_unique<TapBackend>(make_backend(options.backend), log));
  run->seconds = seconds_since(start);
  run->log = std::move(*log);
  return run;
}

std::string replay_goldens(Check& c) {
  const auto run = replay_run();
  const auto golden = load_ironman_golden(fixture("ironman_golden.json"));
  auto same = [&](const std::string& got, const std::string& want, const std::string& what) {
    c.expect(text::normalize(got) == text::normalize(want), what + ": got \"" + got + "\"");
  };
  const auto tree = load(run->dir / artifact::kTree);

  // Node fields of the summarized storyline.
  int fields = 0;
  for (const auto& [key, want] : golden.at("plot_to_tree").items()) {
    const auto* node = tree.find_node(NodeId{key});
    if (!node) {
      c.expect(false, key + " missing");
      continue;
    }
    same(node->state, want.at("state"), key + ".state");
    same(node->goal, want.at("goal"), key + ".goal");
    same(node->key_decision, want.at("decision"), key + ".decision");
    same(node->alternate_decision, want.at("alternate_decision"), key + ".alternate_decision");
    const auto* edge = tree.find_edge(NodeId{key}, DecisionKind::Original);
    c.expect(edge && edge->events == want.at("edgeEvents").get<std::vector<std::string>>(), key + ".edgeEvents");
    fields += 5;
  }
  same(tree.find_node(NodeId{"node_2"})->goal,
       "To survive and escape captivity without building the missile for the terrorists.", "node_2.goal");
  same(tree.find_node(NodeId{"node_1"})->alternate_decision,
       "Tony Stark decides to send a representative to demonstrate the Jericho missile, while he monitors from the US.",
       "node_1.alternate_decision");

  // Key events of the original storyline.
  const auto original = original_events(golden);
  bool saw_key_events = false, saw_meta = false;
  for (const auto& [request, response] : run->log) {
    const auto doc = json::parse(response);
    if (request.schema.stage == Stage::KeyEvents && request.context.at("events") == json(original)) {
      saw_key_events = true;
      same(doc.at("inciting_incident").at("event"),
           "Tony is critically wounded in an ambush by terrorists using Stark Industries weapons", "inciting incident");
      same(doc.at("crisis").at("event"), "Stane steals Stark's arc reactor, leaving him to die.", "crisis");
      same(doc.at("climax").at("event"),
           "Stark survives using his original reactor, and battles Stane at Stark Industries", "climax");
    }
    if (request.schema.stage == Stage::MetaPrompt && request.context.at("node_id") == "node_2") {
      saw_meta = true;
      c.expect(text::starts_with_normalized(
                   doc.at("prompt").get<std::string>(),
                   "Using the original storyline as a reference, write an alternate storyline that branches out at "
                   "event 4 with Tony Stark deciding to build the missile as requested, planning to escape afterward, "
                   "instead of deciding to build an armored suit."),
               "meta-prompt opening clause");
    }
  }
  c.expect(saw_key_events, "no key-event extraction for the original storyline");
  c.expect(saw_meta, "no meta-prompt for node_2");

  // The 15-event alternate storyline grafted at node_2.
  const auto timeline = golden.at("alternate_timeline").get<std::vector<std::string>>();
  const auto branch = storyline_events(tree, follow_choices(tree, parse_choices("OAOOOO")));
  c.expect(branch.size() == 18 && std::equal(branch.begin() + 3, branch.end(), timeline.begin() + 3),
           "alternate storyline at node_2 differs");
  same(branch.at(3), "Tony Stark decides to build the missile as requested, planning to escape afterward.",
       "first alternate event");
  same(branch.back(),
       "Stark transforms Stark Industries into a force for global peacekeeping, maintaining a private life while "
       "secretly advising on threats.",
       "last alternate event");

  // Narration of node_2.
  const auto narrations = load_narrations(run->dir / artifact::kNarrations);
  const auto& n2 = narrations.at(NodeId{"node_2"});
  same(n2.paragraphs, golden.at("narration_node_2").at("paragraphs"), "node_2 narration");
  c.expect(n2.paragraphs.starts_with("You've decided to go to Afghanistan for the demonstration of the Jericho missile"),
           "node_2 narration opening");
  same(n2.button_original, "Build a suit of armor", "button 1");
  same(n2.button_alternate, "Sabotage the missile", "button 2");

  c.expect(run->seconds < kReplaySeconds, "replay took " + fixed(run->seconds) + " s");
  return std::to_string(fields) + " node fields, key events, meta-prompt, 15 events, narration; " +
         fixed(run->seconds) + " s";
}

std::string frozen_past(Check& c) {
  std::mt19937_64 rng(20231019);
  int merges = 0;
  for (int run = 0; run < kFrozenPastRuns; ++run) {
    const int n = 1 + static_cast<int>(rng() % 4);
    const std::uint64_t seed = rng();
    std::vector<std::pair<BranchingPlotTree, std::string>> snapshots;
    PipelineConfig config;
    config.parallel = 1 + static_cast<int>(rng() % 3);
    config.on_merge = [&](const BranchingPlotTree& before, const BranchingPlotTree& after) {
      const auto fingerprint = frozen_past_fingerprint(before, before);
      c.expect(frozen_past_fingerprint(before, after) == fingerprint,
               "run " + std::to_string(run) + ": merge rewrote an existing edge");
      snapshots.emplace_back(before, fingerprint);
    };
    const auto final_tree = mock_expanded_tree(n, seed, config);
    for (const auto& [before, fingerprint] : snapshots) {
      c.expect(frozen_past_fingerprint(before, final_tree) == fingerprint,
               "run " + std::to_string(run) + ": a later merge rewrote the past");
    }
    c.expect(static_cast<int>(snapshots.size()) == (1 << n) - 1, "run " + std::to_string(run) + ": merge count");
    merges += static_cast<int>(snapshots.size());
  }
  return std::to_string(kFrozenPastRuns) + " expansions, " + std::to_string(merges) + " merges";
}

// --- schema enforcement ----------------------------------------------------------------------

using Mutation = std::function<std::string(json, std::mt19937_64&)>;

template <typename T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
  return v[rng() % v.size()];
}

std::string random_key(const json& obj, std::mt19937_64& rng) {
  std::vector<std::string> keys;
  for (const auto& [k, v] : obj.items()) keys.push_back(k);
  return pick(keys, rng);
}

// Always-invalid rewrites of a valid response, by stage.
std::vector<Mutation> generic_mutations() {
  return {
      [](json doc, std::mt19937_64&) { const auto s = doc.dump(); return s.substr(0, s.size() / 2); },
      [](json, std::mt19937_64&) { return std::string("I'm sorry, I can't produce that document."); },
      [](json doc, std::mt19937_64&) { return json::array({doc}).dump(); },
  };
}

std::vector<Mutation> tree_mutations() {
  auto m = generic_mutations();
  const std::vector<std::string> fields{"state", "goal", "decision", "edgeEvents", "alternate_decision"};
  m.push_back([fields](json doc, std::mt19937_64& rng) {
    doc[random_key(doc, rng)].erase(pick(fields, rng));
    return doc.dump();
  });
  m.push_back([](json doc, std::mt19937_64& rng) {
    auto& events = doc[random_key(doc, rng)]["edgeEvents"];
    if (rng() % 2) events.erase(events.begin() + static_cast<long>(rng() % events.size()));
    else events.push_back("One more thing happens.");
    return doc.dump();
  });
  m.push_back([fields](json doc, std::mt19937_64& rng) {
    doc[random_key(doc, rng)][pick(fields, rng)] = 42;
    return doc.dump();
  });
  m.push_back([](json doc, std::mt19937_64& rng) {
    doc.erase(random_key(doc, rng));
    return doc.dump();
  });
  m.push_back([](json doc, std::mt19937_64&) {
    doc["node_" + std::to_string(doc.size() + 1)] = doc["node_1"];
    return doc.dump();
  });
  return m;
}

std::vector<Mutation> key_event_mutations() {
  auto m = generic_mutations();
  m.push_back([](json doc, std::mt19937_64& rng) { doc.erase(random_key(doc, rng)); return doc.dump(); });
  m.push_back([](json doc, std::mt19937_64& rng) {
    doc[random_key(doc, rng)].erase(rng() % 2 ? "eventId" : "event");
    return doc.dump();
  });
  m.push_back([](json doc, std::mt19937_64& rng) {
    doc[random_key(doc, rng)]["eventId"] = pick(std::vector<json>{true, 0, "seven", 1.5}, rng);
    return doc.dump();
  });
  m.push_back([](json doc, std::mt19937_64&) { doc["crisis"]["eventId"] = 1; return doc.dump(); });
  m.push_back([](json doc, std::mt19937_64&) { doc["resolution"] = doc["climax"]; return doc.dump(); });
  return m;
}

std::vector<Mutation> meta_mutations() {
  auto m = generic_mutations();
  m.push_back([](json doc, std::mt19937_64& rng) { doc.erase(random_key(doc, rng)); return doc.dump(); });
  m.push_back([](json doc, std::mt19937_64& rng) {
    const char* key = rng() % 2 ? "branching_event_number" : "new_story_length";
    doc[key] = doc[key].get<int>() + 1 + static_cast<int>(rng() % 5);
    return doc.dump();
  });
  m.push_back([](json doc, std::mt19937_64&) { doc["prompt"] = 5; return doc.dump(); });
  m.push_back([](json doc, std::mt19937_64&) {
    doc["prompt"] = "Write an alternate storyline.\n1. Why?\n2. How?";
    return doc.dump();
  });
  return m;
}

std::vector<Mutation> storyline_mutations() {
  auto m = generic_mutations();
  m.push_back([](json doc, std::mt19937_64& rng) {
    auto& events = doc["events"];
    events.erase(random_key(events, rng));
    return doc.dump();
  });
  m.push_back([](json doc, std::mt19937_64&) {
    doc["events"][std::to_string(doc["events"].size() + 1)] = "Something else happens.";
    return doc.dump();
  });
  m.push_back([](json doc, std::mt19937_64& rng) {
    doc["events"][random_key(doc["events"], rng)] = 3;
    return doc.dump();
  });
  m.push_back([](json doc, std::mt19937_64&) { doc.erase("events"); return doc.dump(); });
  m.push_back([](json doc, std::mt19937_64&) { doc["events"]["1"] = "Something unrelated happens."; return doc.dump(); });
  return m;
}

std::vector<Mutation> narration_mutations() {
  auto m = generic_mutations();
  m.push_back([](json doc, std::mt19937_64& rng) { doc.erase(random_key(doc, rng)); return doc.dump(); });
  m.push_back([](json doc, std::mt19937_64& rng) { doc[random_key(doc, rng)] = 7; return doc.dump(); });
  m.push_back([](json doc, std::mt19937_64& rng) { doc[random_key(doc, rng)] = "   "; return doc.dump(); });
  m.push_back([](json doc, std::mt19937_64&) { doc["button_text_3"] = "Wait"; return doc.dump(); });
  return m;
}

// Synthetic answers, each rewritten by a randomly chosen mutation before it is returned.
class MutatingBackend : public Backend {
 public:
  MutatingBackend(std::vector<Mutation> mutations, std::uint64_t seed, int clean_after)
      : mutations_(std::move(mutations)), rng_(seed), inner_(seed), clean_after_(clean_after) {}
  std::string send(const CompletionRequest& request) override {
    const auto valid = inner_.send(request);
    if (++calls_ > clean_after_) return valid;
    return pick(mutations_, rng_)(json::parse(valid), rng_);
  }
  int calls() const { return calls_; }

 private:
  std::vector<Mutation> mutations_;
  std::mt19937_64 rng_;
  SyntheticBackend inner_;
  int clean_after_;
  int calls_ = 0;
};

struct FuzzStage {
  std::string name;
  std::function<std::vector<Mutation>()> mutations;
  // Runs the stage; returns the tree it produced when the stage builds one.
  std::function<std::optional<BranchingPlotTree>(Gateway&)> run;
};

std::vector<FuzzStage> fuzz_stages() {
  const auto tree = linear_tree(3);
  const auto path = storyline_through(tree, NodeId{"node_2"});
  const auto events = storyline_events(tree, path);
  MetaPrompt meta;
  meta.branching_node = 2;
  meta.branching_event = 4;
  meta.new_story_length = new_story_length(3, 2);
  meta.original_decision = tree.find_node(NodeId{"node_2"})->key_decision;
  meta.alternate_decision = tree.find_node(NodeId{"node_2"})->alternate_decision;
  meta.prompt_text = "Branch at event 4 where Ada decides to turn back from s2.";
  std::vector<std::string> subtree_events;
  for (int i = 1; i <= 9; ++i) subtree_events.push_back("Ada does thing " + std::to_string(i) + ".");

  return {
      {"plot_to_tree", tree_mutations,
       [](Gateway& g) { return std::optional(Pipeline(g).initialize_tree(plot_text(), "Ada", "", 3)); }},
      {"key_events", key_event_mutations,
       [events](Gateway& g) {
         Pipeline(g).extract_key_events(events);
         return std::optional<BranchingPlotTree>();
       }},
      {"meta_prompt", meta_mutations,
       [tree, path](Gateway& g) {
         Pipeline(g).generate_meta_prompt(tree, path, NodeId{"node_2"}, {});
         return std::optional<BranchingPlotTree>();
       }},
      {"write_storyline", storyline_mutations,
       [events, meta](Gateway& g) {
         Pipeline(g).write_alternate_storyline(events, meta, "Ada");
         return std::optional<BranchingPlotTree>();
       }},
      {"events_to_subtree", tree_mutations,
       [subtree_events](Gateway& g) { return std::optional(Pipeline(g).events_to_subtree(subtree_events, "Ada")); }},
      {"narrate", narration_mutations,
       [tree](Gateway& g) {
         Narrator(g).narrate_node(tree, NodeId{"node_2"});
         return std::optional<BranchingPlotTree>();
       }},
  };
}

std::string schema_enforcement(Check& c) {
  int cases = 0, typed = 0, recovered = 0, max_calls = 0;
  std::mt19937_64 seeds(7);
  for (const auto& stage : fuzz_stages()) {
    for (int i = 0; i < kFuzzCasesPerStage; ++i) {
      const auto seed = seeds();
      const std::string label = stage.name + " case " + std::to_string(i);
      // Every response malformed: must end in a typed error after retrying.
      {
        auto backend = std::make_unique<MutatingBackend>(stage.mutations(), seed, 1 << 20);
        auto* probe = backend.get();
        Gateway gateway(std::move(backend), kRetryLimit);
        try {
          stage.run(gateway);
          c.expect(false, label + ": malformed document accepted");
        } catch (const Error&) {
          ++typed;
        } catch (const std::exception& e) {
          c.expect(false, label + ": untyped failure " + e.what());
        }
        // Schema failures use every attempt; stage checks allow one corrective retry.
        c.expect(probe->calls() >= 2, label + ": gave up after " + std::to_string(probe->calls()) + " call(s)");
        max_calls = std::max(max_calls, probe->calls());
      }
      // One malformed answer, then valid ones: must recover with a well-formed result.
      {
        Gateway gateway(std::make_unique<MutatingBackend>(stage.mutations(), seed, 1), kRetryLimit);
        try {
          if (auto tree = stage.run(gateway)) {
            c.expect(validate(*tree, false).empty(), label + ": recovered tree does not validate");
          }
          ++recovered;
        } catch (const std::exception& e) {
          c.expect(false, label + ": did not recover on the last attempt: " + e.what());
        }
      }
      ++cases;
    }
  }
  return std::to_string(cases) + " malformed cases, " + std::to_string(typed) + " typed errors, " +
         std::to_string(recovered) + " recoveries, at most " +
         std::to_string(max_calls) + " calls";
}

// --- export ------------------------------------------------------------------------------------

std::map<std::string, std::string> ending_map(const std::vector<Playthrough>& plays, Check& c, const std::string& what) {
  std::map<std::string, std::string> out;
  for (const auto& p : plays) {
    std::string key;
    for (const auto& l : p.labels) key += l + " / ";
    c.expect(out.emplace(key, p.ending).second, what + ": duplicate label sequence " + key);
  }
  return out;
}

std::string export_equivalence(Check& c) {
  TempDir dir;
  RunOptions options;
  options.backend.mode = BackendMode::Mock;
  options.out_dir = dir.path();
  run_generate({plot_text(), "Ada", "Test", 3}, options);
  const auto parsed = ink::parse(read_text(dir / artifact::kInk));
  for (const auto& e : parsed.errors) c.expect(false, "ink: " + e);
  const auto from_ink = ending_map(ink::walk(parsed.story), c, "ink");
  const auto from_game = ending_map(walk_game(read_json(dir / artifact::kGame)), c, "game");
  c.expect(from_ink.size() == 8, std::to_string(from_ink.size()) + " Ink endings");
  c.expect(from_game.size() == 8, std::to_string(from_game.size()) + " game endings");
  c.expect(from_ink == from_game, "label-sequence to ending maps differ");
  return std::to_string(from_ink.size()) + " endings";
}

std::string determinism(Check& c) {
  const auto a = replay_run();
  const auto b = replay_run();
  std::size_t bytes = 0;
  for (const char* name : {artifact::kTree, artifact::kInk, artifact::kGame}) {
    const auto x = read_text(a->dir / name), y = read_text(b->dir / name);
    c.expect(!x.empty() && x == y, std::string(name) + " differs between runs");
    bytes += x.size();
  }
  return std::to_string(bytes) + " bytes compared";
}

}  // namespace

int main() {
  report("endings_law", endings_law);
  report("event_count_law", event_count_law);
  report("replay_goldens", replay_goldens);
  report("frozen_past", frozen_past);
  report("schema_enforcement", schema_enforcement);
  report("export_equivalence", export_equivalence);
  report("determinism", determinism);
  std::cout << (g_failed == 0 ? "all criteria passed" : std::to_string(g_failed) + " criteria failed") << "\n";
  return g_failed;
}
