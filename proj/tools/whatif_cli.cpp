// whatif: turn a linear plot into a branching game.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "whatif/app.hpp"
#include "whatif/errors.hpp"
#include "whatif/exporter.hpp"
#include "whatif/ink_check.hpp"
#include "whatif/plot_tree.hpp"

namespace {

using Json = nlohmann::json;
namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Settings shared by generate and resume. Each field is looked up in the flags, then the
// --config file, then WHATIF_<KEY> in the environment.
struct Settings {
  std::optional<std::string> plot_file, plot, char_name, title, mode, cassette, out_dir, model, endpoint,
      api_key_env;
  std::optional<int> nodes, parallel, retry_limit, timeout_s, max_concurrent, stop_after;
  std::optional<std::size_t> budget;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> config;
  bool verbose = false;
};

template <typename T>
void fill(std::optional<T>& slot, const Json& config, const char* key) {
  if (slot) return;
  if (config.contains(key)) {
    try {
      slot = config.at(key).get<T>();
    } catch (const Json::exception&) {
      throw UsageError(std::string("config key '") + key + "' has the wrong type");
    }
    return;
  }
  std::string env = "WHATIF_";
  for (const char* p = key; *p; ++p) env.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(*p))));
  const char* value = std::getenv(env.c_str());
  if (!value) return;
  if constexpr (std::is_same_v<T, std::string>) {
    slot = value;
  } else {
    try {
      slot = static_cast<T>(std::stoll(value));
    } catch (const std::exception&) {
      throw UsageError(env + " must be an integer");
    }
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void resolve(Settings& s) {
  Json config = Json::object();
  if (s.config) {
    config = Json::parse(read_file(*s.config), nullptr, false);
    if (config.is_discarded() || !config.is_object()) throw UsageError(*s.config + " is not a JSON object");
    for (const char* forbidden : {"api_key", "key", "token"}) {
      if (config.contains(forbidden)) throw UsageError("API keys are read from the environment only");
    }
  }
  fill(s.plot_file, config, "plot_file");
  fill(s.plot, config, "plot");
  fill(s.char_name, config, "char");
  fill(s.title, config, "title");
  fill(s.mode, config, "mode");
  fill(s.cassette, config, "cassette");
  fill(s.out_dir, config, "out_dir");
  fill(s.model, config, "model");
  fill(s.endpoint, config, "endpoint");
  fill(s.api_key_env, config, "api_key_env");
  fill(s.nodes, config, "nodes");
  fill(s.parallel, config, "parallel");
  fill(s.retry_limit, config, "retry_limit");
  fill(s.timeout_s, config, "timeout_s");
  fill(s.max_concurrent, config, "max_concurrent");
  fill(s.budget, config, "budget");
  fill(s.seed, config, "seed");
}

whatif::RunOptions run_options(const Settings& s) {
  whatif::RunOptions o;
  try {
    o.backend.mode = whatif::backend_mode_from_string(s.mode.value_or("mock"));
  } catch (const whatif::ConfigError& e) {
    throw UsageError(e.what());
  }
  if (s.cassette) o.backend.cassette_path = *s.cassette;
  if (s.endpoint) o.backend.endpoint = *s.endpoint;
  if (s.api_key_env) o.backend.api_key_env = *s.api_key_env;
  if (s.retry_limit) o.backend.retry_limit = *s.retry_limit;
  if (s.timeout_s) o.backend.request_timeout = std::chrono::seconds(*s.timeout_s);
  if (s.max_concurrent) o.backend.max_concurrent = *s.max_concurrent;
  if (s.seed) o.backend.mock_seed = *s.seed;
  if (s.model) o.model_id = *s.model;
  o.budget = s.budget;
  if (s.parallel) o.parallel = *s.parallel;
  if (s.out_dir) o.out_dir = *s.out_dir;
  o.stop_after_branches = s.stop_after;
  o.echo_progress = s.verbose;
  return o;
}

void add_run_flags(CLI::App* cmd, Settings& s) {
  cmd->add_option("--mode", s.mode, "live | record | replay | mock (default mock)");
  cmd->add_option("--cassette", s.cassette, "cassette file for record/replay");
  cmd->add_option("--out-dir", s.out_dir, "artifact directory (default ./out)");
  cmd->add_option("--budget", s.budget, "maximum gateway calls during expansion");
  cmd->add_option("--parallel", s.parallel, "branches expanded concurrently");
  cmd->add_option("--model", s.model, "model id");
  cmd->add_option("--endpoint", s.endpoint, "chat-completions URL");
  cmd->add_option("--api-key-env", s.api_key_env, "environment variable holding the API key");
  cmd->add_option("--retry-limit", s.retry_limit, "attempts per structured call");
  cmd->add_option("--timeout", s.timeout_s, "request timeout in seconds");
  cmd->add_option("--max-concurrent", s.max_concurrent, "in-flight model requests");
  cmd->add_option("--seed", s.seed, "mock backend seed");
  cmd->add_option("--config", s.config, "JSON file with the same keys as the flags");
  cmd->add_option("--stop-after", s.stop_after, "stop with a checkpoint after N branches")->group("");
  cmd->add_flag("-v,--verbose", s.verbose, "echo run.log to stderr");
}

void report(const whatif::RunOutcome& outcome, const whatif::RunOptions& options) {
  if (!outcome.finished) {
    std::cout << "stopped early; resume with: whatif resume --checkpoint "
              << (options.out_dir / whatif::artifact::kCheckpoint).string() << "\n";
    return;
  }
  std::cout << "wrote " << (options.out_dir / whatif::artifact::kGame).string() << ": "
            << outcome.tree.nodes.size() << " nodes, " << whatif::enumerate_storylines(outcome.tree).size()
            << " endings, " << outcome.gateway_calls << " model calls, " << outcome.warnings.size()
            << " warning(s)\n";
}

int cmd_generate(Settings s) {
  resolve(s);
  if (!s.char_name) throw UsageError("--char is required");
  whatif::GenerateInput input;
  if (s.plot_file) {
    input.plot = read_file(*s.plot_file);
  } else if (s.plot) {
    input.plot = *s.plot;
  } else {
    throw UsageError("a plot file or --plot is required");
  }
  input.char_name = *s.char_name;
  input.title = s.title.value_or("");
  input.num_nodes = s.nodes;
  const auto options = run_options(s);
  report(whatif::run_generate(input, options), options);
  return whatif::kExitOk;
}

int cmd_resume(Settings s, const std::string& checkpoint) {
  resolve(s);
  if (!s.out_dir) s.out_dir = fs::path(checkpoint).parent_path().string();
  if (s.out_dir->empty()) s.out_dir = ".";
  const auto options = run_options(s);
  report(whatif::run_resume(checkpoint, options), options);
  return whatif::kExitOk;
}

int cmd_validate(const std::string& path, bool complete) {
  const auto tree = whatif::load(path);
  const auto violations = whatif::validate(tree, complete);
  for (const auto& v : violations) std::cout << "violation: " << v << "\n";
  for (const auto& w : whatif::lint(tree)) std::cout << "lint: " << w << "\n";
  if (!violations.empty()) return whatif::kExitInvalid;
  std::cout << "ok: " << tree.nodes.size() << " nodes, " << whatif::enumerate_storylines(tree).size()
            << " storylines\n";
  return whatif::kExitOk;
}

int cmd_inspect(const std::string& path, const std::string& choices) {
  std::vector<whatif::DecisionKind> parsed;
  try {
    parsed = whatif::parse_choices(choices);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto tree = whatif::load(path);
  const auto storyline = whatif::follow_choices(tree, parsed);
  const auto events = whatif::storyline_events(tree, storyline);
  for (std::size_t i = 0; i < events.size(); ++i) std::cout << i + 1 << ". " << events[i] << "\n";
  return whatif::kExitOk;
}

int cmd_check_ink(const std::string& ink_path, const std::optional<std::string>& game_path) {
  const auto parsed = whatif::ink::parse(read_file(ink_path));
  for (const auto& e : parsed.errors) std::cout << "error: " << e << "\n";
  if (!parsed.ok()) return whatif::kExitInvalid;
  auto ink_plays = whatif::ink::walk(parsed.story);
  std::cout << "ok: " << parsed.story.knots.size() << " knots, " << ink_plays.size() << " playthroughs\n";
  if (game_path) {
    Json game = Json::parse(read_file(*game_path), nullptr, false);
    if (game.is_discarded()) throw whatif::ParseError(*game_path + " is not JSON");
    auto game_plays = whatif::walk_game(game);
    std::sort(ink_plays.begin(), ink_plays.end());
    std::sort(game_plays.begin(), game_plays.end());
    if (ink_plays != game_plays) {
      std::cout << "mismatch: story.ink and game.json offer different playthroughs\n";
      return whatif::kExitInvalid;
    }
    std::cout << "game.json matches: " << game_plays.size() << " playthroughs\n";
  }
  return whatif::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Turn a linear plot into a branching choose-your-own-adventure game"};
  app.require_subcommand(1);

  Settings gen;
  auto* generate = app.add_subcommand("generate", "summarize, branch, narrate and export a plot");
  generate->add_option("plot_file", gen.plot_file, "plot summary text file");
  generate->add_option("--plot", gen.plot, "plot summary text");
  generate->add_option("--char", gen.char_name, "main character");
  generate->add_option("--title", gen.title, "story title");
  generate->add_option("--nodes", gen.nodes, "decision points on the original storyline")->check(CLI::Range(1, 20));
  add_run_flags(generate, gen);

  Settings res;
  std::string checkpoint;
  auto* resume = app.add_subcommand("resume", "continue an interrupted generate run");
  resume->add_option("--checkpoint", checkpoint, "checkpoint.json from the interrupted run")->required();
  add_run_flags(resume, res);

  std::string tree_path;
  bool complete = false;
  auto* validate = app.add_subcommand("validate", "check a tree.json against the tree invariants");
  validate->add_option("tree", tree_path, "tree.json")->required();
  validate->add_flag("--complete", complete, "also require a full binary tree");

  std::string inspect_tree, choices;
  auto* inspect = app.add_subcommand("inspect", "print the events of one storyline");
  inspect->add_option("tree", inspect_tree, "tree.json")->required();
  inspect->add_option("--path", choices, "choice vector such as OAOO")->required();

  std::string ink_path;
  std::optional<std::string> game_path;
  auto* check_ink = app.add_subcommand("check-ink", "parse an Ink script and enumerate its playthroughs");
  check_ink->add_option("script", ink_path, "story.ink")->required();
  check_ink->add_option("--game", game_path, "game.json to compare playthroughs with");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return whatif::kExitUsage;
  }

  try {
    if (*generate) return cmd_generate(gen);
    if (*resume) return cmd_resume(res, checkpoint);
    if (*validate) return cmd_validate(tree_path, complete);
    if (*inspect) return cmd_inspect(inspect_tree, choices);
    if (*check_ink) return cmd_check_ink(ink_path, game_path);
  } catch (const UsageError& e) {
    std::cerr << "whatif: " << e.what() << "\n";
    return whatif::kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "whatif: " << e.what() << "\n";
    return whatif::exit_code_for(std::current_exception());
  }
  return whatif::kExitFailure;
}
