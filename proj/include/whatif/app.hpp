#pragma once

#include <cstddef>
#include <exception>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "whatif/llm_gateway.hpp"
#include "whatif/narrator.hpp"
#include "whatif/plot_tree.hpp"

namespace whatif {

// Files written to the output directory.
namespace artifact {
inline constexpr const char* kTree = "tree.json";
inline constexpr const char* kNarrations = "narrations.json";
inline constexpr const char* kInk = "story.ink";
inline constexpr const char* kGame = "game.json";
inline constexpr const char* kLog = "run.log";
inline constexpr const char* kCheckpoint = "checkpoint.json";
inline constexpr const char* kPartialNarrations = "narrations.partial.json";
}  // namespace artifact

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,
  kExitSchema = 3,
  kExitBudget = 4,
  kExitTransport = 5,
  kExitCassetteMiss = 6,
  kExitInvalid = 7,
  kExitCheckpoint = 8,
};

int exit_code_for(const std::exception_ptr& error);

struct RunOptions {
  BackendConfig backend;
  std::string model_id = "gpt-4";
  std::optional<std::size_t> budget;
  int parallel = 1;
  std::filesystem::path out_dir = "out";
  std::optional<int> stop_after_branches;
  bool echo_progress = false;  // mirror run.log lines to stderr
};

struct GenerateInput {
  std::string plot;
  std::string char_name;
  std::string title;
  std::optional<int> num_nodes;
};

struct RunOutcome {
  bool finished = false;  // false when stopped early with a checkpoint
  BranchingPlotTree tree;
  NarrationMap narrations;
  std::size_t gateway_calls = 0;
  std::vector<std::string> warnings;
};

/// Summarize, expand, narrate and export. Leaves checkpoint.json behind on failure.
RunOutcome run_generate(const GenerateInput& input, const RunOptions& options);

/// Same, with a caller-supplied backend in place of options.backend.mode.
RunOutcome run_generate(const GenerateInput& input, const RunOptions& options, std::unique_ptr<Backend> backend);

/// Continues from a checkpoint; narrations.partial.json in the output directory is reused.
RunOutcome run_resume(const std::filesystem::path& checkpoint, const RunOptions& options);

}  // namespace whatif
