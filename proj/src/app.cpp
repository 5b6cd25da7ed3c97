#include "whatif/app.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include "whatif/errors.hpp"
#include "whatif/exporter.hpp"
#include "whatif/pipeline.hpp"

namespace whatif {
namespace {

using Json = nlohmann::json;
namespace fs = std::filesystem;

// Appends JSON lines to run.log, optionally echoing them to stderr.
class RunLog : public std::stringbuf {
 public:
  RunLog(const fs::path& path, bool append, bool echo)
      : file_(path, append ? std::ios::app : std::ios::trunc), echo_(echo) {
    if (!file_) throw Error("cannot open " + path.string());
  }

  void event(Json line) { write(line.dump() + "\n"); }

  std::ostream& stream() { return stream_; }

 protected:
  int sync() override {
    write(str());
    str("");
    return 0;
  }

 private:
  void write(const std::string& text) {
    file_ << text << std::flush;
    if (echo_) std::cerr << text << std::flush;
  }

  std::ofstream file_;
  bool echo_;
  std::ostream stream_{this};
};

void write_text(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

PipelineConfig pipeline_config(const RunOptions& options, RunLog& log) {
  PipelineConfig config;
  config.model_id = options.model_id;
  config.budget = options.budget;
  config.parallel = options.parallel;
  config.checkpoint_path = options.out_dir / artifact::kCheckpoint;
  config.stop_after_branches = options.stop_after_branches;
  config.progress = &log.stream();
  return config;
}

// Narrates and exports a fully expanded tree.
RunOutcome finish(Gateway& gateway, Pipeline& pipeline, ExpansionResult expansion, const RunOptions& options,
                  RunLog& log) {
  RunOutcome outcome;
  outcome.tree = std::move(expansion.tree);
  outcome.finished = expansion.finished;
  outcome.warnings = pipeline.warnings();
  if (!expansion.finished) {
    log.event({{"event", "stopped"}, {"completed", expansion.completed}});
    outcome.gateway_calls = gateway.calls();
    return outcome;
  }
  const fs::path& dir = options.out_dir;
  save(outcome.tree, dir / artifact::kTree);

  NarratorConfig narrator_config;
  narrator_config.model_id = options.model_id;
  narrator_config.parallel = options.parallel;
  narrator_config.partial_path = dir / artifact::kPartialNarrations;
  NarrationMap done;
  if (fs::exists(narrator_config.partial_path)) done = load_narrations(narrator_config.partial_path);
  Narrator narrator(gateway, narrator_config);
  outcome.narrations = narrator.narrate_tree(outcome.tree, done);
  log.event({{"event", "narrated"}, {"nodes", outcome.narrations.size()}});
  for (auto& w : narrator.warnings()) outcome.warnings.push_back(std::move(w));

  save_narrations(outcome.narrations, dir / artifact::kNarrations);
  write_text(dir / artifact::kInk, export_ink(outcome.tree, outcome.narrations));
  write_text(dir / artifact::kGame, export_game_json(outcome.tree, outcome.narrations).dump(2) + "\n");
  fs::remove(dir / artifact::kCheckpoint);
  fs::remove(narrator_config.partial_path);

  outcome.gateway_calls = gateway.calls();
  for (const auto& w : outcome.warnings) log.event({{"event", "warning"}, {"message", w}});
  log.event({{"event", "done"}, {"gateway_calls", outcome.gateway_calls}, {"attempts", gateway.attempts()}});
  return outcome;
}

template <typename F>
RunOutcome logged(RunLog& log, F body) {
  try {
    return body();
  } catch (const std::exception& e) {
    log.event({{"event", "error"}, {"exit_code", exit_code_for(std::current_exception())}, {"message", e.what()}});
    throw;
  }
}

}  // namespace

int exit_code_for(const std::exception_ptr& error) {
  try {
    std::rethrow_exception(error);
  } catch (const CassetteMiss&) {
    return kExitCassetteMiss;
  } catch (const BudgetExceeded&) {
    return kExitBudget;
  } catch (const TransportError&) {
    return kExitTransport;
  } catch (const SchemaViolation&) {
    return kExitSchema;
  } catch (const CorruptCheckpoint&) {
    return kExitCheckpoint;
  } catch (const ConfigDigestMismatch&) {
    return kExitCheckpoint;
  } catch (const ConfigError&) {
    return kExitUsage;
  } catch (const EmptyPlot&) {
    return kExitUsage;
  } catch (...) {
    return kExitFailure;
  }
}

RunOutcome run_generate(const GenerateInput& input, const RunOptions& options) {
  check_config(options.backend);
  return run_generate(input, options, make_backend(options.backend));
}

RunOutcome run_generate(const GenerateInput& input, const RunOptions& options, std::unique_ptr<Backend> backend) {
  fs::create_directories(options.out_dir);
  RunLog log(options.out_dir / artifact::kLog, false, options.echo_progress);
  log.event({{"event", "start"},
             {"command", "generate"},
             {"mode", std::string(to_string(options.backend.mode))},
             {"char_name", input.char_name},
             {"title", input.title},
             {"num_nodes", input.num_nodes ? Json(*input.num_nodes) : Json(nullptr)}});
  return logged(log, [&] {
    Gateway gateway(std::move(backend), options.backend.retry_limit, options.backend.max_concurrent);
    Pipeline pipeline(gateway, pipeline_config(options, log));
    BranchingPlotTree tree = pipeline.initialize_tree(input.plot, input.char_name, input.title, input.num_nodes);
    log.event({{"event", "initialized"}, {"n", tree.n}});
    return finish(gateway, pipeline, pipeline.expand_tree(std::move(tree)), options, log);
  });
}

RunOutcome run_resume(const fs::path& checkpoint, const RunOptions& options) {
  check_config(options.backend);
  fs::create_directories(options.out_dir);
  RunLog log(options.out_dir / artifact::kLog, true, options.echo_progress);
  log.event({{"event", "start"}, {"command", "resume"}, {"checkpoint", checkpoint.string()}});
  return logged(log, [&] {
    ExpansionCheckpoint state = load_checkpoint(checkpoint);
    Gateway gateway(options.backend);
    Pipeline pipeline(gateway, pipeline_config(options, log));
    return finish(gateway, pipeline, pipeline.resume(std::move(state)), options, log);
  });
}

}  // namespace whatif
