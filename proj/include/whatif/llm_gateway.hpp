#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include <json.hpp>

#include "whatif/errors.hpp"
#include "whatif/prompt_kit.hpp"

namespace whatif {

enum class Role { System, User };

std::string_view to_string(Role role);

struct Message {
  Role role = Role::User;
  std::string content;

  friend bool operator==(const Message&, const Message&) = default;
};

struct CompletionRequest {
  std::vector<Message> messages;
  SchemaSpec schema;
  double temperature = 0.7;
  std::string model_id = "gpt-4";
  int max_output_tokens = 4096;
  // Structured stage inputs, visible to synthetic backends only. Never sent on the wire
  // and not part of the fingerprint.
  nlohmann::json context = nlohmann::json::object();
};

/// Stable SHA-256 over the canonical JSON of messages, schema, model id and temperature.
std::string fingerprint(const CompletionRequest& request);

/// Chat-completions request body (messages, sampling, json_schema response format).
nlohmann::json wire_body(const CompletionRequest& request);

/// Extracts the JSON document from raw model output, tolerating a ```json fence.
/// Returns nullopt when the text is not JSON.
std::optional<nlohmann::json> parse_model_output(std::string_view raw);

class Backend {
 public:
  virtual ~Backend() = default;
  /// Raw assistant message content.
  virtual std::string send(const CompletionRequest& request) = 0;
};

struct CassetteEntry {
  std::string response;
  std::string recorded_at;
  std::string stage;
};

/// Fingerprint-keyed store of recorded responses. Thread-safe.
class Cassette {
 public:
  Cassette() = default;
  Cassette(const Cassette& other);
  Cassette& operator=(const Cassette&) = delete;

  static Cassette load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::optional<CassetteEntry> lookup(const std::string& fingerprint) const;
  void put(const std::string& fingerprint, CassetteEntry entry);
  std::size_t size() const;

  nlohmann::json to_json() const;

 private:
  mutable std::mutex mutex_;
  std::map<std::string, CassetteEntry> entries_;
};

/// Speaks the chat-completions HTTP format.
class HttpBackend : public Backend {
 public:
  HttpBackend(std::string endpoint, std::string api_key, std::chrono::milliseconds timeout);
  std::string send(const CompletionRequest& request) override;

 private:
  std::string endpoint_;
  std::string api_key_;
  std::chrono::milliseconds timeout_;
};

class ReplayBackend : public Backend {
 public:
  explicit ReplayBackend(std::shared_ptr<const Cassette> cassette);
  std::string send(const CompletionRequest& request) override;

 private:
  std::shared_ptr<const Cassette> cassette_;
};

/// Forwards to `inner` and persists every response to the cassette file before returning.
class RecordingBackend : public Backend {
 public:
  RecordingBackend(std::unique_ptr<Backend> inner, std::filesystem::path cassette_path);
  std::string send(const CompletionRequest& request) override;
  const Cassette& cassette() const { return cassette_; }

 private:
  std::unique_ptr<Backend> inner_;
  std::filesystem::path path_;
  Cassette cassette_;
  std::mutex write_mutex_;
};

/// Returns canned responses in order; the last one repeats once the script runs out.
class ScriptedBackend : public Backend {
 public:
  explicit ScriptedBackend(std::vector<std::string> responses);
  std::string send(const CompletionRequest& request) override;
  int calls() const { return calls_.load(); }
  std::vector<CompletionRequest> received() const;

 private:
  std::vector<std::string> responses_;
  std::atomic<int> calls_{0};
  mutable std::mutex mutex_;
  std::vector<CompletionRequest> received_;
};

enum class BackendMode { Live, Record, Replay, Mock };

std::string_view to_string(BackendMode mode);
/// Accepts live|record|replay|mock (case-insensitive). Throws ConfigError.
BackendMode backend_mode_from_string(std::string_view s);

struct BackendConfig {
  BackendMode mode = BackendMode::Mock;
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string api_key_env = "OPENAI_API_KEY";
  std::filesystem::path cassette_path;
  int retry_limit = 3;
  std::chrono::milliseconds request_timeout{120'000};
  int max_concurrent = 2;
  std::uint64_t mock_seed = 0;
};

/// Throws ConfigError when the mode's requirements are unmet.
void check_config(const BackendConfig& config);

std::unique_ptr<Backend> make_backend(const BackendConfig& config);

struct StructuredResult {
  nlohmann::json document;
  int attempts = 0;
};

/// Structured completion with schema validation and corrective retries.
class Gateway {
 public:
  static constexpr int kDefaultRetryLimit = 3;
  static constexpr int kDefaultConcurrency = 2;

  explicit Gateway(std::unique_ptr<Backend> backend, int retry_limit = kDefaultRetryLimit,
                   int max_concurrent = kDefaultConcurrency);
  explicit Gateway(const BackendConfig& config);

  /// Every returned document validates against request.schema. After `retry_limit`
  /// failed attempts throws SchemaViolation carrying the last attempt's issues.
  StructuredResult complete_structured(const CompletionRequest& request);

  int retry_limit() const { return retry_limit_; }
  std::size_t calls() const { return calls_.load(); }
  std::size_t attempts() const { return attempts_.load(); }
  Backend& backend() { return *backend_; }

 private:
  std::unique_ptr<Backend> backend_;
  int retry_limit_;
  std::counting_semaphore<64> slots_;
  std::atomic<std::size_t> calls_{0};
  std::atomic<std::size_t> attempts_{0};
};

/// User message appended after a failed attempt.
std::string corrective_message(std::string_view raw, const std::vector<SchemaIssue>& issues);

}  // namespace whatif
