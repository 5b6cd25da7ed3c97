#include "whatif/llm_gateway.hpp"

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>

#include <httplib.h>

#include "whatif/errors.hpp"
#include "whatif/hash.hpp"
#include "whatif/json_schema.hpp"
#include "whatif/synthetic_backend.hpp"
#include "whatif/text.hpp"

namespace whatif {
namespace {

using Json = nlohmann::json;

constexpr int kCassetteVersion = 1;
constexpr std::size_t kEchoLimit = 4000;

std::string utc_now() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Url split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint is not an absolute URL: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

void write_atomically(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

std::string_view to_string(Role role) { return role == Role::System ? "system" : "user"; }

std::string fingerprint(const CompletionRequest& request) {
  Json messages = Json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  }
  const Json canonical = {{"messages", std::move(messages)},
                          {"schema", request.schema.document},
                          {"model_id", request.model_id},
                          {"temperature", request.temperature}};
  return sha256_hex(canonical.dump());
}

Json wire_body(const CompletionRequest& request) {
  Json messages = Json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  }
  return {{"model", request.model_id},
          {"messages", std::move(messages)},
          {"temperature", request.temperature},
          {"max_tokens", request.max_output_tokens},
          {"response_format",
           {{"type", "json_schema"},
            {"json_schema",
             {{"name", to_string(request.schema.stage)},
              {"schema", request.schema.document},
              {"strict", false}}}}}};
}

std::optional<Json> parse_model_output(std::string_view raw) {
  std::string body = text::trim(raw);
  if (body.starts_with("```")) {
    auto first_newline = body.find('\n');
    auto closing = body.rfind("```");
    if (first_newline != std::string::npos && closing > first_newline) {
      body = body.substr(first_newline + 1, closing - first_newline - 1);
    }
  }
  Json doc = Json::parse(body, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded()) return std::nullopt;
  return doc;
}

// Cassette ------------------------------------------------------------------

Cassette::Cassette(const Cassette& other) {
  std::lock_guard lock(other.mutex_);
  entries_ = other.entries_;
}

Cassette Cassette::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read cassette " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  Json doc = Json::parse(buffer.str(), nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || !doc.contains("entries")) {
    throw ParseError("cassette " + path.string() + " is not a cassette document");
  }
  if (doc.value("version", 0) != kCassetteVersion) {
    throw SchemaVersionMismatch("cassette version " + doc.value("version", Json()).dump());
  }
  Cassette cassette;
  for (const auto& [fp, entry] : doc.at("entries").items()) {
    cassette.entries_.emplace(fp, CassetteEntry{entry.at("response").get<std::string>(),
                                                entry.value("recorded_at", ""),
                                                entry.value("stage", "")});
  }
  return cassette;
}

Json Cassette::to_json() const {
  std::lock_guard lock(mutex_);
  Json entries = Json::object();
  for (const auto& [fp, entry] : entries_) {
    entries[fp] = {{"response", entry.response},
                   {"recorded_at", entry.recorded_at},
                   {"stage", entry.stage}};
  }
  return {{"version", kCassetteVersion}, {"entries", std::move(entries)}};
}

void Cassette::save(const std::filesystem::path& path) const {
  write_atomically(path, to_json().dump(1) + "\n");
}

std::optional<CassetteEntry> Cassette::lookup(const std::string& fp) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(fp);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void Cassette::put(const std::string& fp, CassetteEntry entry) {
  std::lock_guard lock(mutex_);
  entries_[fp] = std::move(entry);
}

std::size_t Cassette::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

// Backends --------------------------------------------------------------------

HttpBackend::HttpBackend(std::string endpoint, std::string api_key, std::chrono::milliseconds timeout)
    : endpoint_(std::move(endpoint)), api_key_(std::move(api_key)), timeout_(timeout) {}

std::string HttpBackend::send(const CompletionRequest& request) {
  const Url url = split_url(endpoint_);
  httplib::Client client(url.origin);
  const auto seconds = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
  const auto micros = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - seconds);
  client.set_connection_timeout(seconds.count(), micros.count());
  client.set_read_timeout(seconds.count(), micros.count());
  client.set_write_timeout(seconds.count(), micros.count());

  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  auto result = client.Post(url.path, headers, wire_body(request).dump(), "application/json");
  if (!result) {
    const auto err = result.error();
    if (err == httplib::Error::Read || err == httplib::Error::Write ||
        err == httplib::Error::ConnectionTimeout) {
      throw Timeout("request to " + endpoint_ + " timed out (" + httplib::to_string(err) + ")");
    }
    throw TransportError("request to " + endpoint_ + " failed: " + httplib::to_string(err));
  }
  if (result->status < 200 || result->status >= 300) {
    throw TransportError("HTTP " + std::to_string(result->status) + " from " + endpoint_ + ": " +
                         result->body.substr(0, 500));
  }
  Json body = Json::parse(result->body, nullptr, false);
  if (body.is_discarded()) throw TransportError("response body is not JSON");
  try {
    const auto& content = body.at("choices").at(0).at("message").at("content");
    return content.is_string() ? content.get<std::string>() : content.dump();
  } catch (const Json::exception& e) {
    throw TransportError(std::string("unexpected chat-completions response shape: ") + e.what());
  }
}

ReplayBackend::ReplayBackend(std::shared_ptr<const Cassette> cassette) : cassette_(std::move(cassette)) {}

std::string ReplayBackend::send(const CompletionRequest& request) {
  const std::string fp = fingerprint(request);
  auto entry = cassette_->lookup(fp);
  if (!entry) {
    throw CassetteMiss("no recorded response for " + std::string(to_string(request.schema.stage)) +
                       " request " + fp);
  }
  return entry->response;
}

RecordingBackend::RecordingBackend(std::unique_ptr<Backend> inner, std::filesystem::path cassette_path)
    : inner_(std::move(inner)),
      path_(std::move(cassette_path)),
      cassette_(std::filesystem::exists(path_) ? Cassette::load(path_) : Cassette()) {}

std::string RecordingBackend::send(const CompletionRequest& request) {
  std::string response = inner_->send(request);
  std::lock_guard lock(write_mutex_);
  cassette_.put(fingerprint(request),
                CassetteEntry{response, utc_now(), std::string(to_string(request.schema.stage))});
  cassette_.save(path_);
  return response;
}

ScriptedBackend::ScriptedBackend(std::vector<std::string> responses) : responses_(std::move(responses)) {
  if (responses_.empty()) throw ConfigError("scripted backend needs at least one response");
}

std::string ScriptedBackend::send(const CompletionRequest& request) {
  std::lock_guard lock(mutex_);
  received_.push_back(request);
  const int i = calls_++;
  return responses_[std::min<std::size_t>(i, responses_.size() - 1)];
}

std::vector<CompletionRequest> ScriptedBackend::received() const {
  std::lock_guard lock(mutex_);
  return received_;
}

std::string_view to_string(BackendMode mode) {
  switch (mode) {
    case BackendMode::Live: return "live";
    case BackendMode::Record: return "record";
    case BackendMode::Replay: return "replay";
    case BackendMode::Mock: return "mock";
  }
  return "?";
}

BackendMode backend_mode_from_string(std::string_view s) {
  const std::string lower = text::lowercase(s);
  for (auto mode : {BackendMode::Live, BackendMode::Record, BackendMode::Replay, BackendMode::Mock}) {
    if (lower == to_string(mode)) return mode;
  }
  throw ConfigError("unknown backend mode '" + std::string(s) + "'");
}

void check_config(const BackendConfig& config) {
  if (config.retry_limit < 1) throw ConfigError("retry_limit must be >= 1");
  if (config.max_concurrent < 1) throw ConfigError("max_concurrent must be >= 1");
  switch (config.mode) {
    case BackendMode::Record:
      if (config.cassette_path.empty()) throw ConfigError("record mode requires a cassette path");
      [[fallthrough]];
    case BackendMode::Live:
      if (config.endpoint.empty()) throw ConfigError("live/record mode requires an endpoint");
      if (config.api_key_env.empty() || !std::getenv(config.api_key_env.c_str())) {
        throw ConfigError("live/record mode requires the API key in $" + config.api_key_env);
      }
      break;
    case BackendMode::Replay:
      if (config.cassette_path.empty()) throw ConfigError("replay mode requires a cassette path");
      break;
    case BackendMode::Mock:
      break;
  }
}

std::unique_ptr<Backend> make_backend(const BackendConfig& config) {
  check_config(config);
  auto live = [&] {
    return std::make_unique<HttpBackend>(config.endpoint, std::getenv(config.api_key_env.c_str()),
                                         config.request_timeout);
  };
  switch (config.mode) {
    case BackendMode::Live: return live();
    case BackendMode::Record: return std::make_unique<RecordingBackend>(live(), config.cassette_path);
    case BackendMode::Replay:
      return std::make_unique<ReplayBackend>(
          std::make_shared<const Cassette>(Cassette::load(config.cassette_path)));
    case BackendMode::Mock: return std::make_unique<SyntheticBackend>(config.mock_seed);
  }
  throw ConfigError("unknown backend mode");
}

// Gateway ---------------------------------------------------------------------

std::string corrective_message(std::string_view raw, const std::vector<SchemaIssue>& issues) {
  std::string echoed(raw.substr(0, kEchoLimit));
  return "Your previous response was:\n" + echoed +
         "\n\nIt does not satisfy the required JSON schema: " + describe(issues) +
         ". Respond again with only a JSON document that satisfies the schema.";
}

Gateway::Gateway(std::unique_ptr<Backend> backend, int retry_limit, int max_concurrent)
    : backend_(std::move(backend)),
      retry_limit_(retry_limit),
      slots_(std::clamp(max_concurrent, 1, 64)) {
  if (!backend_) throw ConfigError("gateway needs a backend");
  if (retry_limit_ < 1) throw ConfigError("retry_limit must be >= 1");
}

Gateway::Gateway(const BackendConfig& config)
    : Gateway(make_backend(config), config.retry_limit, config.max_concurrent) {}

StructuredResult Gateway::complete_structured(const CompletionRequest& request) {
  if (std::none_of(request.messages.begin(), request.messages.end(),
                   [](const Message& m) { return m.role == Role::User; })) {
    throw ConfigError("completion request needs at least one user message");
  }
  ++calls_;
  CompletionRequest attempt = request;
  std::vector<SchemaIssue> issues;
  for (int i = 1; i <= retry_limit_; ++i) {
    ++attempts_;
    std::string raw;
    {
      slots_.acquire();
      struct Release {
        std::counting_semaphore<64>& s;
        ~Release() { s.release(); }
      } release{slots_};
      raw = backend_->send(attempt);
    }
    auto doc = parse_model_output(raw);
    if (!doc) {
      issues = {SchemaIssue{"", "json", "response is not a JSON document"}};
    } else {
      issues = validate_schema(*doc, request.schema.document);
      if (issues.empty()) return {std::move(*doc), i};
    }
    attempt.messages.push_back(Message{Role::User, corrective_message(raw, issues)});
  }
  throw SchemaViolation(std::move(issues), retry_limit_);
}

}  // namespace whatif
