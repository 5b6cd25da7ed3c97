#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace whatif {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// plot_tree
class InvalidPath : public Error { using Error::Error; };
class AlternateOccupied : public Error { using Error::Error; };
class DepthMismatch : public Error { using Error::Error; };
class ParseError : public Error { using Error::Error; };
class SchemaVersionMismatch : public Error { using Error::Error; };

// prompt_kit
class MissingBinding : public Error { using Error::Error; };
class UnknownStage : public Error { using Error::Error; };
class OutOfRange : public Error { using Error::Error; };

/// One failed schema keyword, located by JSON pointer into the document.
struct SchemaIssue {
  std::string path;
  std::string keyword;
  std::string message;

  friend bool operator==(const SchemaIssue&, const SchemaIssue&) = default;
};

std::string describe(const std::vector<SchemaIssue>& issues);

// llm_gateway
class SchemaViolation : public Error {
 public:
  SchemaViolation(std::vector<SchemaIssue> issues, int attempts);
  SchemaViolation(const std::string& what, std::vector<SchemaIssue> issues, int attempts);

  const std::vector<SchemaIssue>& issues() const noexcept { return issues_; }
  int attempts() const noexcept { return attempts_; }

 private:
  std::vector<SchemaIssue> issues_;
  int attempts_ = 0;
};
class TransportError : public Error { using Error::Error; };
class Timeout : public TransportError { using TransportError::TransportError; };
class CassetteMiss : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };

// pipeline stage failures. The count errors are schema failures of a specific shape.
class CountMismatch : public SchemaViolation { using SchemaViolation::SchemaViolation; };
class NodeCountMismatch : public SchemaViolation { using SchemaViolation::SchemaViolation; };
class EmptyField : public SchemaViolation { using SchemaViolation::SchemaViolation; };
class InvariantViolation : public SchemaViolation { using SchemaViolation::SchemaViolation; };
class OrderingViolation : public SchemaViolation { using SchemaViolation::SchemaViolation; };

class EmptyPlot : public Error { using Error::Error; };
class TooFewEvents : public Error { using Error::Error; };
class PreconditionError : public Error { using Error::Error; };
class BudgetExceeded : public Error { using Error::Error; };
class CorruptCheckpoint : public Error { using Error::Error; };
class ConfigDigestMismatch : public Error { using Error::Error; };

// exporter
class MissingNarration : public Error { using Error::Error; };
class NameCollision : public Error { using Error::Error; };

}  // namespace whatif
