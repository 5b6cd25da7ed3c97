#include "whatif/errors.hpp"

namespace whatif {

std::string describe(const std::vector<SchemaIssue>& issues) {
  std::string out;
  for (const auto& issue : issues) {
    if (!out.empty()) out += "; ";
    out += (issue.path.empty() ? std::string("/") : issue.path) + ": " + issue.message;
  }
  return out;
}

SchemaViolation::SchemaViolation(std::vector<SchemaIssue> issues, int attempts)
    : SchemaViolation("schema violation after " + std::to_string(attempts) +
                          " attempt(s): " + describe(issues),
                      std::move(issues), attempts) {}

SchemaViolation::SchemaViolation(const std::string& what, std::vector<SchemaIssue> issues,
                                 int attempts)
    : Error(what), issues_(std::move(issues)), attempts_(attempts) {}

}  // namespace whatif
