#pragma once

#include <cstdint>
#include <string>

#include "whatif/llm_gateway.hpp"

namespace whatif {

/// Offline stand-in for a chat model. Reads the structured stage inputs carried in
/// CompletionRequest::context and answers with a schema-valid document whose text is
/// derived from the request fingerprint and the seed, so distinct requests get
/// distinct, reproducible content.
class SyntheticBackend : public Backend {
 public:
  explicit SyntheticBackend(std::uint64_t seed = 0) : seed_(seed) {}
  std::string send(const CompletionRequest& request) override;

 private:
  std::uint64_t seed_;
};

}  // namespace whatif
