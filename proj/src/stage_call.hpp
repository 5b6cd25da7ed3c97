#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <future>
#include <vector>

#include <json.hpp>

#include "whatif/errors.hpp"
#include "whatif/llm_gateway.hpp"

namespace whatif::detail {

using CallFn = std::function<StructuredResult(const CompletionRequest&)>;
using CheckFn = std::function<std::vector<SchemaIssue>(const nlohmann::json&)>;

// Schema-valid document that also passes `check`. A failed check earns one corrective
// retry; a second failure throws ErrorT with the remaining issues.
template <typename ErrorT>
nlohmann::json checked_completion(const CallFn& call, CompletionRequest request, const CheckFn& check) {
  int attempts = 0;
  std::vector<SchemaIssue> issues;
  for (int round = 0; round < 2; ++round) {
    StructuredResult result = call(request);
    attempts += result.attempts;
    issues = check(result.document);
    if (issues.empty()) return std::move(result.document);
    request.messages.push_back(Message{Role::User, corrective_message(result.document.dump(), issues)});
  }
  throw ErrorT("stage check failed after " + std::to_string(attempts) + " attempt(s): " + describe(issues),
               std::move(issues), attempts);
}

// Raises a gateway SchemaViolation as ErrorT when any issue matches `matches`;
// otherwise returns so the caller can rethrow the original.
template <typename ErrorT, typename Pred>
void raise_as_if(const SchemaViolation& e, Pred matches) {
  for (const auto& issue : e.issues()) {
    if (matches(issue)) throw ErrorT(e.what(), e.issues(), e.attempts());
  }
}

// Runs f(0..count-1), at most `parallel` at a time. Rethrows the first failure once every
// task of its batch has finished.
template <typename F>
void for_each_batched(std::size_t count, int parallel, F f) {
  if (parallel <= 1) {
    for (std::size_t i = 0; i < count; ++i) f(i);
    return;
  }
  for (std::size_t start = 0; start < count; start += static_cast<std::size_t>(parallel)) {
    const std::size_t end = std::min(count, start + static_cast<std::size_t>(parallel));
    std::vector<std::future<void>> tasks;
    for (std::size_t i = start; i < end; ++i) tasks.push_back(std::async(std::launch::async, f, i));
    std::exception_ptr first;
    for (auto& t : tasks) {
      try {
        t.get();
      } catch (...) {
        if (!first) first = std::current_exception();
      }
    }
    if (first) std::rethrow_exception(first);
  }
}

}  // namespace whatif::detail
