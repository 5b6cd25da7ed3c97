#pragma once

#include <vector>

#include <json.hpp>

#include "whatif/errors.hpp"

namespace whatif {

/// Validates `doc` against the subset of JSON Schema the stage schemas use:
/// type, enum, const, properties, required, additionalProperties, patternProperties,
/// propertyNames, min/maxProperties, items, min/maxItems, minLength, pattern, minimum,
/// and local "#/$defs/..." references.
std::vector<SchemaIssue> validate_schema(const nlohmann::json& doc, const nlohmann::json& schema);

}  // namespace whatif
