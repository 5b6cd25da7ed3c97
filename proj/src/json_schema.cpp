#include "whatif/json_schema.hpp"

#include <regex>
#include <string>

namespace whatif {
namespace {

using Json = nlohmann::json;

std::string type_of(const Json& v) {
  switch (v.type()) {
    case Json::value_t::null: return "null";
    case Json::value_t::boolean: return "boolean";
    case Json::value_t::number_integer:
    case Json::value_t::number_unsigned: return "integer";
    case Json::value_t::number_float: return "number";
    case Json::value_t::string: return "string";
    case Json::value_t::array: return "array";
    case Json::value_t::object: return "object";
    default: return "unknown";
  }
}

bool type_matches(const Json& v, const std::string& type) {
  const std::string actual = type_of(v);
  if (type == actual) return true;
  if (type == "number" && actual == "integer") return true;
  if (type == "integer" && actual == "number") {
    const double d = v.get<double>();
    return d == static_cast<double>(static_cast<long long>(d));
  }
  return false;
}

std::string escape_pointer(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~') out += "~0";
    else if (c == '/') out += "~1";
    else out += c;
  }
  return out;
}

bool regex_search(const std::string& pattern, const std::string& s) {
  return std::regex_search(s, std::regex(pattern, std::regex::ECMAScript));
}

class Validator {
 public:
  explicit Validator(const Json& root) : root_(root) {}

  void check(const Json& v, const Json& schema, const std::string& path) {
    if (schema.is_boolean()) {
      if (!schema.get<bool>()) add(path, "false", "value not allowed");
      return;
    }
    if (!schema.is_object()) return;

    if (auto it = schema.find("$ref"); it != schema.end()) {
      check(v, resolve(it->get<std::string>()), path);
      return;
    }

    if (auto it = schema.find("type"); it != schema.end()) {
      bool ok = false;
      if (it->is_string()) {
        ok = type_matches(v, it->get<std::string>());
      } else {
        for (const auto& t : *it) ok = ok || type_matches(v, t.get<std::string>());
      }
      if (!ok) {
        add(path, "type", "expected " + it->dump() + ", got " + type_of(v));
        return;
      }
    }
    if (auto it = schema.find("const"); it != schema.end() && v != *it) {
      add(path, "const", "expected " + it->dump() + ", got " + v.dump());
    }
    if (auto it = schema.find("enum"); it != schema.end()) {
      bool found = false;
      for (const auto& e : *it) found = found || e == v;
      if (!found) add(path, "enum", "value " + v.dump() + " not in " + it->dump());
    }

    if (v.is_string()) check_string(v.get<std::string>(), schema, path);
    if (v.is_number()) {
      if (auto it = schema.find("minimum"); it != schema.end() && v.get<double>() < it->get<double>()) {
        add(path, "minimum", v.dump() + " < " + it->dump());
      }
    }
    if (v.is_array()) check_array(v, schema, path);
    if (v.is_object()) check_object(v, schema, path);
  }

  std::vector<SchemaIssue> take() { return std::move(issues_); }

 private:
  void add(const std::string& path, std::string keyword, std::string message) {
    issues_.push_back(SchemaIssue{path, std::move(keyword), std::move(message)});
  }

  const Json& resolve(const std::string& ref) {
    if (!ref.starts_with("#/")) throw Error("unsupported $ref " + ref);
    return root_.at(Json::json_pointer(ref.substr(1)));
  }

  void check_string(const std::string& s, const Json& schema, const std::string& path) {
    if (auto it = schema.find("minLength"); it != schema.end() && s.size() < it->get<std::size_t>()) {
      add(path, "minLength", "string shorter than " + it->dump());
    }
    if (auto it = schema.find("pattern"); it != schema.end() && !regex_search(it->get<std::string>(), s)) {
      add(path, "pattern", "\"" + s + "\" does not match " + it->dump());
    }
  }

  void check_array(const Json& v, const Json& schema, const std::string& path) {
    if (auto it = schema.find("minItems"); it != schema.end() && v.size() < it->get<std::size_t>()) {
      add(path, "minItems", "expected at least " + it->dump() + " items, got " + std::to_string(v.size()));
    }
    if (auto it = schema.find("maxItems"); it != schema.end() && v.size() > it->get<std::size_t>()) {
      add(path, "maxItems", "expected at most " + it->dump() + " items, got " + std::to_string(v.size()));
    }
    if (auto it = schema.find("items"); it != schema.end()) {
      for (std::size_t i = 0; i < v.size(); ++i) check(v[i], *it, path + "/" + std::to_string(i));
    }
  }

  void check_object(const Json& v, const Json& schema, const std::string& path) {
    if (auto it = schema.find("required"); it != schema.end()) {
      for (const auto& key : *it) {
        if (!v.contains(key.get<std::string>())) {
          add(path, "required", "missing required key \"" + key.get<std::string>() + "\"");
        }
      }
    }
    if (auto it = schema.find("minProperties"); it != schema.end() && v.size() < it->get<std::size_t>()) {
      add(path, "minProperties", "expected at least " + it->dump() + " keys, got " + std::to_string(v.size()));
    }
    if (auto it = schema.find("maxProperties"); it != schema.end() && v.size() > it->get<std::size_t>()) {
      add(path, "maxProperties", "expected at most " + it->dump() + " keys, got " + std::to_string(v.size()));
    }
    const Json* properties = schema.contains("properties") ? &schema.at("properties") : nullptr;
    const Json* patterns = schema.contains("patternProperties") ? &schema.at("patternProperties") : nullptr;
    const Json* additional = schema.contains("additionalProperties") ? &schema.at("additionalProperties") : nullptr;
    const Json* names = schema.contains("propertyNames") ? &schema.at("propertyNames") : nullptr;

    for (const auto& [key, value] : v.items()) {
      const std::string child = path + "/" + escape_pointer(key);
      if (names) check(Json(key), *names, child);
      bool matched = false;
      if (properties && properties->contains(key)) {
        matched = true;
        check(value, properties->at(key), child);
      }
      if (patterns) {
        for (const auto& [pattern, sub] : patterns->items()) {
          if (regex_search(pattern, key)) {
            matched = true;
            check(value, sub, child);
          }
        }
      }
      if (!matched && additional) {
        if (additional->is_boolean() && !additional->get<bool>()) {
          add(path, "additionalProperties", "unexpected key \"" + key + "\"");
        } else {
          check(value, *additional, child);
        }
      }
    }
  }

  const Json& root_;
  std::vector<SchemaIssue> issues_;
};

}  // namespace

std::vector<SchemaIssue> validate_schema(const nlohmann::json& doc, const nlohmann::json& schema) {
  Validator validator(schema);
  validator.check(doc, schema, "");
  return validator.take();
}

}  // namespace whatif
