#include "whatif/synthetic_backend.hpp"

#include <algorithm>
#include <cctype>

#include "whatif/errors.hpp"
#include "whatif/hash.hpp"
#include "whatif/text.hpp"

namespace whatif {
namespace {

using Json = nlohmann::json;

std::string without_period(std::string s) {
  s = text::normalize_sentence(s);
  return s;
}

std::string strip_decides(const std::string& decision, const std::string& char_name) {
  const std::string prefix = char_name + " decides to ";
  std::string s = text::normalize(decision);
  if (s.starts_with(prefix)) s = s.substr(prefix.size());
  return without_period(s);
}

std::string capitalized(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

std::string first_words(const std::string& s, std::size_t count) {
  std::string out;
  std::size_t words = 0;
  for (char c : s) {
    if (c == ' ' && ++words == count) break;
    out += c;
  }
  return out;
}

std::string second_person(std::string s, const std::string& char_name) {
  for (std::size_t pos; (pos = s.find(char_name)) != std::string::npos;) s.replace(pos, char_name.size(), "you");
  return s;
}

Json plot_to_tree(const Json& ctx, const std::string& tag) {
  const std::string who = ctx.value("char_name", "The hero");
  std::vector<std::string> lines = text::paragraphs(ctx.value("plot", ""));
  int count = ctx.contains("num_nodes") && ctx["num_nodes"].is_number_integer()
                  ? ctx["num_nodes"].get<int>()
                  : std::clamp(static_cast<int>(lines.size()) / 3, 1, 6);
  const bool reuse = static_cast<int>(lines.size()) >= 3 * count;

  Json doc = Json::object();
  std::string previous_state = who + " weighs an unsettled situation (" + tag + ").";
  for (int i = 1; i <= count; ++i) {
    const std::string step = tag + "-" + std::to_string(i);
    std::vector<std::string> events;
    if (reuse) {
      events.assign(lines.begin() + 3 * (i - 1), lines.begin() + 3 * i);
    } else {
      events = {who + " decides to pursue lead " + step + ".",
                "The pursuit of lead " + step + " changes the balance of power.",
                who + " ends up in circumstance " + step + "."};
    }
    doc["node_" + std::to_string(i)] = {
        {"state", previous_state},
        {"goal", "To resolve circumstance " + step + "."},
        {"decision", events[0]},
        {"edgeEvents", events},
        {"alternate_decision", who + " decides to try a different approach at " + step + "."}};
    previous_state = events[2];
  }
  return doc;
}

Json key_events(const Json& ctx) {
  const auto events = ctx.value("events", std::vector<std::string>{});
  const int n = static_cast<int>(events.size());
  const int ids[] = {1, std::max(2, (n + 1) / 2), n};
  const char* names[] = {"inciting_incident", "crisis", "climax"};
  Json doc = Json::object();
  for (int k = 0; k < 3; ++k) {
    const int id = std::clamp(ids[k], 1, std::max(n, 1));
    doc[names[k]] = {{"eventId", id}, {"event", n ? events[id - 1] : std::string("(none)")}};
  }
  return doc;
}

Json meta_prompt(const Json& ctx, const std::string& tag) {
  const std::string who = ctx.value("char_name", "The hero");
  const std::string ad = ctx.value("alternate_decision", "");
  const std::string kd = ctx.value("original_decision", "");
  const int event = ctx.value("branching_event", 1);
  const int length = ctx.value("new_story_length", 3);
  std::string prompt =
      "Using the original storyline as a reference, write an alternate storyline that branches out at event " +
      std::to_string(event) + " with " + without_period(ad) + ", instead of " + without_period(kd) +
      ". As you craft this new narrative, consider and incorporate answers to the following "
      "thought-provoking questions:\n\n"
      "1. How does this choice change what " + who + " risks next (" + tag + ")?\n"
      "2. Which allies and rivals react first, and how?\n"
      "3. How are the remaining major plot points reshaped?\n"
      "4. What new obstacle forces " + who + " into another key decision?\n"
      "5. How does the ending reflect this change of course?\n\n"
      "Describe what an ideal alternate storyline should look like. Then, output the alternate storyline "
      "as a list of " + std::to_string(length) + " events, starting with " + ad;
  return {{"branching_event_number", event},
          {"original_decision", kd},
          {"alternate_decision", ad},
          {"new_story_length", length},
          {"major_plot_points", ctx.value("major_plot_points", Json::array())},
          {"prompt", prompt}};
}

Json write_storyline(const Json& ctx, const std::string& tag) {
  const std::string who = ctx.value("char_name", "The hero");
  const int length = ctx.value("new_story_length", 3);
  Json events = Json::object();
  for (int j = 1; j <= length; ++j) {
    const std::string step = tag + "-" + std::to_string(j);
    std::string ev;
    if (j == 1) {
      ev = ctx.value("alternate_decision", who + " decides to change course.");
    } else if (j % 3 == 1) {
      ev = who + " decides to follow thread " + step + ".";
    } else if (j % 3 == 2) {
      ev = "Thread " + step + " unsettles everyone around " + who + ".";
    } else {
      ev = who + " faces the fallout of thread " + step + ".";
    }
    events[std::to_string(j)] = ev;
  }
  return {{"events", events}};
}

Json narrate(const Json& ctx) {
  const std::string who = ctx.value("char_name", "The hero");
  std::vector<std::string> paras;
  for (const auto& ev : ctx.value("events", std::vector<std::string>{})) {
    paras.push_back("You witness it unfold: " + second_person(ev, who));
  }
  paras.push_back("Now " + second_person(text::normalize_sentence(ctx.value("state", "")), who) +
                  ". Your aim: " + second_person(ctx.value("goal", ""), who));
  auto button = [&](const char* key) {
    return capitalized(first_words(strip_decides(ctx.value(key, ""), who), 6));
  };
  return {{"paragraphs", text::join(paras, "\n\n")},
          {"button_text_1", button("key_decision")},
          {"button_text_2", button("alternate_decision")}};
}

}  // namespace

std::string SyntheticBackend::send(const CompletionRequest& request) {
  const std::string tag = sha256_hex(std::to_string(seed_) + ":" + fingerprint(request)).substr(0, 6);
  const Json& ctx = request.context;
  switch (request.schema.stage) {
    case Stage::PlotToTree: return plot_to_tree(ctx, tag).dump();
    case Stage::KeyEvents: return key_events(ctx).dump();
    case Stage::MetaPrompt: return meta_prompt(ctx, tag).dump();
    case Stage::WriteStoryline: return write_storyline(ctx, tag).dump();
    case Stage::Narrate: return narrate(ctx).dump();
  }
  throw UnknownStage("synthetic backend: unknown stage");
}

}  // namespace whatif
