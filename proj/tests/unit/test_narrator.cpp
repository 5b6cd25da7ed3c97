#include <doctest.h>

#include "golden_backend.hpp"
#include "test_util.hpp"
#include "whatif/errors.hpp"
#include "whatif/narrator.hpp"
#include "whatif/pipeline.hpp"
#include "whatif/text.hpp"

using namespace whatif;
using namespace whatif::testing;
using nlohmann::json;

namespace {

std::string narration_doc(const std::string& paragraphs, const std::string& b1, const std::string& b2) {
  return json{{"paragraphs", paragraphs}, {"button_text_1", b1}, {"button_text_2", b2}}.dump();
}

const std::string kThree = "You wake.\n\nYou walk.\n\nYou wonder.";

}  // namespace

TEST_CASE("narration input") {
  const auto tree = linear_tree(3);
  const auto root = narration_input(tree, NodeId{"node_1"});
  CHECK(root.at("events") == json::array({"Ada lives quietly."}));
  CHECK(root.at("decisions").size() == 2);

  const auto second = narration_input(tree, NodeId{"node_2"});
  CHECK(second.at("events").size() == 3);
  CHECK(second.at("state") == "Ada stands at crossroad s1.");
  CHECK(second.at("decisions")[1] == "Ada decides to turn back from s2.");
  CHECK_THROWS_AS(narration_input(tree, NodeId{"node_9"}), InvalidPath);
}

TEST_CASE("narrate_node") {
  const auto tree = linear_tree(2);
  SUBCASE("blank button is corrected once") {
    auto backend = std::make_unique<ScriptedBackend>(
        std::vector<std::string>{narration_doc(kThree, "", "Go back"), narration_doc(kThree, "Go on", "Go back")});
    auto* probe = backend.get();
    Gateway gateway(std::move(backend));
    Narrator narrator(gateway);
    const auto n = narrator.narrate_node(tree, NodeId{"node_2"});
    CHECK(n.button_original == "Go on");
    CHECK(n.button_alternate == "Go back");
    CHECK(probe->calls() == 2);
  }
  SUBCASE("still blank after the retry") {
    Gateway gateway(std::make_unique<ScriptedBackend>(std::vector<std::string>{narration_doc("   ", "a", "b")}));
    Narrator narrator(gateway);
    CHECK_THROWS_AS(narrator.narrate_node(tree, NodeId{"node_2"}), EmptyField);
  }
  SUBCASE("style lints") {
    Gateway gateway(std::make_unique<ScriptedBackend>(
        std::vector<std::string>{narration_doc("Ada runs. You follow Ada.", "a", "b")}));
    Narrator narrator(gateway);
    narrator.narrate_node(tree, NodeId{"node_2"});
    const auto warnings = narrator.warnings();
    REQUIRE(warnings.size() == 2);
    CHECK(warnings[0] == "node_2: narration mentions Ada 2 time(s)");
    CHECK(warnings[1].find("1 paragraph(s)") != std::string::npos);
  }
}

TEST_CASE("narrate_tree covers every node with two buttons") {
  for (int n : {1, 3}) {
    const auto tree = mock_expanded_tree(n, 5);
    Gateway gateway(std::make_unique<SyntheticBackend>(5));
    Narrator narrator(gateway);
    const auto narrations = narrator.narrate_tree(tree);
    CHECK(narrations.size() == tree.nodes.size());
    for (const auto& [id, nar] : narrations) {
      CHECK(tree.find_node(id) != nullptr);
      CHECK_FALSE(nar.button_original.empty());
      CHECK_FALSE(nar.button_alternate.empty());
      CHECK_FALSE(nar.paragraphs.empty());
    }
  }
}

TEST_CASE("narrate_tree keeps finished entries and saves partial work") {
  TempDir dir;
  const auto tree = mock_expanded_tree(2, 1);
  NarrationMap done;
  done[NodeId{"node_1"}] = {NodeId{"node_1"}, "Kept.", "k1", "k2"};

  Gateway gateway(std::make_unique<SyntheticBackend>(1));
  Narrator narrator(gateway);
  const auto all = narrator.narrate_tree(tree, done);
  CHECK(all.at(NodeId{"node_1"}).paragraphs == "Kept.");
  CHECK(gateway.calls() == tree.nodes.size() - 1);

  NarratorConfig config;
  config.partial_path = dir / "partial.json";
  Gateway failing(std::make_unique<ScriptedBackend>(
      std::vector<std::string>{narration_doc(kThree, "a", "b"), "not json"}));
  Narrator broken(failing, config);
  CHECK_THROWS(broken.narrate_tree(tree));
  const auto partial = load_narrations(config.partial_path);
  CHECK(partial.size() == 1);
}

TEST_CASE("narrations round-trip") {
  NarrationMap m;
  m[NodeId{"node_1"}] = {NodeId{"node_1"}, "A\n\nB \"quoted\"", "x", "y"};
  m[NodeId{"node_OA"}] = {NodeId{"node_OA"}, "C", "z", "w"};
  CHECK(narrations_from_json(to_json(m)) == m);
  auto doc = to_json(m);
  doc["version"] = 7;
  CHECK_THROWS_AS(narrations_from_json(doc), SchemaVersionMismatch);
}

TEST_CASE("Iron Man node_2 narration via replay") {
  const auto golden = load_ironman_golden(fixture("ironman_golden.json"));
  BackendConfig config;
  config.mode = BackendMode::Replay;
  config.cassette_path = fixture("ironman_cassette.json");
  Gateway gateway(config);
  Pipeline pipeline(gateway);
  const auto tree = pipeline.expand_tree(
      pipeline.initialize_tree(golden.at("plot"), "Tony Stark", "Iron Man", 6)).tree;

  Narrator narrator(gateway);
  const auto n = narrator.narrate_node(tree, NodeId{"node_2"});
  const auto& expected = golden.at("narration_node_2");
  CHECK(n.paragraphs == expected.at("paragraphs"));
  CHECK(n.button_original == "Build a suit of armor");
  CHECK(n.button_alternate == "Sabotage the missile");
  CHECK(text::paragraphs(n.paragraphs).size() == 3);
  CHECK(n.paragraphs.starts_with("You've decided to go to Afghanistan"));
}
