// Regenerates tests/fixtures/ironman_cassette.json from the golden documents.
// usage: record_ironman <ironman_golden.json> <cassette.json> <scratch-dir>
#include <filesystem>
#include <iostream>

#include "golden_backend.hpp"
#include "whatif/app.hpp"

int main(int argc, char** argv) {
  if (argc != 4) {
    std::cerr << "usage: record_ironman <ironman_golden.json> <cassette.json> <scratch-dir>\n";
    return 2;
  }
  const std::filesystem::path cassette = argv[2];
  std::filesystem::remove(cassette);
  const auto golden = whatif::testing::load_ironman_golden(argv[1]);

  auto golden_backend = std::make_unique<whatif::testing::GoldenBackend>(golden, 0);
  auto* probe = golden_backend.get();
  auto backend = std::make_unique<whatif::RecordingBackend>(std::move(golden_backend), cassette);

  whatif::GenerateInput input{golden.at("plot"), golden.at("char_name"), golden.at("title"), golden.at("num_nodes")};
  whatif::RunOptions options;
  options.backend.mode = whatif::BackendMode::Record;
  options.out_dir = argv[3];
  const auto outcome = whatif::run_generate(input, options, std::move(backend));
  std::cout << "recorded " << outcome.gateway_calls << " calls, " << probe->golden_hits() << " golden documents\n";
  return probe->golden_hits() == 6 ? 0 : 1;
}
