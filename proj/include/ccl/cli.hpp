#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ccl/data.hpp"
#include "ccl/harness.hpp"
#include "json.hpp"

namespace ccl {

inline constexpr int kConfigSchemaVersion = 1;

struct DataSource {
  enum class Kind { kSynthetic, kManifest };
  Kind kind = Kind::kSynthetic;
  std::filesystem::path manifest;
  std::filesystem::path root;  // image paths are relative to this; defaults to the manifest's directory
  std::size_t image_size = 32;
  std::vector<std::string> basic_labels = default_basic_labels();
  SynthConfig synth = SynthConfig::standard();
  bool synth_seed_set = false;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "ccl-out";
  DataSource data;
  BackboneConfig backbone;
  PhaseConfig phase;
  bool include_step0 = true;
  std::vector<std::size_t> shots{5, 3, 1};
  std::vector<std::string> classes;  // compound subset; empty keeps every compound class
};

/// Strict parse: unknown keys, wrong types and out-of-range values raise
/// ConfigError naming the offending field.
RunConfig parse_config(const nlohmann::json& doc);
RunConfig parse_config_text(const std::string& text, const std::string& origin = "config");
RunConfig load_config(const std::filesystem::path& path);
/// Every field with its effective value; parse_config(to_json(c)) == c.
nlohmann::json config_to_json(const RunConfig& config);

/// CCL_OUTPUT_DIR wins over the configured directory.
std::filesystem::path resolve_output_dir(const RunConfig& config);

/// Loads or generates the dataset and applies the compound-class subset.
Dataset load_data(const RunConfig& config);

/// Keeps basic classes and the listed compound classes; ConfigError on an
/// unknown label.
Dataset restrict_compounds(const Dataset& data, const std::vector<std::string>& keep);

/// Entry point shared by the `ccl` executable and the tests. Returns the
/// process exit code: 0 success, 1 runtime failure, 2 usage or config error.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace ccl
