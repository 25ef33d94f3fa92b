#include <gtest/gtest.h>

#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ccl/cli.hpp"

using namespace ccl;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("ccl-cli-" + name + "-" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_config(const fs::path& dir, const std::string& out) {
  const auto path = dir / "run.json";
  std::ofstream(path) << R"({"schema_version": 1, "seed": 3, "output_dir": ")" << out << R"(",
    "data": {"image_size": 16, "synthetic": {"per_class": 6, "subjects": 3,
             "compound": ["happily_surprised", "sadly_angry", "awed"]}},
    "backbone": {"block_channels": [4, 8, 8], "hidden": 8},
    "training": {"max_epochs": 2, "patience": 1, "batch_size": 8, "lr_initial": 0.003, "lr_finetune": 0.003,
                 "lr_continual": 0.003, "lr_fewshot": 0.003, "folds": 3},
    "continual": {"orderings": 2, "memory": 12}, "fewshot": {"shots": [1]}})";
  return path;
}

}  // namespace

TEST(Config, DefaultsFollowTheTrainingTable) {
  const auto c = parse_config_text(R"({"schema_version": 1})");
  EXPECT_EQ(c.phase.lr_initial, 1e-4);
  EXPECT_EQ(c.phase.lr_finetune, 1e-6);
  EXPECT_EQ(c.phase.lr_continual, 1e-5);
  EXPECT_EQ(c.phase.batch_size, 32u);
  EXPECT_EQ(c.phase.loss.temperature, 3.0);
  EXPECT_EQ(c.phase.loss.gamma, 0.1);
  EXPECT_EQ(c.phase.max_epochs, 1000u);
  EXPECT_EQ(c.phase.memory, 120u);
  EXPECT_EQ(c.data.synth.compound.size(), 15u);
}

TEST(Config, StrictSchema) {
  EXPECT_THROW(parse_config_text(R"({})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"schema_version": 2})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"schema_version": 1, "bogus": 1})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"schema_version": 1, "loss": {"gama": 0.2}})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"schema_version": 1, "training": {"batch_size": "32"}})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"schema_version": 1, "training": {"folds": 2.5}})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"schema_version": 1, "continual": {"replay": "fifo"}})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"schema_version": 1, "data": {"source": "manifest"}})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"schema_version": 1, "fewshot": {"shots": [0]}})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"schema_version": 1,)"), ConfigError);
  try {
    parse_config_text(R"({"schema_version": 1, "training": {"patience": -3}})");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("training.patience"), std::string::npos);
  }
}

TEST(Config, RoundTrip) {
  const auto c = parse_config_text(
      R"({"schema_version": 1, "seed": 9, "loss": {"gamma": 0.2}, "continual": {"replay": "random", "orderings": 4},
          "data": {"synthetic": {"compound": ["awed", "hatred"], "seed": 4}}})");
  const auto j = config_to_json(c);
  EXPECT_EQ(config_to_json(parse_config(j)), j);
  EXPECT_EQ(c.data.synth.compound.size(), 2u);
  EXPECT_EQ(c.phase.replay, ReplayMode::kRandom);
}

TEST(Config, OutputDirEnvOverride) {
  const auto c = parse_config_text(R"({"schema_version": 1, "output_dir": "a/b"})");
  ::unsetenv("CCL_OUTPUT_DIR");
  EXPECT_EQ(resolve_output_dir(c), fs::path("a/b"));
  ::setenv("CCL_OUTPUT_DIR", "/tmp/elsewhere", 1);
  EXPECT_EQ(resolve_output_dir(c), fs::path("/tmp/elsewhere"));
  ::unsetenv("CCL_OUTPUT_DIR");
}

TEST(Config, CompoundSubset) {
  auto c = parse_config_text(R"({"schema_version": 1, "data": {"image_size": 16, "synthetic": {"per_class": 2, "subjects": 2}},
                                "continual": {"classes": ["awed", "sadly_angry"]}})");
  const auto d = load_data(c);
  EXPECT_EQ(d.registry.size(), 8u);
  EXPECT_EQ(d.size(), 16u);
  c.classes = {"happy"};
  EXPECT_THROW(load_data(c), ConfigError);
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("codes");
  EXPECT_EQ(run_cli({"--help"}), 0);
  EXPECT_EQ(run_cli({}), 2);
  EXPECT_EQ(run_cli({"train-basic"}), 2);
  EXPECT_EQ(run_cli({"train-basic", "-c", (dir / "missing.json").string()}), 2);
  std::ofstream(dir / "m.json") << R"({"schema_version": 1, "data": {"source": "manifest", "manifest": ")"
                                << (dir / "none.csv").string() << R"("}})";
  EXPECT_EQ(run_cli({"train-basic", "-c", (dir / "m.json").string()}), 2);
  const auto cfg = write_config(dir, (dir / "out").string());
  EXPECT_EQ(run_cli({"continual", "-c", cfg.string()}), 2);  // no checkpoint yet
  EXPECT_EQ(run_cli({"fewshot", "-c", cfg.string(), "--shots", "0"}), 2);
  EXPECT_EQ(run_cli({"eval", "--logs", (dir / "nothing").string()}), 2);
  fs::remove_all(dir);
}

TEST(Cli, EndToEndIsDeterministic) {
  const auto dir = scratch("e2e");
  ::unsetenv("CCL_OUTPUT_DIR");
  const auto cfg = write_config(dir, (dir / "out").string());
  auto run_all = [&] {
    EXPECT_EQ(run_cli({"train-basic", "-c", cfg.string()}), 0);
    EXPECT_EQ(run_cli({"continual", "-c", cfg.string(), "--jobs", "2"}), 0);
    EXPECT_EQ(run_cli({"fewshot", "-c", cfg.string()}), 0);
    return std::vector<std::string>{slurp(dir / "out/basic/folds.csv"), slurp(dir / "out/continual/metrics.csv"),
                                    slurp(dir / "out/continual/summary.csv"), slurp(dir / "out/fewshot/fewshot.csv"),
                                    slurp(dir / "out/continual/run_001.jsonl")};
  };
  const auto first = run_all();
  const auto second = run_all();
  EXPECT_EQ(first, second);
  EXPECT_FALSE(first[1].empty());

  // eval rebuilds the metrics from the run logs alone.
  EXPECT_EQ(run_cli({"eval", "--logs", (dir / "out/continual").string()}), 0);
  EXPECT_EQ(slurp(dir / "out/continual/metrics_eval.csv"), first[1]);

  // Three compounds, shots=1: one row each plus the header.
  EXPECT_EQ(std::count(first[3].begin(), first[3].end(), '\n'), 4);

  EXPECT_EQ(run_cli({"continual", "-c", cfg.string(), "--exclude-singular", "--orderings", "1"}), 0);
  const auto summary = slurp(dir / "out/continual/summary.csv");
  EXPECT_EQ(summary.find("awed"), std::string::npos);
  EXPECT_NE(summary.find("# orderings=1"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Cli, SynthAndGradcam) {
  const auto dir = scratch("cam");
  ::unsetenv("CCL_OUTPUT_DIR");
  const auto cfg = write_config(dir, (dir / "out").string());
  ASSERT_EQ(run_cli({"synth-gen", "-c", cfg.string()}), 0);
  const auto manifest = slurp(dir / "out/dataset/manifest.csv");
  EXPECT_EQ(manifest.rfind("path,label,subject\n", 0), 0u);
  EXPECT_EQ(std::count(manifest.begin(), manifest.end(), '\n'), 1 + 9 * 6);
  ASSERT_EQ(run_cli({"train-basic", "-c", cfg.string()}), 0);
  const auto image = (dir / "out/dataset/images/000000.png").string();
  ASSERT_EQ(run_cli({"gradcam", "-c", cfg.string(), "--image", image, "--class", "happy", "--out",
                     (dir / "a.pgm").string()}),
            0);
  ASSERT_EQ(run_cli({"gradcam", "-c", cfg.string(), "--image", image, "--class", "happy", "--out",
                     (dir / "b.pgm").string()}),
            0);
  EXPECT_GT(fs::file_size(dir / "a.pgm"), 0u);
  EXPECT_EQ(slurp(dir / "a.pgm"), slurp(dir / "b.pgm"));
  EXPECT_TRUE(fs::exists(dir / "a_overlay.ppm"));
  EXPECT_EQ(run_cli({"gradcam", "-c", cfg.string(), "--image", image, "--class", "nope"}), 2);
  EXPECT_EQ(run_cli({"gradcam", "-c", cfg.string(), "--image", image, "--class", "happy", "--layer", "dense1"}), 2);
  fs::remove_all(dir);
}
