#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace mobclip;
using namespace mobclip::config;

namespace {

template <typename E>
std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const E& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, EmptyDocumentGivesDefaults) {
  const auto c = parse("{}");
  EXPECT_EQ(c.line.dim, 128u);
  EXPECT_EQ(c.line.negatives_per_edge, 5u);
  EXPECT_EQ(c.align.batch_size, 256u);
  EXPECT_EQ(c.align.epochs, 30u);
  EXPECT_EQ(c.align.temperature, 0.07);
  EXPECT_EQ(c.graph.ratio, 0.10);
  EXPECT_EQ(c.graph.sample_mode, SampleMode::topk);
  EXPECT_EQ(c.distill.hidden_layers, 8u);
  EXPECT_EQ(c.distill.hidden_dim, 512u);
  EXPECT_EQ(c.distill.lr, 0.005);
  EXPECT_EQ(c.probe.lambda, 1.0);
  EXPECT_EQ(c.synth.n_buckets, 54u);
}

TEST(Config, OverridesApply) {
  const auto c = parse(R"({"line": {"dim": 16, "total_samples": 5}, "graph": {"sample_mode": "random", "ratio": 0.5},
                           "align": {"norm_mode": "row"}, "distill": {"standardize_targets": false},
                           "grid": {"resolution": 7}})");
  EXPECT_EQ(c.line.dim, 16u);
  EXPECT_EQ(c.line.total_samples, 5u);
  EXPECT_EQ(c.graph.sample_mode, SampleMode::random);
  EXPECT_EQ(c.graph.ratio, 0.5);
  EXPECT_EQ(c.align.norm_mode, mobenc::NormMode::row);
  EXPECT_FALSE(c.distill.standardize_targets);
  EXPECT_EQ(c.grid.resolution, 7);
  EXPECT_EQ(c.synth.grid.resolution, 7);
}

TEST(Config, UnknownKeysAndSectionsAreRejected) {
  EXPECT_NE(error_of<ConfigError>(R"({"line": {"dimm": 3}})").find("unknown config key 'line.dimm'"), std::string::npos);
  EXPECT_NE(error_of<ConfigError>(R"({"lines": {}})").find("unknown config section 'lines'"), std::string::npos);
}

TEST(Config, WrongTypesAndValuesAreRejected) {
  EXPECT_FALSE(error_of<ConfigError>(R"({"line": {"dim": "big"}})").empty());
  EXPECT_FALSE(error_of<ConfigError>(R"({"line": {"dim": -4}})").empty());
  EXPECT_FALSE(error_of<ConfigError>(R"({"line": {"dim": 2.5}})").empty());
  EXPECT_FALSE(error_of<ConfigError>(R"({"distill": {"standardize_targets": 1}})").empty());
  EXPECT_TRUE(error_of<ConfigError>(R"({"probe": {"lambda": 2}})").empty());
  EXPECT_FALSE(error_of<ConfigError>(R"({"graph": {"sample_mode": "best"}})").empty());
  EXPECT_FALSE(error_of<ConfigError>(R"({"graph": {"ratio": 0}})").empty());
  EXPECT_FALSE(error_of<ConfigError>(R"({"align": {"temperature": 0}})").empty());
  EXPECT_FALSE(error_of<ConfigError>(R"([1, 2])").empty());
}

TEST(Config, MalformedJsonReportsOffset) {
  const auto msg = error_of<ParseError>("{\"line\": {\"dim\": }");
  EXPECT_NE(msg.find("byte offset"), std::string::npos) << msg;
}

TEST(Config, JsonRoundTrip) {
  auto c = parse(R"({"line": {"dim": 24}, "align": {"norm_mode": "row", "lr": 0.004}, "graph": {"sample_mode": "random"}})");
  const auto back = from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.line.dim, 24u);
  EXPECT_EQ(back.align.lr, 0.004);
  EXPECT_EQ(back.align.norm_mode, mobenc::NormMode::row);
}

TEST(Config, SeedAndDeterministicOverrides) {
  auto c = parse(R"({"line": {"threads": 4}, "graph": {"threads": 3}})");
  c.set_seed(99);
  c.set_deterministic();
  EXPECT_EQ(c.synth.seed, 99u);
  EXPECT_EQ(c.line.seed, 99u);
  EXPECT_EQ(c.align.seed, 99u);
  EXPECT_EQ(c.probe.seed, 99u);
  EXPECT_EQ(c.distill.seed, 99u);
  EXPECT_EQ(c.line.threads, 1u);
  EXPECT_EQ(c.graph.threads, 1u);
}

TEST(Config, ShippedDeskConfigLoads) {
  const auto c = load(MOBCLIP_SOURCE_DIR "/configs/desk.json");
  EXPECT_EQ(c.synth.rows, 20u);
  EXPECT_EQ(c.align.batch_size, 256u);
  EXPECT_EQ(c.align.epochs, 30u);
}
