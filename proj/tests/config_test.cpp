#include <gtest/gtest.h>

#include "famt/config.hpp"
#include "famt/error.hpp"

using namespace famt;
using namespace famt::config;

TEST(Config, DefaultsRoundTrip) {
  const auto c = default_config();
  c.validate();
  const auto text = to_json(c);
  EXPECT_EQ(to_json(parse(text)), text);
}

TEST(Config, PartialDocumentKeepsDefaults) {
  const auto c = parse(R"({"schema_version": 1, "model": {"layers": 3}, "train": {"optimizer": "radam"}})");
  EXPECT_EQ(c.model.layers, 3);
  EXPECT_EQ(c.model.d_model, default_config().model.d_model);
  EXPECT_EQ(c.train.optimizer, train::Optimizer::radam);
}

TEST(Config, SeedDerivesEverySubSeed) {
  const auto a = parse(R"({"seed": 5})");
  const auto b = parse(R"({"seed": 6})");
  EXPECT_NE(a.synth.grammar.seed, b.synth.grammar.seed);
  EXPECT_NE(a.embed.seed, b.embed.seed);
  EXPECT_NE(a.train.seed, b.train.seed);
  auto c = default_config();
  c.reseed(5);
  EXPECT_EQ(to_json(c), to_json(a));
}

TEST(Config, RejectsUnknownKeysTypesAndVersions) {
  EXPECT_THROW(parse(R"({"modle": {}})"), ConfigError);
  EXPECT_THROW(parse(R"({"model": {"layerz": 2}})"), ConfigError);
  EXPECT_THROW(parse(R"({"model": {"layers": "two"}})"), ConfigError);
  EXPECT_THROW(parse(R"({"schema_version": 99})"), ConfigError);
  EXPECT_THROW(parse("{not json"), ConfigError);
  EXPECT_THROW(parse(R"({"train": {"optimizer": "sgd"}})"), ConfigError);
  EXPECT_THROW(parse(R"({"synth": {"languages": [{"id": "pv"}, {"id": "pv"}]}})"), ConfigError);
  EXPECT_THROW(parse(R"({"align": {"pivot": "qq"}})"), ConfigError);
}

TEST(Config, LanguageLists) {
  const auto c = default_config();
  EXPECT_EQ(c.languages(), (std::vector<std::string>{"pv", "xa", "xb", "xn"}));
  EXPECT_EQ(c.base_languages(), (std::vector<std::string>{"pv", "xa", "xb"}));
}
