#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "dca/config.hpp"

using namespace dca;

TEST(Config, DefaultsResolve) {
  ConfigValues cfg;
  const RunSettings r = resolve(cfg);
  EXPECT_EQ(r.seeds, (std::vector<std::uint64_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(r.methods.size(), 4u);
  EXPECT_EQ(r.method.label(), "dca:modelwise:cel");
  EXPECT_EQ(r.exp.model.class_count, 4u);
  EXPECT_EQ(r.exp.train.base_epochs, TrainConfig{}.base_epochs);
}

TEST(Config, ParsesKeyValueText) {
  ConfigValues cfg;
  parse_config_text(cfg, "# comment\n\ntrain.lr = 0.1   # inline\nmodel.trunks = 1, 3\nmethod.granularity=layer\n");
  const RunSettings r = resolve(cfg);
  EXPECT_EQ(r.exp.train.lr, 0.1);
  EXPECT_EQ(r.exp.model.trunks, (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(r.method.granularity, Granularity::layerwise);
}

TEST(Config, UnknownKeyNamesLine) {
  ConfigValues cfg;
  try {
    parse_config_text(cfg, "train.lr = 0.1\ntrain.lrr = 0.2\n", "a.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.lrr"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("a.cfg:2"), std::string::npos);
  }
  EXPECT_THROW(parse_config_text(cfg, "no equals sign\n"), ConfigError);
}

TEST(Config, BadValues) {
  for (const char* o : {"train.lr=abc", "run.seed=-1", "method.n=1", "eval.proposals=0", "train.momentum=1",
                        "run.name=a/b", "ood.score=energy", "data.kind=mnist"}) {
    ConfigValues cfg;
    apply_override(cfg, o);
    EXPECT_THROW(resolve(cfg), ConfigError) << o;
  }
  ConfigValues cfg;
  EXPECT_THROW(apply_override(cfg, "train.lr"), ConfigError);
}

TEST(Config, StandardAllowsSingleInstance) {
  ConfigValues cfg;
  apply_override(cfg, "method.kind=standard");
  apply_override(cfg, "method.n=1");
  EXPECT_NO_THROW(resolve(cfg));
}

TEST(Config, EnvironmentSeedOnlyWhenUnset) {
  ConfigValues a;
  EXPECT_EQ(resolve(a, "42").seed, 42u);
  ConfigValues b;
  apply_override(b, "run.seed=3");
  EXPECT_EQ(resolve(b, "42").seed, 3u);
  ConfigValues c;
  EXPECT_THROW(resolve(c, "x"), ConfigError);
}

TEST(Config, ManifestReplay) {
  ConfigValues src;
  apply_override(src, "train.lr=0.125");
  apply_override(src, "run.seeds=4,5");
  const nlohmann::json manifest{{"format", "dca-manifest-1"}, {"config", src.to_json()}};
  const auto path = std::filesystem::temp_directory_path() / "dca_manifest_test.json";
  std::ofstream(path) << manifest.dump(2);
  ConfigValues dst;
  load_config_file(dst, path);
  EXPECT_EQ(dst.to_json(), src.to_json());
  EXPECT_EQ(resolve(dst).seeds, (std::vector<std::uint64_t>{4, 5}));
  std::ofstream(path) << "{\"config\": {\"train.lr\": 0.5}}";
  EXPECT_THROW(load_config_file(dst, path), ConfigError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_config_file(dst, path), ConfigError);
}

TEST(Config, ShortestDoubleRoundTrips) {
  for (double v : {0.1, 2e-3, 1.0 / 3.0, 5.0}) EXPECT_EQ(std::stod(shortest_double(v)), v);
  EXPECT_EQ(shortest_double(0.03), "0.03");
}
