#include <filesystem>
#include <fstream>

#include "adapt3d/config.hpp"
#include "adapt3d/errors.hpp"
#include "test_util.hpp"

using namespace adapt3d;
namespace fs = std::filesystem;

TEST(ConfigTest, DefaultsMatchLibraryStructs) {
  Config cfg;
  EXPECT_EQ(cfg.get_double("adapt.lambda"), AdaptConfig{}.lambda);
  EXPECT_EQ(cfg.get_double("adapt.lr"), AdaptConfig{}.lr);
  EXPECT_EQ(cfg.get_int("render.resolution"), RenderSettings{}.resolution);
  EXPECT_EQ(cfg.get_int("diffusion.schedule_steps"), 1000);
  EXPECT_EQ(cfg.get_string("adapt.prompt"), "style_07");
  EXPECT_TRUE(cfg.get_bool("adapt.use_hsc"));
}

TEST(ConfigTest, UnknownKeysAndBadValuesAreRejected) {
  Config cfg;
  EXPECT_THROW(cfg.set("adapt.lamda", "3"), ConfigError);
  EXPECT_THROW(cfg.set("adapt.iters", "many"), ConfigError);
  EXPECT_THROW(cfg.set("adapt.iters", "2.5"), ConfigError);
  EXPECT_THROW(cfg.set("adapt.use_mask", "maybe"), ConfigError);
  EXPECT_THROW(cfg.set("adapt.lr", ""), ConfigError);
  EXPECT_THROW(cfg.get_int("nope"), ConfigError);
}

TEST(ConfigTest, BuildersValidate) {
  Config cfg;
  cfg.set("adapt.lambda", "-1");
  EXPECT_THROW(adapt_config(cfg), ConfigError);
  Config res;
  res.set("render.resolution", "40");
  EXPECT_THROW(render_config(res), ConfigError);
  Config w;
  w.set("adapt.weighting", "cubic");
  EXPECT_THROW(adapt_config(w), ConfigError);
}

TEST(ConfigTest, TextParsingWithCommentsAndErrors) {
  Config cfg;
  cfg.load_text("# comment\n\nadapt.lambda = 5\n  adapt.iters=7  \n");
  EXPECT_EQ(cfg.get_double("adapt.lambda"), 5.0);
  EXPECT_EQ(cfg.get_int("adapt.iters"), 7);
  try {
    cfg.load_text("adapt.lambda = 1\nbroken line\n", "x.cfg");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("x.cfg:2"), std::string::npos) << e.what();
  }
}

TEST(ConfigTest, FileLoadingAndLaterSetsWin) {
  auto path = fs::temp_directory_path() / "adapt3d_test.cfg";
  {
    std::ofstream f(path);
    f << "adapt.lambda = 1\nadapt.iters = 10\n";
  }
  Config cfg;
  cfg.load_file(path);
  cfg.set("adapt.lambda", "2");
  EXPECT_EQ(cfg.get_double("adapt.lambda"), 2.0);
  EXPECT_EQ(cfg.get_int("adapt.iters"), 10);
  EXPECT_THROW(cfg.load_file(path.string() + ".missing"), ConfigError);
}

TEST(ConfigTest, ResolvedRoundTripAndHash) {
  Config a;
  a.set("adapt.lambda", "1.5");
  a.set("render.resolution", "32");
  Config b;
  b.load_text(a.resolved());
  EXPECT_EQ(a.resolved(), b.resolved());
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
  b.set("adapt.lambda", "2");
  EXPECT_NE(a.hash(), b.hash());
}

TEST(ConfigTest, NumberLists) {
  EXPECT_EQ(parse_number_list("-0.5,0,0.5"), (std::vector<double>{-0.5, 0.0, 0.5}));
  EXPECT_EQ(parse_number_list("1"), (std::vector<double>{1.0}));
  EXPECT_THROW(parse_number_list("1,,2"), ConfigError);
  EXPECT_THROW(parse_number_list("a"), ConfigError);
}
