#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "spse/config.hpp"
#include "spse/errors.hpp"

using namespace spse;

TEST_SUITE("config") {
  TEST_CASE("defaults") {
    const EditConfig c;
    CHECK(c.fusion_rate == 0.6);
    CHECK(c.guidance_scale == 10.0);
    CHECK(c.lambda_t_scale == 0.4);
    CHECK(c.lambda_d_scale == 0.2);
    CHECK(c.geometry_steps == 300);
    CHECK(c.texture_steps == 200);
    CHECK(c.init_mode == InitMode::kFromOriginal);
    CHECK_NOTHROW(c.validate());
    CHECK(c.warnings().empty());
  }

  TEST_CASE("parsing with comments and whitespace") {
    const EditConfig c = parse_config(
        "# run\n"
        "fusion_rate = 0.35   # low end\n"
        "\n"
        "  seed=7\n"
        "init_mode = ellipsoid-blob\n"
        "geometry_steps = 30\nphase1_steps = 10\nphase3_steps = 10\n");
    CHECK(c.fusion_rate == 0.35);
    CHECK(c.seed == 7);
    CHECK(c.init_mode == InitMode::kEllipsoidBlob);
    CHECK(c.geometry_steps == 30);
    CHECK(c.guidance_scale == 10.0);
  }

  TEST_CASE("bad input raises ConfigError") {
    CHECK_THROWS_AS(parse_config("fusion_rate 0.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("colour = red\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("fusion_rate = abc\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("fusion_rate = 0.5x\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("fusion_rate = 1.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("seed = -1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("fusion_rate =\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("init_mode = random\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("lambda_t_scale = -0.1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("guidance_scale = inf\n"), ConfigError);
  }

  TEST_CASE("format and parse round trip every key") {
    EditConfig c;
    c.fusion_rate = 0.123456789;
    c.guidance_scale = 7.5;
    c.lambda_t_scale = 0.3;
    c.lambda_d_scale = 0.1;
    c.geometry_steps = 90;
    c.texture_steps = 40;
    c.phase1_steps = 20;
    c.phase3_steps = 20;
    c.aux_guidance_weight = 0.5;
    c.grid_size = 8;
    c.image_size = 12;
    c.seed = 99;
    c.init_mode = InitMode::kEllipsoidBlob;
    const std::string text = format_config(c);
    const EditConfig d = parse_config(text);
    CHECK(format_config(d) == text);
    CHECK(d.fusion_rate == c.fusion_rate);
    for (const auto& key : config_keys()) CHECK(text.find(key + " = ") != std::string::npos);
  }

  TEST_CASE("fusion rates outside the recommended band warn but validate") {
    EditConfig c;
    c.fusion_rate = 0.1;
    CHECK_NOTHROW(c.validate());
    REQUIRE(c.warnings().size() == 1);
    CHECK(c.warnings()[0].find("fusion_rate") != std::string::npos);
    c.fusion_rate = 0.85;
    CHECK(c.warnings().empty());
  }

  TEST_CASE("schedules derived from the step counts") {
    EditConfig c;
    const auto g = c.geometry_schedule();
    CHECK(g.total_steps == 300);
    CHECK(g.phase1_end == 100);
    CHECK(g.phase3_start == 200);
    const auto t = c.texture_schedule();
    CHECK(t.phase1_end == 0);
    CHECK(t.phase3_start == 100);
    c.geometry_steps = 150;
    const auto short_g = c.geometry_schedule();
    CHECK(short_g.phase1_end == 100);
    CHECK(short_g.phase3_start == 100);
  }

  TEST_CASE("config files") {
    const auto dir = std::filesystem::temp_directory_path() / "spse_unit_config";
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "run.cfg") << "seed = 3\n";
    CHECK(load_config(dir / "run.cfg").seed == 3);
    CHECK_THROWS_AS(load_config(dir / "none.cfg"), IoError);
  }
}
