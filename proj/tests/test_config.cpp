#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>

#include "fiberseg/config.hpp"

using namespace fiberseg;
namespace fs = std::filesystem;

TEST_CASE("parses sections, comments, and whitespace") {
    const std::string text =
        "top = 1\n"
        "\n"
        "# a comment\n"
        "[train]\n"
        "  learning_rate = 1e-4   ; trailing comment\n"
        "epochs=5\n"
        "[augment]\n"
        "rotation_range = 10\n";
    ConfigFile cfg = parse_config_text(text);
    CHECK(cfg.get("", "top", "") == "1");
    CHECK(cfg.get_double("train", "learning_rate", 0.0) == doctest::Approx(1e-4));
    CHECK(cfg.get_int("train", "epochs", 0) == 5);
    CHECK(cfg.get_int("augment", "rotation_range", 0) == 10);
    CHECK(cfg.get_int("augment", "missing", 42) == 42);
    CHECK(cfg.has("train", "epochs"));
    CHECK_FALSE(cfg.has("train", "nope"));
}

TEST_CASE("booleans accept common spellings") {
    ConfigFile cfg = parse_config_text("[a]\nx = true\ny = 0\nz = off\nw = yes\n");
    CHECK(cfg.get_bool("a", "x", false));
    CHECK_FALSE(cfg.get_bool("a", "y", true));
    CHECK_FALSE(cfg.get_bool("a", "z", true));
    CHECK(cfg.get_bool("a", "w", false));
    CHECK(cfg.get_bool("a", "absent", true));
}

TEST_CASE("parse errors carry origin and line number") {
    try {
        parse_config_text("ok = 1\nbroken line\n", "test.cfg");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("test.cfg:2") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config_text("[unterminated\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("[]\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("= value\n"), ConfigError);
}

TEST_CASE("typed getters reject malformed values") {
    ConfigFile cfg = parse_config_text("[a]\nx = 12px\ny = maybe\n");
    CHECK_THROWS_AS(cfg.get_int("a", "x", 0), ConfigError);
    CHECK_THROWS_AS(cfg.get_double("a", "x", 0.0), ConfigError);
    CHECK_THROWS_AS(cfg.get_bool("a", "y", false), ConfigError);
    CHECK_THROWS_AS(cfg.require("a", "missing"), ConfigError);
    CHECK(cfg.require("a", "x") == "12px");
}

TEST_CASE("dump/parse round trip is stable") {
    ConfigFile cfg;
    cfg.set("train", "optimizer", "adam");
    cfg.set_int("train", "epochs", 5);
    cfg.set_double("train", "learning_rate", 1e-4);
    cfg.set_bool("augment", "horizontal_flip", true);
    cfg.set("", "seed", "7");

    const std::string d1 = cfg.dump();
    ConfigFile back = parse_config_text(d1);
    CHECK(back.dump() == d1);
    CHECK(back.get_int("train", "epochs", 0) == 5);
    CHECK(back.get_double("train", "learning_rate", 0.0) == doctest::Approx(1e-4));
    CHECK(back.get_bool("augment", "horizontal_flip", false));
    CHECK(back.get("", "seed", "") == "7");
}

TEST_CASE("file round trip with atomic write") {
    const fs::path dir =
        fs::temp_directory_path() / ("fseg_cfg_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
    ConfigFile cfg;
    cfg.set("predict", "threshold", "0.5");
    const fs::path file = dir / "run.cfg";
    write_config(cfg, file);
    CHECK_FALSE(fs::exists(dir / "run.cfg.tmp"));
    ConfigFile back = parse_config(file);
    CHECK(back.get("predict", "threshold", "") == "0.5");
    fs::remove_all(dir);

    CHECK_THROWS_AS(parse_config(dir / "missing.cfg"), IoError);
    CHECK_THROWS_AS(write_config(cfg, dir / "nope" / "x.cfg"), IoError);
}
