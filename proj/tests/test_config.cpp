// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdlib>
#include <filesystem>

#include "orbiter360/cli/config.hpp"
#include "orbiter360/core/error.hpp"
#include "orbiter360/core/image.hpp"

using namespace orbiter360;
using cli::KeyValueConfig;

TEST_CASE("key=value parsing with comments and whitespace") {
    auto cfg = KeyValueConfig::fromString("# recipe\n"
                                          "steps = 500\n"
                                          "\n"
                                          "  lr=1.5e-3  # override later\n"
                                          "name = tiny run \n"
                                          "flag=true\n");
    CHECK(cfg.entries().size() == 4);
    CHECK(cfg.getInt("steps", 0) == 500);
    CHECK(cfg.getDouble("lr", 0.0) == doctest::Approx(1.5e-3));
    CHECK(cfg.getString("name", "") == "tiny run");
    CHECK(cfg.getBool("flag", false));
    CHECK(cfg.getInt("absent", 42) == 42);
    CHECK_FALSE(cfg.has("absent"));
}

TEST_CASE("malformed lines and values raise config errors") {
    CHECK_THROWS_AS(KeyValueConfig::fromString("just a bare line\n"), ConfigError);
    CHECK_THROWS_AS(KeyValueConfig::fromString("=value with empty key\n"), ConfigError);

    auto cfg = KeyValueConfig::fromString("steps=abc\nlr=1.2.3\nflag=maybe\n");
    CHECK_THROWS_AS(cfg.getInt("steps", 0), ConfigError);
    CHECK_THROWS_AS(cfg.getDouble("lr", 0.0), ConfigError);
    CHECK_THROWS_AS(cfg.getBool("flag", false), ConfigError);
    CHECK(cfg.getString("steps", "") == "abc"); // raw text is still reachable

    CHECK_THROWS_AS(KeyValueConfig::fromFile("/nonexistent/orbiter360.cfg"), IoError);
}

TEST_CASE("boolean spellings") {
    auto cfg = KeyValueConfig::fromString("a=1\nb=0\nc=Yes\nd=off\ne=TRUE\n");
    CHECK(cfg.getBool("a", false));
    CHECK_FALSE(cfg.getBool("b", true));
    CHECK(cfg.getBool("c", false));
    CHECK_FALSE(cfg.getBool("d", true));
    CHECK(cfg.getBool("e", false));
}

TEST_CASE("flag overrides win and the snapshot round-trips sorted") {
    auto cfg = KeyValueConfig::fromString("steps=5000\nzeta=1\nalpha=2\n");
    cfg.set("steps", "10"); // flag beats the file
    CHECK(cfg.getInt("steps", 0) == 10);

    std::string snap = cfg.snapshot();
    CHECK(snap == "alpha=2\nsteps=10\nzeta=1\n");
    auto reparsed = KeyValueConfig::fromString(snap);
    CHECK(reparsed.entries() == cfg.entries());

    auto dir = std::filesystem::temp_directory_path() / "orbiter360-config-test";
    std::filesystem::create_directories(dir);
    cli::writeSnapshot(cfg, dir / "resolved.cfg");
    auto loaded = KeyValueConfig::fromFile(dir / "resolved.cfg");
    CHECK(loaded.entries() == cfg.entries());
}

TEST_CASE("seed precedence: flag, config, environment, fallback") {
    auto cfg = KeyValueConfig::fromString("seed=77\n");
    auto empty = KeyValueConfig::fromString("");

    unsetenv("ORBITER360_SEED");
    CHECK(cli::resolveSeed(std::uint64_t{5}, cfg, 1) == 5);
    CHECK(cli::resolveSeed(std::nullopt, cfg, 1) == 77);
    CHECK(cli::resolveSeed(std::nullopt, empty, 1) == 1);

    setenv("ORBITER360_SEED", "123456", 1);
    CHECK(cli::resolveSeed(std::nullopt, empty, 1) == 123456);
    CHECK(cli::resolveSeed(std::nullopt, cfg, 1) == 77); // config still beats the environment
    CHECK(cli::resolveSeed(std::uint64_t{5}, empty, 1) == 5);

    setenv("ORBITER360_SEED", "not-a-number", 1);
    CHECK_THROWS_AS(cli::resolveSeed(std::nullopt, empty, 1), ConfigError);
    unsetenv("ORBITER360_SEED");
}
