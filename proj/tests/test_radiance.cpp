// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include "orbiter360/core/error.hpp"
#include "orbiter360/eval/radiance.hpp"
#include "orbiter360/scene/scene.hpp"

using namespace orbiter360;
namespace fs = std::filesystem;

namespace {

struct OrbitSet {
    std::vector<Image> views;
    std::vector<scene::CameraPose> poses;
};

OrbitSet renderOrbit(std::uint64_t seed, int style, int count, Index res) {
    OrbitSet set;
    auto spec = scene::makeSceneSpec(seed, style);
    for (int i = 0; i < count; ++i) {
        scene::CameraPose pose{360.0 * i / count, (i % 3 - 1) * 8.0, scene::kDefaultRadius};
        set.poses.push_back(pose);
        set.views.push_back(scene::renderView(spec, pose, res));
    }
    return set;
}

eval::RadianceConfig tinyConfig() {
    eval::RadianceConfig cfg;
    cfg.gridSize = 16;
    cfg.iterations = 150;
    cfg.raysPerBatch = 512;
    cfg.samplesPerRay = 24;
    cfg.seed = 9;
    return cfg;
}

fs::path tempDir(const char* name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("radiance fit rejects too few views") {
    OrbitSet set = renderOrbit(11, 1, 7, 32);
    CHECK_THROWS_AS(eval::fitRadianceGrid(set.views, set.poses, tinyConfig()), ArgumentError);
}

TEST_CASE("radiance fit rejects a narrow azimuth span") {
    auto spec = scene::makeSceneSpec(11, 1);
    std::vector<Image> views;
    std::vector<scene::CameraPose> poses;
    for (int i = 0; i < 9; ++i) {
        scene::CameraPose pose{170.0 * i / 8, 0.0, scene::kDefaultRadius};
        poses.push_back(pose);
        views.push_back(scene::renderView(spec, pose, 32));
    }
    CHECK_THROWS_AS(eval::fitRadianceGrid(views, poses, tinyConfig()), ArgumentError);

    // A span of exactly 180 degrees is allowed.
    poses.back().azimuth = 180.0;
    eval::RadianceConfig cfg = tinyConfig();
    cfg.iterations = 1;
    CHECK_NOTHROW(eval::fitRadianceGrid(views, poses, cfg));
}

TEST_CASE("radiance fit rejects mismatched input lengths and sizes") {
    OrbitSet set = renderOrbit(11, 1, 10, 32);
    auto shortPoses = set.poses;
    shortPoses.pop_back();
    CHECK_THROWS_AS(eval::fitRadianceGrid(set.views, shortPoses, tinyConfig()), ArgumentError);

    auto mixed = set.views;
    mixed[4] = Image(16, 16);
    CHECK_THROWS_AS(eval::fitRadianceGrid(mixed, set.poses, tinyConfig()), ArgumentError);

    eval::RadianceConfig bad = tinyConfig();
    bad.samplesPerRay = 1;
    CHECK_THROWS_AS(eval::fitRadianceGrid(set.views, set.poses, bad), ArgumentError);
}

TEST_CASE("non-finite targets surface as a training error") {
    OrbitSet set = renderOrbit(11, 1, 10, 32);
    for (auto& view : set.views)
        for (Index y = 0; y < view.height; ++y)
            for (Index x = 0; x < view.width; ++x)
                view.px(y, x)[0] = std::numeric_limits<float>::quiet_NaN();
    eval::RadianceConfig cfg = tinyConfig();
    cfg.iterations = 3;
    CHECK_THROWS_AS(eval::fitRadianceGrid(set.views, set.poses, cfg), TrainingError);
}

TEST_CASE("fitted density is non-negative everywhere") {
    OrbitSet set = renderOrbit(21, 3, 10, 32);
    eval::RadianceConfig cfg = tinyConfig();
    cfg.iterations = 60;
    auto fit = eval::fitRadianceGrid(set.views, set.poses, cfg);
    double minDensity = std::numeric_limits<double>::infinity();
    for (int z = 0; z < fit.grid.size; ++z)
        for (int y = 0; y < fit.grid.size; ++y)
            for (int x = 0; x < fit.grid.size; ++x)
                minDensity = std::min(minDensity, fit.grid.densityAt(x, y, z));
    CHECK(minDensity >= 0.0);
}

TEST_CASE("consistent views re-render better than one image copied across poses") {
    OrbitSet set = renderOrbit(123, 2, 12, 32);
    std::vector<Image> copies(set.views.size(), set.views.front());
    eval::RadianceConfig cfg = tinyConfig();
    auto consistent = eval::fitRadianceGrid(set.views, set.poses, cfg);
    auto inconsistent = eval::fitRadianceGrid(copies, set.poses, cfg);
    CHECK(consistent.heldOutViews.size() == 2);
    CHECK(std::isfinite(consistent.meanHeldOutPsnr));
    CHECK(consistent.meanHeldOutPsnr > 24.0);
    CHECK(consistent.meanHeldOutPsnr > inconsistent.meanHeldOutPsnr);
}

TEST_CASE("losses decrease and depth maps look like a centered head") {
    OrbitSet set = renderOrbit(5, 4, 10, 32);
    eval::RadianceConfig cfg = tinyConfig();
    auto fit = eval::fitRadianceGrid(set.views, set.poses, cfg);

    CHECK(fit.losses.size() == 150);
    CHECK(fit.losses.back() < fit.losses.front());
    for (double l : fit.losses) CHECK(std::isfinite(l));

    REQUIRE(fit.depthMaps.size() == set.views.size());
    for (const auto& depth : fit.depthMaps) {
        CHECK(depth.height == 32);
        CHECK(depth.width == 32);
        for (Index y = 0; y < 32; ++y)
            for (Index x = 0; x < 32; ++x) {
                CHECK(depth.px(y, x)[0] >= 0.0f);
                CHECK(depth.px(y, x)[0] <= 1.0f);
            }
        // Head fills the image center; corners miss the grid entirely.
        CHECK(depth.px(16, 16)[0] > depth.px(0, 0)[0]);
        CHECK(depth.px(0, 0)[0] == 0.0f);
    }
}

TEST_CASE("radiance fitting is deterministic in the seed") {
    OrbitSet set = renderOrbit(77, 0, 10, 32);
    eval::RadianceConfig cfg = tinyConfig();
    cfg.iterations = 40;
    auto a = eval::fitRadianceGrid(set.views, set.poses, cfg);
    auto b = eval::fitRadianceGrid(set.views, set.poses, cfg);
    CHECK(a.grid.densityRaw == b.grid.densityRaw);
    CHECK(a.grid.colorRaw == b.grid.colorRaw);
    CHECK(a.losses == b.losses);
    CHECK(a.meanHeldOutPsnr == b.meanHeldOutPsnr);

    cfg.seed = 10;
    auto c = eval::fitRadianceGrid(set.views, set.poses, cfg);
    CHECK(c.grid.densityRaw != a.grid.densityRaw);
}

TEST_CASE("holdoutEvery zero trains on everything") {
    OrbitSet set = renderOrbit(77, 0, 8, 32);
    eval::RadianceConfig cfg = tinyConfig();
    cfg.iterations = 5;
    cfg.holdoutEvery = 0;
    auto fit = eval::fitRadianceGrid(set.views, set.poses, cfg);
    CHECK(fit.heldOutViews.empty());
    CHECK(std::isnan(fit.meanHeldOutPsnr));
    CHECK(fit.depthMaps.size() == 8);
}

TEST_CASE("radiance grid archive round-trips and rejects corruption") {
    OrbitSet set = renderOrbit(31, 5, 8, 32);
    eval::RadianceConfig cfg = tinyConfig();
    cfg.iterations = 20;
    auto fit = eval::fitRadianceGrid(set.views, set.poses, cfg);

    fs::path dir = tempDir("orbiter360-radiance-archive");
    fs::path path = dir / "grid.bin";
    eval::saveRadianceGrid(fit.grid, path);
    auto loaded = eval::loadRadianceGrid(path);
    CHECK(loaded.size == fit.grid.size);
    CHECK(loaded.densityRaw == fit.grid.densityRaw);
    CHECK(loaded.colorRaw == fit.grid.colorRaw);

    auto bytes = readFileBytes(path);
    bytes[bytes.size() / 2] ^= 0x40;
    fs::path bad = dir / "bad.bin";
    writeFileBytes(bad, bytes.data(), bytes.size());
    CHECK_THROWS_AS(eval::loadRadianceGrid(bad), IoError);

    fs::path shortFile = dir / "short.bin";
    writeFileBytes(shortFile, bytes.data(), 10);
    CHECK_THROWS_AS(eval::loadRadianceGrid(shortFile), IoError);

    CHECK_THROWS_AS(eval::loadRadianceGrid(dir / "missing.bin"), IoError);
}

TEST_CASE("renderRadiance produces clamped images at the requested size") {
    OrbitSet set = renderOrbit(31, 5, 8, 32);
    eval::RadianceConfig cfg = tinyConfig();
    cfg.iterations = 20;
    auto fit = eval::fitRadianceGrid(set.views, set.poses, cfg);
    Image im = eval::renderRadiance(fit.grid, {45.0, 10.0, scene::kDefaultRadius}, 48);
    CHECK(im.height == 48);
    CHECK(im.width == 48);
    for (Index y = 0; y < 48; ++y)
        for (Index x = 0; x < 48; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                CHECK(im.px(y, x)[ch] >= 0.0f);
                CHECK(im.px(y, x)[ch] <= 1.0f);
            }
    // Rays that miss the grid show the shared scene background exactly.
    auto bg = scene::backgroundColor();
    CHECK(im.px(0, 0)[0] == doctest::Approx(bg[0]).epsilon(1e-6));
}
