// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "orbiter360/data/dataset.hpp"

using namespace orbiter360;
using namespace orbiter360::data;

namespace {

std::filesystem::path freshDir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    return dir;
}

DatasetConfig tinyCfg() {
    DatasetConfig cfg;
    cfg.scenes = 4;
    cfg.viewsPerScene = 8;
    cfg.stepDeg = 45.0;
    cfg.resolution = 32;
    return cfg;
}

} // namespace

TEST_CASE("dataset generation writes one image and manifest row per view") {
    auto dir = freshDir("orbiter360_ds_count");
    generateDataset(tinyCfg(), dir);

    std::size_t files = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir / "images"))
        if (e.path().extension() == ".png") ++files;
    CHECK(files == 32);

    std::ifstream in(dir / "manifest.jsonl");
    std::string line;
    std::size_t rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 32);
    CHECK(std::filesystem::exists(dir / "checksum.txt"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("regenerating the same config reproduces the checksum") {
    auto a = freshDir("orbiter360_ds_rega");
    auto b = freshDir("orbiter360_ds_regb");
    auto c = freshDir("orbiter360_ds_regc");
    auto cfg = tinyCfg();
    std::uint64_t ha = generateDataset(cfg, a);
    CHECK(generateDataset(cfg, b) == ha);
    CHECK(datasetChecksum(a) == ha);
    cfg.seed = 1;
    CHECK(generateDataset(cfg, c) != ha);
    for (const auto& d : {a, b, c}) std::filesystem::remove_all(d);
}

TEST_CASE("manifest round trip restores poses exactly") {
    auto dir = freshDir("orbiter360_ds_rt");
    auto cfg = tinyCfg();
    cfg.elevation = -12.5;
    generateDataset(cfg, dir);

    Dataset ds = loadDataset(dir);
    REQUIRE(ds.records.size() == 32);
    for (int i = 0; i < cfg.scenes; ++i) {
        for (int k = 0; k < cfg.viewsPerScene; ++k) {
            const auto& r = ds.records[static_cast<std::size_t>(i * 8 + k)];
            CHECK(r.pose.azimuth == scene::wrapDeg(45.0 * k));
            CHECK(r.pose.elevation == -12.5);
            CHECK(r.pose.radius == 7.5);
        }
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("stored images match a fresh render of the recorded scene") {
    auto dir = freshDir("orbiter360_ds_bits");
    auto cfg = tinyCfg();
    cfg.scenes = 2;
    generateDataset(cfg, dir);

    Dataset ds = loadDataset(dir);
    const auto& r = ds.records[9]; // scene 1, view 1
    scene::SceneSpec spec = scene::makeSceneSpec(r.sceneSeed, r.styleId);
    Image fresh = scene::renderView(spec, r.pose, cfg.resolution);
    CHECK(encodePng(fresh) == readFileBytes(dir / r.path));
    std::filesystem::remove_all(dir);
}

TEST_CASE("scenes group consecutive rows and cycle styles") {
    auto dir = freshDir("orbiter360_ds_styles");
    auto cfg = tinyCfg();
    cfg.styleCount = 2;
    generateDataset(cfg, dir);

    Dataset ds = loadDataset(dir);
    REQUIRE(ds.scenes.size() == 4);
    for (int i = 0; i < 4; ++i) {
        CHECK(ds.scenes[static_cast<std::size_t>(i)].styleId == i % 2);
        CHECK(ds.scenes[static_cast<std::size_t>(i)].rows.size() == 8);
        for (std::size_t k = 0; k < 8; ++k)
            CHECK(ds.scenes[static_cast<std::size_t>(i)].rows[k] == static_cast<std::size_t>(i) * 8 + k);
    }
    CHECK(ds.scenes[0].sceneSeed != ds.scenes[1].sceneSeed);
    CHECK(ds.records[0].styleId == 0);
    CHECK(ds.records[8].styleId == 1);
    CHECK(ds.records[16].styleId == 0);

    Image im = ds.loadImage(3);
    CHECK(im.width == 32);
    CHECK(im.height == 32);
    CHECK(ds.resolution() == 32);
    std::filesystem::remove_all(dir);
}

TEST_CASE("dataset loading and generation reject bad inputs") {
    auto dir = freshDir("orbiter360_ds_bad");
    CHECK_THROWS_AS(loadDataset(dir), IoError);
    DatasetConfig cfg = tinyCfg();
    cfg.scenes = 0;
    CHECK_THROWS_AS(generateDataset(cfg, dir), ArgumentError);
    cfg = tinyCfg();
    cfg.styleCount = 99;
    CHECK_THROWS_AS(generateDataset(cfg, dir), ArgumentError);
    std::filesystem::remove_all(dir);
}
