// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "orbiter360/core/image.hpp"
#include "orbiter360/pipeline/checkpoint.hpp"

using namespace orbiter360;
using namespace orbiter360::pipeline;

namespace {

std::filesystem::path freshDir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

PipelineConfig tinyCfg() {
    PipelineConfig cfg;
    cfg.resolution = 16;
    cfg.baseChannels = 8;
    cfg.tembChannels = 16;
    cfg.nMaxViews = 4;
    cfg.T = 50;
    cfg.schedule = diffusion::ScheduleKind::Cosine;
    return cfg;
}

bool bitEqual(const TensorF& a, const TensorF& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.numel()) * sizeof(float)) == 0;
}

void scrambleValues(ModelBundle& b, std::uint64_t seed) {
    b.store.forEach([&](Parameter<float>& p) {
        Rng rng(fnv1a64(p.name) ^ seed);
        for (Index i = 0; i < p.value.numel(); ++i) p.value.data()[i] = static_cast<float>(rng.normal());
    });
}

} // namespace

TEST_CASE("fresh bundles are deterministic functions of the config") {
    ModelBundle a = ModelBundle::build(tinyCfg());
    ModelBundle b = ModelBundle::build(tinyCfg());
    REQUIRE(a.store.size() == b.store.size());
    a.store.forEach([&](const Parameter<float>& p) { CHECK(bitEqual(p.value, b.store.get(p.name).value)); });
    CHECK(a.store.size() > 0);
}

TEST_CASE("checkpoint round trip restores every array and progress marker bitwise") {
    auto dir = freshDir("orbiter360_ckpt_roundtrip");
    ModelBundle b = ModelBundle::build(tinyCfg());
    scrambleValues(b, 7);
    b.completedSteps["autoencoder"] = 5000;
    b.completedSteps["appearance"] = 120;
    b.scaleCalibrated = true;
    b.adam.stage = "appearance";
    b.adam.t = 120;
    b.store.forEachPrefix("appearance/", [&](Parameter<float>& p) {
        Rng rng(fnv1a64(p.name) ^ 99u);
        auto& mv = b.adam.moments[p.name];
        mv.first = TensorF::randn(p.value.shape(), rng, 0.1f);
        mv.second = TensorF::randn(p.value.shape(), rng, 0.1f);
    });

    auto path = dir / "model.ckpt";
    saveCheckpoint(b, path);
    CHECK(!std::filesystem::exists(dir / "model.ckpt.tmp"));

    ModelBundle r = loadCheckpoint(path);
    CHECK(r.cfg == b.cfg);
    CHECK(r.sched.T == 50);
    CHECK(diffusion::toString(r.sched.kind) == "cosine");
    REQUIRE(r.store.size() == b.store.size());
    b.store.forEach([&](const Parameter<float>& p) { CHECK(bitEqual(p.value, r.store.get(p.name).value)); });
    CHECK(r.completedSteps == b.completedSteps);
    CHECK(r.stepsDone(Stage::appearance) == 120);
    CHECK(r.scaleCalibrated);
    CHECK(r.adam.stage == "appearance");
    CHECK(r.adam.t == 120);
    REQUIRE(r.adam.moments.size() == b.adam.moments.size());
    for (const auto& [name, mv] : b.adam.moments) {
        REQUIRE(r.adam.moments.count(name) == 1);
        CHECK(bitEqual(mv.first, r.adam.moments.at(name).first));
        CHECK(bitEqual(mv.second, r.adam.moments.at(name).second));
    }

    SUBCASE("saving twice produces identical bytes") {
        saveCheckpoint(r, dir / "again.ckpt");
        auto a1 = readFileBytes(path);
        auto a2 = readFileBytes(dir / "again.ckpt");
        CHECK(a1 == a2);
    }
}

TEST_CASE("version mismatch is fatal and names both versions") {
    auto dir = freshDir("orbiter360_ckpt_version");
    ModelBundle b = ModelBundle::build(tinyCfg());
    auto path = dir / "model.ckpt";
    saveCheckpoint(b, path);

    auto bytes = readFileBytes(path);
    const std::string from = "orbiter360-ckpt-v1";
    const std::string to = "orbiter360-ckpt-v9";
    auto it = std::search(bytes.begin(), bytes.end(), from.begin(), from.end());
    REQUIRE(it != bytes.end());
    std::copy(to.begin(), to.end(), it);
    writeFileBytes(path, bytes.data(), bytes.size());

    try {
        loadCheckpoint(path);
        FAIL("expected a version mismatch error");
    } catch (const IntegrationError& e) {
        std::string msg = e.what();
        CHECK(msg.find("orbiter360-ckpt-v9") != std::string::npos);
        CHECK(msg.find("orbiter360-ckpt-v1") != std::string::npos);
    }
}

TEST_CASE("corrupt or truncated archives are rejected without partial state") {
    auto dir = freshDir("orbiter360_ckpt_corrupt");
    ModelBundle b = ModelBundle::build(tinyCfg());
    auto path = dir / "model.ckpt";
    saveCheckpoint(b, path);
    auto good = readFileBytes(path);

    SUBCASE("flipped byte in the body") {
        auto bad = good;
        bad[bad.size() / 2] ^= 0x40;
        writeFileBytes(dir / "bad.ckpt", bad.data(), bad.size());
        CHECK_THROWS_AS(loadCheckpoint(dir / "bad.ckpt"), IoError);
    }
    SUBCASE("truncated tail") {
        writeFileBytes(dir / "short.ckpt", good.data(), good.size() - 256);
        CHECK_THROWS_AS(loadCheckpoint(dir / "short.ckpt"), IoError);
    }
    SUBCASE("unrelated file") {
        const char junk[] = "not an archive\n";
        writeFileBytes(dir / "junk.ckpt", junk, sizeof junk - 1);
        CHECK_THROWS_AS(loadCheckpoint(dir / "junk.ckpt"), IoError);
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(loadCheckpoint(dir / "absent.ckpt"), IoError); }
    SUBCASE("the original archive still loads") { CHECK_NOTHROW(loadCheckpoint(path)); }
}

TEST_CASE("config snapshot controls the rebuilt model shape") {
    auto dir = freshDir("orbiter360_ckpt_cfg");
    PipelineConfig cfg = tinyCfg();
    cfg.resolution = 32;
    cfg.T = 80;
    cfg.schedule = diffusion::ScheduleKind::Linear;
    ModelBundle b = ModelBundle::build(cfg);
    saveCheckpoint(b, dir / "m.ckpt");
    ModelBundle r = loadCheckpoint(dir / "m.ckpt");
    CHECK(r.cfg.resolution == 32);
    CHECK(r.latentSide() == 8);
    CHECK(r.sched.T == 80);
    CHECK(diffusion::toString(r.sched.kind) == "linear");
}
