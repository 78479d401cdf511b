// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>

#include "orbiter360/control/appearance.hpp"
#include "orbiter360/control/camera.hpp"

using namespace orbiter360;
using namespace orbiter360::control;

namespace {

bool bitEqual(const TensorF& a, const TensorF& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.numel())) == 0;
}

nn::UNetConfig smallCfg(bool temporal = false) {
    nn::UNetConfig cfg;
    cfg.baseChannels = 8;
    cfg.tembChannels = 16;
    cfg.nMaxViews = 4;
    cfg.temporal = temporal;
    return cfg;
}

void scramble(ParamStore<float>& store, const std::string& prefix, std::uint64_t seed) {
    store.forEachPrefix(prefix, [&](Parameter<float>& p) {
        Rng r(fnv1a64(p.name) ^ seed);
        p.value = TensorF::randn(p.value.shape(), r, 0.1f);
    });
}

float l1Diff(const TensorF& a, const TensorF& b) { return (a.array() - b.array()).abs().sum(); }

data::Dataset tinyDataset(const std::string& name, int scenes, int views, double step) {
    auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    data::DatasetConfig cfg;
    cfg.scenes = scenes;
    cfg.viewsPerScene = views;
    cfg.stepDeg = step;
    cfg.resolution = 32;
    data::generateDataset(cfg, dir);
    return data::loadDataset(dir);
}

} // namespace

TEST_CASE("reference features cover the attention registry and are deterministic") {
    ParamStore<float> store;
    auto net = nn::UNet<float>::build(store, smallCfg(), "appearance/", "", Rng(3));
    scramble(store, "appearance/", 77);
    Rng zr(5);
    TensorF z = TensorF::randn({1, 4, 8, 8}, zr);

    Tape<float> ta, tb;
    auto a = extractReferenceFeatures(ta, net, ta.input(z), {40}, "front");
    auto b = extractReferenceFeatures(tb, net, tb.input(z), {40}, "front");
    CHECK(a.source == "front");
    REQUIRE(a.sites.size() == nn::attentionSites().size());
    for (const auto& site : nn::attentionSites()) {
        REQUIRE(a.sites.count(site) == 1);
        CHECK(bitEqual(a.sites.at(site).k->value, b.sites.at(site).k->value));
        CHECK(bitEqual(a.sites.at(site).v->value, b.sites.at(site).v->value));
    }
}

TEST_CASE("front and back renders yield distinct reference features at every site") {
    ParamStore<float> store;
    auto net = nn::UNet<float>::build(store, smallCfg(), "appearance/", "", Rng(3));
    auto ae = nn::Autoencoder<float>::build(store, "autoencoder/", 4, Rng(4));
    scramble(store, "", 11);

    scene::SceneSpec spec = scene::makeSceneSpec(901, 2);
    Image front = scene::renderView(spec, {0.0, 0.0, 7.5}, 32);
    Image back = scene::renderView(spec, {180.0, 0.0, 7.5}, 32);

    Tape<float> t;
    Var<float> zf = ae.encodeRaw(t, t.input(imagesToTensor({front})));
    Var<float> zb = ae.encodeRaw(t, t.input(imagesToTensor({back})));
    auto ff = extractReferenceFeatures(t, net, zf, {10}, "front");
    auto fb = extractReferenceFeatures(t, net, zb, {10}, "back");
    for (const auto& site : nn::attentionSites()) {
        CHECK(l1Diff(ff.sites.at(site).k->value, fb.sites.at(site).k->value) > 0.0f);
        CHECK(l1Diff(ff.sites.at(site).v->value, fb.sites.at(site).v->value) > 0.0f);
    }
}

TEST_CASE("dual conditioning reduces exactly to the single-reference path without a back") {
    ParamStore<float> store;
    auto backbone = nn::UNet<float>::build(store, smallCfg(), "backbone/", "", Rng(3));
    auto refNet = nn::UNet<float>::build(store, smallCfg(), "appearance/", "", Rng(3));
    scramble(store, "", 23);

    Rng zr(9);
    TensorF zv = TensorF::randn({1, 4, 8, 8}, zr);
    TensorF rf = TensorF::randn({1, 4, 8, 8}, zr);
    TensorF rb = TensorF::randn({1, 4, 8, 8}, zr);

    auto runWith = [&](bool withBack, float frontScale) {
        Tape<float> t;
        DualAppearanceContext<float> ctx =
            buildTrainingContext(t, refNet, t.input(rf), withBack ? t.input(rb) : nullptr, {25}, 170.0);
        if (frontScale != 1.0f)
            for (auto& [site, kv] : ctx.front.sites) kv.v = scale(t, kv.v, frontScale);
        nn::Conditioning<float> cond;
        cond.refKV = referenceConditioning(ctx);
        return backbone.forward(t, t.input(zv), {25}, cond)->value;
    };

    // The front-only context must equal hand-built single-reference lists.
    TensorF single = runWith(false, 1.0f);
    {
        Tape<float> t;
        auto front = extractReferenceFeatures(t, refNet, t.input(rf), {25}, "front");
        nn::Conditioning<float> cond;
        for (const auto& [site, kv] : front.sites) cond.refKV[site] = {kv};
        CHECK(bitEqual(backbone.forward(t, t.input(zv), {25}, cond)->value, single));
    }

    TensorF dual = runWith(true, 1.0f);
    CHECK(l1Diff(dual, single) > 0.0f);
    CHECK(l1Diff(runWith(true, 2.0f), dual) > 0.0f); // doubling front values steers the output

    // Mismatched site coverage between the two references is rejected.
    Tape<float> t;
    auto ctx = buildTrainingContext(t, refNet, t.input(rf), t.input(rb), {25}, 170.0);
    ctx.back->sites.erase("mid.attn");
    CHECK_THROWS_AS(referenceConditioning(ctx), IntegrationError);
}

TEST_CASE("training pair plans record wide separations and drop the back at the configured rate") {
    auto ds = tinyDataset("orbiter360_ctl_pairs", 2, 8, 45.0);
    Rng rng(31);
    int drops = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        PairPlan p = planTrainingPair(ds, static_cast<std::size_t>(i % 2), rng);
        if (i < 200) {
            CHECK(p.separationDeg >= 150.0);
            CHECK(p.frontRow != p.backRow);
            const auto& rows = ds.scenes[static_cast<std::size_t>(i % 2)].rows;
            for (std::size_t r : {p.targetRow, p.frontRow, p.backRow})
                CHECK(std::count(rows.begin(), rows.end(), r) == 1);
            CHECK(scene::inFrontArc(ds.records[p.frontRow].pose.azimuth));
        }
        if (p.dropBack) ++drops;
    }
    CHECK(drops > n / 10 - n / 100); // 10% +/- 1%
    CHECK(drops < n / 10 + n / 100);
    std::filesystem::remove_all(ds.root);

    auto small = tinyDataset("orbiter360_ctl_small", 1, 2, 180.0);
    CHECK_THROWS_AS(planTrainingPair(small, 0, rng), DataError);
    std::filesystem::remove_all(small.root);
}

TEST_CASE("residual attachment validates the tap registry and cancels with its inverse") {
    ParamStore<float> store;
    auto backbone = nn::UNet<float>::build(store, smallCfg(), "backbone/", "", Rng(3));
    scramble(store, "", 41);
    Rng zr(13);
    TensorF zv = TensorF::randn({2, 4, 8, 8}, zr);
    TensorF rMid = TensorF::randn({2, 16, 2, 2}, zr, 0.5f);

    Tape<float> t;
    nn::Conditioning<float> bad;
    CHECK_THROWS_AS(attachResiduals(t, bad, {{"nowhere", t.input(rMid)}}), IntegrationError);

    Var<float> z = t.input(zv);
    TensorF plain = backbone.forward(t, z, {12, 12}, {})->value;

    nn::Conditioning<float> cancel;
    Var<float> r = t.input(rMid);
    attachResiduals(t, cancel, {{"mid", r}});
    attachResiduals(t, cancel, {{"mid", scale(t, r, -1.0f)}});
    TensorF out = backbone.forward(t, z, {12, 12}, cancel)->value;
    CHECK((out.array() - plain.array()).abs().maxCoeff() <= 1e-6f);

    nn::Conditioning<float> perturb;
    attachResiduals(t, perturb, {{"mid", r}});
    CHECK(l1Diff(backbone.forward(t, z, {12, 12}, perturb)->value, plain) > 0.0f);
}

TEST_CASE("scalar pose conditioner starts silent and becomes pose sensitive") {
    ParamStore<float> store;
    auto backbone = nn::UNet<float>::build(store, smallCfg(), "backbone/", "", Rng(3));
    auto cond = PoseScalarConditioner<float>::create(store, "camera/scalar.", 16, Rng(6));
    scramble(store, "backbone/", 55);

    Rng zr(17);
    TensorF zv = TensorF::randn({2, 4, 8, 8}, zr);
    std::vector<scene::CameraPose> poses = {{30.0, 5.0, 7.5}, {210.0, -5.0, 7.5}};

    Tape<float> t;
    Var<float> emb = cond(t, poses);
    CHECK(emb->value.shape() == Shape{2, 16});
    CHECK(emb->value.array().abs().maxCoeff() == 0.0f); // zero head

    Var<float> z = t.input(zv);
    TensorF plain = backbone.forward(t, z, {33, 33}, {})->value;
    nn::Conditioning<float> c;
    c.tembExtra = emb;
    CHECK(bitEqual(backbone.forward(t, z, {33, 33}, c)->value, plain));

    scramble(store, "camera/scalar.", 56);
    Tape<float> t2;
    Var<float> z2 = t2.input(zv);
    nn::Conditioning<float> c2;
    c2.tembExtra = cond(t2, poses);
    TensorF steered = backbone.forward(t2, z2, {33, 33}, c2)->value;
    CHECK(l1Diff(steered, plain) > 0.0f);

    nn::Conditioning<float> c3;
    c3.tembExtra = cond(t2, {{95.0, 0.0, 7.5}, {95.0, 0.0, 7.5}});
    CHECK(l1Diff(backbone.forward(t2, z2, {33, 33}, c3)->value, steered) > 0.0f);
}

TEST_CASE("camera hints render deterministically and follow the pose") {
    std::vector<scene::CameraPose> poses = {{0.0, 0.0, 7.5}, {90.0, 10.0, 7.5}};
    TensorF a = renderHints(poses, 32);
    CHECK(a.shape() == Shape{2, 3, 32, 32});
    CHECK(bitEqual(a, renderHints(poses, 32)));
    CHECK(l1Diff(TensorF(a.slice0(0, 1)), TensorF(a.slice0(1, 1))) > 0.0f);
}
