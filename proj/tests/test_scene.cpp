// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <set>

#include "orbiter360/scene/scene.hpp"

using namespace orbiter360;
using namespace orbiter360::scene;

namespace {

double meanAbsDiff(const Image& a, const Image& b) {
    double sum = 0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i) sum += std::abs(a.rgb[i] - b.rgb[i]);
    return sum / static_cast<double>(a.rgb.size());
}

} // namespace

TEST_CASE("angle helpers wrap and separate correctly") {
    CHECK(wrapDeg(-0.5) == doctest::Approx(359.5));
    CHECK(wrapDeg(720.0) == 0.0);
    CHECK(wrapSignedDeg(350.0) == doctest::Approx(-10.0));
    CHECK(azimuthSeparation(10.0, 350.0) == doctest::Approx(20.0));
    CHECK(azimuthSeparation(0.0, 180.0) == doctest::Approx(180.0));
    CHECK(inFrontArc(89.999));
    CHECK(!inFrontArc(90.0));
    CHECK(!inFrontArc(270.0));
    CHECK(inFrontArc(-89.0));
    CHECK(cosDeg(90.0) == 0.0);
    CHECK(sinDeg(270.0) == -1.0);
    CHECK(cosDeg(180.0) == -1.0);
}

TEST_CASE("renders are deterministic") {
    SceneSpec s = makeSceneSpec(77, 2);
    CameraPose pose{123.0, 14.0, kDefaultRadius};
    Image a = renderView(s, pose, 32);
    Image b = renderView(s, pose, 32);
    CHECK(a.rgb == b.rgb);
    Image c = renderCamCondition(pose, 32);
    Image d = renderCamCondition(pose, 32);
    CHECK(c.rgb == d.rgb);
}

TEST_CASE("scene spec generation is seed stable and seed sensitive") {
    SceneSpec a = makeSceneSpec(5, 1), b = makeSceneSpec(5, 1), c = makeSceneSpec(6, 1);
    CHECK(a.skin == b.skin);
    CHECK(a.ornament_color == b.ornament_color);
    CHECK(a.ornament.azimuth == b.ornament.azimuth);
    bool differs = a.ornament_color != c.ornament_color || a.ornament.azimuth != c.ornament.azimuth ||
                   a.skin != c.skin;
    CHECK(differs);
    CHECK_THROWS_AS(makeSceneSpec(1, kStyleCount), ArgumentError);
}

TEST_CASE("azimuth wraps modulo 360 in renders") {
    SceneSpec s = makeSceneSpec(3, 0);
    Image a = renderView(s, {359.5, 0.0, kDefaultRadius}, 32);
    Image b = renderView(s, {-0.5, 0.0, kDefaultRadius}, 32);
    CHECK(a.rgb == b.rgb);
}

TEST_CASE("face markers appear exactly on the open front arc") {
    SceneSpec s = makeSceneSpec(11, 4);
    CHECK(countMarkerPixels(renderView(s, {0.0, 0.0, kDefaultRadius}, 64)) >= 1);
    CHECK(countMarkerPixels(renderView(s, {180.0, 0.0, kDefaultRadius}, 64)) == 0);
    for (int az = 0; az < 360; ++az) {
        int n = countMarkerPixels(renderView(s, {static_cast<double>(az), 0.0, kDefaultRadius}, 64));
        INFO("azimuth ", az, " markers ", n);
        if (inFrontArc(az)) CHECK(n >= 1);
        else CHECK(n == 0);
    }
}

TEST_CASE("markers stay exact on the arc at nonzero elevation") {
    SceneSpec s = makeSceneSpec(12, 1);
    for (int az : {-89, -45, 0, 45, 89})
        CHECK(countMarkerPixels(renderView(s, {static_cast<double>(az), 22.0, kDefaultRadius}, 64)) >= 1);
    for (int az : {90, 135, 180, 225, 270})
        CHECK(countMarkerPixels(renderView(s, {static_cast<double>(az), -22.0, kDefaultRadius}, 64)) == 0);
}

TEST_CASE("camera condition ignores scene and mirrors across the face plane") {
    CameraPose p{90.0, 10.0, kDefaultRadius};
    Image a = renderCamCondition(p, 64);
    Image b = renderCamCondition(p, 64);
    CHECK(a.rgb == b.rgb);

    for (double el : {-20.0, 0.0, 15.0}) {
        TensorF left = renderCanonicalMask({90.0, el, kDefaultRadius}, 64);
        TensorF right = renderCanonicalMask({270.0, el, kDefaultRadius}, 64);
        bool mirrored = true;
        for (Index y = 0; y < 64 && mirrored; ++y)
            for (Index x = 0; x < 64; ++x)
                if (left.at(y, x) != right.at(y, Index(63) - x)) {
                    mirrored = false;
                    break;
                }
        INFO("elevation ", el);
        CHECK(mirrored);
    }
}

TEST_CASE("camera condition area is strictly monotone in elevation") {
    for (double az : {0.0, 45.0, 123.0, 200.0, 270.0}) {
        double prev = -1.0;
        bool first = true;
        for (double el = kMinElevation; el <= kMaxElevation + 1e-9; el += 2.0) {
            TensorF mask = renderCanonicalMask({az, el, kDefaultRadius}, 64);
            double area = 0;
            for (Index i = 0; i < mask.numel(); ++i) area += mask[i];
            INFO("azimuth ", az, " elevation ", el, " area ", area, " prev ", prev);
            if (!first) CHECK(area < prev);
            prev = area;
            first = false;
        }
    }
}

TEST_CASE("tag pixels are visible from behind and absent from straight ahead") {
    SceneSpec s = makeSceneSpec(21, 3);
    CHECK(countTagPixels(renderView(s, {180.0, 0.0, kDefaultRadius}, 64)) >= 1);
    CHECK(countTagPixels(renderView(s, {160.0, 0.0, kDefaultRadius}, 64)) >= 1);
    CHECK(countTagPixels(renderView(s, {0.0, 0.0, kDefaultRadius}, 64)) == 0);
}

TEST_CASE("ornament is invisible from canonical front views") {
    for (std::uint64_t seed : {31ULL, 32ULL, 33ULL}) {
        SceneSpec s = makeSceneSpec(seed, static_cast<int>(seed % kStyleCount));
        Image front = renderView(s, {0.0, 0.0, kDefaultRadius}, 64);
        SceneSpec plain = s;
        plain.ornament.radius = 0.0;
        Image frontPlain = renderView(plain, {0.0, 0.0, kDefaultRadius}, 64);
        CHECK(front.rgb == frontPlain.rgb);
        Image back = renderView(s, {180.0, 0.0, kDefaultRadius}, 64);
        Image backPlain = renderView(plain, {180.0, 0.0, kDefaultRadius}, 64);
        CHECK(back.rgb != backPlain.rgb);
    }
}

TEST_CASE("sample_sequence produces the arithmetic azimuth progression") {
    SceneSpec s = makeSceneSpec(8, 5);
    ViewSequence seq = sampleSequence(s, 8, 0.0, 10.0, 32);
    REQUIRE(seq.samples.size() == 8);
    for (Index k = 0; k < 8; ++k)
        CHECK(seq.samples[static_cast<std::size_t>(k)].pose.azimuth == doctest::Approx(10.0 * k));
    ViewSequence one = sampleSequence(s, 1, 42.0, 10.0, 32);
    CHECK(one.samples[0].pose.azimuth == doctest::Approx(42.0));
    CHECK_THROWS_AS(sampleSequence(s, 0, 0.0, 10.0, 32), ArgumentError);
    CHECK_THROWS_AS(sampleSequence(s, 4, 0.0, 0.0, 32), ArgumentError);
    CHECK_THROWS_AS(sampleSequence(s, 1, 0.0, 10.0, 48), ConfigError);
}

TEST_CASE("36 views at step 10 cover the full orbit evenly") {
    SceneSpec s = makeSceneSpec(9, 0);
    ViewSequence seq = sampleSequence(s, 36, 0.0, 10.0, 32);
    std::set<int> azimuths;
    for (auto& v : seq.samples) azimuths.insert(static_cast<int>(std::lround(v.pose.azimuth)));
    CHECK(azimuths.size() == 36);
    CHECK(*azimuths.begin() == 0);
    CHECK(*azimuths.rbegin() == 350);
}

TEST_CASE("consecutive views differ less than distant views") {
    for (std::uint64_t seed : {41ULL, 42ULL}) {
        SceneSpec s = makeSceneSpec(seed, static_cast<int>((seed * 7) % kStyleCount));
        ViewSequence seq = sampleSequence(s, 36, 0.0, 10.0, 32);
        double adjacent = 0;
        int count = 0;
        for (std::size_t k = 0; k + 1 < seq.samples.size(); ++k) {
            adjacent += meanAbsDiff(seq.samples[k].image, seq.samples[k + 1].image);
            ++count;
        }
        adjacent /= count;
        double far = 0;
        int farCount = 0;
        for (std::size_t k = 0; k + 9 < seq.samples.size(); ++k) {
            far += meanAbsDiff(seq.samples[k].image, seq.samples[k + 9].image);
            ++farCount;
        }
        far /= farCount;
        INFO("seed ", seed, " adjacent ", adjacent, " far ", far);
        CHECK(adjacent < far);
    }
}

TEST_CASE("reference pair mining respects separation and jitters") {
    std::vector<CameraPose> pool;
    for (int az = 0; az < 360; az += 10) pool.push_back({static_cast<double>(az), 0.0, kDefaultRadius});
    CameraPose target{200.0, 0.0, kDefaultRadius};
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto [f, b] = mineReferencePairIndices(pool, target, seed);
        CHECK(azimuthSeparation(pool[f].azimuth, pool[b].azimuth) >= 150.0);
        CHECK(inFrontArc(pool[f].azimuth));
        seen.insert({f, b});
    }
    CHECK(seen.size() >= 2);
}

TEST_CASE("reference pair mining handles minimal and degenerate pools") {
    std::vector<CameraPose> two = {{0.0, 0.0, kDefaultRadius}, {180.0, 0.0, kDefaultRadius}};
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto [f, b] = mineReferencePairIndices(two, {90.0, 0.0, kDefaultRadius}, seed);
        CHECK(f == 0);
        CHECK(b == 1);
    }
    std::vector<CameraPose> narrow = {{0.0, 0.0, kDefaultRadius}, {30.0, 0.0, kDefaultRadius}};
    CHECK_THROWS_AS(mineReferencePairIndices(narrow, {0.0, 0.0, kDefaultRadius}, 1), DataError);
}
