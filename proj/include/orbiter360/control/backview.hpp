// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "orbiter360/data/dataset.hpp"

namespace orbiter360::control {

/// A supervision pair for the back-view generator: a front-arc view and a
/// roughly opposite view of the same scene.
struct FrontBackPair {
    std::size_t frontRow = 0;
    std::size_t backRow = 0;
    double separationDeg = 180.0;
    int styleId = 0;
};

/// Sample `count` front/back pairs. `styleMix` is the fraction drawn from
/// non-default-style scenes; the rest come from style-0 scenes. Separations
/// land in [180 - jitterDeg, 180].
inline std::vector<FrontBackPair> buildPairCorpus(const data::Dataset& ds, int count, double styleMix, Rng& rng,
                                                  double jitterDeg = 10.0) {
    ORBITER360_CHECK(count >= 1 && styleMix >= 0.0 && styleMix <= 1.0 && jitterDeg >= 0.0,
                     "bad pair corpus request");
    std::vector<std::size_t> defaults, others;
    for (std::size_t i = 0; i < ds.scenes.size(); ++i)
        (ds.scenes[i].styleId == 0 ? defaults : others).push_back(i);
    if (styleMix > 0.0 && others.empty())
        throw DataError("style mix requested but the dataset has only the default style");
    if (styleMix < 1.0 && defaults.empty())
        throw DataError("default-style pairs requested but the dataset has none");

    std::vector<FrontBackPair> pairs;
    pairs.reserve(static_cast<std::size_t>(count));
    while (pairs.size() < static_cast<std::size_t>(count)) {
        const auto& pool = (rng.uniform() < styleMix) ? others : defaults;
        const auto& sc = ds.scenes[pool[rng.below(pool.size())]];

        std::vector<std::size_t> fronts;
        for (std::size_t r : sc.rows)
            if (scene::inFrontArc(ds.records[r].pose.azimuth)) fronts.push_back(r);
        if (fronts.empty()) throw DataError("scene has no front-arc view");
        std::size_t front = fronts[rng.below(fronts.size())];

        std::vector<std::size_t> backs;
        for (std::size_t r : sc.rows) {
            double sep = scene::azimuthSeparation(ds.records[r].pose.azimuth, ds.records[front].pose.azimuth);
            if (sep >= 180.0 - jitterDeg) backs.push_back(r);
        }
        if (backs.empty()) throw DataError("scene has no view opposite the front reference");
        std::size_t back = backs[rng.below(backs.size())];

        pairs.push_back({front, back,
                         scene::azimuthSeparation(ds.records[back].pose.azimuth, ds.records[front].pose.azimuth),
                         sc.styleId});
    }
    return pairs;
}

/// Nearest-style call for a rendered head. Surface shading multiplies the
/// palette by a 0.60-0.97 gain, so each foreground pixel is matched against
/// the gain-adjusted hair palettes and votes for the best residual.
/// Returns -1 when nothing matches any style.
inline int classifyHairStyle(const Image& im) {
    std::vector<float> fg = scene::foregroundMask(im);
    std::vector<int> votes(scene::kStyleCount, 0);
    for (Index i = 0; i < im.height * im.width; ++i) {
        if (fg[static_cast<std::size_t>(i)] < 0.5f) continue;
        const float* px = &im.rgb[static_cast<std::size_t>(i) * 3];
        int best = -1;
        float bestD = 0.085f; // just above the palette-jitter radius
        for (int s = 0; s < scene::kStyleCount; ++s) {
            scene::Color hair = scene::styleHair(s);
            float num = px[0] * hair[0] + px[1] * hair[1] + px[2] * hair[2];
            float den = hair[0] * hair[0] + hair[1] * hair[1] + hair[2] * hair[2];
            float gain = std::clamp(num / den, 0.55f, 1.05f);
            float d = std::sqrt((px[0] - gain * hair[0]) * (px[0] - gain * hair[0]) +
                                (px[1] - gain * hair[1]) * (px[1] - gain * hair[1]) +
                                (px[2] - gain * hair[2]) * (px[2] - gain * hair[2]));
            if (d < bestD) {
                bestD = d;
                best = s;
            }
        }
        if (best >= 0) ++votes[static_cast<std::size_t>(best)];
    }
    int arg = -1, most = 0;
    for (int s = 0; s < scene::kStyleCount; ++s)
        if (votes[static_cast<std::size_t>(s)] > most) {
            most = votes[static_cast<std::size_t>(s)];
            arg = s;
        }
    return arg;
}

} // namespace orbiter360::control
