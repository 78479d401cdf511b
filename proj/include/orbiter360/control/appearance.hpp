// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>

#include "orbiter360/data/dataset.hpp"
#include "orbiter360/nn/unet.hpp"

namespace orbiter360::control {

/// Attention keys/values captured from one reference forward pass, one entry
/// per self-attention site.
template <typename S> struct ReferenceFeatures {
    std::string source; ///< "front" / "back" / "generated", for provenance
    std::map<std::string, nn::SiteKV<S>> sites;
};

/// The appearance anchors for a denoise pass: a front reference plus an
/// optional back reference. Without `back` the conditioning reduces to the
/// single-reference form bit for bit.
template <typename S> struct DualAppearanceContext {
    ReferenceFeatures<S> front;
    std::optional<ReferenceFeatures<S>> back;
    double separationDeg = 0.0; ///< azimuth separation of the mined pair
};

/// Run the reference branch on a noised reference latent at the same
/// timesteps as the main pass and capture its self-attention keys/values.
template <typename S>
ReferenceFeatures<S> extractReferenceFeatures(Tape<S>& t, const nn::UNet<S>& refNet, Var<S> zRef,
                                              const std::vector<int>& tsteps, std::string source) {
    ReferenceFeatures<S> out;
    out.source = std::move(source);
    nn::Conditioning<S> cond;
    cond.collectKV = &out.sites;
    refNet.forward(t, zRef, tsteps, cond);
    return out;
}

/// Per-site reference lists in [front, back] order for Conditioning::refKV.
/// A site's own keys stay first, so attention runs over [self, front, back].
template <typename S>
std::map<std::string, std::vector<nn::SiteKV<S>>> referenceConditioning(const DualAppearanceContext<S>& ctx) {
    if (ctx.back && ctx.back->sites.size() != ctx.front.sites.size())
        throw IntegrationError("front and back references cover different attention sites");
    std::map<std::string, std::vector<nn::SiteKV<S>>> kv;
    for (const auto& [site, f] : ctx.front.sites) {
        auto& list = kv[site];
        list.push_back(f);
        if (ctx.back) {
            auto it = ctx.back->sites.find(site);
            if (it == ctx.back->sites.end())
                throw IntegrationError("back reference missing attention site: " + site);
            list.push_back(it->second);
        }
    }
    return kv;
}

/// One appearance training sample: which dataset rows act as the denoise
/// target and as the front/back references.
struct PairPlan {
    std::size_t targetRow = 0;
    std::size_t frontRow = 0;
    std::size_t backRow = 0;
    double separationDeg = 0.0; ///< front/back azimuth separation
    bool dropBack = false;      ///< back reference withheld this sample
};

/// Draw a training sample from one scene: random target, mined front/back
/// reference pair at >= minSeparation, and a back-dropout coin so the model
/// keeps working from a single reference.
inline PairPlan planTrainingPair(const data::Dataset& ds, std::size_t sceneIndex, Rng& rng,
                                 double backDropout = 0.1, double minSeparation = 150.0) {
    ORBITER360_CHECK(sceneIndex < ds.scenes.size(), "scene index out of range");
    const auto& sc = ds.scenes[sceneIndex];
    if (sc.rows.size() < 3) throw DataError("scene has too few views for reference mining");

    std::vector<scene::CameraPose> poses;
    poses.reserve(sc.rows.size());
    for (std::size_t r : sc.rows) poses.push_back(ds.records[r].pose);

    PairPlan p;
    std::size_t local = rng.below(sc.rows.size());
    p.targetRow = sc.rows[local];
    auto [f, b] = scene::mineReferencePairIndices(poses, poses[local], rng.below(1u << 30), minSeparation);
    p.frontRow = sc.rows[f];
    p.backRow = sc.rows[b];
    p.separationDeg = scene::azimuthSeparation(poses[f].azimuth, poses[b].azimuth);
    p.dropBack = rng.uniform() < backDropout;
    return p;
}

/// Assemble the dual context for one training step. `zBack` may be null
/// (dropout or no back view available); the front tag still records the
/// mined separation.
template <typename S>
DualAppearanceContext<S> buildTrainingContext(Tape<S>& t, const nn::UNet<S>& refNet, Var<S> zFront, Var<S> zBack,
                                              const std::vector<int>& tsteps, double separationDeg) {
    DualAppearanceContext<S> ctx;
    ctx.front = extractReferenceFeatures(t, refNet, zFront, tsteps, "front");
    if (zBack != nullptr) ctx.back = extractReferenceFeatures(t, refNet, zBack, tsteps, "back");
    ctx.separationDeg = separationDeg;
    return ctx;
}

} // namespace orbiter360::control
