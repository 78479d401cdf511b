// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>

#include "orbiter360/data/dataset.hpp"
#include "orbiter360/diffusion/schedule.hpp"
#include "orbiter360/nn/unet.hpp"

namespace orbiter360::control {

/// A batch of views from one scene, encoded to diffusion-space latents. When
/// `sequential` is set the rows walk the orbit: consecutive azimuth deltas
/// are all equal (mod 360).
struct ViewBatch {
    TensorF latents;                      ///< [N, C, h, w]
    std::vector<scene::CameraPose> poses; ///< one per view
    std::vector<std::size_t> rows;        ///< dataset rows, one per view
    bool sequential = false;
};

enum class BatchMode { sequential, shuffled };

/// Draw n views from one random scene and encode them. Sequential batches
/// walk the orbit from a random start (wrapping); shuffled batches pick n
/// distinct random views. A scene with fewer than n views is a data error.
inline ViewBatch makeTrainingBatch(const data::Dataset& ds, const nn::Autoencoder<float>& ae, BatchMode mode,
                                   int nViews, Rng& rng) {
    ORBITER360_CHECK(nViews >= 1, "batch needs at least one view");
    ORBITER360_CHECK(!ds.scenes.empty(), "dataset has no scenes");
    const auto& sc = ds.scenes[rng.below(ds.scenes.size())];
    const std::size_t R = sc.rows.size();
    if (R < static_cast<std::size_t>(nViews)) throw DataError("scene has fewer views than the requested batch");

    ViewBatch b;
    b.sequential = (mode == BatchMode::sequential);
    if (b.sequential) {
        std::size_t start = rng.below(R);
        for (int j = 0; j < nViews; ++j) b.rows.push_back(sc.rows[(start + static_cast<std::size_t>(j)) % R]);
    } else {
        std::vector<std::size_t> pool(sc.rows);
        rng.shuffle(pool);
        b.rows.assign(pool.begin(), pool.begin() + nViews);
    }

    std::vector<Image> ims;
    ims.reserve(b.rows.size());
    for (std::size_t r : b.rows) {
        ims.push_back(ds.loadImage(r));
        b.poses.push_back(ds.records[r].pose);
    }
    Tape<float> t(false);
    b.latents = ae.encode(t, t.input(imagesToTensor(ims)))->value;
    return b;
}

/// Attention across the view axis of an [N, tokens, C] stack.
template <typename S> Var<S> temporalAttend(Tape<S>& t, const nn::TemporalBlock<S>& block, Var<S> x) {
    ORBITER360_CHECK(x->value.rank() == 3, "view attention expects [views, tokens, channels]");
    return permute(t, block.attendViews(t, permute(t, x, {1, 0, 2})), {1, 0, 2});
}

/// Noise initialization anchored to geometry: encode each view's camera
/// condition and forward-diffuse it to tStart. Below T/2 too much proxy
/// signal survives into the sample; above T is out of range.
inline TensorF init3dAwareNoise(const std::vector<Image>& camConds, const nn::Autoencoder<float>& ae,
                                const diffusion::NoiseSchedule& sched, int tStart, Rng& rng) {
    ORBITER360_CHECK(!camConds.empty(), "no camera conditions");
    if (2 * tStart < sched.T || tStart > sched.T) throw ArgumentError("3D-aware start step must lie in [T/2, T]");
    Tape<float> t(false);
    TensorF z0 = ae.encode(t, t.input(imagesToTensor(camConds)))->value;
    TensorF eps = TensorF::randn(z0.shape(), rng);
    return diffusion::forwardDiffuse(z0, tStart, eps, sched);
}

/// Circular windows of `size` stepping by `size - overlap`, together covering
/// every view in [0, K). A short orbit collapses to one window.
inline std::vector<std::vector<int>> orbitWindows(int K, int size = 8, int overlap = 4) {
    ORBITER360_CHECK(K >= 1 && size >= 1 && overlap >= 0 && overlap < size, "bad window geometry");
    std::vector<std::vector<int>> ws;
    if (K <= size) {
        ws.emplace_back();
        for (int j = 0; j < K; ++j) ws.back().push_back(j);
        return ws;
    }
    for (int s = 0; s < K; s += size - overlap) {
        ws.emplace_back();
        for (int j = 0; j < size; ++j) ws.back().push_back((s + j) % K);
    }
    return ws;
}

/// Average the per-view slices produced by overlapping windows back into a
/// [K, ...] tensor. Contributions are reduced in sorted window order, so the
/// result does not depend on the order the windows were run in.
inline TensorF mergeWindowPredictions(int K, std::vector<std::pair<std::vector<int>, TensorF>> parts) {
    ORBITER360_CHECK(K >= 1 && !parts.empty(), "nothing to merge");
    std::sort(parts.begin(), parts.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    Shape shape = parts[0].second.shape();
    shape[0] = K;
    TensorF out = TensorF::zeros(shape);
    std::vector<int> hits(static_cast<std::size_t>(K), 0);
    const Index viewElems = out.numel() / K;

    for (const auto& [window, pred] : parts) {
        ORBITER360_CHECK(pred.dim(0) == static_cast<Index>(window.size()), "window and prediction sizes differ");
        for (std::size_t j = 0; j < window.size(); ++j) {
            int view = window[j];
            ORBITER360_CHECK(view >= 0 && view < K, "window index out of range");
            float* dst = out.data() + static_cast<Index>(view) * viewElems;
            const float* src = pred.data() + static_cast<Index>(j) * viewElems;
            for (Index i = 0; i < viewElems; ++i) dst[i] += src[i];
            ++hits[static_cast<std::size_t>(view)];
        }
    }
    for (int v = 0; v < K; ++v) {
        if (hits[static_cast<std::size_t>(v)] == 0) throw IntegrationError("view not covered by any window");
        float inv = 1.0f / static_cast<float>(hits[static_cast<std::size_t>(v)]);
        float* dst = out.data() + static_cast<Index>(v) * viewElems;
        for (Index i = 0; i < viewElems; ++i) dst[i] *= inv;
    }
    return out;
}

} // namespace orbiter360::control
