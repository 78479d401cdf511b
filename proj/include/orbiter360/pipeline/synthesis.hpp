// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>

#include "orbiter360/pipeline/bundle.hpp"

namespace orbiter360::pipeline {

struct SynthesisOptions {
    int views = 36;              ///< orbit length
    double elevation = 0.0;
    int steps = 50;              ///< denoising steps
    double eta = 0.0;            ///< 0 = deterministic sampler
    double tStartFraction = 0.7; ///< partial-denoise start used with 3D noise
    bool appearance = true;      ///< identity anchor; turning it off is a usage error
    bool useBack = true;         ///< synthesize a back reference and anchor on it
    bool threeDNoise = true;     ///< camera-consistent noise initialization
    bool temporal = true;        ///< cross-view attention while denoising
    CameraMode cameraMode = CameraMode::image;
    std::uint64_t seed = 0;
};

struct SynthesisResult {
    std::vector<Image> views;
    std::vector<scene::CameraPose> poses;
    std::optional<Image> back;  ///< generated back reference, when enabled
    std::string provenanceJson; ///< run record; byte-identical across reruns
};

/// K camera poses evenly spaced around the orbit at a fixed elevation.
std::vector<scene::CameraPose> orbitTrajectory(int K, double elevation = 0.0);

/// Denoise a full orbit around the subject shown in `reference`.
SynthesisResult synthesizeOrbit(const ModelBundle& b, const Image& reference, const SynthesisOptions& opt);

/// One view at an arbitrary pose; bit-identical to a one-view orbit at the
/// same pose and options.
Image synthesizeView(const ModelBundle& b, const Image& reference, const scene::CameraPose& pose,
                     const SynthesisOptions& opt);

/// Hallucinate the back of the head from a front reference, always at the
/// fixed (180, 0) pose and the reference's resolution. Requires a trained
/// back-view stage; deterministic in (reference, seed).
Image generateBackView(const ModelBundle& b, const Image& reference, std::uint64_t seed);

/// Tile frames left-to-right, top-to-bottom into one sheet.
Image contactSheet(const std::vector<Image>& frames, int columns = 6);

/// Write view_###.png, back.png (when present), sheet.png and provenance.json.
void writeSynthesis(const SynthesisResult& r, const std::filesystem::path& dir);

} // namespace orbiter360::pipeline
