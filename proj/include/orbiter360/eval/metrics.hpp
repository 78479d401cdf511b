// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "orbiter360/core/image.hpp"
#include "orbiter360/scene/scene.hpp"

namespace orbiter360::eval {

/// Peak signal-to-noise ratio in dB over the full frame, all channels.
/// Identical images (MSE < 1e-10) cap at 99 dB; the result is clamped to be
/// nonnegative. Shape mismatch raises ArgumentError.
double psnr(const Image& a, const Image& b);

/// Structural similarity with the standard 11x11 Gaussian window
/// (sigma 1.5, K1 0.01, K2 0.03, dynamic range 1), averaged over channels
/// and valid window positions. Symmetric; ssim(a,a) == 1 exactly.
double ssim(const Image& a, const Image& b);

/// Perceptual-distance proxy: L2 distance between the feature maps of a
/// small fixed seeded random convolutional stack. Zero iff inputs match.
/// Reported as lpips_proxy, never as LPIPS.
double lpipsProxy(const Image& a, const Image& b);

/// Frechet-distance proxy between Gaussians fitted to pooled features of
/// the same fixed random stack. Zero (within 1e-6) for identical sets;
/// empty sets raise ArgumentError. Reported as fid_proxy, never as FID.
double fidProxy(const std::vector<Image>& setA, const std::vector<Image>& setB);

/// Mean L1 distance between consecutive frames; the orbit smoothness probe.
/// Needs at least two frames.
double consecutiveL1(const std::vector<Image>& frames);

/// Frontal split exactly as reports partition views: |wrapped azimuth| < 90.
bool isFrontalAzimuth(double azimuthDeg);

struct ViewMetrics {
    int index = 0;
    scene::CameraPose pose;
    bool frontal = true;
    double psnr = 0.0;
    double ssim = 0.0;
    double lpipsProxy = 0.0;
    /// Degrees, or the pose-match sentinel (-1) when the view shows neither
    /// landmark the matcher keys on.
    double poseError = -1.0;
};

/// Mean metrics over one view subset. fidProxy is computed setwise over the
/// subset; poseError averages only non-sentinel views (poseCount of them).
/// Empty subsets keep count == 0 and NaN values.
struct SplitAggregate {
    int count = 0;
    double psnr = 0.0;
    double ssim = 0.0;
    double lpipsProxy = 0.0;
    double fidProxy = 0.0;
    int poseCount = 0;
    double poseError = 0.0;
};

struct MetricReport {
    /// Metrics integrate over the whole image; stated so reports are
    /// unambiguous about the evaluation region.
    std::string region = "full_frame";
    std::vector<ViewMetrics> views;
    SplitAggregate overall;
    SplitAggregate frontal;
    SplitAggregate back;
};

/// Scores generated views against ground truth at the given poses (all three
/// vectors must agree in length; at least one view). Pose errors are matched
/// against the predicted images; pass withPoseError=false to skip the probe.
MetricReport evaluateViews(const std::vector<Image>& predicted, const std::vector<Image>& groundTruth,
                           const std::vector<scene::CameraPose>& poses, bool withPoseError = true);

} // namespace orbiter360::eval
