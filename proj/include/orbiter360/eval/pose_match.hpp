// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "orbiter360/core/image.hpp"
#include "orbiter360/scene/scene.hpp"

namespace orbiter360::eval {

/// Returned by the pose probe when an image shows neither of the landmarks
/// it keys on (blank, saturated, or genuinely landmark-free view).
constexpr double kPoseErrorSentinel = -1.0;

/// Recovers the camera azimuth of an image by matching its landmark layout
/// (back tag and dark face region) against a cached bank of canonical
/// pose-proxy renders at 1-degree azimuth steps, rendered at the given
/// elevation and radius. Returns the best-matching bank azimuth in
/// [0, 360), or kPoseErrorSentinel when the image is degenerate.
double matchAzimuth(const Image& image, double elevation, double radius);

/// Angular distance in degrees ([0, 180]) between the matched and the
/// intended azimuth; kPoseErrorSentinel for degenerate images. Purely
/// geometric: no trained weights anywhere.
double poseError(const Image& generated, const scene::CameraPose& intended);

} // namespace orbiter360::eval
