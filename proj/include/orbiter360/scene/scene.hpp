// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <utility>
#include <vector>

#include "orbiter360/core/image.hpp"
#include "orbiter360/core/rng.hpp"

namespace orbiter360::scene {

/// Orbital camera: azimuth wraps modulo 360, elevation is clamped to the
/// sampled band, radius is the distance from the head center in units of the
/// head radius.
struct CameraPose {
    double azimuth = 0.0;
    double elevation = 0.0;
    double radius = 7.5;
};

constexpr double kDefaultRadius = 7.5;
constexpr double kMinElevation = -30.0;
constexpr double kMaxElevation = 30.0;
constexpr int kStyleCount = 6;

/// Wrap to [0, 360).
double wrapDeg(double a);
/// Wrap to (-180, 180].
double wrapSignedDeg(double a);
/// Smallest absolute azimuthal separation of two angles, in [0, 180].
double azimuthSeparation(double a, double b);
/// The open front arc: face markers exist exactly for these azimuths.
inline bool inFrontArc(double azimuth) { return std::abs(wrapSignedDeg(azimuth)) < 90.0; }

/// Exact-quadrant trigonometry in degrees; multiples of 90 map to exact
/// 0/±1 so mirrored cameras produce mirrored geometry bit for bit.
double sinDeg(double deg);
double cosDeg(double deg);

using Color = std::array<float, 3>;

/// Circular surface patch in spherical coordinates (degrees).
struct SurfaceSpot {
    double azimuth = 0.0;
    double elevation = 0.0;
    double radius = 10.0;
};

/// Fully determined recipe for one head: identical seed and style render to
/// identical bytes.
struct SceneSpec {
    std::uint64_t seed = 0;
    int style_id = 0;
    std::vector<SurfaceSpot> face_layout;
    double hair_front_boundary = 90.0;
    double hair_top_boundary = 32.0;
    double base_radius = 1.0;
    Color skin{};
    Color hair{};
    SurfaceSpot ornament;
    Color ornament_color{};
};

SceneSpec makeSceneSpec(std::uint64_t seed, int style_id);

/// Style palette anchors (before per-seed jitter), used both by the
/// generator and by the evaluation-side palette classifier.
Color styleSkin(int style_id);
Color styleHair(int style_id);

/// Fixed colors shared by every scene.
Color markerColor();
Color backTagColor();
Color backgroundColor();

struct ViewSample {
    Image image;
    CameraPose pose;
    Image cam_condition;
};

struct ViewSequence {
    std::vector<ViewSample> samples;
    double step_deg = 0.0;
};

/// Ray-traced scene render; deterministic, values in [0,1].
/// Face markers appear iff the camera azimuth lies strictly inside the
/// front arc.
Image renderView(const SceneSpec& scene, const CameraPose& pose, Index resolution);

/// Pose-conditioning proxy: canonical untextured head plus a plumb ball
/// hanging below it. Identical for every scene; foreground area varies
/// strictly monotonically with elevation at any fixed azimuth.
Image renderCamCondition(const CameraPose& pose, Index resolution);

/// Foreground coverage of the canonical proxy in [0,1] per pixel,
/// supersampled like the renders.
TensorF renderCanonicalMask(const CameraPose& pose, Index resolution);

ViewSequence sampleSequence(const SceneSpec& scene, Index n, double startAzimuth, double stepDeg, Index resolution,
                            double elevation = 0.0, double radius = kDefaultRadius);

/// Pinhole geometry of the render camera, exposed so consumers (e.g. the
/// radiance fitter) cast rays through exactly the pixels the renderer shades.
struct CameraFrame {
    std::array<double, 3> position{};
    std::array<double, 3> forward{};
    std::array<double, 3> right{};
    std::array<double, 3> up{};
};

constexpr double kTanHalfFovScene = 0.34;

CameraFrame cameraFrame(const CameraPose& pose);

/// Unit direction through the center of pixel (px, py) on a res x res image.
std::array<double, 3> pixelRay(const CameraFrame& cam, Index py, Index px, Index res);

/// Reference pair mining: a front-like view plus a far-separated view, with
/// seeded jitter so repeated draws do not collapse to one fixed pair.
std::pair<std::size_t, std::size_t> mineReferencePairIndices(const std::vector<CameraPose>& poses,
                                                             const CameraPose& target, std::uint64_t seed,
                                                             double minSeparation = 150.0);
std::pair<ViewSample, ViewSample> mineReferencePair(const std::vector<ViewSample>& pool, const CameraPose& target,
                                                    std::uint64_t seed, double minSeparation = 150.0);

/// Pixel classifiers shared by invariants and evaluation.
int countMarkerPixels(const Image& im);
int countTagPixels(const Image& im);
/// Per-pixel foreground confidence (distance from the background color).
std::vector<float> foregroundMask(const Image& im);
double foregroundArea(const Image& im);

} // namespace orbiter360::scene
