// SPDX-License-Identifier: Apache-2.0
#include "orbiter360/scene/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "orbiter360/core/error.hpp"

namespace orbiter360::scene {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTanHalfFov = kTanHalfFovScene;
constexpr double kPlumbDrop = 1.9;
constexpr double kPlumbRadius = 0.45;
constexpr Color kMarker = {0.02f, 0.02f, 0.05f};
constexpr Color kBackTag = {0.99f, 0.99f, 0.97f};
constexpr Color kBackgroundColor = {0.63f, 0.67f, 0.72f};
constexpr Color kCanonicalBase = {0.55f, 0.55f, 0.58f};
constexpr Color kCanonicalFront = {0.12f, 0.12f, 0.16f};
constexpr double kBackTagAzimuth = 160.0;
constexpr double kBackTagRadius = 15.0;

struct Vec3 {
    double x = 0, y = 0, z = 0;
};

Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3 cross(Vec3 a, Vec3 b) { return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x}; }
Vec3 normalize(Vec3 a) {
    double n = std::sqrt(dot(a, a));
    return {a.x / n, a.y / n, a.z / n};
}

void sincosDeg(double deg, double& s, double& c) {
    double w = deg - 360.0 * std::floor(deg / 360.0);
    int q = static_cast<int>(std::floor((w + 45.0) / 90.0)) % 4;
    double r = (w - 90.0 * q) * kPi / 180.0;
    double sr = std::sin(r), cr = std::cos(r);
    switch (q) {
    case 0: s = sr; c = cr; break;
    case 1: s = cr; c = -sr; break;
    case 2: s = -sr; c = -cr; break;
    default: s = -cr; c = sr; break;
    }
}

struct Camera {
    Vec3 pos, fwd, right, up;
};

Camera makeCamera(const CameraPose& pose) {
    ORBITER360_CHECK(std::isfinite(pose.azimuth) && std::isfinite(pose.elevation) && std::isfinite(pose.radius) &&
                         pose.radius > 0,
                     "camera pose must be finite with positive radius");
    double sa, ca, se, ce;
    sincosDeg(pose.azimuth, sa, ca);
    sincosDeg(pose.elevation, se, ce);
    Camera cam;
    cam.pos = {pose.radius * ce * ca, pose.radius * ce * sa, pose.radius * se};
    cam.fwd = normalize(-1.0 * cam.pos);
    cam.right = normalize(cross(cam.fwd, Vec3{0, 0, 1}));
    cam.up = cross(cam.right, cam.fwd);
    return cam;
}

void checkResolution(Index res) {
    if (res != 32 && res != 64 && res != 128)
        throw ConfigError("unsupported render resolution " + std::to_string(res) + " (expected 32, 64 or 128)");
}

/// Nearest forward intersection of a ray with a sphere; negative if none.
double hitSphere(Vec3 origin, Vec3 dir, Vec3 center, double radius) {
    Vec3 oc = origin - center;
    double b = dot(oc, dir);
    double c = dot(oc, oc) - radius * radius;
    double disc = b * b - c;
    if (disc < 0) return -1.0;
    double t = -b - std::sqrt(disc);
    return t > 0 ? t : -1.0;
}

double angularDistanceDeg(double az1, double el1, double az2, double el2) {
    double s1, c1, s2, c2, se1, ce1, se2, ce2;
    sincosDeg(az1, s1, c1);
    sincosDeg(el1, se1, ce1);
    sincosDeg(az2, s2, c2);
    sincosDeg(el2, se2, ce2);
    double d = ce1 * c1 * ce2 * c2 + ce1 * s1 * ce2 * s2 + se1 * se2;
    return std::acos(std::clamp(d, -1.0, 1.0)) * 180.0 / kPi;
}

struct Shaded {
    Color color;
    bool applyShade = true;
};

/// Scene surface color at a unit-sphere point, before shading. The decal
/// rule for face markers keys off the camera azimuth so the marker set is
/// exactly the open front arc.
Shaded sceneSurface(const SceneSpec& scene, double saz, double sel, bool markersOn) {
    if (markersOn)
        for (const auto& spot : scene.face_layout)
            if (angularDistanceDeg(saz, sel, spot.azimuth, spot.elevation) <= spot.radius)
                return {kMarker, false};
    if (angularDistanceDeg(saz, sel, kBackTagAzimuth, 0.0) <= kBackTagRadius) return {kBackTag, false};
    if (angularDistanceDeg(saz, sel, scene.ornament.azimuth, scene.ornament.elevation) <= scene.ornament.radius)
        return {scene.ornament_color, true};
    if (std::abs(saz) >= scene.hair_front_boundary || sel >= scene.hair_top_boundary) return {scene.hair, true};
    return {scene.skin, true};
}

Shaded canonicalSurface(double saz, double sel) {
    if (angularDistanceDeg(saz, sel, 0.0, 0.0) <= 35.0) return {kCanonicalFront, true};
    if (angularDistanceDeg(saz, sel, kBackTagAzimuth, 0.0) <= kBackTagRadius) return {kBackTag, false};
    return {kCanonicalBase, true};
}

enum class Mode { Scene, Canonical, CanonicalMask };

/// Shared 3x3-supersampled tracer for scene renders, the canonical pose
/// proxy, and its coverage mask.
void trace(const SceneSpec* scene, const CameraPose& pose, Index res, Mode mode, Image* outImage, TensorF* outMask) {
    checkResolution(res);
    Camera cam = makeCamera(pose);
    const bool markersOn = scene != nullptr && inFrontArc(pose.azimuth);
    const double headR = scene ? scene->base_radius : 1.0;
    const Vec3 plumbCenter{0, 0, -kPlumbDrop};
    const bool canonical = mode != Mode::Scene;
    static const double off[3] = {-1.0 / 3.0, 0.0, 1.0 / 3.0};

    for (Index py = 0; py < res; ++py)
        for (Index px = 0; px < res; ++px) {
            double r = 0, g = 0, b = 0, cov = 0;
            for (int sy = 0; sy < 3; ++sy)
                for (int sx = 0; sx < 3; ++sx) {
                    double xn = (2.0 * (px + 0.5) / res - 1.0 + 2.0 * off[sx] / res) * kTanHalfFov;
                    double yn = (1.0 - 2.0 * (py + 0.5) / res - 2.0 * off[sy] / res) * kTanHalfFov;
                    Vec3 dir = normalize(cam.fwd + xn * cam.right + yn * cam.up);

                    double tHead = hitSphere(cam.pos, dir, Vec3{0, 0, 0}, headR);
                    double tBall = canonical ? hitSphere(cam.pos, dir, plumbCenter, kPlumbRadius) : -1.0;
                    double t = -1.0;
                    bool ball = false;
                    if (tHead > 0 && (tBall <= 0 || tHead <= tBall)) t = tHead;
                    else if (tBall > 0) t = tBall, ball = true;

                    if (t <= 0) {
                        r += kBackgroundColor[0];
                        g += kBackgroundColor[1];
                        b += kBackgroundColor[2];
                        continue;
                    }
                    cov += 1.0;
                    if (mode == Mode::CanonicalMask) continue;

                    Vec3 p = cam.pos + t * dir;
                    Vec3 n = ball ? normalize(p - plumbCenter) : normalize((1.0 / headR) * p);
                    double facing = std::max(0.0, -dot(dir, n));
                    double shade = 0.60 + 0.37 * facing;

                    Shaded s{kCanonicalBase, true};
                    if (ball) {
                        s = {kCanonicalBase, true};
                    } else {
                        double saz = std::atan2(p.y, p.x) * 180.0 / kPi;
                        double sel = std::asin(std::clamp(p.z / headR, -1.0, 1.0)) * 180.0 / kPi;
                        s = canonical ? canonicalSurface(saz, sel) : sceneSurface(*scene, saz, sel, markersOn);
                    }
                    double f = s.applyShade ? shade : 1.0;
                    r += s.color[0] * f;
                    g += s.color[1] * f;
                    b += s.color[2] * f;
                }
            if (mode == Mode::CanonicalMask) {
                outMask->at(py, px) = static_cast<float>(cov / 9.0);
            } else {
                float* dst = outImage->px(py, px);
                dst[0] = static_cast<float>(r / 9.0);
                dst[1] = static_cast<float>(g / 9.0);
                dst[2] = static_cast<float>(b / 9.0);
            }
        }
}

Color jitterColor(Color base, Rng& rng, float lo, float hi, double amount = 0.05) {
    Color out;
    for (int i = 0; i < 3; ++i)
        out[i] = std::clamp(base[i] + static_cast<float>(rng.uniform(-amount, amount)), lo, hi);
    return out;
}

float colorDistance(const Color& a, const Color& b) {
    float d0 = a[0] - b[0], d1 = a[1] - b[1], d2 = a[2] - b[2];
    return std::sqrt(d0 * d0 + d1 * d1 + d2 * d2);
}

} // namespace

double wrapDeg(double a) {
    double w = std::fmod(a, 360.0);
    return w < 0 ? w + 360.0 : w;
}

double wrapSignedDeg(double a) {
    double w = wrapDeg(a);
    return w > 180.0 ? w - 360.0 : w;
}

double azimuthSeparation(double a, double b) { return std::abs(wrapSignedDeg(a - b)); }

double sinDeg(double deg) {
    double s, c;
    sincosDeg(deg, s, c);
    return s;
}

double cosDeg(double deg) {
    double s, c;
    sincosDeg(deg, s, c);
    return c;
}

Color styleSkin(int style_id) {
    static const Color skins[kStyleCount] = {{0.95f, 0.80f, 0.70f}, {0.85f, 0.65f, 0.50f}, {0.70f, 0.52f, 0.42f},
                                             {0.62f, 0.47f, 0.40f}, {0.90f, 0.78f, 0.72f}, {0.76f, 0.60f, 0.55f}};
    ORBITER360_CHECK(style_id >= 0 && style_id < kStyleCount, "style_id out of range");
    return skins[style_id];
}

Color styleHair(int style_id) {
    static const Color hairs[kStyleCount] = {{0.90f, 0.80f, 0.35f}, {0.46f, 0.32f, 0.30f}, {0.75f, 0.36f, 0.30f},
                                             {0.35f, 0.55f, 0.85f}, {0.40f, 0.80f, 0.45f}, {0.80f, 0.45f, 0.80f}};
    ORBITER360_CHECK(style_id >= 0 && style_id < kStyleCount, "style_id out of range");
    return hairs[style_id];
}

Color markerColor() { return kMarker; }
Color backTagColor() { return kBackTag; }
Color backgroundColor() { return kBackgroundColor; }

SceneSpec makeSceneSpec(std::uint64_t seed, int style_id) {
    ORBITER360_CHECK(style_id >= 0 && style_id < kStyleCount, "style_id out of range");
    SceneSpec s;
    s.seed = seed;
    s.style_id = style_id;

    Rng root(seed);
    Rng face = root.fork("face-layout");
    double eyeAz = 24.0 + face.uniform(-2.0, 2.0);
    double eyeEl = 12.0 + face.uniform(-2.0, 2.0);
    double eyeR = 11.0 + face.uniform(-1.0, 1.0);
    double mouthEl = -20.0 + face.uniform(-2.0, 2.0);
    double mouthR = 10.0 + face.uniform(-1.0, 1.0);
    s.face_layout = {{+eyeAz, eyeEl, eyeR}, {-eyeAz, eyeEl, eyeR}, {0.0, mouthEl, mouthR}};

    Rng palette = root.fork("palette");
    s.skin = jitterColor(styleSkin(style_id), palette, 0.40f, 0.92f);
    s.hair = jitterColor(styleHair(style_id), palette, 0.30f, 0.92f);
    s.hair_front_boundary = 90.0;
    s.hair_top_boundary = 30.0 + 2.0 * (style_id % 3) + palette.uniform(0.0, 2.0);

    Rng orn = root.fork("ornament");
    s.ornament.azimuth = 180.0 + orn.uniform(-25.0, 25.0);
    s.ornament.elevation = orn.uniform(-15.0, 15.0);
    s.ornament.radius = orn.uniform(12.0, 18.0);
    for (int attempt = 0; attempt < 16; ++attempt) {
        Color c = {static_cast<float>(orn.uniform(0.30, 0.90)), static_cast<float>(orn.uniform(0.30, 0.90)),
                   static_cast<float>(orn.uniform(0.30, 0.90))};
        if (colorDistance(c, s.hair) >= 0.25f || attempt == 15) {
            s.ornament_color = c;
            break;
        }
    }
    return s;
}

Image renderView(const SceneSpec& scene, const CameraPose& pose, Index resolution) {
    Image im(resolution, resolution);
    trace(&scene, pose, resolution, Mode::Scene, &im, nullptr);
    return im;
}

Image renderCamCondition(const CameraPose& pose, Index resolution) {
    Image im(resolution, resolution);
    trace(nullptr, pose, resolution, Mode::Canonical, &im, nullptr);
    return im;
}

TensorF renderCanonicalMask(const CameraPose& pose, Index resolution) {
    checkResolution(resolution);
    TensorF mask({resolution, resolution});
    trace(nullptr, pose, resolution, Mode::CanonicalMask, nullptr, &mask);
    return mask;
}

ViewSequence sampleSequence(const SceneSpec& scene, Index n, double startAzimuth, double stepDeg, Index resolution,
                            double elevation, double radius) {
    if (n < 1) throw ArgumentError("sampleSequence: need at least one view");
    if (stepDeg == 0.0) throw ArgumentError("sampleSequence: step must be nonzero");
    ViewSequence seq;
    seq.step_deg = stepDeg;
    seq.samples.reserve(static_cast<std::size_t>(n));
    for (Index k = 0; k < n; ++k) {
        CameraPose pose{wrapDeg(startAzimuth + static_cast<double>(k) * stepDeg), elevation, radius};
        ViewSample sample;
        sample.pose = pose;
        sample.image = renderView(scene, pose, resolution);
        sample.cam_condition = renderCamCondition(pose, resolution);
        seq.samples.push_back(std::move(sample));
    }
    return seq;
}

CameraFrame cameraFrame(const CameraPose& pose) {
    Camera cam = makeCamera(pose);
    return {{cam.pos.x, cam.pos.y, cam.pos.z},
            {cam.fwd.x, cam.fwd.y, cam.fwd.z},
            {cam.right.x, cam.right.y, cam.right.z},
            {cam.up.x, cam.up.y, cam.up.z}};
}

std::array<double, 3> pixelRay(const CameraFrame& cam, Index py, Index px, Index res) {
    double xn = (2.0 * (px + 0.5) / res - 1.0) * kTanHalfFovScene;
    double yn = (1.0 - 2.0 * (py + 0.5) / res) * kTanHalfFovScene;
    Vec3 dir = normalize(Vec3{cam.forward[0], cam.forward[1], cam.forward[2]} +
                         xn * Vec3{cam.right[0], cam.right[1], cam.right[2]} +
                         yn * Vec3{cam.up[0], cam.up[1], cam.up[2]});
    return {dir.x, dir.y, dir.z};
}

std::pair<std::size_t, std::size_t> mineReferencePairIndices(const std::vector<CameraPose>& poses,
                                                             const CameraPose& target, std::uint64_t seed,
                                                             double minSeparation) {
    if (poses.empty()) throw DataError("reference mining: empty pool");
    Rng rng(seed);

    // Front-like candidates: inside the front arc when possible, excluding
    // the exact target azimuth unless nothing else remains.
    std::vector<std::size_t> front;
    for (std::size_t i = 0; i < poses.size(); ++i)
        if (inFrontArc(poses[i].azimuth)) front.push_back(i);
    if (front.empty())
        for (std::size_t i = 0; i < poses.size(); ++i) front.push_back(i);
    std::vector<std::size_t> nonTarget;
    for (std::size_t i : front)
        if (azimuthSeparation(poses[i].azimuth, target.azimuth) > 1e-9) nonTarget.push_back(i);
    if (!nonTarget.empty()) front = std::move(nonTarget);
    std::sort(front.begin(), front.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(wrapSignedDeg(poses[a].azimuth)) < std::abs(wrapSignedDeg(poses[b].azimuth));
    });
    if (front.size() > 3) front.resize(3);

    // Try front candidates in jittered order until one admits a partner at
    // the required separation.
    rng.shuffle(front);
    for (std::size_t f : front) {
        std::vector<std::size_t> partners;
        for (std::size_t i = 0; i < poses.size(); ++i)
            if (i != f && azimuthSeparation(poses[i].azimuth, poses[f].azimuth) >= minSeparation)
                partners.push_back(i);
        if (!partners.empty()) return {f, partners[rng.below(partners.size())]};
    }
    throw DataError("reference mining: pool azimuth span too narrow for requested separation");
}

std::pair<ViewSample, ViewSample> mineReferencePair(const std::vector<ViewSample>& pool, const CameraPose& target,
                                                    std::uint64_t seed, double minSeparation) {
    std::vector<CameraPose> poses;
    poses.reserve(pool.size());
    for (const auto& s : pool) poses.push_back(s.pose);
    auto [f, b] = mineReferencePairIndices(poses, target, seed, minSeparation);
    return {pool[f], pool[b]};
}

int countMarkerPixels(const Image& im) {
    int count = 0;
    for (Index i = 0; i < im.height * im.width; ++i) {
        Color c = {im.rgb[i * 3], im.rgb[i * 3 + 1], im.rgb[i * 3 + 2]};
        if (colorDistance(c, kMarker) < 0.25f) ++count;
    }
    return count;
}

int countTagPixels(const Image& im) {
    int count = 0;
    for (Index i = 0; i < im.height * im.width; ++i) {
        Color c = {im.rgb[i * 3], im.rgb[i * 3 + 1], im.rgb[i * 3 + 2]};
        if (colorDistance(c, kBackTag) < 0.15f) ++count;
    }
    return count;
}

std::vector<float> foregroundMask(const Image& im) {
    std::vector<float> mask(static_cast<std::size_t>(im.height * im.width));
    for (Index i = 0; i < im.height * im.width; ++i) {
        Color c = {im.rgb[i * 3], im.rgb[i * 3 + 1], im.rgb[i * 3 + 2]};
        mask[static_cast<std::size_t>(i)] = std::min(1.0f, colorDistance(c, kBackgroundColor) / 0.12f);
    }
    return mask;
}

double foregroundArea(const Image& im) {
    auto mask = foregroundMask(im);
    double area = 0;
    for (float v : mask) area += v;
    return area;
}

} // namespace orbiter360::scene
