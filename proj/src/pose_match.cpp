// SPDX-License-Identifier: Apache-2.0
#include "orbiter360/eval/pose_match.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <tuple>
#include <vector>

#include "orbiter360/core/error.hpp"

namespace orbiter360::eval {

namespace {

/// One landmark blob: fractional linear size plus centroid in units of the
/// half image, relative to the image center (where the head disc always
/// sits, since every camera looks at the head).
struct Landmark {
    bool present = false;
    double size = 0.0;
    double x = 0.0;
    double y = 0.0;
};

struct Descriptor {
    Landmark tag;  ///< near-white back tag, identical across render modes
    Landmark dark; ///< face markers (scene) or the dark front patch (proxy)
};

bool isTagColor(const float* c) {
    scene::Color tag = scene::backTagColor();
    double d0 = c[0] - tag[0], d1 = c[1] - tag[1], d2 = c[2] - tag[2];
    return d0 * d0 + d1 * d1 + d2 * d2 < 0.15 * 0.15;
}

/// Dark face region: catches the exact marker color and the shaded front
/// patch of the canonical proxy while rejecting every shaded scene palette
/// (whose channels stay above 0.18).
bool isDarkColor(const float* c) { return c[0] < 0.17f && c[1] < 0.17f && c[2] < 0.21f; }

Landmark summarize(const std::vector<std::pair<Index, Index>>& pixels, Index res) {
    Landmark lm;
    // Blobs beyond a tenth of the frame are not landmarks (saturated or
    // degenerate images), and fewer than three pixels is classifier noise.
    if (pixels.size() < 3 || pixels.size() > static_cast<std::size_t>(res * res) / 10) return lm;
    double cx = 0, cy = 0;
    for (auto [y, x] : pixels) {
        cy += y;
        cx += x;
    }
    cx /= static_cast<double>(pixels.size());
    cy /= static_cast<double>(pixels.size());
    const double center = (res - 1) / 2.0;
    const double half = res / 2.0;
    lm.present = true;
    lm.size = std::sqrt(static_cast<double>(pixels.size())) / res;
    lm.x = (cx - center) / half;
    lm.y = (cy - center) / half;
    return lm;
}

Descriptor extract(const Image& im) {
    std::vector<std::pair<Index, Index>> tagPx, darkPx;
    for (Index y = 0; y < im.height; ++y)
        for (Index x = 0; x < im.width; ++x) {
            const float* c = im.px(y, x);
            if (isTagColor(c)) tagPx.emplace_back(y, x);
            else if (isDarkColor(c)) darkPx.emplace_back(y, x);
        }
    Descriptor d;
    d.tag = summarize(tagPx, im.height);
    d.dark = summarize(darkPx, im.height);
    return d;
}

double landmarkTerm(const Landmark& q, const Landmark& b, double sizeWeight) {
    if (q.present && b.present) {
        double dx = q.x - b.x, dy = q.y - b.y, ds = q.size - b.size;
        return dx * dx + dy * dy + sizeWeight * ds * ds;
    }
    if (q.present != b.present) {
        // Losing a landmark must cost more than any positional mismatch, or
        // degenerate bank entries (both landmarks out of view) win by
        // default; the floor keeps that true even for grazing slivers.
        double s = q.size + b.size;
        return std::max(4.0 * s * s, 0.04);
    }
    return 0.0;
}

/// The tag is pixel-identical between scene renders and the proxy bank, so
/// it anchors the match (position and size) wherever it is visible. The dark
/// landmark covers the front arc; its apparent size differs between face
/// markers and the proxy's front patch, so only its position is compared.
double score(const Descriptor& q, const Descriptor& b) {
    return 4.0 * landmarkTerm(q.tag, b.tag, 1.0) + landmarkTerm(q.dark, b.dark, 0.0);
}

using BankKey = std::tuple<Index, long long, long long>;

struct BankEntry {
    Descriptor desc;
    Image proxy; ///< kept for tie-breaking between equal-score entries
};

const std::vector<BankEntry>& bankFor(Index res, double elevation, double radius) {
    static std::map<BankKey, std::vector<BankEntry>> banks;
    static std::mutex mutex;
    std::lock_guard<std::mutex> lock(mutex);
    BankKey key{res, std::llround(elevation * 1e4), std::llround(radius * 1e4)};
    auto it = banks.find(key);
    if (it != banks.end()) return it->second;
    std::vector<BankEntry> bank;
    bank.reserve(360);
    for (int az = 0; az < 360; ++az) {
        Image proxy = scene::renderCamCondition({static_cast<double>(az), elevation, radius}, res);
        bank.push_back({extract(proxy), std::move(proxy)});
    }
    return banks.emplace(key, std::move(bank)).first->second;
}

double pixelMse(const Image& a, const Image& b) {
    double sum = 0.0;
    for (Index y = 0; y < a.height; ++y)
        for (Index x = 0; x < a.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double d = static_cast<double>(a.px(y, x)[c]) - b.px(y, x)[c];
                sum += d * d;
            }
    return sum / (static_cast<double>(a.height) * a.width * 3.0);
}

} // namespace

double matchAzimuth(const Image& image, double elevation, double radius) {
    if (image.height != image.width || image.height < 1) throw ArgumentError("matchAzimuth: image must be square");
    Descriptor q = extract(image);
    if (!q.tag.present && !q.dark.present) return kPoseErrorSentinel;
    const auto& bank = bankFor(image.height, elevation, radius);
    // Landmark score first; exact ties (arcs where the landmarks carry no
    // information, e.g. slivers near the visibility horizon) fall back to
    // raw pixel distance, which makes matching a bank image to itself exact.
    int best = 0;
    double bestScore = score(q, bank[0].desc);
    double bestMse = pixelMse(image, bank[0].proxy);
    for (int az = 1; az < 360; ++az) {
        double s = score(q, bank[az].desc);
        if (s > bestScore) continue;
        double mse = pixelMse(image, bank[az].proxy);
        if (s < bestScore || mse < bestMse) {
            bestScore = s;
            bestMse = mse;
            best = az;
        }
    }
    return static_cast<double>(best);
}

double poseError(const Image& generated, const scene::CameraPose& intended) {
    double matched = matchAzimuth(generated, intended.elevation, intended.radius);
    if (matched == kPoseErrorSentinel) return kPoseErrorSentinel;
    return scene::azimuthSeparation(matched, intended.azimuth);
}

} // namespace orbiter360::eval
