// SPDX-License-Identifier: Apache-2.0
#include "orbiter360/eval/radiance.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "orbiter360/core/error.hpp"
#include "orbiter360/core/rng.hpp"
#include "orbiter360/eval/metrics.hpp"

namespace orbiter360::eval {

namespace {

constexpr double kGridHalf = 1.2;
constexpr char kGridMagic[] = "orbiter360-grid-v1\n";

double softplus(double s) { return s > 20.0 ? s : std::log1p(std::exp(s)); }
double sigmoid(double s) { return 1.0 / (1.0 + std::exp(-s)); }

struct Ray {
    std::array<double, 3> origin{};
    std::array<double, 3> dir{};
    double t0 = 0.0, t1 = 0.0;
    bool hits = false;
};

Ray makeRay(const scene::CameraFrame& cam, Index py, Index px, Index res) {
    Ray ray;
    ray.origin = cam.position;
    ray.dir = scene::pixelRay(cam, py, px, res);
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    for (int axis = 0; axis < 3; ++axis) {
        double o = ray.origin[axis], d = ray.dir[axis];
        if (std::abs(d) < 1e-12) {
            if (o < -kGridHalf || o > kGridHalf) return ray;
            continue;
        }
        double a = (-kGridHalf - o) / d;
        double b = (kGridHalf - o) / d;
        if (a > b) std::swap(a, b);
        t0 = std::max(t0, a);
        t1 = std::min(t1, b);
    }
    if (t0 >= t1) return ray;
    ray.t0 = t0;
    ray.t1 = t1;
    ray.hits = true;
    return ray;
}

/// Trilinear footprint of a point inside the grid box.
struct Taps {
    std::array<std::size_t, 8> idx{};
    std::array<double, 8> w{};
};

Taps tapsAt(int size, const std::array<double, 3>& p) {
    Taps taps;
    double u[3], f[3];
    int i0[3];
    for (int axis = 0; axis < 3; ++axis) {
        double coord = (p[axis] + kGridHalf) / (2.0 * kGridHalf) * (size - 1);
        coord = std::clamp(coord, 0.0, static_cast<double>(size - 1));
        i0[axis] = std::min(static_cast<int>(coord), size - 2);
        u[axis] = coord;
        f[axis] = coord - i0[axis];
    }
    int corner = 0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                taps.idx[corner] = (static_cast<std::size_t>(i0[2] + dz) * size + (i0[1] + dy)) * size + (i0[0] + dx);
                taps.w[corner] = (dx ? f[0] : 1.0 - f[0]) * (dy ? f[1] : 1.0 - f[1]) * (dz ? f[2] : 1.0 - f[2]);
                ++corner;
            }
    return taps;
}

struct SampleState {
    Taps taps;
    double s = 0.0;     ///< raw density at the sample
    double sigma = 0.0; ///< softplus(s)
    double alpha = 0.0;
    double trans = 1.0; ///< transmittance arriving at the sample
    std::array<double, 3> u{};     ///< raw color
    std::array<double, 3> color{}; ///< sigmoid(u)
    double t = 0.0;
};

struct RayResult {
    std::array<double, 3> color{};
    double depth01 = 0.0;
    bool hit = false;
};

/// Shared forward pass; fills `states` when a backward pass will follow.
RayResult traceRay(const RadianceGrid& grid, const Ray& ray, int samples, std::vector<SampleState>* states) {
    RayResult out;
    auto bg = scene::backgroundColor();
    if (!ray.hits) {
        out.color = {bg[0], bg[1], bg[2]};
        return out;
    }
    out.hit = true;
    const double delta = (ray.t1 - ray.t0) / samples;
    double trans = 1.0;
    std::array<double, 3> acc{};
    double depthAcc = 0.0;
    if (states) states->resize(static_cast<std::size_t>(samples));
    for (int i = 0; i < samples; ++i) {
        double t = ray.t0 + (i + 0.5) * delta;
        std::array<double, 3> p{ray.origin[0] + t * ray.dir[0], ray.origin[1] + t * ray.dir[1],
                                ray.origin[2] + t * ray.dir[2]};
        Taps taps = tapsAt(grid.size, p);
        double s = 0.0;
        std::array<double, 3> u{};
        for (int k = 0; k < 8; ++k) {
            s += taps.w[k] * grid.densityRaw[taps.idx[k]];
            for (int ch = 0; ch < 3; ++ch) u[ch] += taps.w[k] * grid.colorRaw[taps.idx[k] * 3 + ch];
        }
        double sigma = softplus(s);
        double h = std::min(sigma * delta, 30.0);
        double alpha = -std::expm1(-h);
        std::array<double, 3> color{sigmoid(u[0]), sigmoid(u[1]), sigmoid(u[2])};
        double weight = trans * alpha;
        for (int ch = 0; ch < 3; ++ch) acc[ch] += weight * color[ch];
        depthAcc += weight * t;
        if (states)
            (*states)[static_cast<std::size_t>(i)] = {taps, s, sigma, alpha, trans, u, color, t};
        trans *= 1.0 - alpha;
    }
    for (int ch = 0; ch < 3; ++ch) out.color[ch] = acc[ch] + trans * bg[ch];
    depthAcc += trans * ray.t1;
    out.depth01 = std::clamp((ray.t1 - depthAcc) / (ray.t1 - ray.t0), 0.0, 1.0);
    return out;
}

struct Gradients {
    std::vector<double> density;
    std::vector<double> color;
};

/// Backpropagates dL/dColor through the compositing chain into the raw
/// grids. `states` comes from traceRay on the same ray.
void backwardRay(const RadianceGrid& grid, const Ray& ray, const std::vector<SampleState>& states,
                 const std::array<double, 3>& dColor, Gradients& grads) {
    auto bg = scene::backgroundColor();
    const double delta = (ray.t1 - ray.t0) / static_cast<double>(states.size());
    // Suffix contribution: everything composited beyond sample i.
    double transEnd = states.empty() ? 1.0 : states.back().trans * (1.0 - states.back().alpha);
    std::array<double, 3> suffix{transEnd * bg[0], transEnd * bg[1], transEnd * bg[2]};
    for (std::size_t ri = states.size(); ri-- > 0;) {
        const SampleState& st = states[ri];
        double weight = st.trans * st.alpha;
        double dAlpha = 0.0;
        for (int ch = 0; ch < 3; ++ch) {
            double dc = dColor[ch] * weight;
            double du = dc * st.color[ch] * (1.0 - st.color[ch]);
            for (int k = 0; k < 8; ++k) grads.color[st.taps.idx[k] * 3 + ch] += du * st.taps.w[k];
            dAlpha += dColor[ch] * (st.trans * st.color[ch] - suffix[ch] / (1.0 - st.alpha));
        }
        double dSigma = dAlpha * delta * (1.0 - st.alpha);
        double ds = dSigma * sigmoid(st.s);
        for (int k = 0; k < 8; ++k) grads.density[st.taps.idx[k]] += ds * st.taps.w[k];
        for (int ch = 0; ch < 3; ++ch) suffix[ch] += weight * st.color[ch];
    }
}

double azimuthSpan(const std::vector<scene::CameraPose>& poses) {
    std::vector<double> az;
    az.reserve(poses.size());
    for (const auto& p : poses) az.push_back(scene::wrapDeg(p.azimuth));
    std::sort(az.begin(), az.end());
    double largestGap = 360.0 - az.back() + az.front();
    for (std::size_t i = 1; i < az.size(); ++i) largestGap = std::max(largestGap, az[i] - az[i - 1]);
    return 360.0 - largestGap;
}

void putU32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void putU64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void putFloats(std::vector<std::uint8_t>& out, const std::vector<float>& v) {
    std::size_t at = out.size();
    out.resize(at + v.size() * 4);
    std::memcpy(out.data() + at, v.data(), v.size() * 4);
}

} // namespace

double RadianceGrid::densityAt(int ix, int iy, int iz) const {
    std::size_t idx = (static_cast<std::size_t>(iz) * size + iy) * size + ix;
    return softplus(densityRaw[idx]);
}

RadianceFit fitRadianceGrid(const std::vector<Image>& views, const std::vector<scene::CameraPose>& poses,
                            const RadianceConfig& cfg) {
    if (views.size() != poses.size())
        throw ArgumentError("fitRadianceGrid: " + std::to_string(views.size()) + " views but " +
                            std::to_string(poses.size()) + " poses");
    if (views.size() < 8)
        throw ArgumentError("fitRadianceGrid: need at least 8 posed views, got " + std::to_string(views.size()));
    double span = azimuthSpan(poses);
    if (span < 180.0)
        throw ArgumentError("fitRadianceGrid: view azimuths span only " + std::to_string(span) +
                            " degrees (need at least 180)");
    if (cfg.gridSize < 4 || cfg.iterations < 1 || cfg.raysPerBatch < 1 || cfg.samplesPerRay < 2 ||
        cfg.learningRate <= 0.0f)
        throw ArgumentError("fitRadianceGrid: degenerate config");
    const Index res = views.front().height;
    for (const auto& v : views)
        if (v.height != res || v.width != res)
            throw ArgumentError("fitRadianceGrid: all views must be square images of one size");

    RadianceFit fit;
    RadianceGrid& grid = fit.grid;
    grid.size = cfg.gridSize;
    const std::size_t voxels = static_cast<std::size_t>(cfg.gridSize) * cfg.gridSize * cfg.gridSize;
    grid.densityRaw.assign(voxels, -2.0f);
    grid.colorRaw.assign(voxels * 3, 0.0f);

    std::vector<bool> held(views.size(), false);
    if (cfg.holdoutEvery > 0)
        for (std::size_t i = 0; i < views.size(); ++i)
            if (i % static_cast<std::size_t>(cfg.holdoutEvery) ==
                static_cast<std::size_t>(cfg.holdoutEvery / 2) % static_cast<std::size_t>(cfg.holdoutEvery))
                held[i] = true;

    // Precompute the trainable rays: pixels of training views that cross the
    // grid box.
    struct TrainRay {
        Ray ray;
        std::array<float, 3> target;
    };
    std::vector<TrainRay> pool;
    std::vector<scene::CameraFrame> frames;
    frames.reserve(views.size());
    for (const auto& pose : poses) frames.push_back(scene::cameraFrame(pose));
    for (std::size_t v = 0; v < views.size(); ++v) {
        if (held[v]) continue;
        for (Index py = 0; py < res; ++py)
            for (Index px = 0; px < res; ++px) {
                Ray ray = makeRay(frames[v], py, px, res);
                if (!ray.hits) continue;
                const float* y = views[v].px(py, px);
                pool.push_back({ray, {y[0], y[1], y[2]}});
            }
    }
    if (pool.empty()) throw ArgumentError("fitRadianceGrid: no view ray crosses the grid volume");

    Rng rng(fnv1a64(&cfg.seed, sizeof cfg.seed, fnv1a64("radiance:rays")));
    Gradients grads{std::vector<double>(voxels, 0.0), std::vector<double>(voxels * 3, 0.0)};
    std::vector<float> mDensity(voxels, 0.0f), vDensity(voxels, 0.0f);
    std::vector<float> mColor(voxels * 3, 0.0f), vColor(voxels * 3, 0.0f);
    std::vector<SampleState> states;

    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    fit.losses.reserve(static_cast<std::size_t>(cfg.iterations));
    for (int step = 0; step < cfg.iterations; ++step) {
        std::fill(grads.density.begin(), grads.density.end(), 0.0);
        std::fill(grads.color.begin(), grads.color.end(), 0.0);
        double loss = 0.0;
        const double norm = 1.0 / (static_cast<double>(cfg.raysPerBatch) * 3.0);
        for (int r = 0; r < cfg.raysPerBatch; ++r) {
            const TrainRay& tr = pool[static_cast<std::size_t>(rng.below(pool.size()))];
            RayResult res0 = traceRay(grid, tr.ray, cfg.samplesPerRay, &states);
            std::array<double, 3> dColor{};
            for (int ch = 0; ch < 3; ++ch) {
                double diff = res0.color[ch] - tr.target[ch];
                loss += diff * diff * norm;
                dColor[ch] = 2.0 * diff * norm;
            }
            backwardRay(grid, tr.ray, states, dColor, grads);
        }
        if (cfg.tvWeight > 0.0f) {
            const int D = cfg.gridSize;
            const std::size_t strides[3] = {1, static_cast<std::size_t>(D), static_cast<std::size_t>(D) * D};
            const double tv = cfg.tvWeight / (3.0 * static_cast<double>(voxels));
            double tvLoss = 0.0;
            for (int z = 0; z < D; ++z)
                for (int y = 0; y < D; ++y)
                    for (int x = 0; x < D; ++x) {
                        std::size_t idx = (static_cast<std::size_t>(z) * D + y) * D + x;
                        const int extent[3] = {x, y, z};
                        for (int axis = 0; axis < 3; ++axis) {
                            if (extent[axis] + 1 >= D) continue;
                            std::size_t nb = idx + strides[axis];
                            double diff = static_cast<double>(grid.densityRaw[idx]) - grid.densityRaw[nb];
                            tvLoss += tv * diff * diff;
                            grads.density[idx] += 2.0 * tv * diff;
                            grads.density[nb] -= 2.0 * tv * diff;
                            for (int ch = 0; ch < 3; ++ch) {
                                double cdiff = static_cast<double>(grid.colorRaw[idx * 3 + ch]) -
                                               grid.colorRaw[nb * 3 + ch];
                                tvLoss += tv * cdiff * cdiff;
                                grads.color[idx * 3 + ch] += 2.0 * tv * cdiff;
                                grads.color[nb * 3 + ch] -= 2.0 * tv * cdiff;
                            }
                        }
                    }
            loss += tvLoss;
        }
        if (cfg.sparsityWeight > 0.0f) {
            const double sw = cfg.sparsityWeight / static_cast<double>(voxels);
            for (std::size_t i = 0; i < voxels; ++i) {
                loss += sw * softplus(grid.densityRaw[i]);
                grads.density[i] += sw * sigmoid(grid.densityRaw[i]);
            }
        }
        if (!std::isfinite(loss)) throw TrainingError("radiance fit diverged: non-finite loss at step " +
                                                      std::to_string(step));
        fit.losses.push_back(loss);

        const double t = step + 1;
        const double correction = std::sqrt(1.0 - std::pow(beta2, t)) / (1.0 - std::pow(beta1, t));
        auto adam = [&](std::vector<float>& param, std::vector<float>& m, std::vector<float>& v,
                        const std::vector<double>& g) {
            for (std::size_t i = 0; i < param.size(); ++i) {
                if (g[i] == 0.0 && m[i] == 0.0f && v[i] == 0.0f) continue;
                double mi = beta1 * m[i] + (1.0 - beta1) * g[i];
                double vi = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                m[i] = static_cast<float>(mi);
                v[i] = static_cast<float>(vi);
                param[i] -= static_cast<float>(cfg.learningRate * correction * mi / (std::sqrt(vi) + eps));
            }
        };
        adam(grid.densityRaw, mDensity, vDensity, grads.density);
        adam(grid.colorRaw, mColor, vColor, grads.color);
    }

    for (std::size_t i = 0; i < views.size(); ++i) {
        if (held[i]) {
            fit.heldOutViews.push_back(static_cast<int>(i));
            fit.heldOutPsnr.push_back(psnr(renderRadiance(grid, poses[i], res), views[i]));
        }
        fit.depthMaps.push_back(renderRadianceDepth(grid, poses[i], res));
    }
    if (fit.heldOutPsnr.empty()) {
        fit.meanHeldOutPsnr = std::numeric_limits<double>::quiet_NaN();
    } else {
        double sum = 0.0;
        for (double p : fit.heldOutPsnr) sum += p;
        fit.meanHeldOutPsnr = sum / static_cast<double>(fit.heldOutPsnr.size());
    }
    return fit;
}

Image renderRadiance(const RadianceGrid& grid, const scene::CameraPose& pose, Index resolution) {
    Image im(resolution, resolution);
    scene::CameraFrame cam = scene::cameraFrame(pose);
    for (Index py = 0; py < resolution; ++py)
        for (Index px = 0; px < resolution; ++px) {
            RayResult r = traceRay(grid, makeRay(cam, py, px, resolution), 64, nullptr);
            float* dst = im.px(py, px);
            for (int ch = 0; ch < 3; ++ch) dst[ch] = static_cast<float>(std::clamp(r.color[ch], 0.0, 1.0));
        }
    return im;
}

Image renderRadianceDepth(const RadianceGrid& grid, const scene::CameraPose& pose, Index resolution) {
    Image im(resolution, resolution);
    scene::CameraFrame cam = scene::cameraFrame(pose);
    for (Index py = 0; py < resolution; ++py)
        for (Index px = 0; px < resolution; ++px) {
            RayResult r = traceRay(grid, makeRay(cam, py, px, resolution), 64, nullptr);
            float* dst = im.px(py, px);
            float g = r.hit ? static_cast<float>(r.depth01) : 0.0f;
            dst[0] = dst[1] = dst[2] = g;
        }
    return im;
}

void saveRadianceGrid(const RadianceGrid& grid, const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes;
    bytes.insert(bytes.end(), kGridMagic, kGridMagic + sizeof(kGridMagic) - 1);
    putU32(bytes, static_cast<std::uint32_t>(grid.size));
    putFloats(bytes, grid.densityRaw);
    putFloats(bytes, grid.colorRaw);
    putU64(bytes, fnv1a64(bytes.data(), bytes.size()));
    writeFileBytes(path, bytes.data(), bytes.size());
}

RadianceGrid loadRadianceGrid(const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes = readFileBytes(path);
    const std::size_t magicLen = sizeof(kGridMagic) - 1;
    if (bytes.size() < magicLen + 12 || std::memcmp(bytes.data(), kGridMagic, magicLen) != 0)
        throw IoError("not a radiance grid archive: " + path.string());
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i)
        stored |= static_cast<std::uint64_t>(bytes[bytes.size() - 8 + i]) << (8 * i);
    if (stored != fnv1a64(bytes.data(), bytes.size() - 8))
        throw IoError("radiance grid checksum mismatch: " + path.string());

    std::size_t at = magicLen;
    std::uint32_t size = 0;
    for (int i = 0; i < 4; ++i) size |= static_cast<std::uint32_t>(bytes[at++]) << (8 * i);
    RadianceGrid grid;
    grid.size = static_cast<int>(size);
    const std::size_t voxels = static_cast<std::size_t>(size) * size * size;
    if (bytes.size() != magicLen + 4 + voxels * 16 + 8)
        throw IoError("radiance grid truncated: " + path.string());
    grid.densityRaw.resize(voxels);
    grid.colorRaw.resize(voxels * 3);
    std::memcpy(grid.densityRaw.data(), bytes.data() + at, voxels * 4);
    std::memcpy(grid.colorRaw.data(), bytes.data() + at + voxels * 4, voxels * 12);
    return grid;
}

} // namespace orbiter360::eval
