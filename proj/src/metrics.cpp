// SPDX-License-Identifier: Apache-2.0
#include "orbiter360/eval/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "orbiter360/core/error.hpp"
#include "orbiter360/core/rng.hpp"
#include "orbiter360/eval/pose_match.hpp"

namespace orbiter360::eval {

namespace {

void checkSameShape(const Image& a, const Image& b, const char* what) {
    if (!a.sameSize(b))
        throw ArgumentError(std::string(what) + ": image shapes differ (" + std::to_string(a.height) + "x" +
                            std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                            std::to_string(b.width) + ")");
    if (a.height < 1 || a.width < 1) throw ArgumentError(std::string(what) + ": empty image");
}

double meanSquaredError(const Image& a, const Image& b) {
    double sum = 0.0;
    const std::size_t n = a.rgb.size();
    for (std::size_t i = 0; i < n; ++i) {
        double d = static_cast<double>(a.rgb[i]) - static_cast<double>(b.rgb[i]);
        sum += d * d;
    }
    return sum / static_cast<double>(n);
}

/// 3x3 stride-2 convolution stack with fixed seeded weights and tanh
/// nonlinearities; the shared feature extractor behind lpips_proxy and
/// fid_proxy.
struct ConvLayer {
    int inC = 0;
    int outC = 0;
    std::vector<float> w; ///< [outC][inC][3][3]
};

const std::array<ConvLayer, 3>& featureStack() {
    static const std::array<ConvLayer, 3> stack = [] {
        std::array<ConvLayer, 3> layers{ConvLayer{3, 8, {}}, ConvLayer{8, 16, {}}, ConvLayer{16, 16, {}}};
        Rng rng(fnv1a64("eval:feature-stack"));
        for (auto& layer : layers) {
            double stddev = std::sqrt(2.0 / (9.0 * layer.inC));
            layer.w.resize(static_cast<std::size_t>(layer.outC * layer.inC * 9));
            for (auto& v : layer.w) v = static_cast<float>(rng.normal(0.0, stddev));
        }
        return layers;
    }();
    return stack;
}

struct FeatureMap {
    Index h = 0, w = 0, c = 0;
    std::vector<float> data; ///< CHW
};

FeatureMap applyLayer(const FeatureMap& in, const ConvLayer& layer) {
    FeatureMap out;
    out.h = (in.h + 1) / 2;
    out.w = (in.w + 1) / 2;
    out.c = layer.outC;
    out.data.assign(static_cast<std::size_t>(out.h * out.w * out.c), 0.0f);
    for (Index oc = 0; oc < out.c; ++oc)
        for (Index oy = 0; oy < out.h; ++oy)
            for (Index ox = 0; ox < out.w; ++ox) {
                double acc = 0.0;
                for (Index ic = 0; ic < in.c; ++ic)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            Index iy = 2 * oy + ky - 1;
                            Index ix = 2 * ox + kx - 1;
                            if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
                            acc += static_cast<double>(in.data[(ic * in.h + iy) * in.w + ix]) *
                                   layer.w[((oc * in.c + ic) * 3 + ky) * 3 + kx];
                        }
                out.data[(oc * out.h + oy) * out.w + ox] = static_cast<float>(std::tanh(acc));
            }
    return out;
}

std::array<FeatureMap, 3> featureMaps(const Image& im) {
    FeatureMap x;
    x.h = im.height;
    x.w = im.width;
    x.c = 3;
    x.data.resize(im.rgb.size());
    for (Index c = 0; c < 3; ++c)
        for (Index y = 0; y < im.height; ++y)
            for (Index xpx = 0; xpx < im.width; ++xpx)
                x.data[(c * im.height + y) * im.width + xpx] = im.px(y, xpx)[c];
    std::array<FeatureMap, 3> maps;
    const auto& stack = featureStack();
    for (std::size_t l = 0; l < stack.size(); ++l) {
        maps[l] = applyLayer(l == 0 ? x : maps[l - 1], stack[l]);
    }
    return maps;
}

/// Spatial mean of the deepest feature map: the pooled descriptor fid_proxy
/// fits its Gaussians to.
Eigen::VectorXd pooledFeatures(const Image& im) {
    auto maps = featureMaps(im);
    const FeatureMap& top = maps.back();
    Eigen::VectorXd v(top.c);
    for (Index c = 0; c < top.c; ++c) {
        double sum = 0.0;
        for (Index i = 0; i < top.h * top.w; ++i) sum += top.data[c * top.h * top.w + i];
        v[c] = sum / static_cast<double>(top.h * top.w);
    }
    return v;
}

void fitGaussian(const std::vector<Image>& set, Eigen::VectorXd& mu, Eigen::MatrixXd& sigma) {
    const auto n = static_cast<double>(set.size());
    std::vector<Eigen::VectorXd> feats;
    feats.reserve(set.size());
    for (const auto& im : set) feats.push_back(pooledFeatures(im));
    const Eigen::Index d = feats.front().size();
    mu = Eigen::VectorXd::Zero(d);
    for (const auto& f : feats) mu += f;
    mu /= n;
    sigma = Eigen::MatrixXd::Zero(d, d);
    for (const auto& f : feats) {
        Eigen::VectorXd c = f - mu;
        sigma += c * c.transpose();
    }
    sigma /= n;
}

Eigen::MatrixXd symmetricSqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    Eigen::VectorXd roots = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
}

double gaussianKernelWeight(int dy, int dx) {
    constexpr double sigma = 1.5;
    return std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
}

SplitAggregate aggregate(const MetricReport& report, const std::vector<Image>& predicted,
                         const std::vector<Image>& groundTruth, const std::vector<std::size_t>& rows) {
    SplitAggregate agg;
    agg.count = static_cast<int>(rows.size());
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (rows.empty()) {
        agg.psnr = agg.ssim = agg.lpipsProxy = agg.fidProxy = agg.poseError = nan;
        return agg;
    }
    double psnrSum = 0, ssimSum = 0, lpipsSum = 0, poseSum = 0;
    std::vector<Image> predSet, gtSet;
    predSet.reserve(rows.size());
    gtSet.reserve(rows.size());
    for (std::size_t row : rows) {
        const ViewMetrics& v = report.views[row];
        psnrSum += v.psnr;
        ssimSum += v.ssim;
        lpipsSum += v.lpipsProxy;
        if (v.poseError >= 0.0) {
            poseSum += v.poseError;
            ++agg.poseCount;
        }
        predSet.push_back(predicted[row]);
        gtSet.push_back(groundTruth[row]);
    }
    agg.psnr = psnrSum / agg.count;
    agg.ssim = ssimSum / agg.count;
    agg.lpipsProxy = lpipsSum / agg.count;
    agg.fidProxy = fidProxy(predSet, gtSet);
    agg.poseError = agg.poseCount > 0 ? poseSum / agg.poseCount : nan;
    return agg;
}

} // namespace

double psnr(const Image& a, const Image& b) {
    checkSameShape(a, b, "psnr");
    double mse = meanSquaredError(a, b);
    if (mse < 1e-10) return 99.0;
    return std::clamp(10.0 * std::log10(1.0 / mse), 0.0, 99.0);
}

double ssim(const Image& a, const Image& b) {
    checkSameShape(a, b, "ssim");
    constexpr int win = 11;
    constexpr int half = win / 2;
    constexpr double c1 = (0.01 * 1.0) * (0.01 * 1.0);
    constexpr double c2 = (0.03 * 1.0) * (0.03 * 1.0);
    if (a.height < win || a.width < win)
        throw ArgumentError("ssim: images must be at least 11x11, got " + std::to_string(a.height) + "x" +
                            std::to_string(a.width));

    double kernel[win][win];
    double ksum = 0.0;
    for (int dy = 0; dy < win; ++dy)
        for (int dx = 0; dx < win; ++dx) {
            kernel[dy][dx] = gaussianKernelWeight(dy - half, dx - half);
            ksum += kernel[dy][dx];
        }
    for (auto& row : kernel)
        for (double& v : row) v /= ksum;

    double total = 0.0;
    long windows = 0;
    for (Index c = 0; c < 3; ++c)
        for (Index y = half; y < a.height - half; ++y)
            for (Index x = half; x < a.width - half; ++x) {
                double muA = 0, muB = 0;
                for (int dy = -half; dy <= half; ++dy)
                    for (int dx = -half; dx <= half; ++dx) {
                        double k = kernel[dy + half][dx + half];
                        muA += k * a.px(y + dy, x + dx)[c];
                        muB += k * b.px(y + dy, x + dx)[c];
                    }
                double varA = 0, varB = 0, cov = 0;
                for (int dy = -half; dy <= half; ++dy)
                    for (int dx = -half; dx <= half; ++dx) {
                        double k = kernel[dy + half][dx + half];
                        double da = a.px(y + dy, x + dx)[c] - muA;
                        double db = b.px(y + dy, x + dx)[c] - muB;
                        varA += k * da * da;
                        varB += k * db * db;
                        cov += k * da * db;
                    }
                total += ((2 * muA * muB + c1) * (2 * cov + c2)) / ((muA * muA + muB * muB + c1) * (varA + varB + c2));
                ++windows;
            }
    return total / static_cast<double>(windows);
}

double lpipsProxy(const Image& a, const Image& b) {
    checkSameShape(a, b, "lpips_proxy");
    auto fa = featureMaps(a);
    auto fb = featureMaps(b);
    double sum = 0.0;
    for (std::size_t l = 0; l < fa.size(); ++l) {
        double layerSum = 0.0;
        for (std::size_t i = 0; i < fa[l].data.size(); ++i) {
            double d = static_cast<double>(fa[l].data[i]) - static_cast<double>(fb[l].data[i]);
            layerSum += d * d;
        }
        sum += layerSum / static_cast<double>(fa[l].data.size());
    }
    return std::sqrt(sum);
}

double fidProxy(const std::vector<Image>& setA, const std::vector<Image>& setB) {
    if (setA.empty() || setB.empty()) throw ArgumentError("fid_proxy: both image sets must be non-empty");
    for (const auto& im : setA) checkSameShape(im, setA.front(), "fid_proxy");
    for (const auto& im : setB) checkSameShape(im, setB.front(), "fid_proxy");

    Eigen::VectorXd muA, muB;
    Eigen::MatrixXd sigmaA, sigmaB;
    fitGaussian(setA, muA, sigmaA);
    fitGaussian(setB, muB, sigmaB);

    Eigen::MatrixXd rootA = symmetricSqrt(sigmaA);
    Eigen::MatrixXd inner = rootA * sigmaB * rootA;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()));
    double traceRoot = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    double d2 = (muA - muB).squaredNorm() + sigmaA.trace() + sigmaB.trace() - 2.0 * traceRoot;
    return std::max(0.0, d2);
}

double consecutiveL1(const std::vector<Image>& frames) {
    if (frames.size() < 2) throw ArgumentError("consecutiveL1: need at least two frames");
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < frames.size(); ++k) {
        checkSameShape(frames[k], frames[k + 1], "consecutiveL1");
        double sum = 0.0;
        for (std::size_t i = 0; i < frames[k].rgb.size(); ++i)
            sum += std::abs(static_cast<double>(frames[k].rgb[i]) - static_cast<double>(frames[k + 1].rgb[i]));
        total += sum / static_cast<double>(frames[k].rgb.size());
    }
    return total / static_cast<double>(frames.size() - 1);
}

bool isFrontalAzimuth(double azimuthDeg) { return std::abs(scene::wrapSignedDeg(azimuthDeg)) < 90.0; }

MetricReport evaluateViews(const std::vector<Image>& predicted, const std::vector<Image>& groundTruth,
                           const std::vector<scene::CameraPose>& poses, bool withPoseError) {
    if (predicted.empty()) throw ArgumentError("evaluateViews: need at least one view");
    if (predicted.size() != groundTruth.size() || predicted.size() != poses.size())
        throw ArgumentError("evaluateViews: predicted/groundTruth/poses counts differ (" +
                            std::to_string(predicted.size()) + "/" + std::to_string(groundTruth.size()) + "/" +
                            std::to_string(poses.size()) + ")");

    MetricReport report;
    report.views.reserve(predicted.size());
    std::vector<std::size_t> all, front, back;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        ViewMetrics v;
        v.index = static_cast<int>(i);
        v.pose = poses[i];
        v.frontal = isFrontalAzimuth(poses[i].azimuth);
        v.psnr = psnr(predicted[i], groundTruth[i]);
        v.ssim = ssim(predicted[i], groundTruth[i]);
        v.lpipsProxy = lpipsProxy(predicted[i], groundTruth[i]);
        v.poseError = withPoseError ? poseError(predicted[i], poses[i]) : kPoseErrorSentinel;
        report.views.push_back(v);
        all.push_back(i);
        (v.frontal ? front : back).push_back(i);
    }
    report.overall = aggregate(report, predicted, groundTruth, all);
    report.frontal = aggregate(report, predicted, groundTruth, front);
    report.back = aggregate(report, predicted, groundTruth, back);
    return report;
}

} // namespace orbiter360::eval
