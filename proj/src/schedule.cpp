// SPDX-License-Identifier: Apache-2.0
#include "orbiter360/diffusion/schedule.hpp"

#include <cmath>
#include <numbers>

#include "orbiter360/core/error.hpp"

namespace orbiter360::diffusion {

namespace {

constexpr double kBetaFloor = 1e-8;
constexpr double kBetaCeil = 0.999;
constexpr double kFirstBetaCap = 0.009;

std::vector<double> rawLinearBetas(int T) {
    double scale = 1000.0 / T;
    double lo = std::min(1e-4 * scale, kFirstBetaCap);
    double hi = std::clamp(2e-2 * scale, lo + 1e-6, kBetaCeil);
    std::vector<double> beta(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t)
        beta[static_cast<std::size_t>(t)] = T == 1 ? hi : lo + (hi - lo) * t / double(T - 1);
    return beta;
}

std::vector<double> rawCosineBetas(int T) {
    constexpr double s = 0.008;
    auto f = [&](double t) {
        double v = std::cos((t / T + s) / (1.0 + s) * std::numbers::pi / 2.0);
        return v * v;
    };
    double f0 = f(0.0);
    std::vector<double> beta(static_cast<std::size_t>(T));
    double prevBar = 1.0;
    for (int t = 1; t <= T; ++t) {
        double bar = f(static_cast<double>(t)) / f0;
        beta[static_cast<std::size_t>(t - 1)] = 1.0 - bar / prevBar;
        prevBar = bar;
    }
    return beta;
}

} // namespace

ScheduleKind scheduleKindFromString(const std::string& s) {
    if (s == "linear") return ScheduleKind::Linear;
    if (s == "cosine") return ScheduleKind::Cosine;
    throw ConfigError("unknown schedule kind: " + s);
}

std::string toString(ScheduleKind k) { return k == ScheduleKind::Linear ? "linear" : "cosine"; }

double NoiseSchedule::betaAt(int t) const {
    ORBITER360_CHECK(t >= 1 && t <= T, "timestep out of range");
    return beta[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alphaAt(int t) const {
    ORBITER360_CHECK(t >= 1 && t <= T, "timestep out of range");
    return alpha[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alphaBar(int t) const {
    if (t == 0) return 1.0;
    ORBITER360_CHECK(t >= 1 && t <= T, "timestep out of range");
    return alpha_bar[static_cast<std::size_t>(t - 1)];
}

NoiseSchedule buildSchedule(int T, ScheduleKind kind) {
    if (T < 2) throw ArgumentError("schedule needs at least 2 steps");
    NoiseSchedule s;
    s.T = T;
    s.kind = kind;
    s.beta = kind == ScheduleKind::Linear ? rawLinearBetas(T) : rawCosineBetas(T);

    // Sanitize: the first step must keep alpha_bar_1 > 0.99 and every beta
    // must stay inside (0, 1) regardless of T.
    s.beta[0] = std::min(s.beta[0], kFirstBetaCap);
    for (auto& b : s.beta) b = std::clamp(b, kBetaFloor, kBetaCeil);

    s.alpha.resize(s.beta.size());
    s.alpha_bar.resize(s.beta.size());
    double bar = 1.0;
    for (std::size_t i = 0; i < s.beta.size(); ++i) {
        s.alpha[i] = 1.0 - s.beta[i];
        bar *= s.alpha[i];
        s.alpha_bar[i] = bar;
    }

    if (!(s.alpha_bar.front() > 0.99))
        throw IntegrationError("schedule: alpha_bar_1 not close to 1");
    if (!(s.alpha_bar.back() < 0.01))
        throw IntegrationError("schedule: alpha_bar_T too large; noise does not saturate");
    for (std::size_t i = 1; i < s.alpha_bar.size(); ++i)
        if (!(s.alpha_bar[i] < s.alpha_bar[i - 1]))
            throw IntegrationError("schedule: alpha_bar must strictly decrease");
    return s;
}

Latent forwardDiffuse(const Latent& z0, int t, const Latent& eps, const NoiseSchedule& sched) {
    if (t < 1 || t > sched.T) throw ArgumentError("forwardDiffuse: timestep out of range");
    ORBITER360_CHECK(z0.sameShape(eps), "forwardDiffuse: shape mismatch");
    double ab = sched.alphaBar(t);
    float a = static_cast<float>(std::sqrt(ab));
    float b = static_cast<float>(std::sqrt(1.0 - ab));
    Latent out(z0.shape());
    out.array() = a * z0.array() + b * eps.array();
    return out;
}

double ldmLoss(const Latent& epsTrue, const Latent& epsPred) {
    ORBITER360_CHECK(epsTrue.sameShape(epsPred), "ldmLoss: shape mismatch");
    double sum = 0;
    for (Index i = 0; i < epsTrue.numel(); ++i) {
        double d = static_cast<double>(epsTrue[i]) - static_cast<double>(epsPred[i]);
        sum += d * d;
    }
    return sum / static_cast<double>(epsTrue.numel());
}

Latent predictX0(const Latent& zt, const Latent& eps, int t, const NoiseSchedule& sched) {
    if (t < 1 || t > sched.T) throw ArgumentError("predictX0: timestep out of range");
    ORBITER360_CHECK(zt.sameShape(eps), "predictX0: shape mismatch");
    double ab = sched.alphaBar(t);
    float inv = static_cast<float>(1.0 / std::sqrt(ab));
    float c = static_cast<float>(std::sqrt(1.0 - ab));
    Latent out(zt.shape());
    out.array() = (zt.array() - c * eps.array()) * inv;
    return out;
}

Latent ddimStep(const Latent& zt, const Latent& epsPred, int t, int tPrev, const NoiseSchedule& sched, double eta,
                Rng* rng) {
    if (tPrev >= t) throw ArgumentError("ddimStep: t_prev must be smaller than t");
    if (tPrev < 0) throw ArgumentError("ddimStep: t_prev must be >= 0");
    if (eta < 0.0 || eta > 1.0) throw ArgumentError("ddimStep: eta must lie in [0,1]");
    if (eta > 0.0 && rng == nullptr) throw ArgumentError("ddimStep: eta > 0 requires an rng");
    Latent x0 = predictX0(zt, epsPred, t, sched);
    double abPrev = sched.alphaBar(tPrev);
    double abCur = sched.alphaBar(t);
    double sigma = eta * std::sqrt((1.0 - abPrev) / (1.0 - abCur)) * std::sqrt(1.0 - abCur / abPrev);
    double dirCoef = std::sqrt(std::max(0.0, 1.0 - abPrev - sigma * sigma));
    Latent out(zt.shape());
    out.array() = static_cast<float>(std::sqrt(abPrev)) * x0.array() +
                  static_cast<float>(dirCoef) * epsPred.array();
    if (eta > 0.0) {
        for (Index i = 0; i < out.numel(); ++i)
            out[i] += static_cast<float>(sigma * rng->normal());
    }
    return out;
}

std::vector<int> samplerTimesteps(const NoiseSchedule& sched, int steps) {
    if (steps < 1) throw ArgumentError("samplerTimesteps: need at least one step");
    steps = std::min(steps, sched.T);
    std::vector<int> ts;
    ts.reserve(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        int t = static_cast<int>(std::lround(static_cast<double>(sched.T) * (steps - i) / steps));
        t = std::clamp(t, 1, sched.T);
        if (ts.empty() || t < ts.back()) ts.push_back(t);
    }
    if (ts.empty() || ts.front() != sched.T) ts.insert(ts.begin(), sched.T);
    return ts;
}

} // namespace orbiter360::diffusion
