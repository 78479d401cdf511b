// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "orbiter360/core/rng.hpp"
#include "orbiter360/core/tensor.hpp"

namespace orbiter360::diffusion {

/// Latents are NCHW float tensors (batch of C x h x w arrays).
using Latent = TensorF;

enum class ScheduleKind { Linear, Cosine };

ScheduleKind scheduleKindFromString(const std::string& s);
std::string toString(ScheduleKind k);

/// Variance schedule for the forward noising process. Construction
/// sanitizes the raw beta ramp so the invariants hold for any T >= 2:
/// 0 < beta_t < 1, alpha_bar strictly decreasing, alpha_bar_1 > 0.99 and
/// alpha_bar_T < 0.01.
struct NoiseSchedule {
    int T = 0;
    ScheduleKind kind = ScheduleKind::Linear;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    /// 1-based timestep accessors; alphaBar(0) == 1 by convention.
    double betaAt(int t) const;
    double alphaAt(int t) const;
    double alphaBar(int t) const;
};

NoiseSchedule buildSchedule(int T, ScheduleKind kind);

/// q-sample: sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps.
Latent forwardDiffuse(const Latent& z0, int t, const Latent& eps, const NoiseSchedule& sched);

/// Mean squared error between true and predicted noise; the scalar the
/// denoiser trains against.
double ldmLoss(const Latent& epsTrue, const Latent& epsPred);

/// Deterministic (eta = 0) or stochastic DDIM update from step t to t_prev.
/// t_prev may be 0, meaning the fully denoised endpoint. rng is required
/// only when eta > 0.
Latent ddimStep(const Latent& zt, const Latent& epsPred, int t, int tPrev, const NoiseSchedule& sched, double eta,
                Rng* rng = nullptr);

/// x0 implied by (z_t, eps) under the q-sample formula.
Latent predictX0(const Latent& zt, const Latent& eps, int t, const NoiseSchedule& sched);

/// Evenly spaced descending timestep sequence for samplers: T = first
/// element, last step hands off to 0.
std::vector<int> samplerTimesteps(const NoiseSchedule& sched, int steps);

} // namespace orbiter360::diffusion
