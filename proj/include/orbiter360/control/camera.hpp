// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "orbiter360/nn/unet.hpp"
#include "orbiter360/scene/scene.hpp"

namespace orbiter360::control {

/// Merge control residuals into a conditioning. Keys are validated against
/// the registered taps; a tap that already carries a residual accumulates.
template <typename S>
void attachResiduals(Tape<S>& t, nn::Conditioning<S>& cond, const std::map<std::string, Var<S>>& residuals) {
    for (const auto& [site, r] : residuals) {
        if (!nn::isControlTap(site)) throw IntegrationError("unknown control tap: " + site);
        auto it = cond.controlResiduals.find(site);
        if (it == cond.controlResiduals.end())
            cond.controlResiduals.emplace(site, r);
        else
            it->second = add(t, it->second, r);
    }
}

/// Camera-condition hints for a batch of poses, NCHW at the image resolution
/// (4x the latent side).
inline TensorF renderHints(const std::vector<scene::CameraPose>& poses, Index resolution) {
    std::vector<Image> ims;
    ims.reserve(poses.size());
    for (const auto& p : poses) ims.push_back(scene::renderCamCondition(p, resolution));
    return imagesToTensor(ims);
}

/// Scalar-pose ablation: a two-layer MLP on [sin az, cos az, sin el, cos el]
/// whose output joins the timestep embedding. The head starts at zero, so a
/// fresh conditioner leaves the denoiser untouched.
template <typename S> class PoseScalarConditioner {
  public:
    PoseScalarConditioner() = default;

    static PoseScalarConditioner create(ParamStore<S>& store, const std::string& prefix, Index tembChannels,
                                        Rng rng) {
        PoseScalarConditioner c;
        c.fc1_ = nn::LinearLayer<S>::create(store, prefix + "fc1", 4, tembChannels, rng);
        c.fc2_ = nn::LinearLayer<S>::create(store, prefix + "fc2", tembChannels, tembChannels, rng, true, true);
        return c;
    }

    /// [B, tembChannels] embedding for Conditioning::tembExtra.
    Var<S> operator()(Tape<S>& t, const std::vector<scene::CameraPose>& poses) const {
        Index B = static_cast<Index>(poses.size());
        ORBITER360_CHECK(B > 0, "pose batch is empty");
        Tensor<S> in({B, 4});
        for (Index b = 0; b < B; ++b) {
            const auto& p = poses[static_cast<std::size_t>(b)];
            in.at(b, 0) = static_cast<S>(scene::sinDeg(p.azimuth));
            in.at(b, 1) = static_cast<S>(scene::cosDeg(p.azimuth));
            in.at(b, 2) = static_cast<S>(scene::sinDeg(p.elevation));
            in.at(b, 3) = static_cast<S>(scene::cosDeg(p.elevation));
        }
        return fc2_(t, silu(t, fc1_(t, t.input(std::move(in)))));
    }

  private:
    nn::LinearLayer<S> fc1_, fc2_;
};

} // namespace orbiter360::control
