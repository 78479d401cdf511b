// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "orbiter360/control/camera.hpp"
#include "orbiter360/diffusion/schedule.hpp"
#include "orbiter360/nn/unet.hpp"

namespace orbiter360::pipeline {

/// Model-level configuration, serialized into every checkpoint.
struct PipelineConfig {
    Index resolution = 64; ///< image side; latents are resolution/4
    Index baseChannels = 32;
    Index tembChannels = 64;
    Index latentChannels = 4;
    Index nMaxViews = 8;
    int T = 1000;
    diffusion::ScheduleKind schedule = diffusion::ScheduleKind::Linear;

    bool operator==(const PipelineConfig&) const = default;
};

/// The five training stages, in prerequisite order.
enum class Stage { autoencoder, appearance, camera, consistency, backgen };

/// Camera conditioning path: full hint-image control branch, or the
/// scalar-pose embedding ablation added to the timestep embedding.
enum class CameraMode { image, scalar };

const char* stageName(Stage s);
Stage stageFromName(const std::string& name); ///< ArgumentError on unknown names

/// Parameter namespaces a stage is allowed to change.
std::vector<std::string> stageNamespaces(Stage s);

/// Stages whose training must be complete before this one starts.
std::vector<Stage> stagePrerequisites(Stage s);

/// All top-level parameter namespaces, for per-namespace gradient audits.
const std::vector<std::string>& parameterNamespaces();

/// Adaptive-moment optimizer state, serialized with the checkpoint so an
/// interrupted stage resumes bit-exactly.
struct AdamState {
    std::string stage;                                    ///< stage the moments belong to
    long t = 0;                                           ///< update count
    std::map<std::string, std::pair<TensorF, TensorF>> moments; ///< name -> (m, v)
};

/// Every network of the system over one parameter store, plus the training
/// progress markers. Construction is deterministic in the config alone;
/// checkpoints then overwrite parameter values.
struct ModelBundle {
    PipelineConfig cfg;
    diffusion::NoiseSchedule sched;
    ParamStore<float> store;

    nn::Autoencoder<float> autoenc;                  ///< "autoencoder/"
    nn::UNet<float> backbone;                        ///< "backbone/", view attention under "consistency/"
    nn::UNet<float> refNet;                          ///< "appearance/"
    nn::ControlNet<float> control;                   ///< "camera/"
    control::PoseScalarConditioner<float> scalarCond; ///< "camera/scalar."
    nn::UNet<float> backgenRef;                      ///< "backgen/ref."
    nn::ControlNet<float> backgenCtrl;               ///< "backgen/ctrl."

    std::map<std::string, int> completedSteps; ///< stage name -> steps trained
    bool scaleCalibrated = false;              ///< latent scale fixed after the autoencoder phase
    AdamState adam;                            ///< optimizer state of the stage in progress

    static ModelBundle build(const PipelineConfig& cfg);

    ModelBundle() = default;
    ModelBundle(ModelBundle&&) = default;
    ModelBundle& operator=(ModelBundle&&) = default;
    ModelBundle(const ModelBundle&) = delete;
    ModelBundle& operator=(const ModelBundle&) = delete;

    int stepsDone(Stage s) const {
        auto it = completedSteps.find(stageName(s));
        return it == completedSteps.end() ? 0 : it->second;
    }

    /// Image-space side length of the latents this bundle denoises.
    Index latentSide() const { return cfg.resolution / 4; }
};

} // namespace orbiter360::pipeline
