// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "orbiter360/control/consistency.hpp"
#include "orbiter360/data/dataset.hpp"
#include "orbiter360/pipeline/bundle.hpp"

namespace orbiter360::train {

using pipeline::CameraMode;
using pipeline::ModelBundle;
using pipeline::Stage;

struct TrainConfig {
    Stage stage = Stage::autoencoder;
    int steps = 100;        ///< steps to run in this call; stage progress is cumulative
    float learningRate = 1e-5f;
    int batch = 4;          ///< samples per step (all stages except consistency)
    int groups = 2;         ///< scene groups per step (consistency stage)
    int nViews = 8;         ///< views per group (consistency stage)
    int reconSteps = 2500;  ///< substrate stage: steps of image reconstruction before denoising
    double backDropout = 0.1; ///< chance of withholding the back reference (appearance stage)
    double styleMix = 0.5;  ///< share of non-default styles in the back-generator corpus
    int corpusSize = 256;   ///< front/back pair corpus size (backgen stage)
    control::BatchMode batchMode = control::BatchMode::sequential;
    CameraMode cameraMode = CameraMode::image;
    std::uint64_t seed = 1;
};

struct TrainResult {
    int firstStep = 0; ///< absolute index of the first step this call ran
    std::vector<double> losses;
    std::map<std::string, double> gradNorms; ///< per-namespace L2 norms, last step
};

/// Run `cfg.steps` optimization steps of one stage. Weights, optimizer
/// moments and progress counters all live in the bundle, so calling again
/// continues exactly where the previous call stopped; two runs of n steps
/// match one run of 2n bit for bit. Missing prerequisite stages raise a
/// usage error naming the stage to train first. When `logPath` is set, one
/// JSON record per step is appended there.
TrainResult trainStage(ModelBundle& b, const data::Dataset& ds, const TrainConfig& cfg,
                       const std::filesystem::path& logPath = {});

} // namespace orbiter360::train
