// SPDX-License-Identifier: Apache-2.0
#include "orbiter360/pipeline/bundle.hpp"

namespace orbiter360::pipeline {

const char* stageName(Stage s) {
    switch (s) {
    case Stage::autoencoder: return "autoencoder";
    case Stage::appearance: return "appearance";
    case Stage::camera: return "camera";
    case Stage::consistency: return "consistency";
    case Stage::backgen: return "backgen";
    }
    throw ArgumentError("bad stage value");
}

Stage stageFromName(const std::string& name) {
    for (Stage s : {Stage::autoencoder, Stage::appearance, Stage::camera, Stage::consistency, Stage::backgen})
        if (name == stageName(s)) return s;
    throw ArgumentError("unknown training stage: " + name);
}

std::vector<std::string> stageNamespaces(Stage s) {
    switch (s) {
    case Stage::autoencoder: return {"autoencoder/", "backbone/"};
    case Stage::appearance: return {"appearance/"};
    case Stage::camera: return {"camera/"};
    case Stage::consistency: return {"consistency/"};
    case Stage::backgen: return {"backgen/"};
    }
    throw ArgumentError("bad stage value");
}

std::vector<Stage> stagePrerequisites(Stage s) {
    switch (s) {
    case Stage::autoencoder: return {};
    case Stage::appearance: return {Stage::autoencoder};
    case Stage::camera: return {Stage::appearance};
    case Stage::consistency: return {Stage::camera};
    case Stage::backgen: return {Stage::autoencoder};
    }
    throw ArgumentError("bad stage value");
}

const std::vector<std::string>& parameterNamespaces() {
    static const std::vector<std::string> ns = {"autoencoder/", "backbone/",    "appearance/",
                                                "camera/",      "consistency/", "backgen/"};
    return ns;
}

ModelBundle ModelBundle::build(const PipelineConfig& cfg) {
    ORBITER360_CHECK(cfg.resolution >= 16 && cfg.resolution % 16 == 0,
                     "resolution must be a multiple of 16 so latents downsample twice");
    ORBITER360_CHECK(cfg.T >= 2, "schedule needs at least two steps");

    ModelBundle b;
    b.cfg = cfg;
    b.sched = diffusion::buildSchedule(cfg.T, cfg.schedule);

    nn::UNetConfig ucfg;
    ucfg.latentChannels = cfg.latentChannels;
    ucfg.baseChannels = cfg.baseChannels;
    ucfg.tembChannels = cfg.tembChannels;
    ucfg.nMaxViews = cfg.nMaxViews;

    // Fixed per-component init streams: a fresh bundle is identical across
    // processes, so checkpoints only need to carry values, not seeds.
    b.autoenc = nn::Autoencoder<float>::build(b.store, "autoencoder/", cfg.latentChannels,
                                              Rng(fnv1a64("init:autoencoder")));
    ucfg.temporal = true;
    b.backbone = nn::UNet<float>::build(b.store, ucfg, "backbone/", "consistency/", Rng(fnv1a64("init:backbone")));
    ucfg.temporal = false;
    b.refNet = nn::UNet<float>::build(b.store, ucfg, "appearance/", "", Rng(fnv1a64("init:appearance")));
    b.control = nn::ControlNet<float>::build(b.store, ucfg, "camera/", Rng(fnv1a64("init:camera")));
    b.scalarCond = control::PoseScalarConditioner<float>::create(b.store, "camera/scalar.", cfg.tembChannels,
                                                                 Rng(fnv1a64("init:camera-scalar")));
    b.backgenRef = nn::UNet<float>::build(b.store, ucfg, "backgen/ref.", "", Rng(fnv1a64("init:backgen-ref")));
    b.backgenCtrl = nn::ControlNet<float>::build(b.store, ucfg, "backgen/ctrl.", Rng(fnv1a64("init:backgen-ctrl")));
    return b;
}

} // namespace orbiter360::pipeline
