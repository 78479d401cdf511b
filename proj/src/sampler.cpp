// SPDX-License-Identifier: Apache-2.0
#include <cinttypes>
#include <cstdio>
#include <json.hpp>

#include "orbiter360/control/appearance.hpp"
#include "orbiter360/control/camera.hpp"
#include "orbiter360/control/consistency.hpp"
#include "orbiter360/pipeline/synthesis.hpp"

namespace orbiter360::pipeline {

namespace {

Rng deriveRng(std::string_view label, std::uint64_t seed) {
    return Rng(fnv1a64(&seed, sizeof seed, fnv1a64(label)));
}

std::string hashTag(const std::vector<std::uint8_t>& bytes) {
    char buf[28];
    std::snprintf(buf, sizeof buf, "fnv1a64:%016" PRIx64, fnv1a64(bytes.data(), bytes.size()));
    return buf;
}

/// Reference latents in diffusion space; `back` absent means single-anchor.
struct RefLatents {
    TensorF front;
    std::optional<TensorF> back;
    double separationDeg = 0.0;
};

/// Which reference branch and control branch steer a pass: the orbit nets
/// or the back-view generator's private copies.
struct NetChoice {
    const nn::UNet<float>* refNet;
    const nn::ControlNet<float>* ctrl;
};

TensorF encodeImage(const ModelBundle& b, const Image& im) {
    Tape<float> t(false);
    return b.autoenc.encode(t, t.input(imageToTensor(im)))->value;
}

void checkReference(const ModelBundle& b, const Image& reference) {
    ORBITER360_CHECK(reference.height == b.cfg.resolution && reference.width == b.cfg.resolution,
                     "reference image must be " + std::to_string(b.cfg.resolution) + "x" +
                         std::to_string(b.cfg.resolution));
}

/// Denoise latents for `poses` under reference + camera conditioning. One
/// noise-prediction pass per overlapping pose window per step, merged before
/// each sampler update.
TensorF denoiseViews(const ModelBundle& b, const NetChoice& nets, const RefLatents& refs,
                     const std::vector<scene::CameraPose>& poses, const SynthesisOptions& opt, Rng& rng) {
    const int K = static_cast<int>(poses.size());
    ORBITER360_CHECK(K >= 1, "no poses to denoise");
    ORBITER360_CHECK(opt.steps >= 1 && opt.eta >= 0.0, "bad sampler options");

    std::vector<int> seq = diffusion::samplerTimesteps(b.sched, opt.steps);
    TensorF zt;
    if (opt.threeDNoise) {
        int tStart = static_cast<int>(std::lround(opt.tStartFraction * b.sched.T));
        if (2 * tStart < b.sched.T || tStart > b.sched.T)
            throw ArgumentError("3D-aware start step must lie in [T/2, T]");
        while (!seq.empty() && seq.front() > tStart) seq.erase(seq.begin());
        ORBITER360_CHECK(!seq.empty(), "no sampler steps at or below the partial start");
        std::vector<Image> conds;
        conds.reserve(poses.size());
        for (const auto& p : poses) conds.push_back(scene::renderCamCondition(p, b.cfg.resolution));
        zt = control::init3dAwareNoise(conds, b.autoenc, b.sched, seq.front(), rng);
    } else {
        zt = TensorF::randn({K, b.cfg.latentChannels, b.latentSide(), b.latentSide()}, rng);
    }

    const int wsize = static_cast<int>(std::min<Index>(8, b.cfg.nMaxViews));
    auto windows = control::orbitWindows(K, wsize, wsize > 1 ? wsize / 2 : 0);

    for (std::size_t i = 0; i < seq.size(); ++i) {
        int t = seq[i];
        int tPrev = i + 1 < seq.size() ? seq[i + 1] : 0;

        Tape<float> tape(false);
        // The reference branch sees its anchors at the current noise level.
        TensorF epsF = TensorF::randn(refs.front.shape(), rng);
        Var<float> zF = tape.input(diffusion::forwardDiffuse(refs.front, t, epsF, b.sched));
        Var<float> zB = nullptr;
        if (refs.back) {
            TensorF epsB = TensorF::randn(refs.back->shape(), rng);
            zB = tape.input(diffusion::forwardDiffuse(*refs.back, t, epsB, b.sched));
        }
        auto ctx = control::buildTrainingContext(tape, *nets.refNet, zF, zB, {t}, refs.separationDeg);
        auto kv = control::referenceConditioning(ctx);

        std::vector<std::pair<std::vector<int>, TensorF>> parts;
        for (const auto& w : windows) {
            TensorF ztW({static_cast<Index>(w.size()), zt.dim(1), zt.dim(2), zt.dim(3)});
            std::vector<scene::CameraPose> posesW;
            for (std::size_t j = 0; j < w.size(); ++j) {
                ztW.setSlice0(static_cast<Index>(j), zt.slice0(w[j], 1));
                posesW.push_back(poses[static_cast<std::size_t>(w[j])]);
            }
            Var<float> z = tape.input(std::move(ztW));
            std::vector<int> ts(w.size(), t);

            nn::Conditioning<float> cond;
            cond.refKV = kv;
            cond.temporal = opt.temporal;
            cond.nViews = static_cast<Index>(w.size());
            if (opt.cameraMode == CameraMode::image) {
                Var<float> hint = tape.input(control::renderHints(posesW, b.cfg.resolution));
                control::attachResiduals(tape, cond, nets.ctrl->forward(tape, z, ts, hint));
            } else {
                cond.tembExtra = b.scalarCond(tape, posesW);
            }
            parts.emplace_back(w, b.backbone.forward(tape, z, ts, cond)->value);
        }
        TensorF eps = control::mergeWindowPredictions(K, std::move(parts));
        zt = diffusion::ddimStep(zt, eps, t, tPrev, b.sched, opt.eta, opt.eta > 0.0 ? &rng : nullptr);
    }
    return zt;
}

std::string provenanceFor(const ModelBundle& b, const Image& reference, const SynthesisOptions& opt,
                          const SynthesisResult& res) {
    nlohmann::json j;
    j["model"] = {{"resolution", b.cfg.resolution},
                  {"base_channels", b.cfg.baseChannels},
                  {"temb_channels", b.cfg.tembChannels},
                  {"latent_channels", b.cfg.latentChannels},
                  {"n_max_views", b.cfg.nMaxViews},
                  {"timesteps", b.cfg.T},
                  {"schedule", diffusion::toString(b.cfg.schedule)},
                  {"trained", b.completedSteps}};
    j["options"] = {{"views", opt.views},
                    {"elevation", opt.elevation},
                    {"steps", opt.steps},
                    {"eta", opt.eta},
                    {"t_start_fraction", opt.tStartFraction},
                    {"use_back", opt.useBack},
                    {"three_d_noise", opt.threeDNoise},
                    {"temporal", opt.temporal},
                    {"camera_mode", opt.cameraMode == CameraMode::image ? "image" : "scalar"},
                    {"seed", opt.seed}};
    auto& ps = j["poses"] = nlohmann::json::array();
    for (const auto& p : res.poses) ps.push_back({p.azimuth, p.elevation, p.radius});
    j["reference"] = hashTag(encodePng(reference));
    auto& outs = j["outputs"] = nlohmann::json::object();
    for (std::size_t k = 0; k < res.views.size(); ++k) {
        char name[24];
        std::snprintf(name, sizeof name, "view_%03zu.png", k);
        outs[name] = hashTag(encodePng(res.views[k]));
    }
    if (res.back) outs["back.png"] = hashTag(encodePng(*res.back));
    return j.dump(2);
}

SynthesisResult synthesizePoses(const ModelBundle& b, const Image& reference,
                                const std::vector<scene::CameraPose>& poses, const SynthesisOptions& opt) {
    if (!opt.appearance)
        throw UsageError("appearance conditioning cannot be disabled: the reference is the identity anchor");
    checkReference(b, reference);
    if (b.stepsDone(Stage::appearance) == 0)
        throw UsageError("appearance stage is untrained; train it before synthesis");
    if (b.stepsDone(Stage::camera) == 0)
        throw UsageError("camera stage is untrained; train it before synthesis");

    SynthesisResult res;
    res.poses = poses;

    RefLatents refs;
    refs.front = encodeImage(b, reference);
    if (opt.useBack) {
        Image back = generateBackView(b, reference, opt.seed);
        refs.back = encodeImage(b, back);
        refs.separationDeg = 180.0;
        res.back = std::move(back);
    }

    Rng rng = deriveRng("synth:orbit", opt.seed);
    TensorF z = denoiseViews(b, {&b.refNet, &b.control}, refs, poses, opt, rng);

    Tape<float> t(false);
    std::vector<Image> frames = tensorToImages(b.autoenc.decode(t, t.input(z))->value);
    res.views = std::move(frames);
    res.provenanceJson = provenanceFor(b, reference, opt, res);
    return res;
}

} // namespace

std::vector<scene::CameraPose> orbitTrajectory(int K, double elevation) {
    ORBITER360_CHECK(K >= 1, "orbit needs at least one view");
    std::vector<scene::CameraPose> poses;
    poses.reserve(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k)
        poses.push_back({scene::wrapDeg(360.0 * k / K), elevation, scene::kDefaultRadius});
    return poses;
}

SynthesisResult synthesizeOrbit(const ModelBundle& b, const Image& reference, const SynthesisOptions& opt) {
    return synthesizePoses(b, reference, orbitTrajectory(opt.views, opt.elevation), opt);
}

Image synthesizeView(const ModelBundle& b, const Image& reference, const scene::CameraPose& pose,
                     const SynthesisOptions& opt) {
    SynthesisOptions one = opt;
    one.views = 1;
    return synthesizePoses(b, reference, {pose}, one).views.front();
}

Image generateBackView(const ModelBundle& b, const Image& reference, std::uint64_t seed) {
    if (b.stepsDone(Stage::backgen) == 0)
        throw UsageError("back-view generator is untrained; train the backgen stage first");
    checkReference(b, reference);

    RefLatents refs;
    refs.front = encodeImage(b, reference);
    refs.separationDeg = 180.0;

    SynthesisOptions opt;
    opt.steps = 50;
    opt.eta = 0.0;
    opt.threeDNoise = false;
    opt.temporal = false;
    opt.cameraMode = CameraMode::image;

    std::vector<scene::CameraPose> pose{{180.0, 0.0, scene::kDefaultRadius}};
    Rng rng = deriveRng("synth:backview", seed);
    TensorF z = denoiseViews(b, {&b.backgenRef, &b.backgenCtrl}, refs, pose, opt, rng);

    Tape<float> t(false);
    return tensorToImage(b.autoenc.decode(t, t.input(z))->value);
}

Image contactSheet(const std::vector<Image>& frames, int columns) {
    ORBITER360_CHECK(!frames.empty() && columns >= 1, "nothing to tile");
    const Index h = frames.front().height, w = frames.front().width;
    for (const auto& f : frames) ORBITER360_CHECK(f.sameSize(frames.front()), "frames differ in size");
    const int cols = std::min<int>(columns, static_cast<int>(frames.size()));
    const int rows = (static_cast<int>(frames.size()) + cols - 1) / cols;
    Image sheet(rows * h, cols * w);
    for (std::size_t k = 0; k < frames.size(); ++k) {
        Index y0 = static_cast<Index>(k) / cols * h, x0 = static_cast<Index>(k) % cols * w;
        for (Index y = 0; y < h; ++y)
            std::memcpy(sheet.px(y0 + y, x0), frames[k].px(y, 0), static_cast<std::size_t>(w) * 3 * sizeof(float));
    }
    return sheet;
}

void writeSynthesis(const SynthesisResult& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (std::size_t k = 0; k < r.views.size(); ++k) {
        char name[24];
        std::snprintf(name, sizeof name, "view_%03zu.png", k);
        savePng(dir / name, r.views[k]);
    }
    if (r.back) savePng(dir / "back.png", *r.back);
    savePng(dir / "sheet.png", contactSheet(r.views));
    std::string prov = r.provenanceJson + "\n";
    writeFileBytes(dir / "provenance.json", prov.data(), prov.size());
}

} // namespace orbiter360::pipeline
