// SPDX-License-Identifier: Apache-2.0
#include "orbiter360/train/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "orbiter360/control/appearance.hpp"
#include "orbiter360/control/backview.hpp"
#include "orbiter360/control/camera.hpp"

namespace orbiter360::train {

using control::BatchMode;
using pipeline::AdamState;
using pipeline::stageName;
using pipeline::stagePrerequisites;

namespace {

/// One RNG per (seed, stage, absolute step): step k draws the same stream
/// whether it is reached in one run or across a resume.
Rng rngForStep(std::uint64_t seed, Stage s, long absStep) {
    std::uint64_t h = fnv1a64(std::string("train:") + stageName(s));
    std::uint64_t payload[2] = {seed, static_cast<std::uint64_t>(absStep)};
    return Rng(fnv1a64(payload, sizeof payload, h));
}

/// Namespaces whose parameters this step updates. The substrate stage first
/// fits the autoencoder on image reconstruction, then switches to the
/// denoiser; every other stage owns exactly one namespace.
std::vector<std::string> activeNamespaces(const TrainConfig& cfg, long absStep) {
    if (cfg.stage == Stage::autoencoder)
        return {absStep < cfg.reconSteps ? "autoencoder/" : "backbone/"};
    return pipeline::stageNamespaces(cfg.stage);
}

TensorF loadRows(const data::Dataset& ds, const std::vector<std::size_t>& rows) {
    std::vector<Image> ims;
    ims.reserve(rows.size());
    for (std::size_t r : rows) ims.push_back(ds.loadImage(r));
    return imagesToTensor(ims);
}

TensorF encodeNoGrad(const ModelBundle& b, const TensorF& imgs, bool raw) {
    Tape<float> t(false);
    Var<float> x = t.input(imgs);
    return (raw ? b.autoenc.encodeRaw(t, x) : b.autoenc.encode(t, x))->value;
}

/// Fix latent_scale so diffusion-space latents are roughly unit variance.
/// The probe batch derives from the run seed alone, so a resumed run that
/// crosses the phase boundary calibrates to the same value.
void calibrateLatentScale(ModelBundle& b, const data::Dataset& ds, std::uint64_t seed) {
    Rng rng(fnv1a64(&seed, sizeof seed, fnv1a64("calibrate:latent-scale")));
    std::vector<std::size_t> rows;
    for (int i = 0; i < 16; ++i) rows.push_back(rng.below(ds.records.size()));
    TensorF z = encodeNoGrad(b, loadRows(ds, rows), true);
    double mean = z.array().cast<double>().mean();
    double var = (z.array().cast<double>() - mean).square().mean();
    if (!(var > 1e-12)) throw TrainingError("latent calibration found a degenerate encoding");
    b.store.get("autoencoder/latent_scale").value[0] = static_cast<float>(1.0 / std::sqrt(var));
    b.scaleCalibrated = true;
}

/// q-sample a batch at per-row timesteps.
TensorF noiseRows(const TensorF& z0, const std::vector<int>& ts, const TensorF& eps,
                  const diffusion::NoiseSchedule& sched) {
    TensorF zt(z0.shape());
    for (Index i = 0; i < z0.dim(0); ++i)
        zt.setSlice0(i, diffusion::forwardDiffuse(z0.slice0(i, 1), ts[static_cast<std::size_t>(i)],
                                                  eps.slice0(i, 1), sched));
    return zt;
}

std::size_t sceneIndexOfRow(const data::Dataset& ds, std::size_t row) {
    std::uint64_t seed = ds.records[row].sceneSeed;
    for (std::size_t i = 0; i < ds.scenes.size(); ++i)
        if (ds.scenes[i].sceneSeed == seed) return i;
    throw DataError("dataset row belongs to no scene");
}

/// Noised reference latent at the target timestep: the reference branch sees
/// the same noise level the denoiser is solving.
Var<float> noisedRef(Tape<float>& t, const ModelBundle& b, const TensorF& zRef, int tstep, Rng& rng) {
    TensorF eps = TensorF::randn(zRef.shape(), rng);
    std::vector<int> ts(static_cast<std::size_t>(zRef.dim(0)), tstep);
    return t.input(noiseRows(zRef, ts, eps, b.sched));
}

struct StepContext {
    Tape<float> tape;
    Var<float> loss = nullptr;
};

void substrateStep(StepContext& sc, ModelBundle& b, const data::Dataset& ds, const TrainConfig& cfg, long absStep,
                   Rng& rng) {
    std::vector<std::size_t> rows;
    for (int i = 0; i < cfg.batch; ++i) rows.push_back(rng.below(ds.records.size()));
    if (absStep < cfg.reconSteps) {
        Var<float> x = sc.tape.input(loadRows(ds, rows));
        Var<float> xh = b.autoenc.decodeRaw(sc.tape, b.autoenc.encodeRaw(sc.tape, x));
        sc.loss = mseLoss(sc.tape, xh, x);
        return;
    }
    if (!b.scaleCalibrated) calibrateLatentScale(b, ds, cfg.seed);
    TensorF z0 = encodeNoGrad(b, loadRows(ds, rows), false);
    std::vector<int> ts;
    for (int i = 0; i < cfg.batch; ++i) ts.push_back(1 + static_cast<int>(rng.below(b.sched.T)));
    TensorF eps = TensorF::randn(z0.shape(), rng);
    Var<float> zt = sc.tape.input(noiseRows(z0, ts, eps, b.sched));
    Var<float> epsHat = b.backbone.forward(sc.tape, zt, ts, {});
    sc.loss = mseLoss(sc.tape, epsHat, sc.tape.input(eps));
}

/// Shared body of the appearance and camera stages: one scene, one mined
/// reference pair, a batch of denoise targets conditioned on the pair.
void referenceStep(StepContext& sc, ModelBundle& b, const data::Dataset& ds, const TrainConfig& cfg, Rng& rng,
                   bool withCamera) {
    std::size_t scene = rng.below(ds.scenes.size());
    double dropout = withCamera ? 0.0 : cfg.backDropout;
    control::PairPlan plan = control::planTrainingPair(ds, scene, rng, dropout);
    const auto& sc_rows = ds.scenes[scene].rows;

    std::vector<std::size_t> rows;
    std::vector<scene::CameraPose> poses;
    for (int i = 0; i < cfg.batch; ++i) {
        rows.push_back(sc_rows[rng.below(sc_rows.size())]);
        poses.push_back(ds.records[rows.back()].pose);
    }
    TensorF z0 = encodeNoGrad(b, loadRows(ds, rows), false);
    int tstep = 1 + static_cast<int>(rng.below(b.sched.T));
    std::vector<int> ts(static_cast<std::size_t>(cfg.batch), tstep);
    TensorF eps = TensorF::randn(z0.shape(), rng);
    Var<float> zt = sc.tape.input(noiseRows(z0, ts, eps, b.sched));

    TensorF zF = encodeNoGrad(b, loadRows(ds, {plan.frontRow}), false);
    Var<float> front = noisedRef(sc.tape, b, zF, tstep, rng);
    Var<float> back = nullptr;
    if (!plan.dropBack) {
        TensorF zB = encodeNoGrad(b, loadRows(ds, {plan.backRow}), false);
        back = noisedRef(sc.tape, b, zB, tstep, rng);
    }
    auto ctx = control::buildTrainingContext(sc.tape, b.refNet, front, back, {tstep}, plan.separationDeg);

    nn::Conditioning<float> cond;
    cond.refKV = control::referenceConditioning(ctx);
    if (withCamera) {
        if (cfg.cameraMode == CameraMode::image) {
            Var<float> hint = sc.tape.input(control::renderHints(poses, b.cfg.resolution));
            control::attachResiduals(sc.tape, cond, b.control.forward(sc.tape, zt, ts, hint));
        } else {
            cond.tembExtra = b.scalarCond(sc.tape, poses);
        }
    }
    Var<float> epsHat = b.backbone.forward(sc.tape, zt, ts, cond);
    sc.loss = mseLoss(sc.tape, epsHat, sc.tape.input(eps));
}

void consistencyStep(StepContext& sc, ModelBundle& b, const data::Dataset& ds, const TrainConfig& cfg, Rng& rng) {
    TensorF z0;
    std::vector<scene::CameraPose> poses;
    std::vector<TensorF> zFronts, zBacks;
    double separation = 0.0;
    for (int g = 0; g < cfg.groups; ++g) {
        control::ViewBatch vb = control::makeTrainingBatch(ds, b.autoenc, cfg.batchMode, cfg.nViews, rng);
        if (g == 0) {
            Shape s = vb.latents.shape();
            s[0] *= cfg.groups;
            z0 = TensorF(s);
        }
        z0.setSlice0(static_cast<Index>(g) * cfg.nViews, vb.latents);
        poses.insert(poses.end(), vb.poses.begin(), vb.poses.end());

        std::size_t scene = sceneIndexOfRow(ds, vb.rows.front());
        control::PairPlan plan = control::planTrainingPair(ds, scene, rng, 0.0);
        zFronts.push_back(encodeNoGrad(b, loadRows(ds, {plan.frontRow}), false));
        zBacks.push_back(encodeNoGrad(b, loadRows(ds, {plan.backRow}), false));
        separation += plan.separationDeg / cfg.groups;
    }
    TensorF zF(zFronts.front().shape()), zB(zBacks.front().shape());
    {
        Shape s = zF.shape();
        s[0] = cfg.groups;
        zF = TensorF(s);
        zB = TensorF(s);
        for (int g = 0; g < cfg.groups; ++g) {
            zF.setSlice0(g, zFronts[static_cast<std::size_t>(g)]);
            zB.setSlice0(g, zBacks[static_cast<std::size_t>(g)]);
        }
    }

    int tstep = 1 + static_cast<int>(rng.below(b.sched.T));
    std::vector<int> ts(static_cast<std::size_t>(cfg.groups) * cfg.nViews, tstep);
    TensorF eps = TensorF::randn(z0.shape(), rng);
    Var<float> zt = sc.tape.input(noiseRows(z0, ts, eps, b.sched));

    std::vector<int> tsRef(static_cast<std::size_t>(cfg.groups), tstep);
    Var<float> front = noisedRef(sc.tape, b, zF, tstep, rng);
    Var<float> back = noisedRef(sc.tape, b, zB, tstep, rng);
    auto ctx = control::buildTrainingContext(sc.tape, b.refNet, front, back, tsRef, separation);

    nn::Conditioning<float> cond;
    cond.refKV = control::referenceConditioning(ctx);
    cond.temporal = true;
    cond.nViews = cfg.nViews;
    Var<float> hint = sc.tape.input(control::renderHints(poses, b.cfg.resolution));
    control::attachResiduals(sc.tape, cond, b.control.forward(sc.tape, zt, ts, hint));

    Var<float> epsHat = b.backbone.forward(sc.tape, zt, ts, cond);
    sc.loss = mseLoss(sc.tape, epsHat, sc.tape.input(eps));
}

void backgenStep(StepContext& sc, ModelBundle& b, const data::Dataset& ds, const TrainConfig& cfg,
                 const std::vector<control::FrontBackPair>& corpus, Rng& rng) {
    std::vector<std::size_t> backRows, frontRows;
    std::vector<scene::CameraPose> backPoses;
    double separation = 0.0;
    for (int i = 0; i < cfg.batch; ++i) {
        const auto& pair = corpus[rng.below(corpus.size())];
        backRows.push_back(pair.backRow);
        frontRows.push_back(pair.frontRow);
        backPoses.push_back(ds.records[pair.backRow].pose);
        separation += pair.separationDeg / cfg.batch;
    }
    TensorF z0 = encodeNoGrad(b, loadRows(ds, backRows), false);
    TensorF zF = encodeNoGrad(b, loadRows(ds, frontRows), false);

    int tstep = 1 + static_cast<int>(rng.below(b.sched.T));
    std::vector<int> ts(static_cast<std::size_t>(cfg.batch), tstep);
    TensorF eps = TensorF::randn(z0.shape(), rng);
    Var<float> zt = sc.tape.input(noiseRows(z0, ts, eps, b.sched));

    Var<float> front = noisedRef(sc.tape, b, zF, tstep, rng);
    auto ctx = control::buildTrainingContext(sc.tape, b.backgenRef, front, Var<float>(nullptr), ts, separation);

    nn::Conditioning<float> cond;
    cond.refKV = control::referenceConditioning(ctx);
    Var<float> hint = sc.tape.input(control::renderHints(backPoses, b.cfg.resolution));
    control::attachResiduals(sc.tape, cond, b.backgenCtrl.forward(sc.tape, zt, ts, hint));

    Var<float> epsHat = b.backbone.forward(sc.tape, zt, ts, cond);
    sc.loss = mseLoss(sc.tape, epsHat, sc.tape.input(eps));
}

/// Decoupled-moment update over the trainable parameters, in store order.
void adamUpdate(ModelBundle& b, float lr) {
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    b.adam.t += 1;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(b.adam.t));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(b.adam.t));
    b.store.forEach([&](Parameter<float>& p) {
        if (!p.trainable) return;
        auto& mv = b.adam.moments[p.name];
        if (mv.first.empty()) {
            mv.first = TensorF::zeros(p.value.shape());
            mv.second = TensorF::zeros(p.value.shape());
        }
        float* m = mv.first.data();
        float* v = mv.second.data();
        const float* g = p.grad.data();
        float* w = p.value.data();
        for (Index i = 0; i < p.value.numel(); ++i) {
            double gi = g[i];
            double mi = kBeta1 * m[i] + (1.0 - kBeta1) * gi;
            double vi = kBeta2 * v[i] + (1.0 - kBeta2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            w[i] -= static_cast<float>(lr * (mi / c1) / (std::sqrt(vi / c2) + kEps));
        }
    });
}

} // namespace

TrainResult trainStage(ModelBundle& b, const data::Dataset& ds, const TrainConfig& cfg,
                       const std::filesystem::path& logPath) {
    ORBITER360_CHECK(cfg.steps >= 1, "nothing to train: steps must be positive");
    ORBITER360_CHECK(cfg.batch >= 1 && cfg.groups >= 1 && cfg.nViews >= 1, "batch geometry must be positive");
    ORBITER360_CHECK(cfg.learningRate > 0.0f, "learning rate must be positive");
    if (ds.records.empty()) throw DataError("dataset has no views");
    if (ds.resolution() != b.cfg.resolution)
        throw DataError("dataset resolution " + std::to_string(ds.resolution()) + " does not match the model's " +
                        std::to_string(b.cfg.resolution));
    ORBITER360_CHECK(cfg.nViews <= b.cfg.nMaxViews, "nViews exceeds the view-attention capacity");

    const std::string name = stageName(cfg.stage);
    for (Stage p : stagePrerequisites(cfg.stage))
        if (b.stepsDone(p) == 0)
            throw UsageError("stage \"" + name + "\" requires a trained \"" + std::string(stageName(p)) +
                             "\" stage; train that first");

    long done = b.stepsDone(cfg.stage);
    if (done == 0) {
        // A stage's trunk starts from the trained denoiser, not from scratch.
        switch (cfg.stage) {
        case Stage::appearance: nn::copyParamsBySuffix(b.store, std::string("appearance/"), std::string("backbone/")); break;
        case Stage::camera: nn::copyParamsBySuffix(b.store, std::string("camera/clone."), std::string("backbone/")); break;
        case Stage::backgen:
            nn::copyParamsBySuffix(b.store, std::string("backgen/ref."), std::string("backbone/"));
            nn::copyParamsBySuffix(b.store, std::string("backgen/ctrl.clone."), std::string("backbone/"));
            break;
        default: break;
        }
    }
    if (b.adam.stage != name) b.adam = AdamState{name, 0, {}};

    std::vector<control::FrontBackPair> corpus;
    if (cfg.stage == Stage::backgen) {
        Rng crng(fnv1a64(&cfg.seed, sizeof cfg.seed, fnv1a64("corpus:backgen")));
        corpus = control::buildPairCorpus(ds, cfg.corpusSize, cfg.styleMix, crng);
    }

    std::ofstream log;
    if (!logPath.empty()) {
        log.open(logPath, std::ios::app);
        if (!log) throw IoError("cannot open training log: " + logPath.string());
    }

    TrainResult res;
    res.firstStep = static_cast<int>(done);
    for (int k = 0; k < cfg.steps; ++k) {
        long absStep = done + k;
        Rng rng = rngForStep(cfg.seed, cfg.stage, absStep);
        auto active = activeNamespaces(cfg, absStep);

        b.store.setTrainableAll(false);
        for (const auto& ns : active) b.store.setTrainablePrefix(ns, true);
        b.store.zeroGrad();

        auto wall0 = std::chrono::steady_clock::now();
        StepContext sc;
        switch (cfg.stage) {
        case Stage::autoencoder: substrateStep(sc, b, ds, cfg, absStep, rng); break;
        case Stage::appearance: referenceStep(sc, b, ds, cfg, rng, false); break;
        case Stage::camera: referenceStep(sc, b, ds, cfg, rng, true); break;
        case Stage::consistency: consistencyStep(sc, b, ds, cfg, rng); break;
        case Stage::backgen: backgenStep(sc, b, ds, cfg, corpus, rng); break;
        }

        double lossVal = scalarValue(sc.loss);
        if (!std::isfinite(lossVal))
            throw TrainingError("non-finite loss at " + name + " step " + std::to_string(absStep));
        sc.tape.backward(sc.loss);

        std::map<std::string, double> norms;
        for (const auto& ns : pipeline::parameterNamespaces()) {
            double s = 0.0;
            b.store.forEachPrefix(ns, [&](Parameter<float>& p) {
                s += p.grad.array().cast<double>().square().sum();
            });
            norms[ns] = std::sqrt(s);
        }
        for (const auto& [ns, normVal] : norms) {
            bool isActive = std::find(active.begin(), active.end(), ns) != active.end();
            if (!isActive && normVal != 0.0)
                throw TrainingError("gradient leaked into frozen namespace " + ns);
            if (isActive && !std::isfinite(normVal))
                throw TrainingError("non-finite gradient in " + ns + " at step " + std::to_string(absStep));
        }

        adamUpdate(b, cfg.learningRate);

        auto wallMs =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - wall0).count();
        res.losses.push_back(lossVal);
        if (k == cfg.steps - 1) res.gradNorms = norms;
        if (log) {
            nlohmann::json rec{{"step", absStep}, {"stage", name}, {"loss", lossVal}, {"wall_ms", wallMs}};
            for (const auto& [ns, normVal] : norms) rec["grad_norm"][ns] = normVal;
            log << rec.dump() << '\n';
            log.flush();
        }
    }

    b.completedSteps[name] = static_cast<int>(done + cfg.steps);
    return res;
}

} // namespace orbiter360::train
