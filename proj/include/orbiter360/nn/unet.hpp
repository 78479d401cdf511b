// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "orbiter360/nn/layers.hpp"

namespace orbiter360::nn {

struct UNetConfig {
    Index latentChannels = 4;
    Index baseChannels = 32;
    Index tembChannels = 64;
    Index nMaxViews = 8;
    bool temporal = true; ///< build view-attention sites (main denoiser only)
};

/// Key/value arrays for one attention site, shaped [B, tokens, channels].
template <typename S> struct SiteKV {
    Var<S> k = nullptr;
    Var<S> v = nullptr;
};

/// Everything that steers one denoiser forward pass beyond (z_t, t). All
/// entries are optional; an empty Conditioning reproduces the plain
/// unconditional UNet bit for bit.
template <typename S> struct Conditioning {
    /// Reference key/values appended to a site's own keys/values, in order.
    /// Keys must come from attentionSites().
    std::map<std::string, std::vector<SiteKV<S>>> refKV;
    /// Residuals added to skip/mid activations. Keys from controlTaps().
    std::map<std::string, Var<S>> controlResiduals;
    /// Extra per-sample embedding [B, tembChannels] added to the timestep
    /// embedding (scalar-pose conditioning ablation enters here).
    Var<S> tembExtra = nullptr;
    /// Attend across views: the batch is nViews-contiguous groups.
    bool temporal = false;
    Index nViews = 1;
    /// When set, every self-attention site records its own (k, v) here.
    /// This is how the reference network exposes its features.
    std::map<std::string, SiteKV<S>>* collectKV = nullptr;
};

/// Registered self-attention sites, in forward order.
const std::vector<std::string>& attentionSites();
/// Activation taps that accept control residuals (two skips and the mid).
const std::vector<std::string>& controlTaps();
/// View-attention sites present when UNetConfig::temporal is set.
const std::vector<std::string>& temporalSites();

bool isAttentionSite(const std::string& id);
bool isControlTap(const std::string& id);

/// Sinusoidal embedding of integer timesteps, [B, dim]; constant node.
template <typename S> Var<S> timestepEmbedding(Tape<S>& t, const std::vector<int>& tsteps, Index dim) {
    Index B = static_cast<Index>(tsteps.size());
    Index half = dim / 2;
    Tensor<S> e({B, dim});
    for (Index b = 0; b < B; ++b)
        for (Index i = 0; i < half; ++i) {
            double f = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            e.at(b, i) = static_cast<S>(std::sin(tsteps[static_cast<std::size_t>(b)] * f));
            e.at(b, half + i) = static_cast<S>(std::cos(tsteps[static_cast<std::size_t>(b)] * f));
        }
    return t.input(std::move(e));
}

/// Two-conv residual block with a timestep-embedding channel bias.
template <typename S> struct ResBlock {
    GroupNormLayer<S> gn1, gn2;
    Conv2dLayer<S> conv1, conv2;
    LinearLayer<S> emb;
    std::optional<Conv2dLayer<S>> skip;

    static ResBlock build(ParamStore<S>& store, const std::string& prefix, Index cin, Index cout, Index tembCh,
                          Rng& rng) {
        ResBlock b;
        b.gn1 = GroupNormLayer<S>::create(store, prefix + ".gn1", cin);
        b.conv1 = Conv2dLayer<S>::create(store, prefix + ".conv1", cin, cout, 3, rng);
        b.emb = LinearLayer<S>::create(store, prefix + ".emb", tembCh, cout, rng);
        b.gn2 = GroupNormLayer<S>::create(store, prefix + ".gn2", cout);
        b.conv2 = Conv2dLayer<S>::create(store, prefix + ".conv2", cout, cout, 3, rng);
        if (cin != cout) b.skip = Conv2dLayer<S>::create(store, prefix + ".skip", cin, cout, 1, rng, 1, 0);
        return b;
    }

    Var<S> operator()(Tape<S>& t, Var<S> x, Var<S> temb) const {
        Var<S> h = conv1(t, silu(t, gn1(t, x)));
        h = addChannelBias(t, h, emb(t, silu(t, temb)));
        h = conv2(t, silu(t, gn2(t, h)));
        return add(t, skip ? (*skip)(t, x) : x, h);
    }
};

/// Spatial transformer: norm, token projection, self-attention that can
/// attend over appended reference key/values, feed-forward, projection back.
template <typename S> struct TransBlock {
    GroupNormLayer<S> gn;
    LinearLayer<S> projIn, projOut;
    LayerNormLayer<S> ln1, ln2;
    LinearLayer<S> q, k, v, o;
    LinearLayer<S> ff1, ff2;
    Index channels = 0;

    static TransBlock build(ParamStore<S>& store, const std::string& prefix, Index c, Rng& rng) {
        TransBlock b;
        b.channels = c;
        b.gn = GroupNormLayer<S>::create(store, prefix + ".gn", c);
        b.projIn = LinearLayer<S>::create(store, prefix + ".proj_in", c, c, rng);
        b.ln1 = LayerNormLayer<S>::create(store, prefix + ".ln1", c);
        b.q = LinearLayer<S>::create(store, prefix + ".q", c, c, rng, false);
        b.k = LinearLayer<S>::create(store, prefix + ".k", c, c, rng, false);
        b.v = LinearLayer<S>::create(store, prefix + ".v", c, c, rng, false);
        b.o = LinearLayer<S>::create(store, prefix + ".o", c, c, rng);
        b.ln2 = LayerNormLayer<S>::create(store, prefix + ".ln2", c);
        b.ff1 = LinearLayer<S>::create(store, prefix + ".ff1", c, 4 * c, rng);
        b.ff2 = LinearLayer<S>::create(store, prefix + ".ff2", 4 * c, c, rng);
        b.projOut = LinearLayer<S>::create(store, prefix + ".proj_out", c, c, rng);
        return b;
    }

    /// Tile reference arrays over the query batch when one reference row
    /// serves several query rows (views of one scene share references).
    static Var<S> alignBatch(Tape<S>& t, Var<S> kv, Index B) {
        Index Bk = kv->value.dim(0);
        if (Bk == B) return kv;
        if (Bk >= 1 && B % Bk == 0) return repeatInterleave0(t, kv, B / Bk);
        throw IntegrationError("reference batch does not divide query batch");
    }

    /// Self-attention delta for `tokens` [B, T, C]. Reference key/values, if
    /// given, extend the attended set; with none the computation is plain
    /// self-attention with no extra graph nodes.
    Var<S> attend(Tape<S>& t, Var<S> tokens, const std::vector<SiteKV<S>>* refs, SiteKV<S>* collect) const {
        Index B = tokens->value.dim(0);
        Var<S> h = ln1(t, tokens);
        Var<S> qv = q(t, h);
        Var<S> kv = k(t, h);
        Var<S> vv = v(t, h);
        if (collect) {
            collect->k = kv;
            collect->v = vv;
        }
        if (refs)
            for (const SiteKV<S>& r : *refs) {
                if (r.k->value.lastDim() != channels || r.v->value.lastDim() != channels)
                    throw IntegrationError("reference feature width does not match attention site");
                kv = concatAxis(t, kv, alignBatch(t, r.k, B), 1);
                vv = concatAxis(t, vv, alignBatch(t, r.v, B), 1);
            }
        Var<S> scores = scale(t, bmmNT(t, qv, kv), S(1) / static_cast<S>(std::sqrt(double(channels))));
        return o(t, bmm(t, softmaxLast(t, scores), vv));
    }

    Var<S> operator()(Tape<S>& t, Var<S> x, const std::vector<SiteKV<S>>* refs, SiteKV<S>* collect) const {
        Index B = x->value.dim(0), H = x->value.dim(2), W = x->value.dim(3);
        Var<S> tokens = reshape(t, permute(t, gn(t, x), {0, 2, 3, 1}), {B, H * W, channels});
        tokens = projIn(t, tokens);
        tokens = add(t, tokens, attend(t, tokens, refs, collect));
        tokens = add(t, tokens, ff2(t, silu(t, ff1(t, ln2(t, tokens)))));
        Var<S> h = permute(t, reshape(t, projOut(t, tokens), {B, H, W, channels}), {0, 3, 1, 2});
        return add(t, x, h);
    }
};

/// Attention across the view axis with a zero-initialized output projection,
/// so a fresh site is an exact identity and training can only depart from it.
template <typename S> struct TemporalBlock {
    LayerNormLayer<S> ln;
    Parameter<S>* pos = nullptr; // [nMax, C]
    LinearLayer<S> q, k, v, o;
    Index channels = 0;
    Index nMax = 8;

    static TemporalBlock build(ParamStore<S>& store, const std::string& prefix, Index c, Index nMax, Rng& rng) {
        TemporalBlock b;
        b.channels = c;
        b.nMax = nMax;
        b.ln = LayerNormLayer<S>::create(store, prefix + ".ln", c);
        Rng pr = rng.fork(prefix + ".pos");
        b.pos = &store.create(prefix + ".pos", {nMax, c},
                              [&](Tensor<S>& v) { v = Tensor<S>::randn(v.shape(), pr, 0.02); });
        b.q = LinearLayer<S>::create(store, prefix + ".q", c, c, rng, false);
        b.k = LinearLayer<S>::create(store, prefix + ".k", c, c, rng, false);
        b.v = LinearLayer<S>::create(store, prefix + ".v", c, c, rng, false);
        b.o = LinearLayer<S>::create(store, prefix + ".o", c, c, rng, true, true);
        return b;
    }

    /// tokens [rows, N, C]: attention over the N view slots per row.
    Var<S> attendViews(Tape<S>& t, Var<S> tokens) const {
        Index N = tokens->value.dim(1);
        if (N > nMax) throw ArgumentError("view count exceeds the trained window size");
        Var<S> h = ln(t, tokens);
        h = addRowsBroadcast(t, h, slice0(t, t.param(*pos), 0, N));
        Var<S> qv = q(t, h);
        Var<S> kv = k(t, h);
        Var<S> vv = v(t, h);
        Var<S> scores = scale(t, bmmNT(t, qv, kv), S(1) / static_cast<S>(std::sqrt(double(channels))));
        return add(t, tokens, o(t, bmm(t, softmaxLast(t, scores), vv)));
    }

    /// x [G*nViews, C, H, W] with views contiguous per group.
    Var<S> operator()(Tape<S>& t, Var<S> x, Index nViews) const {
        Index B = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
        if (nViews < 1 || B % nViews != 0) throw IntegrationError("batch is not a whole number of view groups");
        Index G = B / nViews;
        Var<S> tok = reshape(t, x, {G, nViews, C, H, W});
        tok = reshape(t, permute(t, tok, {0, 3, 4, 1, 2}), {G * H * W, nViews, C});
        tok = attendViews(t, tok);
        tok = permute(t, reshape(t, tok, {G, H, W, nViews, C}), {0, 3, 4, 1, 2});
        return reshape(t, tok, {B, C, H, W});
    }
};

/// The denoiser. Two downsampling levels, an attending mid block, mirrored
/// decoder with skip concatenation, and a zero-initialized output head so a
/// fresh network predicts exactly zero noise.
template <typename S> class UNet {
  public:
    UNet() = default;

    /// Parameters are created under `prefix`; view-attention sites (when
    /// cfg.temporal) under `temporalPrefix`, which keeps them in their own
    /// training namespace.
    static UNet build(ParamStore<S>& store, const UNetConfig& cfg, const std::string& prefix,
                      const std::string& temporalPrefix, Rng rng) {
        ORBITER360_CHECK(cfg.baseChannels % 8 == 0 && cfg.baseChannels >= 8, "base channel count must be a multiple of 8");
        ORBITER360_CHECK(cfg.tembChannels % 2 == 0, "timestep embedding width must be even");
        UNet u;
        u.cfg_ = cfg;
        Index c0 = cfg.baseChannels, c1 = 2 * cfg.baseChannels, te = cfg.tembChannels;
        u.convIn_ = Conv2dLayer<S>::create(store, prefix + "conv_in", cfg.latentChannels, c0, 3, rng);
        u.tembFc1_ = LinearLayer<S>::create(store, prefix + "temb.fc1", te, te, rng);
        u.tembFc2_ = LinearLayer<S>::create(store, prefix + "temb.fc2", te, te, rng);
        u.down0Res_ = ResBlock<S>::build(store, prefix + "down0.res", c0, c0, te, rng);
        u.down0Attn_ = TransBlock<S>::build(store, prefix + "down0.attn", c0, rng);
        u.down0Down_ = Conv2dLayer<S>::create(store, prefix + "down0.down", c0, c0, 3, rng, 2, 1);
        u.down1Res_ = ResBlock<S>::build(store, prefix + "down1.res", c0, c1, te, rng);
        u.down1Attn_ = TransBlock<S>::build(store, prefix + "down1.attn", c1, rng);
        u.down1Down_ = Conv2dLayer<S>::create(store, prefix + "down1.down", c1, c1, 3, rng, 2, 1);
        u.midRes1_ = ResBlock<S>::build(store, prefix + "mid.res1", c1, c1, te, rng);
        u.midAttn_ = TransBlock<S>::build(store, prefix + "mid.attn", c1, rng);
        u.midRes2_ = ResBlock<S>::build(store, prefix + "mid.res2", c1, c1, te, rng);
        u.up1Res_ = ResBlock<S>::build(store, prefix + "up1.res", c1 + c1, c1, te, rng);
        u.up1Attn_ = TransBlock<S>::build(store, prefix + "up1.attn", c1, rng);
        u.up0Res_ = ResBlock<S>::build(store, prefix + "up0.res", c1 + c0, c0, te, rng);
        u.up0Attn_ = TransBlock<S>::build(store, prefix + "up0.attn", c0, rng);
        u.outGn_ = GroupNormLayer<S>::create(store, prefix + "out.gn", c0);
        u.outConv_ = Conv2dLayer<S>::create(store, prefix + "out.conv", c0, cfg.latentChannels, 3, rng, 1, 1, true);
        if (cfg.temporal) {
            u.midTemporal_ = TemporalBlock<S>::build(store, temporalPrefix + "mid.temporal", c1, cfg.nMaxViews, rng);
            u.up1Temporal_ = TemporalBlock<S>::build(store, temporalPrefix + "up1.temporal", c1, cfg.nMaxViews, rng);
        }
        return u;
    }

    const UNetConfig& config() const { return cfg_; }

    /// Predict the noise for z [B, latentChannels, H, W] at per-sample
    /// timesteps. Unknown conditioning keys are integration errors.
    Var<S> forward(Tape<S>& t, Var<S> z, const std::vector<int>& tsteps, const Conditioning<S>& cond) const {
        ORBITER360_CHECK(z->value.rank() == 4 && z->value.dim(1) == cfg_.latentChannels, "denoiser input is not an NCHW latent");
        ORBITER360_CHECK(z->value.dim(2) % 4 == 0 && z->value.dim(3) % 4 == 0 && z->value.dim(2) >= 4,
                         "latent extent must be a positive multiple of 4");
        ORBITER360_CHECK(static_cast<Index>(tsteps.size()) == z->value.dim(0), "one timestep per batch row required");
        validate(cond);

        Var<S> temb = tembFc2_(t, silu(t, tembFc1_(t, timestepEmbedding<S>(t, tsteps, cfg_.tembChannels))));
        if (cond.tembExtra) temb = add(t, temb, cond.tembExtra);

        auto refs = [&](const char* site) -> const std::vector<SiteKV<S>>* {
            auto it = cond.refKV.find(site);
            return it == cond.refKV.end() ? nullptr : &it->second;
        };
        auto slot = [&](const char* site) -> SiteKV<S>* {
            return cond.collectKV ? &(*cond.collectKV)[site] : nullptr;
        };
        auto tapped = [&](const char* site, Var<S> h) -> Var<S> {
            auto it = cond.controlResiduals.find(site);
            if (it == cond.controlResiduals.end()) return h;
            if (!it->second->value.sameShape(h->value))
                throw IntegrationError("control residual geometry does not match its tap");
            return add(t, h, it->second);
        };

        Var<S> h = convIn_(t, z);
        h = down0Res_(t, h, temb);
        h = down0Attn_(t, h, refs("down0.attn"), slot("down0.attn"));
        Var<S> s0 = tapped("down0", h);
        h = down0Down_(t, h);
        h = down1Res_(t, h, temb);
        h = down1Attn_(t, h, refs("down1.attn"), slot("down1.attn"));
        Var<S> s1 = tapped("down1", h);
        h = down1Down_(t, h);
        h = midRes1_(t, h, temb);
        h = midAttn_(t, h, refs("mid.attn"), slot("mid.attn"));
        h = midRes2_(t, h, temb);
        h = tapped("mid", h);
        if (cond.temporal && midTemporal_) h = (*midTemporal_)(t, h, cond.nViews);
        h = upsampleNearest2(t, h);
        h = concatAxis(t, h, s1, 1);
        h = up1Res_(t, h, temb);
        h = up1Attn_(t, h, refs("up1.attn"), slot("up1.attn"));
        if (cond.temporal && up1Temporal_) h = (*up1Temporal_)(t, h, cond.nViews);
        h = upsampleNearest2(t, h);
        h = concatAxis(t, h, s0, 1);
        h = up0Res_(t, h, temb);
        h = up0Attn_(t, h, refs("up0.attn"), slot("up0.attn"));
        return outConv_(t, silu(t, outGn_(t, h)));
    }

    const TransBlock<S>& attentionBlock(const std::string& site) const {
        if (site == "down0.attn") return down0Attn_;
        if (site == "down1.attn") return down1Attn_;
        if (site == "mid.attn") return midAttn_;
        if (site == "up1.attn") return up1Attn_;
        if (site == "up0.attn") return up0Attn_;
        throw IntegrationError("unknown attention site: " + site);
    }

    const TemporalBlock<S>& temporalBlock(const std::string& site) const {
        if (midTemporal_ && site == "mid.temporal") return *midTemporal_;
        if (up1Temporal_ && site == "up1.temporal") return *up1Temporal_;
        throw IntegrationError("unknown view-attention site: " + site);
    }

  private:
    void validate(const Conditioning<S>& cond) const {
        for (const auto& [site, kvs] : cond.refKV) {
            if (!isAttentionSite(site)) throw IntegrationError("unknown attention site: " + site);
            (void)kvs;
        }
        for (const auto& [site, r] : cond.controlResiduals) {
            if (!isControlTap(site)) throw IntegrationError("unknown control tap: " + site);
            (void)r;
        }
        if (cond.temporal && !midTemporal_)
            throw IntegrationError("view attention requested on a network built without it");
    }

    UNetConfig cfg_;
    Conv2dLayer<S> convIn_;
    LinearLayer<S> tembFc1_, tembFc2_;
    ResBlock<S> down0Res_, down1Res_, midRes1_, midRes2_, up1Res_, up0Res_;
    TransBlock<S> down0Attn_, down1Attn_, midAttn_, up1Attn_, up0Attn_;
    Conv2dLayer<S> down0Down_, down1Down_;
    GroupNormLayer<S> outGn_;
    Conv2dLayer<S> outConv_;
    std::optional<TemporalBlock<S>> midTemporal_, up1Temporal_;
};

/// Trainable copy of the denoiser encoder + mid that consumes a rendered
/// camera hint and emits residuals for the registered taps. Taps and the
/// final hint projection start at zero, so a fresh branch is inert.
template <typename S> class ControlNet {
  public:
    ControlNet() = default;

    static ControlNet build(ParamStore<S>& store, const UNetConfig& cfg, const std::string& prefix, Rng rng) {
        ControlNet c;
        c.cfg_ = cfg;
        Index c0 = cfg.baseChannels, c1 = 2 * cfg.baseChannels, te = cfg.tembChannels;
        const std::string cl = prefix + "clone.";
        c.convIn_ = Conv2dLayer<S>::create(store, cl + "conv_in", cfg.latentChannels, c0, 3, rng);
        c.tembFc1_ = LinearLayer<S>::create(store, cl + "temb.fc1", te, te, rng);
        c.tembFc2_ = LinearLayer<S>::create(store, cl + "temb.fc2", te, te, rng);
        c.down0Res_ = ResBlock<S>::build(store, cl + "down0.res", c0, c0, te, rng);
        c.down0Attn_ = TransBlock<S>::build(store, cl + "down0.attn", c0, rng);
        c.down0Down_ = Conv2dLayer<S>::create(store, cl + "down0.down", c0, c0, 3, rng, 2, 1);
        c.down1Res_ = ResBlock<S>::build(store, cl + "down1.res", c0, c1, te, rng);
        c.down1Attn_ = TransBlock<S>::build(store, cl + "down1.attn", c1, rng);
        c.down1Down_ = Conv2dLayer<S>::create(store, cl + "down1.down", c1, c1, 3, rng, 2, 1);
        c.midRes1_ = ResBlock<S>::build(store, cl + "mid.res1", c1, c1, te, rng);
        c.midAttn_ = TransBlock<S>::build(store, cl + "mid.attn", c1, rng);
        c.midRes2_ = ResBlock<S>::build(store, cl + "mid.res2", c1, c1, te, rng);
        c.hint0_ = Conv2dLayer<S>::create(store, prefix + "hint.conv0", 3, 16, 3, rng);
        c.hint1_ = Conv2dLayer<S>::create(store, prefix + "hint.conv1", 16, 32, 3, rng, 2, 1);
        c.hint2_ = Conv2dLayer<S>::create(store, prefix + "hint.conv2", 32, c0, 3, rng, 2, 1);
        c.hintOut_ = Conv2dLayer<S>::create(store, prefix + "hint.out", c0, c0, 1, rng, 1, 0, true);
        c.tapDown0_ = Conv2dLayer<S>::create(store, prefix + "tap.down0", c0, c0, 1, rng, 1, 0, true);
        c.tapDown1_ = Conv2dLayer<S>::create(store, prefix + "tap.down1", c1, c1, 1, rng, 1, 0, true);
        c.tapMid_ = Conv2dLayer<S>::create(store, prefix + "tap.mid", c1, c1, 1, rng, 1, 0, true);
        return c;
    }

    /// hint is the camera-condition image [B, 3, 4H, 4W] for latents
    /// [B, latentChannels, H, W]. Returns residuals keyed by controlTaps().
    std::map<std::string, Var<S>> forward(Tape<S>& t, Var<S> z, const std::vector<int>& tsteps, Var<S> hint) const {
        ORBITER360_CHECK(z->value.rank() == 4 && hint->value.rank() == 4 && hint->value.dim(1) == 3,
                         "control branch expects an NCHW latent and an RGB hint");
        ORBITER360_CHECK(hint->value.dim(0) == z->value.dim(0) && hint->value.dim(2) == 4 * z->value.dim(2) &&
                             hint->value.dim(3) == 4 * z->value.dim(3),
                         "camera hint resolution does not match the latent");
        ORBITER360_CHECK(static_cast<Index>(tsteps.size()) == z->value.dim(0), "one timestep per batch row required");
        Var<S> temb = tembFc2_(t, silu(t, tembFc1_(t, timestepEmbedding<S>(t, tsteps, cfg_.tembChannels))));
        Var<S> hf = silu(t, hint0_(t, hint));
        hf = silu(t, hint1_(t, hf));
        hf = silu(t, hint2_(t, hf));
        hf = hintOut_(t, hf);
        Var<S> h = add(t, convIn_(t, z), hf);
        h = down0Res_(t, h, temb);
        h = down0Attn_(t, h, nullptr, nullptr);
        Var<S> d0 = h;
        h = down0Down_(t, h);
        h = down1Res_(t, h, temb);
        h = down1Attn_(t, h, nullptr, nullptr);
        Var<S> d1 = h;
        h = down1Down_(t, h);
        h = midRes1_(t, h, temb);
        h = midAttn_(t, h, nullptr, nullptr);
        h = midRes2_(t, h, temb);
        std::map<std::string, Var<S>> out;
        out["down0"] = tapDown0_(t, d0);
        out["down1"] = tapDown1_(t, d1);
        out["mid"] = tapMid_(t, h);
        return out;
    }

  private:
    UNetConfig cfg_;
    Conv2dLayer<S> convIn_;
    LinearLayer<S> tembFc1_, tembFc2_;
    ResBlock<S> down0Res_, down1Res_, midRes1_, midRes2_;
    TransBlock<S> down0Attn_, down1Attn_, midAttn_;
    Conv2dLayer<S> down0Down_, down1Down_;
    Conv2dLayer<S> hint0_, hint1_, hint2_, hintOut_;
    Conv2dLayer<S> tapDown0_, tapDown1_, tapMid_;
};

/// Small convolutional autoencoder mapping [B,3,H,W] images to 4-channel
/// latents at H/4 x W/4. `latent_scale` is calibrated after training so
/// scaled latents have unit-ish variance for the diffusion process.
template <typename S> class Autoencoder {
  public:
    Autoencoder() = default;

    static Autoencoder build(ParamStore<S>& store, const std::string& prefix, Index latentChannels, Rng rng) {
        Autoencoder a;
        a.enc0_ = Conv2dLayer<S>::create(store, prefix + "enc0", 3, 16, 3, rng);
        a.enc0n_ = GroupNormLayer<S>::create(store, prefix + "enc0.gn", 16);
        a.enc1_ = Conv2dLayer<S>::create(store, prefix + "enc1", 16, 32, 3, rng, 2, 1);
        a.enc1n_ = GroupNormLayer<S>::create(store, prefix + "enc1.gn", 32);
        a.enc2_ = Conv2dLayer<S>::create(store, prefix + "enc2", 32, 32, 3, rng, 2, 1);
        a.enc2n_ = GroupNormLayer<S>::create(store, prefix + "enc2.gn", 32);
        a.encZ_ = Conv2dLayer<S>::create(store, prefix + "enc_z", 32, latentChannels, 3, rng);
        a.dec0_ = Conv2dLayer<S>::create(store, prefix + "dec0", latentChannels, 32, 3, rng);
        a.dec0n_ = GroupNormLayer<S>::create(store, prefix + "dec0.gn", 32);
        a.dec1_ = Conv2dLayer<S>::create(store, prefix + "dec1", 32, 32, 3, rng);
        a.dec1n_ = GroupNormLayer<S>::create(store, prefix + "dec1.gn", 32);
        a.dec2_ = Conv2dLayer<S>::create(store, prefix + "dec2", 32, 16, 3, rng);
        a.dec2n_ = GroupNormLayer<S>::create(store, prefix + "dec2.gn", 16);
        a.decOut_ = Conv2dLayer<S>::create(store, prefix + "dec_out", 16, 3, 3, rng);
        a.scale_ = &store.create(prefix + "latent_scale", {1}, [](Tensor<S>& v) { v.fill(S(1)); });
        return a;
    }

    /// Raw latent, before diffusion scaling. Used for training and scale
    /// calibration.
    Var<S> encodeRaw(Tape<S>& t, Var<S> img) const {
        ORBITER360_CHECK(img->value.rank() == 4 && img->value.dim(1) == 3 && img->value.dim(2) % 4 == 0 &&
                             img->value.dim(3) % 4 == 0,
                         "encoder expects NCHW RGB with extents divisible by 4");
        Var<S> h = silu(t, enc0n_(t, enc0_(t, img)));
        h = silu(t, enc1n_(t, enc1_(t, h)));
        h = silu(t, enc2n_(t, enc2_(t, h)));
        return encZ_(t, h);
    }

    Var<S> decodeRaw(Tape<S>& t, Var<S> z) const {
        Var<S> h = silu(t, dec0n_(t, dec0_(t, z)));
        h = upsampleNearest2(t, h);
        h = silu(t, dec1n_(t, dec1_(t, h)));
        h = upsampleNearest2(t, h);
        h = silu(t, dec2n_(t, dec2_(t, h)));
        return decOut_(t, h);
    }

    /// Diffusion-space latent: raw encoding times latent_scale.
    Var<S> encode(Tape<S>& t, Var<S> img) const { return scale(t, encodeRaw(t, img), scale_->value[0]); }

    /// Image from a diffusion-space latent.
    Var<S> decode(Tape<S>& t, Var<S> z) const {
        return decodeRaw(t, scale(t, z, S(1) / scale_->value[0]));
    }

    S latentScale() const { return scale_->value[0]; }
    void setLatentScale(S s) {
        ORBITER360_CHECK(s > S(0), "latent scale must be positive");
        scale_->value.fill(s);
    }

  private:
    Conv2dLayer<S> enc0_, enc1_, enc2_, encZ_, dec0_, dec1_, dec2_, decOut_;
    GroupNormLayer<S> enc0n_, enc1n_, enc2n_, dec0n_, dec1n_, dec2n_;
    Parameter<S>* scale_ = nullptr;
};

/// Copy values from `srcPrefix` into every parameter under `dstPrefix`,
/// matching by name suffix. This is how the reference and control clones are
/// initialized from the trained denoiser.
template <typename S>
void copyParamsBySuffix(ParamStore<S>& store, const std::string& dstPrefix, const std::string& srcPrefix) {
    bool any = false;
    store.forEachPrefix(dstPrefix, [&](Parameter<S>& dst) {
        const std::string suffix = dst.name.substr(dstPrefix.size());
        Parameter<S>& src = store.get(srcPrefix + suffix);
        if (!src.value.sameShape(dst.value))
            throw IntegrationError("clone shape mismatch at " + dst.name);
        dst.value = src.value;
        any = true;
    });
    if (!any) throw IntegrationError("no parameters under namespace: " + dstPrefix);
}

extern template class UNet<float>;
extern template class UNet<double>;
extern template class ControlNet<float>;
extern template class ControlNet<double>;
extern template class Autoencoder<float>;
extern template class Autoencoder<double>;

} // namespace orbiter360::nn
