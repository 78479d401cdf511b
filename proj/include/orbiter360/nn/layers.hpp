// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>

#include "orbiter360/core/ops.hpp"

namespace orbiter360::nn {

/// Layer wrappers bind named parameters from a ParamStore to the free-function
/// ops. They hold non-owning Parameter pointers, so copies of a layer alias
/// the same weights and a whole module remains a value type over one store.

template <typename S> struct Conv2dLayer {
    Parameter<S>* weight = nullptr; // [Cout, Cin, k, k]
    Parameter<S>* bias = nullptr;   // [Cout]
    Index stride = 1;
    Index pad = 1;

    static Conv2dLayer create(ParamStore<S>& store, const std::string& name, Index cin, Index cout, Index k,
                              Rng& rng, Index stride = 1, Index pad = 1, bool zeroInit = false) {
        Conv2dLayer l;
        l.stride = stride;
        l.pad = pad;
        double std = std::sqrt(2.0 / static_cast<double>(cin * k * k));
        Rng wr = rng.fork(name + ".w");
        l.weight = &store.create(name + ".w", {cout, cin, k, k}, [&](Tensor<S>& v) {
            if (!zeroInit) v = Tensor<S>::randn(v.shape(), wr, std);
        });
        l.bias = &store.create(name + ".b", {cout}, nullptr);
        return l;
    }

    Var<S> operator()(Tape<S>& t, Var<S> x) const {
        return conv2d(t, x, t.param(*weight), t.param(*bias), stride, pad);
    }
};

template <typename S> struct LinearLayer {
    Parameter<S>* weight = nullptr; // [Out, In]
    Parameter<S>* bias = nullptr;   // [Out], optional

    static LinearLayer create(ParamStore<S>& store, const std::string& name, Index in, Index out, Rng& rng,
                              bool withBias = true, bool zeroInit = false) {
        LinearLayer l;
        double std = std::sqrt(1.0 / static_cast<double>(in));
        Rng wr = rng.fork(name + ".w");
        l.weight = &store.create(name + ".w", {out, in}, [&](Tensor<S>& v) {
            if (!zeroInit) v = Tensor<S>::randn(v.shape(), wr, std);
        });
        if (withBias) l.bias = &store.create(name + ".b", {out}, nullptr);
        return l;
    }

    Var<S> operator()(Tape<S>& t, Var<S> x) const {
        return linear(t, x, t.param(*weight), bias ? t.param(*bias) : nullptr);
    }
};

template <typename S> struct GroupNormLayer {
    Parameter<S>* gamma = nullptr;
    Parameter<S>* beta = nullptr;
    Index groups = 8;

    static GroupNormLayer create(ParamStore<S>& store, const std::string& name, Index channels, Index groups = 8) {
        GroupNormLayer l;
        l.groups = groups;
        l.gamma = &store.create(name + ".g", {channels}, [](Tensor<S>& v) { v.fill(S(1)); });
        l.beta = &store.create(name + ".b", {channels}, nullptr);
        return l;
    }

    Var<S> operator()(Tape<S>& t, Var<S> x) const {
        return groupNorm(t, x, t.param(*gamma), t.param(*beta), groups);
    }
};

template <typename S> struct LayerNormLayer {
    Parameter<S>* gamma = nullptr;
    Parameter<S>* beta = nullptr;

    static LayerNormLayer create(ParamStore<S>& store, const std::string& name, Index dim) {
        LayerNormLayer l;
        l.gamma = &store.create(name + ".g", {dim}, [](Tensor<S>& v) { v.fill(S(1)); });
        l.beta = &store.create(name + ".b", {dim}, nullptr);
        return l;
    }

    Var<S> operator()(Tape<S>& t, Var<S> x) const {
        return layerNormLast(t, x, t.param(*gamma), t.param(*beta));
    }
};

} // namespace orbiter360::nn
