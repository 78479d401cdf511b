// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "orbiter360/core/ops.hpp"

using namespace orbiter360;

namespace {

using BuildFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Compare reverse-mode gradients against central finite differences for
/// every element of every input (subsampled above `maxPerInput`).
void checkGrad(const BuildFn& build, std::vector<TensorD> inputs, double h = 1e-4, double tol = 1e-3,
               Index maxPerInput = 96) {
    Tape<double> tape(true);
    std::vector<Var<double>> vars;
    for (auto& in : inputs) vars.push_back(tape.leaf(in));
    Var<double> loss = build(tape, vars);
    REQUIRE(loss->value.numel() == 1);
    tape.backward(loss);
    std::vector<TensorD> analytic;
    for (auto* v : vars) analytic.push_back(v->grad.empty() ? TensorD(v->value.shape()) : v->grad);

    auto eval = [&](const std::vector<TensorD>& xs) {
        Tape<double> t2(false);
        std::vector<Var<double>> vs;
        for (auto& x : xs) vs.push_back(t2.input(x));
        return scalarValue(build(t2, vs));
    };

    int checked = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        Index n = inputs[i].numel();
        Index step = std::max<Index>(1, n / maxPerInput);
        for (Index j = 0; j < n; j += step) {
            std::vector<TensorD> xs = inputs;
            xs[i][j] += h;
            double fp = eval(xs);
            xs[i][j] -= 2 * h;
            double fm = eval(xs);
            double fd = (fp - fm) / (2 * h);
            double an = analytic[i][j];
            double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-3});
            INFO("input ", i, " elem ", j, " analytic ", an, " fd ", fd);
            CHECK(rel < tol);
            ++checked;
        }
    }
    CHECK(checked > 0);
}

TensorD randT(Shape s, std::uint64_t seed, double std = 1.0) {
    Rng rng(seed);
    return TensorD::randn(std::move(s), rng, std);
}

} // namespace

TEST_CASE("elementwise ops match finite differences") {
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, add(t, v[0], v[1]), v[2]); },
              {randT({3, 4}, 1), randT({3, 4}, 2), randT({3, 4}, 3)});
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, sub(t, v[0], v[1]), v[2]); },
              {randT({3, 4}, 4), randT({3, 4}, 5), randT({3, 4}, 6)});
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, mul(t, v[0], v[1]), v[2]); },
              {randT({3, 4}, 7), randT({3, 4}, 8), randT({3, 4}, 9)});
    checkGrad([](Tape<double>& t, auto& v) { return sumAll(t, scale(t, v[0], 2.5)); }, {randT({5}, 10)});
    checkGrad([](Tape<double>& t, auto& v) { return meanAll(t, addScalar(t, v[0], -1.25)); }, {randT({5}, 11)});
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, sigmoid(t, v[0]), v[1]); },
              {randT({4, 3}, 12), randT({4, 3}, 13)});
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, silu(t, v[0]), v[1]); },
              {randT({4, 3}, 14), randT({4, 3}, 15)});
}

TEST_CASE("shape ops match finite differences") {
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, reshape(t, v[0], {6, 2}), v[1]); },
              {randT({3, 4}, 20), randT({6, 2}, 21)});
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, permute(t, v[0], {2, 0, 1}), v[1]); },
              {randT({2, 3, 4}, 22), randT({4, 2, 3}, 23)});
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, permute(t, v[0], {0, 2, 3, 1}), v[1]); },
              {randT({2, 3, 2, 2}, 24), randT({2, 2, 2, 3}, 25)});
    for (Index axis : {Index(0), Index(1), Index(2)}) {
        checkGrad(
            [axis](Tape<double>& t, auto& v) { return mseLoss(t, concatAxis(t, v[0], v[1], axis), v[2]); },
            {randT({2, 3, 4}, 26), randT(axis == 0 ? Shape{3, 3, 4} : axis == 1 ? Shape{2, 2, 4} : Shape{2, 3, 2},
                                         27),
             randT(axis == 0 ? Shape{5, 3, 4} : axis == 1 ? Shape{2, 5, 4} : Shape{2, 3, 6}, 28)});
    }
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, slice0(t, v[0], 1, 2), v[1]); },
              {randT({4, 3}, 29), randT({2, 3}, 30)});
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, repeatInterleave0(t, v[0], 3), v[1]); },
              {randT({2, 4}, 91), randT({6, 4}, 92)});
}

TEST_CASE("repeatInterleave0 tiles whole blocks in place") {
    Tape<double> t(false);
    Var<double> a = t.input(TensorD::fromList({2, 2}, {1, 2, 3, 4}));
    Var<double> r = repeatInterleave0(t, a, 2);
    REQUIRE(r->value.shape() == Shape{4, 2});
    CHECK(r->value.at(0, 0) == 1);
    CHECK(r->value.at(1, 0) == 1);
    CHECK(r->value.at(1, 1) == 2);
    CHECK(r->value.at(2, 0) == 3);
    CHECK(r->value.at(3, 1) == 4);
}

TEST_CASE("matrix ops match finite differences") {
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, matmul(t, v[0], v[1]), v[2]); },
              {randT({3, 4}, 31), randT({4, 2}, 32), randT({3, 2}, 33)});
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, bmm(t, v[0], v[1]), v[2]); },
              {randT({2, 3, 4}, 34), randT({2, 4, 2}, 35), randT({2, 3, 2}, 36)});
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, bmmNT(t, v[0], v[1]), v[2]); },
              {randT({2, 3, 4}, 37), randT({2, 5, 4}, 38), randT({2, 3, 5}, 39)});
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, linear(t, v[0], v[1], v[2]), v[3]); },
              {randT({2, 3, 4}, 40), randT({5, 4}, 41), randT({5}, 42), randT({2, 3, 5}, 43)});
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, linear(t, v[0], v[1]), v[2]); },
              {randT({3, 4}, 44), randT({5, 4}, 45), randT({3, 5}, 46)});
}

TEST_CASE("conv2d matches finite differences") {
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, conv2d(t, v[0], v[1], v[2], 1, 1), v[3]); },
              {randT({2, 3, 4, 4}, 50), randT({4, 3, 3, 3}, 51, 0.4), randT({4}, 52), randT({2, 4, 4, 4}, 53)});
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, conv2d(t, v[0], v[1], v[2], 2, 1), v[3]); },
              {randT({1, 2, 6, 6}, 54), randT({3, 2, 3, 3}, 55, 0.4), randT({3}, 56), randT({1, 3, 3, 3}, 57)});
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, conv2d(t, v[0], v[1], v[2], 1, 0), v[3]); },
              {randT({2, 3, 3, 3}, 58), randT({5, 3, 1, 1}, 59, 0.6), randT({5}, 60), randT({2, 5, 3, 3}, 61)});
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, conv2d(t, v[0], v[1], nullptr, 1, 1), v[2]); },
              {randT({1, 2, 4, 4}, 62), randT({2, 2, 3, 3}, 63, 0.4), randT({1, 2, 4, 4}, 64)});
}

TEST_CASE("normalization ops match finite differences") {
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, groupNorm(t, v[0], v[1], v[2], 2), v[3]); },
              {randT({2, 4, 3, 2}, 70), randT({4}, 71, 0.3), randT({4}, 72, 0.3), randT({2, 4, 3, 2}, 73)});
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, layerNormLast(t, v[0], v[1], v[2]), v[3]); },
              {randT({3, 5}, 74), randT({5}, 75, 0.3), randT({5}, 76, 0.3), randT({3, 5}, 77)});
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, softmaxLast(t, v[0]), v[1]); },
              {randT({4, 6}, 78), randT({4, 6}, 79)});
}

TEST_CASE("spatial and broadcast ops match finite differences") {
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, upsampleNearest2(t, v[0]), v[1]); },
              {randT({2, 3, 2, 2}, 80), randT({2, 3, 4, 4}, 81)});
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, avgPool2(t, v[0]), v[1]); },
              {randT({2, 3, 4, 4}, 82), randT({2, 3, 2, 2}, 83)});
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, addChannelBias(t, v[0], v[1]), v[2]); },
              {randT({2, 3, 2, 2}, 84), randT({2, 3}, 85), randT({2, 3, 2, 2}, 86)});
    checkGrad([](Tape<double>& t, auto& v) { return mseLoss(t, addRowsBroadcast(t, v[0], v[1]), v[2]); },
              {randT({3, 4, 2}, 87), randT({4, 2}, 88), randT({3, 4, 2}, 89)});
}

TEST_CASE("composite attention block matches finite differences") {
    // q,k,v projections -> scores -> softmax -> weighted sum, as used by the
    // denoiser's self-attention sites.
    auto build = [](Tape<double>& t, const std::vector<Var<double>>& v) {
        Var<double> q = linear(t, v[0], v[1]);
        Var<double> k = linear(t, v[0], v[2]);
        Var<double> val = linear(t, v[0], v[3]);
        Var<double> att = softmaxLast(t, scale(t, bmmNT(t, q, k), 1.0 / std::sqrt(4.0)));
        return mseLoss(t, bmm(t, att, val), v[4]);
    };
    checkGrad(build, {randT({2, 5, 4}, 90), randT({4, 4}, 91, 0.5), randT({4, 4}, 92, 0.5), randT({4, 4}, 93, 0.5),
                      randT({2, 5, 4}, 94)});
}

TEST_CASE("weight sharing accumulates gradients from every use") {
    auto build = [](Tape<double>& t, const std::vector<Var<double>>& v) {
        Var<double> y1 = matmul(t, v[0], v[1]);
        Var<double> y2 = matmul(t, y1, v[1]);
        return mseLoss(t, y2, v[2]);
    };
    checkGrad(build, {randT({3, 3}, 95), randT({3, 3}, 96, 0.5), randT({3, 3}, 97)});
}

TEST_CASE("frozen parameters keep exactly zero gradients") {
    ParamStore<double> store;
    Rng rng(123);
    auto& w1 = store.create("enc/w", {4, 4}, [&](TensorD& v) { v = TensorD::randn({4, 4}, rng, 0.5); });
    auto& w2 = store.create("dec/w", {4, 4}, [&](TensorD& v) { v = TensorD::randn({4, 4}, rng, 0.5); });
    store.setTrainablePrefix("enc/", false);

    Tape<double> tape(true);
    Var<double> x = tape.input(randT({2, 4}, 99));
    Var<double> h = matmul(tape, x, tape.param(w1));
    Var<double> y = matmul(tape, h, tape.param(w2));
    Var<double> loss = mseLoss(tape, y, tape.input(randT({2, 4}, 100)));
    tape.backward(loss);

    for (Index i = 0; i < w1.grad.numel(); ++i) CHECK(w1.grad[i] == 0.0);
    double sum = 0;
    for (Index i = 0; i < w2.grad.numel(); ++i) sum += std::abs(w2.grad[i]);
    CHECK(sum > 0.0);

    // Unfreezing and rerunning accumulates into both.
    store.setTrainablePrefix("enc/", true);
    store.zeroGrad();
    Tape<double> tape2(true);
    Var<double> x2 = tape2.input(randT({2, 4}, 99));
    Var<double> h2 = matmul(tape2, x2, tape2.param(w1));
    Var<double> y2 = matmul(tape2, h2, tape2.param(w2));
    tape2.backward(mseLoss(tape2, y2, tape2.input(randT({2, 4}, 100))));
    double sum1 = 0;
    for (Index i = 0; i < w1.grad.numel(); ++i) sum1 += std::abs(w1.grad[i]);
    CHECK(sum1 > 0.0);
}

TEST_CASE("parameter store rejects duplicates and unknown namespaces") {
    ParamStore<float> store;
    store.create("a/w", {2}, nullptr);
    CHECK_THROWS_AS(store.create("a/w", {2}, nullptr), IntegrationError);
    CHECK_THROWS_AS(store.setTrainablePrefix("nope/", false), IntegrationError);
    CHECK_THROWS_AS(store.get("missing"), IntegrationError);
}

TEST_CASE("gradients flow through frozen weights to earlier trainable ones") {
    // Trainable adapter feeding a frozen projection: the adapter must still
    // receive gradients even though the frozen weight does not.
    ParamStore<double> store;
    Rng rng(7);
    auto& adapter = store.create("adapter/w", {4, 4}, [&](TensorD& v) { v = TensorD::randn({4, 4}, rng, 0.5); });
    auto& frozen = store.create("frozen/w", {4, 4}, [&](TensorD& v) { v = TensorD::randn({4, 4}, rng, 0.5); });
    store.setTrainablePrefix("frozen/", false);

    Tape<double> tape(true);
    Var<double> x = tape.input(randT({3, 4}, 101));
    Var<double> h = matmul(tape, x, tape.param(adapter));
    Var<double> y = matmul(tape, h, tape.param(frozen));
    tape.backward(mseLoss(tape, y, tape.input(randT({3, 4}, 102))));

    double sumA = 0, sumF = 0;
    for (Index i = 0; i < 16; ++i) {
        sumA += std::abs(adapter.grad[i]);
        sumF += std::abs(frozen.grad[i]);
    }
    CHECK(sumA > 0.0);
    CHECK(sumF == 0.0);
}
