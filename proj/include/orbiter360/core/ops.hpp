// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>

#include "orbiter360/core/graph.hpp"

namespace orbiter360 {

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename S> Var<S> add(Tape<S>& t, Var<S> a, Var<S> b) {
    ORBITER360_CHECK(a->value.sameShape(b->value), "add: shape mismatch");
    Tensor<S> v(a->value.shape());
    v.array() = a->value.array() + b->value.array();
    return t.make(std::move(v), {a, b}, [](Node<S>& n) {
        Node<S>::addGrad(n.parents[0], n.grad);
        Node<S>::addGrad(n.parents[1], n.grad);
    });
}

template <typename S> Var<S> sub(Tape<S>& t, Var<S> a, Var<S> b) {
    ORBITER360_CHECK(a->value.sameShape(b->value), "sub: shape mismatch");
    Tensor<S> v(a->value.shape());
    v.array() = a->value.array() - b->value.array();
    return t.make(std::move(v), {a, b}, [](Node<S>& n) {
        Node<S>::addGrad(n.parents[0], n.grad);
        if (n.parents[1]->requiresGrad) {
            Tensor<S> neg(n.grad.shape());
            neg.array() = -n.grad.array();
            Node<S>::addGrad(n.parents[1], neg);
        }
    });
}

template <typename S> Var<S> mul(Tape<S>& t, Var<S> a, Var<S> b) {
    ORBITER360_CHECK(a->value.sameShape(b->value), "mul: shape mismatch");
    Tensor<S> v(a->value.shape());
    v.array() = a->value.array() * b->value.array();
    return t.make(std::move(v), {a, b}, [](Node<S>& n) {
        if (n.parents[0]->requiresGrad) {
            Tensor<S> g(n.grad.shape());
            g.array() = n.grad.array() * n.parents[1]->value.array();
            Node<S>::addGrad(n.parents[0], g);
        }
        if (n.parents[1]->requiresGrad) {
            Tensor<S> g(n.grad.shape());
            g.array() = n.grad.array() * n.parents[0]->value.array();
            Node<S>::addGrad(n.parents[1], g);
        }
    });
}

template <typename S> Var<S> scale(Tape<S>& t, Var<S> a, S c) {
    Tensor<S> v(a->value.shape());
    v.array() = a->value.array() * c;
    return t.make(std::move(v), {a}, [c](Node<S>& n) {
        if (!n.parents[0]->requiresGrad) return;
        Tensor<S> g(n.grad.shape());
        g.array() = n.grad.array() * c;
        Node<S>::addGrad(n.parents[0], g);
    });
}

template <typename S> Var<S> addScalar(Tape<S>& t, Var<S> a, S c) {
    Tensor<S> v(a->value.shape());
    v.array() = a->value.array() + c;
    return t.make(std::move(v), {a}, [](Node<S>& n) { Node<S>::addGrad(n.parents[0], n.grad); });
}

template <typename S> Var<S> sigmoid(Tape<S>& t, Var<S> a) {
    Tensor<S> v(a->value.shape());
    v.array() = S(1) / (S(1) + (-a->value.array()).exp());
    return t.make(std::move(v), {a}, [](Node<S>& n) {
        if (!n.parents[0]->requiresGrad) return;
        Tensor<S> g(n.grad.shape());
        g.array() = n.grad.array() * n.value.array() * (S(1) - n.value.array());
        Node<S>::addGrad(n.parents[0], g);
    });
}

template <typename S> Var<S> silu(Tape<S>& t, Var<S> a) {
    Tensor<S> v(a->value.shape());
    auto x = a->value.array();
    v.array() = x / (S(1) + (-x).exp());
    return t.make(std::move(v), {a}, [](Node<S>& n) {
        if (!n.parents[0]->requiresGrad) return;
        auto x = n.parents[0]->value.array();
        Tensor<S> g(n.grad.shape());
        auto sig = (S(1) / (S(1) + (-x).exp())).eval();
        g.array() = n.grad.array() * sig * (S(1) + x * (S(1) - sig));
        Node<S>::addGrad(n.parents[0], g);
    });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <typename S> Var<S> reshape(Tape<S>& t, Var<S> a, Shape shape) {
    Tensor<S> v = a->value.reshaped(std::move(shape));
    return t.make(std::move(v), {a}, [](Node<S>& n) {
        if (!n.parents[0]->requiresGrad) return;
        Node<S>::addGrad(n.parents[0], n.grad.reshaped(n.parents[0]->value.shape()));
    });
}

namespace detail {

template <typename S> Tensor<S> permuteTensor(const Tensor<S>& x, const std::vector<int>& perm) {
    const Shape& in = x.shape();
    ORBITER360_CHECK(static_cast<Index>(perm.size()) == x.rank(), "permute: rank mismatch");
    Shape out(perm.size());
    for (std::size_t d = 0; d < perm.size(); ++d) out[d] = in[static_cast<std::size_t>(perm[d])];
    std::vector<Index> inStride(in.size(), 1);
    for (int d = static_cast<int>(in.size()) - 2; d >= 0; --d)
        inStride[static_cast<std::size_t>(d)] = inStride[static_cast<std::size_t>(d) + 1] * in[static_cast<std::size_t>(d) + 1];
    Tensor<S> y(out);
    std::vector<Index> idx(out.size(), 0);
    const Index n = y.numel();
    for (Index flat = 0; flat < n; ++flat) {
        Index src = 0;
        for (std::size_t d = 0; d < perm.size(); ++d) src += idx[d] * inStride[static_cast<std::size_t>(perm[d])];
        y[flat] = x[src];
        for (int d = static_cast<int>(out.size()) - 1; d >= 0; --d) {
            auto ud = static_cast<std::size_t>(d);
            if (++idx[ud] < out[ud]) break;
            idx[ud] = 0;
        }
    }
    return y;
}

inline std::vector<int> inversePerm(const std::vector<int>& perm) {
    std::vector<int> inv(perm.size());
    for (std::size_t d = 0; d < perm.size(); ++d) inv[static_cast<std::size_t>(perm[d])] = static_cast<int>(d);
    return inv;
}

} // namespace detail

template <typename S> Var<S> permute(Tape<S>& t, Var<S> a, std::vector<int> perm) {
    Tensor<S> v = detail::permuteTensor(a->value, perm);
    return t.make(std::move(v), {a}, [perm](Node<S>& n) {
        if (!n.parents[0]->requiresGrad) return;
        Node<S>::addGrad(n.parents[0], detail::permuteTensor(n.grad, detail::inversePerm(perm)));
    });
}

template <typename S> Var<S> concatAxis(Tape<S>& t, Var<S> a, Var<S> b, Index axis) {
    const Shape& sa = a->value.shape();
    const Shape& sb = b->value.shape();
    ORBITER360_CHECK(sa.size() == sb.size() && axis >= 0 && axis < a->value.rank(), "concat: bad axis");
    for (Index d = 0; d < a->value.rank(); ++d)
        ORBITER360_CHECK(d == axis || sa[static_cast<std::size_t>(d)] == sb[static_cast<std::size_t>(d)],
                         "concat: off-axis shape mismatch");
    Shape so = sa;
    so[static_cast<std::size_t>(axis)] += sb[static_cast<std::size_t>(axis)];
    Index outer = 1, innerA = 1, innerB = 1;
    for (Index d = 0; d < axis; ++d) outer *= sa[static_cast<std::size_t>(d)];
    for (Index d = axis; d < a->value.rank(); ++d) {
        innerA *= sa[static_cast<std::size_t>(d)];
        innerB *= sb[static_cast<std::size_t>(d)];
    }
    Tensor<S> v(so);
    for (Index o = 0; o < outer; ++o) {
        v.array().segment(o * (innerA + innerB), innerA) = a->value.array().segment(o * innerA, innerA);
        v.array().segment(o * (innerA + innerB) + innerA, innerB) = b->value.array().segment(o * innerB, innerB);
    }
    return t.make(std::move(v), {a, b}, [outer, innerA, innerB](Node<S>& n) {
        for (int side = 0; side < 2; ++side) {
            Node<S>* p = n.parents[static_cast<std::size_t>(side)];
            if (!p->requiresGrad) continue;
            Index inner = side == 0 ? innerA : innerB;
            Index off = side == 0 ? 0 : innerA;
            Tensor<S>& pg = p->ensureGrad();
            for (Index o = 0; o < outer; ++o)
                pg.array().segment(o * inner, inner) += n.grad.array().segment(o * (innerA + innerB) + off, inner);
        }
    });
}

/// Repeat each axis-0 block `times` times in place: out[i] = a[i / times].
/// [G, ...] -> [G*times, ...]; the gradient sums over the copies.
template <typename S> Var<S> repeatInterleave0(Tape<S>& t, Var<S> a, Index times) {
    ORBITER360_CHECK(a->value.rank() >= 1 && times >= 1, "repeatInterleave0: bad arguments");
    Index G = a->value.dim(0), inner = a->value.numel() / G;
    Shape so = a->value.shape();
    so[0] = G * times;
    Tensor<S> v(so);
    for (Index g = 0; g < G; ++g)
        for (Index r = 0; r < times; ++r)
            v.array().segment((g * times + r) * inner, inner) = a->value.array().segment(g * inner, inner);
    return t.make(std::move(v), {a}, [G, times, inner](Node<S>& n) {
        if (!n.parents[0]->requiresGrad) return;
        Tensor<S>& dx = n.parents[0]->ensureGrad();
        for (Index g = 0; g < G; ++g)
            for (Index r = 0; r < times; ++r)
                dx.array().segment(g * inner, inner) += n.grad.array().segment((g * times + r) * inner, inner);
    });
}

/// Rows [start, start+len) along axis 0.
template <typename S> Var<S> slice0(Tape<S>& t, Var<S> a, Index start, Index len) {
    Tensor<S> v = a->value.slice0(start, len);
    Index inner = a->value.numel() / a->value.dim(0);
    return t.make(std::move(v), {a}, [start, len, inner](Node<S>& n) {
        if (!n.parents[0]->requiresGrad) return;
        n.parents[0]->ensureGrad().array().segment(start * inner, len * inner) += n.grad.array();
    });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename S> Var<S> matmul(Tape<S>& t, Var<S> a, Var<S> b) {
    ORBITER360_CHECK(a->value.rank() == 2 && b->value.rank() == 2 && a->value.dim(1) == b->value.dim(0),
                     "matmul: incompatible shapes");
    Index m = a->value.dim(0), k = a->value.dim(1), n2 = b->value.dim(1);
    Tensor<S> v({m, n2});
    v.mat(m, n2).noalias() = a->value.mat(m, k) * b->value.mat(k, n2);
    return t.make(std::move(v), {a, b}, [m, k, n2](Node<S>& n) {
        auto g = n.grad.mat(m, n2);
        if (n.parents[0]->requiresGrad)
            n.parents[0]->ensureGrad().mat(m, k).noalias() += g * n.parents[1]->value.mat(k, n2).transpose();
        if (n.parents[1]->requiresGrad)
            n.parents[1]->ensureGrad().mat(k, n2).noalias() += n.parents[0]->value.mat(m, k).transpose() * g;
    });
}

/// Batched matmul: [B,m,k] x [B,k,n] -> [B,m,n].
template <typename S> Var<S> bmm(Tape<S>& t, Var<S> a, Var<S> b) {
    ORBITER360_CHECK(a->value.rank() == 3 && b->value.rank() == 3 && a->value.dim(0) == b->value.dim(0) &&
                         a->value.dim(2) == b->value.dim(1),
                     "bmm: incompatible shapes");
    Index B = a->value.dim(0), m = a->value.dim(1), k = a->value.dim(2), n2 = b->value.dim(2);
    Tensor<S> v({B, m, n2});
    using MV = typename Tensor<S>::MatrixView;
    using CMV = typename Tensor<S>::ConstMatrixView;
    for (Index i = 0; i < B; ++i) {
        MV(v.data() + i * m * n2, m, n2).noalias() =
            CMV(a->value.data() + i * m * k, m, k) * CMV(b->value.data() + i * k * n2, k, n2);
    }
    return t.make(std::move(v), {a, b}, [B, m, k, n2](Node<S>& n) {
        for (Index i = 0; i < B; ++i) {
            CMV g(n.grad.data() + i * m * n2, m, n2);
            CMV av(n.parents[0]->value.data() + i * m * k, m, k);
            CMV bv(n.parents[1]->value.data() + i * k * n2, k, n2);
            if (n.parents[0]->requiresGrad)
                MV(n.parents[0]->ensureGrad().data() + i * m * k, m, k).noalias() += g * bv.transpose();
            if (n.parents[1]->requiresGrad)
                MV(n.parents[1]->ensureGrad().data() + i * k * n2, k, n2).noalias() += av.transpose() * g;
        }
    });
}

/// Batched matmul against a transposed right operand:
/// [B,m,k] x [B,n,k]^T -> [B,m,n]. Attention scores without materializing
/// the transpose.
template <typename S> Var<S> bmmNT(Tape<S>& t, Var<S> a, Var<S> b) {
    ORBITER360_CHECK(a->value.rank() == 3 && b->value.rank() == 3 && a->value.dim(0) == b->value.dim(0) &&
                         a->value.dim(2) == b->value.dim(2),
                     "bmmNT: incompatible shapes");
    Index B = a->value.dim(0), m = a->value.dim(1), k = a->value.dim(2), n2 = b->value.dim(1);
    Tensor<S> v({B, m, n2});
    using MV = typename Tensor<S>::MatrixView;
    using CMV = typename Tensor<S>::ConstMatrixView;
    for (Index i = 0; i < B; ++i) {
        MV(v.data() + i * m * n2, m, n2).noalias() =
            CMV(a->value.data() + i * m * k, m, k) * CMV(b->value.data() + i * n2 * k, n2, k).transpose();
    }
    return t.make(std::move(v), {a, b}, [B, m, k, n2](Node<S>& n) {
        for (Index i = 0; i < B; ++i) {
            CMV g(n.grad.data() + i * m * n2, m, n2);
            CMV av(n.parents[0]->value.data() + i * m * k, m, k);
            CMV bv(n.parents[1]->value.data() + i * n2 * k, n2, k);
            if (n.parents[0]->requiresGrad)
                MV(n.parents[0]->ensureGrad().data() + i * m * k, m, k).noalias() += g * bv;
            if (n.parents[1]->requiresGrad)
                MV(n.parents[1]->ensureGrad().data() + i * n2 * k, n2, k).noalias() += g.transpose() * av;
        }
    });
}

/// x[..., In] x W[Out, In]^T + b -> [..., Out].
template <typename S> Var<S> linear(Tape<S>& t, Var<S> x, Var<S> w, std::type_identity_t<Var<S>> b = nullptr) {
    Index in = w->value.dim(1), out = w->value.dim(0);
    ORBITER360_CHECK(x->value.lastDim() == in, "linear: input width mismatch");
    Index rows = x->value.numel() / in;
    Shape so = x->value.shape();
    so.back() = out;
    Tensor<S> v(so);
    v.mat(rows, out).noalias() = x->value.mat(rows, in) * w->value.mat(out, in).transpose();
    if (b) {
        ORBITER360_CHECK(b->value.numel() == out, "linear: bias width mismatch");
        v.mat(rows, out).rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(b->value.data(), out);
    }
    std::vector<Var<S>> parents = b ? std::vector<Var<S>>{x, w, b} : std::vector<Var<S>>{x, w};
    return t.make(std::move(v), std::move(parents), [rows, in, out](Node<S>& n) {
        auto g = n.grad.mat(rows, out);
        if (n.parents[0]->requiresGrad)
            n.parents[0]->ensureGrad().mat(rows, in).noalias() += g * n.parents[1]->value.mat(out, in);
        if (n.parents[1]->requiresGrad)
            n.parents[1]->ensureGrad().mat(out, in).noalias() += g.transpose() * n.parents[0]->value.mat(rows, in);
        if (n.parents.size() > 2 && n.parents[2]->requiresGrad)
            n.parents[2]->ensureGrad().mat(1, out) += g.colwise().sum();
    });
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
void im2col(const S* x, Index C, Index H, Index W, Index kh, Index kw, Index stride, Index pad, Index OH, Index OW,
            S* col) {
    for (Index c = 0; c < C; ++c)
        for (Index ky = 0; ky < kh; ++ky)
            for (Index kx = 0; kx < kw; ++kx) {
                S* row = col + ((c * kh + ky) * kw + kx) * OH * OW;
                for (Index oy = 0; oy < OH; ++oy) {
                    Index iy = oy * stride + ky - pad;
                    for (Index ox = 0; ox < OW; ++ox) {
                        Index ix = ox * stride + kx - pad;
                        row[oy * OW + ox] =
                            (iy >= 0 && iy < H && ix >= 0 && ix < W) ? x[(c * H + iy) * W + ix] : S(0);
                    }
                }
            }
}

template <typename S>
void col2im(const S* col, Index C, Index H, Index W, Index kh, Index kw, Index stride, Index pad, Index OH, Index OW,
            S* dx) {
    for (Index c = 0; c < C; ++c)
        for (Index ky = 0; ky < kh; ++ky)
            for (Index kx = 0; kx < kw; ++kx) {
                const S* row = col + ((c * kh + ky) * kw + kx) * OH * OW;
                for (Index oy = 0; oy < OH; ++oy) {
                    Index iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    for (Index ox = 0; ox < OW; ++ox) {
                        Index ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < W) dx[(c * H + iy) * W + ix] += row[oy * OW + ox];
                    }
                }
            }
}

} // namespace detail

/// 2D convolution, NCHW layout, weight [Cout, Cin, kh, kw].
template <typename S>
Var<S> conv2d(Tape<S>& t, Var<S> x, Var<S> w, std::type_identity_t<Var<S>> b, Index stride = 1, Index pad = 1) {
    ORBITER360_CHECK(x->value.rank() == 4 && w->value.rank() == 4, "conv2d: expects NCHW input and OIHW weight");
    Index N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
    Index O = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
    ORBITER360_CHECK(w->value.dim(1) == C, "conv2d: channel mismatch");
    ORBITER360_CHECK(b == nullptr || b->value.numel() == O, "conv2d: bias size mismatch");
    Index OH = (H + 2 * pad - kh) / stride + 1;
    Index OW = (W + 2 * pad - kw) / stride + 1;
    ORBITER360_CHECK(OH > 0 && OW > 0, "conv2d: output collapses to zero size");
    Index K = C * kh * kw, P = OH * OW;

    Tensor<S> v({N, O, OH, OW});
    Tensor<S> col({K, P});
    using MV = typename Tensor<S>::MatrixView;
    using CMV = typename Tensor<S>::ConstMatrixView;
    CMV wm(w->value.data(), O, K);
    for (Index n = 0; n < N; ++n) {
        detail::im2col(x->value.data() + n * C * H * W, C, H, W, kh, kw, stride, pad, OH, OW, col.data());
        MV om(v.data() + n * O * P, O, P);
        om.noalias() = wm * col.mat(K, P);
        if (b)
            om.colwise() += Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(b->value.data(), O);
    }
    std::vector<Var<S>> parents = b ? std::vector<Var<S>>{x, w, b} : std::vector<Var<S>>{x, w};
    auto back = [N, C, H, W, O, kh, kw, stride, pad, OH, OW, K, P](Node<S>& n) {
        Node<S>* xn = n.parents[0];
        Node<S>* wn = n.parents[1];
        Node<S>* bn = n.parents.size() > 2 ? n.parents[2] : nullptr;
        Tensor<S> col({K, P});
        Tensor<S> dcol({K, P});
        CMV wm(wn->value.data(), O, K);
        for (Index i = 0; i < N; ++i) {
            CMV g(n.grad.data() + i * O * P, O, P);
            if (wn->requiresGrad || bn) {
                detail::im2col(xn->value.data() + i * C * H * W, C, H, W, kh, kw, stride, pad, OH, OW, col.data());
                if (wn->requiresGrad)
                    MV(wn->ensureGrad().data(), O, K).noalias() += g * col.mat(K, P).transpose();
                if (bn && bn->requiresGrad)
                    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>(bn->ensureGrad().data(), O) += g.rowwise().sum();
            }
            if (xn->requiresGrad) {
                dcol.mat(K, P).noalias() = wm.transpose() * g;
                detail::col2im(dcol.data(), C, H, W, kh, kw, stride, pad, OH, OW,
                               xn->ensureGrad().data() + i * C * H * W);
            }
        }
    };
    return t.make(std::move(v), std::move(parents), std::move(back));
}

// ---------------------------------------------------------------------------
// Normalization and activation statistics
// ---------------------------------------------------------------------------

/// Group normalization over NCHW with per-channel affine parameters.
template <typename S>
Var<S> groupNorm(Tape<S>& t, Var<S> x, Var<S> gamma, Var<S> beta, Index groups, S eps = S(1e-5)) {
    ORBITER360_CHECK(x->value.rank() == 4, "groupNorm: expects NCHW");
    Index N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
    ORBITER360_CHECK(C % groups == 0, "groupNorm: channels not divisible by groups");
    ORBITER360_CHECK(gamma->value.numel() == C && beta->value.numel() == C, "groupNorm: affine size mismatch");
    Index cg = C / groups, M = cg * H * W;

    Tensor<S> v({N, C, H, W});
    Tensor<S> xhat({N, C, H, W});
    Tensor<S> invstd({N, groups});
    for (Index n = 0; n < N; ++n)
        for (Index g = 0; g < groups; ++g) {
            auto seg = x->value.array().segment((n * C + g * cg) * H * W, M);
            S mean = seg.mean();
            S var = (seg - mean).square().mean();
            S is = S(1) / std::sqrt(var + eps);
            invstd.at(n, g) = is;
            xhat.array().segment((n * C + g * cg) * H * W, M) = (seg - mean) * is;
        }
    for (Index n = 0; n < N; ++n)
        for (Index c = 0; c < C; ++c)
            v.array().segment((n * C + c) * H * W, H * W) =
                xhat.array().segment((n * C + c) * H * W, H * W) * gamma->value[c] + beta->value[c];

    auto back = [N, C, H, W, groups, cg, M, xhat, invstd](Node<S>& n) {
        Node<S>*xn = n.parents[0], *gn = n.parents[1], *bn = n.parents[2];
        Index hw = H * W;
        if (gn->requiresGrad || bn->requiresGrad) {
            for (Index c = 0; c < C; ++c) {
                S dg = 0, db = 0;
                for (Index i = 0; i < N; ++i) {
                    auto gseg = n.grad.array().segment((i * C + c) * hw, hw);
                    dg += (gseg * xhat.array().segment((i * C + c) * hw, hw)).sum();
                    db += gseg.sum();
                }
                if (gn->requiresGrad) gn->ensureGrad()[c] += dg;
                if (bn->requiresGrad) bn->ensureGrad()[c] += db;
            }
        }
        if (!xn->requiresGrad) return;
        Tensor<S> dxhat({M});
        for (Index i = 0; i < N; ++i)
            for (Index g = 0; g < groups; ++g) {
                Index base = (i * C + g * cg) * hw;
                for (Index c = 0; c < cg; ++c)
                    dxhat.array().segment(c * hw, hw) =
                        n.grad.array().segment(base + c * hw, hw) * n.parents[1]->value[g * cg + c];
                auto xh = xhat.array().segment(base, M);
                S sumD = dxhat.array().sum();
                S sumDX = (dxhat.array() * xh).sum();
                S is = invstd.at(i, g);
                xn->ensureGrad().array().segment(base, M) +=
                    is / S(M) * (S(M) * dxhat.array() - sumD - xh * sumDX);
            }
    };
    return t.make(std::move(v), {x, gamma, beta}, std::move(back));
}

/// Layer normalization over the last dimension.
template <typename S> Var<S> layerNormLast(Tape<S>& t, Var<S> x, Var<S> gamma, Var<S> beta, S eps = S(1e-5)) {
    Index C = x->value.lastDim();
    ORBITER360_CHECK(gamma->value.numel() == C && beta->value.numel() == C, "layerNorm: affine size mismatch");
    Index R = x->value.numel() / C;
    Tensor<S> v(x->value.shape());
    Tensor<S> xhat(x->value.shape());
    Tensor<S> invstd({R});
    for (Index r = 0; r < R; ++r) {
        auto seg = x->value.array().segment(r * C, C);
        S mean = seg.mean();
        S var = (seg - mean).square().mean();
        S is = S(1) / std::sqrt(var + eps);
        invstd[r] = is;
        xhat.array().segment(r * C, C) = (seg - mean) * is;
        v.array().segment(r * C, C) =
            xhat.array().segment(r * C, C) * gamma->value.array() + beta->value.array();
    }
    auto back = [R, C, xhat, invstd](Node<S>& n) {
        Node<S>*xn = n.parents[0], *gn = n.parents[1], *bn = n.parents[2];
        for (Index r = 0; r < R; ++r) {
            auto g = n.grad.array().segment(r * C, C);
            auto xh = xhat.array().segment(r * C, C);
            if (gn->requiresGrad) gn->ensureGrad().array() += g * xh;
            if (bn->requiresGrad) bn->ensureGrad().array() += g;
            if (xn->requiresGrad) {
                auto dxhat = (g * n.parents[1]->value.array()).eval();
                S sumD = dxhat.sum();
                S sumDX = (dxhat * xh).sum();
                xn->ensureGrad().array().segment(r * C, C) +=
                    invstd[r] / S(C) * (S(C) * dxhat - sumD - xh * sumDX);
            }
        }
    };
    return t.make(std::move(v), {x, gamma, beta}, std::move(back));
}

/// Numerically stable softmax over the last dimension.
template <typename S> Var<S> softmaxLast(Tape<S>& t, Var<S> x) {
    Index C = x->value.lastDim();
    Index R = x->value.numel() / C;
    Tensor<S> v(x->value.shape());
    for (Index r = 0; r < R; ++r) {
        auto seg = x->value.array().segment(r * C, C);
        auto e = (seg - seg.maxCoeff()).exp().eval();
        v.array().segment(r * C, C) = e / e.sum();
    }
    return t.make(std::move(v), {x}, [R, C](Node<S>& n) {
        if (!n.parents[0]->requiresGrad) return;
        Tensor<S>& dx = n.parents[0]->ensureGrad();
        for (Index r = 0; r < R; ++r) {
            auto y = n.value.array().segment(r * C, C);
            auto g = n.grad.array().segment(r * C, C);
            S dot = (g * y).sum();
            dx.array().segment(r * C, C) += y * (g - dot);
        }
    });
}

// ---------------------------------------------------------------------------
// Spatial resampling and broadcasts
// ---------------------------------------------------------------------------

template <typename S> Var<S> upsampleNearest2(Tape<S>& t, Var<S> x) {
    ORBITER360_CHECK(x->value.rank() == 4, "upsampleNearest2: expects NCHW");
    Index N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
    Tensor<S> v({N, C, 2 * H, 2 * W});
    for (Index nc = 0; nc < N * C; ++nc)
        for (Index y = 0; y < H; ++y)
            for (Index xw = 0; xw < W; ++xw) {
                S val = x->value[(nc * H + y) * W + xw];
                Index base = (nc * 2 * H + 2 * y) * 2 * W + 2 * xw;
                v[base] = v[base + 1] = v[base + 2 * W] = v[base + 2 * W + 1] = val;
            }
    return t.make(std::move(v), {x}, [N, C, H, W](Node<S>& n) {
        if (!n.parents[0]->requiresGrad) return;
        Tensor<S>& dx = n.parents[0]->ensureGrad();
        for (Index nc = 0; nc < N * C; ++nc)
            for (Index y = 0; y < H; ++y)
                for (Index xw = 0; xw < W; ++xw) {
                    Index base = (nc * 2 * H + 2 * y) * 2 * W + 2 * xw;
                    dx[(nc * H + y) * W + xw] +=
                        n.grad[base] + n.grad[base + 1] + n.grad[base + 2 * W] + n.grad[base + 2 * W + 1];
                }
    });
}

template <typename S> Var<S> avgPool2(Tape<S>& t, Var<S> x) {
    ORBITER360_CHECK(x->value.rank() == 4 && x->value.dim(2) % 2 == 0 && x->value.dim(3) % 2 == 0,
                     "avgPool2: expects even NCHW");
    Index N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2) / 2, W = x->value.dim(3) / 2;
    Tensor<S> v({N, C, H, W});
    for (Index nc = 0; nc < N * C; ++nc)
        for (Index y = 0; y < H; ++y)
            for (Index xw = 0; xw < W; ++xw) {
                Index base = (nc * 2 * H + 2 * y) * 2 * W + 2 * xw;
                v[(nc * H + y) * W + xw] =
                    (x->value[base] + x->value[base + 1] + x->value[base + 2 * W] + x->value[base + 2 * W + 1]) /
                    S(4);
            }
    return t.make(std::move(v), {x}, [N, C, H, W](Node<S>& n) {
        if (!n.parents[0]->requiresGrad) return;
        Tensor<S>& dx = n.parents[0]->ensureGrad();
        for (Index nc = 0; nc < N * C; ++nc)
            for (Index y = 0; y < H; ++y)
                for (Index xw = 0; xw < W; ++xw) {
                    S g = n.grad[(nc * H + y) * W + xw] / S(4);
                    Index base = (nc * 2 * H + 2 * y) * 2 * W + 2 * xw;
                    dx[base] += g;
                    dx[base + 1] += g;
                    dx[base + 2 * W] += g;
                    dx[base + 2 * W + 1] += g;
                }
    });
}

/// x[N,C,H,W] + v[N,C] broadcast over the spatial extent. This is how
/// per-sample embeddings (timestep, pose) enter convolutional blocks.
template <typename S> Var<S> addChannelBias(Tape<S>& t, Var<S> x, Var<S> v) {
    ORBITER360_CHECK(x->value.rank() == 4 && v->value.rank() == 2 && x->value.dim(0) == v->value.dim(0) &&
                         x->value.dim(1) == v->value.dim(1),
                     "addChannelBias: shape mismatch");
    Index N = x->value.dim(0), C = x->value.dim(1), HW = x->value.dim(2) * x->value.dim(3);
    Tensor<S> out(x->value.shape());
    for (Index nc = 0; nc < N * C; ++nc)
        out.array().segment(nc * HW, HW) = x->value.array().segment(nc * HW, HW) + v->value[nc];
    return t.make(std::move(out), {x, v}, [N, C, HW](Node<S>& n) {
        Node<S>::addGrad(n.parents[0], n.grad);
        if (n.parents[1]->requiresGrad) {
            Tensor<S>& dv = n.parents[1]->ensureGrad();
            for (Index nc = 0; nc < N * C; ++nc) dv[nc] += n.grad.array().segment(nc * HW, HW).sum();
        }
    });
}

/// x[B,N,C] + p[N,C] broadcast over the leading batch dimension.
template <typename S> Var<S> addRowsBroadcast(Tape<S>& t, Var<S> x, Var<S> p) {
    ORBITER360_CHECK(x->value.rank() == 3 && p->value.rank() == 2 && x->value.dim(1) == p->value.dim(0) &&
                         x->value.dim(2) == p->value.dim(1),
                     "addRowsBroadcast: shape mismatch");
    Index B = x->value.dim(0), NC = p->value.numel();
    Tensor<S> out(x->value.shape());
    for (Index b = 0; b < B; ++b)
        out.array().segment(b * NC, NC) = x->value.array().segment(b * NC, NC) + p->value.array();
    return t.make(std::move(out), {x, p}, [B, NC](Node<S>& n) {
        Node<S>::addGrad(n.parents[0], n.grad);
        if (n.parents[1]->requiresGrad) {
            Tensor<S>& dp = n.parents[1]->ensureGrad();
            for (Index b = 0; b < B; ++b) dp.array() += n.grad.array().segment(b * NC, NC);
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

template <typename S> Var<S> sumAll(Tape<S>& t, Var<S> x) {
    Tensor<S> v({1});
    v[0] = x->value.array().sum();
    return t.make(std::move(v), {x}, [](Node<S>& n) {
        if (!n.parents[0]->requiresGrad) return;
        n.parents[0]->ensureGrad().array() += n.grad[0];
    });
}

template <typename S> Var<S> meanAll(Tape<S>& t, Var<S> x) {
    Tensor<S> v({1});
    Index M = x->value.numel();
    v[0] = x->value.array().sum() / S(M);
    return t.make(std::move(v), {x}, [M](Node<S>& n) {
        if (!n.parents[0]->requiresGrad) return;
        n.parents[0]->ensureGrad().array() += n.grad[0] / S(M);
    });
}

/// Mean squared error over all elements; scalar output.
template <typename S> Var<S> mseLoss(Tape<S>& t, Var<S> a, Var<S> b) {
    ORBITER360_CHECK(a->value.sameShape(b->value), "mseLoss: shape mismatch");
    Index M = a->value.numel();
    Tensor<S> v({1});
    v[0] = (a->value.array() - b->value.array()).square().sum() / S(M);
    return t.make(std::move(v), {a, b}, [M](Node<S>& n) {
        auto diff = ((n.parents[0]->value.array() - n.parents[1]->value.array()) * (S(2) / S(M)) * n.grad[0]).eval();
        if (n.parents[0]->requiresGrad) n.parents[0]->ensureGrad().array() += diff;
        if (n.parents[1]->requiresGrad) n.parents[1]->ensureGrad().array() -= diff;
    });
}

template <typename S> S scalarValue(Var<S> v) { return v->value[0]; }

} // namespace orbiter360
