#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "ad2/image.hpp"
#include "ad2/tensor.hpp"

namespace ad2 {

using Var = int;

// Tape-based reverse-mode autodiff over Tensor<T>. Nodes are appended in
// topological order; backward() walks the tape in reverse. Everything is
// sequential with a fixed accumulation order, so results are bit-stable
// for a given build.
template <class T>
class Graph {
public:
    Var leaf(Tensor<T> v, bool needs_grad = false) {
        return push(std::move(v), needs_grad, nullptr);
    }

    Var constant(Tensor<T> v) { return leaf(std::move(v), false); }

    const Tensor<T>& val(Var v) const { return nodes_[v].value; }

    // Valid after backward(); zero tensor if the node never received gradient.
    const Tensor<T>& grad(Var v) {
        ensure_grad(v);
        return nodes_[v].grad;
    }

    bool needs_grad(Var v) const { return nodes_[v].needs; }

    std::size_t size() const { return nodes_.size(); }

    // ---- elementwise ----

    Var add(Var a, Var b) {
        check_same(a, b, "add");
        Tensor<T> out = nodes_[a].value;
        const auto& bv = nodes_[b].value;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
        Var o = push(std::move(out), nodes_[a].needs || nodes_[b].needs, nullptr);
        if (nodes_[o].needs) {
            nodes_[o].back = [this, a, b, o] {
                const auto& g = nodes_[o].grad;
                if (nodes_[a].needs) {
                    auto& ga = acc(a);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                }
                if (nodes_[b].needs) {
                    auto& gb = acc(b);
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                }
            };
        }
        return o;
    }

    Var sub(Var a, Var b) {
        check_same(a, b, "sub");
        Tensor<T> out = nodes_[a].value;
        const auto& bv = nodes_[b].value;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
        Var o = push(std::move(out), nodes_[a].needs || nodes_[b].needs, nullptr);
        if (nodes_[o].needs) {
            nodes_[o].back = [this, a, b, o] {
                const auto& g = nodes_[o].grad;
                if (nodes_[a].needs) {
                    auto& ga = acc(a);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                }
                if (nodes_[b].needs) {
                    auto& gb = acc(b);
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                }
            };
        }
        return o;
    }

    Var mul(Var a, Var b) {
        check_same(a, b, "mul");
        Tensor<T> out = nodes_[a].value;
        const auto& bv = nodes_[b].value;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
        Var o = push(std::move(out), nodes_[a].needs || nodes_[b].needs, nullptr);
        if (nodes_[o].needs) {
            nodes_[o].back = [this, a, b, o] {
                const auto& g = nodes_[o].grad;
                const auto& av = nodes_[a].value;
                const auto& bv2 = nodes_[b].value;
                if (nodes_[a].needs) {
                    auto& ga = acc(a);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
                }
                if (nodes_[b].needs) {
                    auto& gb = acc(b);
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                }
            };
        }
        return o;
    }

    // s*x + o elementwise
    Var affine(Var a, T s, T off) {
        Tensor<T> out = nodes_[a].value;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * out[i] + off;
        Var o = push(std::move(out), nodes_[a].needs, nullptr);
        if (nodes_[o].needs) {
            nodes_[o].back = [this, a, o, s] {
                const auto& g = nodes_[o].grad;
                auto& ga = acc(a);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
            };
        }
        return o;
    }

    Var relu(Var a) {
        Tensor<T> out = nodes_[a].value;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > T(0) ? out[i] : T(0);
        Var o = push(std::move(out), nodes_[a].needs, nullptr);
        if (nodes_[o].needs) {
            nodes_[o].back = [this, a, o] {
                const auto& g = nodes_[o].grad;
                const auto& av = nodes_[a].value;
                auto& ga = acc(a);
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (av[i] > T(0)) ga[i] += g[i];
            };
        }
        return o;
    }

    Var sigmoid(Var a) {
        Tensor<T> out = nodes_[a].value;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-out[i]));
        Var o = push(std::move(out), nodes_[a].needs, nullptr);
        if (nodes_[o].needs) {
            nodes_[o].back = [this, a, o] {
                const auto& g = nodes_[o].grad;
                const auto& ov = nodes_[o].value;
                auto& ga = acc(a);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * ov[i] * (T(1) - ov[i]);
            };
        }
        return o;
    }

    // Clamp to [0,1]; gradient is zero on the flat sides (boundary included).
    Var clamp01(Var a) {
        Tensor<T> out = nodes_[a].value;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(T(1), std::max(T(0), out[i]));
        Var o = push(std::move(out), nodes_[a].needs, nullptr);
        if (nodes_[o].needs) {
            nodes_[o].back = [this, a, o] {
                const auto& g = nodes_[o].grad;
                const auto& av = nodes_[a].value;
                auto& ga = acc(a);
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (av[i] > T(0) && av[i] < T(1)) ga[i] += g[i];
            };
        }
        return o;
    }

    // max(x, t): gradient passes only where x > t
    Var clamp_min(Var a, T t) {
        Tensor<T> out = nodes_[a].value;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], t);
        Var o = push(std::move(out), nodes_[a].needs, nullptr);
        if (nodes_[o].needs) {
            nodes_[o].back = [this, a, o, t] {
                const auto& g = nodes_[o].grad;
                const auto& av = nodes_[a].value;
                auto& ga = acc(a);
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (av[i] > t) ga[i] += g[i];
            };
        }
        return o;
    }

    // min(x, t): gradient passes only where x < t
    Var clamp_max(Var a, T t) {
        Tensor<T> out = nodes_[a].value;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(out[i], t);
        Var o = push(std::move(out), nodes_[a].needs, nullptr);
        if (nodes_[o].needs) {
            nodes_[o].back = [this, a, o, t] {
                const auto& g = nodes_[o].grad;
                const auto& av = nodes_[a].value;
                auto& ga = acc(a);
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (av[i] < t) ga[i] += g[i];
            };
        }
        return o;
    }

    Var sqrt_elem(Var a) {
        Tensor<T> out = nodes_[a].value;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(std::max(out[i], T(0)));
        Var o = push(std::move(out), nodes_[a].needs, nullptr);
        if (nodes_[o].needs) {
            nodes_[o].back = [this, a, o] {
                const auto& g = nodes_[o].grad;
                const auto& ov = nodes_[o].value;
                auto& ga = acc(a);
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (ov[i] > T(0)) ga[i] += g[i] / (T(2) * ov[i]);
            };
        }
        return o;
    }

    // log with a 1e-12 floor, gradient zero below the floor
    Var log_elem(Var a) {
        constexpr double kFloor = 1e-12;
        Tensor<T> out = nodes_[a].value;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(out[i], static_cast<T>(kFloor)));
        Var o = push(std::move(out), nodes_[a].needs, nullptr);
        if (nodes_[o].needs) {
            nodes_[o].back = [this, a, o] {
                const auto& g = nodes_[o].grad;
                const auto& av = nodes_[a].value;
                auto& ga = acc(a);
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (av[i] > static_cast<T>(kFloor)) ga[i] += g[i] / av[i];
            };
        }
        return o;
    }

    // sum_i weight_i * huber(a_i - target_i) with quadratic zone |d| < delta
    Var huber_weighted(Var a, const Tensor<T>& target, const Tensor<T>& weight, T delta) {
        const auto& av = nodes_[a].value;
        if (!av.same_shape(target) || !av.same_shape(weight)) throw InvalidInput("huber_weighted: shape mismatch");
        T s = 0;
        for (std::size_t i = 0; i < av.size(); ++i) {
            const T d = av[i] - target[i];
            const T ad = std::abs(d);
            s += weight[i] * (ad < delta ? T(0.5) * d * d / delta : ad - T(0.5) * delta);
        }
        Var o = push(Tensor<T>::scalar(s), nodes_[a].needs, nullptr);
        if (nodes_[o].needs) {
            nodes_[o].back = [this, a, o, target, weight, delta] {
                const T g = nodes_[o].grad[0];
                const auto& av2 = nodes_[a].value;
                auto& ga = acc(a);
                for (std::size_t i = 0; i < av2.size(); ++i) {
                    const T d = av2[i] - target[i];
                    ga[i] += g * weight[i] * std::clamp(d / delta, T(-1), T(1));
                }
            };
        }
        return o;
    }

    // ---- reductions ----

    Var sum(Var a) {
        T s = 0;
        const auto& av = nodes_[a].value;
        for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
        Var o = push(Tensor<T>::scalar(s), nodes_[a].needs, nullptr);
        if (nodes_[o].needs) {
            nodes_[o].back = [this, a, o] {
                const T g = nodes_[o].grad[0];
                auto& ga = acc(a);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
            };
        }
        return o;
    }

    // Sum of a 1-channel [H][W][1] map over true cells of an HxW byte mask.
    Var masked_sum(Var a, const Tensor<std::uint8_t>& mask) {
        const auto& av = nodes_[a].value;
        if (av.rank() != 3 || av.c() != 1 || mask.rank() != 2 || mask.dim(0) != av.h() || mask.dim(1) != av.w())
            throw InvalidInput("masked_sum: expected [H][W][1] map and HxW mask");
        T s = 0;
        for (int y = 0; y < av.h(); ++y)
            for (int x = 0; x < av.w(); ++x)
                if (mask[static_cast<std::size_t>(y) * av.w() + x]) s += av.at(y, x, 0);
        Var o = push(Tensor<T>::scalar(s), nodes_[a].needs, nullptr);
        if (nodes_[o].needs) {
            Tensor<std::uint8_t> m = mask;
            nodes_[o].back = [this, a, o, m] {
                const T g = nodes_[o].grad[0];
                auto& ga = acc(a);
                const auto& av2 = nodes_[a].value;
                for (int y = 0; y < av2.h(); ++y)
                    for (int x = 0; x < av2.w(); ++x)
                        if (m[static_cast<std::size_t>(y) * av2.w() + x]) ga.at(y, x, 0) += g;
            };
        }
        return o;
    }

    // ---- structure ----

    Var select_channel(Var a, int ch) {
        const auto& av = nodes_[a].value;
        if (av.rank() != 3 || ch < 0 || ch >= av.c()) throw InvalidInput("select_channel: bad channel");
        Tensor<T> out(av.h(), av.w(), 1);
        for (int y = 0; y < av.h(); ++y)
            for (int x = 0; x < av.w(); ++x) out.at(y, x, 0) = av.at(y, x, ch);
        Var o = push(std::move(out), nodes_[a].needs, nullptr);
        if (nodes_[o].needs) {
            nodes_[o].back = [this, a, o, ch] {
                const auto& g = nodes_[o].grad;
                auto& ga = acc(a);
                for (int y = 0; y < g.h(); ++y)
                    for (int x = 0; x < g.w(); ++x) ga.at(y, x, ch) += g.at(y, x, 0);
            };
        }
        return o;
    }

    Var channel_max(Var a) {
        const auto& av = nodes_[a].value;
        if (av.rank() != 3) throw InvalidInput("channel_max: rank");
        Tensor<T> out(av.h(), av.w(), 1);
        std::vector<int> arg(static_cast<std::size_t>(av.h()) * av.w(), 0);
        for (int y = 0; y < av.h(); ++y) {
            for (int x = 0; x < av.w(); ++x) {
                const T* px = av.row(y, x);
                int best = 0;
                for (int c = 1; c < av.c(); ++c)
                    if (px[c] > px[best]) best = c;
                out.at(y, x, 0) = px[best];
                arg[static_cast<std::size_t>(y) * av.w() + x] = best;
            }
        }
        Var o = push(std::move(out), nodes_[a].needs, nullptr);
        if (nodes_[o].needs) {
            nodes_[o].back = [this, a, o, arg = std::move(arg)] {
                const auto& g = nodes_[o].grad;
                auto& ga = acc(a);
                for (int y = 0; y < g.h(); ++y)
                    for (int x = 0; x < g.w(); ++x)
                        ga.at(y, x, arg[static_cast<std::size_t>(y) * g.w() + x]) += g.at(y, x, 0);
            };
        }
        return o;
    }

    Var channel_mean(Var a) {
        const auto& av = nodes_[a].value;
        if (av.rank() != 3) throw InvalidInput("channel_mean: rank");
        Tensor<T> out(av.h(), av.w(), 1);
        const T inv = T(1) / static_cast<T>(av.c());
        for (int y = 0; y < av.h(); ++y)
            for (int x = 0; x < av.w(); ++x) {
                const T* px = av.row(y, x);
                T s = 0;
                for (int c = 0; c < av.c(); ++c) s += px[c];
                out.at(y, x, 0) = s * inv;
            }
        Var o = push(std::move(out), nodes_[a].needs, nullptr);
        if (nodes_[o].needs) {
            nodes_[o].back = [this, a, o, inv] {
                const auto& g = nodes_[o].grad;
                auto& ga = acc(a);
                const int C = ga.c();
                for (int y = 0; y < g.h(); ++y)
                    for (int x = 0; x < g.w(); ++x) {
                        const T gv = g.at(y, x, 0) * inv;
                        T* px = ga.row(y, x);
                        for (int c = 0; c < C; ++c) px[c] += gv;
                    }
            };
        }
        return o;
    }

    Var concat_c(Var a, Var b) {
        const auto& av = nodes_[a].value;
        const auto& bv = nodes_[b].value;
        if (av.rank() != 3 || bv.rank() != 3 || av.h() != bv.h() || av.w() != bv.w())
            throw InvalidInput("concat_c: spatial mismatch");
        Tensor<T> out(av.h(), av.w(), av.c() + bv.c());
        for (int y = 0; y < av.h(); ++y)
            for (int x = 0; x < av.w(); ++x) {
                T* px = out.row(y, x);
                const T* pa = av.row(y, x);
                const T* pb = bv.row(y, x);
                for (int c = 0; c < av.c(); ++c) px[c] = pa[c];
                for (int c = 0; c < bv.c(); ++c) px[av.c() + c] = pb[c];
            }
        Var o = push(std::move(out), nodes_[a].needs || nodes_[b].needs, nullptr);
        if (nodes_[o].needs) {
            nodes_[o].back = [this, a, b, o] {
                const auto& g = nodes_[o].grad;
                const int ca = nodes_[a].value.c();
                const int cb = nodes_[b].value.c();
                if (nodes_[a].needs) {
                    auto& ga = acc(a);
                    for (int y = 0; y < g.h(); ++y)
                        for (int x = 0; x < g.w(); ++x)
                            for (int c = 0; c < ca; ++c) ga.at(y, x, c) += g.at(y, x, c);
                }
                if (nodes_[b].needs) {
                    auto& gb = acc(b);
                    for (int y = 0; y < g.h(); ++y)
                        for (int x = 0; x < g.w(); ++x)
                            for (int c = 0; c < cb; ++c) gb.at(y, x, c) += g.at(y, x, ca + c);
                }
            };
        }
        return o;
    }

    // x [H][W][C] * gate [H][W][1], broadcast over channels
    Var broadcast_mul(Var a, Var gate) {
        const auto& av = nodes_[a].value;
        const auto& gv = nodes_[gate].value;
        if (av.rank() != 3 || gv.rank() != 3 || gv.c() != 1 || av.h() != gv.h() || av.w() != gv.w())
            throw InvalidInput("broadcast_mul: shape mismatch");
        Tensor<T> out = av;
        for (int y = 0; y < av.h(); ++y)
            for (int x = 0; x < av.w(); ++x) {
                const T g = gv.at(y, x, 0);
                T* px = out.row(y, x);
                for (int c = 0; c < av.c(); ++c) px[c] *= g;
            }
        Var o = push(std::move(out), nodes_[a].needs || nodes_[gate].needs, nullptr);
        if (nodes_[o].needs) {
            nodes_[o].back = [this, a, gate, o] {
                const auto& g = nodes_[o].grad;
                const auto& av2 = nodes_[a].value;
                const auto& gv2 = nodes_[gate].value;
                if (nodes_[a].needs) {
                    auto& ga = acc(a);
                    for (int y = 0; y < g.h(); ++y)
                        for (int x = 0; x < g.w(); ++x) {
                            const T gg = gv2.at(y, x, 0);
                            const T* pg = g.row(y, x);
                            T* pa = ga.row(y, x);
                            for (int c = 0; c < g.c(); ++c) pa[c] += pg[c] * gg;
                        }
                }
                if (nodes_[gate].needs) {
                    auto& gg = acc(gate);
                    for (int y = 0; y < g.h(); ++y)
                        for (int x = 0; x < g.w(); ++x) {
                            const T* pg = g.row(y, x);
                            const T* pa = av2.row(y, x);
                            T s = 0;
                            for (int c = 0; c < g.c(); ++c) s += pg[c] * pa[c];
                            gg.at(y, x, 0) += s;
                        }
                }
            };
        }
        return o;
    }

    // per-cell softmax over the channel axis
    Var softmax_c(Var a) {
        const auto& av = nodes_[a].value;
        if (av.rank() != 3) throw InvalidInput("softmax_c: rank");
        Tensor<T> out = av;
        const int C = av.c();
        for (int y = 0; y < av.h(); ++y)
            for (int x = 0; x < av.w(); ++x) {
                T* px = out.row(y, x);
                T m = px[0];
                for (int c = 1; c < C; ++c) m = std::max(m, px[c]);
                T s = 0;
                for (int c = 0; c < C; ++c) {
                    px[c] = std::exp(px[c] - m);
                    s += px[c];
                }
                const T inv = T(1) / s;
                for (int c = 0; c < C; ++c) px[c] *= inv;
            }
        Var o = push(std::move(out), nodes_[a].needs, nullptr);
        if (nodes_[o].needs) {
            nodes_[o].back = [this, a, o] {
                const auto& g = nodes_[o].grad;
                const auto& ov = nodes_[o].value;
                auto& ga = acc(a);
                const int C = ov.c();
                for (int y = 0; y < g.h(); ++y)
                    for (int x = 0; x < g.w(); ++x) {
                        const T* pg = g.row(y, x);
                        const T* po = ov.row(y, x);
                        T dot = 0;
                        for (int c = 0; c < C; ++c) dot += pg[c] * po[c];
                        T* pa = ga.row(y, x);
                        for (int c = 0; c < C; ++c) pa[c] += po[c] * (pg[c] - dot);
                    }
            };
        }
        return o;
    }

    // ---- NN primitives ----

    // x [H][W][Cin], w [kh][kw][Cin/groups][Cout], b [Cout]
    Var conv2d(Var x, Var w, Var b, int stride, int pad, int groups = 1) {
        const auto& xv = nodes_[x].value;
        const auto& wv = nodes_[w].value;
        const auto& bv = nodes_[b].value;
        if (xv.rank() != 3 || wv.rank() != 4) throw InvalidInput("conv2d: rank");
        const int H = xv.h(), W = xv.w(), Cin = xv.c();
        const int kh = wv.dim(0), kw = wv.dim(1), cinpg = wv.dim(2), Cout = wv.dim(3);
        if (Cin % groups || Cout % groups || cinpg != Cin / groups)
            throw InvalidInput("conv2d: channel/group mismatch");
        if (bv.rank() != 1 || bv.dim(0) != Cout) throw InvalidInput("conv2d: bias shape");
        const int Ho = (H + 2 * pad - kh) / stride + 1;
        const int Wo = (W + 2 * pad - kw) / stride + 1;
        if (Ho <= 0 || Wo <= 0) throw InvalidInput("conv2d: empty output");
        const int coutpg = Cout / groups;

        Tensor<T> out(Ho, Wo, Cout);
        std::vector<T> accbuf(static_cast<std::size_t>(Cout));
        for (int oy = 0; oy < Ho; ++oy) {
            for (int ox = 0; ox < Wo; ++ox) {
                for (int c = 0; c < Cout; ++c) accbuf[c] = bv[c];
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= W) continue;
                        const T* px = xv.row(iy, ix);
                        const T* wk = wv.data() + (static_cast<std::size_t>(ky) * kw + kx) * cinpg * Cout;
                        for (int g = 0; g < groups; ++g) {
                            const int co0 = g * coutpg;
                            for (int cl = 0; cl < cinpg; ++cl) {
                                const T a = px[g * cinpg + cl];
                                const T* wr = wk + static_cast<std::size_t>(cl) * Cout + co0;
                                T* ac = accbuf.data() + co0;
                                for (int co = 0; co < coutpg; ++co) ac[co] += a * wr[co];
                            }
                        }
                    }
                }
                T* po = out.row(oy, ox);
                for (int c = 0; c < Cout; ++c) po[c] = accbuf[c];
            }
        }
        Var o = push(std::move(out), nodes_[x].needs || nodes_[w].needs || nodes_[b].needs, nullptr);
        if (nodes_[o].needs) {
            nodes_[o].back = [this, x, w, b, o, stride, pad, groups] { conv2d_back(x, w, b, o, stride, pad, groups); };
        }
        return o;
    }

    // transposed conv: x [H][W][Cin], w [kh][kw][Cin][Cout], output (H-1)*stride - 2*pad + kh
    Var tconv2d(Var x, Var w, Var b, int stride, int pad) {
        const auto& xv = nodes_[x].value;
        const auto& wv = nodes_[w].value;
        const auto& bv = nodes_[b].value;
        if (xv.rank() != 3 || wv.rank() != 4) throw InvalidInput("tconv2d: rank");
        const int H = xv.h(), W = xv.w(), Cin = xv.c();
        const int kh = wv.dim(0), kw = wv.dim(1), Cout = wv.dim(3);
        if (wv.dim(2) != Cin) throw InvalidInput("tconv2d: cin mismatch");
        if (bv.rank() != 1 || bv.dim(0) != Cout) throw InvalidInput("tconv2d: bias shape");
        const int Ho = (H - 1) * stride - 2 * pad + kh;
        const int Wo = (W - 1) * stride - 2 * pad + kw;
        if (Ho <= 0 || Wo <= 0) throw InvalidInput("tconv2d: empty output");

        Tensor<T> out(Ho, Wo, Cout);
        std::vector<T> accbuf(static_cast<std::size_t>(Cout));
        for (int oy = 0; oy < Ho; ++oy) {
            for (int ox = 0; ox < Wo; ++ox) {
                for (int c = 0; c < Cout; ++c) accbuf[c] = bv[c];
                for (int ky = 0; ky < kh; ++ky) {
                    const int ty = oy + pad - ky;
                    if (ty < 0 || ty % stride) continue;
                    const int iy = ty / stride;
                    if (iy >= H) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int tx = ox + pad - kx;
                        if (tx < 0 || tx % stride) continue;
                        const int ix = tx / stride;
                        if (ix >= W) continue;
                        const T* px = xv.row(iy, ix);
                        const T* wk = wv.data() + (static_cast<std::size_t>(ky) * kw + kx) * Cin * Cout;
                        for (int ci = 0; ci < Cin; ++ci) {
                            const T a = px[ci];
                            const T* wr = wk + static_cast<std::size_t>(ci) * Cout;
                            for (int co = 0; co < Cout; ++co) accbuf[co] += a * wr[co];
                        }
                    }
                }
                T* po = out.row(oy, ox);
                for (int c = 0; c < Cout; ++c) po[c] = accbuf[c];
            }
        }
        Var o = push(std::move(out), nodes_[x].needs || nodes_[w].needs || nodes_[b].needs, nullptr);
        if (nodes_[o].needs) {
            nodes_[o].back = [this, x, w, b, o, stride, pad] { tconv2d_back(x, w, b, o, stride, pad); };
        }
        return o;
    }

    // Strided pixel decimation, top-left anchored: out[y][x] = in[y*f][x*f].
    Var decimate(Var x, int factor) {
        const auto& xv = nodes_[x].value;
        if (xv.rank() != 3) throw InvalidInput("decimate: rank");
        if (factor < 1 || xv.h() % factor || xv.w() % factor)
            throw InvalidInput("decimate: dimensions not divisible by factor");
        const int Ho = xv.h() / factor, Wo = xv.w() / factor, C = xv.c();
        Tensor<T> out(Ho, Wo, C);
        for (int y = 0; y < Ho; ++y)
            for (int x2 = 0; x2 < Wo; ++x2) {
                const T* ps = xv.row(y * factor, x2 * factor);
                T* po = out.row(y, x2);
                for (int c = 0; c < C; ++c) po[c] = ps[c];
            }
        Var o = push(std::move(out), nodes_[x].needs, nullptr);
        if (nodes_[o].needs) {
            nodes_[o].back = [this, x, o, factor] {
                const auto& g = nodes_[o].grad;
                auto& gx = acc(x);
                const int C = gx.c();
                for (int y = 0; y < g.h(); ++y)
                    for (int x2 = 0; x2 < g.w(); ++x2) {
                        const T* pg = g.row(y, x2);
                        T* ps = gx.row(y * factor, x2 * factor);
                        for (int c = 0; c < C; ++c) ps[c] += pg[c];
                    }
            };
        }
        return o;
    }

    // Half-pixel-center bilinear resize with edge clamping.
    Var bilinear_resize(Var x, int oh, int ow) {
        const auto& xv = nodes_[x].value;
        if (xv.rank() != 3) throw InvalidInput("bilinear_resize: rank");
        if (oh <= 0 || ow <= 0) throw InvalidInput("bilinear_resize: bad size");
        const int H = xv.h(), W = xv.w();

        if (oh == H && ow == W) {  // exact identity
            Tensor<T> out = xv;
            Var o = push(std::move(out), nodes_[x].needs, nullptr);
            if (nodes_[o].needs) {
                nodes_[o].back = [this, x, o] {
                    const auto& g = nodes_[o].grad;
                    auto& gx = acc(x);
                    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                };
            }
            return o;
        }

        Tensor<T> out = resize_bilinear(xv, oh, ow);
        Var o = push(std::move(out), nodes_[x].needs, nullptr);
        if (nodes_[o].needs) {
            nodes_[o].back = [this, x, o, ay = bilinear_axis<T>(H, oh), ax = bilinear_axis<T>(W, ow)] {
                const auto& g = nodes_[o].grad;
                auto& gx = acc(x);
                const int C = gx.c();
                for (int y = 0; y < g.h(); ++y) {
                    const T wy1 = ay.frac[y], wy0 = T(1) - wy1;
                    for (int x2 = 0; x2 < g.w(); ++x2) {
                        const T wx1 = ax.frac[x2], wx0 = T(1) - wx1;
                        const T* pg = g.row(y, x2);
                        T* p00 = gx.row(ay.i0[y], ax.i0[x2]);
                        T* p01 = gx.row(ay.i0[y], ax.i1[x2]);
                        T* p10 = gx.row(ay.i1[y], ax.i0[x2]);
                        T* p11 = gx.row(ay.i1[y], ax.i1[x2]);
                        for (int c = 0; c < C; ++c) {
                            p00[c] += wy0 * wx0 * pg[c];
                            p01[c] += wy0 * wx1 * pg[c];
                            p10[c] += wy1 * wx0 * pg[c];
                            p11[c] += wy1 * wx1 * pg[c];
                        }
                    }
                }
            };
        }
        return o;
    }

    // depthwise cross-correlation: out[y][x][c] = sum_t s[y+ty][x+tx][c] * t[ty][tx][c]
    Var xcorr_depthwise(Var s, Var t) {
        const auto& sv = nodes_[s].value;
        const auto& tv = nodes_[t].value;
        if (sv.rank() != 3 || tv.rank() != 3 || sv.c() != tv.c()) throw InvalidInput("xcorr: shape");
        const int Ho = sv.h() - tv.h() + 1;
        const int Wo = sv.w() - tv.w() + 1;
        if (Ho <= 0 || Wo <= 0) throw InvalidInput("xcorr: template larger than search");
        const int C = sv.c();
        Tensor<T> out(Ho, Wo, C);
        for (int y = 0; y < Ho; ++y)
            for (int x = 0; x < Wo; ++x) {
                T* po = out.row(y, x);
                for (int c = 0; c < C; ++c) po[c] = T(0);
                for (int ty = 0; ty < tv.h(); ++ty)
                    for (int tx = 0; tx < tv.w(); ++tx) {
                        const T* ps = sv.row(y + ty, x + tx);
                        const T* pt = tv.row(ty, tx);
                        for (int c = 0; c < C; ++c) po[c] += ps[c] * pt[c];
                    }
            }
        Var o = push(std::move(out), nodes_[s].needs || nodes_[t].needs, nullptr);
        if (nodes_[o].needs) {
            nodes_[o].back = [this, s, t, o] {
                const auto& g = nodes_[o].grad;
                const auto& sv2 = nodes_[s].value;
                const auto& tv2 = nodes_[t].value;
                const int C = sv2.c();
                if (nodes_[s].needs) {
                    auto& gs = acc(s);
                    for (int y = 0; y < g.h(); ++y)
                        for (int x = 0; x < g.w(); ++x) {
                            const T* pg = g.row(y, x);
                            for (int ty = 0; ty < tv2.h(); ++ty)
                                for (int tx = 0; tx < tv2.w(); ++tx) {
                                    T* ps = gs.row(y + ty, x + tx);
                                    const T* pt = tv2.row(ty, tx);
                                    for (int c = 0; c < C; ++c) ps[c] += pg[c] * pt[c];
                                }
                        }
                }
                if (nodes_[t].needs) {
                    auto& gt = acc(t);
                    for (int y = 0; y < g.h(); ++y)
                        for (int x = 0; x < g.w(); ++x) {
                            const T* pg = g.row(y, x);
                            for (int ty = 0; ty < tv2.h(); ++ty)
                                for (int tx = 0; tx < tv2.w(); ++tx) {
                                    const T* ps = sv2.row(y + ty, x + tx);
                                    T* pt = gt.row(ty, tx);
                                    for (int c = 0; c < C; ++c) pt[c] += pg[c] * ps[c];
                                }
                        }
                }
            };
        }
        return o;
    }

    // ---- backward driver ----

    void backward(Var v) {
        if (nodes_[v].value.size() != 1) throw InvalidInput("backward: loss must be scalar");
        ensure_grad(v);
        nodes_[v].grad[0] = T(1);
        nodes_[v].has_grad = true;
        for (Var i = v; i >= 0; --i) {
            auto& n = nodes_[i];
            if (n.back && n.has_grad) n.back();
        }
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        std::function<void()> back;
        bool needs = false;
        bool has_grad = false;
    };

    // deque: growing the tape must not invalidate references handed out by
    // val()/grad() while a network is still being built
    std::deque<Node> nodes_;

    Var push(Tensor<T> v, bool needs, std::function<void()> back) {
        Node n;
        n.value = std::move(v);
        n.needs = needs;
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return static_cast<Var>(nodes_.size() - 1);
    }

    void ensure_grad(Var v) {
        auto& n = nodes_[v];
        if (n.grad.size() != n.value.size()) n.grad = Tensor<T>(n.value.shape());
    }

    // gradient accumulator: allocates and marks the node as carrying gradient
    Tensor<T>& acc(Var v) {
        ensure_grad(v);
        nodes_[v].has_grad = true;
        return nodes_[v].grad;
    }

    void check_same(Var a, Var b, const char* op) {
        if (!nodes_[a].value.same_shape(nodes_[b].value))
            throw InvalidInput(std::string(op) + ": shape mismatch " + nodes_[a].value.shape_str() + " vs " +
                               nodes_[b].value.shape_str());
    }

    void conv2d_back(Var x, Var w, Var b, Var o, int stride, int pad, int groups) {
        const auto& g = nodes_[o].grad;
        const auto& xv = nodes_[x].value;
        const auto& wv = nodes_[w].value;
        const int H = xv.h(), W = xv.w();
        const int kh = wv.dim(0), kw = wv.dim(1), cinpg = wv.dim(2), Cout = wv.dim(3);
        const int coutpg = Cout / groups;
        const int Ho = g.h(), Wo = g.w();

        if (nodes_[x].needs) {
            auto& gx = acc(x);
            for (int iy = 0; iy < H; ++iy) {
                for (int ix = 0; ix < W; ++ix) {
                    T* pgx = gx.row(iy, ix);
                    for (int ky = 0; ky < kh; ++ky) {
                        const int ty = iy + pad - ky;
                        if (ty < 0 || ty % stride) continue;
                        const int oy = ty / stride;
                        if (oy >= Ho) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int tx = ix + pad - kx;
                            if (tx < 0 || tx % stride) continue;
                            const int ox = tx / stride;
                            if (ox >= Wo) continue;
                            const T* pg = g.row(oy, ox);
                            const T* wk = wv.data() + (static_cast<std::size_t>(ky) * kw + kx) * cinpg * Cout;
                            for (int gi = 0; gi < groups; ++gi) {
                                const int co0 = gi * coutpg;
                                for (int cl = 0; cl < cinpg; ++cl) {
                                    const T* wr = wk + static_cast<std::size_t>(cl) * Cout + co0;
                                    const T* pgc = pg + co0;
                                    T sum = 0;
                                    for (int co = 0; co < coutpg; ++co) sum += pgc[co] * wr[co];
                                    pgx[gi * cinpg + cl] += sum;
                                }
                            }
                        }
                    }
                }
            }
        }
        if (nodes_[w].needs) {
            auto& gw = acc(w);
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    T* gwk = gw.data() + (static_cast<std::size_t>(ky) * kw + kx) * cinpg * Cout;
                    for (int oy = 0; oy < Ho; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= H) continue;
                        for (int ox = 0; ox < Wo; ++ox) {
                            const int ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= W) continue;
                            const T* px = xv.row(iy, ix);
                            const T* pg = g.row(oy, ox);
                            for (int gi = 0; gi < groups; ++gi) {
                                const int co0 = gi * coutpg;
                                for (int cl = 0; cl < cinpg; ++cl) {
                                    const T a = px[gi * cinpg + cl];
                                    T* wr = gwk + static_cast<std::size_t>(cl) * Cout + co0;
                                    const T* pgc = pg + co0;
                                    for (int co = 0; co < coutpg; ++co) wr[co] += a * pgc[co];
                                }
                            }
                        }
                    }
                }
            }
        }
        if (nodes_[b].needs) {
            auto& gb = acc(b);
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) {
                    const T* pg = g.row(oy, ox);
                    for (int c = 0; c < Cout; ++c) gb[c] += pg[c];
                }
        }
    }

    void tconv2d_back(Var x, Var w, Var b, Var o, int stride, int pad) {
        const auto& g = nodes_[o].grad;
        const auto& xv = nodes_[x].value;
        const auto& wv = nodes_[w].value;
        const int H = xv.h(), W = xv.w(), Cin = xv.c();
        const int kh = wv.dim(0), kw = wv.dim(1), Cout = wv.dim(3);
        const int Ho = g.h(), Wo = g.w();

        if (nodes_[x].needs) {
            auto& gx = acc(x);
            for (int iy = 0; iy < H; ++iy) {
                for (int ix = 0; ix < W; ++ix) {
                    T* pgx = gx.row(iy, ix);
                    for (int ky = 0; ky < kh; ++ky) {
                        const int oy = iy * stride - pad + ky;
                        if (oy < 0 || oy >= Ho) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ox = ix * stride - pad + kx;
                            if (ox < 0 || ox >= Wo) continue;
                            const T* pg = g.row(oy, ox);
                            const T* wk = wv.data() + (static_cast<std::size_t>(ky) * kw + kx) * Cin * Cout;
                            for (int ci = 0; ci < Cin; ++ci) {
                                const T* wr = wk + static_cast<std::size_t>(ci) * Cout;
                                T sum = 0;
                                for (int co = 0; co < Cout; ++co) sum += pg[co] * wr[co];
                                pgx[ci] += sum;
                            }
                        }
                    }
                }
            }
        }
        if (nodes_[w].needs) {
            auto& gw = acc(w);
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                    T* gwk = gw.data() + (static_cast<std::size_t>(ky) * kw + kx) * Cin * Cout;
                    for (int iy = 0; iy < H; ++iy) {
                        const int oy = iy * stride - pad + ky;
                        if (oy < 0 || oy >= Ho) continue;
                        for (int ix = 0; ix < W; ++ix) {
                            const int ox = ix * stride - pad + kx;
                            if (ox < 0 || ox >= Wo) continue;
                            const T* px = xv.row(iy, ix);
                            const T* pg = g.row(oy, ox);
                            for (int ci = 0; ci < Cin; ++ci) {
                                const T a = px[ci];
                                T* wr = gwk + static_cast<std::size_t>(ci) * Cout;
                                for (int co = 0; co < Cout; ++co) wr[co] += a * pg[co];
                            }
                        }
                    }
                }
        }
        if (nodes_[b].needs) {
            auto& gb = acc(b);
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) {
                    const T* pg = g.row(oy, ox);
                    for (int c = 0; c < Cout; ++c) gb[c] += pg[c];
                }
        }
    }
};

}  // namespace ad2
