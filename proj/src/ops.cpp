// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#include "lcnx/ops.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace lcnx::ops {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) {
        throw ShapeError(what);
    }
}

struct ConvGeom {
    std::size_t n, c, h, w, o, kh, kw, oh, ow;
    int stride, pad;
};

std::size_t conv_out(std::size_t in, std::size_t k, int stride, int pad, const char* op) {
    const long long span = static_cast<long long>(in) + 2LL * pad - static_cast<long long>(k);
    if (stride <= 0 || span < 0 || span % stride != 0) {
        throw ShapeError(std::string(op) + ": output size is not a positive integer (in=" +
                         std::to_string(in) + ", k=" + std::to_string(k) + ", stride=" +
                         std::to_string(stride) + ", pad=" + std::to_string(pad) + ")");
    }
    return static_cast<std::size_t>(span / stride + 1);
}

} // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

template <typename T>
Var linear(Tape<T>& tape, Var x, Var weight, std::optional<Var> bias) {
    const auto& xv = tape.value(x);
    const auto& wv = tape.value(weight);
    require(wv.rank() == 2, "linear: weight must be 2-D, got " + shape_str(wv.shape()));
    require(xv.rank() >= 1 && xv.shape().back() == wv.dim(1),
            "linear: input " + shape_str(xv.shape()) + " vs weight " + shape_str(wv.shape()));
    const std::size_t d = wv.dim(0);
    const std::size_t k = wv.dim(1);
    const std::size_t rows = xv.numel() / k;
    if (bias) {
        const auto& bv = tape.value(*bias);
        require(bv.rank() == 1 && bv.dim(0) == d, "linear: bias " + shape_str(bv.shape()));
    }

    Shape out_shape = xv.shape();
    out_shape.back() = d;
    NdArray<T> y(out_shape);
    const T* xp = xv.data().data();
    const T* wp = wv.data().data();
    T* yp = y.data().data();
    for (std::size_t m = 0; m < rows; ++m) {
        const T* xr = xp + m * k;
        for (std::size_t i = 0; i < d; ++i) {
            const T* wr = wp + i * k;
            T acc{0};
            for (std::size_t j = 0; j < k; ++j) {
                acc += wr[j] * xr[j];
            }
            yp[m * d + i] = acc;
        }
    }
    if (bias) {
        const auto& bv = tape.value(*bias);
        for (std::size_t m = 0; m < rows; ++m) {
            for (std::size_t i = 0; i < d; ++i) {
                yp[m * d + i] += bv[i];
            }
        }
    }

    return tape.record("linear", std::move(y), {x, weight, bias.value_or(Var{})},
                       [x, weight, bias, rows, d, k](Tape<T>& t, const NdArray<T>& g) {
                           const T* gp = g.data().data();
                           const auto& xv = t.value(x);
                           const auto& wv = t.value(weight);
                           if (t.requires_grad(x)) {
                               NdArray<T> dx(xv.shape());
                               T* dxp = dx.data().data();
                               for (std::size_t m = 0; m < rows; ++m) {
                                   for (std::size_t i = 0; i < d; ++i) {
                                       const T gi = gp[m * d + i];
                                       const T* wr = wv.data().data() + i * k;
                                       for (std::size_t j = 0; j < k; ++j) {
                                           dxp[m * k + j] += gi * wr[j];
                                       }
                                   }
                               }
                               t.accumulate(x, dx);
                           }
                           if (t.requires_grad(weight)) {
                               NdArray<T> dw(wv.shape());
                               T* dwp = dw.data().data();
                               for (std::size_t m = 0; m < rows; ++m) {
                                   const T* xr = xv.data().data() + m * k;
                                   for (std::size_t i = 0; i < d; ++i) {
                                       const T gi = gp[m * d + i];
                                       T* dwr = dwp + i * k;
                                       for (std::size_t j = 0; j < k; ++j) {
                                           dwr[j] += gi * xr[j];
                                       }
                                   }
                               }
                               t.accumulate(weight, dw);
                           }
                           if (bias && t.requires_grad(*bias)) {
                               NdArray<T> db({d});
                               for (std::size_t m = 0; m < rows; ++m) {
                                   for (std::size_t i = 0; i < d; ++i) {
                                       db[i] += gp[m * d + i];
                                   }
                               }
                               t.accumulate(*bias, db);
                           }
                       });
}

template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var kernel, std::optional<Var> bias, int stride, int pad) {
    const auto& xv = tape.value(x);
    const auto& kv = tape.value(kernel);
    require(xv.rank() == 4 && kv.rank() == 4, "conv2d: expects NCHW input and OCkk kernel");
    require(xv.dim(1) == kv.dim(1), "conv2d: channel mismatch " + shape_str(xv.shape()) + " vs " +
                                        shape_str(kv.shape()));
    ConvGeom g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), kv.dim(0), kv.dim(2), kv.dim(3), 0, 0, stride, pad};
    g.oh = conv_out(g.h, g.kh, stride, pad, "conv2d");
    g.ow = conv_out(g.w, g.kw, stride, pad, "conv2d");
    if (bias) {
        const auto& bv = tape.value(*bias);
        require(bv.rank() == 1 && bv.dim(0) == g.o, "conv2d: bias " + shape_str(bv.shape()));
    }

    NdArray<T> y({g.n, g.o, g.oh, g.ow});
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t o = 0; o < g.o; ++o) {
            const T b0 = bias ? tape.value(*bias)[o] : T{0};
            for (std::size_t oy = 0; oy < g.oh; ++oy) {
                for (std::size_t ox = 0; ox < g.ow; ++ox) {
                    T acc = b0;
                    for (std::size_t c = 0; c < g.c; ++c) {
                        for (std::size_t ky = 0; ky < g.kh; ++ky) {
                            const long long iy = static_cast<long long>(oy) * stride + ky - pad;
                            if (iy < 0 || iy >= static_cast<long long>(g.h)) continue;
                            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                                const long long ix = static_cast<long long>(ox) * stride + kx - pad;
                                if (ix < 0 || ix >= static_cast<long long>(g.w)) continue;
                                acc += xv(n, c, iy, ix) * kv(o, c, ky, kx);
                            }
                        }
                    }
                    y(n, o, oy, ox) = acc;
                }
            }
        }
    }

    return tape.record("conv2d", std::move(y), {x, kernel, bias.value_or(Var{})},
                       [x, kernel, bias, g](Tape<T>& t, const NdArray<T>& gout) {
                           const auto& xv = t.value(x);
                           const auto& kv = t.value(kernel);
                           const bool want_x = t.requires_grad(x);
                           const bool want_k = t.requires_grad(kernel);
                           NdArray<T> dx(want_x ? xv.shape() : Shape{0});
                           NdArray<T> dk(want_k ? kv.shape() : Shape{0});
                           for (std::size_t n = 0; n < g.n; ++n) {
                               for (std::size_t o = 0; o < g.o; ++o) {
                                   for (std::size_t oy = 0; oy < g.oh; ++oy) {
                                       for (std::size_t ox = 0; ox < g.ow; ++ox) {
                                           const T go = gout(n, o, oy, ox);
                                           if (go == T{0}) continue;
                                           for (std::size_t c = 0; c < g.c; ++c) {
                                               for (std::size_t ky = 0; ky < g.kh; ++ky) {
                                                   const long long iy = static_cast<long long>(oy) * g.stride + ky - g.pad;
                                                   if (iy < 0 || iy >= static_cast<long long>(g.h)) continue;
                                                   for (std::size_t kx = 0; kx < g.kw; ++kx) {
                                                       const long long ix = static_cast<long long>(ox) * g.stride + kx - g.pad;
                                                       if (ix < 0 || ix >= static_cast<long long>(g.w)) continue;
                                                       if (want_x) dx(n, c, iy, ix) += go * kv(o, c, ky, kx);
                                                       if (want_k) dk(o, c, ky, kx) += go * xv(n, c, iy, ix);
                                                   }
                                               }
                                           }
                                       }
                                   }
                               }
                           }
                           if (want_x) t.accumulate(x, dx);
                           if (want_k) t.accumulate(kernel, dk);
                           if (bias && t.requires_grad(*bias)) {
                               NdArray<T> db({g.o});
                               for (std::size_t n = 0; n < g.n; ++n)
                                   for (std::size_t o = 0; o < g.o; ++o)
                                       for (std::size_t i = 0; i < g.oh * g.ow; ++i)
                                           db[o] += gout[(n * g.o + o) * g.oh * g.ow + i];
                               t.accumulate(*bias, db);
                           }
                       });
}

template <typename T>
Var depthwise_conv2d(Tape<T>& tape, Var x, Var kernel, std::optional<Var> bias, int pad) {
    const auto& xv = tape.value(x);
    const auto& kv = tape.value(kernel);
    require(xv.rank() == 4 && kv.rank() == 4 && kv.dim(1) == 1,
            "depthwise_conv2d: expects NCHW input and [C,1,kh,kw] kernel");
    require(kv.dim(0) == xv.dim(1), "depthwise_conv2d: channel mismatch " + shape_str(xv.shape()) +
                                        " vs " + shape_str(kv.shape()));
    ConvGeom g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), kv.dim(0), kv.dim(2), kv.dim(3), 0, 0, 1, pad};
    g.oh = conv_out(g.h, g.kh, 1, pad, "depthwise_conv2d");
    g.ow = conv_out(g.w, g.kw, 1, pad, "depthwise_conv2d");
    if (bias) {
        const auto& bv = tape.value(*bias);
        require(bv.rank() == 1 && bv.dim(0) == g.c, "depthwise_conv2d: bias " + shape_str(bv.shape()));
    }

    NdArray<T> y({g.n, g.c, g.oh, g.ow});
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t c = 0; c < g.c; ++c) {
            const T b0 = bias ? tape.value(*bias)[c] : T{0};
            const T* xp = &xv(n, c, 0, 0);
            const T* kp = &kv(c, 0, 0, 0);
            T* yp = &y(n, c, 0, 0);
            for (std::size_t oy = 0; oy < g.oh; ++oy) {
                for (std::size_t ox = 0; ox < g.ow; ++ox) {
                    T acc = b0;
                    for (std::size_t ky = 0; ky < g.kh; ++ky) {
                        const long long iy = static_cast<long long>(oy) + ky - pad;
                        if (iy < 0 || iy >= static_cast<long long>(g.h)) continue;
                        for (std::size_t kx = 0; kx < g.kw; ++kx) {
                            const long long ix = static_cast<long long>(ox) + kx - pad;
                            if (ix < 0 || ix >= static_cast<long long>(g.w)) continue;
                            acc += xp[iy * g.w + ix] * kp[ky * g.kw + kx];
                        }
                    }
                    yp[oy * g.ow + ox] = acc;
                }
            }
        }
    }

    return tape.record("depthwise_conv2d", std::move(y), {x, kernel, bias.value_or(Var{})},
                       [x, kernel, bias, g](Tape<T>& t, const NdArray<T>& gout) {
                           const auto& xv = t.value(x);
                           const auto& kv = t.value(kernel);
                           const bool want_x = t.requires_grad(x);
                           const bool want_k = t.requires_grad(kernel);
                           NdArray<T> dx(want_x ? xv.shape() : Shape{0});
                           NdArray<T> dk(want_k ? kv.shape() : Shape{0});
                           for (std::size_t n = 0; n < g.n; ++n) {
                               for (std::size_t c = 0; c < g.c; ++c) {
                                   const T* xp = &xv(n, c, 0, 0);
                                   const T* kp = &kv(c, 0, 0, 0);
                                   const T* gp = &gout(n, c, 0, 0);
                                   T* dxp = want_x ? &dx(n, c, 0, 0) : nullptr;
                                   T* dkp = want_k ? &dk(c, 0, 0, 0) : nullptr;
                                   for (std::size_t oy = 0; oy < g.oh; ++oy) {
                                       for (std::size_t ox = 0; ox < g.ow; ++ox) {
                                           const T go = gp[oy * g.ow + ox];
                                           for (std::size_t ky = 0; ky < g.kh; ++ky) {
                                               const long long iy = static_cast<long long>(oy) + ky - g.pad;
                                               if (iy < 0 || iy >= static_cast<long long>(g.h)) continue;
                                               for (std::size_t kx = 0; kx < g.kw; ++kx) {
                                                   const long long ix = static_cast<long long>(ox) + kx - g.pad;
                                                   if (ix < 0 || ix >= static_cast<long long>(g.w)) continue;
                                                   if (dxp) dxp[iy * g.w + ix] += go * kp[ky * g.kw + kx];
                                                   if (dkp) dkp[ky * g.kw + kx] += go * xp[iy * g.w + ix];
                                               }
                                           }
                                       }
                                   }
                               }
                           }
                           if (want_x) t.accumulate(x, dx);
                           if (want_k) t.accumulate(kernel, dk);
                           if (bias && t.requires_grad(*bias)) {
                               NdArray<T> db({g.c});
                               for (std::size_t n = 0; n < g.n; ++n)
                                   for (std::size_t c = 0; c < g.c; ++c)
                                       for (std::size_t i = 0; i < g.oh * g.ow; ++i)
                                           db[c] += gout[(n * g.c + c) * g.oh * g.ow + i];
                               t.accumulate(*bias, db);
                           }
                       });
}

template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gamma, Var beta, double eps) {
    const auto& xv = tape.value(x);
    const auto& gv = tape.value(gamma);
    const auto& bv = tape.value(beta);
    require(xv.rank() >= 1, "layer_norm: scalar input");
    const std::size_t c = xv.shape().back();
    require(gv.rank() == 1 && gv.dim(0) == c && bv.rank() == 1 && bv.dim(0) == c,
            "layer_norm: gamma/beta must have length " + std::to_string(c));
    require(eps > 0.0, "layer_norm: eps must be positive");
    const std::size_t rows = xv.numel() / c;

    NdArray<T> xhat(xv.shape());
    NdArray<T> rstd({rows});
    NdArray<T> y(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = xv.data().data() + r * c;
        T mean{0};
        for (std::size_t j = 0; j < c; ++j) mean += xr[j];
        mean /= static_cast<T>(c);
        T var{0};
        for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<T>(c);
        const T rs = T{1} / std::sqrt(var + static_cast<T>(eps));
        rstd[r] = rs;
        for (std::size_t j = 0; j < c; ++j) {
            const T h = (xr[j] - mean) * rs;
            xhat[r * c + j] = h;
            y[r * c + j] = h * gv[j] + bv[j];
        }
    }

    return tape.record(
        "layer_norm", std::move(y), {x, gamma, beta},
        [x, gamma, beta, rows, c, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<T>& t,
                                                                                   const NdArray<T>& g) {
            const auto& gv = t.value(gamma);
            if (t.requires_grad(gamma) || t.requires_grad(beta)) {
                NdArray<T> dg({c});
                NdArray<T> db({c});
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < c; ++j) {
                        dg[j] += g[r * c + j] * xhat[r * c + j];
                        db[j] += g[r * c + j];
                    }
                }
                t.accumulate(gamma, dg);
                t.accumulate(beta, db);
            }
            if (t.requires_grad(x)) {
                NdArray<T> dx(t.value(x).shape());
                for (std::size_t r = 0; r < rows; ++r) {
                    T mean_d{0};
                    T mean_dh{0};
                    for (std::size_t j = 0; j < c; ++j) {
                        const T dh = g[r * c + j] * gv[j];
                        mean_d += dh;
                        mean_dh += dh * xhat[r * c + j];
                    }
                    mean_d /= static_cast<T>(c);
                    mean_dh /= static_cast<T>(c);
                    for (std::size_t j = 0; j < c; ++j) {
                        const T dh = g[r * c + j] * gv[j];
                        dx[r * c + j] = rstd[r] * (dh - mean_d - xhat[r * c + j] * mean_dh);
                    }
                }
                t.accumulate(x, dx);
            }
        });
}

template <typename T>
Var gelu(Tape<T>& tape, Var x) {
    const auto& xv = tape.value(x);
    NdArray<T> y(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i) {
        const double v = static_cast<double>(xv[i]);
        y[i] = static_cast<T>(v * normal_cdf(v));
    }
    return tape.record("gelu", std::move(y), {x}, [x](Tape<T>& t, const NdArray<T>& g) {
        const auto& xv = t.value(x);
        NdArray<T> dx(xv.shape());
        const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
        for (std::size_t i = 0; i < xv.numel(); ++i) {
            const double v = static_cast<double>(xv[i]);
            const double d = normal_cdf(v) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
            dx[i] = g[i] * static_cast<T>(d);
        }
        t.accumulate(x, dx);
    });
}

template <typename T>
Var grn(Tape<T>& tape, Var x, Var gamma, Var beta, double eps) {
    const auto& xv = tape.value(x);
    const auto& gv = tape.value(gamma);
    const auto& bv = tape.value(beta);
    require(xv.rank() == 4, "grn: expects [N,H,W,C] input, got " + shape_str(xv.shape()));
    const std::size_t n = xv.dim(0);
    const std::size_t hw = xv.dim(1) * xv.dim(2);
    const std::size_t c = xv.dim(3);
    require(gv.rank() == 1 && gv.dim(0) == c && bv.rank() == 1 && bv.dim(0) == c,
            "grn: gamma/beta must have length " + std::to_string(c));

    NdArray<T> norms({n, c});  // g
    NdArray<T> scaled({n, c}); // s = g / (mean + eps)
    NdArray<T> denom({n});     // mean + eps
    for (std::size_t b = 0; b < n; ++b) {
        T mean{0};
        for (std::size_t ch = 0; ch < c; ++ch) {
            T ss{0};
            for (std::size_t p = 0; p < hw; ++p) {
                const T v = xv[(b * hw + p) * c + ch];
                ss += v * v;
            }
            norms(b, ch) = std::sqrt(ss);
            mean += norms(b, ch);
        }
        denom[b] = mean / static_cast<T>(c) + static_cast<T>(eps);
        for (std::size_t ch = 0; ch < c; ++ch) {
            scaled(b, ch) = norms(b, ch) / denom[b];
        }
    }
    NdArray<T> y(xv.shape());
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t p = 0; p < hw; ++p) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const std::size_t i = (b * hw + p) * c + ch;
                y[i] = gv[ch] * (xv[i] * scaled(b, ch)) + bv[ch] + xv[i];
            }
        }
    }

    return tape.record(
        "grn", std::move(y), {x, gamma, beta},
        [x, gamma, beta, n, hw, c, norms = std::move(norms), scaled = std::move(scaled),
         denom = std::move(denom)](Tape<T>& t, const NdArray<T>& g) {
            const auto& xv = t.value(x);
            const auto& gv = t.value(gamma);
            if (t.requires_grad(gamma) || t.requires_grad(beta)) {
                NdArray<T> dg({c});
                NdArray<T> db({c});
                for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t p = 0; p < hw; ++p)
                        for (std::size_t ch = 0; ch < c; ++ch) {
                            const std::size_t i = (b * hw + p) * c + ch;
                            dg[ch] += g[i] * xv[i] * scaled(b, ch);
                            db[ch] += g[i];
                        }
                t.accumulate(gamma, dg);
                t.accumulate(beta, db);
            }
            if (!t.requires_grad(x)) {
                return;
            }
            NdArray<T> dx(xv.shape());
            std::vector<T> ds(c);
            std::vector<T> dnorm(c);
            for (std::size_t b = 0; b < n; ++b) {
                // dL/ds[c] = sum_p g * gamma * x
                T weighted{0};
                for (std::size_t ch = 0; ch < c; ++ch) {
                    T acc{0};
                    for (std::size_t p = 0; p < hw; ++p) {
                        const std::size_t i = (b * hw + p) * c + ch;
                        acc += g[i] * gv[ch] * xv[i];
                    }
                    ds[ch] = acc;
                    weighted += acc * norms(b, ch);
                }
                // s[c] = g[c] / D, D = mean(g) + eps
                const T dd = denom[b];
                for (std::size_t ch = 0; ch < c; ++ch) {
                    dnorm[ch] = ds[ch] / dd - weighted / (dd * dd * static_cast<T>(c));
                }
                for (std::size_t p = 0; p < hw; ++p) {
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        const std::size_t i = (b * hw + p) * c + ch;
                        T v = g[i] * (gv[ch] * scaled(b, ch) + T{1});
                        if (norms(b, ch) > T{0}) {
                            v += dnorm[ch] * xv[i] / norms(b, ch);
                        }
                        dx[i] = v;
                    }
                }
            }
            t.accumulate(x, dx);
        });
}

template <typename T>
Var global_avg_pool(Tape<T>& tape, Var x) {
    const auto& xv = tape.value(x);
    require(xv.rank() == 4 && xv.dim(2) >= 1 && xv.dim(3) >= 1, "global_avg_pool: expects NCHW input");
    const std::size_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
    NdArray<T> y({n, c});
    for (std::size_t i = 0; i < n * c; ++i) {
        T acc{0};
        for (std::size_t p = 0; p < hw; ++p) acc += xv[i * hw + p];
        y[i] = acc / static_cast<T>(hw);
    }
    return tape.record("global_avg_pool", std::move(y), {x}, [x, n, c, hw](Tape<T>& t, const NdArray<T>& g) {
        NdArray<T> dx(t.value(x).shape());
        for (std::size_t i = 0; i < n * c; ++i) {
            const T v = g[i] / static_cast<T>(hw);
            for (std::size_t p = 0; p < hw; ++p) dx[i * hw + p] = v;
        }
        t.accumulate(x, dx);
    });
}

template <typename T>
NdArray<T> softmax_rows(const NdArray<T>& logits) {
    require(logits.rank() == 2, "softmax_rows: expects [N,K]");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    NdArray<T> p(logits.shape());
    for (std::size_t r = 0; r < n; ++r) {
        T mx = logits(r, 0);
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits(r, j));
        T sum{0};
        for (std::size_t j = 0; j < k; ++j) {
            p(r, j) = std::exp(logits(r, j) - mx);
            sum += p(r, j);
        }
        for (std::size_t j = 0; j < k; ++j) p(r, j) /= sum;
    }
    return p;
}

template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const int> labels) {
    const auto& lv = tape.value(logits);
    require(lv.rank() == 2 && lv.dim(0) == labels.size(),
            "softmax_cross_entropy: logits " + shape_str(lv.shape()) + " vs " +
                std::to_string(labels.size()) + " labels");
    const std::size_t n = lv.dim(0), k = lv.dim(1);
    for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= k) {
            throw ConfigError("softmax_cross_entropy: label " + std::to_string(l) + " out of range [0," +
                              std::to_string(k) + ")");
        }
    }
    T loss{0};
    for (std::size_t r = 0; r < n; ++r) {
        T mx = lv(r, 0);
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, lv(r, j));
        T sum{0};
        for (std::size_t j = 0; j < k; ++j) sum += std::exp(lv(r, j) - mx);
        loss += std::log(sum) + mx - lv(r, static_cast<std::size_t>(labels[r]));
    }
    loss /= static_cast<T>(n);
    std::vector<int> lab(labels.begin(), labels.end());
    return tape.record("softmax_cross_entropy", NdArray<T>(Shape{}, {loss}), {logits},
                       [logits, lab = std::move(lab), n, k](Tape<T>& t, const NdArray<T>& g) {
                           NdArray<T> d = softmax_rows(t.value(logits));
                           const T s = g[0] / static_cast<T>(n);
                           for (std::size_t r = 0; r < n; ++r) {
                               d(r, static_cast<std::size_t>(lab[r])) -= T{1};
                               for (std::size_t j = 0; j < k; ++j) d(r, j) *= s;
                           }
                           t.accumulate(logits, d);
                       });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    require(av.shape() == bv.shape(), "add: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    NdArray<T> y(av.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = av[i] + bv[i];
    return tape.record("add", std::move(y), {a, b}, [a, b](Tape<T>& t, const NdArray<T>& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

template <typename T>
Var scale(Tape<T>& tape, Var x, double factor) {
    const auto& xv = tape.value(x);
    const T f = static_cast<T>(factor);
    NdArray<T> y(xv.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = xv[i] * f;
    return tape.record("scale", std::move(y), {x}, [x, f](Tape<T>& t, const NdArray<T>& g) {
        NdArray<T> dx(g.shape());
        for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] = g[i] * f;
        t.accumulate(x, dx);
    });
}

template <typename T>
Var mul_const(Tape<T>& tape, Var x, const NdArray<T>& mask) {
    const auto& xv = tape.value(x);
    require(xv.shape() == mask.shape(), "mul_const: " + shape_str(xv.shape()) + " vs " + shape_str(mask.shape()));
    NdArray<T> y(xv.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = xv[i] * mask[i];
    return tape.record("mul_const", std::move(y), {x}, [x, mask](Tape<T>& t, const NdArray<T>& g) {
        NdArray<T> dx(g.shape());
        for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] = g[i] * mask[i];
        t.accumulate(x, dx);
    });
}

namespace {

template <typename T>
NdArray<T> permute_nchw_nhwc(const NdArray<T>& v, bool to_nhwc) {
    // For to_nhwc the input is [N,C,H,W]; otherwise [N,H,W,C].
    const std::size_t n = v.dim(0);
    const std::size_t c = to_nhwc ? v.dim(1) : v.dim(3);
    const std::size_t h = to_nhwc ? v.dim(2) : v.dim(1);
    const std::size_t w = to_nhwc ? v.dim(3) : v.dim(2);
    NdArray<T> out(to_nhwc ? Shape{n, h, w, c} : Shape{n, c, h, w});
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < h * w; ++p) {
                const std::size_t cf = (b * c + ch) * h * w + p;
                const std::size_t cl = (b * h * w + p) * c + ch;
                if (to_nhwc) {
                    out[cl] = v[cf];
                } else {
                    out[cf] = v[cl];
                }
            }
    return out;
}

} // namespace

template <typename T>
Var nchw_to_nhwc(Tape<T>& tape, Var x) {
    require(tape.value(x).rank() == 4, "nchw_to_nhwc: expects rank 4");
    return tape.record("nchw_to_nhwc", permute_nchw_nhwc(tape.value(x), true), {x},
                       [x](Tape<T>& t, const NdArray<T>& g) { t.accumulate(x, permute_nchw_nhwc(g, false)); });
}

template <typename T>
Var nhwc_to_nchw(Tape<T>& tape, Var x) {
    require(tape.value(x).rank() == 4, "nhwc_to_nchw: expects rank 4");
    return tape.record("nhwc_to_nchw", permute_nchw_nhwc(tape.value(x), false), {x},
                       [x](Tape<T>& t, const NdArray<T>& g) { t.accumulate(x, permute_nchw_nhwc(g, true)); });
}

template <typename T>
Var reshape(Tape<T>& tape, Var x, Shape shape) {
    const Shape original = tape.value(x).shape();
    return tape.record("reshape", tape.value(x).reshaped(std::move(shape)), {x},
                       [x, original](Tape<T>& t, const NdArray<T>& g) { t.accumulate(x, g.reshaped(original)); });
}

template <typename T>
Var weighted_sum(Tape<T>& tape, Var x, const NdArray<T>& weights) {
    const auto& xv = tape.value(x);
    require(xv.numel() == weights.numel(), "weighted_sum: size mismatch");
    T acc{0};
    for (std::size_t i = 0; i < xv.numel(); ++i) acc += xv[i] * weights[i];
    return tape.record("weighted_sum", NdArray<T>(Shape{}, {acc}), {x},
                       [x, weights](Tape<T>& t, const NdArray<T>& g) {
                           NdArray<T> dx(t.value(x).shape());
                           for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] = g[0] * weights[i];
                           t.accumulate(x, dx);
                       });
}

#define LCNX_INSTANTIATE_OPS(T)                                                                   \
    template Var linear<T>(Tape<T>&, Var, Var, std::optional<Var>);                               \
    template Var conv2d<T>(Tape<T>&, Var, Var, std::optional<Var>, int, int);                     \
    template Var depthwise_conv2d<T>(Tape<T>&, Var, Var, std::optional<Var>, int);                \
    template Var layer_norm<T>(Tape<T>&, Var, Var, Var, double);                                  \
    template Var gelu<T>(Tape<T>&, Var);                                                          \
    template Var grn<T>(Tape<T>&, Var, Var, Var, double);                                         \
    template Var global_avg_pool<T>(Tape<T>&, Var);                                               \
    template Var softmax_cross_entropy<T>(Tape<T>&, Var, std::span<const int>);                   \
    template Var add<T>(Tape<T>&, Var, Var);                                                      \
    template Var scale<T>(Tape<T>&, Var, double);                                                 \
    template Var mul_const<T>(Tape<T>&, Var, const NdArray<T>&);                                  \
    template Var nchw_to_nhwc<T>(Tape<T>&, Var);                                                  \
    template Var nhwc_to_nchw<T>(Tape<T>&, Var);                                                  \
    template Var reshape<T>(Tape<T>&, Var, Shape);                                                \
    template Var weighted_sum<T>(Tape<T>&, Var, const NdArray<T>&);                               \
    template NdArray<T> softmax_rows<T>(const NdArray<T>&);

LCNX_INSTANTIATE_OPS(float)
LCNX_INSTANTIATE_OPS(double)

} // namespace lcnx::ops
