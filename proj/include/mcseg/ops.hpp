#pragma once

// Network ops on Tensor4 with reverse-mode gradients. Convolution runs as
// im2col + a small axpy-style GEMM. Parallel sections partition work so
// every output element is reduced by exactly one task in a fixed order,
// which keeps results bit-identical for any thread count.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <optional>
#include <vector>

#include "mcseg/tensor.hpp"

namespace mcseg {

// Integer label plane per sample: 0 background, 1 foreground, or the ignore
// label. Feeds softmax_cross_entropy.
struct LabelMap {
    int n = 0, h = 0, w = 0;
    std::vector<uint8_t> v;

    int64_t numel() const { return static_cast<int64_t>(n) * h * w; }
};

namespace detail {

template <typename T>
inline void axpy(int64_t n, T a, const T* x, T* y) {
    for (int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
inline T dot(int64_t n, const T* a, const T* b) {
    T s = 0;
    for (int64_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

template <typename T>
inline T sum(int64_t n, const T* a) {
    T s = 0;
    for (int64_t i = 0; i < n; ++i) s += a[i];
    return s;
}

// col layout: [c*k*k][oh*ow], zero-filled where the window leaves the image
template <typename T>
void im2col(const T* x, int c, int h, int w, int k, int stride, int pad, int oh, int ow, T* col) {
    const int64_t N = static_cast<int64_t>(oh) * ow;
    int64_t row = 0;
    for (int ci = 0; ci < c; ++ci) {
        const T* plane = x + static_cast<int64_t>(ci) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx, ++row) {
                T* dst = col + row * N;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    T* out = dst + static_cast<int64_t>(oy) * ow;
                    if (iy < 0 || iy >= h) {
                        std::fill(out, out + ow, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<int64_t>(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        out[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

// transpose of im2col: accumulates col rows back into the image
template <typename T>
void col2im_acc(const T* col, int c, int h, int w, int k, int stride, int pad, int oh, int ow, T* x) {
    const int64_t N = static_cast<int64_t>(oh) * ow;
    int64_t row = 0;
    for (int ci = 0; ci < c; ++ci) {
        T* plane = x + static_cast<int64_t>(ci) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx, ++row) {
                const T* src = col + row * N;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    T* dst = plane + static_cast<int64_t>(iy) * w;
                    const T* in = src + static_cast<int64_t>(oy) * ow;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < w) dst[ix] += in[ox];
                    }
                }
            }
        }
    }
}

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

}  // namespace detail

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<T>& bias,
                  int stride, int pad) {
    const Shape4 xs = x.shape(), ws = weight.shape();
    if (ws.h != ws.w)
        throw ShapeError("conv2d: kernel must be square, got " + ws.str());
    if (xs.c != ws.c)
        throw ShapeError("conv2d: input channels " + std::to_string(xs.c) +
                         " do not match weight channels " + std::to_string(ws.c));
    if (stride < 1 || pad < 0)
        throw ShapeError("conv2d: stride must be >= 1 and pad >= 0");
    if (bias.defined() && bias.numel() != ws.n)
        throw ShapeError("conv2d: bias length " + std::to_string(bias.numel()) +
                         " does not match output channels " + std::to_string(ws.n));
    const int k = ws.h;
    const int oh = detail::conv_out_dim(xs.h, k, stride, pad);
    const int ow = detail::conv_out_dim(xs.w, k, stride, pad);
    if (oh < 1 || ow < 1)
        throw ShapeError("conv2d: kernel " + std::to_string(k) + " does not fit input " + xs.str());

    const int co = ws.n;
    const int64_t K = static_cast<int64_t>(xs.c) * k * k;
    const int64_t N = static_cast<int64_t>(oh) * ow;
    const bool direct = (k == 1 && stride == 1 && pad == 0);  // col == x

    std::vector<Tensor4<T>> parents = {x, weight};
    if (bias.defined()) parents.push_back(bias);

    Tensor4<T> y = Tensor4<T>::op_result(
        {xs.n, co, oh, ow}, parents,
        [stride, pad, k, K, N, co, direct](typename Tensor4<T>::Node& self) {
            auto& xn = *self.parents[0];
            auto& wn = *self.parents[1];
            const Shape4 xs = xn.shape;
            const int oh = self.shape.h, ow = self.shape.w;
            const T* dy = self.grad.data();
            const T* wp = wn.data.data();

            if (xn.requires_grad) {
                T* dx = grad_of<T>(xn).data();
                parallel_for(xs.n, [&](int64_t b, int64_t e) {
                    std::vector<T> dcol;
                    if (!direct) dcol.resize(static_cast<size_t>(K * N));
                    for (int64_t s = b; s < e; ++s) {
                        const T* dys = dy + s * co * N;
                        T* dxs = dx + s * static_cast<int64_t>(xs.c) * xs.h * xs.w;
                        if (direct) {
                            for (int m = 0; m < co; ++m)
                                for (int64_t kk = 0; kk < K; ++kk)
                                    detail::axpy(N, wp[m * K + kk], dys + m * N, dxs + kk * N);
                        } else {
                            std::fill(dcol.begin(), dcol.end(), T(0));
                            for (int m = 0; m < co; ++m)
                                for (int64_t kk = 0; kk < K; ++kk)
                                    detail::axpy(N, wp[m * K + kk], dys + m * N, dcol.data() + kk * N);
                            detail::col2im_acc(dcol.data(), xs.c, xs.h, xs.w, k, stride, pad, oh, ow,
                                               dxs);
                        }
                    }
                });
            }

            if (wn.requires_grad || (self.parents.size() > 2 && self.parents[2]->requires_grad)) {
                T* dw = wn.requires_grad ? grad_of<T>(wn).data() : nullptr;
                T* db = (self.parents.size() > 2 && self.parents[2]->requires_grad)
                            ? grad_of<T>(*self.parents[2]).data()
                            : nullptr;
                // Samples are staged in blocks; each co row is then reduced by
                // one task over the block in sample order, so the accumulation
                // order never depends on the thread count.
                const int64_t bytes_per_sample = K * N * static_cast<int64_t>(sizeof(T));
                const int64_t block = direct ? xs.n
                                             : std::max<int64_t>(1, std::min<int64_t>(
                                                   xs.n, (64 << 20) / std::max<int64_t>(1, bytes_per_sample)));
                std::vector<T> stage;
                if (!direct) stage.resize(static_cast<size_t>(block * K * N));
                for (int64_t b0 = 0; b0 < xs.n; b0 += block) {
                    const int64_t b1 = std::min<int64_t>(xs.n, b0 + block);
                    const T* cols = nullptr;
                    if (direct) {
                        cols = xn.data.data();
                    } else {
                        parallel_for(b1 - b0, [&](int64_t cb, int64_t ce) {
                            for (int64_t i = cb; i < ce; ++i) {
                                detail::im2col(xn.data.data() + (b0 + i) * xs.c * xs.h * xs.w, xs.c,
                                               xs.h, xs.w, k, stride, pad, oh, ow,
                                               stage.data() + i * K * N);
                            }
                        });
                        cols = stage.data();
                    }
                    parallel_for(co, [&](int64_t mb, int64_t me) {
                        for (int64_t m = mb; m < me; ++m) {
                            for (int64_t s = b0; s < b1; ++s) {
                                const T* dys = dy + (s * co + m) * N;
                                const T* col_s = cols + (direct ? s : s - b0) * K * N;
                                if (dw)
                                    for (int64_t kk = 0; kk < K; ++kk)
                                        dw[m * K + kk] += detail::dot(N, dys, col_s + kk * N);
                                if (db) db[m] += detail::sum(N, dys);
                            }
                        }
                    });
                }
            }
        });

    // forward
    const T* xp = x.ptr();
    const T* wp = weight.ptr();
    const T* bp = bias.defined() ? bias.ptr() : nullptr;
    T* yp = y.ptr();
    parallel_for(xs.n, [&](int64_t b, int64_t e) {
        std::vector<T> col;
        if (!direct) col.resize(static_cast<size_t>(K * N));
        for (int64_t s = b; s < e; ++s) {
            const T* cs;
            if (direct) {
                cs = xp + s * K * N;
            } else {
                detail::im2col(xp + s * xs.c * xs.h * xs.w, xs.c, xs.h, xs.w, k, stride, pad, oh, ow,
                               col.data());
                cs = col.data();
            }
            T* ys = yp + s * co * N;
            for (int m = 0; m < co; ++m) {
                T* row = ys + static_cast<int64_t>(m) * N;
                std::fill(row, row + N, bp ? bp[m] : T(0));
                for (int64_t kk = 0; kk < K; ++kk)
                    detail::axpy(N, wp[m * K + kk], cs + kk * N, row);
            }
        }
    });
    return y;
}

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& weight, int stride, int pad) {
    return conv2d(x, weight, Tensor4<T>(), stride, pad);
}

enum class BnMode { train, eval };

// Per-channel batch normalization. Train mode normalizes by batch statistics
// and folds them into the running buffers (biased variance normalizes,
// unbiased updates the running estimate); eval mode applies the running
// statistics directly.
template <typename T>
Tensor4<T> batchnorm2d(const Tensor4<T>& x, const Tensor4<T>& gamma, const Tensor4<T>& beta,
                       Tensor4<T>& running_mean, Tensor4<T>& running_var, BnMode mode,
                       T momentum = T(0.1), T eps = T(1e-5)) {
    const Shape4 xs = x.shape();
    if (gamma.numel() != xs.c || beta.numel() != xs.c)
        throw ShapeError("batchnorm2d: gamma/beta length must equal channel count " +
                         std::to_string(xs.c));
    if (running_mean.numel() != xs.c || running_var.numel() != xs.c)
        throw ShapeError("batchnorm2d: running stats length must equal channel count");

    const int64_t plane = static_cast<int64_t>(xs.h) * xs.w;
    const int64_t per_ch = static_cast<int64_t>(xs.n) * plane;
    std::vector<T> mean(xs.c), invstd(xs.c);

    const T* xp = x.ptr();
    if (mode == BnMode::train) {
        T* rm = running_mean.ptr();
        T* rv = running_var.ptr();
        parallel_for(xs.c, [&](int64_t cb, int64_t ce) {
            for (int64_t c = cb; c < ce; ++c) {
                T s = 0;
                for (int n = 0; n < xs.n; ++n)
                    s += detail::sum(plane, xp + (n * xs.c + c) * plane);
                const T m = s / static_cast<T>(per_ch);
                T v = 0;
                for (int n = 0; n < xs.n; ++n) {
                    const T* p = xp + (n * xs.c + c) * plane;
                    for (int64_t i = 0; i < plane; ++i) {
                        const T d = p[i] - m;
                        v += d * d;
                    }
                }
                const T var = v / static_cast<T>(per_ch);
                mean[c] = m;
                invstd[c] = T(1) / std::sqrt(var + eps);
                const T var_unbiased = per_ch > 1 ? v / static_cast<T>(per_ch - 1) : var;
                rm[c] = (T(1) - momentum) * rm[c] + momentum * m;
                rv[c] = (T(1) - momentum) * rv[c] + momentum * var_unbiased;
            }
        });
    } else {
        for (int c = 0; c < xs.c; ++c) {
            mean[c] = running_mean.ptr()[c];
            invstd[c] = T(1) / std::sqrt(running_var.ptr()[c] + eps);
        }
    }

    const bool train = mode == BnMode::train;
    Tensor4<T> y = Tensor4<T>::op_result(
        xs, {x, gamma, beta},
        [mean, invstd, per_ch, plane, train](typename Tensor4<T>::Node& self) {
            auto& xn = *self.parents[0];
            auto& gn = *self.parents[1];
            auto& bn = *self.parents[2];
            const Shape4 xs = xn.shape;
            const T* dy = self.grad.data();
            const T* xp = xn.data.data();
            const T* gp = gn.data.data();
            T* dg = gn.requires_grad ? grad_of<T>(gn).data() : nullptr;
            T* db = bn.requires_grad ? grad_of<T>(bn).data() : nullptr;
            T* dx = xn.requires_grad ? grad_of<T>(xn).data() : nullptr;
            parallel_for(xs.c, [&](int64_t cb, int64_t ce) {
                for (int64_t c = cb; c < ce; ++c) {
                    T sum_dy = 0, sum_dy_xhat = 0;
                    for (int n = 0; n < xs.n; ++n) {
                        const T* dyp = dy + (n * xs.c + c) * plane;
                        const T* xpp = xp + (n * xs.c + c) * plane;
                        for (int64_t i = 0; i < plane; ++i) {
                            sum_dy += dyp[i];
                            sum_dy_xhat += dyp[i] * (xpp[i] - mean[c]) * invstd[c];
                        }
                    }
                    if (dg) dg[c] += sum_dy_xhat;
                    if (db) db[c] += sum_dy;
                    if (!dx) continue;
                    if (train) {
                        const T scale = gp[c] * invstd[c] / static_cast<T>(per_ch);
                        for (int n = 0; n < xs.n; ++n) {
                            const T* dyp = dy + (n * xs.c + c) * plane;
                            const T* xpp = xp + (n * xs.c + c) * plane;
                            T* dxp = dx + (n * xs.c + c) * plane;
                            for (int64_t i = 0; i < plane; ++i) {
                                const T xhat = (xpp[i] - mean[c]) * invstd[c];
                                dxp[i] += scale * (static_cast<T>(per_ch) * dyp[i] - sum_dy -
                                                   xhat * sum_dy_xhat);
                            }
                        }
                    } else {
                        const T scale = gp[c] * invstd[c];
                        for (int n = 0; n < xs.n; ++n) {
                            const T* dyp = dy + (n * xs.c + c) * plane;
                            T* dxp = dx + (n * xs.c + c) * plane;
                            for (int64_t i = 0; i < plane; ++i) dxp[i] += scale * dyp[i];
                        }
                    }
                }
            });
        });

    const T* gp = gamma.ptr();
    const T* bp = beta.ptr();
    T* yp = y.ptr();
    parallel_for(xs.c, [&](int64_t cb, int64_t ce) {
        for (int64_t c = cb; c < ce; ++c) {
            const T a = gp[c] * invstd[c];
            const T b = bp[c] - a * mean[c];
            for (int n = 0; n < xs.n; ++n) {
                const T* src = xp + (n * xs.c + c) * plane;
                T* dst = yp + (n * xs.c + c) * plane;
                for (int64_t i = 0; i < plane; ++i) dst[i] = a * src[i] + b;
            }
        }
    });
    return y;
}

template <typename T>
Tensor4<T> relu(const Tensor4<T>& x) {
    Tensor4<T> y = Tensor4<T>::op_result(x.shape(), {x}, [](typename Tensor4<T>::Node& self) {
        auto& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        T* dx = grad_of<T>(xn).data();
        const T* xp = xn.data.data();
        const T* dy = self.grad.data();
        const int64_t n = self.shape.numel();
        for (int64_t i = 0; i < n; ++i)
            if (xp[i] > T(0)) dx[i] += dy[i];
    });
    const T* xp = x.ptr();
    T* yp = y.ptr();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) yp[i] = xp[i] > T(0) ? xp[i] : T(0);
    return y;
}

template <typename T>
Tensor4<T> maxpool2d(const Tensor4<T>& x, int k, int stride, int pad = 0) {
    const Shape4 xs = x.shape();
    if (k < 1 || stride < 1 || pad < 0 || pad >= k)
        throw ShapeError("maxpool2d: invalid window parameters");
    const int oh = detail::conv_out_dim(xs.h, k, stride, pad);
    const int ow = detail::conv_out_dim(xs.w, k, stride, pad);
    if (oh < 1 || ow < 1)
        throw ShapeError("maxpool2d: window does not fit input " + xs.str());

    const int64_t planes = static_cast<int64_t>(xs.n) * xs.c;
    const int64_t out_plane = static_cast<int64_t>(oh) * ow;
    auto argmax = std::make_shared<std::vector<int32_t>>(planes * out_plane);

    Tensor4<T> y = Tensor4<T>::op_result(
        {xs.n, xs.c, oh, ow}, {x}, [argmax, out_plane](typename Tensor4<T>::Node& self) {
            auto& xn = *self.parents[0];
            if (!xn.requires_grad) return;
            T* dx = grad_of<T>(xn).data();
            const T* dy = self.grad.data();
            const int64_t in_plane = static_cast<int64_t>(xn.shape.h) * xn.shape.w;
            const int64_t planes = static_cast<int64_t>(xn.shape.n) * xn.shape.c;
            parallel_for(planes, [&](int64_t pb, int64_t pe) {
                for (int64_t p = pb; p < pe; ++p) {
                    const int32_t* am = argmax->data() + p * out_plane;
                    const T* dyp = dy + p * out_plane;
                    T* dxp = dx + p * in_plane;
                    for (int64_t i = 0; i < out_plane; ++i) dxp[am[i]] += dyp[i];
                }
            });
        });

    const T* xp = x.ptr();
    T* yp = y.ptr();
    const int64_t in_plane = static_cast<int64_t>(xs.h) * xs.w;
    parallel_for(planes, [&](int64_t pb, int64_t pe) {
        for (int64_t p = pb; p < pe; ++p) {
            const T* src = xp + p * in_plane;
            T* dst = yp + p * out_plane;
            int32_t* am = argmax->data() + p * out_plane;
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    T best = -std::numeric_limits<T>::infinity();
                    int32_t best_i = -1;
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= xs.h) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= xs.w) continue;
                            const T v = src[iy * xs.w + ix];
                            if (v > best) {
                                best = v;
                                best_i = iy * xs.w + ix;
                            }
                        }
                    }
                    dst[oy * ow + ox] = best;
                    am[oy * ow + ox] = best_i;
                }
            }
        }
    });
    return y;
}

namespace detail {

// index/weight tables for one axis of the 2x bilinear resample,
// half-pixel-centre convention (aligned corners off)
template <typename T>
void upsample2x_axis(int in, std::vector<int>& i0, std::vector<int>& i1, std::vector<T>& w1) {
    const int out = 2 * in;
    i0.resize(out);
    i1.resize(out);
    w1.resize(out);
    for (int i = 0; i < out; ++i) {
        const double s = 0.5 * i - 0.25;
        if (s <= 0) {
            i0[i] = i1[i] = 0;
            w1[i] = T(0);
        } else {
            const int f = static_cast<int>(s);
            i0[i] = f;
            i1[i] = std::min(f + 1, in - 1);
            w1[i] = static_cast<T>(s - f);
        }
    }
}

}  // namespace detail

template <typename T>
Tensor4<T> upsample_bilinear2x(const Tensor4<T>& x) {
    const Shape4 xs = x.shape();
    const int oh = 2 * xs.h, ow = 2 * xs.w;

    std::vector<int> y0, y1, x0, x1;
    std::vector<T> wy, wx;
    detail::upsample2x_axis<T>(xs.h, y0, y1, wy);
    detail::upsample2x_axis<T>(xs.w, x0, x1, wx);

    Tensor4<T> y = Tensor4<T>::op_result(
        {xs.n, xs.c, oh, ow}, {x},
        [y0, y1, x0, x1, wy, wx](typename Tensor4<T>::Node& self) {
            auto& xn = *self.parents[0];
            if (!xn.requires_grad) return;
            T* dx = grad_of<T>(xn).data();
            const T* dy = self.grad.data();
            const int ih = xn.shape.h, iw = xn.shape.w;
            const int oh = self.shape.h, ow = self.shape.w;
            const int64_t planes = static_cast<int64_t>(xn.shape.n) * xn.shape.c;
            parallel_for(planes, [&](int64_t pb, int64_t pe) {
                for (int64_t p = pb; p < pe; ++p) {
                    const T* dyp = dy + p * oh * ow;
                    T* dxp = dx + p * static_cast<int64_t>(ih) * iw;
                    for (int oy = 0; oy < oh; ++oy) {
                        const T wy1 = wy[oy], wy0 = T(1) - wy1;
                        for (int ox = 0; ox < ow; ++ox) {
                            const T g = dyp[oy * ow + ox];
                            const T wx1 = wx[ox], wx0 = T(1) - wx1;
                            dxp[y0[oy] * iw + x0[ox]] += g * wy0 * wx0;
                            dxp[y0[oy] * iw + x1[ox]] += g * wy0 * wx1;
                            dxp[y1[oy] * iw + x0[ox]] += g * wy1 * wx0;
                            dxp[y1[oy] * iw + x1[ox]] += g * wy1 * wx1;
                        }
                    }
                }
            });
        });

    const T* xp = x.ptr();
    T* yp = y.ptr();
    const int64_t planes = static_cast<int64_t>(xs.n) * xs.c;
    parallel_for(planes, [&](int64_t pb, int64_t pe) {
        for (int64_t p = pb; p < pe; ++p) {
            const T* src = xp + p * static_cast<int64_t>(xs.h) * xs.w;
            T* dst = yp + p * static_cast<int64_t>(oh) * ow;
            for (int oy = 0; oy < oh; ++oy) {
                const T wy1 = wy[oy], wy0 = T(1) - wy1;
                const T* r0 = src + y0[oy] * xs.w;
                const T* r1 = src + y1[oy] * xs.w;
                for (int ox = 0; ox < ow; ++ox) {
                    const T wx1 = wx[ox], wx0 = T(1) - wx1;
                    dst[oy * ow + ox] = wy0 * (wx0 * r0[x0[ox]] + wx1 * r0[x1[ox]]) +
                                        wy1 * (wx0 * r1[x0[ox]] + wx1 * r1[x1[ox]]);
                }
            }
        }
    });
    return y;
}

// Stacks b's channels after a's. Spatial and batch dims must agree.
template <typename T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
    const Shape4 as = a.shape(), bs = b.shape();
    if (as.n != bs.n || as.h != bs.h || as.w != bs.w)
        throw ShapeError("concat_channels: mismatched dims " + as.str() + " vs " + bs.str());

    const int64_t plane = static_cast<int64_t>(as.h) * as.w;
    Tensor4<T> y = Tensor4<T>::op_result(
        {as.n, as.c + bs.c, as.h, as.w}, {a, b}, [plane](typename Tensor4<T>::Node& self) {
            auto& an = *self.parents[0];
            auto& bn = *self.parents[1];
            const int ca = an.shape.c, cb = bn.shape.c;
            const T* dy = self.grad.data();
            for (int n = 0; n < self.shape.n; ++n) {
                const T* src = dy + static_cast<int64_t>(n) * (ca + cb) * plane;
                if (an.requires_grad) {
                    T* da = grad_of<T>(an).data() + static_cast<int64_t>(n) * ca * plane;
                    for (int64_t i = 0; i < ca * plane; ++i) da[i] += src[i];
                }
                if (bn.requires_grad) {
                    T* db = grad_of<T>(bn).data() + static_cast<int64_t>(n) * cb * plane;
                    const T* sb = src + ca * plane;
                    for (int64_t i = 0; i < cb * plane; ++i) db[i] += sb[i];
                }
            }
        });

    T* yp = y.ptr();
    for (int n = 0; n < as.n; ++n) {
        std::memcpy(yp + static_cast<int64_t>(n) * (as.c + bs.c) * plane,
                    a.ptr() + static_cast<int64_t>(n) * as.c * plane, sizeof(T) * as.c * plane);
        std::memcpy(yp + static_cast<int64_t>(n) * (as.c + bs.c) * plane + as.c * plane,
                    b.ptr() + static_cast<int64_t>(n) * bs.c * plane, sizeof(T) * bs.c * plane);
    }
    return y;
}

// Channel range [c0, c1) as a copy.
template <typename T>
Tensor4<T> slice_channels(const Tensor4<T>& x, int c0, int c1) {
    const Shape4 xs = x.shape();
    if (c0 < 0 || c1 > xs.c || c0 >= c1)
        throw ShapeError("slice_channels: bad range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") for " + xs.str());
    const int64_t plane = static_cast<int64_t>(xs.h) * xs.w;
    const int cs = c1 - c0;
    Tensor4<T> y = Tensor4<T>::op_result(
        {xs.n, cs, xs.h, xs.w}, {x}, [c0, cs, plane](typename Tensor4<T>::Node& self) {
            auto& xn = *self.parents[0];
            if (!xn.requires_grad) return;
            T* dx = grad_of<T>(xn).data();
            const T* dy = self.grad.data();
            for (int n = 0; n < self.shape.n; ++n) {
                T* dst = dx + (static_cast<int64_t>(n) * xn.shape.c + c0) * plane;
                const T* src = dy + static_cast<int64_t>(n) * cs * plane;
                for (int64_t i = 0; i < cs * plane; ++i) dst[i] += src[i];
            }
        });
    T* yp = y.ptr();
    for (int n = 0; n < xs.n; ++n)
        std::memcpy(yp + static_cast<int64_t>(n) * cs * plane,
                    x.ptr() + (static_cast<int64_t>(n) * xs.c + c0) * plane,
                    sizeof(T) * cs * plane);
    return y;
}

template <typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
    if (!(a.shape() == b.shape()))
        throw ShapeError("add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    Tensor4<T> y = Tensor4<T>::op_result(a.shape(), {a, b}, [](typename Tensor4<T>::Node& self) {
        const T* dy = self.grad.data();
        const int64_t n = self.shape.numel();
        for (auto& pn : self.parents) {
            if (!pn->requires_grad) continue;
            T* dp = grad_of<T>(*pn).data();
            for (int64_t i = 0; i < n; ++i) dp[i] += dy[i];
        }
    });
    const T* ap = a.ptr();
    const T* bp = b.ptr();
    T* yp = y.ptr();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) yp[i] = ap[i] + bp[i];
    return y;
}

template <typename T>
Tensor4<T> sum_all(const Tensor4<T>& x) {
    Tensor4<T> y = Tensor4<T>::op_result({1, 1, 1, 1}, {x}, [](typename Tensor4<T>::Node& self) {
        auto& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        T* dx = grad_of<T>(xn).data();
        const T g = self.grad[0];
        const int64_t n = xn.shape.numel();
        for (int64_t i = 0; i < n; ++i) dx[i] += g;
    });
    y.ptr()[0] = detail::sum(x.numel(), x.ptr());
    return y;
}

// Mean of -log softmax(logits)[label] over pixels whose label is 0 or 1;
// pixels equal to ignore_label drop out of both the mean and the gradient.
// Two-class logits only.
template <typename T>
Tensor4<T> softmax_cross_entropy(const Tensor4<T>& logits, const LabelMap& target,
                                 std::optional<uint8_t> ignore_label = std::nullopt) {
    const Shape4 ls = logits.shape();
    if (ls.c != 2)
        throw ShapeError("softmax_cross_entropy: expected 2 logit channels, got " +
                         std::to_string(ls.c));
    if (ls.n != target.n || ls.h != target.h || ls.w != target.w)
        throw ShapeError("softmax_cross_entropy: logits " + ls.str() + " do not match target (" +
                         std::to_string(target.n) + "," + std::to_string(target.h) + "," +
                         std::to_string(target.w) + ")");
    for (const uint8_t t : target.v) {
        if (t == 0 || t == 1) continue;
        if (ignore_label && t == *ignore_label) continue;
        throw ShapeError("softmax_cross_entropy: target value " + std::to_string(int(t)) +
                         " outside {0,1" + (ignore_label ? ",ignore}" : "}"));
    }

    const int64_t plane = static_cast<int64_t>(ls.h) * ls.w;
    const T* lp = logits.ptr();

    int64_t count = 0;
    double loss = 0;  // accumulate at double for a stable mean
    for (int n = 0; n < ls.n; ++n) {
        const T* l0 = lp + static_cast<int64_t>(n) * 2 * plane;
        const T* l1 = l0 + plane;
        const uint8_t* tp = target.v.data() + static_cast<int64_t>(n) * plane;
        for (int64_t i = 0; i < plane; ++i) {
            if (ignore_label && tp[i] == *ignore_label) continue;
            const T m = std::max(l0[i], l1[i]);
            const T lse = m + std::log(std::exp(l0[i] - m) + std::exp(l1[i] - m));
            loss += static_cast<double>(lse - (tp[i] == 1 ? l1[i] : l0[i]));
            ++count;
        }
    }

    auto tshared = std::make_shared<LabelMap>(target);
    Tensor4<T> y = Tensor4<T>::op_result(
        {1, 1, 1, 1}, {logits},
        [tshared, ignore_label, plane, count](typename Tensor4<T>::Node& self) {
            auto& ln = *self.parents[0];
            if (!ln.requires_grad || count == 0) return;
            T* dl = grad_of<T>(ln).data();
            const T* lp = ln.data.data();
            const T g = self.grad[0] / static_cast<T>(count);
            for (int n = 0; n < ln.shape.n; ++n) {
                const T* l0 = lp + static_cast<int64_t>(n) * 2 * plane;
                const T* l1 = l0 + plane;
                T* d0 = dl + static_cast<int64_t>(n) * 2 * plane;
                T* d1 = d0 + plane;
                const uint8_t* tp = tshared->v.data() + static_cast<int64_t>(n) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    if (ignore_label && tp[i] == *ignore_label) continue;
                    const T m = std::max(l0[i], l1[i]);
                    const T e0 = std::exp(l0[i] - m), e1 = std::exp(l1[i] - m);
                    const T p1 = e1 / (e0 + e1);
                    d0[i] += g * ((T(1) - p1) - (tp[i] == 1 ? T(0) : T(1)));
                    d1[i] += g * (p1 - (tp[i] == 1 ? T(1) : T(0)));
                }
            }
        });
    y.ptr()[0] = count > 0 ? static_cast<T>(loss / count) : T(0);
    return y;
}

}  // namespace mcseg
