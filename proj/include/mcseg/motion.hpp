#pragma once

// Motion cues: per-channel absolute frame differences and Horn-Schunck
// optical flow, with Middlebury .flo serialization and a color-wheel
// rendering so flow can feed a 3-channel encoder stem.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "mcseg/image.hpp"

namespace mcseg {

static_assert(std::endian::native == std::endian::little,
              "flo/checkpoint serialization assumes a little-endian host");

struct FrameSequence {
    std::vector<Image> frames;  // all same h, w
    std::vector<int> indices;   // strictly increasing frame numbers
};

// per-pixel displacement in pixels/frame
struct FlowField {
    int h = 0, w = 0;
    std::vector<float> u, v;

    static FlowField zeros(int h, int w) {
        FlowField f;
        f.h = h;
        f.w = w;
        f.u.assign(static_cast<size_t>(h) * w, 0.f);
        f.v.assign(static_cast<size_t>(h) * w, 0.f);
        return f;
    }
};

struct HornSchunckParams {
    double alpha = 1.0;
    int iterations = 200;
    double early_stop_delta = 1e-4;

    void validate() const {
        if (!(alpha > 0)) throw ConfigError("horn_schunck: alpha must be positive");
        if (iterations < 1) throw ConfigError("horn_schunck: iterations must be >= 1");
        if (early_stop_delta < 0) throw ConfigError("horn_schunck: early_stop_delta must be >= 0");
    }

    bool operator==(const HornSchunckParams&) const = default;
};

// abs(x_t1 - x_t), per channel; symmetric in argument order
inline Image frame_diff(const Image& x_t, const Image& x_t1) {
    if (x_t.c != x_t1.c || x_t.h != x_t1.h || x_t.w != x_t1.w)
        throw ShapeError("frame_diff: frames differ in shape");
    Image d = Image::zeros(x_t.c, x_t.h, x_t.w);
    for (size_t i = 0; i < d.v.size(); ++i) d.v[i] = std::fabs(x_t1.v[i] - x_t.v[i]);
    return d;
}

struct Gradients {
    Image ix, iy, it;  // single-channel grids
};

// Four-point averaged forward differences over the 2x2x2 cube spanned by
// (x,x+1)x(y,y+1)x(t,t+1), with edge replication on the spatial borders.
inline Gradients image_gradients(const Image& g0, const Image& g1) {
    if (g0.c != 1 || g1.c != 1)
        throw ShapeError("image_gradients: expects single-channel inputs");
    if (g0.h != g1.h || g0.w != g1.w)
        throw ShapeError("image_gradients: frames differ in shape");
    const int h = g0.h, w = g0.w;
    Gradients g{Image::zeros(1, h, w), Image::zeros(1, h, w), Image::zeros(1, h, w)};
    auto a = [&](const Image& im, int y, int x) {
        return im.at(0, std::min(y, h - 1), std::min(x, w - 1));
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const float ix = (a(g0, y, x + 1) - a(g0, y, x) + a(g0, y + 1, x + 1) -
                              a(g0, y + 1, x) + a(g1, y, x + 1) - a(g1, y, x) +
                              a(g1, y + 1, x + 1) - a(g1, y + 1, x)) /
                             4.f;
            const float iy = (a(g0, y + 1, x) - a(g0, y, x) + a(g0, y + 1, x + 1) -
                              a(g0, y, x + 1) + a(g1, y + 1, x) - a(g1, y, x) +
                              a(g1, y + 1, x + 1) - a(g1, y, x + 1)) /
                             4.f;
            const float it = (a(g1, y, x) - a(g0, y, x) + a(g1, y, x + 1) - a(g0, y, x + 1) +
                              a(g1, y + 1, x) - a(g0, y + 1, x) + a(g1, y + 1, x + 1) -
                              a(g0, y + 1, x + 1)) /
                             4.f;
            g.ix.at(0, y, x) = ix;
            g.iy.at(0, y, x) = iy;
            g.it.at(0, y, x) = it;
        }
    return g;
}

// mean squared brightness-constancy residual of a flow against gradients
inline double flow_residual_mse(const Gradients& g, const FlowField& f) {
    double s = 0;
    const size_t n = f.u.size();
    for (size_t i = 0; i < n; ++i) {
        const double r = static_cast<double>(g.ix.v[i]) * f.u[i] +
                         static_cast<double>(g.iy.v[i]) * f.v[i] + g.it.v[i];
        s += r * r;
    }
    return n ? s / static_cast<double>(n) : 0.0;
}

inline double flow_residual_mean_abs(const Gradients& g, const FlowField& f) {
    double s = 0;
    const size_t n = f.u.size();
    for (size_t i = 0; i < n; ++i)
        s += std::fabs(static_cast<double>(g.ix.v[i]) * f.u[i] +
                       static_cast<double>(g.iy.v[i]) * f.v[i] + g.it.v[i]);
    return n ? s / static_cast<double>(n) : 0.0;
}

using FlowObserver = std::function<void(int iteration, const FlowField&)>;

// Jacobi iteration u <- ubar - Ix(Ix ubar + Iy vbar + It)/(alpha^2+Ix^2+Iy^2),
// zero-initialized, ubar/vbar the 3x3 neighborhood mean with edge replication.
// The observer fires every 10 sweeps and once more at the final sweep.
inline FlowField horn_schunck(const Image& x_t, const Image& x_t1, const HornSchunckParams& params,
                              const FlowObserver& observer = nullptr) {
    params.validate();
    if (x_t.h != x_t1.h || x_t.w != x_t1.w || x_t.c != x_t1.c)
        throw ShapeError("horn_schunck: frames differ in shape");

    const Image g0 = x_t.c == 1 ? x_t : to_gray(x_t);
    const Image g1 = x_t1.c == 1 ? x_t1 : to_gray(x_t1);
    const Gradients g = image_gradients(g0, g1);
    const int h = g0.h, w = g0.w;
    const float a2 = static_cast<float>(params.alpha * params.alpha);

    FlowField f = FlowField::zeros(h, w);
    std::vector<float> nu(f.u.size()), nv(f.v.size());

    // denominators are loop-invariant
    std::vector<float> denom(f.u.size());
    for (size_t i = 0; i < denom.size(); ++i)
        denom[i] = a2 + g.ix.v[i] * g.ix.v[i] + g.iy.v[i] * g.iy.v[i];

    auto mean3x3 = [&](const std::vector<float>& grid, int y, int x) {
        float s = 0;
        for (int dy = -1; dy <= 1; ++dy) {
            const int yy = std::clamp(y + dy, 0, h - 1);
            for (int dx = -1; dx <= 1; ++dx) {
                const int xx = std::clamp(x + dx, 0, w - 1);
                s += grid[static_cast<size_t>(yy) * w + xx];
            }
        }
        return s / 9.f;
    };

    int iter = 0;
    for (iter = 1; iter <= params.iterations; ++iter) {
        float max_update = 0.f;
        parallel_for(h, [&](int64_t yb, int64_t ye) {
            for (int64_t y = yb; y < ye; ++y)
                for (int x = 0; x < w; ++x) {
                    const size_t i = static_cast<size_t>(y) * w + x;
                    const float ub = mean3x3(f.u, static_cast<int>(y), x);
                    const float vb = mean3x3(f.v, static_cast<int>(y), x);
                    const float t = (g.ix.v[i] * ub + g.iy.v[i] * vb + g.it.v[i]) / denom[i];
                    nu[i] = ub - g.ix.v[i] * t;
                    nv[i] = vb - g.iy.v[i] * t;
                }
        });
        for (size_t i = 0; i < nu.size(); ++i) {
            if (!std::isfinite(nu[i]) || !std::isfinite(nv[i]))
                throw NumericError("horn_schunck: non-finite flow at iteration " +
                                   std::to_string(iter));
            const float du = std::fabs(nu[i] - f.u[i]);
            const float dv = std::fabs(nv[i] - f.v[i]);
            if (du > max_update) max_update = du;
            if (dv > max_update) max_update = dv;
        }
        f.u.swap(nu);
        f.v.swap(nv);
        if (observer && iter % 10 == 0) observer(iter, f);
        if (params.early_stop_delta > 0 && max_update < params.early_stop_delta) break;
    }
    if (observer) {
        const int last = std::min(iter, params.iterations);
        if (last % 10 != 0) observer(last, f);
    }
    return f;
}

// Middlebury-style color wheel: hue from the flow direction, saturation from
// magnitude normalized by the field's 99th-percentile magnitude (nearest
// rank), full value. Zero flow renders white; hue is scale-invariant.
inline Image flow_to_rgb(const FlowField& f) {
    const size_t n = f.u.size();
    std::vector<float> mags(n);
    for (size_t i = 0; i < n; ++i) mags[i] = std::hypot(f.u[i], f.v[i]);
    std::vector<float> sorted = mags;
    std::sort(sorted.begin(), sorted.end());
    float p99 = 0.f;
    if (!sorted.empty()) {
        const size_t rank = static_cast<size_t>(
            std::ceil(0.99 * static_cast<double>(sorted.size())));
        p99 = sorted[rank == 0 ? 0 : rank - 1];
    }

    Image im = Image::zeros(3, f.h, f.w);
    for (int y = 0; y < f.h; ++y)
        for (int x = 0; x < f.w; ++x) {
            const size_t i = static_cast<size_t>(y) * f.w + x;
            const float sat = p99 > 0.f ? std::min(1.f, mags[i] / p99) : 0.f;
            const float hue = std::atan2(f.v[i], f.u[i]);  // [-pi, pi]
            // hsv -> rgb with v=1
            const float hh = (hue < 0 ? hue + 6.2831853f : hue) / 6.2831853f * 6.f;
            const int sector = std::min(5, static_cast<int>(hh));
            const float frac = hh - sector;
            const float p = 1.f - sat;
            const float q = 1.f - sat * frac;
            const float t = 1.f - sat * (1.f - frac);
            float r, gg, b;
            switch (sector) {
                case 0: r = 1; gg = t; b = p; break;
                case 1: r = q; gg = 1; b = p; break;
                case 2: r = p; gg = 1; b = t; break;
                case 3: r = p; gg = q; b = 1; break;
                case 4: r = t; gg = p; b = 1; break;
                default: r = 1; gg = p; b = q; break;
            }
            im.at(0, y, x) = r;
            im.at(1, y, x) = gg;
            im.at(2, y, x) = b;
        }
    return im;
}

// .flo layout: float32 magic 202021.25, int32 width, int32 height, then
// row-major interleaved (u,v) float32 pairs; everything little-endian.
inline constexpr float kFloMagic = 202021.25f;

inline void write_flo(const FlowField& f, const std::string& path) {
    detail::FileHandle fh(path, "wb");
    if (!fh.f) throw IoError("cannot open " + path + " for writing");
    const int32_t w = f.w, h = f.h;
    if (std::fwrite(&kFloMagic, 4, 1, fh.f) != 1 || std::fwrite(&w, 4, 1, fh.f) != 1 ||
        std::fwrite(&h, 4, 1, fh.f) != 1)
        throw IoError(path + ": short write");
    std::vector<float> row(static_cast<size_t>(w) * 2);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            row[static_cast<size_t>(x) * 2] = f.u[static_cast<size_t>(y) * w + x];
            row[static_cast<size_t>(x) * 2 + 1] = f.v[static_cast<size_t>(y) * w + x];
        }
        if (std::fwrite(row.data(), 4, row.size(), fh.f) != row.size())
            throw IoError(path + ": short write");
    }
}

inline FlowField read_flo(const std::string& path) {
    detail::FileHandle fh(path, "rb");
    if (!fh.f) throw IoError("cannot open " + path);
    float magic = 0.f;
    if (std::fread(&magic, 4, 1, fh.f) != 1)
        throw FormatError(path + ": truncated at byte 0");
    if (magic != kFloMagic)
        throw FormatError(path + ": bad magic at byte 0 (expected 202021.25)");
    int32_t w = 0, h = 0;
    if (std::fread(&w, 4, 1, fh.f) != 1) throw FormatError(path + ": truncated at byte 4");
    if (std::fread(&h, 4, 1, fh.f) != 1) throw FormatError(path + ": truncated at byte 8");
    if (w < 1 || h < 1 || w > 1000000 || h > 1000000)
        throw FormatError(path + ": implausible dimensions at byte 4");
    FlowField f = FlowField::zeros(h, w);
    std::vector<float> row(static_cast<size_t>(w) * 2);
    for (int y = 0; y < h; ++y) {
        const size_t got = std::fread(row.data(), 4, row.size(), fh.f);
        if (got != row.size())
            throw FormatError(path + ": truncated at byte " +
                              std::to_string(12 + (static_cast<int64_t>(y) * w * 2 + got) * 4));
        for (int x = 0; x < w; ++x) {
            f.u[static_cast<size_t>(y) * w + x] = row[static_cast<size_t>(x) * 2];
            f.v[static_cast<size_t>(y) * w + x] = row[static_cast<size_t>(x) * 2 + 1];
        }
    }
    return f;
}

}  // namespace mcseg
