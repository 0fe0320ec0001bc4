#pragma once

// Region similarity (IoU), boundary F-measure with disc-dilation matching,
// and the frame -> sequence -> seed -> condition aggregation ladder with its
// CSV rendering.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "mcseg/image.hpp"

namespace mcseg {

// |m intersect g| / |m union g|; two empty masks agree perfectly
inline double iou(const Mask& m, const Mask& g) {
    if (m.h != g.h || m.w != g.w) throw ShapeError("iou: mask shapes differ");
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < m.v.size(); ++i) {
        const bool a = m.v[i] != 0, b = g.v[i] != 0;
        inter += (a && b);
        uni += (a || b);
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Foreground pixels with at least one background 4-neighbor; pixels on the
// image border count the outside as background.
inline Mask boundary_mask(const Mask& m) {
    Mask b = Mask::zeros(m.h, m.w);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            if (!m.at(y, x)) continue;
            const bool edge = y == 0 || y == m.h - 1 || x == 0 || x == m.w - 1;
            if (edge || !m.at(y - 1, x) || !m.at(y + 1, x) || !m.at(y, x - 1) ||
                !m.at(y, x + 1))
                b.at(y, x) = 1;
        }
    return b;
}

inline int default_boundary_tolerance(int h, int w) {
    return static_cast<int>(std::ceil(0.0075 * std::sqrt(static_cast<double>(h) * h +
                                                         static_cast<double>(w) * w)));
}

namespace detail {

// set of pixels within a disc of radius tol around any set pixel
inline Mask dilate_disc(const Mask& m, int tol) {
    Mask out = Mask::zeros(m.h, m.w);
    if (tol <= 0) {
        out.v = m.v;
        return out;
    }
    std::vector<std::pair<int, int>> offsets;
    for (int dy = -tol; dy <= tol; ++dy)
        for (int dx = -tol; dx <= tol; ++dx)
            if (dy * dy + dx * dx <= tol * tol) offsets.emplace_back(dy, dx);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            if (!m.at(y, x)) continue;
            for (const auto& [dy, dx] : offsets) {
                const int yy = y + dy, xx = x + dx;
                if (yy >= 0 && yy < m.h && xx >= 0 && xx < m.w) out.at(yy, xx) = 1;
            }
        }
    return out;
}

}  // namespace detail

// 2PR/(P+R) over boundary pixels matched within tolerance by disc dilation.
// Both boundaries empty -> 1; exactly one empty -> 0.
inline double boundary_f(const Mask& m, const Mask& g,
                         std::optional<int> tolerance_px = std::nullopt) {
    if (m.h != g.h || m.w != g.w) throw ShapeError("boundary_f: mask shapes differ");
    const int tol = tolerance_px ? *tolerance_px : default_boundary_tolerance(m.h, m.w);
    const Mask mb = boundary_mask(m);
    const Mask gb = boundary_mask(g);
    int64_t mb_n = 0, gb_n = 0;
    for (uint8_t v : mb.v) mb_n += v;
    for (uint8_t v : gb.v) gb_n += v;
    if (mb_n == 0 && gb_n == 0) return 1.0;
    if (mb_n == 0 || gb_n == 0) return 0.0;

    const Mask gd = detail::dilate_disc(gb, tol);
    const Mask md = detail::dilate_disc(mb, tol);
    int64_t m_hit = 0, g_hit = 0;
    for (size_t i = 0; i < mb.v.size(); ++i) {
        m_hit += (mb.v[i] && gd.v[i]);
        g_hit += (gb.v[i] && md.v[i]);
    }
    const double precision = static_cast<double>(m_hit) / static_cast<double>(mb_n);
    const double recall = static_cast<double>(g_hit) / static_cast<double>(gb_n);
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

struct EvalRow {
    std::string condition;
    std::string variant;
    std::optional<uint64_t> seed;  // nullopt renders as "all" in aggregates
    std::optional<int> fold;
    std::string sequence;  // "mean" in seed/condition aggregates
    std::string frame;     // frame id, or "mean" in aggregates
    double f = 0.0;
    double iou = 0.0;
};

// Frame rows plus the three aggregate levels. Means are unweighted at every
// level: frames within a sequence, sequences within a seed, seeds within a
// condition.
struct EvalReport {
    std::vector<EvalRow> frames;
    std::vector<EvalRow> sequences;
    std::vector<EvalRow> seeds;
    std::vector<EvalRow> conditions;
};

inline EvalReport aggregate(const std::vector<EvalRow>& rows) {
    if (rows.empty()) throw ConfigError("aggregate: no rows");
    EvalReport rep;
    rep.frames = rows;

    struct Acc {
        double f = 0, iou = 0;
        int64_t n = 0;
        void add(double fv, double iv) {
            f += fv;
            iou += iv;
            ++n;
        }
    };

    using SeqKey = std::tuple<std::string, std::string, uint64_t, int, std::string>;
    std::map<SeqKey, Acc> per_seq;
    for (const auto& r : rows) {
        per_seq[{r.condition, r.variant, r.seed.value_or(0), r.fold.value_or(0), r.sequence}].add(
            r.f, r.iou);
    }
    using SeedKey = std::tuple<std::string, std::string, uint64_t>;
    std::map<SeedKey, Acc> per_seed;
    for (const auto& [k, a] : per_seq) {
        EvalRow r;
        r.condition = std::get<0>(k);
        r.variant = std::get<1>(k);
        r.seed = std::get<2>(k);
        r.fold = std::get<3>(k);
        r.sequence = std::get<4>(k);
        r.frame = "mean";
        r.f = a.f / a.n;
        r.iou = a.iou / a.n;
        rep.sequences.push_back(r);
        per_seed[{r.condition, r.variant, *r.seed}].add(r.f, r.iou);
    }
    std::map<std::pair<std::string, std::string>, Acc> per_cond;
    for (const auto& [k, a] : per_seed) {
        EvalRow r;
        r.condition = std::get<0>(k);
        r.variant = std::get<1>(k);
        r.seed = std::get<2>(k);
        r.sequence = "mean";
        r.frame = "mean";
        r.f = a.f / a.n;
        r.iou = a.iou / a.n;
        rep.seeds.push_back(r);
        per_cond[{r.condition, r.variant}].add(r.f, r.iou);
    }
    for (const auto& [k, a] : per_cond) {
        EvalRow r;
        r.condition = k.first;
        r.variant = k.second;
        r.sequence = "mean";
        r.frame = "mean";
        r.f = a.f / a.n;
        r.iou = a.iou / a.n;
        rep.conditions.push_back(r);
    }
    return rep;
}

namespace detail {

inline void append_csv_row(std::string& out, const EvalRow& r) {
    char buf[64];
    out += r.condition;
    out += ',';
    out += r.variant;
    out += ',';
    out += r.seed ? std::to_string(*r.seed) : std::string("all");
    out += ',';
    out += r.fold ? std::to_string(*r.fold) : std::string("all");
    out += ',';
    out += r.sequence;
    out += ',';
    out += r.frame;
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f\n", r.f, r.iou);
    out += buf;
}

}  // namespace detail

inline std::string eval_csv_string(const EvalReport& rep) {
    std::string out = "condition,variant,seed,fold,sequence,frame,F,IoU\n";
    for (const auto& r : rep.frames) detail::append_csv_row(out, r);
    for (const auto& r : rep.sequences) detail::append_csv_row(out, r);
    for (const auto& r : rep.seeds) detail::append_csv_row(out, r);
    for (const auto& r : rep.conditions) detail::append_csv_row(out, r);
    return out;
}

inline void write_eval_csv(const std::string& path, const EvalReport& rep) {
    detail::FileHandle fh(path, "wb");
    if (!fh.f) throw IoError("cannot open " + path + " for writing");
    const std::string s = eval_csv_string(rep);
    if (std::fwrite(s.data(), 1, s.size(), fh.f) != s.size())
        throw IoError(path + ": short write");
}

}  // namespace mcseg
