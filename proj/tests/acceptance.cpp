// Acceptance gate: every release-blocking claim, one pass/fail line each.
// Tolerances are pinned here, not configurable. Exit 0 iff all pass.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mcseg/config.hpp"
#include "mcseg/harness.hpp"
#include "gradcheck.hpp"

using namespace mcseg;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void report(int num, const std::string& name, bool ok, const std::string& detail) {
    std::printf("[%s] criterion %d: %s (%s)\n", ok ? "PASS" : "FAIL", num, name.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

fs::path work_dir(const std::string& name) {
    auto d = fs::temp_directory_path() / "mcseg_acceptance" / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::vector<uint8_t> file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f.good()) throw IoError("acceptance: cannot read " + p.string());
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(f),
                                std::istreambuf_iterator<char>());
}

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

// ------------------------------------------------------------ criterion 1 --
// every differentiable op: finite-difference rel error <= 1e-3 on >= 20
// random small shapes each, total under 2 minutes

constexpr double kGradTol = 1e-3;
constexpr int kShapesPerOp = 20;

struct OpWorst {
    std::string op;
    double err = 0;
    int64_t checked = 0;
};

template <typename Fn>
void check_op(const std::string& op, OpWorst& worst, Fn&& one_shape) {
    for (int rep = 0; rep < kShapesPerOp; ++rep) {
        Rng rng(mix_seed(0xacce97u, static_cast<uint64_t>(rep) * 131 + std::hash<std::string>{}(op)));
        const gradcheck::Report r = one_shape(rng, rep);
        worst.checked += r.checked;
        if (r.max_err > worst.err) {
            worst.err = r.max_err;
            worst.op = op;
        }
    }
}

OpWorst run_gradchecks() {
    using T = double;
    const T delta = static_cast<T>(1e-4);
    OpWorst worst;

    check_op("conv2d", worst, [&](Rng& rng, int rep) {
        const int k = (rep % 2) ? 3 : 1;
        const int stride = 1 + static_cast<int>(rng.below(2));
        const int pad = (k == 3) ? static_cast<int>(rng.below(2)) : 0;
        const int h = k + static_cast<int>(rng.below(4));
        const int w = k + static_cast<int>(rng.below(4));
        const Shape4 xs{1 + static_cast<int>(rng.below(2)), 1 + static_cast<int>(rng.below(3)),
                        h, w};
        const Shape4 ws{1 + static_cast<int>(rng.below(3)), xs.c, k, k};
        std::vector<Tensor4<T>> in{gradcheck::random_tensor<T>(xs, rng),
                                   gradcheck::random_tensor<T>(ws, rng)};
        const bool bias = rep % 3 != 0;
        if (bias) in.push_back(gradcheck::random_tensor<T>({1, ws.n, 1, 1}, rng));
        auto rep_ = gradcheck::run<T>(
            in,
            [&](std::vector<Tensor4<T>>& v) {
                return bias ? conv2d(v[0], v[1], v[2], stride, pad)
                            : conv2d(v[0], v[1], stride, pad);
            },
            delta, rng.below(1u << 30));
        return rep_;
    });

    check_op("batchnorm2d", worst, [&](Rng& rng, int) {
        const int c = 1 + static_cast<int>(rng.below(3));
        const Shape4 xs{2 + static_cast<int>(rng.below(2)), c, 1 + static_cast<int>(rng.below(4)),
                        1 + static_cast<int>(rng.below(4))};
        std::vector<Tensor4<T>> in{gradcheck::random_tensor<T>(xs, rng),
                                   gradcheck::random_tensor<T>({1, c, 1, 1}, rng),
                                   gradcheck::random_tensor<T>({1, c, 1, 1}, rng)};
        auto rm0 = gradcheck::random_tensor<T>({1, c, 1, 1}, rng);
        auto rv0 = Tensor4<T>::zeros({1, c, 1, 1});
        for (int i = 0; i < c; ++i) rv0.ptr()[i] = static_cast<T>(0.5 + rng.uniform());
        auto rep_ = gradcheck::run<T>(
            in,
            [&](std::vector<Tensor4<T>>& v) {
                auto rm = rm0.detach(), rv = rv0.detach();  // keep probes stateless
                return batchnorm2d(v[0], v[1], v[2], rm, rv, BnMode::train);
            },
            delta, rng.below(1u << 30));
        return rep_;
    });

    check_op("relu", worst, [&](Rng& rng, int) {
        const Shape4 s{1 + static_cast<int>(rng.below(2)), 1 + static_cast<int>(rng.below(3)),
                       1 + static_cast<int>(rng.below(6)), 1 + static_cast<int>(rng.below(6))};
        std::vector<Tensor4<T>> in{gradcheck::random_tensor<T>(s, rng)};
        gradcheck::avoid_zero(in[0]);
        auto rep_ = gradcheck::run<T>(
            in, [](std::vector<Tensor4<T>>& v) { return relu(v[0]); }, delta,
            rng.below(1u << 30));
        return rep_;
    });

    check_op("maxpool2d", worst, [&](Rng& rng, int rep) {
        const int k = (rep % 2) ? 3 : 2;
        const int stride = 1 + static_cast<int>(rng.below(2));
        const Shape4 s{1 + static_cast<int>(rng.below(2)), 1 + static_cast<int>(rng.below(2)),
                       k + static_cast<int>(rng.below(4)), k + static_cast<int>(rng.below(4))};
        std::vector<Tensor4<T>> in{gradcheck::distinct_tensor<T>(s, rng)};
        auto rep_ = gradcheck::run<T>(
            in, [&](std::vector<Tensor4<T>>& v) { return maxpool2d(v[0], k, stride, 0); }, delta,
            rng.below(1u << 30));
        return rep_;
    });

    check_op("upsample_bilinear2x", worst, [&](Rng& rng, int) {
        const Shape4 s{1 + static_cast<int>(rng.below(2)), 1 + static_cast<int>(rng.below(3)),
                       1 + static_cast<int>(rng.below(5)), 1 + static_cast<int>(rng.below(5))};
        std::vector<Tensor4<T>> in{gradcheck::random_tensor<T>(s, rng)};
        auto rep_ = gradcheck::run<T>(
            in, [](std::vector<Tensor4<T>>& v) { return upsample_bilinear2x(v[0]); }, delta,
            rng.below(1u << 30));
        return rep_;
    });

    check_op("concat_channels", worst, [&](Rng& rng, int) {
        const int n = 1 + static_cast<int>(rng.below(2));
        const int h = 1 + static_cast<int>(rng.below(4));
        const int w = 1 + static_cast<int>(rng.below(4));
        std::vector<Tensor4<T>> in{
            gradcheck::random_tensor<T>({n, 1 + static_cast<int>(rng.below(3)), h, w}, rng),
            gradcheck::random_tensor<T>({n, 1 + static_cast<int>(rng.below(3)), h, w}, rng)};
        auto rep_ = gradcheck::run<T>(
            in, [](std::vector<Tensor4<T>>& v) { return concat_channels(v[0], v[1]); }, delta,
            rng.below(1u << 30));
        return rep_;
    });

    check_op("slice_channels", worst, [&](Rng& rng, int) {
        const int c = 2 + static_cast<int>(rng.below(3));
        const int from = static_cast<int>(rng.below(static_cast<uint64_t>(c)));
        const int to = from + 1 + static_cast<int>(rng.below(static_cast<uint64_t>(c - from)));
        const Shape4 s{1 + static_cast<int>(rng.below(2)), c, 1 + static_cast<int>(rng.below(4)),
                       1 + static_cast<int>(rng.below(4))};
        std::vector<Tensor4<T>> in{gradcheck::random_tensor<T>(s, rng)};
        auto rep_ = gradcheck::run<T>(
            in, [&](std::vector<Tensor4<T>>& v) { return slice_channels(v[0], from, to); }, delta,
            rng.below(1u << 30));
        return rep_;
    });

    check_op("add", worst, [&](Rng& rng, int) {
        const Shape4 s{1 + static_cast<int>(rng.below(2)), 1 + static_cast<int>(rng.below(3)),
                       1 + static_cast<int>(rng.below(5)), 1 + static_cast<int>(rng.below(5))};
        std::vector<Tensor4<T>> in{gradcheck::random_tensor<T>(s, rng),
                                   gradcheck::random_tensor<T>(s, rng)};
        auto rep_ = gradcheck::run<T>(
            in, [](std::vector<Tensor4<T>>& v) { return add(v[0], v[1]); }, delta,
            rng.below(1u << 30));
        return rep_;
    });

    check_op("sum_all", worst, [&](Rng& rng, int) {
        const Shape4 s{1 + static_cast<int>(rng.below(2)), 1 + static_cast<int>(rng.below(3)),
                       1 + static_cast<int>(rng.below(5)), 1 + static_cast<int>(rng.below(5))};
        std::vector<Tensor4<T>> in{gradcheck::random_tensor<T>(s, rng)};
        auto rep_ = gradcheck::run<T>(
            in, [](std::vector<Tensor4<T>>& v) { return sum_all(v[0]); }, delta,
            rng.below(1u << 30));
        return rep_;
    });

    check_op("softmax_cross_entropy", worst, [&](Rng& rng, int rep) {
        const int n = 1 + static_cast<int>(rng.below(2));
        const int h = 1 + static_cast<int>(rng.below(4));
        const int w = 1 + static_cast<int>(rng.below(4));
        std::vector<Tensor4<T>> in{gradcheck::random_tensor<T>({n, 2, h, w}, rng)};
        LabelMap labels;
        labels.n = n;
        labels.h = h;
        labels.w = w;
        labels.v.resize(static_cast<size_t>(n) * h * w);
        const bool with_ignore = rep % 2 == 0;
        for (auto& l : labels.v)
            l = static_cast<uint8_t>(with_ignore ? rng.below(3) : rng.below(2));  // 2 = ignored
        bool any_counted = false;
        for (auto l : labels.v) any_counted |= l < 2;
        if (!any_counted) labels.v[0] = 1;
        auto rep_ = gradcheck::run<T>(
            in,
            [&](std::vector<Tensor4<T>>& v) {
                return softmax_cross_entropy(
                    v[0], labels,
                    with_ignore ? std::optional<uint8_t>(uint8_t{2}) : std::nullopt);
            },
            delta, rng.below(1u << 30));
        return rep_;
    });

    return worst;
}

// ------------------------------------------------------------ criterion 2 --
// brute-force metric oracles, independent of metrics.hpp

double iou_oracle(const Mask& m, const Mask& g) {
    std::set<std::pair<int, int>> ms, gs, uni, inter;
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            if (m.at(y, x)) ms.insert({y, x});
            if (g.at(y, x)) gs.insert({y, x});
        }
    for (const auto& p : ms) {
        uni.insert(p);
        if (gs.count(p)) inter.insert(p);
    }
    for (const auto& p : gs) uni.insert(p);
    if (uni.empty()) return 1.0;
    return static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

std::vector<std::pair<int, int>> boundary_oracle(const Mask& m) {
    std::vector<std::pair<int, int>> b;
    auto bg = [&](int y, int x) {
        return y < 0 || y >= m.h || x < 0 || x >= m.w || m.at(y, x) == 0;
    };
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x)
            if (m.at(y, x) && (bg(y - 1, x) || bg(y + 1, x) || bg(y, x - 1) || bg(y, x + 1)))
                b.emplace_back(y, x);
    return b;
}

double boundary_f_oracle(const Mask& m, const Mask& g, int tol) {
    const auto mb = boundary_oracle(m);
    const auto gb = boundary_oracle(g);
    if (mb.empty() && gb.empty()) return 1.0;
    if (mb.empty() || gb.empty()) return 0.0;
    auto matched = [&](const auto& from, const auto& to) {
        int hits = 0;
        for (const auto& [y, x] : from)
            for (const auto& [yy, xx] : to)
                if ((y - yy) * (y - yy) + (x - xx) * (x - xx) <= tol * tol) {
                    ++hits;
                    break;
                }
        return static_cast<double>(hits) / static_cast<double>(from.size());
    };
    const double p = matched(mb, gb), r = matched(gb, mb);
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

Mask square_mask(int h, int w, int y0, int x0, int side) {
    Mask m = Mask::zeros(h, w);
    for (int y = y0; y < y0 + side; ++y)
        for (int x = x0; x < x0 + side; ++x) m.at(y, x) = 1;
    return m;
}

bool run_metric_oracles(std::string& detail) {
    Rng rng(0x0acce702u);
    const int tol = default_boundary_tolerance(16, 16);
    double worst_bf = 0;
    for (int rep = 0; rep < 500; ++rep) {
        Mask m = Mask::zeros(16, 16), g = Mask::zeros(16, 16);
        const double dm = rng.uniform(), dg = rng.uniform();
        for (auto& v : m.v) v = rng.uniform() < dm ? 1 : 0;
        for (auto& v : g.v) v = rng.uniform() < dg ? 1 : 0;
        if (iou(m, g) != iou_oracle(m, g)) {
            detail = "iou mismatch at rep " + std::to_string(rep);
            return false;
        }
        const double diff = std::abs(boundary_f(m, g, tol) - boundary_f_oracle(m, g, tol));
        worst_bf = std::max(worst_bf, diff);
        if (diff > 1e-12) {
            detail = "boundary_f off by " + fmt("%.3e", diff) + " at rep " + std::to_string(rep);
            return false;
        }
    }

    // pinned examples
    Mask cross_m = Mask::zeros(4, 4), cross_g = Mask::zeros(4, 4);
    cross_m.at(1, 1) = cross_m.at(1, 2) = 1;
    cross_g.at(1, 2) = cross_g.at(2, 2) = cross_g.at(3, 3) = 1;
    const bool iou_pins = iou(cross_m, cross_g) == 0.25 &&
                          iou(Mask::zeros(5, 5), Mask::zeros(5, 5)) == 1.0 &&
                          iou(Mask::zeros(5, 5), square_mask(5, 5, 1, 1, 2)) == 0.0;
    const auto sq = square_mask(32, 32, 8, 8, 10);
    const bool bf_pins = boundary_f(sq, sq) == 1.0 &&
                         boundary_f(sq, square_mask(32, 32, 8, 9, 10), 2) == 1.0 &&
                         boundary_f(Mask::zeros(16, 16), square_mask(16, 16, 4, 4, 6)) == 0.0;
    if (!iou_pins || !bf_pins) {
        detail = "pinned example mismatch";
        return false;
    }
    detail = "500 pairs, iou exact, boundary_f worst diff " + fmt("%.2e", worst_bf) +
             ", 6 pinned examples";
    return true;
}

// --------------------------------------------------------- criteria 3 + 4 --

Image sinusoid(int size, int shift_x) {
    Image im = Image::zeros(1, size, size);
    const double k = 2.0 * 3.14159265358979323846 / 8.0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const int xs = ((x - shift_x) % size + size) % size;
            im.at(0, y, x) =
                static_cast<float>(0.5 + 0.25 * std::sin(k * xs) + 0.25 * std::sin(k * y));
        }
    return im;
}

}  // namespace

int main() {
    std::printf("mcseg acceptance gate\n");

    // 1 -- gradient correctness
    {
        const auto t0 = std::chrono::steady_clock::now();
        const OpWorst worst = run_gradchecks();
        const double elapsed = seconds_since(t0);
        report(1, "gradcheck all differentiable ops",
               worst.err <= kGradTol && worst.checked > 0 && elapsed < 120.0,
               "10 ops x 20 shapes, " + std::to_string(worst.checked) +
                   " elements, worst rel err " + fmt("%.2e", worst.err) + " (" + worst.op +
                   "), tol 1e-3, " + fmt("%.2f", elapsed) + "s");
    }

    // 2 -- metric oracle equivalence
    {
        std::string detail;
        const bool ok = run_metric_oracles(detail);
        report(2, "metrics match brute-force oracles", ok, detail);
    }

    // 3 -- flow solver correctness
    double epe = 0;
    {
        const Image f0 = sinusoid(64, 0), f1 = sinusoid(64, 1);
        const HornSchunckParams params{1.0, 200, 0.0};
        std::vector<double> residuals;
        const Gradients grads = image_gradients(f0, f1);
        const FlowField flow = horn_schunck(f0, f1, params, [&](int, const FlowField& f) {
            residuals.push_back(flow_residual_mse(grads, f));
        });

        int64_t n = 0;
        for (int y = 8; y < 56; ++y)
            for (int x = 8; x < 56; ++x) {
                const size_t i = static_cast<size_t>(y) * 64 + x;
                epe += std::hypot(flow.u[i] - 1.0, flow.v[i]);
                ++n;
            }
        epe /= static_cast<double>(n);

        const FlowField still = horn_schunck(f0, f0, params);
        bool all_zero = true;
        for (size_t i = 0; i < still.u.size(); ++i)
            all_zero &= still.u[i] == 0.0f && still.v[i] == 0.0f;

        bool monotone = true;
        for (size_t i = 1; i < residuals.size(); ++i)
            monotone &= residuals[i] <= residuals[i - 1] + 1e-12;

        report(3, "horn_schunck recovers a 1 px periodic shift",
               epe < 0.3 && all_zero && monotone,
               "interior mean EPE " + fmt("%.4f", epe) + " < 0.3, zero-motion flow " +
                   (all_zero ? "identically zero" : "NONZERO") + ", residual " +
                   (monotone ? "non-increasing" : "INCREASED") + " over " +
                   std::to_string(residuals.size()) + " checkpoints");
    }

    // 4 -- converged flow explains brightness change better than no flow
    {
        const Image f0 = sinusoid(64, 0), f1 = sinusoid(64, 1);
        const Gradients grads = image_gradients(f0, f1);
        const FlowField flow = horn_schunck(f0, f1, {1.0, 200, 0.0});
        const double with_flow = flow_residual_mean_abs(grads, flow);
        const double no_flow = flow_residual_mean_abs(grads, FlowField::zeros(flow.h, flow.w));
        report(4, "constraint residual beats the zero-flow baseline", with_flow < no_flow,
               "mean |Ix u + Iy v + It| " + fmt("%.4f", with_flow) + " < mean |It| " +
                   fmt("%.4f", no_flow));
    }

    // 5 -- stationary-camera ordering: dual_diff >> single
    {
        const auto t0 = std::chrono::steady_clock::now();
        const auto dir = work_dir("ordering");
        SynthSuiteOptions synth;  // 96x96, moving noise rect + static identical distractor
        synth.clips = 20;
        synth.seed = 1000;
        cmd_synth((dir / "train").string(), synth);
        synth.clips = 5;
        synth.seed = 2000;
        cmd_synth((dir / "test").string(), synth);

        RunConfig c;
        c.width_mult = 0.25;
        c.blocks_per_stage = {1, 1, 1, 1};
        c.batch_size = 8;
        c.epochs = 8;  // pinned under the <= 30 allowed
        c.seeds = {0, 1, 2};
        c.data_root = (dir / "train").string();
        c.output_dir = (dir / "out").string();
        c.resolution_h = 96;
        c.resolution_w = 96;

        auto test_index = scan_davis_layout((dir / "test").string());
        test_index.set_target(96, 96);

        std::ostringstream sink;
        auto mean_iou = [&](Variant v) {
            c.variant = v;
            const auto result = cmd_train(c, sink);
            double sum = 0;
            for (const auto& ckpt : result.checkpoints) {
                auto model = load_weights(ckpt);
                const auto rows = eval_rows(&model, test_index, {}, c, std::nullopt, std::nullopt);
                sum += aggregate(rows).conditions.at(0).iou;
            }
            return sum / static_cast<double>(result.checkpoints.size());
        };
        const double dual = mean_iou(Variant::dual_diff);
        const double single = mean_iou(Variant::single);

        report(5, "dual_diff beats single on stationary clips",
               dual >= 0.7 && dual - single >= 0.15,
               "3-seed mean test IoU: dual_diff " + fmt("%.3f", dual) + " (>= 0.7), single " +
                   fmt("%.3f", single) + ", gap " + fmt("%.3f", dual - single) + " (>= 0.15), " +
                   fmt("%.1f", seconds_since(t0)) + "s");
        fs::remove_all(dir);
    }

    // 6 -- frame differencing is at least 10x cheaper than optical flow
    {
        const auto dir = work_dir("bench");
        SynthSuiteOptions synth;
        synth.clips = 1;
        synth.frames = 4;
        synth.seed = 7;
        cmd_synth((dir / "data").string(), synth);

        BenchOptions opt;  // 854x480, 100 sweeps, single thread
        const auto rows = cmd_bench((dir / "data" / "images" / "clip000").string(), opt);
        const double ratio = rows.at(1).mean_s / rows.at(0).mean_s;
        report(6, "frame_diff at least 10x faster than horn_schunck@480p", ratio > 10.0,
               "diff mean " + fmt("%.6f", rows[0].mean_s) + "s, flow mean " +
                   fmt("%.6f", rows[1].mean_s) + "s, ratio " + fmt("%.0f", ratio) + "x > 10x");
        fs::remove_all(dir);
    }

    // 7 -- determinism and container formats
    {
        const auto dir = work_dir("determinism");
        SynthSuiteOptions synth;
        synth.clips = 3;
        synth.frames = 4;
        synth.canvas_h = 64;
        synth.canvas_w = 64;
        synth.object_size = 10;
        synth.seed = 21;
        cmd_synth((dir / "data").string(), synth);

        RunConfig c;
        c.variant = Variant::dual_diff;
        c.width_mult = 0.125;
        c.blocks_per_stage = {1, 1, 1, 1};
        c.batch_size = 4;
        c.epochs = 2;
        c.seeds = {0};
        c.data_root = (dir / "data").string();
        c.resolution_h = 64;
        c.resolution_w = 64;

        std::ostringstream sink;
        c.output_dir = (dir / "a").string();
        const auto ra = cmd_train(c, sink);
        EvalJob ja{ra.checkpoints[0], (dir / "a" / "eval.csv").string(), 0, std::nullopt, {}};
        cmd_eval(c, ja);
        c.output_dir = (dir / "b").string();
        const auto rb = cmd_train(c, sink);
        EvalJob jb{rb.checkpoints[0], (dir / "b" / "eval.csv").string(), 0, std::nullopt, {}};
        cmd_eval(c, jb);
        const bool repro = file_bytes(ra.checkpoints[0]) == file_bytes(rb.checkpoints[0]) &&
                           file_bytes(dir / "a" / "eval.csv") == file_bytes(dir / "b" / "eval.csv");

        Rng rng(0x0acce707u);
        bool flo_ok = true;
        for (int rep = 0; rep < 1000 && flo_ok; ++rep) {
            FlowField f;
            f.h = 1 + static_cast<int>(rng.below(8));
            f.w = 1 + static_cast<int>(rng.below(8));
            f.u.resize(static_cast<size_t>(f.h) * f.w);
            f.v.resize(f.u.size());
            for (auto& x : f.u) x = static_cast<float>(rng.uniform(-10.0, 10.0));
            for (auto& x : f.v) x = static_cast<float>(rng.uniform(-10.0, 10.0));
            const auto p1 = dir / "r1.flo", p2 = dir / "r2.flo";
            write_flo(f, p1.string());
            write_flo(read_flo(p1.string()), p2.string());
            flo_ok = file_bytes(p1) == file_bytes(p2);
        }

        NetConfig tiny;
        tiny.width_mult = 0.0625;
        tiny.blocks_per_stage = {1, 1, 1, 1};
        tiny.bottleneck_channels = 64;
        bool ckpt_ok = true;
        const Variant variants[3] = {Variant::single, Variant::dual_diff, Variant::dual_flow};
        for (int rep = 0; rep < 1000 && ckpt_ok; ++rep) {
            tiny.variant = variants[rep % 3];
            auto model = Model<float>::build(tiny, static_cast<uint64_t>(rep));
            const auto p1 = dir / "w1.mcsegw", p2 = dir / "w2.mcsegw";
            save_weights(model, p1.string());
            auto loaded = load_weights(p1.string());
            save_weights(loaded, p2.string());
            ckpt_ok = file_bytes(p1) == file_bytes(p2);
        }

        report(7, "bit-exact reruns and container round trips", repro && flo_ok && ckpt_ok,
               std::string("retrain ") + (repro ? "identical" : "DIVERGED") +
                   ", 1000 .flo round trips " + (flo_ok ? "bit-exact" : "BROKEN") +
                   ", 1000 checkpoint round trips " + (ckpt_ok ? "bit-exact" : "BROKEN"));
        fs::remove_all(dir);
    }

    // 8 -- cross-validation protocol shape
    {
        const auto dir = work_dir("protocol");
        SynthSuiteOptions synth;
        synth.clips = 12;
        synth.frames = 4;
        synth.canvas_h = 64;
        synth.canvas_w = 64;
        synth.object_size = 10;
        synth.seed = 3000;
        cmd_synth((dir / "data").string(), synth);

        RunConfig c;
        c.variant = Variant::dual_diff;
        c.width_mult = 0.125;
        c.blocks_per_stage = {1, 1, 1, 1};
        c.batch_size = 8;
        c.epochs = 1;
        c.seeds = {0};
        c.folds = 4;
        c.data_root = (dir / "data").string();
        c.output_dir = (dir / "xval").string();
        c.resolution_h = 64;
        c.resolution_w = 64;

        std::ostringstream sink;
        const auto xv = cmd_xval(c, sink);

        auto csv_sequences = [&](const fs::path& p) {
            std::set<std::string> seqs;
            std::ifstream f(p);
            std::string line;
            std::getline(f, line);  // header
            while (std::getline(f, line)) {
                size_t pos = 0;
                for (int col = 0; col < 4; ++col) pos = line.find(',', pos) + 1;
                const std::string seq = line.substr(pos, line.find(',', pos) - pos);
                if (seq != "mean") seqs.insert(seq);
            }
            return seqs;
        };

        bool folds_ok = xv.fold_csvs.size() == 4 && xv.checkpoints.size() == 4;
        std::set<std::string> pooled;
        for (const auto& p : xv.fold_csvs) {
            const auto seqs = csv_sequences(p);
            folds_ok = folds_ok && seqs.size() == 3;
            for (const auto& s : seqs) folds_ok = folds_ok && pooled.insert(s).second;
        }
        folds_ok = folds_ok && pooled.size() == 12 && csv_sequences(xv.pooled_csv).size() == 12;

        c.output_dir = (dir / "train").string();
        c.seeds = {0, 1, 2, 3, 4};
        const auto tr = cmd_train(c, sink);
        bool seeds_ok = tr.checkpoints.size() == 5;
        for (const auto& p : tr.checkpoints) seeds_ok = seeds_ok && fs::is_regular_file(p);

        report(8, "4-fold xval partition and 5-seed training", folds_ok && seeds_ok,
               std::string("4 folds x 3 test sequences, pooled 12/12, 5 checkpoints ") +
                   (seeds_ok ? "written" : "MISSING"));
        fs::remove_all(dir);
    }

    std::printf("%s: %d/%d criteria\n", g_failures ? "FAILED" : "PASSED", 8 - g_failures, 8);
    return g_failures ? 1 : 0;
}
