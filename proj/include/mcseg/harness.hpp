#pragma once

// Command implementations behind the CLI: dataset synthesis, cue extraction,
// training, inference, evaluation, cross-validation, and the diff-vs-flow
// benchmark. All outputs are deterministic functions of (config, seed);
// nothing here writes timestamps into files.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mcseg/adam.hpp"
#include "mcseg/config.hpp"
#include "mcseg/data.hpp"
#include "mcseg/metrics.hpp"
#include "mcseg/model.hpp"
#include "mcseg/motion.hpp"

namespace mcseg {

inline std::string camera_name(CameraTag tag) {
    switch (tag) {
        case CameraTag::stationary: return "stationary";
        case CameraTag::moving: return "moving";
        default: return "unknown";
    }
}

namespace detail {

inline std::string format_loss(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline std::string frame_name(size_t t, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%05zu%s", t, ext);
    return buf;
}

}  // namespace detail

// ---------------------------------------------------------------- synth ----

struct SynthSuiteOptions {
    int clips = 20;
    int frames = 8;
    int canvas_h = 96, canvas_w = 96;
    int object_size = 16;
    ShapeKind shape = ShapeKind::rect;
    TextureKind texture = TextureKind::noise;
    bool distractor = true;
    double speed_min = 1.0, speed_max = 2.5;  // object px/frame
    double pan = 0.0;                         // background px/frame; 0 = stationary camera
    uint64_t seed = 0;
    std::string prefix = "clip";
};

// writes `clips` deterministic clips under root in the scanned layout
inline std::vector<std::string> cmd_synth(const std::string& root,
                                          const SynthSuiteOptions& opt) {
    if (opt.clips < 1) throw ConfigError("synth: clips must be >= 1");
    std::vector<std::string> names;
    for (int i = 0; i < opt.clips; ++i) {
        Rng rng(mix_seed(opt.seed, static_cast<uint64_t>(i)));
        const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        const double speed = rng.uniform(opt.speed_min, opt.speed_max);

        SynthSpec spec;
        spec.height = opt.canvas_h;
        spec.width = opt.canvas_w;
        spec.shape = opt.shape;
        spec.size = opt.object_size;
        spec.texture = opt.texture;
        spec.vx = speed * std::cos(angle);
        spec.vy = speed * std::sin(angle);
        spec.distractor = opt.distractor;
        if (opt.pan != 0.0) {
            const double pa = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
            spec.pan_x = opt.pan * std::cos(pa);
            spec.pan_y = opt.pan * std::sin(pa);
        }
        spec.frames = opt.frames;
        spec.seed = mix_seed(opt.seed, 0x10000u + static_cast<uint64_t>(i));

        char buf[32];
        std::snprintf(buf, sizeof buf, "%s%03d", opt.prefix.c_str(), i);
        write_clip(root, buf, synth_generate(spec));
        names.emplace_back(buf);
    }
    return names;
}

// ----------------------------------------------------------- diff / flow ----

// one absolute-difference PNG per adjacent frame pair, per sequence
inline int64_t cmd_diff(const std::string& data_root, const std::string& out_dir) {
    namespace fs = std::filesystem;
    const auto index = scan_davis_layout(data_root);
    int64_t written = 0;
    for (const auto& seq : index.sequences) {
        const fs::path dir = fs::path(out_dir) / seq.name;
        fs::create_directories(dir);
        Image prev = read_image(seq.frames[0]);
        for (size_t t = 1; t < seq.frames.size(); ++t) {
            Image cur = read_image(seq.frames[t]);
            write_png((dir / detail::frame_name(t - 1, ".png")).string(),
                      frame_diff(prev, cur));
            prev = std::move(cur);
            ++written;
        }
    }
    return written;
}

// one .flo plus its color rendering per adjacent frame pair, per sequence
inline int64_t cmd_flow(const std::string& data_root, const std::string& out_dir,
                        const HornSchunckParams& params) {
    namespace fs = std::filesystem;
    params.validate();
    const auto index = scan_davis_layout(data_root);
    int64_t written = 0;
    for (const auto& seq : index.sequences) {
        const fs::path dir = fs::path(out_dir) / seq.name;
        fs::create_directories(dir);
        Image prev = read_image(seq.frames[0]);
        for (size_t t = 1; t < seq.frames.size(); ++t) {
            Image cur = read_image(seq.frames[t]);
            const FlowField f = horn_schunck(prev, cur, params);
            write_flo(f, (dir / detail::frame_name(t - 1, ".flo")).string());
            write_png((dir / detail::frame_name(t - 1, ".png")).string(), flow_to_rgb(f));
            prev = std::move(cur);
            ++written;
        }
    }
    return written;
}

// ---------------------------------------------------------------- train ----

namespace detail {

inline BatchOptions train_batch_options(const RunConfig& c, uint64_t seed, int epoch, int fold) {
    BatchOptions opt;
    opt.variant = c.variant;
    opt.batch_size = c.batch_size;
    opt.seed = seed;
    opt.epoch = epoch;
    opt.fold = fold;
    opt.flow = c.flow;
    return opt;
}

}  // namespace detail

// one full training run; epoch losses land in `log`, one line per epoch
inline Model<float> train_one(const DatasetIndex& index,
                              const std::vector<std::string>& sequences, const RunConfig& c,
                              uint64_t seed, int fold, std::ostream& log) {
    auto model = Model<float>::build(c.net_config(), seed);
    AdamState<float> opt;
    opt.lr = static_cast<float>(c.lr);
    opt.beta1 = static_cast<float>(c.beta1);
    opt.beta2 = static_cast<float>(c.beta2);
    opt.eps = static_cast<float>(c.eps);

    for (int epoch = 0; epoch < c.epochs; ++epoch) {
        BatchStream stream(index, sequences, detail::train_batch_options(c, seed, epoch, fold));
        if (stream.sample_count() == 0)
            throw IoError("train: no annotated samples in the selected sequences");
        double loss_sum = 0;
        int64_t seen = 0;
        int step = 0;
        while (auto batch = stream.next()) {
            model.zero_grads();
            auto logits = model.forward(batch->frames, batch->cues, BnMode::train);
            auto loss = softmax_cross_entropy(logits, batch->labels);
            const double lval = static_cast<double>(loss.item());
            if (!std::isfinite(lval))
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                                   " step " + std::to_string(step));
            loss.backward();
            adam_step(model.params, opt);
            loss_sum += lval * batch->frames.shape().n;
            seen += batch->frames.shape().n;
            ++step;
        }
        log << "epoch " << epoch << " loss " << detail::format_loss(loss_sum / static_cast<double>(seen))
            << "\n";
    }
    return model;
}

struct TrainResult {
    std::vector<std::string> checkpoints;
    std::vector<std::string> logs;
};

// one checkpoint per seed, trained on every annotated sample under data_root
inline TrainResult cmd_train(const RunConfig& c, std::ostream& echo) {
    namespace fs = std::filesystem;
    c.validate();
    if (c.data_root.empty()) throw ConfigError("data_root: required for train");
    auto index = scan_davis_layout(c.data_root,
                                   {c.stationary.begin(), c.stationary.end()},
                                   {c.moving.begin(), c.moving.end()});
    index.set_target(c.resolution_h, c.resolution_w);
    fs::create_directories(c.output_dir);

    TrainResult result;
    const auto names = index.sequence_names();
    for (uint64_t seed : c.seeds) {
        std::ostringstream log;
        auto model = train_one(index, names, c, seed, -1, log);

        const auto tag = variant_name(c.variant) + "_seed" + std::to_string(seed);
        const auto ckpt = (fs::path(c.output_dir) / ("ckpt_" + tag + ".mcsegw")).string();
        save_weights(model, ckpt);
        const auto logpath = (fs::path(c.output_dir) / ("train_" + tag + ".log")).string();
        {
            detail::FileHandle fh(logpath, "wb");
            if (!fh.f) throw IoError("cannot open " + logpath + " for writing");
            const auto text = log.str();
            if (std::fwrite(text.data(), 1, text.size(), fh.f) != text.size())
                throw IoError(logpath + ": short write");
        }
        echo << "seed " << seed << " -> " << ckpt << "\n" << log.str();
        result.checkpoints.push_back(ckpt);
        result.logs.push_back(logpath);
    }
    return result;
}

// ------------------------------------------------------------ infer/eval ----

// argmax over the two logits at target resolution, mapped back to frame dims
inline Mask predict_mask(const Model<float>& model, const DatasetIndex& index,
                         const SequenceEntry& seq, int t, const BatchOptions& opt) {
    Sample s = load_sample(index, seq, t, opt);
    NoGradGuard ng;
    auto logits = model.forward(s.frame, s.cue, BnMode::eval);
    const int th = index.target_h, tw = index.target_w;
    Mask m = Mask::zeros(th, tw);
    const float* l0 = logits.ptr();
    const float* l1 = logits.ptr() + static_cast<int64_t>(th) * tw;
    for (int64_t i = 0; i < static_cast<int64_t>(th) * tw; ++i) m.v[static_cast<size_t>(i)] = l1[i] > l0[i] ? 1 : 0;
    return nearest_resize(m, s.orig_h, s.orig_w);
}

// predicted masks (0/255 PNG) for every frame, at original frame dims
inline int64_t cmd_infer(const RunConfig& c, const std::string& checkpoint,
                         const std::string& data_root, const std::string& out_dir) {
    namespace fs = std::filesystem;
    auto model = load_weights(checkpoint);
    auto index = scan_davis_layout(data_root);
    index.set_target(c.resolution_h, c.resolution_w);

    BatchOptions opt;
    opt.variant = model.config.variant;
    opt.flow = c.flow;
    opt.batch_size = 1;

    int64_t written = 0;
    for (const auto& seq : index.sequences) {
        const fs::path dir = fs::path(out_dir) / seq.name;
        fs::create_directories(dir);
        for (size_t t = 0; t < seq.frames.size(); ++t) {
            const Mask m = predict_mask(model, index, seq, static_cast<int>(t), opt);
            write_mask_png((dir / detail::frame_name(t, ".png")).string(), m);
            ++written;
        }
    }
    return written;
}

// frame-level rows for the named sequences; model == nullptr replays the
// ground truth as the prediction (oracle mode)
inline std::vector<EvalRow> eval_rows(const Model<float>* model, const DatasetIndex& index,
                                      const std::vector<std::string>& sequences,
                                      const RunConfig& c, std::optional<uint64_t> seed_tag,
                                      std::optional<int> fold_tag) {
    BatchOptions opt;
    opt.variant = model ? model->config.variant : c.variant;
    opt.flow = c.flow;
    opt.batch_size = 1;
    if (fold_tag) opt.fold = *fold_tag;

    std::set<std::string> wanted(sequences.begin(), sequences.end());
    std::vector<EvalRow> rows;
    for (const auto& seq : index.sequences) {
        if (!wanted.empty() && !wanted.count(seq.name)) continue;
        for (size_t t = 0; t < seq.frames.size(); ++t) {
            if (seq.annotations[t].empty()) continue;
            const Mask gt = read_mask(seq.annotations[t]);
            const Mask pred =
                model ? predict_mask(*model, index, seq, static_cast<int>(t), opt) : gt;
            EvalRow row;
            row.condition = camera_name(seq.camera);
            row.variant = variant_name(opt.variant);
            row.seed = seed_tag;
            row.fold = fold_tag;
            row.sequence = seq.name;
            row.frame = std::to_string(t);
            row.f = boundary_f(pred, gt);
            row.iou = iou(pred, gt);
            rows.push_back(std::move(row));
        }
    }
    if (rows.empty()) throw IoError("eval: no annotated frames in the selected sequences");
    return rows;
}

struct EvalJob {
    std::string checkpoint;  // path, or "oracle" to replay ground truth
    std::string csv_path;
    std::optional<uint64_t> seed_tag;
    std::optional<int> fold_tag;
    std::vector<std::string> sequences;  // empty = all
};

// read-only over checkpoint and dataset; writes only the CSV
inline EvalReport cmd_eval(const RunConfig& c, const EvalJob& job) {
    auto index = scan_davis_layout(c.data_root,
                                   {c.stationary.begin(), c.stationary.end()},
                                   {c.moving.begin(), c.moving.end()});
    index.set_target(c.resolution_h, c.resolution_w);

    std::optional<Model<float>> model;
    if (job.checkpoint != "oracle") {
        model = load_weights(job.checkpoint);
        if (model->config.variant != c.variant)
            throw ConfigError("checkpoint variant " + variant_name(model->config.variant) +
                              " does not match requested variant " + variant_name(c.variant));
    }
    const auto rows = eval_rows(model ? &*model : nullptr, index, job.sequences, c,
                                job.seed_tag, job.fold_tag);
    const auto report = aggregate(rows);
    if (!job.csv_path.empty()) write_eval_csv(job.csv_path, report);
    return report;
}

// ----------------------------------------------------------------- xval ----

struct XvalResult {
    std::vector<std::string> checkpoints;
    std::vector<std::string> fold_csvs;
    std::string pooled_csv;
    EvalReport pooled;
};

// per (fold, seed): train on the fold's train split, evaluate its test split
inline XvalResult cmd_xval(const RunConfig& c, std::ostream& echo) {
    namespace fs = std::filesystem;
    c.validate();
    if (c.data_root.empty()) throw ConfigError("data_root: required for xval");
    auto index = scan_davis_layout(c.data_root,
                                   {c.stationary.begin(), c.stationary.end()},
                                   {c.moving.begin(), c.moving.end()});
    index.set_target(c.resolution_h, c.resolution_w);
    fs::create_directories(c.output_dir);

    const auto folds = make_folds(index, c.folds, c.fold_seed);
    XvalResult result;
    std::vector<EvalRow> pooled_rows;
    for (size_t f = 0; f < folds.size(); ++f) {
        std::vector<EvalRow> fold_rows;
        for (uint64_t seed : c.seeds) {
            std::ostringstream log;
            auto model = train_one(index, folds[f].train, c, seed, static_cast<int>(f), log);
            const auto tag = variant_name(c.variant) + "_seed" + std::to_string(seed) +
                             "_fold" + std::to_string(f);
            const auto ckpt = (fs::path(c.output_dir) / ("ckpt_" + tag + ".mcsegw")).string();
            save_weights(model, ckpt);
            echo << "fold " << f << " seed " << seed << " -> " << ckpt << "\n" << log.str();
            result.checkpoints.push_back(ckpt);

            auto rows = eval_rows(&model, index, folds[f].test, c, seed, static_cast<int>(f));
            fold_rows.insert(fold_rows.end(), rows.begin(), rows.end());
        }
        const auto csv = (fs::path(c.output_dir) /
                          ("xval_" + variant_name(c.variant) + "_fold" + std::to_string(f) +
                           ".csv"))
                             .string();
        write_eval_csv(csv, aggregate(fold_rows));
        result.fold_csvs.push_back(csv);
        pooled_rows.insert(pooled_rows.end(), fold_rows.begin(), fold_rows.end());
    }
    result.pooled = aggregate(pooled_rows);
    result.pooled_csv =
        (fs::path(c.output_dir) / ("xval_" + variant_name(c.variant) + "_pooled.csv")).string();
    write_eval_csv(result.pooled_csv, result.pooled);
    return result;
}

// ---------------------------------------------------------------- bench ----

struct BenchRow {
    std::string resolution;  // "WxH"
    std::string method;      // frame_diff | horn_schunck
    int64_t timings = 0;     // repetitions * (frames - 1)
    double mean_s = 0, median_s = 0, p95_s = 0;
    double ratio = 0;  // hs_mean / diff_mean at this resolution
};

struct BenchOptions {
    std::vector<std::pair<int, int>> resolutions{{854, 480}};  // (width, height)
    int repetitions = 3;
    int threads = 1;  // the cost claim is about the algorithmic gap
    HornSchunckParams flow{1.0, 100, 0.0};
};

namespace detail {

inline double quantile_nearest(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const size_t idx =
        std::min(v.size() - 1, static_cast<size_t>(std::ceil(q * static_cast<double>(v.size()))) -
                                   (q > 0 ? 1 : 0));
    return v[idx];
}

}  // namespace detail

// times frame_diff and horn_schunck over identical resized frame pairs
inline std::vector<BenchRow> cmd_bench(const std::string& frames_dir, const BenchOptions& opt) {
    namespace fs = std::filesystem;
    if (opt.repetitions < 3) throw ConfigError("bench: repetitions must be >= 3");
    opt.flow.validate();
    if (!fs::is_directory(frames_dir)) throw IoError("bench: no directory at " + frames_dir);

    std::vector<std::string> paths;
    for (const auto& p : detail::sorted_dir(frames_dir))
        if (detail::has_image_ext(p)) paths.push_back(p.string());
    if (paths.size() < 2)
        throw ConfigError("bench: need at least 2 frames, found " +
                          std::to_string(paths.size()));

    const int saved_threads = thread_count();
    set_thread_count(opt.threads);

    std::vector<BenchRow> rows;
    for (const auto& [w, h] : opt.resolutions) {
        std::vector<Image> frames;
        for (const auto& p : paths) frames.push_back(bilinear_resize(read_image(p), h, w));

        auto time_method = [&](auto&& fn) {
            using clock = std::chrono::steady_clock;
            fn(frames[0], frames[1]);  // warm-up, excluded
            std::vector<double> times;
            for (int r = 0; r < opt.repetitions; ++r)
                for (size_t t = 0; t + 1 < frames.size(); ++t) {
                    const auto t0 = clock::now();
                    fn(frames[t], frames[t + 1]);
                    const auto t1 = clock::now();
                    times.push_back(std::chrono::duration<double>(t1 - t0).count());
                }
            return times;
        };

        const auto diff_times =
            time_method([](const Image& a, const Image& b) { (void)frame_diff(a, b); });
        const auto hs_times = time_method(
            [&](const Image& a, const Image& b) { (void)horn_schunck(a, b, opt.flow); });

        auto summarize = [&](const char* method, const std::vector<double>& times) {
            BenchRow row;
            row.resolution = std::to_string(w) + "x" + std::to_string(h);
            row.method = method;
            row.timings = static_cast<int64_t>(times.size());
            double sum = 0;
            for (double t : times) sum += t;
            row.mean_s = sum / static_cast<double>(times.size());
            row.median_s = detail::quantile_nearest(times, 0.5);
            row.p95_s = detail::quantile_nearest(times, 0.95);
            return row;
        };
        BenchRow diff_row = summarize("frame_diff", diff_times);
        BenchRow hs_row = summarize("horn_schunck", hs_times);
        const double ratio = hs_row.mean_s / diff_row.mean_s;
        diff_row.ratio = ratio;
        hs_row.ratio = ratio;
        rows.push_back(diff_row);
        rows.push_back(hs_row);
    }
    set_thread_count(saved_threads);
    return rows;
}

inline std::string bench_csv_string(const std::vector<BenchRow>& rows) {
    std::string out = "resolution,method,timings,mean_s,median_s,p95_s,ratio\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%s,%lld,%.9f,%.9f,%.9f,%.3f\n", r.resolution.c_str(),
                      r.method.c_str(), static_cast<long long>(r.timings), r.mean_s, r.median_s,
                      r.p95_s, r.ratio);
        out += buf;
    }
    return out;
}

inline void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows) {
    detail::FileHandle fh(path, "wb");
    if (!fh.f) throw IoError("cannot open " + path + " for writing");
    const auto s = bench_csv_string(rows);
    if (std::fwrite(s.data(), 1, s.size(), fh.f) != s.size())
        throw IoError(path + ": short write");
}

}  // namespace mcseg
