// mcseg: command-line front-end.
//   mcseg <synth|diff|flow|train|infer|eval|xval|bench> [--config file] [overrides]
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mcseg/config.hpp"
#include "mcseg/harness.hpp"

namespace {

using mcseg::ConfigError;

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::vector<uint64_t> parse_u64_list(const std::string& s) {
    std::vector<uint64_t> out;
    for (const auto& item : split_commas(s)) {
        try {
            out.push_back(std::stoull(item));
        } catch (const std::exception&) {
            throw ConfigError("expected an unsigned integer, got '" + item + "'");
        }
    }
    return out;
}

std::pair<int, int> parse_dims(const std::string& s, const char* what) {
    const auto x = s.find('x');
    if (x == std::string::npos || x == 0 || x + 1 >= s.size())
        throw ConfigError(std::string(what) + ": expected <W>x<H>, got '" + s + "'");
    try {
        return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
    } catch (const std::exception&) {
        throw ConfigError(std::string(what) + ": expected <W>x<H>, got '" + s + "'");
    }
}

// shared config-file + override flags for train/eval/xval/infer
struct CommonOpts {
    std::string config_path;
    std::optional<std::string> variant, data_root, output_dir, resolution, seeds, stationary,
        moving, blocks;
    std::optional<double> width_mult, lr, beta1, beta2, eps, flow_alpha, flow_delta;
    std::optional<int> bottleneck, batch_size, epochs, folds, flow_iterations;
    std::optional<uint64_t> fold_seed;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file; flags override its values");
        cmd->add_option("--variant", variant, "dual_diff | dual_flow | single");
        cmd->add_option("--data", data_root, "dataset root (images/ + annotations/)");
        cmd->add_option("--out", output_dir, "output directory");
        cmd->add_option("--resolution", resolution, "training resolution <W>x<H>");
        cmd->add_option("--seeds", seeds, "comma-separated seed list");
        cmd->add_option("--stationary", stationary, "comma-separated stationary sequences");
        cmd->add_option("--moving", moving, "comma-separated moving-camera sequences");
        cmd->add_option("--width-mult", width_mult, "channel width multiplier");
        cmd->add_option("--blocks", blocks, "blocks per stage, e.g. 3,4,6,3");
        cmd->add_option("--bottleneck", bottleneck, "fusion bottleneck channels");
        cmd->add_option("--lr", lr, "Adam learning rate");
        cmd->add_option("--beta1", beta1, "Adam beta1");
        cmd->add_option("--beta2", beta2, "Adam beta2");
        cmd->add_option("--eps", eps, "Adam epsilon");
        cmd->add_option("--batch-size", batch_size, "mini-batch size");
        cmd->add_option("--epochs", epochs, "training epochs");
        cmd->add_option("--folds", folds, "cross-validation fold count");
        cmd->add_option("--fold-seed", fold_seed, "fold partition seed");
        cmd->add_option("--flow-alpha", flow_alpha, "Horn-Schunck smoothness weight");
        cmd->add_option("--flow-iterations", flow_iterations, "Horn-Schunck sweep count");
        cmd->add_option("--flow-delta", flow_delta, "Horn-Schunck early-stop threshold");
    }

    mcseg::RunConfig resolve() const {
        mcseg::RunConfig c;
        if (!config_path.empty()) c = mcseg::load_config(config_path);
        if (variant) c.variant = mcseg::parse_variant(*variant);
        if (data_root) c.data_root = *data_root;
        if (output_dir) c.output_dir = *output_dir;
        if (resolution) {
            const auto [w, h] = parse_dims(*resolution, "resolution");
            c.resolution_h = h;
            c.resolution_w = w;
        }
        if (seeds) c.seeds = parse_u64_list(*seeds);
        if (stationary) c.stationary = split_commas(*stationary);
        if (moving) c.moving = split_commas(*moving);
        if (width_mult) c.width_mult = *width_mult;
        if (blocks) {
            const auto b = parse_u64_list(*blocks);
            if (b.size() != 4) throw ConfigError("blocks: need exactly 4 entries");
            for (size_t i = 0; i < 4; ++i) c.blocks_per_stage[i] = static_cast<int>(b[i]);
        }
        if (bottleneck) c.bottleneck_channels = *bottleneck;
        if (lr) c.lr = *lr;
        if (beta1) c.beta1 = *beta1;
        if (beta2) c.beta2 = *beta2;
        if (eps) c.eps = *eps;
        if (batch_size) c.batch_size = *batch_size;
        if (epochs) c.epochs = *epochs;
        if (folds) c.folds = *folds;
        if (fold_seed) c.fold_seed = *fold_seed;
        if (flow_alpha) c.flow.alpha = *flow_alpha;
        if (flow_iterations) c.flow.iterations = *flow_iterations;
        if (flow_delta) c.flow.early_stop_delta = *flow_delta;
        return c;
    }
};

int run(int argc, char** argv) {
    CLI::App app{"motion-cue video object segmentation toolkit"};
    app.require_subcommand(1);
    std::optional<int> threads;
    app.add_option("--threads", threads, "worker thread cap (also env MCSEG_THREADS)");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic clip suite");
    std::string synth_out = "synth";
    mcseg::SynthSuiteOptions synth_opt;
    std::string synth_shape = "rect", synth_texture = "noise", synth_canvas = "96x96";
    bool no_distractor = false;
    synth->add_option("--out", synth_out, "dataset root to create")->required();
    synth->add_option("--clips", synth_opt.clips, "number of clips");
    synth->add_option("--frames", synth_opt.frames, "frames per clip");
    synth->add_option("--canvas", synth_canvas, "canvas size <W>x<H>");
    synth->add_option("--object-size", synth_opt.object_size, "object side/diameter in px");
    synth->add_option("--shape", synth_shape, "rect | disc");
    synth->add_option("--texture", synth_texture, "noise | plain");
    synth->add_flag("--no-distractor", no_distractor, "omit the static distractor");
    synth->add_option("--speed-min", synth_opt.speed_min, "min object speed px/frame");
    synth->add_option("--speed-max", synth_opt.speed_max, "max object speed px/frame");
    synth->add_option("--pan", synth_opt.pan, "background pan speed px/frame (0 = stationary)");
    synth->add_option("--seed", synth_opt.seed, "suite seed");
    synth->add_option("--prefix", synth_opt.prefix, "clip name prefix");

    // diff / flow
    auto* diff = app.add_subcommand("diff", "write frame-difference PNGs per adjacent pair");
    std::string diff_data, diff_out;
    diff->add_option("--data", diff_data, "dataset root")->required();
    diff->add_option("--out", diff_out, "output directory")->required();

    auto* flow = app.add_subcommand("flow", "write .flo fields and color PNGs per adjacent pair");
    std::string flow_data, flow_out;
    mcseg::HornSchunckParams flow_params;
    flow->add_option("--data", flow_data, "dataset root")->required();
    flow->add_option("--out", flow_out, "output directory")->required();
    flow->add_option("--flow-alpha", flow_params.alpha, "smoothness weight");
    flow->add_option("--flow-iterations", flow_params.iterations, "sweep count");
    flow->add_option("--flow-delta", flow_params.early_stop_delta, "early-stop threshold");

    // train
    auto* train = app.add_subcommand("train", "train one checkpoint per seed");
    CommonOpts train_opts;
    train_opts.attach(train);

    // infer
    auto* infer = app.add_subcommand("infer", "write predicted masks for every frame");
    CommonOpts infer_opts;
    infer_opts.attach(infer);
    std::string infer_ckpt, infer_data, infer_out;
    infer->add_option("--checkpoint", infer_ckpt, "MCSEGW01 checkpoint")->required();
    infer->add_option("--masks-out", infer_out, "mask output directory")->required();

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint, write a CSV report");
    CommonOpts eval_opts;
    eval_opts.attach(eval);
    std::string eval_ckpt, eval_csv, eval_sequences;
    std::optional<uint64_t> eval_seed_tag;
    std::optional<int> eval_fold_tag;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint path, or 'oracle'")->required();
    eval->add_option("--csv", eval_csv, "CSV output path")->required();
    eval->add_option("--sequences", eval_sequences, "comma-separated subset (default: all)");
    eval->add_option("--seed-tag", eval_seed_tag, "seed recorded in the CSV rows");
    eval->add_option("--fold-tag", eval_fold_tag, "fold recorded in the CSV rows");

    // xval
    auto* xval = app.add_subcommand("xval", "k-fold cross-validation: train + eval per fold");
    CommonOpts xval_opts;
    xval_opts.attach(xval);

    // bench
    auto* bench = app.add_subcommand("bench", "time frame_diff vs horn_schunck");
    std::string bench_data, bench_csv, bench_res = "854x480";
    mcseg::BenchOptions bench_opt;
    bench->add_option("--data", bench_data, "directory of frames")->required();
    bench->add_option("--csv", bench_csv, "CSV output path");
    bench->add_option("--resolutions", bench_res, "comma-separated <W>x<H> list");
    bench->add_option("--reps", bench_opt.repetitions, "repetitions (>= 3)");
    bench->add_option("--bench-threads", bench_opt.threads, "threads inside the timed region");
    bench->add_option("--flow-alpha", bench_opt.flow.alpha, "smoothness weight");
    bench->add_option("--flow-iterations", bench_opt.flow.iterations, "sweep count");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }
    if (threads) mcseg::set_thread_count(*threads);

    if (synth->parsed()) {
        const auto [w, h] = parse_dims(synth_canvas, "canvas");
        synth_opt.canvas_w = w;
        synth_opt.canvas_h = h;
        synth_opt.distractor = !no_distractor;
        if (synth_shape == "rect")
            synth_opt.shape = mcseg::ShapeKind::rect;
        else if (synth_shape == "disc")
            synth_opt.shape = mcseg::ShapeKind::disc;
        else
            throw ConfigError("shape: expected rect or disc, got '" + synth_shape + "'");
        if (synth_texture == "noise")
            synth_opt.texture = mcseg::TextureKind::noise;
        else if (synth_texture == "plain")
            synth_opt.texture = mcseg::TextureKind::plain;
        else
            throw ConfigError("texture: expected noise or plain, got '" + synth_texture + "'");
        const auto names = mcseg::cmd_synth(synth_out, synth_opt);
        std::cout << names.size() << " clips under " << synth_out << "\n";
    } else if (diff->parsed()) {
        const auto n = mcseg::cmd_diff(diff_data, diff_out);
        std::cout << n << " difference images under " << diff_out << "\n";
    } else if (flow->parsed()) {
        const auto n = mcseg::cmd_flow(flow_data, flow_out, flow_params);
        std::cout << n << " flow fields under " << flow_out << "\n";
    } else if (train->parsed()) {
        const auto result = mcseg::cmd_train(train_opts.resolve(), std::cout);
        std::cout << result.checkpoints.size() << " checkpoints written\n";
    } else if (infer->parsed()) {
        auto c = infer_opts.resolve();
        if (infer_opts.data_root) c.data_root = *infer_opts.data_root;
        if (c.data_root.empty()) throw ConfigError("data_root: required for infer");
        const auto n = mcseg::cmd_infer(c, infer_ckpt, c.data_root, infer_out);
        std::cout << n << " masks under " << infer_out << "\n";
    } else if (eval->parsed()) {
        auto c = eval_opts.resolve();
        if (c.data_root.empty()) throw ConfigError("data_root: required for eval");
        mcseg::EvalJob job;
        job.checkpoint = eval_ckpt;
        job.csv_path = eval_csv;
        job.seed_tag = eval_seed_tag;
        job.fold_tag = eval_fold_tag;
        job.sequences = split_commas(eval_sequences);
        const auto report = mcseg::cmd_eval(c, job);
        std::cout << "report " << eval_csv << "\n";
        for (const auto& row : report.conditions)
            std::cout << row.condition << " " << row.variant << " F "
                      << mcseg::detail::format_loss(row.f) << " IoU "
                      << mcseg::detail::format_loss(row.iou) << "\n";
    } else if (xval->parsed()) {
        const auto result = mcseg::cmd_xval(xval_opts.resolve(), std::cout);
        std::cout << result.checkpoints.size() << " checkpoints, pooled report "
                  << result.pooled_csv << "\n";
    } else if (bench->parsed()) {
        bench_opt.resolutions.clear();
        for (const auto& r : split_commas(bench_res))
            bench_opt.resolutions.push_back(parse_dims(r, "resolutions"));
        if (bench_opt.resolutions.empty()) throw ConfigError("resolutions: none given");
        const auto rows = mcseg::cmd_bench(bench_data, bench_opt);
        const auto csv = mcseg::bench_csv_string(rows);
        std::cout << csv;
        if (!bench_csv.empty()) mcseg::write_bench_csv(bench_csv, rows);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const mcseg::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
