#pragma once

// Run configuration: JSON file with a fixed schema, every field overridable
// from the command line. parse(serialize(c)) == c.

#include <array>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcseg/model.hpp"
#include "mcseg/motion.hpp"

namespace mcseg {

struct RunConfig {
    Variant variant = Variant::dual_diff;

    // network
    double width_mult = 1.0;
    std::array<int, 4> blocks_per_stage{3, 4, 6, 3};
    int bottleneck_channels = 1024;

    // optimizer
    double lr = 0.005;
    double beta1 = 0.9, beta2 = 0.999;
    double eps = 1e-8;

    // schedule
    int batch_size = 16;
    int epochs = 100;
    std::vector<uint64_t> seeds{0, 1, 2, 3, 4};

    // data
    std::string data_root;
    std::string output_dir = "out";
    int resolution_h = 384, resolution_w = 384;
    std::vector<std::string> stationary;
    std::vector<std::string> moving;

    // cross-validation
    int folds = 4;
    uint64_t fold_seed = 0;

    HornSchunckParams flow{};

    bool operator==(const RunConfig&) const = default;

    NetConfig net_config() const {
        NetConfig n;
        n.width_mult = width_mult;
        n.blocks_per_stage = blocks_per_stage;
        n.bottleneck_channels = bottleneck_channels;
        n.variant = variant;
        return n;
    }

    void validate() const {
        net_config().validate();
        if (!(lr > 0)) throw ConfigError("lr: must be positive");
        if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("beta1: must be in [0, 1)");
        if (!(beta2 >= 0 && beta2 < 1)) throw ConfigError("beta2: must be in [0, 1)");
        if (!(eps > 0)) throw ConfigError("eps: must be positive");
        if (batch_size < 1) throw ConfigError("batch_size: must be >= 1");
        if (epochs < 1) throw ConfigError("epochs: must be >= 1");
        if (seeds.empty()) throw ConfigError("seeds: need at least one seed");
        if (resolution_h < 32 || resolution_w < 32 || resolution_h % 32 || resolution_w % 32)
            throw ConfigError("resolution: dims must be positive multiples of 32");
        if (folds < 1) throw ConfigError("folds: must be >= 1");
        flow.validate();
    }
};

inline nlohmann::ordered_json to_json(const RunConfig& c) {
    return nlohmann::ordered_json{
        {"variant", variant_name(c.variant)},
        {"width_mult", c.width_mult},
        {"blocks_per_stage", c.blocks_per_stage},
        {"bottleneck_channels", c.bottleneck_channels},
        {"lr", c.lr},
        {"beta1", c.beta1},
        {"beta2", c.beta2},
        {"eps", c.eps},
        {"batch_size", c.batch_size},
        {"epochs", c.epochs},
        {"seeds", c.seeds},
        {"data_root", c.data_root},
        {"output_dir", c.output_dir},
        {"resolution", {c.resolution_h, c.resolution_w}},
        {"stationary", c.stationary},
        {"moving", c.moving},
        {"folds", c.folds},
        {"fold_seed", c.fold_seed},
        {"flow",
         {{"alpha", c.flow.alpha},
          {"iterations", c.flow.iterations},
          {"early_stop_delta", c.flow.early_stop_delta}}}};
}

inline std::string serialize_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

inline RunConfig parse_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");

    RunConfig c;
    try {
        for (const auto& [key, val] : j.items()) {
            if (key == "variant")
                c.variant = parse_variant(val.get<std::string>());
            else if (key == "width_mult")
                c.width_mult = val.get<double>();
            else if (key == "blocks_per_stage") {
                const auto b = val.get<std::vector<int>>();
                if (b.size() != 4) throw ConfigError("blocks_per_stage: need exactly 4 entries");
                std::copy(b.begin(), b.end(), c.blocks_per_stage.begin());
            } else if (key == "bottleneck_channels")
                c.bottleneck_channels = val.get<int>();
            else if (key == "lr")
                c.lr = val.get<double>();
            else if (key == "beta1")
                c.beta1 = val.get<double>();
            else if (key == "beta2")
                c.beta2 = val.get<double>();
            else if (key == "eps")
                c.eps = val.get<double>();
            else if (key == "batch_size")
                c.batch_size = val.get<int>();
            else if (key == "epochs")
                c.epochs = val.get<int>();
            else if (key == "seeds")
                c.seeds = val.get<std::vector<uint64_t>>();
            else if (key == "data_root")
                c.data_root = val.get<std::string>();
            else if (key == "output_dir")
                c.output_dir = val.get<std::string>();
            else if (key == "resolution") {
                const auto r = val.get<std::vector<int>>();
                if (r.size() != 2) throw ConfigError("resolution: need [height, width]");
                c.resolution_h = r[0];
                c.resolution_w = r[1];
            } else if (key == "stationary")
                c.stationary = val.get<std::vector<std::string>>();
            else if (key == "moving")
                c.moving = val.get<std::vector<std::string>>();
            else if (key == "folds")
                c.folds = val.get<int>();
            else if (key == "fold_seed")
                c.fold_seed = val.get<uint64_t>();
            else if (key == "flow") {
                for (const auto& [fk, fv] : val.items()) {
                    if (fk == "alpha")
                        c.flow.alpha = fv.get<double>();
                    else if (fk == "iterations")
                        c.flow.iterations = fv.get<int>();
                    else if (fk == "early_stop_delta")
                        c.flow.early_stop_delta = fv.get<double>();
                    else
                        throw ConfigError("config: unknown key flow." + fk);
                }
            } else
                throw ConfigError("config: unknown key " + key);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f.good()) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

}  // namespace mcseg
