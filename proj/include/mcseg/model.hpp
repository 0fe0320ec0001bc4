#pragma once

// Segmentation networks: a ResNet50-shaped 5-stage encoder (stem + four
// bottleneck stages), an optional second encoder for the motion cue, a 1x1
// fusion bottleneck, and a 5-stage upsampling decoder with skip connections
// from every encoder stage. Weight container: MCSEGW01.

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcseg/image.hpp"
#include "mcseg/ops.hpp"
#include "mcseg/tensor.hpp"

namespace mcseg {

enum class Variant { dual_diff, dual_flow, single };

inline std::string variant_name(Variant v) {
    switch (v) {
        case Variant::dual_diff: return "dual_diff";
        case Variant::dual_flow: return "dual_flow";
        default: return "single";
    }
}

inline Variant parse_variant(const std::string& s) {
    if (s == "dual_diff") return Variant::dual_diff;
    if (s == "dual_flow") return Variant::dual_flow;
    if (s == "single") return Variant::single;
    throw ConfigError("variant: expected dual_diff, dual_flow or single, got '" + s + "'");
}

inline bool is_dual(Variant v) { return v != Variant::single; }

struct NetConfig {
    double width_mult = 1.0;
    std::array<int, 4> blocks_per_stage{3, 4, 6, 3};
    int bottleneck_channels = 1024;
    int num_classes = 2;
    Variant variant = Variant::dual_diff;

    // base channel count scaled by width_mult
    int ch(int base) const {
        return static_cast<int>(std::lround(base * width_mult));
    }

    void validate() const {
        if (!(width_mult > 0)) throw ConfigError("width_mult: must be positive");
        if (ch(32) < 1) throw ConfigError("width_mult: 32-channel base rounds below 1");
        for (int b : blocks_per_stage)
            if (b < 1) throw ConfigError("blocks_per_stage: entries must be >= 1");
        if (bottleneck_channels < 1) throw ConfigError("bottleneck_channels: must be >= 1");
        if (ch(bottleneck_channels) < 1)
            throw ConfigError("bottleneck_channels: rounds below 1 at this width_mult");
        if (num_classes != 2) throw ConfigError("num_classes: fixed at 2");
    }

    bool operator==(const NetConfig&) const = default;
};

inline void to_json(nlohmann::ordered_json& j, const NetConfig& c) {
    j = nlohmann::ordered_json{{"width_mult", c.width_mult},
                               {"blocks_per_stage", c.blocks_per_stage},
                               {"bottleneck_channels", c.bottleneck_channels},
                               {"num_classes", c.num_classes},
                               {"variant", variant_name(c.variant)}};
}

template <typename BasicJson>
void from_json(const BasicJson& j, NetConfig& c) {
    c.width_mult = j.at("width_mult").template get<double>();
    const auto b = j.at("blocks_per_stage").template get<std::vector<int>>();
    if (b.size() != 4) throw ConfigError("blocks_per_stage: need exactly 4 entries");
    std::copy(b.begin(), b.end(), c.blocks_per_stage.begin());
    c.bottleneck_channels = j.at("bottleneck_channels").template get<int>();
    c.num_classes = j.at("num_classes").template get<int>();
    c.variant = parse_variant(j.at("variant").template get<std::string>());
}

namespace detail {

// registers tensors under hierarchical names and draws He-initialized weights
template <typename T>
struct NetBuilder {
    std::vector<NamedParam<T>>* params;
    std::vector<NamedParam<T>>* buffers;
    Rng* rng;

    Tensor4<T> conv_weight(const std::string& name, int co, int ci, int k) {
        Tensor4<T> w = Tensor4<T>::zeros({co, ci, k, k}, true);
        const double stddev = std::sqrt(2.0 / (static_cast<double>(ci) * k * k));
        for (int64_t i = 0; i < w.numel(); ++i)
            w.ptr()[i] = static_cast<T>(rng->normal(0.0, stddev));
        params->push_back({name, w});
        return w;
    }

    Tensor4<T> param_vec(const std::string& name, int c, T value) {
        Tensor4<T> v = Tensor4<T>::vec(c, value, true);
        params->push_back({name, v});
        return v;
    }

    Tensor4<T> buffer_vec(const std::string& name, int c, T value) {
        Tensor4<T> v = Tensor4<T>::vec(c, value, false);
        buffers->push_back({name, v});
        return v;
    }
};

}  // namespace detail

template <typename T>
struct ConvUnit {
    Tensor4<T> w, b;  // b stays undefined for convs feeding a norm layer
    int stride = 1, pad = 0;

    Tensor4<T> operator()(const Tensor4<T>& x) const { return conv2d(x, w, b, stride, pad); }
};

template <typename T>
struct BnUnit {
    Tensor4<T> gamma, beta, rm, rv;

    Tensor4<T> operator()(const Tensor4<T>& x, BnMode mode) const {
        Tensor4<T> m = rm, v = rv;  // handles share the stat buffers
        return batchnorm2d(x, gamma, beta, m, v, mode);
    }
};

template <typename T>
struct Bottleneck {
    ConvUnit<T> c1, c2, c3;
    BnUnit<T> b1, b2, b3;
    bool has_proj = false;
    ConvUnit<T> proj;
    BnUnit<T> bproj;

    Tensor4<T> operator()(const Tensor4<T>& x, BnMode mode) const {
        auto y = relu(b1(c1(x), mode));
        y = relu(b2(c2(y), mode));
        y = b3(c3(y), mode);
        auto s = has_proj ? bproj(proj(x), mode) : x;
        return relu(add(y, s));
    }
};

// stage outputs, shallow to deep: stem+pool, then the four residual stages
template <typename T>
using StageOutputs = std::array<Tensor4<T>, 5>;

template <typename T>
struct Encoder {
    ConvUnit<T> stem;
    BnUnit<T> stem_bn;
    std::array<std::vector<Bottleneck<T>>, 4> stages;

    StageOutputs<T> operator()(const Tensor4<T>& x, BnMode mode) const {
        StageOutputs<T> out;
        auto y = relu(stem_bn(stem(x), mode));
        y = maxpool2d(y, 3, 2, 1);
        out[0] = y;
        for (int s = 0; s < 4; ++s) {
            for (const auto& block : stages[static_cast<size_t>(s)]) y = block(y, mode);
            out[static_cast<size_t>(s) + 1] = y;
        }
        return out;
    }
};

template <typename T>
struct DecoderStage {
    ConvUnit<T> conv;
    BnUnit<T> bn;
};

// Channel plan, full scale (width_mult applies everywhere):
//   encoder stages out: 64, 256, 512, 1024, 2048 at strides 4,4,8,16,32
//   fusion: concat of deepest features -> 1x1 conv to bottleneck_channels
//   decoder: 512, 256, 128, 64, 32 with skips at stages 0..2
template <typename T>
struct Model {
    NetConfig config;
    Encoder<T> enc_frame;
    Encoder<T> enc_cue;  // only populated for dual variants
    ConvUnit<T> fusion;
    BnUnit<T> fusion_bn;
    std::array<DecoderStage<T>, 5> decoder;
    ConvUnit<T> head;

    std::vector<NamedParam<T>> params;   // trainable, registration order
    std::vector<NamedParam<T>> buffers;  // batch-norm running stats

    static constexpr std::array<int, 4> kStageBase{256, 512, 1024, 2048};
    static constexpr std::array<int, 5> kDecoderBase{512, 256, 128, 64, 32};

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& p : params) n += p.tensor.numel();
        return n;
    }

    void zero_grads() {
        for (auto& p : params) p.tensor.zero_grad();
    }

    static Model build(const NetConfig& config, uint64_t seed) {
        config.validate();
        Model m;
        m.config = config;
        Rng rng(mix_seed(seed, 0x6d63736567u));
        detail::NetBuilder<T> b{&m.params, &m.buffers, &rng};

        m.enc_frame = build_encoder_impl(config, b, "enc_frame");
        if (is_dual(config.variant)) m.enc_cue = build_encoder_impl(config, b, "enc_cue");

        const int deep = 4 * bottleneck_planes(config, 3);
        const int fusion_in = is_dual(config.variant) ? 2 * deep : deep;
        const int fusion_out = config.ch(config.bottleneck_channels);
        m.fusion = {b.conv_weight("fusion.conv.weight", fusion_out, fusion_in, 1), {}, 1, 0};
        m.fusion_bn = make_bn(b, "fusion.bn", fusion_out);

        const int enc_count = is_dual(config.variant) ? 2 : 1;
        int in_ch = fusion_out;
        for (int d = 0; d < 5; ++d) {
            const int skip = d == 0   ? 4 * bottleneck_planes(config, 2)
                             : d == 1 ? 4 * bottleneck_planes(config, 1)
                             : d == 2 ? 4 * bottleneck_planes(config, 0) + config.ch(64)
                                      : 0;
            const int cin = in_ch + enc_count * skip;
            const int cout = std::max(1, config.ch(kDecoderBase[static_cast<size_t>(d)]));
            const auto prefix = "decoder.stage" + std::to_string(d);
            m.decoder[static_cast<size_t>(d)].conv = {
                b.conv_weight(prefix + ".conv.weight", cout, cin, 3), {}, 1, 1};
            m.decoder[static_cast<size_t>(d)].bn = make_bn(b, prefix + ".bn", cout);
            in_ch = cout;
        }

        m.head = {b.conv_weight("head.weight", config.num_classes, in_ch, 1),
                  b.param_vec("head.bias", config.num_classes, T(0)), 1, 0};
        return m;
    }

    // logits at input resolution; cue required exactly for dual variants
    Tensor4<T> forward(const Tensor4<T>& frame, const Tensor4<T>& cue, BnMode mode) const {
        const Shape4 fs = frame.shape();
        if (fs.c != 3)
            throw ShapeError("forward: frame must have 3 channels, got " + fs.str());
        if (fs.h % 32 != 0 || fs.w % 32 != 0)
            throw ShapeError("forward: input dims must be divisible by 32, got " + fs.str());
        const bool dual = is_dual(config.variant);
        if (dual && !cue.defined())
            throw ShapeError("forward: variant " + variant_name(config.variant) +
                             " requires a motion cue input");
        if (!dual && cue.defined())
            throw ShapeError("forward: variant single takes no cue input");
        if (dual && !(cue.shape() == fs))
            throw ShapeError("forward: variant " + variant_name(config.variant) +
                             " cue shape " + cue.shape().str() + " must match frame " + fs.str());

        const auto ef = enc_frame(frame, mode);
        StageOutputs<T> ec;
        if (dual) ec = enc_cue(cue, mode);

        auto x = dual ? concat_channels(ef[4], ec[4]) : ef[4];
        x = relu(fusion_bn(fusion(x), mode));

        for (int d = 0; d < 5; ++d) {
            x = upsample_bilinear2x(x);
            if (d == 0) x = with_skips(x, ef[3], ec[3], dual);
            if (d == 1) x = with_skips(x, ef[2], ec[2], dual);
            if (d == 2) {
                x = with_skips(x, ef[1], ec[1], dual);
                x = with_skips(x, ef[0], ec[0], dual);
            }
            const auto& stage = decoder[static_cast<size_t>(d)];
            x = relu(stage.bn(stage.conv(x), mode));
        }
        return head(x);
    }

    static int bottleneck_planes(const NetConfig& c, int stage) {
        return std::max(1, c.ch(kStageBase[static_cast<size_t>(stage)]) / 4);
    }

    static BnUnit<T> make_bn(detail::NetBuilder<T>& b, const std::string& prefix, int c) {
        return {b.param_vec(prefix + ".gamma", c, T(1)), b.param_vec(prefix + ".beta", c, T(0)),
                b.buffer_vec(prefix + ".running_mean", c, T(0)),
                b.buffer_vec(prefix + ".running_var", c, T(1))};
    }

    static Tensor4<T> with_skips(const Tensor4<T>& x, const Tensor4<T>& f, const Tensor4<T>& c,
                                 bool dual) {
        auto y = concat_channels(x, f);
        return dual ? concat_channels(y, c) : y;
    }

    static Encoder<T> build_encoder_impl(const NetConfig& config, detail::NetBuilder<T>& b,
                                         const std::string& prefix) {
        Encoder<T> e;
        const int stem_ch = std::max(1, config.ch(64));
        e.stem = {b.conv_weight(prefix + ".stem.conv.weight", stem_ch, 3, 7), {}, 2, 3};
        e.stem_bn = make_bn(b, prefix + ".stem.bn", stem_ch);

        int in_ch = stem_ch;
        for (int s = 0; s < 4; ++s) {
            const int planes = bottleneck_planes(config, s);
            const int out_ch = 4 * planes;
            const int stage_stride = s == 0 ? 1 : 2;
            for (int blk = 0; blk < config.blocks_per_stage[static_cast<size_t>(s)]; ++blk) {
                const int stride = blk == 0 ? stage_stride : 1;
                const auto bp = prefix + ".stage" + std::to_string(s + 1) + ".block" +
                                std::to_string(blk);
                Bottleneck<T> block;
                block.c1 = {b.conv_weight(bp + ".conv1.weight", planes, in_ch, 1), {}, 1, 0};
                block.b1 = make_bn(b, bp + ".bn1", planes);
                block.c2 = {b.conv_weight(bp + ".conv2.weight", planes, planes, 3), {}, stride, 1};
                block.b2 = make_bn(b, bp + ".bn2", planes);
                block.c3 = {b.conv_weight(bp + ".conv3.weight", out_ch, planes, 1), {}, 1, 0};
                block.b3 = make_bn(b, bp + ".bn3", out_ch);
                if (stride != 1 || in_ch != out_ch) {
                    block.has_proj = true;
                    block.proj = {b.conv_weight(bp + ".proj.weight", out_ch, in_ch, 1), {},
                                  stride, 0};
                    block.bproj = make_bn(b, bp + ".proj_bn", out_ch);
                }
                e.stages[static_cast<size_t>(s)].push_back(block);
                in_ch = out_ch;
            }
        }
        return e;
    }
};

// standalone encoder, any input size (the full model needs multiples of 32)
template <typename T>
Encoder<T> build_encoder(const NetConfig& config, uint64_t seed,
                         std::vector<NamedParam<T>>* params = nullptr,
                         std::vector<NamedParam<T>>* buffers = nullptr) {
    config.validate();
    std::vector<NamedParam<T>> local_p, local_b;
    Rng rng(mix_seed(seed, 0x6d63736567u));
    detail::NetBuilder<T> b{params ? params : &local_p, buffers ? buffers : &local_b, &rng};
    return Model<T>::build_encoder_impl(config, b, "enc");
}

// MCSEGW01 container: 8-byte magic, u64 little-endian header length, JSON
// header (config + tensor table), then raw little-endian float32 blobs.
inline constexpr char kWeightsMagic[8] = {'M', 'C', 'S', 'E', 'G', 'W', '0', '1'};

inline void save_weights(const Model<float>& m, const std::string& path) {
    nlohmann::ordered_json header;
    nlohmann::ordered_json cfg;
    to_json(cfg, m.config);
    header["config"] = cfg;
    nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
    uint64_t offset = 0;
    auto add = [&](const NamedParam<float>& p) {
        const Shape4 s = p.tensor.shape();
        const uint64_t nbytes = static_cast<uint64_t>(p.tensor.numel()) * 4;
        tensors.push_back(nlohmann::ordered_json{{"name", p.name},
                                                 {"dtype", "f32"},
                                                 {"shape", {s.n, s.c, s.h, s.w}},
                                                 {"offset", offset},
                                                 {"nbytes", nbytes}});
        offset += nbytes;
    };
    for (const auto& p : m.params) add(p);
    for (const auto& p : m.buffers) add(p);
    header["tensors"] = std::move(tensors);
    const std::string htext = header.dump();

    detail::FileHandle fh(path, "wb");
    if (!fh.f) throw IoError("cannot open " + path + " for writing");
    const uint64_t hlen = htext.size();
    if (std::fwrite(kWeightsMagic, 1, 8, fh.f) != 8 ||
        std::fwrite(&hlen, 8, 1, fh.f) != 1 ||
        std::fwrite(htext.data(), 1, htext.size(), fh.f) != htext.size())
        throw IoError(path + ": short write");
    auto blob = [&](const NamedParam<float>& p) {
        const size_t n = static_cast<size_t>(p.tensor.numel());
        if (std::fwrite(p.tensor.ptr(), 4, n, fh.f) != n)
            throw IoError(path + ": short write");
    };
    for (const auto& p : m.params) blob(p);
    for (const auto& p : m.buffers) blob(p);
}

namespace detail {

struct WeightEntry {
    Shape4 shape;
    uint64_t offset = 0, nbytes = 0;
};

struct WeightsFile {
    NetConfig config;
    std::map<std::string, WeightEntry> entries;
    std::vector<uint8_t> blobs;
};

inline WeightsFile read_weights_file(const std::string& path) {
    FileHandle fh(path, "rb");
    if (!fh.f) throw IoError("cannot open " + path);
    char magic[8];
    if (std::fread(magic, 1, 8, fh.f) != 8 || std::memcmp(magic, kWeightsMagic, 8) != 0)
        throw FormatError(path + ": bad weights magic, expected MCSEGW01");
    uint64_t hlen = 0;
    if (std::fread(&hlen, 8, 1, fh.f) != 1) throw FormatError(path + ": truncated header length");
    if (hlen > (1ull << 30)) throw FormatError(path + ": implausible header length");
    std::string htext(hlen, '\0');
    if (std::fread(htext.data(), 1, hlen, fh.f) != hlen)
        throw FormatError(path + ": truncated header");

    WeightsFile wf;
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(htext);
        wf.config = header.at("config").get<NetConfig>();
        for (const auto& t : header.at("tensors")) {
            WeightEntry e;
            if (t.at("dtype").get<std::string>() != "f32")
                throw FormatError(path + ": unsupported dtype for " +
                                  t.at("name").get<std::string>());
            const auto sh = t.at("shape").get<std::vector<int>>();
            if (sh.size() != 4) throw FormatError(path + ": bad shape rank");
            e.shape = {sh[0], sh[1], sh[2], sh[3]};
            e.offset = t.at("offset").get<uint64_t>();
            e.nbytes = t.at("nbytes").get<uint64_t>();
            wf.entries[t.at("name").get<std::string>()] = e;
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": malformed header: " + e.what());
    }

    uint64_t total = 0;
    for (const auto& [name, e] : wf.entries) total = std::max(total, e.offset + e.nbytes);
    wf.blobs.resize(total);
    // entries may appear in any order; read sequentially then index by offset
    std::vector<uint8_t> rest;
    {
        uint8_t buf[1 << 16];
        size_t got;
        while ((got = std::fread(buf, 1, sizeof buf, fh.f)) > 0)
            rest.insert(rest.end(), buf, buf + got);
    }
    if (rest.size() < total)
        throw FormatError(path + ": blob section has " + std::to_string(rest.size()) +
                          " bytes, header expects " + std::to_string(total));
    std::copy(rest.begin(), rest.begin() + static_cast<int64_t>(total), wf.blobs.begin());
    return wf;
}

}  // namespace detail

// fills the model's tensors by name; the file must cover the model exactly
inline void load_weights_into(Model<float>& m, const std::string& path) {
    auto wf = detail::read_weights_file(path);
    auto fill = [&](std::vector<NamedParam<float>>& list) {
        for (auto& p : list) {
            auto it = wf.entries.find(p.name);
            if (it == wf.entries.end())
                throw FormatError(path + ": missing parameter " + p.name);
            const auto& e = it->second;
            if (!(e.shape == p.tensor.shape()))
                throw FormatError(path + ": parameter " + p.name + " has shape " +
                                  e.shape.str() + ", model expects " + p.tensor.shape().str());
            if (e.nbytes != static_cast<uint64_t>(p.tensor.numel()) * 4)
                throw FormatError(path + ": parameter " + p.name + " byte count mismatch");
            std::memcpy(p.tensor.ptr(), wf.blobs.data() + e.offset, e.nbytes);
            wf.entries.erase(it);
        }
    };
    fill(m.params);
    fill(m.buffers);
    if (!wf.entries.empty())
        throw FormatError(path + ": unexpected parameter " + wf.entries.begin()->first);
}

// builds the model the checkpoint describes and fills it
inline Model<float> load_weights(const std::string& path) {
    const auto wf = detail::read_weights_file(path);
    Model<float> m = Model<float>::build(wf.config, 0);
    load_weights_into(m, path);
    return m;
}

}  // namespace mcseg
