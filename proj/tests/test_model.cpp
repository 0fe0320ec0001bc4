#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcseg/adam.hpp"
#include "mcseg/model.hpp"

using namespace mcseg;
namespace fs = std::filesystem;

namespace {

NetConfig toy_config(Variant v) {
    NetConfig c;
    c.width_mult = 0.25;
    c.blocks_per_stage = {1, 1, 1, 1};
    c.variant = v;
    return c;
}

NetConfig tiny_config(Variant v) {
    NetConfig c;
    c.width_mult = 0.125;
    c.blocks_per_stage = {1, 1, 1, 1};
    c.variant = v;
    return c;
}

Tensor4<float> random_input(Shape4 s, uint64_t seed) {
    Rng rng(seed);
    auto t = Tensor4<float>::zeros(s);
    for (int64_t i = 0; i < t.numel(); ++i)
        t.ptr()[i] = static_cast<float>(rng.uniform());
    return t;
}

bool same_bits(const Tensor4<float>& a, const Tensor4<float>& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.ptr(), b.ptr(), sizeof(float) * static_cast<size_t>(a.numel())) == 0;
}

fs::path temp_dir() {
    auto d = fs::temp_directory_path() / "mcseg_model_test";
    fs::create_directories(d);
    return d;
}

std::vector<uint8_t> file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(f),
                                std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("net config validation") {
    NetConfig c;
    REQUIRE_NOTHROW(c.validate());

    NetConfig bad = c;
    bad.width_mult = 0.0;
    REQUIRE_THROWS_MATCHES(bad.validate(), ConfigError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("width_mult")));

    bad = c;
    bad.width_mult = 0.005;  // 32 * 0.005 rounds to 0
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);

    bad = c;
    bad.blocks_per_stage = {3, 0, 6, 3};
    REQUIRE_THROWS_MATCHES(bad.validate(), ConfigError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("blocks_per_stage")));

    bad = c;
    bad.num_classes = 3;
    REQUIRE_THROWS_MATCHES(bad.validate(), ConfigError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("num_classes")));

    bad = c;
    bad.bottleneck_channels = 0;
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("net config json round trip") {
    NetConfig c = toy_config(Variant::dual_flow);
    c.bottleneck_channels = 768;
    nlohmann::ordered_json j;
    to_json(j, c);
    const auto back = j.get<NetConfig>();
    REQUIRE(back == c);
    REQUIRE(j["variant"] == "dual_flow");

    nlohmann::json badv = j;
    badv["variant"] = "triple";
    REQUIRE_THROWS_AS(badv.get<NetConfig>(), ConfigError);
}

TEST_CASE("encoder stage geometry at full scale") {
    // One forward of the full-width encoder pins the canonical feature
    // pyramid: strides 4, 4, 8, 16, 32 and channels 64..2048 at 224 input.
    NetConfig c;  // defaults: width 1.0, blocks 3,4,6,3
    auto enc = build_encoder<float>(c, 1);
    auto x = random_input({1, 3, 224, 224}, 99);
    NoGradGuard ng;
    auto out = enc(x, BnMode::eval);

    const int want_hw[5] = {56, 56, 28, 14, 7};
    const int want_c[5] = {64, 256, 512, 1024, 2048};
    for (int i = 0; i < 5; ++i) {
        const Shape4 s = out[static_cast<size_t>(i)].shape();
        CAPTURE(i);
        REQUIRE(s.h == want_hw[i]);
        REQUIRE(s.w == want_hw[i]);
        REQUIRE(s.c == want_c[i]);
        REQUIRE(s.n == 1);
    }
}

TEST_CASE("encoder geometry at quarter width") {
    auto enc = build_encoder<float>(toy_config(Variant::single), 1);
    auto x = random_input({2, 3, 96, 96}, 5);
    NoGradGuard ng;
    auto out = enc(x, BnMode::eval);
    const int want_hw[5] = {24, 24, 12, 6, 3};
    const int want_c[5] = {16, 64, 128, 256, 512};
    for (int i = 0; i < 5; ++i) {
        const Shape4 s = out[static_cast<size_t>(i)].shape();
        CAPTURE(i);
        REQUIRE(s.h == want_hw[i]);
        REQUIRE(s.c == want_c[i]);
        REQUIRE(s.n == 2);
    }
}

TEST_CASE("fusion bottleneck shape at full scale") {
    NetConfig c;
    c.variant = Variant::dual_diff;
    auto m = Model<float>::build(c, 3);
    // two 2048-channel encoders concatenated, projected to 1024
    const Shape4 fw = m.fusion.w.shape();
    REQUIRE(fw.n == 1024);
    REQUIRE(fw.c == 4096);
    REQUIRE(fw.h == 1);
    REQUIRE(fw.w == 1);

    NetConfig s = c;
    s.variant = Variant::single;
    auto ms = Model<float>::build(s, 3);
    REQUIRE(ms.fusion.w.shape().c == 2048);
    REQUIRE(ms.fusion.w.shape().n == 1024);
}

TEST_CASE("model forward produces per-pixel logits") {
    auto m = Model<float>::build(toy_config(Variant::dual_diff), 11);
    auto frame = random_input({2, 3, 96, 96}, 1);
    auto cue = random_input({2, 3, 96, 96}, 2);
    NoGradGuard ng;
    auto logits = m.forward(frame, cue, BnMode::eval);
    REQUIRE(logits.shape() == Shape4{2, 2, 96, 96});
    for (int64_t i = 0; i < logits.numel(); ++i)
        REQUIRE(std::isfinite(logits.ptr()[i]));

    auto ms = Model<float>::build(toy_config(Variant::single), 11);
    auto ls = ms.forward(frame, Tensor4<float>(), BnMode::eval);
    REQUIRE(ls.shape() == Shape4{2, 2, 96, 96});
}

TEST_CASE("model forward rejects bad inputs") {
    auto m = Model<float>::build(tiny_config(Variant::dual_diff), 1);
    NoGradGuard ng;
    auto f40 = random_input({1, 3, 40, 40}, 1);
    REQUIRE_THROWS_MATCHES(m.forward(f40, f40, BnMode::eval), ShapeError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("divisible by 32")));

    auto f32 = random_input({1, 3, 32, 32}, 1);
    REQUIRE_THROWS_MATCHES(m.forward(f32, Tensor4<float>(), BnMode::eval), ShapeError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("dual_diff")));

    auto wide = random_input({1, 3, 32, 64}, 2);
    REQUIRE_THROWS_AS(m.forward(f32, wide, BnMode::eval), ShapeError);

    auto ms = Model<float>::build(tiny_config(Variant::single), 1);
    REQUIRE_THROWS_AS(ms.forward(f32, f32, BnMode::eval), ShapeError);

    auto gray = random_input({1, 1, 32, 32}, 3);
    REQUIRE_THROWS_AS(m.forward(gray, gray, BnMode::eval), ShapeError);
}

TEST_CASE("parameter names are unique and registration is deterministic") {
    auto a = Model<float>::build(toy_config(Variant::dual_diff), 17);
    auto b = Model<float>::build(toy_config(Variant::dual_diff), 17);

    std::set<std::string> names;
    for (const auto& p : a.params) names.insert(p.name);
    for (const auto& p : a.buffers) names.insert(p.name);
    REQUIRE(names.size() == a.params.size() + a.buffers.size());

    REQUIRE(a.params.size() == b.params.size());
    for (size_t i = 0; i < a.params.size(); ++i) {
        REQUIRE(a.params[i].name == b.params[i].name);
        REQUIRE(same_bits(a.params[i].tensor, b.params[i].tensor));
    }

    auto c = Model<float>::build(toy_config(Variant::dual_diff), 18);
    bool any_diff = false;
    for (size_t i = 0; i < a.params.size(); ++i)
        any_diff = any_diff || !same_bits(a.params[i].tensor, c.params[i].tensor);
    REQUIRE(any_diff);
}

TEST_CASE("dual variant has more parameters than single") {
    const auto cfg = toy_config(Variant::dual_diff);
    auto dual = Model<float>::build(cfg, 1);
    NetConfig scfg = cfg;
    scfg.variant = Variant::single;
    auto single = Model<float>::build(scfg, 1);
    REQUIRE(dual.param_count() > single.param_count());
}

TEST_CASE("eval forward is deterministic and batch equivariant") {
    auto m = Model<float>::build(tiny_config(Variant::dual_diff), 23);
    auto frame = random_input({2, 3, 32, 32}, 1);
    auto cue = random_input({2, 3, 32, 32}, 2);
    NoGradGuard ng;
    auto l1 = m.forward(frame, cue, BnMode::eval);
    auto l2 = m.forward(frame, cue, BnMode::eval);
    REQUIRE(same_bits(l1, l2));

    // swap the two samples; outputs must swap bit for bit
    auto sf = Tensor4<float>::zeros({2, 3, 32, 32});
    auto sc = Tensor4<float>::zeros({2, 3, 32, 32});
    const int64_t plane = 3 * 32 * 32;
    std::memcpy(sf.ptr(), frame.ptr() + plane, sizeof(float) * plane);
    std::memcpy(sf.ptr() + plane, frame.ptr(), sizeof(float) * plane);
    std::memcpy(sc.ptr(), cue.ptr() + plane, sizeof(float) * plane);
    std::memcpy(sc.ptr() + plane, cue.ptr(), sizeof(float) * plane);
    auto ls = m.forward(sf, sc, BnMode::eval);
    const int64_t out_plane = 2 * 32 * 32;
    REQUIRE(std::memcmp(ls.ptr(), l1.ptr() + out_plane, sizeof(float) * out_plane) == 0);
    REQUIRE(std::memcmp(ls.ptr() + out_plane, l1.ptr(), sizeof(float) * out_plane) == 0);
}

TEST_CASE("a few optimizer steps reduce the loss") {
    for (uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        CAPTURE(seed);
        auto m = Model<float>::build(tiny_config(Variant::dual_diff), seed);
        auto frame = random_input({1, 3, 32, 32}, seed * 100 + 1);
        auto cue = random_input({1, 3, 32, 32}, seed * 100 + 2);
        LabelMap target{1, 32, 32, std::vector<uint8_t>(32 * 32, 0)};
        for (int y = 0; y < 32; ++y)
            for (int x = 16; x < 32; ++x) target.v[static_cast<size_t>(y) * 32 + x] = 1;

        AdamState<float> opt;
        opt.lr = 1e-3f;
        std::vector<double> losses;
        for (int step = 0; step < 3; ++step) {
            m.zero_grads();
            auto logits = m.forward(frame, cue, BnMode::train);
            auto loss = softmax_cross_entropy(logits, target);
            loss.backward();
            losses.push_back(static_cast<double>(loss.item()));
            adam_step(m.params, opt);
        }
        REQUIRE(losses.back() < losses.front());
    }
}

TEST_CASE("weights file layout") {
    auto m = Model<float>::build(tiny_config(Variant::single), 5);
    const auto path = (temp_dir() / "layout.mcsegw").string();
    save_weights(m, path);

    const auto bytes = file_bytes(path);
    REQUIRE(bytes.size() > 16);
    REQUIRE(std::memcmp(bytes.data(), "MCSEGW01", 8) == 0);
    uint64_t hlen = 0;
    std::memcpy(&hlen, bytes.data() + 8, 8);
    REQUIRE(16 + hlen < bytes.size());

    const auto header = nlohmann::json::parse(
        std::string(reinterpret_cast<const char*>(bytes.data()) + 16, hlen));
    REQUIRE(header.at("config").at("variant") == "single");

    // tensor table is contiguous from offset zero and covers the tail exactly
    uint64_t expect_offset = 0;
    for (const auto& t : header.at("tensors")) {
        REQUIRE(t.at("dtype") == "f32");
        REQUIRE(t.at("offset").get<uint64_t>() == expect_offset);
        const auto shape = t.at("shape").get<std::vector<int64_t>>();
        REQUIRE(shape.size() == 4);
        const uint64_t numel = static_cast<uint64_t>(shape[0] * shape[1] * shape[2] * shape[3]);
        REQUIRE(t.at("nbytes").get<uint64_t>() == numel * 4);
        expect_offset += numel * 4;
    }
    REQUIRE(bytes.size() == 16 + hlen + expect_offset);

    // first blob is the stem kernel, byte for byte
    const auto& first = header.at("tensors").at(0);
    REQUIRE(first.at("name") == "enc_frame.stem.conv.weight");
    REQUIRE(std::memcmp(bytes.data() + 16 + hlen, m.params[0].tensor.ptr(),
                        first.at("nbytes").get<size_t>()) == 0);
}

TEST_CASE("checkpoint round trip is bit exact") {
    auto m = Model<float>::build(toy_config(Variant::dual_diff), 31);
    // perturb running stats so buffers carry non-default values
    {
        NoGradGuard ng;
        auto frame = random_input({2, 3, 96, 96}, 7);
        auto cue = random_input({2, 3, 96, 96}, 8);
        (void)m.forward(frame, cue, BnMode::train);
    }
    const auto dir = temp_dir();
    const auto path = (dir / "round.mcsegw").string();
    save_weights(m, path);

    auto loaded = load_weights(path);
    REQUIRE(loaded.config == m.config);
    REQUIRE(loaded.params.size() == m.params.size());
    for (size_t i = 0; i < m.params.size(); ++i) {
        REQUIRE(loaded.params[i].name == m.params[i].name);
        REQUIRE(same_bits(loaded.params[i].tensor, m.params[i].tensor));
    }
    for (size_t i = 0; i < m.buffers.size(); ++i)
        REQUIRE(same_bits(loaded.buffers[i].tensor, m.buffers[i].tensor));

    // a second save of the loaded model reproduces the file byte for byte
    const auto path2 = (dir / "round2.mcsegw").string();
    save_weights(loaded, path2);
    REQUIRE(file_bytes(path) == file_bytes(path2));

    // and the loaded model computes identical logits
    NoGradGuard ng;
    auto frame = random_input({1, 3, 96, 96}, 9);
    auto cue = random_input({1, 3, 96, 96}, 10);
    REQUIRE(same_bits(m.forward(frame, cue, BnMode::eval),
                      loaded.forward(frame, cue, BnMode::eval)));
}

TEST_CASE("loading a mismatched variant names the offending parameter") {
    const auto dir = temp_dir();
    auto single = Model<float>::build(tiny_config(Variant::single), 2);
    const auto spath = (dir / "single.mcsegw").string();
    save_weights(single, spath);

    // a dual model needs cue-encoder weights the single checkpoint lacks
    auto dual = Model<float>::build(tiny_config(Variant::dual_diff), 2);
    REQUIRE_THROWS_MATCHES(load_weights_into(dual, spath), FormatError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("enc_cue") &&
                               Catch::Matchers::ContainsSubstring("missing")));

    // and the reverse direction reports the stray parameters
    const auto dpath = (dir / "dual.mcsegw").string();
    save_weights(dual, dpath);
    auto single2 = Model<float>::build(tiny_config(Variant::single), 2);
    REQUIRE_THROWS_AS(load_weights_into(single2, dpath), FormatError);
}

TEST_CASE("weights loading rejects corrupt files") {
    const auto dir = temp_dir();
    const auto bad = dir / "bad.mcsegw";
    {
        std::ofstream f(bad, std::ios::binary);
        f << "NOTAMODEL_______";
    }
    REQUIRE_THROWS_MATCHES(load_weights(bad.string()), FormatError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("MCSEGW01")));

    auto m = Model<float>::build(tiny_config(Variant::single), 3);
    const auto trunc = dir / "trunc.mcsegw";
    save_weights(m, trunc.string());
    fs::resize_file(trunc, fs::file_size(trunc) - 64);
    REQUIRE_THROWS_AS(load_weights(trunc.string()), FormatError);
}
