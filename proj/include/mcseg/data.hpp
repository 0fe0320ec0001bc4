#pragma once

// Dataset plumbing: DAVIS-convention directory scanning, sequence-level
// cross-validation folds, synthetic clip generation, and seeded batch
// assembly with motion cues computed from the resized frames.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mcseg/image.hpp"
#include "mcseg/model.hpp"
#include "mcseg/motion.hpp"
#include "mcseg/ops.hpp"

namespace mcseg {

enum class CameraTag { stationary, moving, unknown };

struct SequenceEntry {
    std::string name;
    std::vector<std::string> frames;       // sorted image paths
    std::vector<std::string> annotations;  // parallel to frames, "" when absent
    CameraTag camera = CameraTag::unknown;

    int annotation_count() const {
        int n = 0;
        for (const auto& a : annotations) n += a.empty() ? 0 : 1;
        return n;
    }
};

struct DatasetIndex {
    std::vector<SequenceEntry> sequences;
    int target_h = 384, target_w = 384;

    void set_target(int h, int w) {
        if (h < 32 || w < 32 || h % 32 != 0 || w % 32 != 0)
            throw ConfigError("resolution: target dims must be positive multiples of 32, got " +
                              std::to_string(h) + "x" + std::to_string(w));
        target_h = h;
        target_w = w;
    }

    std::vector<std::string> sequence_names() const {
        std::vector<std::string> out;
        for (const auto& s : sequences) out.push_back(s.name);
        return out;
    }

    const SequenceEntry& find(const std::string& name) const {
        for (const auto& s : sequences)
            if (s.name == name) return s;
        throw ConfigError("unknown sequence '" + name + "'");
    }
};

namespace detail {

inline bool has_image_ext(const std::filesystem::path& p) {
    auto e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return e == ".png" || e == ".jpg" || e == ".jpeg";
}

inline std::vector<std::filesystem::path> sorted_dir(const std::filesystem::path& d) {
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(d))
        if (e.is_regular_file()) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

inline std::vector<std::filesystem::path> sorted_subdirs(const std::filesystem::path& d) {
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(d))
        if (e.is_directory()) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace detail

// Layout: root/images/<seq>/NNNNN.{png,jpg,jpeg} plus
// root/annotations/<seq>/NNNNN.png. Every annotation must match a frame stem.
inline DatasetIndex scan_davis_layout(const std::string& root,
                                      const std::set<std::string>& stationary = {},
                                      const std::set<std::string>& moving = {}) {
    namespace fs = std::filesystem;
    const fs::path images = fs::path(root) / "images";
    if (!fs::is_directory(images))
        throw IoError("no image directory at " + images.string());

    DatasetIndex index;
    for (const auto& seq_dir : detail::sorted_subdirs(images)) {
        SequenceEntry seq;
        seq.name = seq_dir.filename().string();
        std::map<std::string, size_t> stem_to_slot;
        for (const auto& f : detail::sorted_dir(seq_dir)) {
            if (!detail::has_image_ext(f)) continue;
            stem_to_slot[f.stem().string()] = seq.frames.size();
            seq.frames.push_back(f.string());
        }
        if (seq.frames.empty()) continue;
        seq.annotations.assign(seq.frames.size(), "");

        const fs::path ann_dir = fs::path(root) / "annotations" / seq.name;
        if (fs::is_directory(ann_dir)) {
            for (const auto& a : detail::sorted_dir(ann_dir)) {
                if (!detail::has_image_ext(a)) continue;
                auto it = stem_to_slot.find(a.stem().string());
                if (it == stem_to_slot.end())
                    throw FormatError("annotation " + a.string() +
                                      " has no matching frame in " + seq_dir.string());
                seq.annotations[it->second] = a.string();
            }
        }
        if (stationary.count(seq.name))
            seq.camera = CameraTag::stationary;
        else if (moving.count(seq.name))
            seq.camera = CameraTag::moving;
        index.sequences.push_back(std::move(seq));
    }
    if (index.sequences.empty())
        throw IoError("no sequences under " + images.string());
    return index;
}

struct Fold {
    std::vector<std::string> train, test;
    bool degenerate = false;
};

// sequence-level partition into k near-equal folds, deterministic in seed
inline std::vector<Fold> make_folds(const DatasetIndex& index, int k, uint64_t seed) {
    const auto names = index.sequence_names();
    const int n = static_cast<int>(names.size());
    if (k < 1) throw ConfigError("folds: k must be >= 1");
    if (k > n)
        throw ConfigError("folds: k=" + std::to_string(k) + " exceeds sequence count " +
                          std::to_string(n));
    if (k == 1) {
        Fold f;
        f.train = names;
        f.test = names;
        f.degenerate = true;
        return {f};
    }
    std::vector<std::string> order = names;
    Rng rng(mix_seed(seed, 0x666f6c64u));
    rng.shuffle(order);
    std::vector<Fold> folds(static_cast<size_t>(k));
    for (int i = 0; i < n; ++i) folds[static_cast<size_t>(i % k)].test.push_back(order[static_cast<size_t>(i)]);
    for (auto& f : folds) {
        std::sort(f.test.begin(), f.test.end());
        for (const auto& name : names)
            if (!std::binary_search(f.test.begin(), f.test.end(), name)) f.train.push_back(name);
    }
    return folds;
}

enum class ShapeKind { rect, disc };
enum class TextureKind { plain, noise };

struct SynthSpec {
    int height = 96, width = 96;
    ShapeKind shape = ShapeKind::rect;
    int size = 16;  // square side / disc diameter in px
    TextureKind texture = TextureKind::noise;
    double vx = 1.0, vy = 0.0;      // object velocity, px/frame
    bool distractor = false;        // static copy with identical texture
    double pan_x = 0.0, pan_y = 0.0;  // background velocity, px/frame
    int frames = 8;
    uint64_t seed = 0;

    void validate() const {
        if (height < 8 || width < 8) throw ConfigError("synth: canvas too small");
        if (size < 2 || size > std::min(height, width) / 2)
            throw ConfigError("synth: object size must be in [2, min(H,W)/2]");
        if (frames < 1) throw ConfigError("synth: need at least one frame");
    }
};

struct SynthClip {
    std::vector<Image> frames;
    std::vector<Mask> masks;
};

namespace detail {

inline bool shape_hit(ShapeKind kind, int size, int dy, int dx) {
    if (kind == ShapeKind::rect) return true;  // caller already bounds dy/dx to [0, size)
    const double c = (size - 1) / 2.0;
    const double r = size / 2.0;
    return (dy - c) * (dy - c) + (dx - c) * (dx - c) <= r * r;
}

}  // namespace detail

// Deterministic clip: textured object moving over a panning background, with
// an optional static distractor sharing the object's exact appearance. The
// ground truth is the moving object's support only.
inline SynthClip synth_generate(const SynthSpec& spec) {
    spec.validate();
    Rng rng(mix_seed(spec.seed, 0x73796e74u));

    // object texture, reused verbatim by the distractor
    std::vector<float> tex(static_cast<size_t>(spec.size) * spec.size * 3);
    if (spec.texture == TextureKind::noise) {
        for (auto& t : tex) t = static_cast<float>(rng.uniform(0.55, 1.0));
    } else {
        const float r = static_cast<float>(rng.uniform(0.55, 1.0));
        const float g = static_cast<float>(rng.uniform(0.55, 1.0));
        const float b = static_cast<float>(rng.uniform(0.55, 1.0));
        for (size_t i = 0; i < tex.size(); i += 3) {
            tex[i] = r;
            tex[i + 1] = g;
            tex[i + 2] = b;
        }
    }

    // start position drawn from the range keeping the whole path on canvas;
    // an empty range means the requested velocity cannot fit
    std::vector<int> dys(static_cast<size_t>(spec.frames)), dxs(static_cast<size_t>(spec.frames));
    for (int t = 0; t < spec.frames; ++t) {
        dys[static_cast<size_t>(t)] = static_cast<int>(std::lround(spec.vy * t));
        dxs[static_cast<size_t>(t)] = static_cast<int>(std::lround(spec.vx * t));
    }
    auto start_range = [&](const std::vector<int>& d, int extent) {
        const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
        return std::pair<int, int>{-*lo, extent - spec.size - *hi};
    };
    const auto [ylo, yhi] = start_range(dys, spec.height);
    const auto [xlo, xhi] = start_range(dxs, spec.width);
    if (ylo > yhi || xlo > xhi)
        throw ConfigError("synth: object leaves the canvas at this velocity and frame count");
    const int oy0 = rng.range(ylo, yhi);
    const int ox0 = rng.range(xlo, xhi);
    std::vector<std::pair<int, int>> pos(static_cast<size_t>(spec.frames));
    for (int t = 0; t < spec.frames; ++t)
        pos[static_cast<size_t>(t)] = {oy0 + dys[static_cast<size_t>(t)],
                                       ox0 + dxs[static_cast<size_t>(t)]};

    // distractor placement must dodge the whole object path
    int dy0 = -1, dx0 = -1;
    if (spec.distractor) {
        for (int attempt = 0; attempt < 200; ++attempt) {
            const int y = rng.range(0, spec.height - spec.size);
            const int x = rng.range(0, spec.width - spec.size);
            bool clear = true;
            for (const auto& [oy, ox] : pos)
                clear = clear && (y + spec.size <= oy || oy + spec.size <= y ||
                                  x + spec.size <= ox || ox + spec.size <= x);
            if (clear) {
                dy0 = y;
                dx0 = x;
                break;
            }
        }
        if (dy0 < 0)
            throw ConfigError("synth: no room for a distractor clear of the object path");
    }

    // background texture on a torus so any pan length stays valid
    const int bh = spec.height, bw = spec.width;
    std::vector<float> bg(static_cast<size_t>(bh) * bw * 3);
    for (size_t i = 0; i < bg.size(); ++i) bg[i] = static_cast<float>(rng.uniform(0.05, 0.35));

    SynthClip clip;
    for (int t = 0; t < spec.frames; ++t) {
        Image im = Image::zeros(3, spec.height, spec.width);
        Mask mask = Mask::zeros(spec.height, spec.width);
        const int sy = static_cast<int>(std::lround(spec.pan_y * t));
        const int sx = static_cast<int>(std::lround(spec.pan_x * t));
        for (int y = 0; y < spec.height; ++y)
            for (int x = 0; x < spec.width; ++x) {
                const int by = ((y + sy) % bh + bh) % bh;
                const int bx = ((x + sx) % bw + bw) % bw;
                const size_t o = (static_cast<size_t>(by) * bw + bx) * 3;
                for (int ci = 0; ci < 3; ++ci) im.at(ci, y, x) = bg[o + static_cast<size_t>(ci)];
            }
        auto stamp = [&](int top, int left, bool is_object) {
            for (int dy = 0; dy < spec.size; ++dy)
                for (int dx = 0; dx < spec.size; ++dx) {
                    if (!detail::shape_hit(spec.shape, spec.size, dy, dx)) continue;
                    const size_t o = (static_cast<size_t>(dy) * spec.size + dx) * 3;
                    for (int ci = 0; ci < 3; ++ci)
                        im.at(ci, top + dy, left + dx) = tex[o + static_cast<size_t>(ci)];
                    if (is_object) mask.at(top + dy, left + dx) = 1;
                }
        };
        if (spec.distractor) stamp(dy0, dx0, false);
        const auto& [oy, ox] = pos[static_cast<size_t>(t)];
        stamp(oy, ox, true);
        clip.frames.push_back(std::move(im));
        clip.masks.push_back(std::move(mask));
    }
    return clip;
}

// writes a clip in the scanned layout so downstream tools are source-agnostic
inline void write_clip(const std::string& root, const std::string& name, const SynthClip& clip) {
    namespace fs = std::filesystem;
    const fs::path img_dir = fs::path(root) / "images" / name;
    const fs::path ann_dir = fs::path(root) / "annotations" / name;
    fs::create_directories(img_dir);
    fs::create_directories(ann_dir);
    char buf[16];
    for (size_t t = 0; t < clip.frames.size(); ++t) {
        std::snprintf(buf, sizeof buf, "%05zu.png", t);
        write_png((img_dir / buf).string(), clip.frames[t]);
        write_mask_png((ann_dir / buf).string(), clip.masks[t]);
    }
}

struct Sample {
    Tensor4<float> frame;  // 1 x 3 x th x tw
    Tensor4<float> cue;    // undefined for the single variant
    Mask mask;             // th x tw, empty (h == 0) when unannotated
    std::string sequence;
    int t = 0;
    int fold = -1;
    int orig_h = 0, orig_w = 0;  // frame dims before the resize
};

struct Batch {
    Tensor4<float> frames;  // n x 3 x th x tw
    Tensor4<float> cues;    // undefined for the single variant
    LabelMap labels;        // n x th x tw
    std::vector<Sample> samples;  // tensor-free metadata carriers
};

struct BatchOptions {
    Variant variant = Variant::dual_diff;
    int batch_size = 16;
    uint64_t seed = 0;
    int epoch = 0;
    int fold = -1;
    std::optional<HornSchunckParams> flow;

    void validate() const {
        if (batch_size < 1) throw ConfigError("batch_size: must be >= 1");
        if (variant == Variant::dual_flow) {
            if (!flow) throw ConfigError("dual_flow: flow parameters unset");
            flow->validate();
        }
    }
};

namespace detail {

inline Tensor4<float> image_to_tensor(const Image& im) {
    Tensor4<float> t = Tensor4<float>::zeros({1, im.c, im.h, im.w});
    std::copy(im.v.begin(), im.v.end(), t.ptr());
    return t;
}

}  // namespace detail

// cue for frame t pairs it with t+1 (last frame falls back to t-1, matching
// the absolute diff); single-frame sequences get an all-zero cue
inline Image compute_cue(const Image& cur, const Image* partner, Variant variant,
                         const std::optional<HornSchunckParams>& flow) {
    if (!partner) return Image::zeros(3, cur.h, cur.w);
    if (variant == Variant::dual_diff) return frame_diff(cur, *partner);
    const FlowField f = horn_schunck(cur, *partner, *flow);
    return flow_to_rgb(f);
}

// one fully prepared sample at the index's target resolution
inline Sample load_sample(const DatasetIndex& index, const SequenceEntry& seq, int t,
                          const BatchOptions& opt) {
    opt.validate();
    const int th = index.target_h, tw = index.target_w;
    const Image raw = read_image(seq.frames[static_cast<size_t>(t)]);
    const Image frame = bilinear_resize(raw, th, tw);

    Sample s;
    s.sequence = seq.name;
    s.t = t;
    s.fold = opt.fold;
    s.orig_h = raw.h;
    s.orig_w = raw.w;
    s.frame = detail::image_to_tensor(frame);
    if (is_dual(opt.variant)) {
        const int n = static_cast<int>(seq.frames.size());
        std::optional<Image> partner;
        if (n > 1) {
            const int pt = t + 1 < n ? t + 1 : t - 1;
            partner = bilinear_resize(read_image(seq.frames[static_cast<size_t>(pt)]), th, tw);
        }
        s.cue = detail::image_to_tensor(
            compute_cue(frame, partner ? &*partner : nullptr, opt.variant, opt.flow));
    }
    const auto& ann = seq.annotations[static_cast<size_t>(t)];
    if (!ann.empty()) s.mask = nearest_resize(read_mask(ann), th, tw);
    return s;
}

// annotated (sequence, frame) pairs from the named sequences, index order
inline std::vector<std::pair<int, int>> annotated_samples(
    const DatasetIndex& index, const std::vector<std::string>& sequences) {
    std::set<std::string> wanted(sequences.begin(), sequences.end());
    std::vector<std::pair<int, int>> out;
    for (size_t si = 0; si < index.sequences.size(); ++si) {
        const auto& seq = index.sequences[si];
        if (!wanted.empty() && !wanted.count(seq.name)) continue;
        for (size_t fi = 0; fi < seq.frames.size(); ++fi)
            if (!seq.annotations[fi].empty())
                out.emplace_back(static_cast<int>(si), static_cast<int>(fi));
    }
    return out;
}

// Lazily assembled shuffled batches over the annotated samples of the chosen
// sequences. Order is a pure function of (seed, epoch); the final partial
// batch is emitted.
class BatchStream {
public:
    BatchStream(const DatasetIndex& index, std::vector<std::string> sequences, BatchOptions opt)
        : index_(&index), opt_(std::move(opt)) {
        opt_.validate();
        order_ = annotated_samples(index, sequences);
        Rng rng(mix_seed(opt_.seed, static_cast<uint64_t>(opt_.epoch)));
        rng.shuffle(order_);
    }

    int64_t sample_count() const { return static_cast<int64_t>(order_.size()); }
    int64_t batch_count() const {
        return (sample_count() + opt_.batch_size - 1) / opt_.batch_size;
    }

    std::optional<Batch> next() {
        if (cursor_ >= order_.size()) return std::nullopt;
        const size_t take =
            std::min(static_cast<size_t>(opt_.batch_size), order_.size() - cursor_);
        const int th = index_->target_h, tw = index_->target_w;

        Batch b;
        b.frames = Tensor4<float>::zeros({static_cast<int>(take), 3, th, tw});
        if (is_dual(opt_.variant))
            b.cues = Tensor4<float>::zeros({static_cast<int>(take), 3, th, tw});
        b.labels = LabelMap{static_cast<int>(take), th, tw,
                            std::vector<uint8_t>(take * static_cast<size_t>(th) * tw, 0)};
        const int64_t plane = static_cast<int64_t>(3) * th * tw;
        for (size_t i = 0; i < take; ++i) {
            const auto [si, fi] = order_[cursor_ + i];
            Sample s = load_sample(*index_, index_->sequences[static_cast<size_t>(si)], fi, opt_);
            std::copy(s.frame.ptr(), s.frame.ptr() + plane,
                      b.frames.ptr() + static_cast<int64_t>(i) * plane);
            if (is_dual(opt_.variant))
                std::copy(s.cue.ptr(), s.cue.ptr() + plane,
                          b.cues.ptr() + static_cast<int64_t>(i) * plane);
            std::copy(s.mask.v.begin(), s.mask.v.end(),
                      b.labels.v.begin() + static_cast<int64_t>(i) * th * tw);
            s.frame = Tensor4<float>();
            s.cue = Tensor4<float>();
            b.samples.push_back(std::move(s));
        }
        cursor_ += take;
        return b;
    }

private:
    const DatasetIndex* index_;
    BatchOptions opt_;
    std::vector<std::pair<int, int>> order_;
    size_t cursor_ = 0;
};

}  // namespace mcseg
