#pragma once

// Planar float images in [0,1], binary masks, PNG/JPEG codecs and the two
// resamplers the pipeline needs (bilinear for frames, nearest for masks).

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "mcseg/common.hpp"

namespace mcseg {

// c planes of h*w floats
struct Image {
    int c = 0, h = 0, w = 0;
    std::vector<float> v;

    static Image zeros(int c, int h, int w) {
        Image im;
        im.c = c;
        im.h = h;
        im.w = w;
        im.v.assign(static_cast<size_t>(c) * h * w, 0.f);
        return im;
    }

    float& at(int ci, int y, int x) {
        return v[(static_cast<size_t>(ci) * h + y) * w + x];
    }
    float at(int ci, int y, int x) const {
        return v[(static_cast<size_t>(ci) * h + y) * w + x];
    }
    float* plane(int ci) { return v.data() + static_cast<size_t>(ci) * h * w; }
    const float* plane(int ci) const { return v.data() + static_cast<size_t>(ci) * h * w; }
    int64_t numel() const { return static_cast<int64_t>(c) * h * w; }
};

// values are 0 or 1
struct Mask {
    int h = 0, w = 0;
    std::vector<uint8_t> v;

    static Mask zeros(int h, int w) {
        Mask m;
        m.h = h;
        m.w = w;
        m.v.assign(static_cast<size_t>(h) * w, 0);
        return m;
    }

    uint8_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
};

namespace detail {

struct FileHandle {
    FILE* f = nullptr;
    explicit FileHandle(const std::string& path, const char* mode) : f(std::fopen(path.c_str(), mode)) {}
    ~FileHandle() {
        if (f) std::fclose(f);
    }
    FileHandle(const FileHandle&) = delete;
    FileHandle& operator=(const FileHandle&) = delete;
};

// raw byte samples per pixel after 16->8 and bit-packing normalization;
// palette images keep their indices (annotation labels live there)
struct RawPng {
    int w = 0, h = 0, channels = 0;
    std::vector<uint8_t> bytes;  // h * w * channels
};

inline RawPng read_png_raw(const std::string& path, bool expand_to_rgb) {
    FileHandle fh(path, "rb");
    if (!fh.f) throw IoError("cannot open " + path);

    png_byte sig[8];
    if (std::fread(sig, 1, 8, fh.f) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw FormatError(path + ": not a PNG file");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError(path + ": libpng initialization failed");
    }

    RawPng out;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError(path + ": corrupt PNG");
    }

    png_init_io(png, fh.f);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (depth < 8) png_set_packing(png);
    if (expand_to_rgb) {
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
            png_set_gray_to_rgb(png);
        if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
        png_set_strip_alpha(png);
    }
    png_read_update_info(png, info);

    out.w = static_cast<int>(png_get_image_width(png, info));
    out.h = static_cast<int>(png_get_image_height(png, info));
    out.channels = static_cast<int>(png_get_channels(png, info));
    const size_t stride = png_get_rowbytes(png, info);
    out.bytes.resize(static_cast<size_t>(out.h) * stride);
    rows.resize(static_cast<size_t>(out.h));
    for (int y = 0; y < out.h; ++y) rows[static_cast<size_t>(y)] = out.bytes.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

struct JpegErr {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
};

inline void jpeg_throw(j_common_ptr cinfo) {
    std::longjmp(static_cast<JpegErr*>(reinterpret_cast<void*>(cinfo->err))->jump, 1);
}

inline Image read_jpeg(const std::string& path) {
    FileHandle fh(path, "rb");
    if (!fh.f) throw IoError("cannot open " + path);

    jpeg_decompress_struct cinfo;
    JpegErr err;
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_throw;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw FormatError(path + ": corrupt JPEG");
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, fh.f);
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);

    const int w = static_cast<int>(cinfo.output_width);
    const int h = static_cast<int>(cinfo.output_height);
    Image im = Image::zeros(3, h, w);
    std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
    uint8_t* rowp = row.data();
    while (cinfo.output_scanline < cinfo.output_height) {
        const int y = static_cast<int>(cinfo.output_scanline);
        jpeg_read_scanlines(&cinfo, &rowp, 1);
        for (int x = 0; x < w; ++x)
            for (int ci = 0; ci < 3; ++ci)
                im.at(ci, y, x) = static_cast<float>(row[static_cast<size_t>(x) * 3 + ci]) / 255.f;
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return im;
}

}  // namespace detail

// 3-channel [0,1] image from a PNG or JPEG file, dispatched on the magic bytes
inline Image read_image(const std::string& path) {
    {
        detail::FileHandle fh(path, "rb");
        if (!fh.f) throw IoError("cannot open " + path);
        uint8_t magic[2] = {0, 0};
        if (std::fread(magic, 1, 2, fh.f) != 2) throw FormatError(path + ": file too short");
        if (magic[0] == 0xFF && magic[1] == 0xD8) return detail::read_jpeg(path);
    }
    auto raw = detail::read_png_raw(path, true);
    if (raw.channels != 3) throw FormatError(path + ": expected 3 channels after expansion");
    Image im = Image::zeros(3, raw.h, raw.w);
    for (int y = 0; y < raw.h; ++y)
        for (int x = 0; x < raw.w; ++x)
            for (int ci = 0; ci < 3; ++ci)
                im.at(ci, y, x) =
                    static_cast<float>(raw.bytes[(static_cast<size_t>(y) * raw.w + x) * 3 + ci]) / 255.f;
    return im;
}

// Annotation loader: any nonzero sample (palette index, gray level or RGB
// channel) marks foreground. Collapses multi-object labels to one class.
inline Mask read_mask(const std::string& path) {
    auto raw = detail::read_png_raw(path, false);
    Mask m = Mask::zeros(raw.h, raw.w);
    for (int y = 0; y < raw.h; ++y)
        for (int x = 0; x < raw.w; ++x) {
            const uint8_t* px = raw.bytes.data() + (static_cast<size_t>(y) * raw.w + x) * raw.channels;
            uint8_t fg = 0;
            for (int s = 0; s < raw.channels; ++s) fg |= px[s];
            m.at(y, x) = fg ? 1 : 0;
        }
    return m;
}

namespace detail {

inline void write_png_bytes(const std::string& path, const uint8_t* bytes, int h, int w,
                            int channels) {
    FileHandle fh(path, "wb");
    if (!fh.f) throw IoError("cannot open " + path + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError(path + ": libpng initialization failed");
    }
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y)
        rows[static_cast<size_t>(y)] = const_cast<png_bytep>(bytes + static_cast<size_t>(y) * w * channels);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError(path + ": PNG write failed");
    }
    png_init_io(png, fh.f);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace detail

// 1- or 3-channel image clamped to [0,1] and quantized to 8 bits
inline void write_png(const std::string& path, const Image& im) {
    if (im.c != 1 && im.c != 3)
        throw ShapeError("write_png: need 1 or 3 channels, got " + std::to_string(im.c));
    std::vector<uint8_t> bytes(static_cast<size_t>(im.h) * im.w * im.c);
    for (int y = 0; y < im.h; ++y)
        for (int x = 0; x < im.w; ++x)
            for (int ci = 0; ci < im.c; ++ci) {
                const float v = std::clamp(im.at(ci, y, x), 0.f, 1.f);
                bytes[(static_cast<size_t>(y) * im.w + x) * im.c + ci] =
                    static_cast<uint8_t>(std::lround(v * 255.f));
            }
    detail::write_png_bytes(path, bytes.data(), im.h, im.w, im.c);
}

inline void write_jpeg(const std::string& path, const Image& im, int quality = 95) {
    if (im.c != 3) throw ShapeError("write_jpeg: need 3 channels, got " + std::to_string(im.c));
    detail::FileHandle fh(path, "wb");
    if (!fh.f) throw IoError("cannot open " + path + " for writing");
    jpeg_compress_struct cinfo;
    detail::JpegErr err;
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = detail::jpeg_throw;
    if (setjmp(err.jump)) {
        jpeg_destroy_compress(&cinfo);
        throw IoError(path + ": JPEG write failed");
    }
    jpeg_create_compress(&cinfo);
    jpeg_stdio_dest(&cinfo, fh.f);
    cinfo.image_width = static_cast<JDIMENSION>(im.w);
    cinfo.image_height = static_cast<JDIMENSION>(im.h);
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    std::vector<uint8_t> row(static_cast<size_t>(im.w) * 3);
    uint8_t* rowp = row.data();
    while (cinfo.next_scanline < cinfo.image_height) {
        const int y = static_cast<int>(cinfo.next_scanline);
        for (int x = 0; x < im.w; ++x)
            for (int ci = 0; ci < 3; ++ci)
                row[static_cast<size_t>(x) * 3 + ci] = static_cast<uint8_t>(
                    std::lround(std::clamp(im.at(ci, y, x), 0.f, 1.f) * 255.f));
        jpeg_write_scanlines(&cinfo, &rowp, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
}

// mask written as 0/255 grayscale
inline void write_mask_png(const std::string& path, const Mask& m) {
    std::vector<uint8_t> bytes(m.v.size());
    for (size_t i = 0; i < m.v.size(); ++i) bytes[i] = m.v[i] ? 255 : 0;
    detail::write_png_bytes(path, bytes.data(), m.h, m.w, 1);
}

namespace detail {

// half-pixel-centre source coordinate tables for an arbitrary resize
template <typename T>
void resize_axis(int in, int out, std::vector<int>& i0, std::vector<int>& i1, std::vector<T>& w1) {
    i0.resize(static_cast<size_t>(out));
    i1.resize(static_cast<size_t>(out));
    w1.resize(static_cast<size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
        const double s = (i + 0.5) * scale - 0.5;
        if (s <= 0) {
            i0[i] = i1[i] = 0;
            w1[i] = T(0);
        } else if (s >= in - 1) {
            i0[i] = i1[i] = in - 1;
            w1[i] = T(0);
        } else {
            const int f = static_cast<int>(s);
            i0[i] = f;
            i1[i] = f + 1;
            w1[i] = static_cast<T>(s - f);
        }
    }
}

}  // namespace detail

inline Image bilinear_resize(const Image& im, int oh, int ow) {
    if (oh < 1 || ow < 1) throw ShapeError("bilinear_resize: target must be positive");
    if (oh == im.h && ow == im.w) return im;
    std::vector<int> y0, y1, x0, x1;
    std::vector<float> wy, wx;
    detail::resize_axis<float>(im.h, oh, y0, y1, wy);
    detail::resize_axis<float>(im.w, ow, x0, x1, wx);
    Image out = Image::zeros(im.c, oh, ow);
    for (int ci = 0; ci < im.c; ++ci) {
        const float* src = im.plane(ci);
        float* dst = out.plane(ci);
        for (int y = 0; y < oh; ++y) {
            const float b = wy[y], a = 1.f - b;
            const float* r0 = src + static_cast<size_t>(y0[y]) * im.w;
            const float* r1 = src + static_cast<size_t>(y1[y]) * im.w;
            for (int x = 0; x < ow; ++x) {
                const float d = wx[x], c = 1.f - d;
                dst[static_cast<size_t>(y) * ow + x] =
                    a * (c * r0[x0[x]] + d * r0[x1[x]]) + b * (c * r1[x0[x]] + d * r1[x1[x]]);
            }
        }
    }
    return out;
}

// nearest neighbour keeps mask values binary
inline Mask nearest_resize(const Mask& m, int oh, int ow) {
    if (oh < 1 || ow < 1) throw ShapeError("nearest_resize: target must be positive");
    if (oh == m.h && ow == m.w) return m;
    Mask out = Mask::zeros(oh, ow);
    for (int y = 0; y < oh; ++y) {
        const int sy = std::min(m.h - 1, static_cast<int>((y + 0.5) * m.h / oh));
        for (int x = 0; x < ow; ++x) {
            const int sx = std::min(m.w - 1, static_cast<int>((x + 0.5) * m.w / ow));
            out.at(y, x) = m.at(sy, sx);
        }
    }
    return out;
}

// channel-mean grayscale, used by the flow solver
inline Image to_gray(const Image& im) {
    Image g = Image::zeros(1, im.h, im.w);
    for (int y = 0; y < im.h; ++y)
        for (int x = 0; x < im.w; ++x) {
            float s = 0;
            for (int ci = 0; ci < im.c; ++ci) s += im.at(ci, y, x);
            g.at(0, y, x) = s / static_cast<float>(im.c);
        }
    return g;
}

}  // namespace mcseg
