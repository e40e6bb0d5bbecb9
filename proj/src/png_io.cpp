#include "cellmixer/png_io.hpp"

#include <cmath>
#include <cstdio>
#include <memory>

#include <png.h>

#include "cellmixer/errors.hpp"

namespace cellmixer {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngRead {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngRead() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    }
};

struct PngWrite {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWrite() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    }
};

// Reads any grayscale PNG into 16-bit rows; rejects color inputs.
std::vector<std::uint16_t> read_gray(const std::string& path, int& w, int& h, int& bit_depth) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("cannot open PNG for reading: " + path);

    png_byte header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8) != 0)
        throw DataError("not a PNG file: " + path);

    PngRead ctx;
    ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) throw DataError("libpng: read struct allocation failed");
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) throw DataError("libpng: info struct allocation failed");
    if (setjmp(png_jmpbuf(ctx.png))) throw DataError("libpng: failed to decode " + path);

    png_init_io(ctx.png, fp.get());
    png_set_sig_bytes(ctx.png, 8);
    png_read_info(ctx.png, ctx.info);

    w = int(png_get_image_width(ctx.png, ctx.info));
    h = int(png_get_image_height(ctx.png, ctx.info));
    bit_depth = png_get_bit_depth(ctx.png, ctx.info);
    const int color = png_get_color_type(ctx.png, ctx.info);

    if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_GRAY_ALPHA)
        throw DataError("expected single-channel grayscale PNG: " + path);
    if (color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_strip_alpha(ctx.png);
    if (bit_depth < 8) {
        png_set_expand_gray_1_2_4_to_8(ctx.png);
        bit_depth = 8;
    }
    if (bit_depth == 16) png_set_swap(ctx.png); // file is big-endian
    png_read_update_info(ctx.png, ctx.info);

    std::vector<std::uint16_t> pixels(std::size_t(w) * h);
    std::vector<std::uint8_t> row(png_get_rowbytes(ctx.png, ctx.info));
    for (int y = 0; y < h; ++y) {
        png_read_row(ctx.png, row.data(), nullptr);
        if (bit_depth == 16) {
            const auto* r16 = reinterpret_cast<const std::uint16_t*>(row.data());
            for (int x = 0; x < w; ++x) pixels[std::size_t(y) * w + x] = r16[x];
        } else {
            for (int x = 0; x < w; ++x) pixels[std::size_t(y) * w + x] = row[std::size_t(x)];
        }
    }
    png_read_end(ctx.png, nullptr);
    return pixels;
}

void write_gray(const std::string& path, int w, int h, int bit_depth,
                const std::vector<std::uint16_t>& pixels) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("cannot open PNG for writing: " + path);

    PngWrite ctx;
    ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) throw DataError("libpng: write struct allocation failed");
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) throw DataError("libpng: info struct allocation failed");
    if (setjmp(png_jmpbuf(ctx.png))) throw DataError("libpng: failed to encode " + path);

    png_init_io(ctx.png, fp.get());
    png_set_IHDR(ctx.png, ctx.info, png_uint_32(w), png_uint_32(h), bit_depth,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(ctx.png, ctx.info);
    if (bit_depth == 16) png_set_swap(ctx.png);

    if (bit_depth == 16) {
        std::vector<std::uint16_t> row(static_cast<std::size_t>(w));
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) row[std::size_t(x)] = pixels[std::size_t(y) * w + x];
            png_write_row(ctx.png, reinterpret_cast<png_bytep>(row.data()));
        }
    } else {
        std::vector<std::uint8_t> row(static_cast<std::size_t>(w));
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) row[std::size_t(x)] = std::uint8_t(pixels[std::size_t(y) * w + x]);
            png_write_row(ctx.png, row.data());
        }
    }
    png_write_end(ctx.png, nullptr);
}

} // namespace

Image load_image_png(const std::string& path) {
    int w = 0, h = 0, depth = 0;
    const auto pixels = read_gray(path, w, h, depth);
    Image img(w, h);
    const float scale = depth == 16 ? 1.0f / 65535.0f : 1.0f / 255.0f;
    for (std::size_t i = 0; i < pixels.size(); ++i) img.data[i] = float(pixels[i]) * scale;
    return img;
}

void save_image_png(const std::string& path, const Image& img, int bit_depth) {
    if (bit_depth != 8 && bit_depth != 16)
        throw ParameterError("save_image_png: bit depth must be 8 or 16");
    const float scale = bit_depth == 16 ? 65535.0f : 255.0f;
    std::vector<std::uint16_t> pixels(img.size());
    for (std::size_t i = 0; i < img.size(); ++i)
        pixels[i] = std::uint16_t(std::lround(clamp01(img.data[i]) * scale));
    write_gray(path, img.width, img.height, bit_depth, pixels);
}

LabelMap load_label_png(const std::string& path) {
    int w = 0, h = 0, depth = 0;
    const auto pixels = read_gray(path, w, h, depth);
    if (depth != 8) throw DataError("label map PNG must be 8-bit: " + path);
    LabelMap labels(w, h);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const auto v = std::uint8_t(pixels[i]);
        if (!is_legal_label(v))
            throw DataError("label map contains illegal class value " + std::to_string(int(v)) +
                            ": " + path);
        labels.data[i] = v;
    }
    return labels;
}

void save_label_png(const std::string& path, const LabelMap& labels) {
    std::vector<std::uint16_t> pixels(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) pixels[i] = labels.data[i];
    write_gray(path, labels.width, labels.height, 8, pixels);
}

void save_rgb_png(const std::string& path, int width, int height,
                  const std::vector<std::uint8_t>& rgb) {
    if (rgb.size() != std::size_t(width) * height * 3)
        throw ParameterError("save_rgb_png: buffer size does not match dimensions");

    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("cannot open PNG for writing: " + path);

    PngWrite ctx;
    ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) throw DataError("libpng: write struct allocation failed");
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) throw DataError("libpng: info struct allocation failed");
    if (setjmp(png_jmpbuf(ctx.png))) throw DataError("libpng: failed to encode " + path);

    png_init_io(ctx.png, fp.get());
    png_set_IHDR(ctx.png, ctx.info, png_uint_32(width), png_uint_32(height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(ctx.png, ctx.info);
    for (int y = 0; y < height; ++y)
        png_write_row(ctx.png, const_cast<png_bytep>(&rgb[std::size_t(y) * width * 3]));
    png_write_end(ctx.png, nullptr);
}

} // namespace cellmixer
