#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "cellmixer/errors.hpp"

namespace cellmixer {

inline constexpr std::uint8_t kIgnoreLabel = 255;
inline constexpr int kNumForegroundClasses = 3;
inline constexpr int kNumClasses = kNumForegroundClasses + 1; // incl. background

// Single-channel intensity raster, row-major, values in [0,1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, float fill = 0.0f)
        : width(w), height(h), data(std::size_t(w) * std::size_t(h), fill) {
        if (w < 1 || h < 1) throw ParameterError("Image dimensions must be >= 1");
    }

    std::size_t size() const { return data.size(); }
    float at(int x, int y) const { return data[std::size_t(y) * width + x]; }
    float& at(int x, int y) { return data[std::size_t(y) * width + x]; }
};

// Nonnegative gradient magnitudes, same layout as Image.
struct GradientField {
    int width = 0;
    int height = 0;
    std::vector<float> data;

    GradientField() = default;
    GradientField(int w, int h, float fill = 0.0f)
        : width(w), height(h), data(std::size_t(w) * std::size_t(h), fill) {
        if (w < 1 || h < 1) throw ParameterError("GradientField dimensions must be >= 1");
    }

    std::size_t size() const { return data.size(); }
    float at(int x, int y) const { return data[std::size_t(y) * width + x]; }
    float& at(int x, int y) { return data[std::size_t(y) * width + x]; }
};

struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data; // 0 or 1

    BinaryMask() = default;
    BinaryMask(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), data(std::size_t(w) * std::size_t(h), fill) {
        if (w < 1 || h < 1) throw ParameterError("BinaryMask dimensions must be >= 1");
    }

    std::size_t size() const { return data.size(); }
    bool at(int x, int y) const { return data[std::size_t(y) * width + x] != 0; }
    void set(int x, int y, bool v) { data[std::size_t(y) * width + x] = v ? 1 : 0; }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto v : data) n += (v != 0);
        return n;
    }
};

// Per-pixel class indices: 0 background, 1..3 foreground classes, 255 ignore.
struct LabelMap {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    LabelMap() = default;
    LabelMap(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), data(std::size_t(w) * std::size_t(h), fill) {
        if (w < 1 || h < 1) throw ParameterError("LabelMap dimensions must be >= 1");
    }

    std::size_t size() const { return data.size(); }
    std::uint8_t at(int x, int y) const { return data[std::size_t(y) * width + x]; }
    std::uint8_t& at(int x, int y) { return data[std::size_t(y) * width + x]; }
};

inline bool is_legal_label(std::uint8_t v) { return v <= kNumForegroundClasses || v == kIgnoreLabel; }

// Neighborhood offsets for morphology. Always contains (0,0).
struct StructuringElement {
    std::vector<std::pair<int, int>> offsets;

    static StructuringElement square(int radius) {
        if (radius < 0) throw ParameterError("structuring element radius must be >= 0");
        StructuringElement b;
        for (int dy = -radius; dy <= radius; ++dy)
            for (int dx = -radius; dx <= radius; ++dx)
                b.offsets.emplace_back(dx, dy);
        return b;
    }

    static StructuringElement disk(int radius) {
        if (radius < 0) throw ParameterError("structuring element radius must be >= 0");
        StructuringElement b;
        for (int dy = -radius; dy <= radius; ++dy)
            for (int dx = -radius; dx <= radius; ++dx)
                if (dx * dx + dy * dy <= radius * radius) b.offsets.emplace_back(dx, dy);
        return b;
    }
};

inline int clamp_index(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

inline float clamp01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

template <typename A, typename B>
bool same_shape(const A& a, const B& b) {
    return a.width == b.width && a.height == b.height;
}

} // namespace cellmixer
