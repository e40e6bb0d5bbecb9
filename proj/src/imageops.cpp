#include "cellmixer/imageops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace cellmixer {

namespace {

std::vector<double> gaussian_kernel(double sigma, int radius) {
    if (!(sigma > 0.0)) throw ParameterError("gaussian_smooth: sigma must be > 0");
    if (radius < 1) throw ParameterError("gaussian_smooth: radius must be >= 1");
    std::vector<double> k(std::size_t(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (double(i) * i) / (sigma * sigma));
        k[std::size_t(i + radius)] = v;
        sum += v;
    }
    for (auto& v : k) v /= sum;
    return k;
}

// Separable convolution with edge replication, shared by Image/GradientField.
std::vector<float> smooth_buffer(const std::vector<float>& src, int w, int h,
                                 double sigma, int radius) {
    const std::vector<double> k = gaussian_kernel(sigma, radius);
    std::vector<float> tmp(src.size());
    std::vector<float> out(src.size());

    for (int y = 0; y < h; ++y) {
        const float* row = &src[std::size_t(y) * w];
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += k[std::size_t(i + radius)] * row[clamp_index(x + i, 0, w - 1)];
            tmp[std::size_t(y) * w + x] = float(acc);
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += k[std::size_t(i + radius)] * tmp[std::size_t(clamp_index(y + i, 0, h - 1)) * w + x];
            out[std::size_t(y) * w + x] = float(acc);
        }
    }
    return out;
}

} // namespace

Image gaussian_smooth(const Image& img, double sigma, int radius) {
    Image out;
    out.width = img.width;
    out.height = img.height;
    out.data = smooth_buffer(img.data, img.width, img.height, sigma, radius);
    return out;
}

GradientField gaussian_smooth(const GradientField& field, double sigma, int radius) {
    GradientField out;
    out.width = field.width;
    out.height = field.height;
    out.data = smooth_buffer(field.data, field.width, field.height, sigma, radius);
    return out;
}

GradientField sobel_gradient_magnitude(const Image& img) {
    if (img.width < 3 || img.height < 3)
        throw ParameterError("sobel_gradient_magnitude: image must be at least 3x3");

    GradientField g(img.width, img.height);
    const int w = img.width, h = img.height;
    for (int y = 0; y < h; ++y) {
        const int ym = clamp_index(y - 1, 0, h - 1);
        const int yp = clamp_index(y + 1, 0, h - 1);
        for (int x = 0; x < w; ++x) {
            const int xm = clamp_index(x - 1, 0, w - 1);
            const int xp = clamp_index(x + 1, 0, w - 1);
            const float tl = img.at(xm, ym), tc = img.at(x, ym), tr = img.at(xp, ym);
            const float ml = img.at(xm, y), mr = img.at(xp, y);
            const float bl = img.at(xm, yp), bc = img.at(x, yp), br = img.at(xp, yp);
            const float sx = (tr + 2.0f * mr + br) - (tl + 2.0f * ml + bl);
            const float sy = (bl + 2.0f * bc + br) - (tl + 2.0f * tc + tr);
            g.at(x, y) = std::sqrt(sx * sx + sy * sy);
        }
    }
    return g;
}

GradientField erode(const GradientField& field, const StructuringElement& b) {
    if (b.offsets.empty()) throw ParameterError("erode: empty structuring element");
    GradientField out(field.width, field.height);
    const int w = field.width, h = field.height;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            float m = std::numeric_limits<float>::max();
            for (const auto& [dx, dy] : b.offsets) {
                // (G (-) B)(x,y) = min over (i,j) in B of G(x-i, y-j)
                const int sx = clamp_index(x - dx, 0, w - 1);
                const int sy = clamp_index(y - dy, 0, h - 1);
                m = std::min(m, field.at(sx, sy));
            }
            out.at(x, y) = m;
        }
    }
    return out;
}

double otsu_threshold(const GradientField& field, int bins) {
    if (bins < 2) throw ParameterError("otsu_threshold: bins must be >= 2");

    float lo = std::numeric_limits<float>::max();
    float hi = std::numeric_limits<float>::lowest();
    for (float v : field.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (!(hi > lo))
        throw DegenerateInputError("otsu_threshold: field has no intensity spread");

    std::vector<std::int64_t> hist(std::size_t(bins), 0);
    const double scale = double(bins) / (double(hi) - double(lo));
    for (float v : field.data) {
        int idx = int((double(v) - double(lo)) * scale);
        idx = clamp_index(idx, 0, bins - 1);
        ++hist[std::size_t(idx)];
    }

    const std::int64_t total = std::int64_t(field.data.size());
    double total_mean = 0.0;
    for (int i = 0; i < bins; ++i) total_mean += double(hist[std::size_t(i)]) * (i + 0.5);
    total_mean /= double(total);

    // Scan candidate splits; class 0 = bins [0,k), class 1 = bins [k,bins).
    double best_var = -1.0;
    int best_k = 1;
    std::int64_t n0 = 0;
    double sum0 = 0.0;
    for (int k = 1; k < bins; ++k) {
        n0 += hist[std::size_t(k - 1)];
        sum0 += double(hist[std::size_t(k - 1)]) * (k - 0.5);
        const std::int64_t n1 = total - n0;
        if (n0 == 0 || n1 == 0) continue;
        const double mu0 = sum0 / double(n0);
        const double mu1 = (total_mean * double(total) - sum0) / double(n1);
        const double var = double(n0) * double(n1) * (mu0 - mu1) * (mu0 - mu1);
        if (var > best_var) {
            best_var = var;
            best_k = k;
        }
    }
    if (best_var < 0.0)
        throw DegenerateInputError("otsu_threshold: all values fall in one bin");

    return double(lo) + (double(hi) - double(lo)) * double(best_k) / double(bins);
}

std::pair<double, double> background_stats(const Image& img, const BinaryMask& fg) {
    if (!same_shape(img, fg)) throw ParameterError("background_stats: shape mismatch");
    std::int64_t n = 0;
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        if (fg.data[i]) continue;
        const double v = img.data[i];
        sum += v;
        sum2 += v * v;
        ++n;
    }
    if (n < 2)
        throw DegenerateInputError("background_stats: fewer than 2 background pixels");
    const double mean = sum / double(n);
    const double var = std::max(0.0, sum2 / double(n) - mean * mean);
    return {mean, std::sqrt(var)};
}

BinaryMask threshold_above(const GradientField& field, double threshold) {
    BinaryMask out(field.width, field.height);
    for (std::size_t i = 0; i < field.data.size(); ++i)
        out.data[i] = double(field.data[i]) > threshold ? 1 : 0;
    return out;
}

BinaryMask local_mean_threshold(const GradientField& field, int half_window, double offset) {
    if (half_window < 1) throw ParameterError("local_mean_threshold: window must be >= 1");
    const int w = field.width, h = field.height;

    // Box mean via replicated padding + summed-area table.
    const int pw = w + 2 * half_window, ph = h + 2 * half_window;
    std::vector<double> sat(std::size_t(pw + 1) * (ph + 1), 0.0);
    for (int y = 0; y < ph; ++y) {
        const int sy = clamp_index(y - half_window, 0, h - 1);
        for (int x = 0; x < pw; ++x) {
            const int sx = clamp_index(x - half_window, 0, w - 1);
            sat[std::size_t(y + 1) * (pw + 1) + (x + 1)] =
                double(field.at(sx, sy)) + sat[std::size_t(y) * (pw + 1) + (x + 1)] +
                sat[std::size_t(y + 1) * (pw + 1) + x] - sat[std::size_t(y) * (pw + 1) + x];
        }
    }
    const double area = double(2 * half_window + 1) * (2 * half_window + 1);
    BinaryMask out(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int x0 = x, y0 = y, x1 = x + 2 * half_window + 1, y1 = y + 2 * half_window + 1;
            const double sum = sat[std::size_t(y1) * (pw + 1) + x1] - sat[std::size_t(y0) * (pw + 1) + x1] -
                               sat[std::size_t(y1) * (pw + 1) + x0] + sat[std::size_t(y0) * (pw + 1) + x0];
            out.set(x, y, double(field.at(x, y)) > sum / area + offset);
        }
    }
    return out;
}

namespace {

BinaryMask binary_morph(const BinaryMask& mask, const StructuringElement& b, bool dilate) {
    if (b.offsets.empty()) throw ParameterError("binary morphology: empty structuring element");
    BinaryMask out(mask.width, mask.height);
    const int w = mask.width, h = mask.height;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            bool acc = !dilate;
            for (const auto& [dx, dy] : b.offsets) {
                const int sx = clamp_index(dilate ? x + dx : x - dx, 0, w - 1);
                const int sy = clamp_index(dilate ? y + dy : y - dy, 0, h - 1);
                if (dilate) {
                    if (mask.at(sx, sy)) { acc = true; break; }
                } else {
                    if (!mask.at(sx, sy)) { acc = false; break; }
                }
            }
            out.set(x, y, acc);
        }
    }
    return out;
}

} // namespace

BinaryMask binary_dilate(const BinaryMask& mask, const StructuringElement& b) {
    return binary_morph(mask, b, true);
}

BinaryMask binary_erode(const BinaryMask& mask, const StructuringElement& b) {
    return binary_morph(mask, b, false);
}

BinaryMask morphological_close(const BinaryMask& mask, const StructuringElement& b) {
    return binary_erode(binary_dilate(mask, b), b);
}

BinaryMask fill_holes(const BinaryMask& mask) {
    const int w = mask.width, h = mask.height;
    std::vector<std::uint8_t> outside(mask.size(), 0);
    std::queue<int> q;
    auto push = [&](int x, int y) {
        const std::size_t i = std::size_t(y) * w + x;
        if (!outside[i] && !mask.data[i]) {
            outside[i] = 1;
            q.push(int(i));
        }
    };
    for (int x = 0; x < w; ++x) {
        push(x, 0);
        push(x, h - 1);
    }
    for (int y = 0; y < h; ++y) {
        push(0, y);
        push(w - 1, y);
    }
    while (!q.empty()) {
        const int i = q.front();
        q.pop();
        const int x = i % w, y = i / w;
        if (x > 0) push(x - 1, y);
        if (x < w - 1) push(x + 1, y);
        if (y > 0) push(x, y - 1);
        if (y < h - 1) push(x, y + 1);
    }
    BinaryMask out(w, h);
    for (std::size_t i = 0; i < mask.size(); ++i) out.data[i] = outside[i] ? 0 : 1;
    return out;
}

std::vector<int> connected_components(const BinaryMask& mask, int& n_labels) {
    const int w = mask.width, h = mask.height;
    std::vector<int> labels(mask.size(), 0);
    n_labels = 0;
    std::vector<int> stack;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t start = std::size_t(y) * w + x;
            if (!mask.data[start] || labels[start]) continue;
            ++n_labels;
            labels[start] = n_labels;
            stack.push_back(int(start));
            while (!stack.empty()) {
                const int i = stack.back();
                stack.pop_back();
                const int cx = i % w, cy = i / w;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dx == 0 && dy == 0) continue;
                        const int nx = cx + dx, ny = cy + dy;
                        if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
                        const std::size_t ni = std::size_t(ny) * w + nx;
                        if (mask.data[ni] && !labels[ni]) {
                            labels[ni] = n_labels;
                            stack.push_back(int(ni));
                        }
                    }
                }
            }
        }
    }
    return labels;
}

BinaryMask remove_small_components(const BinaryMask& mask, int min_area) {
    if (min_area <= 1) return mask;
    int n = 0;
    const std::vector<int> labels = connected_components(mask, n);
    std::vector<std::int64_t> area(std::size_t(n) + 1, 0);
    for (int l : labels) ++area[std::size_t(l)];
    BinaryMask out(mask.width, mask.height);
    for (std::size_t i = 0; i < mask.size(); ++i)
        out.data[i] = (labels[i] != 0 && area[std::size_t(labels[i])] >= min_area) ? 1 : 0;
    return out;
}

} // namespace cellmixer
