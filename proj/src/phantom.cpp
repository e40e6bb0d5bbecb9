#include "cellmixer/phantom.hpp"

#include <cmath>

#include "cellmixer/imageops.hpp"
#include "cellmixer/rng.hpp"

namespace cellmixer {

void PhantomConfig::validate() const {
    if (image_size < 16) throw ParameterError("PhantomConfig: image_size must be >= 16");
    if (cells_min < 0 || cells_max < cells_min)
        throw ParameterError("PhantomConfig: invalid cells_per_image range");
    if (radius_min < 2.0 || radius_max < radius_min)
        throw ParameterError("PhantomConfig: radii must be >= 2 px and ordered");
    if (bg_mean < 0.0 || bg_mean > 1.0)
        throw ParameterError("PhantomConfig: bg_mean must be in [0,1]");
    if (bg_noise < 0.0) throw ParameterError("PhantomConfig: bg_noise must be >= 0");
    for (const auto& s : class_styles) {
        if (s.interior < 0.0 || s.interior > 1.0)
            throw ParameterError("PhantomConfig: interior intensity must be in [0,1]");
        if (s.ecc_min < 1.0 || s.ecc_max < s.ecc_min)
            throw ParameterError("PhantomConfig: eccentricity range invalid");
        if (s.radius_scale <= 0.0)
            throw ParameterError("PhantomConfig: radius_scale must be > 0");
    }
}

namespace {

struct CellShape {
    double cx, cy;
    double a, b;      // semi-axes
    double cos_t, sin_t;
    double r_eff;     // sqrt(a*b), used for separation and edge softness
    int class_index;
    std::uint64_t texture_seed;
    double interior;
    double ring_value;
    double ring_width;
    double speckle_amp;
};

// Position-stable speckle in [-1,1]; independent of stamping order. Sampled
// on a 4 px grid so the mottling is coarse enough to survive scene blur.
double speckle_at(std::uint64_t seed, int x, int y) {
    std::uint64_t s = seed ^ (std::uint64_t(std::uint32_t(x >> 2)) * 0x9e3779b97f4a7c15ULL) ^
                      (std::uint64_t(std::uint32_t(y >> 2)) * 0xd1b54a32d192ed03ULL);
    const std::uint64_t v = splitmix64(s);
    return double(v >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}

void stamp_cell(Image& canvas, LabelMap& truth, const CellShape& cell) {
    const double reach = std::max(cell.a, cell.b) + 2.0;
    const int x0 = clamp_index(int(std::floor(cell.cx - reach)), 0, canvas.width - 1);
    const int x1 = clamp_index(int(std::ceil(cell.cx + reach)), 0, canvas.width - 1);
    const int y0 = clamp_index(int(std::floor(cell.cy - reach)), 0, canvas.height - 1);
    const int y1 = clamp_index(int(std::ceil(cell.cy + reach)), 0, canvas.height - 1);

    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double dx = x - cell.cx, dy = y - cell.cy;
            const double u = (dx * cell.cos_t + dy * cell.sin_t) / cell.a;
            const double v = (-dx * cell.sin_t + dy * cell.cos_t) / cell.b;
            const double rho = std::sqrt(u * u + v * v);
            // ~1 px soft edge; truth follows the 0.5-coverage contour (rho <= 1)
            const double alpha = std::clamp(0.5 + (1.0 - rho) * cell.r_eff, 0.0, 1.0);
            if (alpha <= 0.0) continue;

            double value;
            if (rho < 1.0 - cell.ring_width) {
                value = cell.interior;
                if (cell.speckle_amp > 0.0 && rho < 0.9)
                    value += cell.speckle_amp * speckle_at(cell.texture_seed, x, y);
            } else {
                value = cell.ring_value;
            }
            const std::size_t i = std::size_t(y) * canvas.width + x;
            canvas.data[i] = float(double(canvas.data[i]) * (1.0 - alpha) + value * alpha);
            if (alpha >= 0.5) truth.data[i] = std::uint8_t(cell.class_index);
        }
    }
}

// class_of(rng) picks each new cell's class; identical scenes otherwise.
PhantomSample render_scene(const PhantomConfig& cfg, Rng& rng, int& skipped,
                           const std::vector<std::pair<int, double>>* class_mix,
                           int fixed_class) {
    const int size = cfg.image_size;
    const double class_shift =
        fixed_class >= 1 ? cfg.class_styles[std::size_t(fixed_class - 1)].bg_offset : 0.0;
    const double bg = cfg.bg_mean + class_shift + rng.uniform(-cfg.bg_jitter, cfg.bg_jitter);
    Image canvas(size, size, float(bg));
    LabelMap truth(size, size);

    const int n_cells = cfg.cells_min + rng.uniform_int(cfg.cells_max - cfg.cells_min + 1);
    std::vector<CellShape> placed;
    placed.reserve(std::size_t(n_cells));

    for (int c = 0; c < n_cells; ++c) {
        int class_index = fixed_class;
        if (class_mix) {
            const double pick = rng.next_double();
            double acc = 0.0;
            class_index = class_mix->back().first;
            for (const auto& [k, p] : *class_mix) {
                acc += p;
                if (pick < acc) {
                    class_index = k;
                    break;
                }
            }
        }
        const ClassStyle& style = cfg.class_styles[std::size_t(class_index - 1)];

        const double radius = rng.uniform(cfg.radius_min, cfg.radius_max) * style.radius_scale;
        const double ecc = rng.uniform(style.ecc_min, style.ecc_max);
        const double a = radius * std::sqrt(ecc);
        const double b = radius / std::sqrt(ecc);
        const double theta = rng.uniform(0.0, 6.283185307179586);
        const double r_eff = std::sqrt(a * b);

        const double margin = std::max(a, b) + 2.0;
        bool ok = false;
        double cx = 0.0, cy = 0.0;
        for (int attempt = 0; attempt < cfg.placement_retries && !ok; ++attempt) {
            cx = rng.uniform(margin, double(size) - margin);
            cy = rng.uniform(margin, double(size) - margin);
            ok = true;
            for (const auto& other : placed) {
                const double d = std::hypot(cx - other.cx, cy - other.cy);
                if (d < cfg.min_separation * (r_eff + other.r_eff)) {
                    ok = false;
                    break;
                }
            }
        }
        if (!ok) {
            ++skipped;
            continue;
        }

        CellShape cell;
        cell.cx = cx;
        cell.cy = cy;
        cell.a = a;
        cell.b = b;
        cell.cos_t = std::cos(theta);
        cell.sin_t = std::sin(theta);
        cell.r_eff = r_eff;
        cell.class_index = class_index;
        cell.texture_seed = rng.next_u64();
        cell.interior = style.interior + rng.uniform(-0.03, 0.03);
        cell.ring_value = std::clamp(bg + style.ring_offset, 0.0, 1.0);
        cell.ring_width = style.ring_width;
        cell.speckle_amp = style.speckle_amp;
        placed.push_back(cell);
        stamp_cell(canvas, truth, cell);
    }

    if (cfg.scene_blur_sigma > 0.0)
        canvas = gaussian_smooth(canvas, cfg.scene_blur_sigma,
                                 std::max(1, int(std::ceil(2.0 * cfg.scene_blur_sigma))));
    if (cfg.bg_noise > 0.0)
        for (auto& px : canvas.data) px = float(px + cfg.bg_noise * rng.normal());
    for (auto& px : canvas.data) px = clamp01(px);

    return PhantomSample{std::move(canvas), std::move(truth)};
}

} // namespace

PopulationResult generate_population(int class_index, int n_images, const PhantomConfig& cfg) {
    cfg.validate();
    if (class_index < 1 || class_index > kNumForegroundClasses)
        throw ParameterError("generate_population: class index must be 1..3");
    if (n_images < 0) throw ParameterError("generate_population: n_images must be >= 0");

    PopulationResult result;
    result.samples.reserve(std::size_t(n_images));
    for (int i = 0; i < n_images; ++i) {
        Rng rng = derive_rng(cfg.seed, "phantom-pop", std::uint64_t(class_index), std::uint64_t(i));
        result.samples.push_back(render_scene(cfg, rng, result.skipped_cells, nullptr, class_index));
    }
    return result;
}

PopulationResult generate_true_mixture(const std::vector<std::pair<int, double>>& class_mix,
                                       int n_images, const PhantomConfig& cfg) {
    cfg.validate();
    if (class_mix.empty()) throw ParameterError("generate_true_mixture: empty class mix");
    double sum = 0.0;
    for (const auto& [k, p] : class_mix) {
        if (k < 1 || k > kNumForegroundClasses)
            throw ParameterError("generate_true_mixture: class index must be 1..3");
        if (p < 0.0) throw ParameterError("generate_true_mixture: negative proportion");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw ParameterError("generate_true_mixture: proportions must sum to 1");
    if (n_images < 0) throw ParameterError("generate_true_mixture: n_images must be >= 0");

    PopulationResult result;
    result.samples.reserve(std::size_t(n_images));
    for (int i = 0; i < n_images; ++i) {
        Rng rng = derive_rng(cfg.seed, "phantom-mix", std::uint64_t(i));
        result.samples.push_back(render_scene(cfg, rng, result.skipped_cells, &class_mix, 0));
    }
    return result;
}

} // namespace cellmixer
