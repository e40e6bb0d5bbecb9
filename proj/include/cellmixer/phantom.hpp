#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "cellmixer/image.hpp"

namespace cellmixer {

// Appearance of one cell class. Ring intensity is bg_mean + ring_offset;
// interior intensity is absolute. radius_scale stretches the shared radius
// range so classes differ in size.
struct ClassStyle {
    double interior = 0.5;
    double ring_offset = -0.4;
    double ring_width = 0.25; // fraction of the radius
    double speckle_amp = 0.0;
    double ecc_min = 1.0;
    double ecc_max = 1.2;
    double radius_scale = 1.0;
    // Imaging-condition shift for homogeneous captures of this class: each
    // population is "imaged" against its own background level. True mixtures
    // use the plain bg_mean, so this cue is absent at test time.
    double bg_offset = 0.0;
};

struct PhantomConfig {
    int image_size = 192;
    int cells_min = 7;
    int cells_max = 11;
    double radius_min = 11.0;
    double radius_max = 13.0;
    std::array<ClassStyle, 3> class_styles = {
        // 1: mid deep-dark discs
        ClassStyle{0.03, 0.0, 0.0, 0.04, 1.0, 1.2, 1.00, 0.0},
        // 2: large bright discs
        ClassStyle{0.97, 0.0, 0.0, 0.04, 1.0, 1.2, 1.50, 0.0},
        // 3: small bright discs
        ClassStyle{0.97, 0.0, 0.0, 0.04, 1.0, 1.2, 0.75, 0.0},
    };
    double bg_mean = 0.55;
    double bg_jitter = 0.02;  // per-image background level shift
    double bg_noise = 0.05;   // per-pixel sensor noise, added after blur
    double scene_blur_sigma = 0.5;
    double min_separation = 1.02; // centers at least this fraction of r1+r2 apart
    int placement_retries = 40;
    std::uint64_t seed = 0;

    void validate() const;
};

struct PhantomSample {
    Image image;
    LabelMap labels; // exact truth
};

struct PopulationResult {
    std::vector<PhantomSample> samples;
    int skipped_cells = 0; // cells dropped after bounded placement retries
};

// Homogeneous population: every cell carries class_index. Deterministic from
// (cfg.seed, class_index, image index).
PopulationResult generate_population(int class_index, int n_images, const PhantomConfig& cfg);

// Heterogeneous scene drawn in one pass; per-cell class sampled from the given
// proportions (must sum to 1 within 1e-6). The test-time analogue of a real
// mixed culture.
PopulationResult generate_true_mixture(const std::vector<std::pair<int, double>>& class_mix,
                                       int n_images, const PhantomConfig& cfg);

} // namespace cellmixer
