#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cellmixer/image.hpp"
#include "cellmixer/manifest.hpp"
#include "cellmixer/rng.hpp"

namespace cellmixer {

struct MixerConfig {
    double lambda = 0.5;          // contribution of the first crop
    int crop_size = 128;
    double target_bg_mean = 0.5;  // canonical background both crops map to
    double target_bg_std = 0.05;
    std::uint64_t seed = 0;
    int pairs_per_epoch = 256;
    bool allow_same_class = false;
    int max_draw_retries = 64;    // redraws on degenerate crops (e.g. no background)

    void validate() const;
};

// Manifest records loaded into memory so crops can be drawn cheaply.
struct PoolEntry {
    ManifestRecord record;
    Image image;
    LabelMap labels;
};

class SamplePool {
public:
    // split empty = all records. Every record needs a labels path.
    static SamplePool load(const DatasetManifest& manifest, const std::string& split = "");

    std::size_t size() const { return entries_.size(); }
    const PoolEntry& entry(std::size_t i) const { return entries_[i]; }
    int distinct_classes() const;

    void add(PoolEntry entry) { entries_.push_back(std::move(entry)); }

private:
    std::vector<PoolEntry> entries_;
};

struct MixProvenance {
    std::size_t record_a = 0, record_b = 0;
    int offset_ax = 0, offset_ay = 0, offset_bx = 0, offset_by = 0;
    double lambda = 0.5;
    double clamped_fraction = 0.0; // pixels clipped to [0,1] by the mix
};

struct MixedSample {
    Image image;
    LabelMap labels;
    MixProvenance provenance;
};

// Affine map taking the background (labels == 0) of img to the target
// statistics, applied to every pixel, then clamped to [0,1].
Image normalize_background(const Image& img, const LabelMap& labels, double target_mean,
                           double target_std);

struct ExtractionConfig;

// Model input contract: every image the classifier trains on or predicts
// comes pre-mapped to the canonical background frame. Composites get there
// through sample_mixed_crop; this helper does the same for everything else,
// using unsupervised extraction for the stats mask. Images whose background
// is too degenerate to estimate pass through unchanged.
Image canonicalize_input(const Image& img, const ExtractionConfig& extraction,
                         double target_mean, double target_std);

// Pointwise lambda * i1 + (1-lambda) * i2, clamped to [0,1].
Image mix_images(const Image& i1, const Image& i2, double lambda);

// Second map wins wherever it is nonzero. Neither map may contain ignore.
LabelMap mix_labels(const LabelMap& m1, const LabelMap& m2);

// Draws an ordered record pair (distinct classes unless allow_same_class),
// independent crop offsets, normalizes both crops, and composites them.
// Deterministic given the rng state.
MixedSample sample_mixed_crop(const SamplePool& pool, const MixerConfig& cfg, Rng& rng);

// Materializes n mixed samples (image + label PNG pairs) plus a manifest and a
// provenance JSONL. Sample i draws its stream from (cfg.seed, i), so results
// do not depend on worker count.
DatasetManifest synthesize_set(const SamplePool& pool, const MixerConfig& cfg, int n,
                               const std::string& out_dir, int workers = 1);

} // namespace cellmixer
