#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cellmixer/config.hpp"
#include "cellmixer/metrics.hpp"

namespace cellmixer {

// Class colors over the grayscale base, alpha 0.5: 1 blue, 2 red, 3 green;
// ignore pixels get a yellow hatch.
std::vector<std::uint8_t> render_overlay(const Image& base, const LabelMap& labels);
void save_overlay(const std::string& path, const Image& base, const LabelMap& labels);

struct TrackResult {
    std::string name;
    EvalResult baseline;
    EvalResult cellmixer;
};

struct ExperimentResult {
    std::string out_dir;
    std::vector<TrackResult> tracks;
    PixelClassifier baseline_model;
    PixelClassifier cellmixer_model;
};

// The full pipeline in one call: phantom populations, unsupervised label
// extraction, train/val split, baseline and composite-trained models, and
// evaluation on unmixed scenes, true mixtures, and artificial mixtures.
// Every output under out_dir is reproducible byte for byte from cfg.seed;
// reports and manifests contain no absolute paths.
ExperimentResult run_experiment(const PipelineConfig& cfg, const std::string& out_dir);

} // namespace cellmixer
