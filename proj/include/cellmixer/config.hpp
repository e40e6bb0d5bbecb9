#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "cellmixer/foreground.hpp"
#include "cellmixer/metrics.hpp"
#include "cellmixer/mixer.hpp"
#include "cellmixer/phantom.hpp"
#include "cellmixer/segmenter.hpp"

namespace cellmixer {

struct ExperimentConfig {
    int n_train_per_class = 40;
    int n_test_unmixed_per_class = 12;
    int n_test_mixture = 24;
    int n_artificial_mix = 24;
    double val_fraction = 0.10;
    int workers = 1;

    void validate() const;
};

// Everything one experiment run needs. The single seed drives every derived
// stream; per-module seed fields are filled in at run time and not serialized.
struct PipelineConfig {
    std::uint64_t seed = 42;
    PhantomConfig phantom;
    ExtractionConfig extraction;
    MixerConfig mixer;
    TrainConfig train;
    EvalConfig eval;
    ExperimentConfig experiment;

    void validate() const;
};

// Partial JSON is fine: absent keys keep defaults, unknown keys are rejected.
PipelineConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const PipelineConfig& cfg);

PipelineConfig load_config(const std::string& path);
void save_config(const std::string& path, const PipelineConfig& cfg);

// FNV-1a over the canonical dump; stable across runs and platforms.
std::string config_hash(const PipelineConfig& cfg);

} // namespace cellmixer
