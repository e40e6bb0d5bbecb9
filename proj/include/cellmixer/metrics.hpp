#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cellmixer/foreground.hpp"
#include "cellmixer/image.hpp"
#include "cellmixer/manifest.hpp"
#include "cellmixer/segmenter.hpp"

namespace cellmixer {

// counts[truth][pred]; pixels whose truth label is 255 are never counted.
struct ConfusionMatrix {
    int n_labels = kNumClasses;
    std::vector<std::uint64_t> counts;

    explicit ConfusionMatrix(int n = kNumClasses);
    std::uint64_t at(int truth, int pred) const {
        return counts[std::size_t(truth) * n_labels + pred];
    }
    std::uint64_t& at(int truth, int pred) {
        return counts[std::size_t(truth) * n_labels + pred];
    }
    void accumulate(const LabelMap& truth, const LabelMap& pred);
    void merge(const ConfusionMatrix& other);
    std::uint64_t total() const;
    std::uint64_t row_total(int truth) const;
    std::uint64_t col_total(int pred) const;
};

struct ClassMetrics {
    std::uint64_t truth_pixels = 0;
    bool present = false; // class appears in the ground truth
    double accuracy = 0.0;
    double iou = 0.0;
};

struct MetricsReport {
    std::vector<ClassMetrics> per_class;
    double mean_accuracy = 0.0;
    double mean_iou = 0.0;
    bool foreground_defined = false;
    double foreground_mean_accuracy = 0.0;
    double foreground_mean_iou = 0.0;
    std::uint64_t evaluated_pixels = 0;
};

// accuracy_c = diag / row, iou_c = diag / (row + col - diag); means are taken
// over classes present in the ground truth. Foreground means skip class 0.
MetricsReport compute_metrics(const ConfusionMatrix& cm);

std::string metrics_to_text(const MetricsReport& report,
                            const std::vector<std::string>& class_names = {});
nlohmann::json metrics_to_json(const MetricsReport& report);

struct EvalConfig {
    int window = 128;
    int stride = 64;
    int workers = 1;
    // Inference inputs go through the same canonical background frame the
    // model was trained in (see canonicalize_input).
    bool canonicalize = true;
    ExtractionConfig extraction;
    double target_bg_mean = 0.5;
    double target_bg_std = 0.05;
};

struct EvalResult {
    ConfusionMatrix confusion{kNumClasses};
    MetricsReport report;
    std::size_t n_images = 0;
};

// Pooled confusion over every record of the manifest (optionally one split);
// every record must carry a label map.
EvalResult evaluate_model(const PixelClassifier& model, const DatasetManifest& manifest,
                          const EvalConfig& cfg, const std::string& split = "");

} // namespace cellmixer
