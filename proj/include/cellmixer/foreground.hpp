#pragma once

#include <map>
#include <string>
#include <vector>

#include "cellmixer/image.hpp"
#include "cellmixer/imageops.hpp"
#include "cellmixer/manifest.hpp"

namespace cellmixer {

enum class ThresholdMode { Otsu, LocalMean };

struct ExtractionConfig {
    double sigma_pre = 0.4;
    double sigma_post = 0.8;
    StructuringElement erosion_element = StructuringElement::square(1);
    int erosion_rounds = 1;
    ThresholdMode threshold_mode = ThresholdMode::Otsu;
    int otsu_bins = 256;
    int local_mean_window = 15; // half-window for LocalMean mode
    double local_mean_offset = 0.02;
    int min_component_area = 30;
    int close_radius = 2;

    void validate() const;
    // Gaussian kernel radius derived from sigma (2 sigma truncation).
    static int kernel_radius(double sigma);
};

// The unsupervised pipeline: smooth -> Sobel magnitude -> smooth -> erode ->
// threshold -> close -> fill holes -> drop small components.
BinaryMask extract_foreground(const Image& img, const ExtractionConfig& cfg);

// class_index in {1,2,3}: foreground pixels get the class, the rest 0.
LabelMap assign_label(const BinaryMask& fg, int class_index);

struct ExtractRecordResult {
    std::string image;
    std::string labels; // written path, empty on failure
    bool ok = false;
    std::string error;
    double foreground_fraction = 0.0;
    int class_index = 0;
};

struct ExtractReport {
    int processed = 0;
    int failed = 0;
    std::map<int, double> mean_foreground_fraction; // per class
    std::vector<ExtractRecordResult> records;
};

// Writes one label PNG per manifest record into out_dir; per-record failures
// are recorded and processing continues. Returns the report plus a manifest
// pointing at the written label maps.
ExtractReport extract_batch(const DatasetManifest& manifest, const ExtractionConfig& cfg,
                            const std::string& out_dir, DatasetManifest* out_manifest = nullptr,
                            int workers = 1);

std::string extract_report_to_json(const ExtractReport& report);

} // namespace cellmixer
