#include "cellmixer/foreground.hpp"

#include <cmath>
#include <filesystem>
#include <map>
#include <mutex>

#include <json.hpp>

#include "cellmixer/parallel.hpp"
#include "cellmixer/png_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cellmixer {

void ExtractionConfig::validate() const {
    if (!(sigma_pre > 0.0) || !(sigma_post > 0.0))
        throw ParameterError("ExtractionConfig: sigmas must be > 0");
    if (erosion_rounds < 0) throw ParameterError("ExtractionConfig: erosion_rounds must be >= 0");
    if (erosion_element.offsets.empty())
        throw ParameterError("ExtractionConfig: erosion element is empty");
    if (otsu_bins < 2) throw ParameterError("ExtractionConfig: otsu_bins must be >= 2");
    if (local_mean_window < 1)
        throw ParameterError("ExtractionConfig: local_mean_window must be >= 1");
    if (min_component_area < 0)
        throw ParameterError("ExtractionConfig: min_component_area must be >= 0");
    if (close_radius < 0) throw ParameterError("ExtractionConfig: close_radius must be >= 0");
}

int ExtractionConfig::kernel_radius(double sigma) {
    return std::max(1, int(std::ceil(2.0 * sigma)));
}

BinaryMask extract_foreground(const Image& img, const ExtractionConfig& cfg) {
    cfg.validate();
    if (img.width < 3 || img.height < 3)
        throw ParameterError("extract_foreground: image must be at least 3x3");

    const Image smoothed = gaussian_smooth(img, cfg.sigma_pre, ExtractionConfig::kernel_radius(cfg.sigma_pre));
    GradientField g = sobel_gradient_magnitude(smoothed);
    g = gaussian_smooth(g, cfg.sigma_post, ExtractionConfig::kernel_radius(cfg.sigma_post));
    for (int round = 0; round < cfg.erosion_rounds; ++round)
        g = erode(g, cfg.erosion_element);

    BinaryMask mask = cfg.threshold_mode == ThresholdMode::Otsu
                          ? threshold_above(g, otsu_threshold(g, cfg.otsu_bins))
                          : local_mean_threshold(g, cfg.local_mean_window, cfg.local_mean_offset);

    if (cfg.close_radius > 0)
        mask = morphological_close(mask, StructuringElement::disk(cfg.close_radius));
    mask = fill_holes(mask);
    return remove_small_components(mask, cfg.min_component_area);
}

LabelMap assign_label(const BinaryMask& fg, int class_index) {
    if (class_index < 1 || class_index > kNumForegroundClasses)
        throw ParameterError("assign_label: class index must be 1..3");
    LabelMap out(fg.width, fg.height);
    for (std::size_t i = 0; i < fg.size(); ++i)
        out.data[i] = fg.data[i] ? std::uint8_t(class_index) : 0;
    return out;
}

ExtractReport extract_batch(const DatasetManifest& manifest, const ExtractionConfig& cfg,
                            const std::string& out_dir, DatasetManifest* out_manifest,
                            int workers) {
    cfg.validate();
    fs::create_directories(out_dir);

    ExtractReport report;
    report.records.resize(manifest.records.size());

    parallel_for(manifest.records.size(), workers, [&](std::size_t i) {
        const ManifestRecord& rec = manifest.records[i];
        ExtractRecordResult& result = report.records[i];
        result.image = rec.image;
        try {
            if (!rec.class_index || *rec.class_index < 1)
                throw DataError("record has no foreground class label");
            result.class_index = *rec.class_index;
            const Image img = load_image_png(manifest.resolve(rec.image));
            const BinaryMask fg = extract_foreground(img, cfg);
            const LabelMap labels = assign_label(fg, *rec.class_index);

            const std::string name = fs::path(rec.image).stem().string() + "_labels.png";
            const std::string out_path = (fs::path(out_dir) / name).string();
            save_label_png(out_path, labels);

            result.labels = out_path;
            result.foreground_fraction = double(fg.count()) / double(fg.size());
            result.ok = true;
        } catch (const std::exception& e) {
            result.ok = false;
            result.error = e.what();
        }
    });

    std::map<int, std::pair<double, int>> fraction_acc;
    for (const auto& r : report.records) {
        if (r.ok) {
            ++report.processed;
            auto& acc = fraction_acc[r.class_index];
            acc.first += r.foreground_fraction;
            acc.second += 1;
        } else {
            ++report.failed;
        }
    }
    for (const auto& [class_index, acc] : fraction_acc)
        report.mean_foreground_fraction[class_index] = acc.first / double(acc.second);

    if (out_manifest) {
        out_manifest->records.clear();
        out_manifest->root.clear();
        for (std::size_t i = 0; i < manifest.records.size(); ++i) {
            if (!report.records[i].ok) continue;
            ManifestRecord rec = manifest.records[i];
            rec.image = manifest.resolve(rec.image);
            rec.labels = report.records[i].labels;
            out_manifest->records.push_back(std::move(rec));
        }
    }
    return report;
}

std::string extract_report_to_json(const ExtractReport& report) {
    json j;
    j["processed"] = report.processed;
    j["failed"] = report.failed;
    json fractions = json::object();
    for (const auto& [class_index, fraction] : report.mean_foreground_fraction)
        fractions[std::to_string(class_index)] = fraction;
    j["mean_foreground_fraction"] = fractions;
    json records = json::array();
    for (const auto& r : report.records) {
        json rec;
        rec["image"] = r.image;
        rec["ok"] = r.ok;
        if (r.ok) {
            rec["labels"] = r.labels;
            rec["foreground_fraction"] = r.foreground_fraction;
        } else {
            rec["error"] = r.error;
        }
        records.push_back(std::move(rec));
    }
    j["records"] = records;
    return j.dump(2);
}

} // namespace cellmixer
