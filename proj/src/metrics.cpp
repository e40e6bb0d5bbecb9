#include "cellmixer/metrics.hpp"

#include <algorithm>
#include <cstdio>

#include "cellmixer/errors.hpp"
#include "cellmixer/mixer.hpp"
#include "cellmixer/parallel.hpp"
#include "cellmixer/png_io.hpp"

namespace cellmixer {

ConfusionMatrix::ConfusionMatrix(int n) : n_labels(n) {
    if (n < 2) throw ParameterError("confusion matrix needs at least two labels");
    counts.assign(std::size_t(n) * n, 0);
}

void ConfusionMatrix::accumulate(const LabelMap& truth, const LabelMap& pred) {
    if (truth.width != pred.width || truth.height != pred.height)
        throw ParameterError("truth and prediction shapes differ");
    for (std::size_t i = 0; i < truth.data.size(); ++i) {
        const std::uint8_t t = truth.data[i];
        if (t == kIgnoreLabel) continue;
        const std::uint8_t p = pred.data[i];
        if (t >= n_labels) throw ParameterError("truth label out of range");
        if (p >= n_labels) throw ParameterError("predicted label out of range");
        ++at(t, p);
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.n_labels != n_labels)
        throw ParameterError("cannot merge confusion matrices of different sizes");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (std::uint64_t c : counts) t += c;
    return t;
}

std::uint64_t ConfusionMatrix::row_total(int truth) const {
    std::uint64_t t = 0;
    for (int p = 0; p < n_labels; ++p) t += at(truth, p);
    return t;
}

std::uint64_t ConfusionMatrix::col_total(int pred) const {
    std::uint64_t t = 0;
    for (int r = 0; r < n_labels; ++r) t += at(r, pred);
    return t;
}

MetricsReport compute_metrics(const ConfusionMatrix& cm) {
    MetricsReport report;
    report.evaluated_pixels = cm.total();
    if (report.evaluated_pixels == 0)
        throw DegenerateInputError("confusion matrix is empty");

    report.per_class.resize(std::size_t(cm.n_labels));
    double acc_sum = 0.0, iou_sum = 0.0;
    double fg_acc_sum = 0.0, fg_iou_sum = 0.0;
    int n_present = 0, n_fg_present = 0;
    for (int c = 0; c < cm.n_labels; ++c) {
        ClassMetrics& m = report.per_class[c];
        const std::uint64_t row = cm.row_total(c);
        const std::uint64_t col = cm.col_total(c);
        const std::uint64_t diag = cm.at(c, c);
        m.truth_pixels = row;
        m.present = row > 0;
        if (!m.present) continue;
        m.accuracy = double(diag) / double(row);
        m.iou = double(diag) / double(row + col - diag);
        acc_sum += m.accuracy;
        iou_sum += m.iou;
        ++n_present;
        if (c != 0) {
            fg_acc_sum += m.accuracy;
            fg_iou_sum += m.iou;
            ++n_fg_present;
        }
    }
    report.mean_accuracy = acc_sum / n_present;
    report.mean_iou = iou_sum / n_present;
    report.foreground_defined = n_fg_present > 0;
    if (report.foreground_defined) {
        report.foreground_mean_accuracy = fg_acc_sum / n_fg_present;
        report.foreground_mean_iou = fg_iou_sum / n_fg_present;
    }
    return report;
}

std::string metrics_to_text(const MetricsReport& report,
                            const std::vector<std::string>& class_names) {
    auto name_of = [&](int c) {
        if (c < int(class_names.size())) return class_names[c];
        return c == 0 ? std::string("background") : "class " + std::to_string(c);
    };
    std::size_t name_width = 4;
    for (int c = 0; c < int(report.per_class.size()); ++c)
        name_width = std::max(name_width, name_of(c).size());

    std::string out;
    char line[160];
    std::snprintf(line, sizeof line, "%-*s  %10s  %8s  %8s\n", int(name_width), "class",
                  "pixels", "acc", "iou");
    out += line;
    for (int c = 0; c < int(report.per_class.size()); ++c) {
        const ClassMetrics& m = report.per_class[c];
        if (m.present)
            std::snprintf(line, sizeof line, "%-*s  %10llu  %7.2f%%  %7.2f%%\n",
                          int(name_width), name_of(c).c_str(),
                          (unsigned long long)m.truth_pixels, m.accuracy * 100.0,
                          m.iou * 100.0);
        else
            std::snprintf(line, sizeof line, "%-*s  %10llu  %8s  %8s\n", int(name_width),
                          name_of(c).c_str(), (unsigned long long)m.truth_pixels, "-", "-");
        out += line;
    }
    std::snprintf(line, sizeof line, "%-*s  %10llu  %7.2f%%  %7.2f%%\n", int(name_width),
                  "mean", (unsigned long long)report.evaluated_pixels,
                  report.mean_accuracy * 100.0, report.mean_iou * 100.0);
    out += line;
    if (report.foreground_defined) {
        std::snprintf(line, sizeof line, "%-*s  %10s  %7.2f%%  %7.2f%%\n", int(name_width),
                      "mean (fg)", "", report.foreground_mean_accuracy * 100.0,
                      report.foreground_mean_iou * 100.0);
        out += line;
    }
    return out;
}

nlohmann::json metrics_to_json(const MetricsReport& report) {
    nlohmann::json per_class = nlohmann::json::array();
    for (const ClassMetrics& m : report.per_class) {
        nlohmann::json entry{{"truth_pixels", m.truth_pixels}, {"present", m.present}};
        if (m.present) {
            entry["accuracy"] = m.accuracy;
            entry["iou"] = m.iou;
        }
        per_class.push_back(std::move(entry));
    }
    nlohmann::json j{{"per_class", std::move(per_class)},
                     {"mean_accuracy", report.mean_accuracy},
                     {"mean_iou", report.mean_iou},
                     {"evaluated_pixels", report.evaluated_pixels}};
    if (report.foreground_defined) {
        j["foreground_mean_accuracy"] = report.foreground_mean_accuracy;
        j["foreground_mean_iou"] = report.foreground_mean_iou;
    }
    return j;
}

EvalResult evaluate_model(const PixelClassifier& model, const DatasetManifest& manifest,
                          const EvalConfig& cfg, const std::string& split) {
    model.validate();
    if (cfg.window < 1 || cfg.stride < 1)
        throw ParameterError("evaluation window and stride must be >= 1");

    std::vector<std::size_t> indices;
    for (std::size_t i = 0; i < manifest.records.size(); ++i)
        if (split.empty() || manifest.records[i].split == split) indices.push_back(i);
    if (indices.empty()) throw DataError("no records to evaluate");

    std::vector<ConfusionMatrix> partial(indices.size(), ConfusionMatrix(kNumClasses));
    parallel_for(indices.size(), cfg.workers, [&](std::size_t k) {
        const ManifestRecord& rec = manifest.records[indices[k]];
        if (!rec.labels)
            throw DataError("record has no label map: " + rec.image);
        Image img = load_image_png(manifest.resolve(rec.image));
        const LabelMap truth = load_label_png(manifest.resolve(*rec.labels));
        if (truth.width != img.width || truth.height != img.height)
            throw DataError("label map shape differs from image: " + rec.image);
        if (cfg.canonicalize)
            img = canonicalize_input(img, cfg.extraction, cfg.target_bg_mean,
                                     cfg.target_bg_std);
        const LabelMap pred = sliding_window_infer(model, img, cfg.window, cfg.stride);
        partial[k].accumulate(truth, pred);
    });

    EvalResult result;
    result.n_images = indices.size();
    for (const ConfusionMatrix& cm : partial) result.confusion.merge(cm);
    result.report = compute_metrics(result.confusion);
    return result;
}

} // namespace cellmixer
