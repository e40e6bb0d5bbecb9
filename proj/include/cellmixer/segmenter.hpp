#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cellmixer/image.hpp"
#include "cellmixer/mixer.hpp"
#include "cellmixer/rng.hpp"

namespace cellmixer {

// Handcrafted per-pixel features: raw intensity, box mean/std at several
// radii, Sobel magnitude. Fixed at training time, serialized with the model.
struct FeatureSpec {
    // Mean radii cover the cell size range plus the neighborhood beyond it:
    // the profile across window sizes is what separates the classes. Box
    // std is available but off by default; its background noise floor does
    // not scale with cell contrast, which hurts transfer across contrasts.
    std::vector<int> mean_radii = {2, 4, 8, 12, 16, 24};
    std::vector<int> std_radii = {};
    bool include_sobel = true;

    int feature_count() const {
        return 1 + int(mean_radii.size()) + int(std_radii.size()) + (include_sobel ? 1 : 0);
    }
    void validate() const;
};

struct FeatureStack {
    int width = 0;
    int height = 0;
    int n_features = 0;
    std::vector<float> data; // pixel-major: data[pixel * n_features + f]

    const float* pixel(std::size_t i) const { return &data[i * std::size_t(n_features)]; }
};

// Multinomial linear model over per-pixel features; 4 outputs
// (background + 3 classes), weights[c] has feature_count()+1 entries (bias last).
struct PixelClassifier {
    FeatureSpec feature_spec;
    int n_classes = kNumForegroundClasses;
    std::vector<std::vector<double>> weights;

    static PixelClassifier zeros(const FeatureSpec& spec);
    void validate() const;
};

void save_model(const std::string& path, const PixelClassifier& model);
PixelClassifier load_model(const std::string& path);

// Per-pixel distribution over {background, classes}; pixel-major doubles.
struct ProbabilityMap {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> data;

    ProbabilityMap() = default;
    ProbabilityMap(int w, int h, int c)
        : width(w), height(h), channels(c), data(std::size_t(w) * h * c, 0.0) {}
    double at(int x, int y, int c) const {
        return data[(std::size_t(y) * width + x) * channels + c];
    }
    double& at(int x, int y, int c) {
        return data[(std::size_t(y) * width + x) * channels + c];
    }
};

struct AugmentConfig {
    bool flip = true;
    bool blur = false;
    double blur_sigma_min = 0.5, blur_sigma_max = 1.5;
    bool noise = true;
    double noise_sigma_min = 0.01, noise_sigma_max = 0.05;
    // Brightness shifts are off by default: inputs arrive background-
    // normalized, and shifting the whole frame just teaches the model to
    // distrust the one anchor the normalization provides.
    bool brightness = false;
    double brightness_delta = 0.3; // shift drawn from [-delta, +delta]
    // Contrast scaling is the essential one: composites carry cells at half
    // contrast, so training must expose each model to rescaled versions.
    bool contrast = true;
    double contrast_min = 0.5, contrast_max = 2.0;
};

struct TrainConfig {
    double learning_rate = 0.001;
    double weight_decay = 0.0;
    int iterations = 2000;
    int batch_pixels = 4096;
    int crops_per_batch = 4; // batch pixels are spread over this many crops
    int crop_size = 128;
    double tversky_alpha = 0.7;
    double tversky_beta = 0.3;
    std::uint64_t seed = 0;
    AugmentConfig augment;
    FeatureSpec features;
    MixerConfig mixer; // used by the CellMixer mode; crop_size is forced to match

    void validate() const;
};

// Large-crop settings: crop 518, 20k iterations, lr 0.001, no weight decay.
TrainConfig full_scale_preset();

// Flips touch image and labels together; blur/noise/brightness/contrast touch
// the image only. Each transform fires with independent probability 0.5.
void augment(Image& img, LabelMap& labels, const AugmentConfig& cfg, Rng& rng);

FeatureStack featurize(const Image& img, const FeatureSpec& spec);

ProbabilityMap forward(const PixelClassifier& model, const Image& img);
ProbabilityMap forward_stack(const PixelClassifier& model, const FeatureStack& stack);

// Raw linear scores (pre-softmax), used by the loss gradient path.
std::vector<double> scores_stack(const PixelClassifier& model, const FeatureStack& stack);
ProbabilityMap softmax_scores(const std::vector<double>& scores, int width, int height,
                              int channels);

struct TverskyResult {
    double loss = 0.0;
    std::vector<double> grad_scores; // same layout as the score/probability map
};

// Soft Tversky index per class with smoothing eps = 1, mean(1 - TI) over all
// classes (background included). Pixels labeled 255 are excluded everywhere.
// The gradient is with respect to the pre-softmax scores.
TverskyResult tversky_loss(const ProbabilityMap& pred, const LabelMap& target, double alpha,
                           double beta);

enum class TrainMode { Baseline, CellMixer };

struct TrainResult {
    PixelClassifier model;
    std::vector<double> loss_trace;
};

// SGD on the Tversky loss over sampled crops. Baseline draws homogeneous
// crops straight from the pool; CellMixer draws composited crops through
// sample_mixed_crop. Deterministic from cfg.seed.
TrainResult train(const SamplePool& pool, const TrainConfig& cfg, TrainMode mode);

// Overlapping windows, probabilities averaged, argmax per pixel with ties
// toward the lower class index. Windows larger than the image are clipped.
LabelMap sliding_window_infer(const PixelClassifier& model, const Image& img, int window,
                              int stride, int workers = 1);

} // namespace cellmixer
