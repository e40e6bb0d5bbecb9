#include "cellmixer/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "cellmixer/errors.hpp"
#include "cellmixer/imageops.hpp"
#include "cellmixer/parallel.hpp"

namespace cellmixer {

void FeatureSpec::validate() const {
    for (int r : mean_radii)
        if (r < 1) throw ParameterError("feature mean radius must be >= 1");
    for (int r : std_radii)
        if (r < 1) throw ParameterError("feature std radius must be >= 1");
    if (feature_count() < 1) throw ParameterError("feature spec selects no features");
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ParameterError("learning_rate must be > 0");
    if (weight_decay < 0.0) throw ParameterError("weight_decay must be >= 0");
    if (iterations < 1) throw ParameterError("iterations must be >= 1");
    if (batch_pixels < 1) throw ParameterError("batch_pixels must be >= 1");
    if (crops_per_batch < 1) throw ParameterError("crops_per_batch must be >= 1");
    if (crop_size < 3) throw ParameterError("crop_size must be >= 3");
    if (!(tversky_alpha >= 0.0) || !(tversky_beta >= 0.0))
        throw ParameterError("tversky weights must be >= 0");
    if (augment.blur_sigma_min > augment.blur_sigma_max ||
        augment.noise_sigma_min > augment.noise_sigma_max ||
        augment.contrast_min > augment.contrast_max)
        throw ParameterError("augmentation range has min > max");
    if (augment.brightness_delta < 0.0)
        throw ParameterError("brightness_delta must be >= 0");
    features.validate();
}

TrainConfig full_scale_preset() {
    TrainConfig cfg;
    cfg.crop_size = 518;
    cfg.iterations = 20000;
    cfg.crops_per_batch = 16;
    cfg.learning_rate = 0.001;
    cfg.weight_decay = 0.0;
    return cfg;
}

PixelClassifier PixelClassifier::zeros(const FeatureSpec& spec) {
    spec.validate();
    PixelClassifier model;
    model.feature_spec = spec;
    model.weights.assign(std::size_t(model.n_classes) + 1,
                         std::vector<double>(std::size_t(spec.feature_count()) + 1, 0.0));
    return model;
}

void PixelClassifier::validate() const {
    feature_spec.validate();
    if (n_classes < 1) throw ParameterError("model must have at least one class");
    if (int(weights.size()) != n_classes + 1)
        throw ParameterError("model weight row count does not match class count");
    const std::size_t cols = std::size_t(feature_spec.feature_count()) + 1;
    for (const auto& row : weights)
        if (row.size() != cols)
            throw ParameterError("model weight column count does not match feature count");
}

void save_model(const std::string& path, const PixelClassifier& model) {
    model.validate();
    nlohmann::json j;
    j["format_version"] = 1;
    j["n_classes"] = model.n_classes;
    j["feature_spec"] = {{"mean_radii", model.feature_spec.mean_radii},
                         {"std_radii", model.feature_spec.std_radii},
                         {"include_sobel", model.feature_spec.include_sobel}};
    j["weights"] = model.weights;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write model file: " + path);
    out << j.dump(2) << "\n";
}

PixelClassifier load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open model file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed model file " + path + ": " + e.what());
    }
    PixelClassifier model;
    try {
        if (j.at("format_version").get<int>() != 1)
            throw DataError("unsupported model format version in " + path);
        const auto& spec = j.at("feature_spec");
        model.feature_spec.mean_radii = spec.at("mean_radii").get<std::vector<int>>();
        model.feature_spec.std_radii = spec.at("std_radii").get<std::vector<int>>();
        model.feature_spec.include_sobel = spec.at("include_sobel").get<bool>();
        model.n_classes = j.at("n_classes").get<int>();
        model.weights = j.at("weights").get<std::vector<std::vector<double>>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed model file " + path + ": " + e.what());
    }
    model.validate();
    return model;
}

namespace {

// Summed-area table over an edge-replicated padding of the image, so box
// statistics at the border reuse the nearest interior pixels.
struct PaddedSat {
    int pad = 0;
    int pw = 0, ph = 0;
    std::vector<double> sum, sum_sq;

    PaddedSat(const Image& img, int pad_) : pad(pad_) {
        pw = img.width + 2 * pad;
        ph = img.height + 2 * pad;
        sum.assign(std::size_t(pw + 1) * (ph + 1), 0.0);
        sum_sq.assign(std::size_t(pw + 1) * (ph + 1), 0.0);
        for (int y = 0; y < ph; ++y) {
            const int sy = clamp_index(y - pad, 0, img.height - 1);
            for (int x = 0; x < pw; ++x) {
                const int sx = clamp_index(x - pad, 0, img.width - 1);
                const double v = img.at(sx, sy);
                const std::size_t i = std::size_t(y + 1) * (pw + 1) + (x + 1);
                sum[i] = v + sum[i - 1] + sum[i - (pw + 1)] - sum[i - (pw + 1) - 1];
                sum_sq[i] =
                    v * v + sum_sq[i - 1] + sum_sq[i - (pw + 1)] - sum_sq[i - (pw + 1) - 1];
            }
        }
    }

    // Box centered at original-image pixel (x, y) with the given radius.
    void box(int x, int y, int radius, double& mean, double& stdev) const {
        const int x0 = x + pad - radius, x1 = x + pad + radius + 1;
        const int y0 = y + pad - radius, y1 = y + pad + radius + 1;
        const auto at = [this](const std::vector<double>& t, int xx, int yy) {
            return t[std::size_t(yy) * (pw + 1) + xx];
        };
        const double s = at(sum, x1, y1) - at(sum, x0, y1) - at(sum, x1, y0) + at(sum, x0, y0);
        const double s2 =
            at(sum_sq, x1, y1) - at(sum_sq, x0, y1) - at(sum_sq, x1, y0) + at(sum_sq, x0, y0);
        const double n = double(2 * radius + 1) * (2 * radius + 1);
        mean = s / n;
        const double var = std::max(0.0, s2 / n - mean * mean);
        stdev = std::sqrt(var);
    }
};

} // namespace

FeatureStack featurize(const Image& img, const FeatureSpec& spec) {
    spec.validate();
    FeatureStack stack;
    stack.width = img.width;
    stack.height = img.height;
    stack.n_features = spec.feature_count();
    stack.data.assign(img.size() * std::size_t(stack.n_features), 0.0f);

    int max_radius = 0;
    for (int r : spec.mean_radii) max_radius = std::max(max_radius, r);
    for (int r : spec.std_radii) max_radius = std::max(max_radius, r);
    PaddedSat sat(img, max_radius);

    GradientField sobel;
    if (spec.include_sobel) sobel = sobel_gradient_magnitude(img);

    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            float* f = &stack.data[(std::size_t(y) * img.width + x) * stack.n_features];
            int k = 0;
            f[k++] = img.at(x, y) - 0.5f;
            double mean, stdev;
            for (int r : spec.mean_radii) {
                sat.box(x, y, r, mean, stdev);
                f[k++] = float(mean - 0.5);
            }
            for (int r : spec.std_radii) {
                sat.box(x, y, r, mean, stdev);
                f[k++] = float(stdev * 4.0);
            }
            if (spec.include_sobel) f[k++] = sobel.at(x, y) * 0.25f;
        }
    }
    return stack;
}

std::vector<double> scores_stack(const PixelClassifier& model, const FeatureStack& stack) {
    model.validate();
    if (stack.n_features != model.feature_spec.feature_count())
        throw ParameterError("feature stack does not match model feature spec");
    const int channels = model.n_classes + 1;
    const int nf = stack.n_features;
    const std::size_t n = std::size_t(stack.width) * stack.height;
    std::vector<double> scores(n * channels, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const float* f = stack.pixel(i);
        for (int c = 0; c < channels; ++c) {
            const auto& w = model.weights[c];
            double z = w[nf];
            for (int k = 0; k < nf; ++k) z += w[k] * f[k];
            scores[i * channels + c] = z;
        }
    }
    return scores;
}

ProbabilityMap softmax_scores(const std::vector<double>& scores, int width, int height,
                              int channels) {
    ProbabilityMap out(width, height, channels);
    const std::size_t n = std::size_t(width) * height;
    if (scores.size() != n * channels)
        throw ParameterError("score buffer size does not match map dimensions");
    for (std::size_t i = 0; i < n; ++i) {
        const double* z = &scores[i * channels];
        double zmax = z[0];
        for (int c = 1; c < channels; ++c) zmax = std::max(zmax, z[c]);
        double total = 0.0;
        double* p = &out.data[i * channels];
        for (int c = 0; c < channels; ++c) {
            p[c] = std::exp(z[c] - zmax);
            total += p[c];
        }
        for (int c = 0; c < channels; ++c) p[c] /= total;
    }
    return out;
}

ProbabilityMap forward_stack(const PixelClassifier& model, const FeatureStack& stack) {
    return softmax_scores(scores_stack(model, stack), stack.width, stack.height,
                          model.n_classes + 1);
}

ProbabilityMap forward(const PixelClassifier& model, const Image& img) {
    return forward_stack(model, featurize(img, model.feature_spec));
}

TverskyResult tversky_loss(const ProbabilityMap& pred, const LabelMap& target, double alpha,
                           double beta) {
    if (pred.width != target.width || pred.height != target.height)
        throw ParameterError("prediction and target shapes differ");
    if (pred.channels < 2) throw ParameterError("probability map needs at least two channels");
    const int channels = pred.channels;
    const std::size_t n = std::size_t(pred.width) * pred.height;
    constexpr double eps = 1.0;

    std::vector<double> tp(channels, 0.0), fn(channels, 0.0), fp(channels, 0.0);
    std::size_t valid = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t lab = target.data[i];
        if (lab == kIgnoreLabel) continue;
        if (lab >= channels) throw ParameterError("target label exceeds channel count");
        ++valid;
        const double* p = &pred.data[i * channels];
        for (int c = 0; c < channels; ++c) {
            const double t = (lab == c) ? 1.0 : 0.0;
            tp[c] += p[c] * t;
            fn[c] += t * (1.0 - p[c]);
            fp[c] += p[c] * (1.0 - t);
        }
    }
    if (valid == 0) throw DegenerateInputError("every pixel in the loss target is ignored");

    TverskyResult result;
    std::vector<double> num(channels), den(channels);
    for (int c = 0; c < channels; ++c) {
        num[c] = tp[c] + eps;
        den[c] = tp[c] + alpha * fn[c] + beta * fp[c] + eps;
        result.loss += 1.0 - num[c] / den[c];
    }
    result.loss /= channels;

    // dL/dp, then softmax backward to score space.
    result.grad_scores.assign(n * channels, 0.0);
    std::vector<double> grad_p(channels);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t lab = target.data[i];
        double* gz = &result.grad_scores[i * channels];
        if (lab == kIgnoreLabel) continue;
        const double* p = &pred.data[i * channels];
        double dot = 0.0;
        for (int c = 0; c < channels; ++c) {
            const double t = (lab == c) ? 1.0 : 0.0;
            const double d_den = t * (1.0 - alpha) + beta * (1.0 - t);
            const double d_ti = (t * den[c] - num[c] * d_den) / (den[c] * den[c]);
            grad_p[c] = -d_ti / channels;
            dot += grad_p[c] * p[c];
        }
        for (int c = 0; c < channels; ++c) gz[c] = p[c] * (grad_p[c] - dot);
    }
    return result;
}

void augment(Image& img, LabelMap& labels, const AugmentConfig& cfg, Rng& rng) {
    if (img.width != labels.width || img.height != labels.height)
        throw ParameterError("image and label shapes differ");
    const int w = img.width, h = img.height;

    if (cfg.flip && rng.coin()) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w / 2; ++x) {
                std::swap(img.at(x, y), img.at(w - 1 - x, y));
                std::swap(labels.at(x, y), labels.at(w - 1 - x, y));
            }
    }
    if (cfg.flip && rng.coin()) {
        for (int y = 0; y < h / 2; ++y)
            for (int x = 0; x < w; ++x) {
                std::swap(img.at(x, y), img.at(x, h - 1 - y));
                std::swap(labels.at(x, y), labels.at(x, h - 1 - y));
            }
    }
    if (cfg.blur && rng.coin()) {
        const double sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
        img = gaussian_smooth(img, sigma, std::max(1, int(std::ceil(2.0 * sigma))));
    }
    if (cfg.noise && rng.coin()) {
        const double sigma = rng.uniform(cfg.noise_sigma_min, cfg.noise_sigma_max);
        for (float& v : img.data) v = clamp01(v + float(sigma * rng.normal()));
    }
    if (cfg.brightness && rng.coin()) {
        const double delta = rng.uniform(-cfg.brightness_delta, cfg.brightness_delta);
        for (float& v : img.data) v = clamp01(v + float(delta));
    }
    if (cfg.contrast && rng.coin()) {
        const double factor = rng.uniform(cfg.contrast_min, cfg.contrast_max);
        double mean = 0.0;
        for (float v : img.data) mean += v;
        mean /= double(img.size());
        for (float& v : img.data) v = clamp01(float(mean + (v - mean) * factor));
    }
}

namespace {

struct CropSample {
    Image image{1, 1};
    LabelMap labels{1, 1};
};

CropSample draw_baseline_crop(const SamplePool& pool, int crop_size, Rng& rng) {
    const std::size_t idx = std::size_t(rng.uniform_int(int(pool.size())));
    const PoolEntry& entry = pool.entry(idx);
    const int cw = std::min(crop_size, entry.image.width);
    const int ch = std::min(crop_size, entry.image.height);
    const int ox = rng.uniform_int(entry.image.width - cw + 1);
    const int oy = rng.uniform_int(entry.image.height - ch + 1);
    CropSample crop{Image(cw, ch), LabelMap(cw, ch)};
    for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x) {
            crop.image.at(x, y) = entry.image.at(ox + x, oy + y);
            crop.labels.at(x, y) = entry.labels.at(ox + x, oy + y);
        }
    return crop;
}

bool all_ignored(const LabelMap& labels) {
    for (std::uint8_t v : labels.data)
        if (v != kIgnoreLabel) return false;
    return true;
}

} // namespace

TrainResult train(const SamplePool& pool, const TrainConfig& cfg, TrainMode mode) {
    cfg.validate();
    if (pool.size() == 0) throw DataError("training pool is empty");

    MixerConfig mixer_cfg = cfg.mixer;
    mixer_cfg.crop_size = cfg.crop_size;
    mixer_cfg.validate();

    // Composited crops leave sample_mixed_crop already in the canonical
    // background frame; homogeneous crops have to be mapped there too or the
    // model would learn the raw background level as a class cue.
    SamplePool canonical;
    if (mode == TrainMode::Baseline) {
        for (std::size_t i = 0; i < pool.size(); ++i) {
            PoolEntry entry = pool.entry(i);
            entry.image = normalize_background(entry.image, entry.labels,
                                               mixer_cfg.target_bg_mean,
                                               mixer_cfg.target_bg_std);
            canonical.add(std::move(entry));
        }
    }
    const SamplePool& crop_pool = (mode == TrainMode::Baseline) ? canonical : pool;

    TrainResult result;
    result.model = PixelClassifier::zeros(cfg.features);
    result.loss_trace.reserve(std::size_t(cfg.iterations));
    PixelClassifier& model = result.model;

    const int channels = model.n_classes + 1;
    const int nf = cfg.features.feature_count();
    const std::uint64_t mode_id = (mode == TrainMode::Baseline) ? 0 : 1;
    std::vector<std::vector<double>> grad(std::size_t(channels),
                                          std::vector<double>(std::size_t(nf) + 1, 0.0));

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        Rng rng = derive_rng(cfg.seed, "train-iter", std::uint64_t(iter), mode_id);

        // The pixel batch is spread over several crops so most batches mix
        // classes; a single-population batch starves the per-class loss terms.
        FeatureStack batch;
        batch.width = cfg.batch_pixels;
        batch.height = 1;
        batch.n_features = nf;
        batch.data.resize(std::size_t(cfg.batch_pixels) * nf);
        LabelMap batch_labels(cfg.batch_pixels, 1);
        bool any_valid = false;
        int filled = 0;
        const int k = cfg.crops_per_batch;
        for (int j = 0; j < k; ++j) {
            const int quota = cfg.batch_pixels / k + (j < cfg.batch_pixels % k ? 1 : 0);
            if (quota == 0) continue;

            CropSample crop;
            bool usable = false;
            for (int attempt = 0; attempt < 16 && !usable; ++attempt) {
                if (mode == TrainMode::Baseline) {
                    crop = draw_baseline_crop(crop_pool, cfg.crop_size, rng);
                } else {
                    MixedSample mixed = sample_mixed_crop(crop_pool, mixer_cfg, rng);
                    crop.image = std::move(mixed.image);
                    crop.labels = std::move(mixed.labels);
                }
                augment(crop.image, crop.labels, cfg.augment, rng);
                usable = !all_ignored(crop.labels);
            }
            if (!usable)
                throw TrainingError("could not draw a training crop with any labeled pixels");

            const FeatureStack stack = featurize(crop.image, cfg.features);

            // Uniform pixel draws hand nearly the whole batch to the majority
            // classes; the rarest class's loss term then saturates (softmax
            // probability pinned near zero, so its gradient vanishes) before it
            // ever forms a usable direction, and it never recovers. Splitting
            // each crop's quota evenly across the classes present keeps every
            // per-class term live from the first iteration.
            std::vector<std::vector<int>> buckets(static_cast<std::size_t>(channels));
            for (std::size_t i = 0; i < crop.labels.data.size(); ++i) {
                const std::int32_t lab = crop.labels.data[i];
                if (lab >= 0 && lab < channels) buckets[std::size_t(lab)].push_back(int(i));
            }
            std::vector<int> present;
            for (int c = 0; c < channels; ++c)
                if (!buckets[std::size_t(c)].empty()) present.push_back(c);

            for (int b = 0; b < quota; ++b, ++filled) {
                const auto& bucket = buckets[std::size_t(present[std::size_t(b) % present.size()])];
                const std::size_t pix =
                    std::size_t(bucket[std::size_t(rng.uniform_int(int(bucket.size())))]);
                std::copy_n(stack.pixel(pix), nf, &batch.data[std::size_t(filled) * nf]);
                batch_labels.data[filled] = crop.labels.data[pix];
                any_valid = true;
            }
        }
        if (!any_valid) {
            result.loss_trace.push_back(result.loss_trace.empty() ? 0.0
                                                                  : result.loss_trace.back());
            continue;
        }

        const std::vector<double> scores = scores_stack(model, batch);
        const ProbabilityMap probs = softmax_scores(scores, cfg.batch_pixels, 1, channels);
        const TverskyResult tv =
            tversky_loss(probs, batch_labels, cfg.tversky_alpha, cfg.tversky_beta);
        if (!std::isfinite(tv.loss))
            throw TrainingError("loss diverged at iteration " + std::to_string(iter));
        result.loss_trace.push_back(tv.loss);

        for (auto& row : grad) std::fill(row.begin(), row.end(), 0.0);
        for (int b = 0; b < cfg.batch_pixels; ++b) {
            const double* gz = &tv.grad_scores[std::size_t(b) * channels];
            const float* f = &batch.data[std::size_t(b) * nf];
            for (int c = 0; c < channels; ++c) {
                if (gz[c] == 0.0) continue;
                auto& row = grad[c];
                for (int k = 0; k < nf; ++k) row[k] += gz[c] * f[k];
                row[nf] += gz[c];
            }
        }
        for (int c = 0; c < channels; ++c) {
            auto& w = model.weights[c];
            const auto& g = grad[c];
            for (int k = 0; k <= nf; ++k) {
                w[k] -= cfg.learning_rate * (g[k] + cfg.weight_decay * w[k]);
                if (!std::isfinite(w[k]))
                    throw TrainingError("weights diverged at iteration " + std::to_string(iter));
            }
        }
    }
    return result;
}

LabelMap sliding_window_infer(const PixelClassifier& model, const Image& img, int window,
                              int stride, int workers) {
    model.validate();
    if (window < 1) throw ParameterError("window must be >= 1");
    if (stride < 1) throw ParameterError("stride must be >= 1");
    const int channels = model.n_classes + 1;
    const int ww = std::min(window, img.width);
    const int wh = std::min(window, img.height);

    const auto starts = [](int extent, int span, int step) {
        std::vector<int> out;
        const int last = extent - span;
        for (int s = 0;; s += step) {
            if (s >= last) {
                out.push_back(last);
                break;
            }
            out.push_back(s);
        }
        return out;
    };
    const std::vector<int> xs = starts(img.width, ww, stride);
    const std::vector<int> ys = starts(img.height, wh, stride);

    struct Tile {
        int ox = 0, oy = 0;
        ProbabilityMap probs;
    };
    std::vector<Tile> tiles(xs.size() * ys.size());
    for (std::size_t iy = 0; iy < ys.size(); ++iy)
        for (std::size_t ix = 0; ix < xs.size(); ++ix) {
            tiles[iy * xs.size() + ix].ox = xs[ix];
            tiles[iy * xs.size() + ix].oy = ys[iy];
        }

    parallel_for(tiles.size(), workers, [&](std::size_t t) {
        Tile& tile = tiles[t];
        Image patch(ww, wh);
        for (int y = 0; y < wh; ++y)
            for (int x = 0; x < ww; ++x) patch.at(x, y) = img.at(tile.ox + x, tile.oy + y);
        tile.probs = forward(model, patch);
    });

    // Per pixel the tile count is shared by every channel, so the argmax of the
    // probability sums equals the argmax of the averages.
    ProbabilityMap accum(img.width, img.height, channels);
    for (const Tile& tile : tiles) {
        for (int y = 0; y < wh; ++y)
            for (int x = 0; x < ww; ++x) {
                const int gx = tile.ox + x, gy = tile.oy + y;
                double* dst = &accum.data[(std::size_t(gy) * img.width + gx) * channels];
                const double* src = &tile.probs.data[(std::size_t(y) * ww + x) * channels];
                for (int c = 0; c < channels; ++c) dst[c] += src[c];
            }
    }

    LabelMap out(img.width, img.height);
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double* p = &accum.data[i * channels];
        int best = 0;
        double best_p = p[0];
        for (int c = 1; c < channels; ++c)
            if (p[c] > best_p) {
                best_p = p[c];
                best = c;
            }
        out.data[i] = std::uint8_t(best);
    }
    return out;
}

} // namespace cellmixer
