#include "cellmixer/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "cellmixer/errors.hpp"
#include "cellmixer/rng.hpp"

namespace cellmixer {

void ExperimentConfig::validate() const {
    if (n_train_per_class < 1) throw ParameterError("n_train_per_class must be >= 1");
    if (n_test_unmixed_per_class < 0 || n_test_mixture < 0 || n_artificial_mix < 0)
        throw ParameterError("test set sizes must be >= 0");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0))
        throw ParameterError("val_fraction must be in [0, 1)");
    if (workers < 1) throw ParameterError("workers must be >= 1");
}

void PipelineConfig::validate() const {
    phantom.validate();
    extraction.validate();
    mixer.validate();
    train.validate();
    if (eval.window < 1 || eval.stride < 1)
        throw ParameterError("eval window and stride must be >= 1");
    experiment.validate();
}

namespace {

using nlohmann::json;

void check_keys(const json& j, const char* where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ParameterError(std::string(where) + " must be a JSON object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!ok.count(key))
            throw ParameterError(std::string("unknown key \"") + key + "\" in " + where);
    }
}

json element_to_json(const StructuringElement& e) {
    // Recover the named form when the offsets match a square or disk.
    int radius = 0;
    for (const auto& [dx, dy] : e.offsets)
        radius = std::max({radius, dx < 0 ? -dx : dx, dy < 0 ? -dy : dy});
    const auto same = [&](const StructuringElement& ref) {
        std::set<std::pair<int, int>> a(e.offsets.begin(), e.offsets.end());
        std::set<std::pair<int, int>> b(ref.offsets.begin(), ref.offsets.end());
        return a == b;
    };
    if (same(StructuringElement::square(radius)))
        return json{{"shape", "square"}, {"radius", radius}};
    if (same(StructuringElement::disk(radius)))
        return json{{"shape", "disk"}, {"radius", radius}};
    json offs = json::array();
    for (const auto& [dx, dy] : e.offsets) offs.push_back(json::array({dx, dy}));
    return json{{"shape", "custom"}, {"offsets", offs}};
}

StructuringElement element_from_json(const json& j) {
    check_keys(j, "erosion_element", {"shape", "radius", "offsets"});
    const std::string shape = j.at("shape").get<std::string>();
    if (shape == "square") return StructuringElement::square(j.at("radius").get<int>());
    if (shape == "disk") return StructuringElement::disk(j.at("radius").get<int>());
    if (shape == "custom") {
        StructuringElement e;
        e.offsets.clear();
        for (const auto& pair : j.at("offsets"))
            e.offsets.emplace_back(pair.at(0).get<int>(), pair.at(1).get<int>());
        if (e.offsets.empty()) throw ParameterError("custom erosion element has no offsets");
        return e;
    }
    throw ParameterError("unknown erosion element shape: " + shape);
}

json phantom_to_json(const PhantomConfig& c) {
    json styles = json::array();
    for (const ClassStyle& s : c.class_styles)
        styles.push_back({{"interior", s.interior},
                          {"ring_offset", s.ring_offset},
                          {"ring_width", s.ring_width},
                          {"speckle_amp", s.speckle_amp},
                          {"ecc_min", s.ecc_min},
                          {"ecc_max", s.ecc_max},
                          {"radius_scale", s.radius_scale},
                          {"bg_offset", s.bg_offset}});
    return json{{"image_size", c.image_size},
                {"cells_min", c.cells_min},
                {"cells_max", c.cells_max},
                {"radius_min", c.radius_min},
                {"radius_max", c.radius_max},
                {"class_styles", styles},
                {"bg_mean", c.bg_mean},
                {"bg_jitter", c.bg_jitter},
                {"bg_noise", c.bg_noise},
                {"scene_blur_sigma", c.scene_blur_sigma},
                {"min_separation", c.min_separation},
                {"placement_retries", c.placement_retries}};
}

PhantomConfig phantom_from_json(const json& j) {
    PhantomConfig c;
    check_keys(j, "phantom",
               {"image_size", "cells_min", "cells_max", "radius_min", "radius_max",
                "class_styles", "bg_mean", "bg_jitter", "bg_noise", "scene_blur_sigma",
                "min_separation", "placement_retries"});
    c.image_size = j.value("image_size", c.image_size);
    c.cells_min = j.value("cells_min", c.cells_min);
    c.cells_max = j.value("cells_max", c.cells_max);
    c.radius_min = j.value("radius_min", c.radius_min);
    c.radius_max = j.value("radius_max", c.radius_max);
    if (j.contains("class_styles")) {
        const auto& styles = j.at("class_styles");
        if (styles.size() != c.class_styles.size())
            throw ParameterError("class_styles must have exactly 3 entries");
        for (std::size_t i = 0; i < c.class_styles.size(); ++i) {
            const auto& s = styles[i];
            check_keys(s, "class_styles entry",
                       {"interior", "ring_offset", "ring_width", "speckle_amp", "ecc_min",
                        "ecc_max", "radius_scale", "bg_offset"});
            ClassStyle& d = c.class_styles[i];
            d.interior = s.value("interior", d.interior);
            d.ring_offset = s.value("ring_offset", d.ring_offset);
            d.ring_width = s.value("ring_width", d.ring_width);
            d.speckle_amp = s.value("speckle_amp", d.speckle_amp);
            d.ecc_min = s.value("ecc_min", d.ecc_min);
            d.ecc_max = s.value("ecc_max", d.ecc_max);
            d.radius_scale = s.value("radius_scale", d.radius_scale);
            d.bg_offset = s.value("bg_offset", d.bg_offset);
        }
    }
    c.bg_mean = j.value("bg_mean", c.bg_mean);
    c.bg_jitter = j.value("bg_jitter", c.bg_jitter);
    c.bg_noise = j.value("bg_noise", c.bg_noise);
    c.scene_blur_sigma = j.value("scene_blur_sigma", c.scene_blur_sigma);
    c.min_separation = j.value("min_separation", c.min_separation);
    c.placement_retries = j.value("placement_retries", c.placement_retries);
    return c;
}

json extraction_to_json(const ExtractionConfig& c) {
    return json{{"sigma_pre", c.sigma_pre},
                {"sigma_post", c.sigma_post},
                {"erosion_element", element_to_json(c.erosion_element)},
                {"erosion_rounds", c.erosion_rounds},
                {"threshold_mode", c.threshold_mode == ThresholdMode::Otsu ? "otsu" : "local_mean"},
                {"otsu_bins", c.otsu_bins},
                {"local_mean_window", c.local_mean_window},
                {"local_mean_offset", c.local_mean_offset},
                {"min_component_area", c.min_component_area},
                {"close_radius", c.close_radius}};
}

ExtractionConfig extraction_from_json(const json& j) {
    ExtractionConfig c;
    check_keys(j, "extraction",
               {"sigma_pre", "sigma_post", "erosion_element", "erosion_rounds",
                "threshold_mode", "otsu_bins", "local_mean_window", "local_mean_offset",
                "min_component_area", "close_radius"});
    c.sigma_pre = j.value("sigma_pre", c.sigma_pre);
    c.sigma_post = j.value("sigma_post", c.sigma_post);
    if (j.contains("erosion_element")) c.erosion_element = element_from_json(j.at("erosion_element"));
    c.erosion_rounds = j.value("erosion_rounds", c.erosion_rounds);
    if (j.contains("threshold_mode")) {
        const std::string mode = j.at("threshold_mode").get<std::string>();
        if (mode == "otsu")
            c.threshold_mode = ThresholdMode::Otsu;
        else if (mode == "local_mean")
            c.threshold_mode = ThresholdMode::LocalMean;
        else
            throw ParameterError("unknown threshold_mode: " + mode);
    }
    c.otsu_bins = j.value("otsu_bins", c.otsu_bins);
    c.local_mean_window = j.value("local_mean_window", c.local_mean_window);
    c.local_mean_offset = j.value("local_mean_offset", c.local_mean_offset);
    c.min_component_area = j.value("min_component_area", c.min_component_area);
    c.close_radius = j.value("close_radius", c.close_radius);
    return c;
}

json mixer_to_json(const MixerConfig& c) {
    return json{{"lambda", c.lambda},
                {"crop_size", c.crop_size},
                {"target_bg_mean", c.target_bg_mean},
                {"target_bg_std", c.target_bg_std},
                {"pairs_per_epoch", c.pairs_per_epoch},
                {"allow_same_class", c.allow_same_class},
                {"max_draw_retries", c.max_draw_retries}};
}

MixerConfig mixer_from_json(const json& j) {
    MixerConfig c;
    check_keys(j, "mixer",
               {"lambda", "crop_size", "target_bg_mean", "target_bg_std", "pairs_per_epoch",
                "allow_same_class", "max_draw_retries"});
    c.lambda = j.value("lambda", c.lambda);
    c.crop_size = j.value("crop_size", c.crop_size);
    c.target_bg_mean = j.value("target_bg_mean", c.target_bg_mean);
    c.target_bg_std = j.value("target_bg_std", c.target_bg_std);
    c.pairs_per_epoch = j.value("pairs_per_epoch", c.pairs_per_epoch);
    c.allow_same_class = j.value("allow_same_class", c.allow_same_class);
    c.max_draw_retries = j.value("max_draw_retries", c.max_draw_retries);
    return c;
}

json train_to_json(const TrainConfig& c) {
    return json{{"learning_rate", c.learning_rate},
                {"weight_decay", c.weight_decay},
                {"iterations", c.iterations},
                {"batch_pixels", c.batch_pixels},
                {"crops_per_batch", c.crops_per_batch},
                {"crop_size", c.crop_size},
                {"tversky_alpha", c.tversky_alpha},
                {"tversky_beta", c.tversky_beta},
                {"augment",
                 {{"flip", c.augment.flip},
                  {"blur", c.augment.blur},
                  {"blur_sigma_min", c.augment.blur_sigma_min},
                  {"blur_sigma_max", c.augment.blur_sigma_max},
                  {"noise", c.augment.noise},
                  {"noise_sigma_min", c.augment.noise_sigma_min},
                  {"noise_sigma_max", c.augment.noise_sigma_max},
                  {"brightness", c.augment.brightness},
                  {"brightness_delta", c.augment.brightness_delta},
                  {"contrast", c.augment.contrast},
                  {"contrast_min", c.augment.contrast_min},
                  {"contrast_max", c.augment.contrast_max}}},
                {"features",
                 {{"mean_radii", c.features.mean_radii},
                  {"std_radii", c.features.std_radii},
                  {"include_sobel", c.features.include_sobel}}}};
}

TrainConfig train_from_json(const json& j) {
    TrainConfig c;
    check_keys(j, "train",
               {"learning_rate", "weight_decay", "iterations", "batch_pixels",
                "crops_per_batch", "crop_size", "tversky_alpha", "tversky_beta", "augment",
                "features"});
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.iterations = j.value("iterations", c.iterations);
    c.batch_pixels = j.value("batch_pixels", c.batch_pixels);
    c.crops_per_batch = j.value("crops_per_batch", c.crops_per_batch);
    c.crop_size = j.value("crop_size", c.crop_size);
    c.tversky_alpha = j.value("tversky_alpha", c.tversky_alpha);
    c.tversky_beta = j.value("tversky_beta", c.tversky_beta);
    if (j.contains("augment")) {
        const auto& a = j.at("augment");
        check_keys(a, "train.augment",
                   {"flip", "blur", "blur_sigma_min", "blur_sigma_max", "noise",
                    "noise_sigma_min", "noise_sigma_max", "brightness", "brightness_delta",
                    "contrast", "contrast_min", "contrast_max"});
        AugmentConfig& d = c.augment;
        d.flip = a.value("flip", d.flip);
        d.blur = a.value("blur", d.blur);
        d.blur_sigma_min = a.value("blur_sigma_min", d.blur_sigma_min);
        d.blur_sigma_max = a.value("blur_sigma_max", d.blur_sigma_max);
        d.noise = a.value("noise", d.noise);
        d.noise_sigma_min = a.value("noise_sigma_min", d.noise_sigma_min);
        d.noise_sigma_max = a.value("noise_sigma_max", d.noise_sigma_max);
        d.brightness = a.value("brightness", d.brightness);
        d.brightness_delta = a.value("brightness_delta", d.brightness_delta);
        d.contrast = a.value("contrast", d.contrast);
        d.contrast_min = a.value("contrast_min", d.contrast_min);
        d.contrast_max = a.value("contrast_max", d.contrast_max);
    }
    if (j.contains("features")) {
        const auto& f = j.at("features");
        check_keys(f, "train.features", {"mean_radii", "std_radii", "include_sobel"});
        if (f.contains("mean_radii")) c.features.mean_radii = f.at("mean_radii").get<std::vector<int>>();
        if (f.contains("std_radii")) c.features.std_radii = f.at("std_radii").get<std::vector<int>>();
        c.features.include_sobel = f.value("include_sobel", c.features.include_sobel);
    }
    return c;
}

} // namespace

PipelineConfig config_from_json(const nlohmann::json& j) {
    PipelineConfig cfg;
    check_keys(j, "config",
               {"seed", "phantom", "extraction", "mixer", "train", "eval", "experiment"});
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("phantom")) cfg.phantom = phantom_from_json(j.at("phantom"));
    if (j.contains("extraction")) cfg.extraction = extraction_from_json(j.at("extraction"));
    if (j.contains("mixer")) cfg.mixer = mixer_from_json(j.at("mixer"));
    if (j.contains("train")) cfg.train = train_from_json(j.at("train"));
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        check_keys(e, "eval", {"window", "stride"});
        cfg.eval.window = e.value("window", cfg.eval.window);
        cfg.eval.stride = e.value("stride", cfg.eval.stride);
    }
    if (j.contains("experiment")) {
        const auto& e = j.at("experiment");
        check_keys(e, "experiment",
                   {"n_train_per_class", "n_test_unmixed_per_class", "n_test_mixture",
                    "n_artificial_mix", "val_fraction", "workers"});
        ExperimentConfig& d = cfg.experiment;
        d.n_train_per_class = e.value("n_train_per_class", d.n_train_per_class);
        d.n_test_unmixed_per_class = e.value("n_test_unmixed_per_class", d.n_test_unmixed_per_class);
        d.n_test_mixture = e.value("n_test_mixture", d.n_test_mixture);
        d.n_artificial_mix = e.value("n_artificial_mix", d.n_artificial_mix);
        d.val_fraction = e.value("val_fraction", d.val_fraction);
        d.workers = e.value("workers", d.workers);
    }
    cfg.validate();
    return cfg;
}

nlohmann::json config_to_json(const PipelineConfig& cfg) {
    return nlohmann::json{{"seed", cfg.seed},
                          {"phantom", phantom_to_json(cfg.phantom)},
                          {"extraction", extraction_to_json(cfg.extraction)},
                          {"mixer", mixer_to_json(cfg.mixer)},
                          {"train", train_to_json(cfg.train)},
                          {"eval", {{"window", cfg.eval.window}, {"stride", cfg.eval.stride}}},
                          {"experiment",
                           {{"n_train_per_class", cfg.experiment.n_train_per_class},
                            {"n_test_unmixed_per_class", cfg.experiment.n_test_unmixed_per_class},
                            {"n_test_mixture", cfg.experiment.n_test_mixture},
                            {"n_artificial_mix", cfg.experiment.n_artificial_mix},
                            {"val_fraction", cfg.experiment.val_fraction},
                            {"workers", cfg.experiment.workers}}}};
}

PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParameterError("malformed config file " + path + ": " + e.what());
    }
    return config_from_json(j);
}

void save_config(const std::string& path, const PipelineConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write config file: " + path);
    out << config_to_json(cfg).dump(2) << "\n";
}

std::string config_hash(const PipelineConfig& cfg) {
    const std::uint64_t h = fnv1a64(config_to_json(cfg).dump());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
    return std::string(buf);
}

} // namespace cellmixer
