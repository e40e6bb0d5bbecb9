#include "cellmixer/experiment.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "cellmixer/errors.hpp"
#include "cellmixer/png_io.hpp"
#include "cellmixer/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cellmixer {

std::vector<std::uint8_t> render_overlay(const Image& base, const LabelMap& labels) {
    if (!same_shape(base, labels))
        throw ParameterError("overlay base and labels shapes differ");
    static constexpr std::uint8_t class_colors[4][3] = {
        {0, 0, 0}, {0, 0, 255}, {255, 0, 0}, {0, 255, 0}};
    std::vector<std::uint8_t> rgb(base.size() * 3);
    for (int y = 0; y < base.height; ++y)
        for (int x = 0; x < base.width; ++x) {
            const float g = clamp01(base.at(x, y)) * 255.0f;
            const std::uint8_t lab = labels.at(x, y);
            std::uint8_t* px = &rgb[(std::size_t(y) * base.width + x) * 3];
            if (lab == kIgnoreLabel) {
                const bool hatch = ((x + y) / 4) % 2 == 0;
                for (int c = 0; c < 3; ++c) {
                    const float tint = hatch ? (c < 2 ? 255.0f : 0.0f) : g;
                    px[c] = std::uint8_t(std::lround(0.5f * g + 0.5f * tint));
                }
            } else if (lab >= 1 && lab <= kNumForegroundClasses) {
                for (int c = 0; c < 3; ++c)
                    px[c] = std::uint8_t(std::lround(0.5f * g + 0.5f * class_colors[lab][c]));
            } else {
                for (int c = 0; c < 3; ++c) px[c] = std::uint8_t(std::lround(g));
            }
        }
    return rgb;
}

void save_overlay(const std::string& path, const Image& base, const LabelMap& labels) {
    save_rgb_png(path, base.width, base.height, render_overlay(base, labels));
}

namespace {

std::uint64_t sub_seed(std::uint64_t master, const char* tag) {
    return derive_rng(master, tag).next_u64();
}

std::string zero_padded(const char* prefix, int a, int b = -1) {
    char buf[64];
    if (b >= 0)
        std::snprintf(buf, sizeof buf, "%s%d_%04d", prefix, a, b);
    else
        std::snprintf(buf, sizeof buf, "%s%04d", prefix, a);
    return buf;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write: " + path);
    out << text;
}

// Paths in reports and manifests stay relative to the experiment directory so
// two runs into different directories produce identical bytes.
std::string relativize(const std::string& path, const std::string& root) {
    return fs::relative(fs::path(path), fs::path(root)).generic_string();
}

struct PopulationFiles {
    DatasetManifest manifest; // truth labels referenced when with_truth_labels
};

// Writes images (and truth label maps) for homogeneous populations of every
// class into subdir, records tagged with the split.
PopulationFiles write_populations(const PhantomConfig& cfg, int per_class,
                                  const std::string& out_dir, const std::string& subdir,
                                  const std::string& split, bool with_truth_labels) {
    PopulationFiles out;
    out.manifest.root = out_dir;
    fs::create_directories(fs::path(out_dir) / subdir);
    for (int c = 1; c <= kNumForegroundClasses; ++c) {
        const PopulationResult pop = generate_population(c, per_class, cfg);
        for (int i = 0; i < int(pop.samples.size()); ++i) {
            const std::string stem = subdir + "/" + zero_padded("c", c, i);
            save_image_png((fs::path(out_dir) / (stem + ".png")).string(), pop.samples[i].image);
            ManifestRecord rec;
            rec.image = stem + ".png";
            rec.class_index = c;
            rec.split = split;
            const std::string truth = stem + "_truth.png";
            save_label_png((fs::path(out_dir) / truth).string(), pop.samples[i].labels);
            if (with_truth_labels) rec.labels = truth;
            out.manifest.records.push_back(std::move(rec));
        }
    }
    return out;
}

json loss_summary(const TrainResult& r) {
    return json{{"final_loss", r.loss_trace.empty() ? 0.0 : r.loss_trace.back()},
                {"iterations", r.loss_trace.size()},
                {"loss_trace", r.loss_trace}};
}

json track_to_json(const TrackResult& t) {
    json delta;
    delta["mean_accuracy"] = t.cellmixer.report.mean_accuracy - t.baseline.report.mean_accuracy;
    delta["mean_iou"] = t.cellmixer.report.mean_iou - t.baseline.report.mean_iou;
    if (t.baseline.report.foreground_defined && t.cellmixer.report.foreground_defined) {
        delta["foreground_mean_accuracy"] = t.cellmixer.report.foreground_mean_accuracy -
                                            t.baseline.report.foreground_mean_accuracy;
        delta["foreground_mean_iou"] =
            t.cellmixer.report.foreground_mean_iou - t.baseline.report.foreground_mean_iou;
    }
    return json{{"name", t.name},
                {"n_images", t.baseline.n_images},
                {"baseline", metrics_to_json(t.baseline.report)},
                {"cellmixer", metrics_to_json(t.cellmixer.report)},
                {"delta", std::move(delta)}};
}

std::string comparison_text(const std::vector<TrackResult>& tracks) {
    const std::vector<std::string> names = {"background", "class 1", "class 2", "class 3"};
    std::string out;
    char line[160];
    for (const TrackResult& t : tracks) {
        out += "== " + t.name + " ==\n";
        out += "baseline:\n" + metrics_to_text(t.baseline.report, names);
        out += "cellmixer:\n" + metrics_to_text(t.cellmixer.report, names);
        std::snprintf(line, sizeof line,
                      "delta (cellmixer - baseline): mAcc %+.2f  mIoU %+.2f",
                      (t.cellmixer.report.mean_accuracy - t.baseline.report.mean_accuracy) * 100.0,
                      (t.cellmixer.report.mean_iou - t.baseline.report.mean_iou) * 100.0);
        out += line;
        if (t.baseline.report.foreground_defined && t.cellmixer.report.foreground_defined) {
            std::snprintf(line, sizeof line, "  fg mAcc %+.2f  fg mIoU %+.2f",
                          (t.cellmixer.report.foreground_mean_accuracy -
                           t.baseline.report.foreground_mean_accuracy) *
                              100.0,
                          (t.cellmixer.report.foreground_mean_iou -
                           t.baseline.report.foreground_mean_iou) *
                              100.0);
            out += line;
        }
        out += "\n\n";
    }
    return out;
}

} // namespace

ExperimentResult run_experiment(const PipelineConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);
    for (const char* sub : {"models", "reports", "overlays"})
        fs::create_directories(fs::path(out_dir) / sub);
    const int workers = cfg.experiment.workers;

    // Homogeneous training populations; truth stays on disk for reference but
    // training supervision comes from the extraction stage.
    PhantomConfig ph_train = cfg.phantom;
    ph_train.seed = sub_seed(cfg.seed, "phantom-train");
    DatasetManifest train_images =
        write_populations(ph_train, cfg.experiment.n_train_per_class, out_dir, "train", "train",
                          false)
            .manifest;
    save_manifest((fs::path(out_dir) / "train_images.jsonl").string(), train_images);

    DatasetManifest extracted;
    ExtractReport extract_report =
        extract_batch(train_images, cfg.extraction, (fs::path(out_dir) / "extracted").string(),
                      &extracted, workers);
    if (extract_report.processed == 0)
        throw DataError("foreground extraction failed for every training image");
    for (auto& rec : extract_report.records)
        if (!rec.labels.empty()) rec.labels = relativize(rec.labels, out_dir);
    write_text((fs::path(out_dir) / "reports" / "extraction.json").string(),
               extract_report_to_json(extract_report) + "\n");

    extracted.root = out_dir;
    for (auto& rec : extracted.records) {
        rec.image = relativize(rec.image, out_dir);
        if (rec.labels) rec.labels = relativize(*rec.labels, out_dir);
    }

    // Extraction quality against the kept truth maps, for the report only.
    {
        json per_class = json::object();
        std::array<double, kNumClasses> iou_sum{};
        std::array<int, kNumClasses> iou_n{};
        for (const auto& rec : extracted.records) {
            const LabelMap truth = load_label_png(
                (fs::path(out_dir) / (rec.image.substr(0, rec.image.size() - 4) + "_truth.png"))
                    .string());
            const LabelMap got = load_label_png(extracted.resolve(*rec.labels));
            std::uint64_t inter = 0, uni = 0;
            for (std::size_t i = 0; i < truth.data.size(); ++i) {
                const bool a = truth.data[i] != 0, b = got.data[i] != 0;
                inter += (a && b);
                uni += (a || b);
            }
            const int c = *rec.class_index;
            iou_sum[c] += uni ? double(inter) / double(uni) : 1.0;
            iou_n[c] += 1;
        }
        for (int c = 1; c < kNumClasses; ++c)
            if (iou_n[c]) per_class[std::to_string(c)] = iou_sum[c] / iou_n[c];
        write_text((fs::path(out_dir) / "reports" / "extraction_quality.json").string(),
                   json{{"mean_foreground_iou", per_class}}.dump(2) + "\n");
    }

    const DatasetManifest split =
        split_manifest(extracted, cfg.experiment.val_fraction, sub_seed(cfg.seed, "split"));
    save_manifest((fs::path(out_dir) / "train_split.jsonl").string(), split);

    // Held-out evaluation sets, all with exact truth labels and phantom
    // streams disjoint from training.
    std::vector<std::pair<std::string, DatasetManifest>> eval_sets;
    if (cfg.experiment.n_test_unmixed_per_class > 0) {
        PhantomConfig ph = cfg.phantom;
        ph.seed = sub_seed(cfg.seed, "phantom-test-unmixed");
        DatasetManifest m = write_populations(ph, cfg.experiment.n_test_unmixed_per_class,
                                              out_dir, "test_unmixed", "test", true)
                                .manifest;
        save_manifest((fs::path(out_dir) / "test_unmixed.jsonl").string(), m);
        eval_sets.emplace_back("unmixed", std::move(m));
    }
    if (cfg.experiment.n_test_mixture > 0) {
        PhantomConfig ph = cfg.phantom;
        ph.seed = sub_seed(cfg.seed, "phantom-test-mixture");
        const double third = 1.0 / 3.0;
        const PopulationResult pop = generate_true_mixture(
            {{1, third}, {2, third}, {3, third}}, cfg.experiment.n_test_mixture, ph);
        DatasetManifest m;
        m.root = out_dir;
        fs::create_directories(fs::path(out_dir) / "test_mixture");
        for (int i = 0; i < int(pop.samples.size()); ++i) {
            const std::string stem = "test_mixture/" + zero_padded("mix", i);
            save_image_png((fs::path(out_dir) / (stem + ".png")).string(),
                           pop.samples[i].image);
            save_label_png((fs::path(out_dir) / (stem + "_truth.png")).string(),
                           pop.samples[i].labels);
            ManifestRecord rec;
            rec.image = stem + ".png";
            rec.labels = stem + "_truth.png";
            rec.split = "test";
            m.records.push_back(std::move(rec));
        }
        save_manifest((fs::path(out_dir) / "test_mixture.jsonl").string(), m);
        eval_sets.emplace_back("mixture", std::move(m));
    }
    if (cfg.experiment.n_artificial_mix > 0) {
        // Composite evaluation crops built from a fresh homogeneous pool with
        // truth labels, mixed exactly like the training composites.
        PhantomConfig ph = cfg.phantom;
        ph.seed = sub_seed(cfg.seed, "phantom-test-artificial");
        SamplePool pool;
        for (int c = 1; c <= kNumForegroundClasses; ++c) {
            const PopulationResult pop = generate_population(c, 4, ph);
            for (const PhantomSample& s : pop.samples) {
                PoolEntry entry;
                entry.record.class_index = c;
                entry.image = s.image;
                entry.labels = s.labels;
                pool.add(std::move(entry));
            }
        }
        MixerConfig mix_cfg = cfg.mixer;
        DatasetManifest m;
        m.root = out_dir;
        fs::create_directories(fs::path(out_dir) / "test_artificial");
        const std::uint64_t art_seed = sub_seed(cfg.seed, "test-artificial");
        for (int i = 0; i < cfg.experiment.n_artificial_mix; ++i) {
            Rng rng = derive_rng(art_seed, "mix-sample", std::uint64_t(i));
            const MixedSample sample = sample_mixed_crop(pool, mix_cfg, rng);
            const std::string stem = "test_artificial/" + zero_padded("art", i);
            save_image_png((fs::path(out_dir) / (stem + ".png")).string(), sample.image);
            save_label_png((fs::path(out_dir) / (stem + "_truth.png")).string(), sample.labels);
            ManifestRecord rec;
            rec.image = stem + ".png";
            rec.labels = stem + "_truth.png";
            rec.split = "test";
            m.records.push_back(std::move(rec));
        }
        save_manifest((fs::path(out_dir) / "test_artificial.jsonl").string(), m);
        eval_sets.emplace_back("artificial", std::move(m));
    }

    const SamplePool pool = SamplePool::load(split, "train");
    TrainConfig tc = cfg.train;
    tc.seed = sub_seed(cfg.seed, "train");
    tc.mixer = cfg.mixer;

    const TrainResult baseline = train(pool, tc, TrainMode::Baseline);
    const TrainResult cellmix = train(pool, tc, TrainMode::CellMixer);
    save_model((fs::path(out_dir) / "models" / "baseline.json").string(), baseline.model);
    save_model((fs::path(out_dir) / "models" / "cellmixer.json").string(), cellmix.model);
    write_text((fs::path(out_dir) / "reports" / "training.json").string(),
               json{{"baseline", loss_summary(baseline)}, {"cellmixer", loss_summary(cellmix)}}
                       .dump(2) +
                   "\n");

    ExperimentResult result;
    result.out_dir = out_dir;
    result.baseline_model = baseline.model;
    result.cellmixer_model = cellmix.model;

    EvalConfig ec = cfg.eval;
    ec.workers = workers;
    ec.extraction = cfg.extraction;
    ec.target_bg_mean = cfg.mixer.target_bg_mean;
    ec.target_bg_std = cfg.mixer.target_bg_std;
    for (const auto& [name, manifest] : eval_sets) {
        TrackResult track;
        track.name = name;
        track.baseline = evaluate_model(baseline.model, manifest, ec, "test");
        track.cellmixer = evaluate_model(cellmix.model, manifest, ec, "test");
        result.tracks.push_back(std::move(track));
    }

    json comparison{{"seed", cfg.seed},
                    {"config_hash", config_hash(cfg)},
                    {"tracks", json::array()}};
    for (const TrackResult& t : result.tracks) comparison["tracks"].push_back(track_to_json(t));
    write_text((fs::path(out_dir) / "reports" / "comparison.json").string(),
               comparison.dump(2) + "\n");
    write_text((fs::path(out_dir) / "reports" / "comparison.txt").string(),
               comparison_text(result.tracks));

    // A couple of qualitative overlays per evaluation set.
    for (const auto& [name, manifest] : eval_sets) {
        const int n_overlay = int(std::min<std::size_t>(2, manifest.records.size()));
        for (int i = 0; i < n_overlay; ++i) {
            const ManifestRecord& rec = manifest.records[i];
            const Image img = load_image_png(manifest.resolve(rec.image));
            const LabelMap truth = load_label_png(manifest.resolve(*rec.labels));
            const std::string stem =
                (fs::path(out_dir) / "overlays" / (name + "_" + zero_padded("", i))).string();
            save_overlay(stem + "_truth.png", img, truth);
            save_overlay(stem + "_baseline.png", img,
                         sliding_window_infer(baseline.model, img, ec.window, ec.stride));
            save_overlay(stem + "_cellmixer.png", img,
                         sliding_window_infer(cellmix.model, img, ec.window, ec.stride));
        }
    }

    write_text((fs::path(out_dir) / "reports" / "provenance.json").string(),
               json{{"tool_version", kVersion},
                    {"seed", cfg.seed},
                    {"config_hash", config_hash(cfg)},
                    {"config", config_to_json(cfg)}}
                       .dump(2) +
                   "\n");
    return result;
}

} // namespace cellmixer
