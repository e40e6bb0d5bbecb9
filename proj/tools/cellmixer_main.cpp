#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cellmixer/config.hpp"
#include "cellmixer/experiment.hpp"
#include "cellmixer/png_io.hpp"
#include "cellmixer/version.hpp"

namespace fs = std::filesystem;
using namespace cellmixer;

namespace {

std::vector<std::pair<int, double>> parse_proportions(const std::string& text) {
    std::vector<std::pair<int, double>> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t comma = text.find(',', pos);
        const std::string item = text.substr(pos, comma == std::string::npos ? comma : comma - pos);
        const std::size_t eq = item.find('=');
        if (eq == std::string::npos)
            throw ParameterError("proportions must look like 1=0.4,2=0.3,3=0.3");
        out.emplace_back(std::stoi(item.substr(0, eq)), std::stod(item.substr(eq + 1)));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

void write_population_set(const PhantomConfig& cfg, const std::vector<int>& classes,
                          int per_class, const std::string& out_dir) {
    DatasetManifest manifest;
    manifest.root = out_dir;
    fs::create_directories(out_dir);
    for (int c : classes) {
        const PopulationResult pop = generate_population(c, per_class, cfg);
        for (int i = 0; i < int(pop.samples.size()); ++i) {
            char name[64];
            std::snprintf(name, sizeof name, "c%d_%04d", c, i);
            save_image_png((fs::path(out_dir) / (std::string(name) + ".png")).string(),
                           pop.samples[i].image);
            save_label_png((fs::path(out_dir) / (std::string(name) + "_truth.png")).string(),
                           pop.samples[i].labels);
            ManifestRecord rec;
            rec.image = std::string(name) + ".png";
            rec.labels = std::string(name) + "_truth.png";
            rec.class_index = c;
            manifest.records.push_back(std::move(rec));
        }
        if (pop.skipped_cells > 0)
            std::cerr << "class " << c << ": dropped " << pop.skipped_cells
                      << " cells after placement retries\n";
    }
    save_manifest((fs::path(out_dir) / "manifest.jsonl").string(), manifest);
    std::cout << "wrote " << manifest.records.size() << " images to " << out_dir << "\n";
}

int dispatch(int argc, char** argv) {
    CLI::App app{"Synthesizes annotated training data for heterogeneous cell "
                 "segmentation from unannotated homogeneous populations, trains a "
                 "compact per-pixel model, and evaluates it."};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    app.add_option("--config", config_path, "pipeline config JSON");
    std::uint64_t seed_val = 0;
    auto* seed_opt = app.add_option("--seed", seed_val, "master seed (beats CELLMIXER_SEED)");
    int workers_val = 1;
    auto* workers_opt = app.add_option("--workers", workers_val, "worker threads");

    // Precedence: defaults < config file < CELLMIXER_SEED < --seed. Evaluated
    // inside the subcommand callbacks, after every option has been parsed.
    const auto effective_config = [&]() {
        PipelineConfig cfg;
        if (!config_path.empty()) cfg = load_config(config_path);
        if (const char* env = std::getenv("CELLMIXER_SEED")) {
            char* end = nullptr;
            const unsigned long long v = std::strtoull(env, &end, 10);
            if (!end || *end != '\0' || *env == '\0')
                throw ParameterError(std::string("CELLMIXER_SEED is not an integer: ") + env);
            cfg.seed = v;
        }
        if (seed_opt->count()) cfg.seed = seed_val;
        if (workers_opt->count()) cfg.experiment.workers = workers_val;
        return cfg;
    };

    // phantom
    auto* phantom = app.add_subcommand("phantom", "generate homogeneous phantom populations");
    std::vector<int> ph_classes = {1, 2, 3};
    int ph_per_class = 10;
    std::string ph_out;
    phantom->add_option("--classes", ph_classes, "class indices to generate");
    phantom->add_option("--per-class", ph_per_class, "images per class");
    phantom->add_option("--out", ph_out, "output directory")->required();
    phantom->callback([&] {
        PipelineConfig cfg = effective_config();
        cfg.phantom.seed = cfg.seed;
        write_population_set(cfg.phantom, ph_classes, ph_per_class, ph_out);
    });

    // phantom-mix
    auto* phmix = app.add_subcommand("phantom-mix", "generate heterogeneous phantom scenes");
    int pm_n = 10;
    std::string pm_props = "1=0.3334,2=0.3333,3=0.3333";
    std::string pm_out;
    phmix->add_option("--n", pm_n, "number of scenes");
    phmix->add_option("--proportions", pm_props, "per-class cell proportions");
    phmix->add_option("--out", pm_out, "output directory")->required();
    phmix->callback([&] {
        PipelineConfig cfg = effective_config();
        cfg.phantom.seed = cfg.seed;
        const PopulationResult pop =
            generate_true_mixture(parse_proportions(pm_props), pm_n, cfg.phantom);
        DatasetManifest manifest;
        manifest.root = pm_out;
        fs::create_directories(pm_out);
        for (int i = 0; i < int(pop.samples.size()); ++i) {
            char name[64];
            std::snprintf(name, sizeof name, "mix_%04d", i);
            save_image_png((fs::path(pm_out) / (std::string(name) + ".png")).string(),
                           pop.samples[i].image);
            save_label_png((fs::path(pm_out) / (std::string(name) + "_truth.png")).string(),
                           pop.samples[i].labels);
            ManifestRecord rec;
            rec.image = std::string(name) + ".png";
            rec.labels = std::string(name) + "_truth.png";
            rec.split = "test";
            manifest.records.push_back(std::move(rec));
        }
        save_manifest((fs::path(pm_out) / "manifest.jsonl").string(), manifest);
        std::cout << "wrote " << manifest.records.size() << " scenes to " << pm_out << "\n";
    });

    // extract
    auto* extract = app.add_subcommand("extract", "unsupervised foreground label extraction");
    std::string ex_manifest, ex_out, ex_report;
    extract->add_option("--manifest", ex_manifest, "input manifest (JSONL)")->required();
    extract->add_option("--out", ex_out, "directory for label maps")->required();
    extract->add_option("--report", ex_report, "write extraction report JSON here");
    extract->callback([&] {
        PipelineConfig cfg = effective_config();
        const DatasetManifest manifest = load_manifest(ex_manifest);
        DatasetManifest out_manifest;
        const ExtractReport report = extract_batch(manifest, cfg.extraction, ex_out,
                                                   &out_manifest, cfg.experiment.workers);
        out_manifest.root = ex_out;
        save_manifest((fs::path(ex_out) / "manifest.jsonl").string(), out_manifest);
        if (!ex_report.empty()) {
            std::ofstream rep(ex_report);
            if (!rep) throw DataError("cannot write report: " + ex_report);
            rep << extract_report_to_json(report) << "\n";
        }
        std::cout << "extracted " << report.processed << " label maps, " << report.failed
                  << " failures\n";
        if (report.failed > 0 && report.processed == 0)
            throw DataError("extraction failed for every record");
    });

    // split
    auto* split = app.add_subcommand("split", "stratified train/val split of a manifest");
    std::string sp_manifest, sp_out;
    double sp_fraction = 0.10;
    split->add_option("--manifest", sp_manifest, "input manifest")->required();
    split->add_option("--val-fraction", sp_fraction, "fraction tagged val");
    split->add_option("--out", sp_out, "output manifest path")->required();
    split->callback([&] {
        const PipelineConfig cfg = effective_config();
        const DatasetManifest manifest = load_manifest(sp_manifest);
        DatasetManifest result = split_manifest(manifest, sp_fraction, cfg.seed);
        save_manifest(sp_out, result);
        std::size_t n_val = result.indices_with_split("val").size();
        std::cout << "tagged " << n_val << " of " << result.records.size() << " records val\n";
    });

    // mix
    auto* mix = app.add_subcommand("mix", "synthesize composite training crops");
    std::string mx_manifest, mx_out, mx_split = "train";
    int mx_n = 64;
    mix->add_option("--manifest", mx_manifest, "labeled manifest")->required();
    mix->add_option("--n", mx_n, "number of composites");
    mix->add_option("--split", mx_split, "pool split (empty = all)");
    mix->add_option("--out", mx_out, "output directory")->required();
    mix->callback([&] {
        PipelineConfig cfg = effective_config();
        cfg.mixer.seed = cfg.seed;
        const SamplePool pool = SamplePool::load(load_manifest(mx_manifest), mx_split);
        synthesize_set(pool, cfg.mixer, mx_n, mx_out, cfg.experiment.workers);
        std::cout << "wrote " << mx_n << " composites to " << mx_out << "\n";
    });

    // train
    auto* tr = app.add_subcommand("train", "train the per-pixel segmentation model");
    std::string tr_manifest, tr_mode = "cellmixer", tr_out, tr_split = "train", tr_trace;
    tr->add_option("--manifest", tr_manifest, "labeled manifest")->required();
    tr->add_option("--mode", tr_mode, "baseline | cellmixer")
        ->check(CLI::IsMember({"baseline", "cellmixer"}));
    tr->add_option("--split", tr_split, "pool split (empty = all)");
    tr->add_option("--out", tr_out, "model JSON path")->required();
    tr->add_option("--loss-trace", tr_trace, "write per-iteration losses here");
    tr->callback([&] {
        PipelineConfig cfg = effective_config();
        TrainConfig tc = cfg.train;
        tc.seed = cfg.seed;
        tc.mixer = cfg.mixer;
        const SamplePool pool = SamplePool::load(load_manifest(tr_manifest), tr_split);
        const TrainMode mode = tr_mode == "baseline" ? TrainMode::Baseline : TrainMode::CellMixer;
        const TrainResult result = train(pool, tc, mode);
        save_model(tr_out, result.model);
        if (!tr_trace.empty()) {
            std::ofstream out(tr_trace);
            if (!out) throw DataError("cannot write loss trace: " + tr_trace);
            out << nlohmann::json(result.loss_trace).dump() << "\n";
        }
        std::cout << "trained " << tr_mode << " model, final loss "
                  << (result.loss_trace.empty() ? 0.0 : result.loss_trace.back()) << "\n";
    });

    // infer
    auto* inf = app.add_subcommand("infer", "segment one image");
    std::string in_model, in_image, in_out, in_overlay;
    inf->add_option("--model", in_model, "model JSON")->required();
    inf->add_option("--image", in_image, "input image PNG")->required();
    inf->add_option("--out", in_out, "label map PNG path")->required();
    inf->add_option("--overlay", in_overlay, "also write a color overlay here");
    inf->callback([&] {
        const PipelineConfig cfg = effective_config();
        const PixelClassifier model = load_model(in_model);
        const Image img = load_image_png(in_image);
        const Image canon = canonicalize_input(img, cfg.extraction, cfg.mixer.target_bg_mean,
                                               cfg.mixer.target_bg_std);
        const LabelMap pred = sliding_window_infer(model, canon, cfg.eval.window,
                                                   cfg.eval.stride, cfg.experiment.workers);
        save_label_png(in_out, pred);
        if (!in_overlay.empty()) save_overlay(in_overlay, img, pred);
    });

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a model over a labeled manifest");
    std::string ev_model, ev_manifest, ev_split, ev_json;
    ev->add_option("--model", ev_model, "model JSON")->required();
    ev->add_option("--manifest", ev_manifest, "labeled manifest")->required();
    ev->add_option("--split", ev_split, "restrict to one split (empty = all)");
    ev->add_option("--json", ev_json, "write the metrics report JSON here");
    ev->callback([&] {
        PipelineConfig cfg = effective_config();
        EvalConfig ec = cfg.eval;
        ec.workers = cfg.experiment.workers;
        ec.extraction = cfg.extraction;
        ec.target_bg_mean = cfg.mixer.target_bg_mean;
        ec.target_bg_std = cfg.mixer.target_bg_std;
        const PixelClassifier model = load_model(ev_model);
        const EvalResult result = evaluate_model(model, load_manifest(ev_manifest), ec, ev_split);
        std::cout << metrics_to_text(result.report,
                                     {"background", "class 1", "class 2", "class 3"});
        if (!ev_json.empty()) {
            std::ofstream out(ev_json);
            if (!out) throw DataError("cannot write report: " + ev_json);
            out << metrics_to_json(result.report).dump(2) << "\n";
        }
    });

    // overlay
    auto* ov = app.add_subcommand("overlay", "blend a label map over its image");
    std::string ov_image, ov_labels, ov_out;
    ov->add_option("--image", ov_image, "image PNG")->required();
    ov->add_option("--labels", ov_labels, "label map PNG")->required();
    ov->add_option("--out", ov_out, "overlay PNG path")->required();
    ov->callback([&] {
        save_overlay(ov_out, load_image_png(ov_image), load_label_png(ov_labels));
    });

    // run-experiment
    auto* re = app.add_subcommand("run-experiment",
                                  "full pipeline: generate, extract, train both modes, compare");
    std::string re_out;
    re->add_option("--out", re_out, "output directory")->required();
    re->callback([&] {
        const PipelineConfig cfg = effective_config();
        const ExperimentResult result = run_experiment(cfg, re_out);
        std::ifstream txt(fs::path(re_out) / "reports" / "comparison.txt");
        std::cout << txt.rdbuf();
        std::cout << "experiment written to " << result.out_dir << "\n";
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const ParameterError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const TrainingError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
