#include "cellmixer/mixer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "cellmixer/foreground.hpp"
#include "cellmixer/imageops.hpp"
#include "cellmixer/parallel.hpp"
#include "cellmixer/png_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cellmixer {

void MixerConfig::validate() const {
    if (!(lambda > 0.0) || lambda > 1.0)
        throw ParameterError("MixerConfig: lambda must be in (0,1]");
    if (crop_size < 8) throw ParameterError("MixerConfig: crop_size must be >= 8");
    if (target_bg_mean <= 0.0 || target_bg_mean >= 1.0)
        throw ParameterError("MixerConfig: target_bg_mean must be in (0,1)");
    if (target_bg_std < 0.0) throw ParameterError("MixerConfig: target_bg_std must be >= 0");
    if (pairs_per_epoch < 1) throw ParameterError("MixerConfig: pairs_per_epoch must be >= 1");
    if (max_draw_retries < 1) throw ParameterError("MixerConfig: max_draw_retries must be >= 1");
}

SamplePool SamplePool::load(const DatasetManifest& manifest, const std::string& split) {
    SamplePool pool;
    for (const auto& rec : manifest.records) {
        if (!split.empty() && rec.split != split) continue;
        if (!rec.labels)
            throw DataError("SamplePool: record has no label map: " + rec.image);
        PoolEntry entry;
        entry.record = rec;
        entry.image = load_image_png(manifest.resolve(rec.image));
        entry.labels = load_label_png(manifest.resolve(*rec.labels));
        if (!same_shape(entry.image, entry.labels))
            throw DataError("SamplePool: image/label shape mismatch: " + rec.image);
        pool.entries_.push_back(std::move(entry));
    }
    return pool;
}

int SamplePool::distinct_classes() const {
    std::set<int> seen;
    for (const auto& e : entries_)
        if (e.record.class_index) seen.insert(*e.record.class_index);
    return int(seen.size());
}

Image normalize_background(const Image& img, const LabelMap& labels, double target_mean,
                           double target_std) {
    if (!same_shape(img, labels))
        throw ParameterError("normalize_background: shape mismatch");
    if (target_std < 0.0)
        throw ParameterError("normalize_background: target_std must be >= 0");

    // Stats come from pixels well clear of any labeled foreground: masks from
    // unsupervised extraction miss a fringe around each cell, and those fringe
    // pixels would badly inflate the background variance estimate.
    BinaryMask fg(img.width, img.height);
    for (std::size_t i = 0; i < labels.size(); ++i) fg.data[i] = labels.data[i] != 0;
    BinaryMask wide = binary_dilate(fg, StructuringElement::disk(3));
    std::size_t clear_count = 0;
    for (std::uint8_t v : wide.data) clear_count += v == 0;
    if (clear_count < 64) wide = fg; // nearly full frame: fall back to the raw mask
    const auto [mean, stddev] = background_stats(img, wide);

    Image out(img.width, img.height);
    if (target_std == 0.0) {
        for (auto& px : out.data) px = float(target_mean);
        return out;
    }
    if (stddev <= 1e-8)
        throw DegenerateInputError("normalize_background: background has no variance");

    const double scale = target_std / stddev;
    const double shift = target_mean - mean * scale;
    for (std::size_t i = 0; i < img.size(); ++i)
        out.data[i] = clamp01(float(double(img.data[i]) * scale + shift));
    return out;
}

Image canonicalize_input(const Image& img, const ExtractionConfig& extraction,
                         double target_mean, double target_std) {
    const BinaryMask fg = extract_foreground(img, extraction);
    LabelMap labels(img.width, img.height);
    for (std::size_t i = 0; i < fg.data.size(); ++i) labels.data[i] = fg.data[i] ? 1 : 0;
    try {
        return normalize_background(img, labels, target_mean, target_std);
    } catch (const DegenerateInputError&) {
        return img;
    }
}

Image mix_images(const Image& i1, const Image& i2, double lambda) {
    if (!same_shape(i1, i2)) throw ParameterError("mix_images: shape mismatch");
    if (!(lambda > 0.0) || lambda > 1.0)
        throw ParameterError("mix_images: lambda must be in (0,1]");
    Image out(i1.width, i1.height);
    const float l = float(lambda), m = float(1.0 - lambda);
    for (std::size_t i = 0; i < i1.size(); ++i)
        out.data[i] = clamp01(l * i1.data[i] + m * i2.data[i]);
    return out;
}

LabelMap mix_labels(const LabelMap& m1, const LabelMap& m2) {
    if (!same_shape(m1, m2)) throw ParameterError("mix_labels: shape mismatch");
    LabelMap out(m1.width, m1.height);
    for (std::size_t i = 0; i < m1.size(); ++i) {
        const std::uint8_t a = m1.data[i], b = m2.data[i];
        if (a == kIgnoreLabel || b == kIgnoreLabel)
            throw ParameterError("mix_labels: ignore labels cannot be mixed");
        out.data[i] = b != 0 ? b : a;
    }
    return out;
}

namespace {

struct CropRef {
    Image image;
    LabelMap labels;
};

CropRef take_crop(const PoolEntry& entry, int x0, int y0, int size) {
    CropRef crop;
    crop.image = Image(size, size);
    crop.labels = LabelMap(size, size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            crop.image.at(x, y) = entry.image.at(x0 + x, y0 + y);
            crop.labels.at(x, y) = entry.labels.at(x0 + x, y0 + y);
        }
    }
    return crop;
}

} // namespace

MixedSample sample_mixed_crop(const SamplePool& pool, const MixerConfig& cfg, Rng& rng) {
    cfg.validate();
    if (pool.size() < 2)
        throw DataError("sample_mixed_crop: pool needs at least 2 records");

    const int n = int(pool.size());
    for (int attempt = 0; attempt < cfg.max_draw_retries; ++attempt) {
        // Uniform over ordered record pairs (distinct classes unless allowed)
        // via rejection sampling.
        std::size_t ia = 0, ib = 0;
        bool pair_ok = false;
        for (int draw = 0; draw < 1024; ++draw) {
            ia = std::size_t(rng.uniform_int(n));
            ib = std::size_t(rng.uniform_int(n));
            if (ia == ib) continue;
            if (!cfg.allow_same_class) {
                const auto& ca = pool.entry(ia).record.class_index;
                const auto& cb = pool.entry(ib).record.class_index;
                if (!ca || !cb || *ca == *cb) continue;
            }
            pair_ok = true;
            break;
        }
        if (!pair_ok)
            throw DataError("sample_mixed_crop: pool has no record pair with distinct classes");

        const PoolEntry& ea = pool.entry(ia);
        const PoolEntry& eb = pool.entry(ib);
        if (ea.image.width < cfg.crop_size || ea.image.height < cfg.crop_size ||
            eb.image.width < cfg.crop_size || eb.image.height < cfg.crop_size)
            throw ParameterError("sample_mixed_crop: image smaller than crop_size");

        const int ax = rng.uniform_int(ea.image.width - cfg.crop_size + 1);
        const int ay = rng.uniform_int(ea.image.height - cfg.crop_size + 1);
        const int bx = rng.uniform_int(eb.image.width - cfg.crop_size + 1);
        const int by = rng.uniform_int(eb.image.height - cfg.crop_size + 1);

        CropRef ca = take_crop(ea, ax, ay, cfg.crop_size);
        CropRef cb = take_crop(eb, bx, by, cfg.crop_size);

        Image na, nb;
        try {
            na = normalize_background(ca.image, ca.labels, cfg.target_bg_mean, cfg.target_bg_std);
            nb = normalize_background(cb.image, cb.labels, cfg.target_bg_mean, cfg.target_bg_std);
        } catch (const DegenerateInputError&) {
            continue; // crop without usable background; redraw
        }

        MixedSample sample;
        sample.image = mix_images(na, nb, cfg.lambda);
        sample.labels = mix_labels(ca.labels, cb.labels);

        std::size_t clamped = 0;
        const float l = float(cfg.lambda), m = float(1.0 - cfg.lambda);
        for (std::size_t i = 0; i < sample.image.size(); ++i) {
            const float raw = l * na.data[i] + m * nb.data[i];
            if (raw < 0.0f || raw > 1.0f) ++clamped;
        }

        // Averaging two independently normalized crops shrinks the background
        // noise (by sqrt(2) at lambda 0.5), which would train the model on a
        // quieter background than any image it is evaluated on. Renormalizing
        // against the merged labels puts the composite back on the canonical
        // background statistics every other model input carries.
        try {
            sample.image = normalize_background(sample.image, sample.labels,
                                                cfg.target_bg_mean, cfg.target_bg_std);
        } catch (const DegenerateInputError&) {
            continue;
        }

        sample.provenance = {ia, ib, ax, ay, bx, by, cfg.lambda,
                             double(clamped) / double(sample.image.size())};
        return sample;
    }
    throw DegenerateInputError("sample_mixed_crop: no valid crop pair after retries");
}

DatasetManifest synthesize_set(const SamplePool& pool, const MixerConfig& cfg, int n,
                               const std::string& out_dir, int workers) {
    cfg.validate();
    if (n < 0) throw ParameterError("synthesize_set: n must be >= 0");
    fs::create_directories(out_dir);

    std::vector<MixProvenance> provenance(static_cast<std::size_t>(n));
    parallel_for(std::size_t(n), workers, [&](std::size_t i) {
        Rng rng = derive_rng(cfg.seed, "mix-sample", i);
        MixedSample sample = sample_mixed_crop(pool, cfg, rng);
        char img_name[32], lab_name[32];
        std::snprintf(img_name, sizeof img_name, "mix_%06zu.png", i);
        std::snprintf(lab_name, sizeof lab_name, "mix_%06zu_labels.png", i);
        save_image_png((fs::path(out_dir) / img_name).string(), sample.image);
        save_label_png((fs::path(out_dir) / lab_name).string(), sample.labels);
        provenance[i] = sample.provenance;
    });

    DatasetManifest manifest;
    manifest.root = out_dir;
    std::ofstream prov_out(fs::path(out_dir) / "provenance.jsonl", std::ios::trunc);
    for (int i = 0; i < n; ++i) {
        char img_name[32], lab_name[32];
        std::snprintf(img_name, sizeof img_name, "mix_%06d.png", i);
        std::snprintf(lab_name, sizeof lab_name, "mix_%06d_labels.png", i);
        ManifestRecord rec;
        rec.image = img_name;
        rec.labels = lab_name;
        rec.split = "train";
        manifest.records.push_back(rec);

        const MixProvenance& p = provenance[std::size_t(i)];
        json j;
        j["sample"] = i;
        j["record_a"] = p.record_a;
        j["record_b"] = p.record_b;
        j["offset_a"] = {p.offset_ax, p.offset_ay};
        j["offset_b"] = {p.offset_bx, p.offset_by};
        j["lambda"] = p.lambda;
        j["clamped_fraction"] = p.clamped_fraction;
        j["clamped"] = p.clamped_fraction > 0.001;
        prov_out << j.dump() << '\n';
    }
    save_manifest((fs::path(out_dir) / "manifest.jsonl").string(), manifest);
    return manifest;
}

} // namespace cellmixer
