#include "cellmixer/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "cellmixer/errors.hpp"
#include "cellmixer/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cellmixer {

std::string DatasetManifest::resolve(const std::string& path) const {
    fs::path p(path);
    if (p.is_absolute() || root.empty()) return path;
    return (fs::path(root) / p).string();
}

std::vector<std::size_t> DatasetManifest::indices_with_split(const std::string& split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i)
        if (records[i].split == split) out.push_back(i);
    return out;
}

std::vector<int> DatasetManifest::classes_present() const {
    std::set<int> seen;
    for (const auto& r : records)
        if (r.class_index) seen.insert(*r.class_index);
    return {seen.begin(), seen.end()};
}

namespace {

ManifestRecord parse_record(const json& j, const std::string& context) {
    if (!j.is_object()) throw DataError("manifest line is not a JSON object: " + context);
    ManifestRecord rec;
    if (!j.contains("image") || !j.at("image").is_string())
        throw DataError("manifest record missing \"image\": " + context);
    rec.image = j.at("image").get<std::string>();
    if (j.contains("labels") && !j.at("labels").is_null())
        rec.labels = j.at("labels").get<std::string>();
    if (j.contains("class") && !j.at("class").is_null()) {
        const int c = j.at("class").get<int>();
        if (c < 0 || c > 3)
            throw DataError("manifest record class out of range 0-3: " + context);
        rec.class_index = c;
    }
    if (j.contains("split") && !j.at("split").is_null())
        rec.split = j.at("split").get<std::string>();
    if (rec.split != "train" && rec.split != "val" && rec.split != "test")
        throw DataError("manifest record split must be train|val|test: " + context);
    return rec;
}

} // namespace

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path);
    DatasetManifest manifest;
    manifest.root = fs::path(path).parent_path().string();
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        manifest.records.push_back(parse_record(j, path + ":" + std::to_string(line_no)));
    }
    return manifest;
}

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write manifest: " + path);
    for (const auto& rec : manifest.records) {
        json j;
        j["image"] = rec.image;
        j["labels"] = rec.labels ? json(*rec.labels) : json(nullptr);
        j["class"] = rec.class_index ? json(*rec.class_index) : json(nullptr);
        j["split"] = rec.split;
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("failed while writing manifest: " + path);
}

DatasetManifest split_manifest(const DatasetManifest& manifest, double val_fraction,
                               std::uint64_t seed) {
    if (val_fraction < 0.0 || val_fraction > 1.0)
        throw ParameterError("split_manifest: val_fraction must be in [0,1]");

    DatasetManifest out = manifest;
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < out.records.size(); ++i) {
        auto& rec = out.records[i];
        if (rec.split == "test") continue;
        rec.split = "train";
        by_class[rec.class_index.value_or(0)].push_back(i);
    }

    for (auto& [class_index, indices] : by_class) {
        Rng rng = derive_rng(seed, "split", std::uint64_t(class_index));
        // Fisher-Yates, then the first round(frac*n) go to val (round half up).
        for (std::size_t i = indices.size(); i > 1; --i)
            std::swap(indices[i - 1], indices[std::size_t(rng.uniform_int(int(i)))]);
        const auto n_val = std::size_t(std::floor(val_fraction * double(indices.size()) + 0.5));
        for (std::size_t i = 0; i < n_val && i < indices.size(); ++i)
            out.records[indices[i]].split = "val";
    }
    return out;
}

} // namespace cellmixer
