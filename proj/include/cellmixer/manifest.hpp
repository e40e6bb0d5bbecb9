#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cellmixer {

// One JSON object per line:
//   {"image": path, "labels": path|null, "class": 0-3|null, "split": "train"|"val"|"test"}
// Relative paths resolve against the directory holding the manifest file.
struct ManifestRecord {
    std::string image;
    std::optional<std::string> labels;
    std::optional<int> class_index;
    std::string split = "train";
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;
    std::string root; // directory paths resolve against

    std::string resolve(const std::string& path) const;

    std::vector<std::size_t> indices_with_split(const std::string& split) const;
    std::vector<int> classes_present() const;
};

DatasetManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const DatasetManifest& manifest);

// Stratified split: round(frac * n) records of each class tagged "val"
// (round half up), the rest "train". Records already tagged "test" keep their
// tag. Deterministic from seed.
DatasetManifest split_manifest(const DatasetManifest& manifest, double val_fraction,
                               std::uint64_t seed);

} // namespace cellmixer
