#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scriptid/patcher.hpp"

namespace scriptid {

struct ManifestRecord {
  std::string path;  // relative to the manifest root
  std::string label;
};

/// Manifest file: UTF-8 text, one `path<TAB>label` record per line. Blank lines and
/// lines starting with `#` are ignored, except an optional `#classes<TAB>a<TAB>b...`
/// line that fixes the class order. Without it the order is first appearance.
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestRecord> records;
  std::vector<std::string> class_table;

  int label_index(const std::string& label) const;
  std::filesystem::path resolve(const ManifestRecord& r) const { return root / r.path; }
  std::vector<int> class_counts() const;
};

/// Parses a manifest; relative paths resolve against the manifest's directory.
/// Throws IoError for unreadable files, missing images (when `check_files`) and
/// InvalidInput for malformed lines or duplicate paths.
DatasetManifest load_manifest(const std::filesystem::path& path, bool check_files = true);

/// Writes the manifest with a `#classes` header. Paths are written as stored.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// One class per sub-directory of `root` (sorted by name); every PNG/PPM/PGM file
/// inside becomes a record.
DatasetManifest folder_manifest(const std::filesystem::path& root);

struct SplitRatios {
  double train = 0.6;
  double validation = 0.1;
  double test = 0.3;
};

/// Stratified seeded split. Per class of size n: validation = floor(n * v),
/// test = floor(n * t), train gets the rest. Class tables are copied unchanged.
std::array<DatasetManifest, 3> split(const DatasetManifest& manifest, const SplitRatios& ratios, std::uint64_t seed);

/// A decoded, height-normalized sample with its uncapped patch sequence.
struct LabeledSample {
  std::string id;
  NormalizedImage image;
  PatchSequence patches;
  int label = -1;
};

/// Loads every record, labels them against `class_table` (unknown labels throw
/// InvalidInput) and extracts patches.
std::vector<LabeledSample> load_samples(const DatasetManifest& manifest, const std::vector<std::string>& class_table,
                                        int channels);

LabeledSample make_sample(const RawImage& raw, const std::string& id, int label);

/// Per-channel mean of every normalized pixel in the set.
std::vector<float> compute_pixel_mean(const std::vector<LabeledSample>& samples, int channels);

}  // namespace scriptid
