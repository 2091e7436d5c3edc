#include "scriptid/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "scriptid/error.hpp"
#include "scriptid/image.hpp"

namespace scriptid {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, '\t')) out.push_back(field);
  return out;
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".ppm" || ext == ".pgm";
}

}  // namespace

int DatasetManifest::label_index(const std::string& label) const {
  const auto it = std::find(class_table.begin(), class_table.end(), label);
  if (it == class_table.end()) throw InvalidInput("label '" + label + "' is not in the class table");
  return static_cast<int>(it - class_table.begin());
}

std::vector<int> DatasetManifest::class_counts() const {
  std::vector<int> counts(class_table.size(), 0);
  for (const auto& r : records) ++counts[label_index(r.label)];
  return counts;
}

DatasetManifest load_manifest(const fs::path& path, bool check_files) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  bool fixed_classes = false;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto fields = split_tabs(line);
      if (fields.size() > 1 && fields[0] == "#classes") {
        m.class_table.assign(fields.begin() + 1, fields.end());
        fixed_classes = true;
      }
      continue;
    }
    const auto fields = split_tabs(line);
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) {
      throw InvalidInput(path.string() + ":" + std::to_string(line_no) + ": expected 'path<TAB>label'");
    }
    if (!seen.insert(fields[0]).second) throw InvalidInput("duplicate manifest path " + fields[0]);
    ManifestRecord r{fields[0], fields[1]};
    if (std::find(m.class_table.begin(), m.class_table.end(), r.label) == m.class_table.end()) {
      if (fixed_classes) throw InvalidInput("label '" + r.label + "' missing from the #classes line");
      m.class_table.push_back(r.label);
    }
    if (check_files && !fs::exists(m.resolve(r))) throw IoError("missing image file " + m.resolve(r).string());
    m.records.push_back(std::move(r));
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "#classes";
  for (const auto& c : manifest.class_table) out << '\t' << c;
  out << '\n';
  for (const auto& r : manifest.records) out << r.path << '\t' << r.label << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

DatasetManifest folder_manifest(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("not a directory: " + root.string());
  DatasetManifest m;
  m.root = root;
  std::vector<fs::path> classes;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) classes.push_back(e.path());
  }
  std::sort(classes.begin(), classes.end());
  for (const auto& dir : classes) {
    const std::string label = dir.filename().string();
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
      if (e.is_regular_file() && is_image_file(e.path())) files.push_back(fs::relative(e.path(), root).generic_string());
    }
    std::sort(files.begin(), files.end());
    m.class_table.push_back(label);
    for (auto& f : files) m.records.push_back({std::move(f), label});
  }
  if (m.class_table.empty()) throw InvalidInput("no class folders under " + root.string());
  return m;
}

std::array<DatasetManifest, 3> split(const DatasetManifest& manifest, const SplitRatios& ratios, std::uint64_t seed) {
  const double r[3] = {ratios.train, ratios.validation, ratios.test};
  if (r[0] < 0 || r[1] < 0 || r[2] < 0 || std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) {
    throw InvalidInput("split ratios must be non-negative and sum to 1");
  }
  const int parts = static_cast<int>(r[0] > 0) + static_cast<int>(r[1] > 0) + static_cast<int>(r[2] > 0);

  std::array<DatasetManifest, 3> out;
  for (auto& o : out) {
    o.root = manifest.root;
    o.class_table = manifest.class_table;
  }
  std::array<std::vector<size_t>, 3> picked;
  Rng rng(seed);
  for (size_t c = 0; c < manifest.class_table.size(); ++c) {
    std::vector<size_t> idx;
    for (size_t i = 0; i < manifest.records.size(); ++i) {
      if (manifest.records[i].label == manifest.class_table[c]) idx.push_back(i);
    }
    if (static_cast<int>(idx.size()) < parts) {
      throw InvalidInput("class '" + manifest.class_table[c] + "' has fewer samples than splits");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    const size_t n_val = static_cast<size_t>(std::floor(idx.size() * r[1]));
    const size_t n_test = static_cast<size_t>(std::floor(idx.size() * r[2]));
    const size_t n_train = idx.size() - n_val - n_test;
    for (size_t k = 0; k < idx.size(); ++k) picked[k < n_train ? 0 : (k < n_train + n_val ? 1 : 2)].push_back(idx[k]);
  }
  // Each split keeps manifest order.
  for (int part = 0; part < 3; ++part) {
    std::sort(picked[part].begin(), picked[part].end());
    for (size_t i : picked[part]) out[part].records.push_back(manifest.records[i]);
  }
  return out;
}

LabeledSample make_sample(const RawImage& raw, const std::string& id, int label) {
  LabeledSample s;
  s.id = id;
  s.label = label;
  s.image = resize_to_height(raw, kTargetHeight);
  s.patches = extract_patches(s.image, id);
  return s;
}

std::vector<LabeledSample> load_samples(const DatasetManifest& manifest, const std::vector<std::string>& class_table,
                                        int channels) {
  std::vector<int> labels;
  labels.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    const auto it = std::find(class_table.begin(), class_table.end(), r.label);
    if (it == class_table.end()) throw InvalidInput("label '" + r.label + "' is not a known class");
    labels.push_back(static_cast<int>(it - class_table.begin()));
  }
  std::vector<LabeledSample> out(manifest.records.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const auto& r = manifest.records[i];
    out[i] = make_sample(load_image(manifest.resolve(r), channels), r.path, labels[i]);
  }
  return out;
}

std::vector<float> compute_pixel_mean(const std::vector<LabeledSample>& samples, int channels) {
  std::vector<double> sum(static_cast<size_t>(channels), 0.0);
  double count = 0;
  for (const auto& s : samples) {
    if (s.image.channels != channels) throw InvalidShape("pixel mean: channel count mismatch");
    const size_t plane = static_cast<size_t>(s.image.height) * s.image.width;
    for (int c = 0; c < channels; ++c) {
      sum[c] += std::accumulate(s.image.data.begin() + c * plane, s.image.data.begin() + (c + 1) * plane, 0.0);
    }
    count += static_cast<double>(plane);
  }
  std::vector<float> mean(static_cast<size_t>(channels), 0.0f);
  if (count > 0) {
    for (int c = 0; c < channels; ++c) mean[c] = static_cast<float>(sum[c] / count);
  }
  return mean;
}

}  // namespace scriptid
