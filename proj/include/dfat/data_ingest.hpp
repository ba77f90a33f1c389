#pragma once

// Paired image/report datasets.
//
// On disk a dataset is a key-value manifest plus a JSON-lines record file:
//
//   {"sample_id": "...", "features_path" | "image_path": "...",
//    "report": "...", "labels": [0,1,...] | ["Edema", ...], "split": "train"}
//
// Paths inside the manifest and records are relative to the manifest.
// Images are either patch-feature grids (num_patches x patch_dim arrays) or
// raw H x (W*C) arrays cut into square patches on load.

#include "dfat/autograd.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dfat::data {

using ad::Matrix;
namespace fs = std::filesystem;

enum class Split { train, val, test };
enum class ImageMode { raw, patch_features };

std::string_view to_string(Split s);
std::string_view to_string(ImageMode m);
Split parse_split(std::string_view s);
ImageMode parse_image_mode(std::string_view s);

struct PairedSample {
    std::string sample_id;
    Matrix image;  // num_patches x patch_dim
    std::string report;
    Eigen::RowVectorXd labels;  // multi-hot over the manifest categories
    Split split = Split::train;

    // Index of the first positive label, or -1.
    int primary_label() const;
};

struct DatasetManifest {
    std::string name;
    std::vector<std::string> categories;
    ImageMode image_mode = ImageMode::patch_features;
    std::map<Split, int> counts;
    std::string source_note;
    std::string records = "records.jsonl";
    int num_patches = 0;
    int patch_dim = 0;
    // Raw mode only.
    int raw_height = 0;
    int raw_width = 0;
    int raw_channels = 1;
    int patch_size = 0;

    void validate() const;
    void save(const fs::path& path) const;
    static DatasetManifest load(const fs::path& path);
};

struct LoadOptions {
    // Applied to every report before validation, e.g. to keep only the
    // findings and impression sections.
    std::function<std::string(const std::string&)> report_filter;
    // Shuffles the order within each split; file order otherwise.
    std::optional<std::uint64_t> shuffle_seed;
};

// Keeps the FINDINGS and IMPRESSION sections when the report has section
// headers; returns the report unchanged otherwise.
std::string findings_and_impression(const std::string& report);

struct Dataset {
    DatasetManifest manifest;
    fs::path root;
    std::vector<PairedSample> samples;

    std::vector<PairedSample> split(Split s) const;
    std::size_t num_categories() const { return manifest.categories.size(); }
};

// Relative manifest paths resolve against $DFAT_DATA_ROOT when it is set.
fs::path resolve_manifest_path(const fs::path& manifest_path);
Dataset load_dataset(const fs::path& manifest_path, const LoadOptions& options = {});

struct SynthConfig {
    int classes = 4;
    int per_class = 50;
    double sigma = 0.1;
    std::uint64_t seed = 7;
    bool multi_label = false;
    int num_patches = 8;
    int patch_dim = 16;
    // Probability that a positive mention also lists the three motif words.
    // Off by default: with the words present a model can match reports on
    // them alone and never learn the class names that prompts rely on.
    double motif_rate = 0.0;
    // Probability that each absent class is mentioned as negated.
    double negation_rate = 1.0;
    // Probability that a report is a single clause: the positive finding or
    // one negated absent class, chosen evenly.
    double brief_rate = 0.3;
    std::string name = "synthetic";
};

struct SynthResult {
    fs::path manifest;
    fs::path corpus;
    fs::path templates;
    std::vector<std::string> categories;
};

// Planted-structure data: class c owns a Gaussian patch template, a name
// phrase and a three-word motif. Images are the mean of the positive
// templates plus sigma-scaled noise; reports state the positive classes by
// name, negate absent ones and add filler clauses. The motif words always
// appear in the corpus descriptions and, at motif_rate, in reports. Writes the manifest,
// records, per-sample feature arrays, the templates (C x P*D) and a
// matching category corpus. Output is byte-identical for equal configs.
SynthResult make_synthetic(const SynthConfig& cfg, const fs::path& dir);

// Category names used by the generator, in label order.
std::vector<std::string> synthetic_class_names(int classes);
// The three signature words of class c.
std::vector<std::string> synthetic_motif(int c);

// Index of the template nearest (Euclidean) to the image.
int nearest_template(const Matrix& templates, const Matrix& image);

// Class-stratified subset keeping `fraction` of each primary-label stratum
// (largest-remainder rounding, at least one per class). Output keeps the
// input order.
std::vector<PairedSample> split_fraction(const std::vector<PairedSample>& samples, std::size_t num_categories, double fraction,
                                         std::uint64_t seed);

// Stacked labels, one row per sample.
Matrix label_matrix(const std::vector<PairedSample>& samples);

}  // namespace dfat::data
