#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace crossview {

// H x W x C reflectance volume, row-major (row, col, channel). Values live in
// double in memory; the on-disk container stores little-endian float32.
struct HyperCube {
    int height = 0, width = 0, channels = 0;
    std::vector<double> data;
    std::string wavelength_note;

    double at(int r, int c, int ch) const {
        return data[(static_cast<std::int64_t>(r) * width + c) * channels + ch];
    }
    double& at(int r, int c, int ch) {
        return data[(static_cast<std::int64_t>(r) * width + c) * channels + ch];
    }
    std::int64_t pixel_count() const { return static_cast<std::int64_t>(height) * width; }
};

// Per-pixel class map. 0 = unlabeled background, 1..K = classes.
struct GroundTruth {
    int height = 0, width = 0;
    int num_classes = 0;
    std::vector<std::uint16_t> labels;
    std::vector<std::string> class_names;
    std::vector<std::int64_t> class_counts;  // counts for labels 1..K

    std::uint16_t label_at(int r, int c) const {
        return labels[static_cast<std::int64_t>(r) * width + c];
    }
};

struct PcaModel {
    int channels = 0;
    int k = 0;
    std::vector<double> mean;                // [C]
    std::vector<double> scale;               // [C] if standardized, else empty
    std::vector<double> components;          // [k][C] row-major
    std::vector<double> explained_variance;  // [k], nonincreasing
};

struct PatchSet {
    int patch_size = 0;
    int reduced_channels = 0;
    std::vector<float> patches;  // N * s*s*k, per-patch row-major (row, col, channel)
    std::vector<int> labels;     // 1..K
    std::vector<std::pair<int, int>> coords;

    std::int64_t count() const { return static_cast<std::int64_t>(labels.size()); }
    std::int64_t patch_stride() const {
        return static_cast<std::int64_t>(patch_size) * patch_size * reduced_channels;
    }
    const float* patch(std::int64_t i) const { return patches.data() + i * patch_stride(); }
};

struct IndexSplit {
    std::vector<std::int64_t> train_indices, test_indices;
    double fraction = 0.0;
    std::uint64_t seed = 0;
};

// Container IO. `path` names the payload; the sidecar is `path + ".json"`.
HyperCube load_cube(const std::string& path);
void save_cube(const HyperCube& cube, const std::string& path);
GroundTruth load_ground_truth(const std::string& path);
void save_ground_truth(const GroundTruth& gt, const std::string& path);

PcaModel fit_pca(const HyperCube& cube, int k, bool standardize = false);
HyperCube apply_pca(const HyperCube& cube, const PcaModel& model);
PatchSet extract_patches(const HyperCube& reduced, const GroundTruth& gt, int s);
IndexSplit stratified_split(const PatchSet& patches, double fraction, std::uint64_t seed);

// Mirror-padded index into [0, n).
inline int mirror_index(int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
}

}  // namespace crossview
