#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "crossview/datacube.hpp"
#include "crossview/history.hpp"
#include "crossview/evaluate.hpp"
#include "crossview/tensor.hpp"

namespace crossview {

// Parameter file: one line of JSON (header with named block shapes), '\n',
// then the blocks as little-endian float64 in declaration order.
struct NamedBlock {
    std::string name;
    Tensor* tensor;
};

void write_param_file(const std::string& path, nlohmann::json header,
                      const std::vector<NamedBlock>& blocks);
nlohmann::json read_param_header(const std::string& path);
// Loads blocks into already-shaped tensors; names and shapes must match.
nlohmann::json read_param_file(const std::string& path, const std::vector<NamedBlock>& blocks);

// Feature export: JSON sidecar {count, dim, ...} + little-endian float32 matrix.
void write_features(const std::string& path, const Tensor& features, nlohmann::json extra = {});
Tensor read_features(const std::string& path);
nlohmann::json read_features_header(const std::string& path);

void write_history_csv(const std::string& path, const LossHistory& hist);

void write_metrics(const std::string& json_path, const std::string& csv_path,
                   const MetricsReport& rep, const std::vector<std::string>& class_names,
                   nlohmann::json extra = {});

// CSV converters for the container formats. Cube CSV: height*width rows of
// `channels` values (pixels row-major). Ground-truth CSV: height rows of
// `width` labels.
HyperCube cube_from_csv(const std::string& csv_path, int height, int width, int channels,
                        const std::string& note = "");
GroundTruth gt_from_csv(const std::string& csv_path, int height, int width, int num_classes,
                        const std::vector<std::string>& class_names);

}  // namespace crossview
