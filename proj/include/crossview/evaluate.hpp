#pragma once

#include <cstdint>
#include <vector>

#include "crossview/datacube.hpp"
#include "crossview/tensor.hpp"

namespace crossview {

struct SvmConfig {
    double reg = 1e-4;
    int epochs = 100;
    std::uint64_t seed = 0;
};

// One-vs-rest linear soft-margin classifier trained by seeded subgradient
// descent (Pegasos schedule), over train-standardized features.
struct SvmModel {
    int num_classes = 0;
    int dim = 0;
    std::vector<double> weights;  // [K][d]
    std::vector<double> biases;   // [K]
    std::vector<double> feat_mean, feat_std;  // [d], std floored at 1e-8
};

struct MetricsReport {
    int num_classes = 0;
    std::vector<double> per_class_acc;      // percent, [K]
    double oa = 0.0, aa = 0.0;              // percent
    std::vector<std::int64_t> confusion;    // [K][K], rows = actual, cols = predicted
};

SvmModel train_svm(const Tensor& features, const std::vector<int>& labels, int num_classes,
                   const IndexSplit& split, const SvmConfig& cfg);
std::vector<int> classify(const SvmModel& model, const Tensor& features);
MetricsReport compute_metrics(const std::vector<int>& predicted, const std::vector<int>& actual,
                              int num_classes);

}  // namespace crossview
