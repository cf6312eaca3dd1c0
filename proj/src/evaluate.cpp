#include "crossview/evaluate.hpp"

#include <algorithm>
#include <cmath>

#include "crossview/errors.hpp"
#include "crossview/rng.hpp"
#include "crossview/threads.hpp"

namespace crossview {

SvmModel train_svm(const Tensor& features, const std::vector<int>& labels, int num_classes,
                   const IndexSplit& split, const SvmConfig& cfg) {
    if (features.rank() != 2) throw ArgumentError("train_svm: features must be [n,d]");
    const int d = features.dim(1);
    const std::int64_t n = features.dim(0);
    if (static_cast<std::int64_t>(labels.size()) != n) {
        throw ArgumentError("train_svm: label count does not match feature rows");
    }
    if (split.train_indices.empty()) throw ArgumentError("train_svm: empty train split");

    std::vector<std::int64_t> present(static_cast<std::size_t>(num_classes), 0);
    for (std::int64_t i : split.train_indices) {
        const int lab = labels[static_cast<std::size_t>(i)];
        if (lab < 1 || lab > num_classes) {
            throw ArgumentError("train_svm: label " + std::to_string(lab) + " outside 1.." +
                                std::to_string(num_classes));
        }
        ++present[static_cast<std::size_t>(lab - 1)];
    }
    for (int c = 0; c < num_classes; ++c) {
        if (present[static_cast<std::size_t>(c)] == 0) {
            throw ArgumentError("train_svm: class " + std::to_string(c + 1) +
                                " absent from train set");
        }
    }

    SvmModel model;
    model.num_classes = num_classes;
    model.dim = d;
    model.feat_mean.assign(static_cast<std::size_t>(d), 0.0);
    model.feat_std.assign(static_cast<std::size_t>(d), 0.0);
    const double tn = static_cast<double>(split.train_indices.size());
    for (std::int64_t i : split.train_indices) {
        const double* row = features.data() + i * d;
        for (int j = 0; j < d; ++j) model.feat_mean[static_cast<std::size_t>(j)] += row[j];
    }
    for (int j = 0; j < d; ++j) model.feat_mean[static_cast<std::size_t>(j)] /= tn;
    for (std::int64_t i : split.train_indices) {
        const double* row = features.data() + i * d;
        for (int j = 0; j < d; ++j) {
            const double dv = row[j] - model.feat_mean[static_cast<std::size_t>(j)];
            model.feat_std[static_cast<std::size_t>(j)] += dv * dv;
        }
    }
    for (int j = 0; j < d; ++j) {
        model.feat_std[static_cast<std::size_t>(j)] =
            std::max(std::sqrt(model.feat_std[static_cast<std::size_t>(j)] / tn), 1e-8);
    }

    // Standardized train matrix, built once.
    const std::int64_t tn_i = static_cast<std::int64_t>(split.train_indices.size());
    std::vector<double> x(static_cast<std::size_t>(tn_i) * d);
    for (std::int64_t r = 0; r < tn_i; ++r) {
        const double* src = features.data() + split.train_indices[static_cast<std::size_t>(r)] * d;
        double* dst = x.data() + r * d;
        for (int j = 0; j < d; ++j) {
            dst[j] = (src[j] - model.feat_mean[static_cast<std::size_t>(j)]) /
                     model.feat_std[static_cast<std::size_t>(j)];
        }
    }

    model.weights.assign(static_cast<std::size_t>(num_classes) * d, 0.0);
    model.biases.assign(static_cast<std::size_t>(num_classes), 0.0);

    // Independent one-vs-rest subproblems; each draws its own seeded stream.
#pragma omp parallel for schedule(dynamic) num_threads(max_threads())
    for (int cls = 0; cls < num_classes; ++cls) {
        Rng rng(derive_seed(cfg.seed, "svm-class-" + std::to_string(cls + 1)));
        std::vector<std::int64_t> order(static_cast<std::size_t>(tn_i));
        for (std::int64_t r = 0; r < tn_i; ++r) order[static_cast<std::size_t>(r)] = r;
        double* w = model.weights.data() + static_cast<std::int64_t>(cls) * d;
        double& b = model.biases[static_cast<std::size_t>(cls)];
        long t = 0;
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            rng.shuffle(order);
            for (std::int64_t r : order) {
                ++t;
                const double eta = 1.0 / (cfg.reg * static_cast<double>(t));
                const double* xi = x.data() + r * d;
                const int lab = labels[static_cast<std::size_t>(
                    split.train_indices[static_cast<std::size_t>(r)])];
                const double y = lab == cls + 1 ? 1.0 : -1.0;
                double margin = b;
                for (int j = 0; j < d; ++j) margin += w[j] * xi[j];
                margin *= y;
                const double shrink = 1.0 - eta * cfg.reg;
                if (margin < 1.0) {
                    for (int j = 0; j < d; ++j) w[j] = shrink * w[j] + eta * y * xi[j];
                    b += eta * y;
                } else {
                    for (int j = 0; j < d; ++j) w[j] *= shrink;
                }
            }
        }
    }
    return model;
}

std::vector<int> classify(const SvmModel& model, const Tensor& features) {
    if (features.rank() != 2 || features.dim(1) != model.dim) {
        throw ArgumentError("classify: feature dimension mismatch");
    }
    const std::int64_t n = features.dim(0);
    const int d = model.dim, K = model.num_classes;
    std::vector<int> pred(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (std::int64_t i = 0; i < n; ++i) {
        const double* row = features.data() + i * d;
        int best = 0;
        double best_score = 0.0;
        for (int cls = 0; cls < K; ++cls) {
            const double* w = model.weights.data() + static_cast<std::int64_t>(cls) * d;
            double s = model.biases[static_cast<std::size_t>(cls)];
            for (int j = 0; j < d; ++j) {
                s += w[j] * (row[j] - model.feat_mean[static_cast<std::size_t>(j)]) /
                     model.feat_std[static_cast<std::size_t>(j)];
            }
            // ties break toward the lowest class index
            if (cls == 0 || s > best_score) {
                best = cls;
                best_score = s;
            }
        }
        pred[static_cast<std::size_t>(i)] = best + 1;
    }
    return pred;
}

MetricsReport compute_metrics(const std::vector<int>& predicted, const std::vector<int>& actual,
                              int num_classes) {
    if (predicted.size() != actual.size() || actual.empty()) {
        throw ArgumentError("compute_metrics: prediction/actual lengths differ or are empty");
    }
    MetricsReport rep;
    rep.num_classes = num_classes;
    rep.confusion.assign(static_cast<std::size_t>(num_classes) * num_classes, 0);
    for (std::size_t i = 0; i < actual.size(); ++i) {
        const int a = actual[i], p = predicted[i];
        if (a < 1 || a > num_classes || p < 1 || p > num_classes) {
            throw ArgumentError("compute_metrics: label outside 1.." +
                                std::to_string(num_classes));
        }
        ++rep.confusion[static_cast<std::size_t>(a - 1) * num_classes + (p - 1)];
    }
    rep.per_class_acc.assign(static_cast<std::size_t>(num_classes), 0.0);
    std::int64_t correct = 0;
    double acc_sum = 0.0;
    int nonempty = 0;
    for (int c = 0; c < num_classes; ++c) {
        std::int64_t row_total = 0;
        for (int j = 0; j < num_classes; ++j) {
            row_total += rep.confusion[static_cast<std::size_t>(c) * num_classes + j];
        }
        const std::int64_t diag = rep.confusion[static_cast<std::size_t>(c) * num_classes + c];
        correct += diag;
        if (row_total > 0) {
            rep.per_class_acc[static_cast<std::size_t>(c)] =
                100.0 * static_cast<double>(diag) / static_cast<double>(row_total);
            acc_sum += rep.per_class_acc[static_cast<std::size_t>(c)];
            ++nonempty;
        }
    }
    rep.oa = 100.0 * static_cast<double>(correct) / static_cast<double>(actual.size());
    rep.aa = nonempty > 0 ? acc_sum / static_cast<double>(nonempty) : 0.0;
    return rep;
}

}  // namespace crossview
