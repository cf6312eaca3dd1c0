#include "crossview/datacube.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>

#include "crossview/errors.hpp"
#include "crossview/rng.hpp"
#include "crossview/threads.hpp"

namespace crossview {

namespace {

using nlohmann::json;

json read_sidecar(const std::string& path) {
    const std::string side = path + ".json";
    std::ifstream in(side);
    if (!in) throw FormatError("missing sidecar " + side);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError("corrupt sidecar " + side + ": " + e.what());
    }
    return j;
}

int require_int(const json& j, const char* field, const std::string& side) {
    if (!j.contains(field) || !j[field].is_number_integer()) {
        throw FormatError("sidecar " + side + " missing integer field \"" + field + "\"");
    }
    return j[field].get<int>();
}

std::vector<char> read_payload(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open payload " + path);
    in.seekg(0, std::ios::end);
    const std::streamoff n = in.tellg();
    in.seekg(0);
    std::vector<char> buf(static_cast<std::size_t>(n));
    in.read(buf.data(), n);
    if (!in) throw FormatError("short read on payload " + path);
    return buf;
}

}  // namespace

HyperCube load_cube(const std::string& path) {
    const json j = read_sidecar(path);
    HyperCube cube;
    cube.height = require_int(j, "height", path + ".json");
    cube.width = require_int(j, "width", path + ".json");
    cube.channels = require_int(j, "channels", path + ".json");
    if (j.contains("wavelength_note") && j["wavelength_note"].is_string()) {
        cube.wavelength_note = j["wavelength_note"].get<std::string>();
    }
    if (cube.height < 1 || cube.width < 1 || cube.channels < 2) {
        throw FormatError("cube dimensions out of range in " + path + ".json");
    }
    const std::vector<char> buf = read_payload(path);
    const std::int64_t n =
        static_cast<std::int64_t>(cube.height) * cube.width * cube.channels;
    if (static_cast<std::int64_t>(buf.size()) != n * 4) {
        throw FormatError("cube payload " + path + " holds " +
                          std::to_string(buf.size() / 4) + " float32 values, sidecar declares " +
                          std::to_string(n));
    }
    cube.data.resize(static_cast<std::size_t>(n));
    const float* f = reinterpret_cast<const float*>(buf.data());
    for (std::int64_t i = 0; i < n; ++i) {
        cube.data[static_cast<std::size_t>(i)] = static_cast<double>(f[i]);
        if (!std::isfinite(cube.data[static_cast<std::size_t>(i)])) {
            throw DataError("non-finite value in cube " + path + " at flat index " +
                            std::to_string(i));
        }
    }
    return cube;
}

void save_cube(const HyperCube& cube, const std::string& path) {
    json j;
    j["height"] = cube.height;
    j["width"] = cube.width;
    j["channels"] = cube.channels;
    if (!cube.wavelength_note.empty()) j["wavelength_note"] = cube.wavelength_note;
    std::ofstream side(path + ".json");
    side << j.dump(2) << "\n";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write payload " + path);
    std::vector<float> f(cube.data.size());
    for (std::size_t i = 0; i < cube.data.size(); ++i) f[i] = static_cast<float>(cube.data[i]);
    out.write(reinterpret_cast<const char*>(f.data()),
              static_cast<std::streamsize>(f.size() * 4));
}

GroundTruth load_ground_truth(const std::string& path) {
    const json j = read_sidecar(path);
    GroundTruth gt;
    gt.height = require_int(j, "height", path + ".json");
    gt.width = require_int(j, "width", path + ".json");
    gt.num_classes = require_int(j, "num_classes", path + ".json");
    if (gt.height < 1 || gt.width < 1 || gt.num_classes < 1) {
        throw FormatError("ground-truth dimensions out of range in " + path + ".json");
    }
    if (j.contains("class_names")) {
        if (!j["class_names"].is_array()) {
            throw FormatError("class_names must be an array in " + path + ".json");
        }
        for (const auto& e : j["class_names"]) gt.class_names.push_back(e.get<std::string>());
        if (!gt.class_names.empty() &&
            gt.class_names.size() != static_cast<std::size_t>(gt.num_classes)) {
            throw FormatError("class_names length differs from num_classes in " + path + ".json");
        }
    }
    if (gt.class_names.empty()) {
        for (int c = 1; c <= gt.num_classes; ++c) gt.class_names.push_back("class_" + std::to_string(c));
    }
    const std::vector<char> buf = read_payload(path);
    const std::int64_t n = static_cast<std::int64_t>(gt.height) * gt.width;
    if (static_cast<std::int64_t>(buf.size()) != n * 2) {
        throw FormatError("ground-truth payload " + path + " holds " +
                          std::to_string(buf.size() / 2) + " uint16 values, sidecar declares " +
                          std::to_string(n));
    }
    gt.labels.resize(static_cast<std::size_t>(n));
    const std::uint16_t* u = reinterpret_cast<const std::uint16_t*>(buf.data());
    gt.class_counts.assign(static_cast<std::size_t>(gt.num_classes), 0);
    for (std::int64_t i = 0; i < n; ++i) {
        gt.labels[static_cast<std::size_t>(i)] = u[i];
        if (u[i] > gt.num_classes) {
            throw FormatError("label " + std::to_string(u[i]) + " exceeds num_classes " +
                              std::to_string(gt.num_classes) + " in " + path);
        }
        if (u[i] > 0) ++gt.class_counts[static_cast<std::size_t>(u[i] - 1)];
    }
    return gt;
}

void save_ground_truth(const GroundTruth& gt, const std::string& path) {
    json j;
    j["height"] = gt.height;
    j["width"] = gt.width;
    j["num_classes"] = gt.num_classes;
    j["class_names"] = gt.class_names;
    std::ofstream side(path + ".json");
    side << j.dump(2) << "\n";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write payload " + path);
    out.write(reinterpret_cast<const char*>(gt.labels.data()),
              static_cast<std::streamsize>(gt.labels.size() * 2));
}

PcaModel fit_pca(const HyperCube& cube, int k, bool standardize) {
    const int C = cube.channels;
    if (k < 1 || k > C) {
        throw ArgumentError("pca: k = " + std::to_string(k) + " outside [1, " +
                            std::to_string(C) + "]");
    }
    const std::int64_t N = cube.pixel_count();
    for (double v : cube.data) {
        if (!std::isfinite(v)) throw DataError("pca: non-finite value in cube");
    }

    PcaModel model;
    model.channels = C;
    model.k = k;
    model.mean.assign(static_cast<std::size_t>(C), 0.0);
    for (std::int64_t p = 0; p < N; ++p) {
        const double* v = cube.data.data() + p * C;
        for (int c = 0; c < C; ++c) model.mean[static_cast<std::size_t>(c)] += v[c];
    }
    for (int c = 0; c < C; ++c) model.mean[static_cast<std::size_t>(c)] /= static_cast<double>(N);

    if (standardize) {
        std::vector<double> var(static_cast<std::size_t>(C), 0.0);
        for (std::int64_t p = 0; p < N; ++p) {
            const double* v = cube.data.data() + p * C;
            for (int c = 0; c < C; ++c) {
                const double d = v[c] - model.mean[static_cast<std::size_t>(c)];
                var[static_cast<std::size_t>(c)] += d * d;
            }
        }
        model.scale.resize(static_cast<std::size_t>(C));
        for (int c = 0; c < C; ++c) {
            model.scale[static_cast<std::size_t>(c)] =
                std::max(std::sqrt(var[static_cast<std::size_t>(c)] / static_cast<double>(N)),
                         1e-12);
        }
    }

    // Population covariance of the (centered, possibly scaled) channels.
    Eigen::MatrixXd xc(N, C);
    for (std::int64_t p = 0; p < N; ++p) {
        const double* v = cube.data.data() + p * C;
        for (int c = 0; c < C; ++c) {
            double d = v[c] - model.mean[static_cast<std::size_t>(c)];
            if (standardize) d /= model.scale[static_cast<std::size_t>(c)];
            xc(p, c) = d;
        }
    }
    Eigen::MatrixXd cov = (xc.transpose() * xc) / static_cast<double>(N);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw NumericError("pca: eigendecomposition failed");

    model.components.resize(static_cast<std::size_t>(k) * C);
    model.explained_variance.resize(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        const int src = C - 1 - i;  // eigenvalues ascend in Eigen
        Eigen::VectorXd v = es.eigenvectors().col(src);
        // Sign convention: largest-magnitude entry positive.
        int arg = 0;
        for (int c = 1; c < C; ++c) {
            if (std::abs(v(c)) > std::abs(v(arg))) arg = c;
        }
        if (v(arg) < 0) v = -v;
        for (int c = 0; c < C; ++c) {
            model.components[static_cast<std::size_t>(i) * C + c] = v(c);
        }
        model.explained_variance[static_cast<std::size_t>(i)] =
            std::max(es.eigenvalues()(src), 0.0);
    }
    return model;
}

HyperCube apply_pca(const HyperCube& cube, const PcaModel& model) {
    if (cube.channels != model.channels) {
        throw ArgumentError("apply_pca: cube has " + std::to_string(cube.channels) +
                            " channels, model expects " + std::to_string(model.channels));
    }
    const int C = cube.channels, k = model.k;
    const std::int64_t N = cube.pixel_count();
    HyperCube out;
    out.height = cube.height;
    out.width = cube.width;
    out.channels = k;
    out.wavelength_note = cube.wavelength_note;
    out.data.resize(static_cast<std::size_t>(N) * k);

    Eigen::MatrixXd xc(N, C);
    for (std::int64_t p = 0; p < N; ++p) {
        const double* v = cube.data.data() + p * C;
        for (int c = 0; c < C; ++c) {
            double d = v[c] - model.mean[static_cast<std::size_t>(c)];
            if (!model.scale.empty()) d /= model.scale[static_cast<std::size_t>(c)];
            xc(p, c) = d;
        }
    }
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> comp(
        model.components.data(), k, C);
    Eigen::MatrixXd proj = xc * comp.transpose();  // [N, k]
    for (std::int64_t p = 0; p < N; ++p) {
        for (int i = 0; i < k; ++i) out.data[static_cast<std::size_t>(p * k + i)] = proj(p, i);
    }
    return out;
}

PatchSet extract_patches(const HyperCube& reduced, const GroundTruth& gt, int s) {
    if (s % 2 == 0) throw ArgumentError("patch size must be odd, got " + std::to_string(s));
    if (s < 1) throw ArgumentError("patch size must be positive");
    if (s > 2 * std::min(reduced.height, reduced.width)) {
        throw ArgumentError("patch size " + std::to_string(s) + " exceeds twice the cube extent");
    }
    if (gt.height != reduced.height || gt.width != reduced.width) {
        throw ArgumentError("ground-truth dimensions do not match the cube");
    }
    const int H = reduced.height, W = reduced.width, k = reduced.channels;
    const int half = s / 2;

    PatchSet ps;
    ps.patch_size = s;
    ps.reduced_channels = k;
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            const std::uint16_t lab = gt.label_at(r, c);
            if (lab == 0) continue;
            ps.labels.push_back(static_cast<int>(lab));
            ps.coords.emplace_back(r, c);
        }
    }
    const std::int64_t n = ps.count();
    const std::int64_t stride = ps.patch_stride();
    ps.patches.resize(static_cast<std::size_t>(n * stride));
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (std::int64_t i = 0; i < n; ++i) {
        const auto [r, c] = ps.coords[static_cast<std::size_t>(i)];
        float* dst = ps.patches.data() + i * stride;
        for (int dr = -half; dr <= half; ++dr) {
            const int rr = mirror_index(r + dr, H);
            for (int dc = -half; dc <= half; ++dc) {
                const int cc = mirror_index(c + dc, W);
                const double* src = reduced.data.data() +
                                    (static_cast<std::int64_t>(rr) * W + cc) * k;
                for (int ch = 0; ch < k; ++ch) *dst++ = static_cast<float>(src[ch]);
            }
        }
    }
    return ps;
}

IndexSplit stratified_split(const PatchSet& patches, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0) || fraction > 1.0) {
        throw ArgumentError("train fraction must lie in (0, 1], got " + std::to_string(fraction));
    }
    std::map<int, std::vector<std::int64_t>> by_class;
    for (std::int64_t i = 0; i < patches.count(); ++i) {
        by_class[patches.labels[static_cast<std::size_t>(i)]].push_back(i);
    }
    IndexSplit split;
    split.fraction = fraction;
    split.seed = seed;
    Rng rng(seed);
    for (auto& [cls, idx] : by_class) {
        const std::int64_t n_c = static_cast<std::int64_t>(idx.size());
        const std::int64_t n_train =
            std::max<std::int64_t>(1, static_cast<std::int64_t>(
                                          std::floor(fraction * static_cast<double>(n_c))));
        // Partial Fisher-Yates: first n_train entries become the class's train draw.
        for (std::int64_t i = 0; i < n_train; ++i) {
            const std::int64_t j = i + rng.uniform_int(n_c - i);
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        }
        split.train_indices.insert(split.train_indices.end(), idx.begin(), idx.begin() + n_train);
        split.test_indices.insert(split.test_indices.end(), idx.begin() + n_train, idx.end());
    }
    std::sort(split.train_indices.begin(), split.train_indices.end());
    std::sort(split.test_indices.begin(), split.test_indices.end());
    return split;
}

}  // namespace crossview
