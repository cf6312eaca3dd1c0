#include "crossview/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "crossview/errors.hpp"

namespace crossview {

using nlohmann::json;

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

json shape_json(const Tensor& t) {
    json a = json::array();
    for (int d : t.shape()) a.push_back(d);
    return a;
}

}  // namespace

void write_param_file(const std::string& path, json header,
                      const std::vector<NamedBlock>& blocks) {
    json blist = json::array();
    for (const NamedBlock& b : blocks) {
        blist.push_back({{"name", b.name}, {"shape", shape_json(*b.tensor)}});
    }
    header["blocks"] = blist;
    header["format"] = "crossview-params-v1";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path);
    out << header.dump() << "\n";
    for (const NamedBlock& b : blocks) {
        out.write(reinterpret_cast<const char*>(b.tensor->data()),
                  static_cast<std::streamsize>(b.tensor->size() * 8));
    }
    if (!out) throw FormatError("short write on " + path);
}

json read_param_header(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("missing header line in " + path);
    try {
        return json::parse(line);
    } catch (const json::exception& e) {
        throw FormatError("corrupt header in " + path + ": " + e.what());
    }
}

json read_param_file(const std::string& path, const std::vector<NamedBlock>& blocks) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("missing header line in " + path);
    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        throw FormatError("corrupt header in " + path + ": " + e.what());
    }
    if (!header.contains("blocks") || !header["blocks"].is_array() ||
        header["blocks"].size() != blocks.size()) {
        throw FormatError("parameter block list mismatch in " + path);
    }
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const json& meta = header["blocks"][i];
        if (meta["name"].get<std::string>() != blocks[i].name) {
            throw FormatError("parameter block " + std::to_string(i) + " is \"" +
                              meta["name"].get<std::string>() + "\", expected \"" +
                              blocks[i].name + "\" in " + path);
        }
        std::vector<int> shape;
        for (const auto& d : meta["shape"]) shape.push_back(d.get<int>());
        if (shape != blocks[i].tensor->shape()) {
            throw FormatError("parameter block \"" + blocks[i].name + "\" shape mismatch in " +
                              path);
        }
        in.read(reinterpret_cast<char*>(blocks[i].tensor->data()),
                static_cast<std::streamsize>(blocks[i].tensor->size() * 8));
        if (!in) throw FormatError("short read in " + path);
    }
    return header;
}

void write_features(const std::string& path, const Tensor& features, json extra) {
    if (features.rank() != 2) throw ArgumentError("write_features: expected [n,d]");
    json j = std::move(extra);
    j["count"] = features.dim(0);
    j["dim"] = features.dim(1);
    std::ofstream side(path + ".json");
    side << j.dump(2) << "\n";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path);
    std::vector<float> f(static_cast<std::size_t>(features.size()));
    for (std::int64_t i = 0; i < features.size(); ++i) f[static_cast<std::size_t>(i)] =
        static_cast<float>(features[i]);
    out.write(reinterpret_cast<const char*>(f.data()),
              static_cast<std::streamsize>(f.size() * 4));
}

json read_features_header(const std::string& path) {
    std::ifstream side(path + ".json");
    if (!side) throw FormatError("missing sidecar " + path + ".json");
    json j;
    try {
        side >> j;
    } catch (const json::exception& e) {
        throw FormatError("corrupt sidecar " + path + ".json: " + e.what());
    }
    return j;
}

Tensor read_features(const std::string& path) {
    const json j = read_features_header(path);
    const int n = j.at("count").get<int>();
    const int d = j.at("dim").get<int>();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    std::vector<float> f(static_cast<std::size_t>(n) * d);
    in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(f.size() * 4));
    if (!in) throw FormatError("feature payload " + path + " shorter than sidecar declares");
    Tensor t({n, d});
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(f[static_cast<std::size_t>(i)]);
    return t;
}

void write_history_csv(const std::string& path, const LossHistory& hist) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path);
    for (std::size_t i = 0; i < hist.columns.size(); ++i) {
        out << (i ? "," : "") << hist.columns[i];
    }
    out << "\n";
    for (const auto& row : hist.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i == 0) {
                out << static_cast<long long>(row[i]);
            } else {
                out << "," << fmt_double(row[i]);
            }
        }
        out << "\n";
    }
}

void write_metrics(const std::string& json_path, const std::string& csv_path,
                   const MetricsReport& rep, const std::vector<std::string>& class_names,
                   json extra) {
    json j = std::move(extra);
    j["oa"] = rep.oa;
    j["aa"] = rep.aa;
    j["per_class"] = rep.per_class_acc;
    json conf = json::array();
    for (int r = 0; r < rep.num_classes; ++r) {
        json row = json::array();
        for (int c = 0; c < rep.num_classes; ++c) {
            row.push_back(rep.confusion[static_cast<std::size_t>(r) * rep.num_classes + c]);
        }
        conf.push_back(row);
    }
    j["confusion"] = conf;
    std::ofstream out(json_path);
    if (!out) throw FormatError("cannot write " + json_path);
    out << j.dump(2) << "\n";

    std::ofstream csv(csv_path);
    if (!csv) throw FormatError("cannot write " + csv_path);
    csv << "class,name,accuracy\n";
    for (int c = 0; c < rep.num_classes; ++c) {
        const std::string name =
            c < static_cast<int>(class_names.size()) ? class_names[static_cast<std::size_t>(c)]
                                                     : ("class_" + std::to_string(c + 1));
        csv << (c + 1) << "," << name << ","
            << fmt_double(rep.per_class_acc[static_cast<std::size_t>(c)]) << "\n";
    }
    csv << "OA,," << fmt_double(rep.oa) << "\n";
    csv << "AA,," << fmt_double(rep.aa) << "\n";
}

namespace {

std::vector<double> parse_csv_row(const std::string& line, std::int64_t lineno,
                                  const std::string& path) {
    std::vector<double> vals;
    std::size_t pos = 0;
    while (pos <= line.size()) {
        const std::size_t next = line.find(',', pos);
        const std::string cell =
            line.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
        try {
            std::size_t used = 0;
            const double v = std::stod(cell, &used);
            vals.push_back(v);
        } catch (...) {
            throw FormatError(path + ": row " + std::to_string(lineno) +
                              " has a non-numeric cell \"" + cell + "\"");
        }
        if (next == std::string::npos) break;
        pos = next + 1;
    }
    return vals;
}

}  // namespace

HyperCube cube_from_csv(const std::string& csv_path, int height, int width, int channels,
                        const std::string& note) {
    std::ifstream in(csv_path);
    if (!in) throw FormatError("cannot open " + csv_path);
    HyperCube cube;
    cube.height = height;
    cube.width = width;
    cube.channels = channels;
    cube.wavelength_note = note;
    const std::int64_t pixels = static_cast<std::int64_t>(height) * width;
    cube.data.reserve(static_cast<std::size_t>(pixels) * channels);
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::vector<double> vals = parse_csv_row(line, lineno, csv_path);
        if (static_cast<int>(vals.size()) != channels) {
            throw FormatError(csv_path + ": row " + std::to_string(lineno) + " has " +
                              std::to_string(vals.size()) + " values, expected " +
                              std::to_string(channels));
        }
        cube.data.insert(cube.data.end(), vals.begin(), vals.end());
    }
    if (static_cast<std::int64_t>(cube.data.size()) != pixels * channels) {
        throw FormatError(csv_path + ": found " + std::to_string(cube.data.size() / channels) +
                          " pixel rows, expected " + std::to_string(pixels));
    }
    return cube;
}

GroundTruth gt_from_csv(const std::string& csv_path, int height, int width, int num_classes,
                        const std::vector<std::string>& class_names) {
    std::ifstream in(csv_path);
    if (!in) throw FormatError("cannot open " + csv_path);
    GroundTruth gt;
    gt.height = height;
    gt.width = width;
    gt.num_classes = num_classes;
    gt.class_names = class_names;
    if (gt.class_names.empty()) {
        for (int c = 1; c <= num_classes; ++c) gt.class_names.push_back("class_" + std::to_string(c));
    } else if (gt.class_names.size() != static_cast<std::size_t>(num_classes)) {
        throw ArgumentError("class name count differs from num_classes");
    }
    gt.labels.reserve(static_cast<std::size_t>(height) * width);
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::vector<double> vals = parse_csv_row(line, lineno, csv_path);
        if (static_cast<int>(vals.size()) != width) {
            throw FormatError(csv_path + ": row " + std::to_string(lineno) + " has " +
                              std::to_string(vals.size()) + " values, expected " +
                              std::to_string(width));
        }
        for (double v : vals) {
            if (v < 0 || v > num_classes || v != std::floor(v)) {
                throw FormatError(csv_path + ": row " + std::to_string(lineno) +
                                  " holds label " + fmt_double(v) + " outside 0.." +
                                  std::to_string(num_classes));
            }
            gt.labels.push_back(static_cast<std::uint16_t>(v));
        }
    }
    if (static_cast<std::int64_t>(gt.labels.size()) !=
        static_cast<std::int64_t>(height) * width) {
        throw FormatError(csv_path + ": found " + std::to_string(gt.labels.size() / width) +
                          " rows, expected " + std::to_string(height));
    }
    gt.class_counts.assign(static_cast<std::size_t>(num_classes), 0);
    for (std::uint16_t lab : gt.labels) {
        if (lab > 0) ++gt.class_counts[static_cast<std::size_t>(lab - 1)];
    }
    return gt;
}

}  // namespace crossview
