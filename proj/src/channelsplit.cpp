#include "crossview/channelsplit.hpp"

#include <algorithm>

#include "crossview/errors.hpp"
#include "crossview/rng.hpp"
#include "crossview/threads.hpp"

namespace crossview {

SplitStrategy split_strategy_from_name(const std::string& name) {
    if (name == "parity") return SplitStrategy::parity;
    if (name == "sequential") return SplitStrategy::sequential;
    if (name == "random") return SplitStrategy::random;
    if (name == "overlap") return SplitStrategy::overlap;
    throw ArgumentError("unknown split strategy \"" + name +
                        "\" (expected parity|sequential|random|overlap)");
}

std::string split_strategy_name(SplitStrategy s) {
    switch (s) {
        case SplitStrategy::parity: return "parity";
        case SplitStrategy::sequential: return "sequential";
        case SplitStrategy::random: return "random";
        case SplitStrategy::overlap: return "overlap";
    }
    return "?";
}

ChannelSplit parity_split(int C) {
    if (C < 2) throw ArgumentError("parity split needs C >= 2");
    ChannelSplit s;
    s.strategy = SplitStrategy::parity;
    s.total_channels = C;
    for (int c = 0; c < C; c += 2) s.indices1.push_back(c);
    for (int c = 1; c < C; c += 2) s.indices2.push_back(c);
    return s;
}

ChannelSplit sequential_split(int C) {
    if (C < 2) throw ArgumentError("sequential split needs C >= 2");
    ChannelSplit s;
    s.strategy = SplitStrategy::sequential;
    s.total_channels = C;
    const int half = C / 2;
    for (int c = 0; c < half; ++c) s.indices1.push_back(c);
    for (int c = half; c < C; ++c) s.indices2.push_back(c);
    return s;
}

ChannelSplit random_split(int C, std::uint64_t seed) {
    if (C < 6) throw ArgumentError("random split needs C >= 6");
    ChannelSplit s;
    s.strategy = SplitStrategy::random;
    s.total_channels = C;
    s.seed = seed;
    const int half = C / 2;
    const int third = C / 3;
    const int extra = C / 6;
    for (int c = 0; c < half; ++c) s.indices1.push_back(c);
    // extra channels sampled without replacement from {half .. C-1}
    std::vector<int> pool;
    for (int c = half; c < C; ++c) pool.push_back(c);
    Rng rng(seed);
    for (int i = 0; i < extra; ++i) {
        const std::int64_t j = i + rng.uniform_int(static_cast<std::int64_t>(pool.size()) - i);
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    s.indices1.insert(s.indices1.end(), pool.begin(), pool.begin() + extra);
    std::sort(s.indices1.begin(), s.indices1.end());
    for (int c = third; c < C; ++c) s.indices2.push_back(c);
    return s;
}

ChannelSplit overlap_split(int C) {
    if (C < 3) throw ArgumentError("overlap split needs C >= 3");
    ChannelSplit s;
    s.strategy = SplitStrategy::overlap;
    s.total_channels = C;
    const int two_thirds = 2 * C / 3;
    const int third = C / 3;
    for (int c = 0; c < two_thirds; ++c) s.indices1.push_back(c);
    for (int c = third; c < C; ++c) s.indices2.push_back(c);
    return s;
}

ChannelSplit make_split(SplitStrategy strategy, int C, std::uint64_t seed) {
    switch (strategy) {
        case SplitStrategy::parity: return parity_split(C);
        case SplitStrategy::sequential: return sequential_split(C);
        case SplitStrategy::random: return random_split(C, seed);
        case SplitStrategy::overlap: return overlap_split(C);
    }
    throw ArgumentError("make_split: bad strategy");
}

std::pair<Tensor, Tensor> apply_split(const Tensor& patch, const ChannelSplit& split) {
    if (patch.rank() != 3) throw ArgumentError("apply_split: patch must be s x s x C");
    const int s = patch.dim(0), C = patch.dim(2);
    if (patch.dim(1) != s) throw ArgumentError("apply_split: patch must be square");
    if (C != split.total_channels) {
        throw ArgumentError("apply_split: patch has " + std::to_string(C) +
                            " channels, split expects " + std::to_string(split.total_channels));
    }
    auto gather = [&](const std::vector<int>& idx) {
        Tensor out({s, s, static_cast<int>(idx.size())});
        std::int64_t o = 0;
        for (int r = 0; r < s; ++r) {
            for (int c = 0; c < s; ++c) {
                const double* src = patch.data() + (static_cast<std::int64_t>(r) * s + c) * C;
                for (int ch : idx) out[o++] = src[ch];
            }
        }
        return out;
    };
    return {gather(split.indices1), gather(split.indices2)};
}

Tensor gather_view(const float* patches, const std::vector<std::int64_t>& rows,
                   std::int64_t patch_stride, int s, int C, const std::vector<int>& indices) {
    const int n = static_cast<int>(rows.size());
    const int k = static_cast<int>(indices.size());
    Tensor out({n, 1, k, s, s});
    const std::int64_t plane = static_cast<std::int64_t>(s) * s;
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (int b = 0; b < n; ++b) {
        const float* src = patches + rows[static_cast<std::size_t>(b)] * patch_stride;
        double* dst = out.data() + static_cast<std::int64_t>(b) * k * plane;
        for (int d = 0; d < k; ++d) {
            const int ch = indices[static_cast<std::size_t>(d)];
            for (std::int64_t p = 0; p < plane; ++p) {
                dst[d * plane + p] = static_cast<double>(src[p * C + ch]);
            }
        }
    }
    return out;
}

}  // namespace crossview
