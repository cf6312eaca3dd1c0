#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "crossview/tensor.hpp"

namespace crossview {

enum class SplitStrategy { parity, sequential, random, overlap };

SplitStrategy split_strategy_from_name(const std::string& name);
std::string split_strategy_name(SplitStrategy s);

// Channel-index pair defining the two views (X1, X2). Both lists are sorted;
// together they always cover {0..C-1}.
struct ChannelSplit {
    SplitStrategy strategy = SplitStrategy::parity;
    std::vector<int> indices1, indices2;
    int total_channels = 0;
    std::uint64_t seed = 0;  // random strategy only
};

ChannelSplit parity_split(int C);
ChannelSplit sequential_split(int C);
ChannelSplit random_split(int C, std::uint64_t seed);
ChannelSplit overlap_split(int C);
ChannelSplit make_split(SplitStrategy strategy, int C, std::uint64_t seed);

// Gathers the two views from one s x s x C patch (row-major row, col, channel).
std::pair<Tensor, Tensor> apply_split(const Tensor& patch, const ChannelSplit& split);

// Batch gather straight from float patch storage into the network input
// layout [N, 1, |indices|, s, s].
Tensor gather_view(const float* patches, const std::vector<std::int64_t>& rows,
                   std::int64_t patch_stride, int s, int C, const std::vector<int>& indices);

}  // namespace crossview
