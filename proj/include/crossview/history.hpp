#pragma once

#include <string>
#include <vector>

namespace crossview {

// Per-epoch loss record; column 0 is the epoch index.
struct LossHistory {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

}  // namespace crossview
