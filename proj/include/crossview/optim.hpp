#pragma once

#include <vector>

#include "crossview/autodiff.hpp"

namespace crossview {

void zero_grads(const std::vector<Parameter*>& params);

// Plain SGD, no momentum.
class Sgd {
public:
    Sgd(std::vector<Parameter*> params, double lr) : params_(std::move(params)), lr_(lr) {}
    void zero_grad() { zero_grads(params_); }
    void step();

private:
    std::vector<Parameter*> params_;
    double lr_;
};

// Adam with L2 weight decay folded into the gradient.
class Adam {
public:
    Adam(std::vector<Parameter*> params, double lr, double weight_decay = 0.0,
         double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void zero_grad() { zero_grads(params_); }
    void step();

private:
    std::vector<Parameter*> params_;
    double lr_, wd_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace crossview
