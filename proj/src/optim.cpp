#include "crossview/optim.hpp"

#include <cmath>

namespace crossview {

void zero_grads(const std::vector<Parameter*>& params) {
    for (Parameter* p : params) p->zero_grad();
}

void Sgd::step() {
    for (Parameter* p : params_) {
        double* w = p->value.data();
        const double* g = p->grad.data();
        const std::int64_t n = p->value.size();
        for (std::int64_t i = 0; i < n; ++i) w[i] -= lr_ * g[i];
    }
}

Adam::Adam(std::vector<Parameter*> params, double lr, double weight_decay, double beta1,
           double beta2, double eps)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Parameter* p : params_) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Parameter* p = params_[k];
        double* w = p->value.data();
        const double* gr = p->grad.data();
        double* m = m_[k].data();
        double* v = v_[k].data();
        const std::int64_t n = p->value.size();
        for (std::int64_t i = 0; i < n; ++i) {
            const double g = gr[i] + wd_ * w[i];
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

}  // namespace crossview
