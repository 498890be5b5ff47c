#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "scalevar/tensor.hpp"

namespace scalevar {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

namespace adam {

struct Moments {
    std::vector<double> m;
    std::vector<double> v;
};

// One decoupled-weight-decay Adam update on a raw parameter vector. The
// step counter `t` must already be incremented for this step (t >= 1).
inline void update(std::vector<double>& p, const std::vector<double>& g, Moments& st,
                   const AdamConfig& cfg, std::uint64_t t) {
    if (st.m.empty()) {
        st.m.assign(p.size(), 0.0);
        st.v.assign(p.size(), 0.0);
    }
    if (g.size() != p.size() || st.m.size() != p.size() || st.v.size() != p.size()) {
        throw std::invalid_argument("adam: moment/gradient shape does not match parameter");
    }
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < p.size(); ++i) {
        st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g[i];
        st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        p[i] -= cfg.lr * cfg.weight_decay * p[i];
        p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

}  // namespace adam

// Optimizer over a fixed, ordered parameter list. Decay is decoupled and
// applies to every parameter each step, including those with zero gradient.
class AdamW {
public:
    explicit AdamW(AdamConfig cfg) : cfg_(cfg) {}

    const AdamConfig& config() const { return cfg_; }
    std::uint64_t step_count() const { return step_; }

    // Applies one update. Parameters without a computed gradient this step
    // are treated as zero-gradient (decay still applies).
    void step(std::vector<Tensor*>& params) {
        if (state_.empty()) state_.resize(params.size());
        if (state_.size() != params.size()) {
            throw std::invalid_argument("adam: parameter list size changed between steps");
        }
        ++step_;
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i];
            if (p.has_grad()) {
                adam::update(p.values_mut(), p.grad(), state_[i], cfg_, step_);
            } else {
                zero_grad_buffer_.assign(p.size(), 0.0);
                adam::update(p.values_mut(), zero_grad_buffer_, state_[i], cfg_, step_);
            }
        }
    }

private:
    AdamConfig cfg_;
    std::vector<adam::Moments> state_;
    std::vector<double> zero_grad_buffer_;
    std::uint64_t step_ = 0;
};

}  // namespace scalevar
