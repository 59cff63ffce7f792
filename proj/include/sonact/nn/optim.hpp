#pragma once

// LARS and Adam over a list of named parameters.

#include <sonact/error.hpp>
#include <sonact/nn/encoder.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace sonact::nn {

enum class optimizer_kind { lars, adam };

struct lars_hparams {
    double lr = 0.2;
    double weight_decay = 1.5e-6;
    double momentum = 0.9;
    double trust = 0.001;
    double eps = 1e-8;
};

struct adam_hparams {
    double lr = 1e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Optimizer with per-parameter moment buffers. Parameters are held by
/// handle, so updates land in the module that owns them.
template <class T>
class optimizer {
public:
    static optimizer lars(std::vector<named_param<T>> params, lars_hparams h = {}) {
        optimizer o(optimizer_kind::lars, std::move(params));
        o.lars_ = h;
        return o;
    }

    static optimizer adam(std::vector<named_param<T>> params, adam_hparams h = {}) {
        optimizer o(optimizer_kind::adam, std::move(params));
        o.adam_ = h;
        return o;
    }

    optimizer_kind kind() const { return kind_; }
    long steps() const { return t_; }
    const std::vector<named_param<T>>& params() const { return params_; }
    const std::vector<std::vector<double>>& first_moment() const { return m_; }
    const std::vector<std::vector<double>>& second_moment() const { return v_; }
    lars_hparams& lars_config() { return lars_; }
    adam_hparams& adam_config() { return adam_; }

    void zero_grad() {
        for (auto& p : params_)
            p.value.zero_grad();
    }

    /// Applies one update from the accumulated gradients. A non-finite
    /// gradient aborts the whole step before any parameter changes.
    void step() {
        for (const auto& p : params_)
            if (p.value.has_grad())
                for (T g : p.value.grad())
                    if (!std::isfinite(static_cast<double>(g)))
                        throw numeric_error("optimizer: non-finite gradient in parameter '" + p.name + "' at step "
                                            + std::to_string(t_ + 1));
        ++t_;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (kind_ == optimizer_kind::lars)
                lars_update(i);
            else
                adam_update(i);
        }
    }

private:
    optimizer(optimizer_kind k, std::vector<named_param<T>> params) : kind_(k), params_(std::move(params)) {
        for (const auto& p : params_) {
            m_.emplace_back(p.value.numel(), 0.0);
            if (k == optimizer_kind::adam)
                v_.emplace_back(p.value.numel(), 0.0);
        }
    }

    void lars_update(std::size_t i) {
        auto& p = params_[i];
        auto w = p.value.data();
        const auto g = p.value.grad_or_zero();
        const double wd = p.exempt ? 0.0 : lars_.weight_decay;

        std::vector<double> gp(w.size());
        double wn = 0.0, gn = 0.0;
        for (std::size_t k = 0; k < w.size(); ++k) {
            gp[k] = double(g[k]) + wd * w[k];
            wn += double(w[k]) * w[k];
            gn += gp[k] * gp[k];
        }
        wn = std::sqrt(wn);
        gn = std::sqrt(gn);
        double local = 1.0;
        if (!p.exempt && wn > 0.0 && gn > 0.0)
            local = lars_.trust * wn / (gn + lars_.eps);

        auto& buf = m_[i];
        for (std::size_t k = 0; k < w.size(); ++k) {
            buf[k] = lars_.momentum * buf[k] + lars_.lr * local * gp[k];
            w[k] = static_cast<T>(w[k] - buf[k]);
        }
    }

    void adam_update(std::size_t i) {
        auto& p = params_[i];
        auto w = p.value.data();
        const auto g = p.value.grad_or_zero();
        const double wd = adam_.weight_decay;
        const double c1 = 1.0 - std::pow(adam_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(adam_.beta2, static_cast<double>(t_));
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t k = 0; k < w.size(); ++k) {
            const double gk = double(g[k]) + wd * w[k];
            m[k] = adam_.beta1 * m[k] + (1 - adam_.beta1) * gk;
            v[k] = adam_.beta2 * v[k] + (1 - adam_.beta2) * gk * gk;
            const double mh = m[k] / c1, vh = v[k] / c2;
            w[k] = static_cast<T>(w[k] - adam_.lr * mh / (std::sqrt(vh) + adam_.eps));
        }
    }

    optimizer_kind kind_;
    std::vector<named_param<T>> params_;
    std::vector<std::vector<double>> m_, v_;
    lars_hparams lars_;
    adam_hparams adam_;
    long t_ = 0;
};

} // namespace sonact::nn
