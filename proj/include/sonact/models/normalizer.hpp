#pragma once

// Action-space normalization fitted on the training split.

#include <sonact/error.hpp>
#include <sonact/synth/action_spec.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace sonact::models {

using synth::action_params;
using synth::action_spec;
using synth::task_id;

enum class norm_mode { minmax, none };

/// Tasks whose actions are used unnormalized.
inline bool skips_normalization(task_id t) { return t == task_id::rattle || t == task_id::tambourine; }

class action_normalizer {
public:
    action_normalizer() = default;

    static action_normalizer fit(const action_spec& spec, const std::vector<action_params>& train_actions) {
        if (train_actions.empty())
            throw config_error("fit_normalizer: no training actions");
        action_normalizer n;
        n.spec_ = spec;
        n.mode_ = skips_normalization(spec.task) ? norm_mode::none : norm_mode::minmax;
        const std::size_t d = spec.dims();
        n.lo_.assign(d, std::numeric_limits<double>::infinity());
        n.hi_.assign(d, -std::numeric_limits<double>::infinity());
        for (const auto& a : train_actions) {
            synth::check_action(spec, a);
            for (std::size_t k = 0; k < d; ++k) {
                n.lo_[k] = std::min(n.lo_[k], a[k]);
                n.hi_[k] = std::max(n.hi_[k], a[k]);
            }
        }
        if (n.mode_ == norm_mode::minmax)
            for (std::size_t k = 0; k < d; ++k)
                if (!(n.hi_[k] > n.lo_[k]))
                    throw config_error("fit_normalizer: dimension '" + spec.names[k]
                                       + "' is constant over the training actions");
        return n;
    }

    norm_mode mode() const noexcept { return mode_; }
    const action_spec& spec() const noexcept { return spec_; }
    std::size_t dims() const noexcept { return spec_.dims(); }
    const std::vector<double>& lo() const noexcept { return lo_; }
    const std::vector<double>& hi() const noexcept { return hi_; }

    action_params normalize(const action_params& a) const {
        if (mode_ == norm_mode::none)
            return a;
        action_params z(a.size());
        for (std::size_t k = 0; k < a.size(); ++k)
            z[k] = (a[k] - lo_[k]) / (hi_[k] - lo_[k]);
        return z;
    }

    action_params denormalize(const action_params& z) const {
        if (mode_ == norm_mode::none)
            return z;
        action_params a(z.size());
        for (std::size_t k = 0; k < z.size(); ++k)
            a[k] = z[k] * (hi_[k] - lo_[k]) + lo_[k];
        return a;
    }

    /// Model output in normalized space -> executable action: denormalized,
    /// clamped to the action bounds, integer dimensions rounded.
    action_params to_action(const action_params& z) const { return synth::clip_to_bounds(spec_, denormalize(z)); }

    nlohmann::json to_json() const {
        return {{"task", std::string(synth::to_string(spec_.task))},
                {"mode", mode_ == norm_mode::minmax ? "minmax" : "none"},
                {"lo", lo_},
                {"hi", hi_}};
    }

    static action_normalizer from_json(const nlohmann::json& j) {
        action_normalizer n;
        n.spec_ = synth::spec_for(synth::parse_task(j.at("task").get<std::string>()));
        n.mode_ = j.at("mode").get<std::string>() == "minmax" ? norm_mode::minmax : norm_mode::none;
        j.at("lo").get_to(n.lo_);
        j.at("hi").get_to(n.hi_);
        if (n.lo_.size() != n.spec_.dims() || n.hi_.size() != n.spec_.dims())
            throw format_error("normalizer: bounds do not match the task's action dimensions");
        return n;
    }

private:
    action_spec spec_;
    norm_mode mode_ = norm_mode::none;
    std::vector<double> lo_, hi_;
};

/// Squared L2 distance between two actions.
inline double squared_error(const action_params& a, const action_params& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k)
        s += (a[k] - b[k]) * (a[k] - b[k]);
    return s;
}

} // namespace sonact::models
