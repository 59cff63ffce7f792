#pragma once

// Reference methods: a random train action and the nearest train action.

#include <sonact/error.hpp>
#include <sonact/models/normalizer.hpp>
#include <sonact/synth/seed.hpp>

#include <random>
#include <vector>

namespace sonact::models {

struct labeled_action {
    std::size_t behavior_id = 0;
    action_params action;
};

/// One uniformly chosen train action. Depends only on the seed.
inline const labeled_action& random_baseline(const std::vector<labeled_action>& train, std::uint64_t seed) {
    if (train.empty())
        throw config_error("random_baseline: empty training split");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
    return train[pick(rng)];
}

/// Squared error of the random baseline averaged over all of its choices.
inline double random_expected_error(const std::vector<labeled_action>& train, const action_params& truth) {
    if (train.empty())
        throw config_error("random_baseline: empty training split");
    double s = 0.0;
    for (const auto& t : train)
        s += squared_error(t.action, truth);
    return s / static_cast<double>(train.size());
}

/// The train action nearest (L2) to the ground truth; ties go to the lowest behaviour id.
inline const labeled_action& oracle_baseline(const action_params& truth, const std::vector<labeled_action>& train) {
    if (train.empty())
        throw config_error("oracle_baseline: empty training split");
    const labeled_action* best = nullptr;
    double best_d = 0.0;
    for (const auto& t : train) {
        const double d = squared_error(t.action, truth);
        if (!best || d < best_d || (d == best_d && t.behavior_id < best->behavior_id)) {
            best = &t;
            best_d = d;
        }
    }
    return *best;
}

} // namespace sonact::models
