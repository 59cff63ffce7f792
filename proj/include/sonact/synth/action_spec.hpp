#pragma once

#include <sonact/error.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sonact::synth {

enum class task_id { rattle, tambourine, swatter, strike_h, strike_v };

inline constexpr std::array all_tasks{task_id::rattle, task_id::tambourine, task_id::swatter, task_id::strike_h,
                                      task_id::strike_v};

inline std::string_view to_string(task_id t) {
    switch (t) {
    case task_id::rattle: return "rattle";
    case task_id::tambourine: return "tambourine";
    case task_id::swatter: return "swatter";
    case task_id::strike_h: return "strike_h";
    case task_id::strike_v: return "strike_v";
    }
    return "?";
}

inline task_id parse_task(std::string_view s) {
    for (auto t : all_tasks)
        if (to_string(t) == s)
            return t;
    throw config_error("unknown task '" + std::string(s) + "'");
}

struct bounds {
    double lo = 0.0;
    double hi = 1.0;
};

struct action_spec {
    task_id task = task_id::rattle;
    std::vector<std::string> names;
    std::vector<bounds> limits;
    std::vector<bool> integer;

    std::size_t dims() const noexcept { return names.size(); }

    bool is_velocity(std::size_t d) const { return names[d].find("velocity") != std::string::npos; }

    void validate() const {
        if (names.size() != limits.size() || names.size() != integer.size())
            throw std::invalid_argument("action_spec: inconsistent dimension tables");
        for (std::size_t d = 0; d < dims(); ++d)
            if (!(limits[d].lo < limits[d].hi))
                throw std::invalid_argument("action_spec: empty range for '" + names[d] + "'");
    }
};

/// Channel count of the contact-microphone setup for each task.
inline std::size_t task_channels(task_id t) {
    return (t == task_id::rattle || t == task_id::tambourine) ? 1 : 2;
}

inline action_spec spec_for(task_id t) {
    action_spec s;
    s.task = t;
    auto add = [&](std::string name, double lo, double hi, bool integral = false) {
        s.names.push_back(std::move(name));
        s.limits.push_back({lo, hi});
        s.integer.push_back(integral);
    };
    switch (t) {
    case task_id::rattle:
    case task_id::tambourine:
        add("elbow_velocity", 0.5, 2.0);
        add("elbow_acceleration", 0.5, 2.0);
        add("oscillations", 1, 5, true);
        break;
    case task_id::swatter:
        add("base_velocity", 0.5, 2.0);
        add("shoulder_velocity", 0.5, 2.0);
        add("acceleration", 0.5, 2.0);
        break;
    case task_id::strike_h:
        add("shoulder_velocity", 0.5, 2.0);
        add("elbow_velocity", 0.5, 2.0);
        add("wrist_velocity", 0.5, 2.0);
        add("acceleration", 0.5, 2.0);
        add("shoulder_steps", 1, 10, true);
        add("elbow_steps", 1, 10, true);
        add("wrist_steps", 1, 10, true);
        break;
    case task_id::strike_v:
        add("shoulder_velocity", 0.5, 2.0);
        add("elbow_velocity", 0.5, 2.0);
        add("wrist_velocity", 0.5, 2.0);
        add("acceleration", 0.5, 2.0);
        break;
    }
    return s;
}

using action_params = std::vector<double>;

inline void check_action(const action_spec& spec, const action_params& a) {
    if (a.size() != spec.dims())
        throw std::invalid_argument("action has " + std::to_string(a.size()) + " dims, task "
                                    + std::string(to_string(spec.task)) + " expects " + std::to_string(spec.dims()));
    for (std::size_t d = 0; d < a.size(); ++d) {
        if (!(a[d] >= spec.limits[d].lo && a[d] <= spec.limits[d].hi))
            throw std::invalid_argument("action dim '" + spec.names[d] + "' = " + std::to_string(a[d])
                                        + " outside [" + std::to_string(spec.limits[d].lo) + ", "
                                        + std::to_string(spec.limits[d].hi) + "]");
        if (spec.integer[d] && a[d] != std::round(a[d]))
            throw std::invalid_argument("action dim '" + spec.names[d] + "' must be an integer");
    }
}

/// Uniform over each range; integer dimensions uniform over their integer range.
inline action_params sample_action(const action_spec& spec, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    action_params a(spec.dims());
    for (std::size_t d = 0; d < spec.dims(); ++d) {
        const auto& b = spec.limits[d];
        if (spec.integer[d]) {
            std::uniform_int_distribution<long> u(std::lround(b.lo), std::lround(b.hi));
            a[d] = static_cast<double>(u(rng));
        } else {
            std::uniform_real_distribution<double> u(b.lo, b.hi);
            a[d] = u(rng);
        }
    }
    return a;
}

/// Clamps to bounds and rounds integer dimensions.
inline action_params clip_to_bounds(const action_spec& spec, action_params a) {
    for (std::size_t d = 0; d < spec.dims(); ++d) {
        a[d] = std::clamp(a[d], spec.limits[d].lo, spec.limits[d].hi);
        if (spec.integer[d])
            a[d] = std::round(a[d]);
    }
    return a;
}

inline action_params midpoint(const action_spec& spec) {
    action_params a(spec.dims());
    for (std::size_t d = 0; d < spec.dims(); ++d) {
        a[d] = 0.5 * (spec.limits[d].lo + spec.limits[d].hi);
        if (spec.integer[d])
            a[d] = std::round(a[d]);
    }
    return a;
}

} // namespace sonact::synth
