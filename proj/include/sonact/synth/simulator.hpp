#pragma once

// Deterministic contact-sound simulator for the five dynamic tasks.
//
// Every sound is built from exponentially decaying bursts
//   burst(t0, E, lambda) = sqrt(E) * exp(-lambda (t - t0)) * w(t)
// with w white Gaussian (rattle, strikes, swatter) or a sum of four decaying
// sinusoids (tambourine). Each burst, each drag segment and each channel's
// noise floor draws from its own seed derived from the repeat seed, so the
// waveform of one component never depends on how many samples another used.
//
// Timing uses a "half period" T = k * (v / a + 0.8 / v), the time to reach the
// elbow velocity plus the travel time. k = 0.08 keeps ten reversals of the
// slowest setting inside the 4 s window.

#include <sonact/audio/clip.hpp>
#include <sonact/synth/action_spec.hpp>
#include <sonact/synth/seed.hpp>

#include <array>
#include <cmath>
#include <numbers>
#include <random>

namespace sonact::synth {

struct simulator_constants {
    static constexpr double strike_decay = 60.0; // 1/s
    static constexpr double click_decay = 120.0; // 1/s
    static constexpr double timing_scale = 0.08;
    static constexpr double rattle_energy = 0.1;
    static constexpr double impact_energy = 0.15;
    static constexpr double swatter_base_energy_share = 0.25;
    static constexpr double drag_amplitude = 0.02;
    static constexpr double drag_seconds_per_step = 0.05;
    static constexpr double soft_clip = 0.99;
    static constexpr double burst_floor = 1e-4; // bursts are truncated below this relative amplitude
    static constexpr std::uint64_t tambourine_seed = 0x7A3B0D1Eull;
};

inline constexpr double default_noise_level = 0.01;

namespace detail {

enum stream : std::uint64_t { noise_stream = 1000, drag_stream = 2000, burst_stream = 3000 };

struct canvas {
    audio::audio_clip clip;

    explicit canvas(std::size_t channels)
        : clip(audio::audio_clip::zeros(channels, audio::samples_for(audio::clip_seconds, audio::capture_rate),
                                        audio::capture_rate)) {}

    std::size_t length() const { return clip.length(); }
    double rate() const { return clip.sample_rate; }
    std::size_t index_of(double t) const { return static_cast<std::size_t>(std::max(0.0, std::round(t * rate()))); }
};

/// Noise burst shared by all channels, scaled per channel by sqrt(energy share).
template <std::size_t N>
void noise_burst(canvas& cv, double t0, double energy, double decay, const std::array<double, N>& shares,
                 std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> w(0.0, 1.0);
    const std::size_t start = cv.index_of(t0);
    const auto span = static_cast<std::size_t>(std::ceil(-std::log(simulator_constants::burst_floor) / decay * cv.rate()));
    const double amp = std::sqrt(energy);
    for (std::size_t n = 0; n < span && start + n < cv.length(); ++n) {
        const double v = amp * std::exp(-decay * static_cast<double>(n) / cv.rate()) * w(rng);
        for (std::size_t c = 0; c < N; ++c)
            cv.clip.samples[c][start + n] += static_cast<float>(std::sqrt(shares[c]) * v);
    }
}

/// Four decaying partials at the fixed jingle frequencies, random phases per burst.
inline void jingle_burst(canvas& cv, double t0, double energy, double decay, std::uint64_t seed) {
    static const std::array<double, 4> freqs = [] {
        std::mt19937_64 rng(simulator_constants::tambourine_seed);
        std::uniform_real_distribution<double> u(2000.0, 4500.0);
        std::array<double, 4> f{};
        for (auto& x : f)
            x = u(rng);
        return f;
    }();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::array<double, 4> ph{};
    for (auto& p : ph)
        p = phase(rng);

    const std::size_t start = cv.index_of(t0);
    const auto span = static_cast<std::size_t>(std::ceil(-std::log(simulator_constants::burst_floor) / decay * cv.rate()));
    const double amp = std::sqrt(energy / 2.0);
    for (std::size_t n = 0; n < span && start + n < cv.length(); ++n) {
        const double t = static_cast<double>(n) / cv.rate();
        double v = 0.0;
        for (std::size_t i = 0; i < 4; ++i)
            v += std::sin(2.0 * std::numbers::pi * freqs[i] * t + ph[i]);
        cv.clip.samples[0][start + n] += static_cast<float>(amp * std::exp(-decay * t) * v);
    }
}

template <std::size_t N>
void drag_noise(canvas& cv, double t_begin, double t_end, double amplitude, const std::array<double, N>& shares,
                std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> w(0.0, amplitude);
    const std::size_t a = cv.index_of(t_begin), b = std::min(cv.length(), cv.index_of(t_end));
    for (std::size_t n = a; n < b; ++n) {
        const double v = w(rng);
        for (std::size_t c = 0; c < N; ++c)
            cv.clip.samples[c][n] += static_cast<float>(std::sqrt(shares[c]) * v);
    }
}

inline double half_period(double velocity, double acceleration) {
    return simulator_constants::timing_scale * (velocity / acceleration + 0.8 / velocity);
}

inline void finish(canvas& cv, double noise_level, std::uint64_t seed) {
    for (std::size_t c = 0; c < cv.clip.channels(); ++c) {
        auto& ch = cv.clip.samples[c];
        if (noise_level > 0.0) {
            std::mt19937_64 rng(derive_seed(seed, noise_stream + c));
            std::normal_distribution<double> w(0.0, noise_level);
            for (auto& s : ch)
                s = static_cast<float>(s + w(rng));
        }
        constexpr double k = simulator_constants::soft_clip;
        for (auto& s : ch)
            s = static_cast<float>(k * std::tanh(s / k));
    }
}

} // namespace detail

/// Emits 4 s at 44.1 kHz. Deterministic in (action, repeat_seed, noise_level).
inline audio::audio_clip simulate(const action_spec& spec, const action_params& action, std::uint64_t repeat_seed,
                                  double noise_level = default_noise_level) {
    check_action(spec, action);
    if (!(noise_level >= 0.0))
        throw std::invalid_argument("simulate: noise level must be >= 0");
    using K = simulator_constants;
    using namespace detail;

    canvas cv(task_channels(spec.task));
    const auto burst_seed = [&](std::uint64_t k) { return derive_seed(repeat_seed, burst_stream + k); };

    switch (spec.task) {
    case task_id::rattle:
    case task_id::tambourine: {
        const double v = action[0], a = action[1];
        const auto reversals = static_cast<int>(std::lround(action[2])) * 2;
        const double period = half_period(v, a);
        const double energy = K::rattle_energy * v * v;
        for (int j = 1; j <= reversals; ++j) {
            if (spec.task == task_id::rattle)
                noise_burst<1>(cv, j * period, energy, K::click_decay, {1.0}, burst_seed(j));
            else
                jingle_burst(cv, j * period, energy, K::click_decay, burst_seed(j));
        }
        break;
    }
    case task_id::swatter: {
        const double vb = action[0], vs = action[1], a = action[2];
        const auto& lim = spec.limits[0];
        const double x = (vb - lim.lo) / (lim.hi - lim.lo);
        const double t = 0.2 + 0.75 * (vb / a + 0.8 / vb);
        const double energy = K::impact_energy * (vs * vs + K::swatter_base_energy_share * vb * vb);
        noise_burst<2>(cv, t, energy, K::strike_decay, {1.0 - x, x}, burst_seed(0));
        break;
    }
    case task_id::strike_h:
    case task_id::strike_v: {
        const double mix = 0.5 * action[0] + 0.3 * action[1] + 0.2 * action[2];
        const double energy = K::impact_energy * mix * mix;
        const bool horizontal = spec.task == task_id::strike_h;
        const double t = (horizontal ? 0.3 : 0.5) + 1.0 / action[3];
        if (horizontal) {
            const double drag = K::drag_seconds_per_step * std::abs(action[4] - action[5]);
            if (drag > 0.0)
                drag_noise<2>(cv, t - drag, t, K::drag_amplitude, {0.4, 0.6}, derive_seed(repeat_seed, drag_stream));
        }
        noise_burst<2>(cv, t, energy, K::strike_decay, {0.6, 0.4}, burst_seed(0));
        break;
    }
    }
    finish(cv, noise_level, repeat_seed);
    return std::move(cv.clip);
}

inline audio::audio_clip simulate(task_id task, const action_params& action, std::uint64_t repeat_seed,
                                  double noise_level = default_noise_level) {
    return simulate(spec_for(task), action, repeat_seed, noise_level);
}

} // namespace sonact::synth
