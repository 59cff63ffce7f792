#pragma once

// Measurements on simulated audio used by the simulator's property checks.

#include <sonact/audio/envelope.hpp>
#include <sonact/audio/spectrogram.hpp>

#include <cmath>
#include <vector>

namespace sonact::synth {

inline constexpr double burst_threshold = 0.05;

/// Upward crossings of `threshold` by the cross-channel maximum of the envelope.
inline std::size_t count_bursts(const audio::envelope& e, double threshold = burst_threshold) {
    std::size_t count = 0;
    bool above = false;
    for (std::size_t j = 0; j < e.frames; ++j) {
        double peak = 0.0;
        for (std::size_t c = 0; c < e.channels; ++c)
            peak = std::max(peak, e.at(c, j));
        if (peak > threshold && !above)
            ++count;
        above = peak > threshold;
    }
    return count;
}

inline std::size_t count_bursts(const audio::audio_clip& raw, double threshold = burst_threshold) {
    return count_bursts(audio::amplitude_envelope(audio::to_pipeline_rate(raw)), threshold);
}

inline std::vector<double> channel_energy(const audio::audio_clip& clip) {
    std::vector<double> e(clip.channels(), 0.0);
    for (std::size_t c = 0; c < clip.channels(); ++c)
        for (float s : clip.samples[c])
            e[c] += double(s) * s;
    return e;
}

/// RMS over every sample of every channel.
inline double total_rms(const audio::audio_clip& clip) {
    double sum = 0.0;
    for (double v : channel_energy(clip))
        sum += v;
    return std::sqrt(sum / static_cast<double>(clip.channels() * clip.length()));
}

} // namespace sonact::synth
