#pragma once

#include <sonact/audio/spectrogram.hpp>

#include <cmath>
#include <iostream>
#include <span>
#include <stdexcept>
#include <vector>

namespace sonact::audio {

inline constexpr double std_floor = 1e-6;

struct channel_stats {
    std::vector<double> mean;
    std::vector<double> std;
    /// Channels whose variance fell below the floor during fitting.
    std::vector<std::size_t> floored;

    std::size_t channels() const noexcept { return mean.size(); }
};

/// Per-channel mean and population std over every mel bin and frame of the collection.
inline channel_stats fit_channel_stats(std::span<const mel_spectrogram> specs) {
    if (specs.empty())
        throw std::invalid_argument("fit_channel_stats: empty collection");
    const std::size_t channels = specs.front().channels;
    std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
    double count = 0.0;
    for (const auto& s : specs) {
        if (!s.same_shape(specs.front()))
            throw std::invalid_argument("fit_channel_stats: spectrograms differ in shape");
        for (std::size_t c = 0; c < channels; ++c)
            for (float v : s.channel(c))
                sum[c] += v;
        count += static_cast<double>(s.plane());
    }
    channel_stats st;
    st.mean.resize(channels);
    st.std.resize(channels);
    for (std::size_t c = 0; c < channels; ++c)
        st.mean[c] = sum[c] / count;
    for (const auto& s : specs)
        for (std::size_t c = 0; c < channels; ++c)
            for (float v : s.channel(c)) {
                const double d = v - st.mean[c];
                sq[c] += d * d;
            }
    for (std::size_t c = 0; c < channels; ++c) {
        const double sd = std::sqrt(sq[c] / count);
        if (!(sd >= std_floor)) {
            st.std[c] = std_floor;
            st.floored.push_back(c);
            std::clog << "[normalize] channel " << c << " has degenerate variance; std floored at " << std_floor << '\n';
        } else {
            st.std[c] = sd;
        }
    }
    return st;
}

inline mel_spectrogram apply_normalization(const mel_spectrogram& spec, const channel_stats& st) {
    if (spec.channels != st.channels())
        throw std::invalid_argument("apply_normalization: spectrogram has " + std::to_string(spec.channels)
                                    + " channels, stats have " + std::to_string(st.channels()));
    mel_spectrogram out = spec;
    for (std::size_t c = 0; c < spec.channels; ++c)
        for (float& v : out.channel(c))
            v = static_cast<float>((v - st.mean[c]) / st.std[c]);
    return out;
}

inline mel_spectrogram invert_normalization(const mel_spectrogram& spec, const channel_stats& st) {
    mel_spectrogram out = spec;
    for (std::size_t c = 0; c < spec.channels; ++c)
        for (float& v : out.channel(c))
            v = static_cast<float>(v * st.std[c] + st.mean[c]);
    return out;
}

} // namespace sonact::audio
