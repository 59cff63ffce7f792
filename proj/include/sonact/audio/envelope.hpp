#pragma once

#include <sonact/audio/clip.hpp>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace sonact::audio {

inline constexpr std::size_t envelope_frame = 256;

/// channels x frames; each value is max |s| over a non-overlapping frame.
struct envelope {
    std::size_t channels = 0;
    std::size_t frames = 0;
    std::size_t frame_len = 0;
    std::vector<double> values;

    double at(std::size_t c, std::size_t j) const { return values[c * frames + j]; }
    double& at(std::size_t c, std::size_t j) { return values[c * frames + j]; }
};

inline envelope amplitude_envelope(const audio_clip& clip, std::size_t frame_len = envelope_frame) {
    clip.validate();
    if (frame_len == 0)
        throw std::invalid_argument("amplitude_envelope: frame length must be >= 1");
    if (frame_len > clip.length())
        throw std::invalid_argument("amplitude_envelope: frame length " + std::to_string(frame_len)
                                    + " exceeds clip length " + std::to_string(clip.length()));
    envelope e;
    e.channels = clip.channels();
    e.frames = clip.length() / frame_len;
    e.frame_len = frame_len;
    e.values.assign(e.channels * e.frames, 0.0);
    for (std::size_t c = 0; c < e.channels; ++c)
        for (std::size_t j = 0; j < e.frames; ++j) {
            float peak = 0.0f;
            for (std::size_t n = j * frame_len; n < (j + 1) * frame_len; ++n)
                peak = std::max(peak, std::abs(clip.samples[c][n]));
            e.at(c, j) = peak;
        }
    return e;
}

} // namespace sonact::audio
