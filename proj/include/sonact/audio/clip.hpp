#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace sonact::audio {

inline constexpr int capture_rate = 44100;
inline constexpr int pipeline_rate = 11025;
inline constexpr int decimation_factor = capture_rate / pipeline_rate;
inline constexpr double clip_seconds = 4.0;

/// Multichannel waveform. Channels are stored planar, one vector each.
struct audio_clip {
    std::vector<std::vector<float>> samples;
    int sample_rate = capture_rate;

    std::size_t channels() const noexcept { return samples.size(); }
    std::size_t length() const noexcept { return samples.empty() ? 0 : samples.front().size(); }

    static audio_clip zeros(std::size_t channels, std::size_t length, int rate) {
        audio_clip c;
        c.sample_rate = rate;
        c.samples.assign(channels, std::vector<float>(length, 0.0f));
        return c;
    }

    void validate() const {
        if (samples.empty())
            throw std::invalid_argument("audio_clip: no channels");
        if (sample_rate <= 0)
            throw std::invalid_argument("audio_clip: sample rate must be positive");
        for (const auto& ch : samples)
            if (ch.size() != samples.front().size())
                throw std::invalid_argument("audio_clip: channels have unequal length");
    }
};

inline std::size_t samples_for(double seconds, int rate) {
    return static_cast<std::size_t>(seconds * rate + 0.5);
}

/// Truncates or zero-pads every channel at the end to `target_len` samples.
inline audio_clip pad_clip(const audio_clip& clip, std::size_t target_len) {
    if (clip.channels() == 0)
        throw std::invalid_argument("pad_clip: clip has no channels");
    if (target_len == 0)
        throw std::invalid_argument("pad_clip: target length must be positive");
    audio_clip out;
    out.sample_rate = clip.sample_rate;
    out.samples.reserve(clip.channels());
    for (const auto& ch : clip.samples) {
        std::vector<float> v(target_len, 0.0f);
        std::copy_n(ch.begin(), std::min(ch.size(), target_len), v.begin());
        out.samples.push_back(std::move(v));
    }
    return out;
}

/// Copies channel 0 into every channel until the clip has `channels` channels.
inline audio_clip duplicate_to(const audio_clip& clip, std::size_t channels) {
    if (clip.channels() == channels)
        return clip;
    if (clip.channels() != 1)
        throw std::invalid_argument("duplicate_to: only mono clips can be widened, got "
                                    + std::to_string(clip.channels()) + " channels");
    audio_clip out = clip;
    out.samples.assign(channels, clip.samples.front());
    return out;
}

} // namespace sonact::audio
