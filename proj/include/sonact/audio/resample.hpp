#pragma once

#include <sonact/audio/clip.hpp>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace sonact::audio {

inline constexpr std::size_t fir_taps = 127;
/// Cutoff as a fraction of the *output* sample rate (0.9 of the output Nyquist).
inline constexpr double fir_cutoff_of_output_rate = 0.45;

/// Linear-phase windowed-sinc low-pass (Hamming), unity DC gain.
/// `cutoff` is in cycles per input sample, in (0, 0.5].
inline std::vector<double> lowpass_taps(std::size_t taps, double cutoff) {
    if (taps == 0 || taps % 2 == 0)
        throw std::invalid_argument("lowpass_taps: tap count must be odd and positive");
    if (!(cutoff > 0.0 && cutoff <= 0.5))
        throw std::invalid_argument("lowpass_taps: cutoff must lie in (0, 0.5]");
    const double mid = static_cast<double>(taps - 1) / 2.0;
    std::vector<double> h(taps);
    double sum = 0.0;
    for (std::size_t n = 0; n < taps; ++n) {
        const double t = static_cast<double>(n) - mid;
        const double sinc = t == 0.0 ? 2.0 * cutoff
                                     : std::sin(2.0 * std::numbers::pi * cutoff * t) / (std::numbers::pi * t);
        const double window = taps == 1 ? 1.0
            : 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(taps - 1));
        h[n] = sinc * window;
        sum += h[n];
    }
    for (auto& v : h)
        v /= sum;
    return h;
}

/// Anti-aliased integer decimation. Only the kept output samples are computed
/// (polyphase-equivalent); the filter is centred so there is no group delay.
/// Trailing input samples that do not fill a whole output period are dropped.
inline audio_clip resample_down(const audio_clip& clip, int factor) {
    if (factor <= 0)
        throw std::invalid_argument("resample_down: factor must be >= 1");
    clip.validate();
    if (clip.sample_rate % factor != 0)
        throw std::invalid_argument("resample_down: sample rate " + std::to_string(clip.sample_rate)
                                    + " not divisible by factor " + std::to_string(factor));

    const auto h = lowpass_taps(fir_taps, fir_cutoff_of_output_rate / factor);
    const auto half = static_cast<std::ptrdiff_t>(fir_taps / 2);
    const std::size_t in_len = clip.length();
    const std::size_t out_len = in_len / static_cast<std::size_t>(factor);

    audio_clip out = audio_clip::zeros(clip.channels(), out_len, clip.sample_rate / factor);
    for (std::size_t c = 0; c < clip.channels(); ++c) {
        const auto& x = clip.samples[c];
        auto& y = out.samples[c];
        for (std::size_t k = 0; k < out_len; ++k) {
            const auto centre = static_cast<std::ptrdiff_t>(k) * factor;
            const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, centre - half);
            const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(in_len) - 1, centre + half);
            const double* hp = h.data() + (lo - centre + half);
            const float* xp = x.data() + lo;
            const auto n = static_cast<std::size_t>(hi - lo + 1);
            double acc[4] = {0.0, 0.0, 0.0, 0.0};
            std::size_t i = 0;
            for (; i + 4 <= n; i += 4)
                for (std::size_t l = 0; l < 4; ++l)
                    acc[l] += hp[i + l] * xp[i + l];
            for (; i < n; ++i)
                acc[0] += hp[i] * xp[i];
            y[k] = static_cast<float>((acc[0] + acc[1]) + (acc[2] + acc[3]));
        }
    }
    return out;
}

} // namespace sonact::audio
