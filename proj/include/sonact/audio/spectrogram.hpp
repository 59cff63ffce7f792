#pragma once

#include <sonact/audio/clip.hpp>
#include <sonact/audio/resample.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sonact::audio {

struct mel_config {
    std::size_t window_len = 400;
    std::size_t hop = 160;
    std::size_t n_mels = 16;
};

/// channels x n_mels x n_frames, row-major in that order.
struct mel_spectrogram {
    std::size_t channels = 0;
    std::size_t n_mels = 0;
    std::size_t n_frames = 0;
    std::size_t frame_hop = 0;
    int source_rate = 0;
    std::vector<float> values;

    static mel_spectrogram zeros(std::size_t c, std::size_t m, std::size_t f) {
        mel_spectrogram s;
        s.channels = c;
        s.n_mels = m;
        s.n_frames = f;
        s.values.assign(c * m * f, 0.0f);
        return s;
    }

    std::size_t plane() const noexcept { return n_mels * n_frames; }
    float& at(std::size_t c, std::size_t m, std::size_t t) { return values[(c * n_mels + m) * n_frames + t]; }
    float at(std::size_t c, std::size_t m, std::size_t t) const { return values[(c * n_mels + m) * n_frames + t]; }
    std::span<float> channel(std::size_t c) { return {values.data() + c * plane(), plane()}; }
    std::span<const float> channel(std::size_t c) const { return {values.data() + c * plane(), plane()}; }
    bool same_shape(const mel_spectrogram& o) const noexcept {
        return channels == o.channels && n_mels == o.n_mels && n_frames == o.n_frames;
    }
};

inline std::size_t stft_frame_count(std::size_t len, std::size_t window_len, std::size_t hop) {
    return 1 + (len - window_len) / hop;
}

/// Periodic Hann window.
inline std::vector<double> hann_window(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    return w;
}

/// Hann-windowed power spectrum, bins x frames, no centre padding.
/// The DFT length equals the window length.
inline Eigen::MatrixXd stft_power(std::span<const float> signal, std::size_t window_len, std::size_t hop) {
    if (window_len == 0 || hop == 0)
        throw std::invalid_argument("stft_power: window and hop must be positive");
    if (signal.size() < window_len)
        throw std::invalid_argument("stft_power: signal of " + std::to_string(signal.size())
                                    + " samples is shorter than the window (" + std::to_string(window_len) + ")");

    const std::size_t frames = stft_frame_count(signal.size(), window_len, hop);
    const std::size_t bins = window_len / 2 + 1;
    const auto w = hann_window(window_len);

    Eigen::MatrixXd framed(frames, window_len);
    for (std::size_t f = 0; f < frames; ++f)
        for (std::size_t n = 0; n < window_len; ++n)
            framed(f, n) = w[n] * signal[f * hop + n];

    // [cos | sin] basis; angle index reduced mod N keeps the table exact.
    Eigen::MatrixXd basis(window_len, 2 * bins);
    for (std::size_t n = 0; n < window_len; ++n)
        for (std::size_t k = 0; k < bins; ++k) {
            const double a = 2.0 * std::numbers::pi * static_cast<double>((n * k) % window_len)
                             / static_cast<double>(window_len);
            basis(n, k) = std::cos(a);
            basis(n, bins + k) = -std::sin(a);
        }

    const Eigen::MatrixXd spec = framed * basis;
    return (spec.leftCols(bins).array().square() + spec.rightCols(bins).array().square()).transpose();
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Centre frequencies (Hz) of the filters, plus the two outer edges: n_mels + 2 points.
inline std::vector<double> mel_edges_hz(std::size_t n_mels, double sample_rate) {
    const double top = hz_to_mel(sample_rate / 2.0);
    std::vector<double> edges(n_mels + 2);
    for (std::size_t i = 0; i < edges.size(); ++i)
        edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(n_mels + 1));
    return edges;
}

/// Triangular filters with unit peak on the HTK mel scale between 0 and Nyquist.
/// Rejects configurations where a filter covers no FFT bin.
inline Eigen::MatrixXd mel_filterbank(std::size_t n_mels, std::size_t n_fft_bins, double sample_rate) {
    if (n_mels == 0)
        throw std::invalid_argument("mel_filterbank: n_mels must be >= 1");
    if (!(sample_rate > 0.0))
        throw std::invalid_argument("mel_filterbank: sample rate must be positive");
    if (n_fft_bins < 2)
        throw std::invalid_argument("mel_filterbank: need at least 2 FFT bins");

    const auto edges = mel_edges_hz(n_mels, sample_rate);
    const double bin_hz = sample_rate / (2.0 * static_cast<double>(n_fft_bins - 1));
    Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(n_mels, n_fft_bins);
    for (std::size_t m = 0; m < n_mels; ++m) {
        const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
        bool any = false;
        for (std::size_t k = 0; k < n_fft_bins; ++k) {
            const double f = bin_hz * static_cast<double>(k);
            const double v = std::min((f - lo) / (mid - lo), (hi - f) / (hi - mid));
            if (v > 0.0) {
                fb(m, k) = v;
                any = true;
            }
        }
        if (!any)
            throw std::invalid_argument("mel_filterbank: filter " + std::to_string(m) + " of "
                                        + std::to_string(n_mels) + " covers no FFT bin; too many mel bands for "
                                        + std::to_string(n_fft_bins) + " bins");
    }
    return fb;
}

/// Per-channel mel power spectrogram; each microphone becomes one image channel.
inline mel_spectrogram mel_spectrogram_of(const audio_clip& clip, const mel_config& cfg = {}) {
    clip.validate();
    const std::size_t bins = cfg.window_len / 2 + 1;
    const Eigen::MatrixXd fb = mel_filterbank(cfg.n_mels, bins, clip.sample_rate);
    if (clip.length() < cfg.window_len)
        throw std::invalid_argument("mel_spectrogram: clip of " + std::to_string(clip.length())
                                    + " samples is shorter than the window (" + std::to_string(cfg.window_len) + ")");
    const std::size_t frames = stft_frame_count(clip.length(), cfg.window_len, cfg.hop);

    auto out = mel_spectrogram::zeros(clip.channels(), cfg.n_mels, frames);
    out.frame_hop = cfg.hop;
    out.source_rate = clip.sample_rate;
    for (std::size_t c = 0; c < clip.channels(); ++c) {
        const Eigen::MatrixXd mel = fb * stft_power(clip.samples[c], cfg.window_len, cfg.hop);
        for (std::size_t m = 0; m < cfg.n_mels; ++m)
            for (std::size_t t = 0; t < frames; ++t)
                out.at(c, m, t) = static_cast<float>(mel(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(t)));
    }
    return out;
}

/// Capture-rate clip to pipeline-rate clip: pad/clip to 4 s, then decimate by 4.
inline audio_clip to_pipeline_rate(const audio_clip& raw) {
    if (raw.sample_rate == pipeline_rate)
        return pad_clip(raw, samples_for(clip_seconds, pipeline_rate));
    const auto fixed = pad_clip(raw, samples_for(clip_seconds, raw.sample_rate));
    return resample_down(fixed, raw.sample_rate / pipeline_rate);
}

inline mel_spectrogram preprocess(const audio_clip& raw, const mel_config& cfg = {}) {
    return mel_spectrogram_of(to_pipeline_rate(raw), cfg);
}

} // namespace sonact::audio
