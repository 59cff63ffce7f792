#pragma once

// Spectrogram augmentations: random resize-crop and mixup.

#include <sonact/audio/spectrogram.hpp>
#include <sonact/error.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace sonact::ssl {

using audio::mel_spectrogram;

struct scale_range {
    double lo;
    double hi;
};

struct augmentation_config {
    scale_range crop_scale_time{0.6, 1.0};
    scale_range crop_scale_mel{0.6, 1.0};
    bool use_mixup = false;
    scale_range mixup_alpha_range{0.5, 1.0};

    void validate() const {
        auto check = [](const scale_range& r, const char* name, double lo_min) {
            if (!(r.lo > lo_min && r.lo <= r.hi && r.hi <= 1.0))
                throw config_error(std::string("augmentation: ") + name + " must satisfy " + std::to_string(lo_min)
                                   + " < lo <= hi <= 1, got [" + std::to_string(r.lo) + ", "
                                   + std::to_string(r.hi) + "]");
        };
        check(crop_scale_time, "crop_scale_time", 0.0);
        check(crop_scale_mel, "crop_scale_mel", 0.0);
        if (!(mixup_alpha_range.lo >= 0.0 && mixup_alpha_range.lo <= mixup_alpha_range.hi
              && mixup_alpha_range.hi <= 1.0))
            throw config_error("augmentation: mixup_alpha_range must lie within [0, 1]");
    }
};

/// A crop window in fractional bin coordinates.
struct crop_window {
    double mel_start, mel_len;
    double time_start, time_len;
};

namespace detail {

// Half-pixel mapping from output index to source coordinate inside the window,
// clamped to the valid sample range. A full window maps index i to i exactly.
inline void bilinear_taps(std::size_t out_n, double start, double len, std::size_t src_n, std::vector<std::size_t>& i0,
                          std::vector<float>& frac) {
    i0.resize(out_n);
    frac.resize(out_n);
    const double scale = len / static_cast<double>(out_n);
    const double hi = static_cast<double>(src_n - 1);
    for (std::size_t i = 0; i < out_n; ++i) {
        double x = start + (static_cast<double>(i) + 0.5) * scale - 0.5;
        x = std::clamp(x, 0.0, hi);
        const double f = std::floor(x);
        i0[i] = std::min(static_cast<std::size_t>(f), src_n - 1);
        frac[i] = static_cast<float>(x - f);
    }
}

} // namespace detail

/// Bilinearly resamples the window back to the full spectrogram shape. Every
/// channel uses the same window.
inline mel_spectrogram crop_resize(const mel_spectrogram& s, const crop_window& w) {
    std::vector<std::size_t> m0, t0;
    std::vector<float> mf, tf;
    detail::bilinear_taps(s.n_mels, w.mel_start, w.mel_len, s.n_mels, m0, mf);
    detail::bilinear_taps(s.n_frames, w.time_start, w.time_len, s.n_frames, t0, tf);
    mel_spectrogram out = s;
    for (std::size_t c = 0; c < s.channels; ++c)
        for (std::size_t m = 0; m < s.n_mels; ++m) {
            const std::size_t ma = m0[m], mb = std::min(ma + 1, s.n_mels - 1);
            for (std::size_t t = 0; t < s.n_frames; ++t) {
                const std::size_t ta = t0[t], tb = std::min(ta + 1, s.n_frames - 1);
                const float top = s.at(c, ma, ta) + tf[t] * (s.at(c, ma, tb) - s.at(c, ma, ta));
                const float bot = s.at(c, mb, ta) + tf[t] * (s.at(c, mb, tb) - s.at(c, mb, ta));
                out.at(c, m, t) = top + mf[m] * (bot - top);
            }
        }
    return out;
}

template <class Rng>
crop_window sample_crop(const mel_spectrogram& s, const augmentation_config& cfg, Rng& rng) {
    std::uniform_real_distribution<double> ut(cfg.crop_scale_time.lo, cfg.crop_scale_time.hi);
    std::uniform_real_distribution<double> uf(cfg.crop_scale_mel.lo, cfg.crop_scale_mel.hi);
    std::uniform_real_distribution<double> pos(0.0, 1.0);
    crop_window w;
    w.time_len = ut(rng) * static_cast<double>(s.n_frames);
    w.mel_len = uf(rng) * static_cast<double>(s.n_mels);
    w.time_start = pos(rng) * (static_cast<double>(s.n_frames) - w.time_len);
    w.mel_start = pos(rng) * (static_cast<double>(s.n_mels) - w.mel_len);
    return w;
}

template <class Rng>
mel_spectrogram random_resize_crop(const mel_spectrogram& s, const augmentation_config& cfg, Rng& rng) {
    return crop_resize(s, sample_crop(s, cfg, rng));
}

/// alpha * a + (1 - alpha) * b
inline mel_spectrogram mixup(const mel_spectrogram& a, const mel_spectrogram& b, double alpha) {
    if (!a.same_shape(b))
        throw std::invalid_argument("mixup: spectrogram shapes differ (" + std::to_string(a.channels) + "x"
                                    + std::to_string(a.n_mels) + "x" + std::to_string(a.n_frames) + " vs "
                                    + std::to_string(b.channels) + "x" + std::to_string(b.n_mels) + "x"
                                    + std::to_string(b.n_frames) + ")");
    mel_spectrogram out = a;
    const float al = static_cast<float>(alpha), be = static_cast<float>(1.0 - alpha);
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] = al * a.values[i] + be * b.values[i];
    return out;
}

template <class Rng>
mel_spectrogram mixup(const mel_spectrogram& a, const mel_spectrogram& b, const augmentation_config& cfg, Rng& rng) {
    std::uniform_real_distribution<double> d(cfg.mixup_alpha_range.lo, cfg.mixup_alpha_range.hi);
    return mixup(a, b, d(rng));
}

} // namespace sonact::ssl
