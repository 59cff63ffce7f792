#pragma once

// Mel features of a whole dataset, cached beside its manifest.

#include <sonact/audio/spectrogram.hpp>
#include <sonact/error.hpp>
#include <sonact/synth/dataset.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace sonact::harness {

inline constexpr char feature_magic[4] = {'S', 'M', 'E', 'L'};
inline constexpr std::uint32_t feature_version = 1;

namespace detail {

template <class T>
void put_raw(std::ofstream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
bool get_raw(std::ifstream& f, T& v) {
    return static_cast<bool>(f.read(reinterpret_cast<char*>(&v), sizeof v));
}

inline std::string feature_file_name(const audio::mel_config& cfg) {
    return "features_m" + std::to_string(cfg.n_mels) + "_w" + std::to_string(cfg.window_len) + "_h"
           + std::to_string(cfg.hop) + ".bin";
}

} // namespace detail

inline void write_features(const std::filesystem::path& path, const std::vector<audio::mel_spectrogram>& specs) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f)
            throw std::runtime_error("cannot write " + tmp.string());
        f.write(feature_magic, 4);
        detail::put_raw(f, feature_version);
        detail::put_raw(f, static_cast<std::uint64_t>(specs.size()));
        for (const auto& s : specs) {
            for (std::uint64_t v : {std::uint64_t(s.channels), std::uint64_t(s.n_mels), std::uint64_t(s.n_frames),
                                    std::uint64_t(s.frame_hop), std::uint64_t(s.source_rate)})
                detail::put_raw(f, v);
            f.write(reinterpret_cast<const char*>(s.values.data()),
                    static_cast<std::streamsize>(s.values.size() * sizeof(float)));
        }
        if (!f)
            throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

/// Reads a feature file; throws format_error on any inconsistency.
inline std::vector<audio::mel_spectrogram> read_features(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw format_error("cannot open feature cache " + path.string());
    char magic[4];
    std::uint32_t version = 0;
    std::uint64_t count = 0;
    if (!f.read(magic, 4) || std::memcmp(magic, feature_magic, 4) != 0 || !detail::get_raw(f, version)
        || version != feature_version || !detail::get_raw(f, count))
        throw format_error("feature cache " + path.string() + ": bad header");
    std::vector<audio::mel_spectrogram> out;
    out.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::uint64_t c, m, t, hop, rate;
        if (!detail::get_raw(f, c) || !detail::get_raw(f, m) || !detail::get_raw(f, t) || !detail::get_raw(f, hop)
            || !detail::get_raw(f, rate) || c * m * t > (1ULL << 32))
            throw format_error("feature cache " + path.string() + ": truncated entry " + std::to_string(i));
        auto s = audio::mel_spectrogram::zeros(c, m, t);
        s.frame_hop = hop;
        s.source_rate = static_cast<int>(rate);
        if (!f.read(reinterpret_cast<char*>(s.values.data()), static_cast<std::streamsize>(s.values.size() * 4)))
            throw format_error("feature cache " + path.string() + ": truncated entry " + std::to_string(i));
        out.push_back(std::move(s));
    }
    if (f.peek() != std::char_traits<char>::eof())
        throw format_error("feature cache " + path.string() + ": trailing bytes");
    return out;
}

/// Features of every record, in manifest order. Computed once and cached in
/// the dataset directory; a damaged or stale cache is recomputed.
inline std::vector<audio::mel_spectrogram> dataset_features(const synth::dataset& ds,
                                                            const audio::mel_config& cfg = {}) {
    const auto path = ds.root() / detail::feature_file_name(cfg);
    if (std::filesystem::exists(path)) {
        try {
            auto specs = read_features(path);
            if (specs.size() == ds.size())
                return specs;
        } catch (const format_error&) {
        }
    }
    std::vector<audio::mel_spectrogram> specs;
    specs.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i)
        specs.push_back(audio::preprocess(ds.load_clip(i), cfg));
    write_features(path, specs);
    return specs;
}

} // namespace sonact::harness
