#pragma once

// RIFF/WAVE reader and writer for 32-bit IEEE float, interleaved channels.

#include <sonact/audio/clip.hpp>
#include <sonact/error.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace sonact::audio {

static_assert(std::endian::native == std::endian::little, "WAV I/O assumes a little-endian host");

namespace detail {

inline void put_u32(std::vector<char>& b, std::uint32_t v) {
    char tmp[4];
    std::memcpy(tmp, &v, 4);
    b.insert(b.end(), tmp, tmp + 4);
}
inline void put_u16(std::vector<char>& b, std::uint16_t v) {
    char tmp[2];
    std::memcpy(tmp, &v, 2);
    b.insert(b.end(), tmp, tmp + 2);
}
inline void put_tag(std::vector<char>& b, const char* tag) { b.insert(b.end(), tag, tag + 4); }

template <class T>
T get(const std::vector<char>& b, std::size_t off) {
    T v;
    std::memcpy(&v, b.data() + off, sizeof(T));
    return v;
}

} // namespace detail

inline constexpr std::uint16_t wave_format_ieee_float = 3;

inline std::vector<char> encode_wav(const audio_clip& clip) {
    clip.validate();
    const auto channels = static_cast<std::uint16_t>(clip.channels());
    const auto frames = clip.length();
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(frames * channels * 4);

    std::vector<char> b;
    b.reserve(44 + data_bytes);
    detail::put_tag(b, "RIFF");
    detail::put_u32(b, 36 + data_bytes);
    detail::put_tag(b, "WAVE");
    detail::put_tag(b, "fmt ");
    detail::put_u32(b, 16);
    detail::put_u16(b, wave_format_ieee_float);
    detail::put_u16(b, channels);
    detail::put_u32(b, static_cast<std::uint32_t>(clip.sample_rate));
    detail::put_u32(b, static_cast<std::uint32_t>(clip.sample_rate) * channels * 4);
    detail::put_u16(b, static_cast<std::uint16_t>(channels * 4));
    detail::put_u16(b, 32);
    detail::put_tag(b, "data");
    detail::put_u32(b, data_bytes);

    const std::size_t base = b.size();
    b.resize(base + data_bytes);
    char* out = b.data() + base;
    for (std::size_t i = 0; i < frames; ++i)
        for (std::size_t c = 0; c < channels; ++c, out += 4)
            std::memcpy(out, &clip.samples[c][i], 4);
    return b;
}

inline audio_clip decode_wav(const std::vector<char>& b, const std::string& what = "wav") {
    if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0)
        throw format_error(what + ": not a RIFF/WAVE file");

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    std::size_t off = 12;
    while (off + 8 <= b.size()) {
        const std::string tag(b.data() + off, 4);
        const auto size = detail::get<std::uint32_t>(b, off + 4);
        const std::size_t body = off + 8;
        if (body + size > b.size())
            throw format_error(what + ": truncated '" + tag + "' chunk");
        if (tag == "fmt ") {
            if (size < 16)
                throw format_error(what + ": fmt chunk too short");
            format = detail::get<std::uint16_t>(b, body);
            channels = detail::get<std::uint16_t>(b, body + 2);
            rate = detail::get<std::uint32_t>(b, body + 4);
            bits = detail::get<std::uint16_t>(b, body + 14);
            have_fmt = true;
        } else if (tag == "data") {
            if (!have_fmt)
                throw format_error(what + ": data chunk before fmt chunk");
            if (format != wave_format_ieee_float || bits != 32)
                throw format_error(what + ": only 32-bit IEEE float samples are supported (format "
                                   + std::to_string(format) + ", " + std::to_string(bits) + " bits)");
            if (channels == 0 || rate == 0)
                throw format_error(what + ": zero channels or sample rate");
            const std::size_t frames = size / (4u * channels);
            audio_clip clip = audio_clip::zeros(channels, frames, static_cast<int>(rate));
            const char* in = b.data() + body;
            for (std::size_t i = 0; i < frames; ++i)
                for (std::size_t c = 0; c < channels; ++c, in += 4)
                    std::memcpy(&clip.samples[c][i], in, 4);
            return clip;
        }
        off = body + size + (size & 1u);
    }
    throw format_error(what + ": no data chunk");
}

inline void write_wav(const std::filesystem::path& path, const audio_clip& clip) {
    const auto bytes = encode_wav(clip);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f)
        throw std::runtime_error("write failed: " + path.string());
}

inline std::vector<char> read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw format_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline audio_clip read_wav(const std::filesystem::path& path) {
    return decode_wav(read_file(path), path.string());
}

} // namespace sonact::audio
