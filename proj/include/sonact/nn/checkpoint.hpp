#pragma once

// Binary checkpoint: "ARLC" | u32 version | u64 header length | JSON header |
// little-endian float32 blobs. The header maps each tensor name to its dtype,
// shape and byte offset from the start of the blob section.

#include <sonact/error.hpp>
#include <sonact/nn/encoder.hpp>

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

namespace sonact::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char checkpoint_magic[4] = {'A', 'R', 'L', 'C'};
inline constexpr std::uint32_t checkpoint_version = 1;

struct stored_tensor {
    shape_t shape;
    std::vector<float> values;
};

struct checkpoint {
    std::string kind;
    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, stored_tensor> tensors;

    void put(const std::string& name, shape_t shape, std::span<const float> values) {
        tensors[name] = {std::move(shape), {values.begin(), values.end()}};
    }

    void put(const std::string& name, std::span<const double> values) {
        std::vector<float> v(values.begin(), values.end());
        tensors[name] = {{values.size()}, std::move(v)};
    }

    /// Tensor by name; the shape must match exactly.
    const stored_tensor& get(const std::string& name, const shape_t& expect) const {
        auto it = tensors.find(name);
        if (it == tensors.end())
            throw format_error("checkpoint: missing tensor '" + name + "'");
        if (it->second.shape != expect)
            throw format_error("checkpoint: tensor '" + name + "' has shape " + shape_str(it->second.shape)
                               + ", expected " + shape_str(expect));
        return it->second;
    }
};

inline std::vector<char> encode_checkpoint(const checkpoint& ck) {
    nlohmann::json header;
    header["kind"] = ck.kind;
    header["meta"] = ck.meta;
    nlohmann::json table = nlohmann::json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ck.tensors) {
        if (numel_of(t.shape) != t.values.size())
            throw std::invalid_argument("checkpoint: tensor '" + name + "' has " + std::to_string(t.values.size())
                                        + " values for shape " + shape_str(t.shape));
        table[name] = {{"dtype", "float32"}, {"shape", t.shape}, {"offset", offset}};
        offset += t.values.size() * sizeof(float);
    }
    header["tensors"] = table;
    const std::string h = header.dump();

    std::vector<char> out;
    out.reserve(16 + h.size() + offset);
    auto put = [&out](const void* p, std::size_t n) {
        const char* c = static_cast<const char*>(p);
        out.insert(out.end(), c, c + n);
    };
    put(checkpoint_magic, 4);
    put(&checkpoint_version, 4);
    const std::uint64_t hl = h.size();
    put(&hl, 8);
    put(h.data(), h.size());
    for (const auto& [name, t] : ck.tensors)
        put(t.values.data(), t.values.size() * sizeof(float));
    return out;
}

inline checkpoint decode_checkpoint(const std::vector<char>& bytes, const std::string& origin = "<memory>") {
    auto fail = [&origin](const std::string& why) { return format_error("checkpoint " + origin + ": " + why); };
    if (bytes.size() < 16)
        throw fail("truncated (" + std::to_string(bytes.size()) + " bytes)");
    if (std::memcmp(bytes.data(), checkpoint_magic, 4) != 0)
        throw fail("bad magic");
    std::uint32_t version;
    std::memcpy(&version, bytes.data() + 4, 4);
    if (version != checkpoint_version)
        throw fail("unsupported version " + std::to_string(version));
    std::uint64_t hl;
    std::memcpy(&hl, bytes.data() + 8, 8);
    if (hl > bytes.size() - 16)
        throw fail("truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hl));
    } catch (const nlohmann::json::exception& e) {
        throw fail(std::string("corrupt header: ") + e.what());
    }

    checkpoint ck;
    const std::size_t blob = 16 + hl;
    const std::size_t blob_len = bytes.size() - blob;
    try {
        ck.kind = header.at("kind").get<std::string>();
        ck.meta = header.at("meta");
        std::uint64_t expected_offset = 0;
        // Tensors are laid out in name order; offsets must tile the blob section.
        for (const auto& [name, entry] : header.at("tensors").items()) {
            if (entry.at("dtype").get<std::string>() != "float32")
                throw fail("tensor '" + name + "' has unsupported dtype");
            stored_tensor t;
            t.shape = entry.at("shape").get<shape_t>();
            const auto off = entry.at("offset").get<std::uint64_t>();
            const std::size_t n = numel_of(t.shape);
            if (off != expected_offset)
                throw fail("shape table inconsistent at tensor '" + name + "'");
            if (off + n * sizeof(float) > blob_len)
                throw fail("truncated data for tensor '" + name + "'");
            t.values.resize(n);
            std::memcpy(t.values.data(), bytes.data() + blob + off, n * sizeof(float));
            expected_offset = off + n * sizeof(float);
            ck.tensors.emplace(name, std::move(t));
        }
        if (expected_offset != blob_len)
            throw fail("shape table covers " + std::to_string(expected_offset) + " bytes but data section has "
                       + std::to_string(blob_len));
    } catch (const nlohmann::json::exception& e) {
        throw fail(std::string("malformed header: ") + e.what());
    }
    return ck;
}

inline void save_checkpoint(const checkpoint& ck, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(ck);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f)
            throw std::runtime_error("cannot write " + tmp.string());
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f)
            throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw format_error("cannot open checkpoint " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes, path.string());
}

/// Copies module parameters and buffers into a checkpoint.
template <class T>
void store_state(checkpoint& ck, const std::vector<named_param<T>>& ps, const std::vector<named_buffer<T>>& bs) {
    for (const auto& p : ps) {
        const auto& v = p.value.values();
        ck.tensors[p.name] = {p.value.shape(), std::vector<float>(v.begin(), v.end())};
    }
    for (const auto& b : bs)
        ck.tensors[b.name] = {{b.values->size()}, std::vector<float>(b.values->begin(), b.values->end())};
}

/// Overwrites module parameters and buffers in place from a checkpoint.
template <class T>
void restore_state(const checkpoint& ck, std::vector<named_param<T>>& ps, std::vector<named_buffer<T>>& bs) {
    for (auto& p : ps) {
        const auto& t = ck.get(p.name, p.value.shape());
        std::copy(t.values.begin(), t.values.end(), p.value.values().begin());
    }
    for (auto& b : bs) {
        const auto& t = ck.get(b.name, {b.values->size()});
        std::copy(t.values.begin(), t.values.end(), b.values->begin());
    }
}

} // namespace sonact::nn
