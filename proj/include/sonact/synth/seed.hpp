#pragma once

#include <cstdint>

namespace sonact::synth {

/// splitmix64 finaliser.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Combines a parent seed with a stream index: splitmix64(splitmix64(parent) ^ index).
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) noexcept {
    return splitmix64(splitmix64(parent) ^ index);
}

/// Per-record seed. Slot 0 seeds the behaviour's action; slot r + 1 seeds repeat r.
constexpr std::uint64_t record_seed(std::uint64_t master, std::uint64_t behavior_id, std::uint64_t slot) noexcept {
    return derive_seed(derive_seed(master, behavior_id), slot);
}

} // namespace sonact::synth
