#pragma once

#include <sonact/audio/envelope.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sonact::align {

struct dtw_result {
    double distance = 0.0;
    std::size_t path_len = 0;
};

/// Euclidean distance between frame i of `a` and frame j of `b` across channels.
inline double frame_cost(const audio::envelope& a, std::size_t i, const audio::envelope& b, std::size_t j) {
    double s = 0.0;
    for (std::size_t c = 0; c < a.channels; ++c) {
        const double d = a.at(c, i) - b.at(c, j);
        s += d * d;
    }
    return std::sqrt(s);
}

/// Unconstrained DTW, accumulated cost without path-length normalisation.
inline dtw_result dtw_distance(const audio::envelope& a, const audio::envelope& b) {
    if (a.channels != b.channels)
        throw std::invalid_argument("dtw_distance: channel mismatch (" + std::to_string(a.channels) + " vs "
                                    + std::to_string(b.channels) + ")");
    if (a.frames == 0 || b.frames == 0 || a.channels == 0)
        throw std::invalid_argument("dtw_distance: empty envelope");

    const std::size_t n = a.frames, m = b.frames;
    // Two rolling rows of cost plus path length for the chosen predecessor.
    std::vector<double> prev(m), cur(m);
    std::vector<std::size_t> prev_len(m), cur_len(m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const double c = frame_cost(a, i, b, j);
            if (i == 0 && j == 0) {
                cur[j] = c;
                cur_len[j] = 1;
                continue;
            }
            double best = std::numeric_limits<double>::infinity();
            std::size_t len = 0;
            if (i > 0 && j > 0 && prev[j - 1] <= best) {
                best = prev[j - 1];
                len = prev_len[j - 1];
            }
            if (i > 0 && prev[j] < best) {
                best = prev[j];
                len = prev_len[j];
            }
            if (j > 0 && cur[j - 1] < best) {
                best = cur[j - 1];
                len = cur_len[j - 1];
            }
            cur[j] = c + best;
            cur_len[j] = len + 1;
        }
        std::swap(prev, cur);
        std::swap(prev_len, cur_len);
    }
    return {prev[m - 1], prev_len[m - 1]};
}

inline constexpr double sigma_floor = 1e-9;

struct normalization_stats {
    double mu = 0.0;
    double sigma = 1.0;
    std::size_t n_pairs = 0;
};

/// Mean and population std of same-action repeat distances.
inline normalization_stats fit_normalization(std::span<const double> repeat_distances) {
    if (repeat_distances.size() < 2)
        throw std::invalid_argument("fit_normalization: need at least 2 distances, got "
                                    + std::to_string(repeat_distances.size()));
    double sum = 0.0;
    for (double d : repeat_distances)
        sum += d;
    const double mu = sum / static_cast<double>(repeat_distances.size());
    double sq = 0.0;
    for (double d : repeat_distances)
        sq += (d - mu) * (d - mu);
    const double sigma = std::sqrt(sq / static_cast<double>(repeat_distances.size()));
    return {mu, std::max(sigma, sigma_floor), repeat_distances.size()};
}

inline double normalized_score(double x, const normalization_stats& st) { return (x - st.mu) / st.sigma; }

} // namespace sonact::align
