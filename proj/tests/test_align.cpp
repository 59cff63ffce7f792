#include <sonact/align/dtw.hpp>

#include <gtest/gtest.h>

#include <functional>
#include <limits>
#include <random>

using namespace sonact;
using audio::envelope;

namespace {

envelope make(std::initializer_list<double> v) {
    envelope e;
    e.channels = 1;
    e.frames = v.size();
    e.frame_len = 1;
    e.values = v;
    return e;
}

envelope random_env(std::mt19937& rng, std::size_t channels, std::size_t frames) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    envelope e;
    e.channels = channels;
    e.frames = frames;
    e.frame_len = 1;
    e.values.resize(channels * frames);
    for (auto& v : e.values)
        v = u(rng);
    return e;
}

} // namespace

// Brute-force oracle: enumerate every monotone path from (0,0) to (n-1,m-1).
double brute_force_dtw(const envelope& a, const envelope& b) {
    double best = std::numeric_limits<double>::infinity();
    std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t i, std::size_t j, double acc) {
        acc += align::frame_cost(a, i, b, j);
        if (i + 1 == a.frames && j + 1 == b.frames) {
            best = std::min(best, acc);
            return;
        }
        if (i + 1 < a.frames)
            walk(i + 1, j, acc);
        if (j + 1 < b.frames)
            walk(i, j + 1, acc);
        if (i + 1 < a.frames && j + 1 < b.frames)
            walk(i + 1, j + 1, acc);
    };
    walk(0, 0, 0.0);
    return best;
}

TEST(Dtw, IdenticalEnvelopesHaveZeroDistance) {
    const auto a = make({0.1, 0.7, 0.3, 0.0});
    const auto r = align::dtw_distance(a, a);
    EXPECT_EQ(r.distance, 0.0);
    EXPECT_EQ(r.path_len, 4u);
}

TEST(Dtw, WarpsRepeatedFrameForFree) {
    EXPECT_EQ(align::dtw_distance(make({1, 2, 3}), make({1, 2, 2, 3})).distance, 0.0);
    EXPECT_EQ(brute_force_dtw(make({1, 2, 3}), make({1, 2, 2, 3})), 0.0);
}

TEST(Dtw, SingleCell) {
    EXPECT_EQ(align::dtw_distance(make({0}), make({1})).distance, 1.0);
}

TEST(Dtw, RejectsChannelMismatchAndEmpty) {
    std::mt19937 rng(1);
    EXPECT_THROW(align::dtw_distance(random_env(rng, 1, 3), random_env(rng, 2, 3)), std::invalid_argument);
    EXPECT_THROW(align::dtw_distance(envelope{1, 0, 1, {}}, make({1})), std::invalid_argument);
}

TEST(Dtw, MatchesBruteForceOnSmallRandomPairs) {
    std::mt19937 rng(42);
    std::uniform_int_distribution<std::size_t> len(1, 6), ch(1, 2);
    for (int trial = 0; trial < 200; ++trial) {
        const auto c = ch(rng);
        const auto a = random_env(rng, c, len(rng)), b = random_env(rng, c, len(rng));
        ASSERT_NEAR(align::dtw_distance(a, b).distance, brute_force_dtw(a, b), 1e-9);
    }
}

TEST(Dtw, SymmetricAndScaleCovariant) {
    std::mt19937 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const auto a = random_env(rng, 2, 1 + trial % 9), b = random_env(rng, 2, 1 + (trial * 5) % 11);
        const double d = align::dtw_distance(a, b).distance;
        EXPECT_NEAR(d, align::dtw_distance(b, a).distance, 1e-12);
        EXPECT_GE(d, 0.0);
        auto sa = a, sb = b;
        for (auto& v : sa.values)
            v *= 2.5;
        for (auto& v : sb.values)
            v *= 2.5;
        EXPECT_NEAR(align::dtw_distance(sa, sb).distance, 2.5 * d, 1e-9);
    }
}

TEST(Normalization, MeanAndPopulationStd) {
    const std::vector<double> d{2, 4};
    const auto st = align::fit_normalization(d);
    EXPECT_DOUBLE_EQ(st.mu, 3.0);
    EXPECT_DOUBLE_EQ(st.sigma, 1.0);
    EXPECT_EQ(st.n_pairs, 2u);
}

TEST(Normalization, EqualValuesEngageFloor) {
    const std::vector<double> d{5, 5, 5};
    EXPECT_EQ(align::fit_normalization(d).sigma, align::sigma_floor);
}

TEST(Normalization, RejectsSingleValue) {
    const std::vector<double> d{0};
    EXPECT_THROW(align::fit_normalization(d), std::invalid_argument);
}

TEST(Normalization, Score) {
    const align::normalization_stats st{3.0, 1.0, 2};
    EXPECT_EQ(align::normalized_score(3.0, st), 0.0);
    EXPECT_EQ(align::normalized_score(4.0, st), 1.0);
    EXPECT_NEAR(align::normalized_score(2.35, st), -0.65, 1e-12);
}
