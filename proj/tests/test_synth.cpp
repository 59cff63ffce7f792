#include <sonact/synth/analysis.hpp>
#include <sonact/synth/dataset.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace sonact;
using namespace sonact::synth;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("sonact_test_synth_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

} // namespace

TEST(SampleAction, ReplayableFromSeed) {
    const auto spec = spec_for(task_id::swatter);
    EXPECT_EQ(sample_action(spec, 99), sample_action(spec, 99));
    EXPECT_NE(sample_action(spec, 99), sample_action(spec, 100));
}

TEST(SampleAction, UniformMomentsWithinThreeStandardErrors) {
    const auto spec = spec_for(task_id::strike_h);
    const int n = 10000;
    std::vector<double> sum(spec.dims(), 0.0);
    for (int i = 0; i < n; ++i) {
        const auto a = sample_action(spec, record_seed(5, i, 0));
        check_action(spec, a);
        for (std::size_t d = 0; d < a.size(); ++d)
            sum[d] += a[d];
    }
    for (std::size_t d = 0; d < spec.dims(); ++d) {
        const auto [lo, hi] = spec.limits[d];
        // Continuous: var = w^2/12. Integer range of k values: var = (k^2 - 1)/12.
        const double k = hi - lo + 1;
        const double var = spec.integer[d] ? (k * k - 1) / 12.0 : (hi - lo) * (hi - lo) / 12.0;
        EXPECT_NEAR(sum[d] / n, 0.5 * (lo + hi), 3.0 * std::sqrt(var / n)) << spec.names[d];
    }
}

TEST(SampleAction, IntegerDimensionCoversItsRange) {
    const auto spec = spec_for(task_id::rattle);
    std::set<double> seen;
    for (int i = 0; i < 1000; ++i)
        seen.insert(sample_action(spec, record_seed(1, i, 0))[2]);
    EXPECT_EQ(seen, (std::set<double>{1, 2, 3, 4, 5}));
}

TEST(Simulate, RattleEmitsTwoBurstsPerOscillation) {
    const auto spec = spec_for(task_id::rattle);
    const auto clip = simulate(spec, {1.2, 0.9, 3}, 17, 0.0);
    EXPECT_EQ(clip.sample_rate, 44100);
    EXPECT_EQ(clip.length(), 176400u);
    EXPECT_EQ(clip.channels(), 1u);
    EXPECT_EQ(count_bursts(clip), 6u);
}

TEST(Simulate, TambourineEmitsTwoBurstsPerOscillation) {
    const auto spec = spec_for(task_id::tambourine);
    for (double c : {1.0, 4.0, 5.0})
        EXPECT_EQ(count_bursts(simulate(spec, {0.5, 2.0, c}, 3, 0.0)), 2 * static_cast<std::size_t>(c));
}

TEST(Simulate, LouderAtUpperVelocityBounds) {
    for (auto t : all_tasks) {
        const auto spec = spec_for(t);
        auto lo = midpoint(spec), hi = midpoint(spec);
        for (std::size_t d = 0; d < spec.dims(); ++d)
            if (spec.is_velocity(d)) {
                lo[d] = spec.limits[d].lo;
                hi[d] = spec.limits[d].hi;
            }
        EXPECT_LT(total_rms(simulate(spec, lo, 8, 0.0)), total_rms(simulate(spec, hi, 8, 0.0))) << to_string(t);
    }
}

TEST(Simulate, DeterministicAndSeedSensitive) {
    const auto spec = spec_for(task_id::strike_h);
    const action_params a{1.0, 1.5, 0.7, 1.2, 2, 9, 4};
    EXPECT_EQ(simulate(spec, a, 5).samples, simulate(spec, a, 5).samples);
    EXPECT_NE(simulate(spec, a, 5).samples, simulate(spec, a, 6).samples);
}

TEST(Simulate, SamplesStayInUnitRange) {
    for (auto t : all_tasks) {
        const auto spec = spec_for(t);
        auto a = midpoint(spec);
        for (std::size_t d = 0; d < spec.dims(); ++d)
            if (spec.is_velocity(d))
                a[d] = spec.limits[d].hi;
        for (const auto& ch : simulate(spec, a, 1, 0.5).samples)
            for (float s : ch)
                ASSERT_LE(std::abs(s), 0.99f);
    }
}

TEST(Simulate, RejectsOutOfBoundsAction) {
    const auto spec = spec_for(task_id::rattle);
    EXPECT_THROW(simulate(spec, {3.0, 1.0, 2}, 1), std::invalid_argument);
    EXPECT_THROW(simulate(spec, {1.0, 1.0, 2.5}, 1), std::invalid_argument);
    EXPECT_THROW(simulate(spec, {1.0, 1.0}, 1), std::invalid_argument);
}

TEST(Simulate, SwatterEnergyMovesTowardSecondMicrophone) {
    const auto spec = spec_for(task_id::swatter);
    double prev = -1.0;
    for (int i = 0; i < 8; ++i) {
        const double vb = 0.5 + 1.5 * i / 7.0;
        const auto e = channel_energy(simulate(spec, {vb, 1.2, 1.0}, 4, 0.0));
        const double ratio = e[1] / (e[0] + e[1]);
        EXPECT_GE(ratio, prev);
        prev = ratio;
    }
}

TEST(SeedMixing, DistinctSlotsAndBehaviours) {
    EXPECT_NE(record_seed(1, 2, 3), record_seed(1, 3, 2));
    EXPECT_NE(record_seed(1, 2, 0), record_seed(2, 2, 0));
    EXPECT_EQ(record_seed(1, 2, 3), record_seed(1, 2, 3));
}

TEST(Dataset, GenerateCountsAndSplit) {
    const auto dir = scratch("counts");
    const auto m = generate_dataset(task_id::rattle, {10, 2, 0.01, 3, false}, dir);
    EXPECT_EQ(m.records.size(), 20u);
    EXPECT_EQ(m.split.train.size(), 8u);
    EXPECT_EQ(m.split.test.size(), 2u);
    for (std::size_t i = 0; i < m.records.size(); i += 2)
        EXPECT_EQ(m.records[i].action, m.records[i + 1].action);
    fs::remove_all(dir);
}

TEST(Dataset, RegenerationIsByteIdentical) {
    const auto a = scratch("regen_a"), b = scratch("regen_b");
    generate_dataset(task_id::swatter, {4, 2, 0.01, 11, false}, a);
    generate_dataset(task_id::swatter, {4, 2, 0.01, 11, false}, b);
    EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
    for (std::size_t beh = 0; beh < 4; ++beh)
        for (std::size_t r = 0; r < 2; ++r)
            EXPECT_EQ(slurp(a / audio_name(beh, r)), slurp(b / audio_name(beh, r)));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Dataset, RefusesToOverwriteWithoutFlag) {
    const auto dir = scratch("collide");
    generate_dataset(task_id::rattle, {2, 1, 0.0, 1, false}, dir);
    EXPECT_THROW(generate_dataset(task_id::rattle, {2, 1, 0.0, 1, false}, dir), std::runtime_error);
    EXPECT_NO_THROW(generate_dataset(task_id::rattle, {2, 1, 0.0, 1, true}, dir));
    fs::remove_all(dir);
}

TEST(Dataset, LoadsFreshDatasetInDeterministicOrder) {
    const auto dir = scratch("load");
    generate_dataset(task_id::strike_v, {5, 3, 0.01, 2, false}, dir);
    const auto ds = dataset::load(dir / "manifest.json");
    EXPECT_EQ(ds.size(), 15u);
    EXPECT_EQ(ds.train_records().size(), 12u);
    EXPECT_EQ(ds.test_records().size(), 3u);
    EXPECT_EQ(ds.record(ds.test_records().front()).behavior_id, 4u);
    EXPECT_EQ(ds.train_slice(2).size(), 6u);
    EXPECT_THROW(ds.train_slice(5), config_error);
    const auto clip = ds.load_clip(0);
    EXPECT_EQ(clip.samples, simulate(ds.spec(), ds.record(0).action, ds.record(0).seed, 0.01).samples);
    fs::remove_all(dir);
}

TEST(Dataset, MissingAudioNamesTheRecord) {
    const auto dir = scratch("missing");
    generate_dataset(task_id::rattle, {3, 2, 0.0, 1, false}, dir);
    fs::remove(dir / audio_name(1, 1));
    try {
        dataset::load(dir / "manifest.json");
        FAIL() << "expected a format_error";
    } catch (const format_error& e) {
        EXPECT_NE(std::string(e.what()).find("behavior 1, repeat 1"), std::string::npos) << e.what();
    }
    fs::remove_all(dir);
}

TEST(Dataset, RejectsOverlappingSplitAndUnknownSchema) {
    const auto dir = scratch("overlap");
    auto m = generate_dataset(task_id::rattle, {3, 1, 0.0, 1, false}, dir);
    auto j = to_json(m);
    j["split"]["test"].push_back(0);
    std::ofstream(dir / "manifest.json") << j.dump();
    EXPECT_THROW(dataset::load(dir / "manifest.json"), format_error);

    j = to_json(m);
    j["schema_version"] = 99;
    std::ofstream(dir / "manifest.json") << j.dump();
    EXPECT_THROW(dataset::load(dir / "manifest.json"), format_error);
    fs::remove_all(dir);
}

TEST(Dataset, TruncatedAudioIsAShapeMismatch) {
    const auto dir = scratch("trunc");
    generate_dataset(task_id::rattle, {2, 1, 0.0, 1, false}, dir);
    fs::resize_file(dir / audio_name(0, 0), 1000);
    EXPECT_THROW(dataset::load(dir / "manifest.json"), format_error);
    fs::remove_all(dir);
}
