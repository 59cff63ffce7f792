#include <sonact/models/baselines.hpp>
#include <sonact/models/policy.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <type_traits>

using namespace sonact;
using namespace sonact::models;
using audio::mel_spectrogram;
using synth::task_id;

namespace {

std::vector<action_params> sample_actions(task_id t, std::size_t n, std::uint64_t seed) {
    std::vector<action_params> out;
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(synth::sample_action(synth::spec_for(t), synth::derive_seed(seed, i)));
    return out;
}

/// Closed-form least squares with an intercept column.
double least_squares_loss(const Eigen::MatrixXd& z, const Eigen::MatrixXd& y) {
    Eigen::MatrixXd x(z.rows(), z.cols() + 1);
    x << z, Eigen::VectorXd::Ones(z.rows());
    const Eigen::MatrixXd beta = (x.transpose() * x).ldlt().solve(x.transpose() * y);
    return (x * beta - y).rowwise().squaredNorm().mean();
}

nn::encoder_config tiny_encoder(std::size_t channels) {
    nn::encoder_config c;
    c.in_channels = channels;
    c.block_widths = {4, 8};
    c.repr_dim = 8;
    c.proj_dim = 4;
    c.pred_hidden = 8;
    return c;
}

audio::channel_stats unit_stats(std::size_t channels) {
    audio::channel_stats st;
    st.mean.assign(channels, 0.0);
    st.std.assign(channels, 1.0);
    return st;
}

mel_spectrogram random_spec(std::size_t c, std::mt19937_64& rng) {
    std::normal_distribution<float> d;
    auto s = mel_spectrogram::zeros(c, 16, 32);
    for (auto& v : s.values)
        v = d(rng);
    return s;
}

} // namespace

TEST(Normalizer, Examples) {
    auto spec = synth::spec_for(task_id::strike_h);
    auto train = sample_actions(task_id::strike_h, 10, 1);
    for (std::size_t i = 0; i < train.size(); ++i)
        train[i][4] = i % 2 ? 2.0 : 4.0;
    auto n = action_normalizer::fit(spec, train);
    EXPECT_EQ(n.mode(), norm_mode::minmax);
    auto a = train[0];
    a[4] = 3.0;
    EXPECT_DOUBLE_EQ(n.normalize(a)[4], 0.5);

    auto sw = synth::spec_for(task_id::swatter);
    auto sw_train = std::vector<action_params>{{0.6, 0.6, 0.6}, {1.9, 1.9, 1.9}};
    auto ns = action_normalizer::fit(sw, sw_train);
    auto out = ns.to_action({1.4, 0.5, -0.7});
    EXPECT_DOUBLE_EQ(out[0], 2.0); // 0.6 + 1.4 * 1.3 = 2.42 -> clipped
    EXPECT_NEAR(out[1], 1.25, 1e-12);
    EXPECT_DOUBLE_EQ(out[2], 0.5);
}

TEST(Normalizer, RoundTripAndClipping) {
    std::mt19937_64 rng(2);
    for (auto t : synth::all_tasks) {
        auto spec = synth::spec_for(t);
        auto n = action_normalizer::fit(spec, sample_actions(t, 50, 3));
        for (const auto& a : sample_actions(t, 50, 4)) {
            auto back = n.denormalize(n.normalize(a));
            for (std::size_t k = 0; k < a.size(); ++k)
                ASSERT_NEAR(back[k], a[k], 1e-6);
        }
        std::normal_distribution<double> wild(0.5, 3.0);
        for (int i = 0; i < 50; ++i) {
            action_params z(spec.dims());
            for (auto& v : z)
                v = wild(rng);
            auto raw = n.denormalize(z);
            auto a = n.to_action(z);
            for (std::size_t k = 0; k < a.size(); ++k) {
                const auto& lim = spec.limits[k];
                if (raw[k] >= lim.hi)
                    ASSERT_EQ(a[k], lim.hi);
                else if (raw[k] <= lim.lo)
                    ASSERT_EQ(a[k], lim.lo);
                ASSERT_GE(a[k], lim.lo);
                ASSERT_LE(a[k], lim.hi);
                if (spec.integer[k])
                    ASSERT_EQ(a[k], std::round(a[k]));
            }
        }
    }
}

TEST(Normalizer, ModeNoneForShakingTasks) {
    for (auto t : synth::all_tasks) {
        auto n = action_normalizer::fit(synth::spec_for(t), sample_actions(t, 20, 5));
        const bool none = t == task_id::rattle || t == task_id::tambourine;
        EXPECT_EQ(n.mode(), none ? norm_mode::none : norm_mode::minmax) << synth::to_string(t);
        if (none) {
            action_params a{1.1, 0.7, 3.0};
            EXPECT_EQ(n.normalize(a), a);
        }
    }
}

TEST(Normalizer, Errors) {
    auto spec = synth::spec_for(task_id::swatter);
    EXPECT_THROW(action_normalizer::fit(spec, {}), config_error);
    try {
        action_normalizer::fit(spec, {{1.0, 0.7, 1.0}, {1.5, 0.7, 1.2}});
        FAIL() << "degenerate dimension accepted";
    } catch (const config_error& e) {
        EXPECT_NE(std::string(e.what()).find("shoulder_velocity"), std::string::npos) << e.what();
    }
}

TEST(Normalizer, JsonRoundTrip) {
    auto n = action_normalizer::fit(synth::spec_for(task_id::strike_v), sample_actions(task_id::strike_v, 30, 6));
    auto back = action_normalizer::from_json(n.to_json());
    EXPECT_EQ(back.lo(), n.lo());
    EXPECT_EQ(back.hi(), n.hi());
    EXPECT_EQ(back.mode(), n.mode());
    EXPECT_EQ(back.spec().task, task_id::strike_v);
}

TEST(Probe, LinearTargetsAreFitExactly) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> d;
    Eigen::MatrixXd z(60, 5), m(5, 2);
    for (Eigen::Index i = 0; i < z.size(); ++i)
        z.data()[i] = d(rng);
    for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = d(rng);
    Eigen::MatrixXd y = z * m;
    auto fit = fit_probe(z, y);
    EXPECT_LT(fit.train_loss, 1e-6);
    EXPECT_LT((fit.weights.W - m).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Probe, ConflictingDuplicatesPredictTheirMean) {
    Eigen::MatrixXd z(4, 1), y(4, 1);
    z << 1, 1, 3, 3;
    y << 0, 2, 5, 9;
    auto fit = fit_probe(z, y);
    auto p = fit.weights.apply(z);
    // Least squares through the group means (1 -> 1, 3 -> 7).
    EXPECT_NEAR(p(0, 0), 1.0, 1e-3);
    EXPECT_NEAR(p(2, 0), 7.0, 1e-3);
    EXPECT_NEAR(fit.train_loss, least_squares_loss(z, y), 1e-6);
}

TEST(Probe, ZeroRepresentationsPredictMeanTarget) {
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(6, 4), y(6, 2);
    y << 1, 0, 2, 0, 3, 1, 4, 1, 5, 1, 6, 0;
    auto fit = fit_probe(z, y);
    auto p = fit.weights.apply(Eigen::MatrixXd::Zero(1, 4));
    EXPECT_NEAR(p(0, 0), 3.5, 1e-9);
    EXPECT_NEAR(p(0, 1), 0.5, 1e-9);
}

TEST(Probe, ReachesLeastSquaresLoss) {
    // Correlated, badly scaled features with noisy targets.
    std::mt19937_64 rng(8);
    std::normal_distribution<double> d;
    const int n = 400, r = 24, k = 3;
    Eigen::MatrixXd base(n, 6), mix(6, r), z(n, r), y(n, k);
    for (Eigen::Index i = 0; i < base.size(); ++i)
        base.data()[i] = d(rng);
    for (Eigen::Index i = 0; i < mix.size(); ++i)
        mix.data()[i] = d(rng);
    z = base * mix;
    for (Eigen::Index i = 0; i < z.size(); ++i)
        z.data()[i] = z.data()[i] * 10.0 + 0.05 * d(rng) + 3.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j)
            y(i, j) = 0.5 + 0.2 * base(i, j) - 0.1 * base(i, j + 3) + 0.3 * d(rng);
    auto fit = fit_probe(z, y);
    const double ls = least_squares_loss(z, y);
    EXPECT_LE(fit.train_loss, ls * 1.01);
    EXPECT_GE(fit.train_loss, ls * (1 - 1e-9));
}

TEST(Probe, MinibatchPathConverges) {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> d;
    Eigen::MatrixXd z(300, 4), y(300, 1);
    for (Eigen::Index i = 0; i < z.size(); ++i)
        z.data()[i] = d(rng);
    for (int i = 0; i < 300; ++i)
        y(i, 0) = z(i, 0) - 0.5 * z(i, 2) + 0.1 * d(rng);
    probe_config cfg;
    cfg.max_batch = 64;
    cfg.adam.lr = 1e-3;
    auto fit = fit_probe(z, y, cfg);
    EXPECT_LE(fit.train_loss, least_squares_loss(z, y) * 1.05);
}

TEST(Probe, Errors) {
    EXPECT_THROW(fit_probe(Eigen::MatrixXd(0, 3), Eigen::MatrixXd(0, 2)), config_error);
    EXPECT_THROW(fit_probe(Eigen::MatrixXd::Zero(3, 3), Eigen::MatrixXd::Zero(4, 2)), std::invalid_argument);
}

TEST(Baselines, Examples) {
    std::vector<labeled_action> one{{7, {1.0, 2.0}}};
    EXPECT_EQ(oracle_baseline({5.0, 5.0}, one).action, one[0].action);
    EXPECT_EQ(random_baseline(one, 123).action, one[0].action);

    std::vector<labeled_action> line{{0, {1.0}}, {1, {5.0}}};
    EXPECT_EQ(oracle_baseline({2.0}, line).action, action_params{1.0});
    EXPECT_EQ(oracle_baseline({5.0}, line).behavior_id, 1u);
    EXPECT_EQ(squared_error(oracle_baseline({5.0}, line).action, {5.0}), 0.0);

    std::vector<labeled_action> tie{{9, {4.0}}, {3, {0.0}}};
    EXPECT_EQ(oracle_baseline({2.0}, tie).behavior_id, 3u);

    std::vector<labeled_action> two{{0, {0.0}}, {1, {2.0}}};
    EXPECT_DOUBLE_EQ(random_expected_error(two, {0.0}), 2.0);

    EXPECT_THROW(oracle_baseline({1.0}, {}), config_error);
    EXPECT_THROW(random_baseline({}, 0), config_error);
}

TEST(Baselines, RandomIgnoresEverythingButSeed) {
    std::vector<labeled_action> train;
    for (std::size_t i = 0; i < 30; ++i)
        train.push_back({i, {double(i)}});
    for (std::uint64_t s = 0; s < 20; ++s)
        EXPECT_EQ(&random_baseline(train, s), &random_baseline(train, s));
    std::set<std::size_t> ids;
    for (std::uint64_t s = 0; s < 200; ++s)
        ids.insert(random_baseline(train, s).behavior_id);
    EXPECT_GT(ids.size(), 20u);
}

TEST(Baselines, OracleNeverWorseThanRandom) {
    for (auto t : synth::all_tasks) {
        auto acts = sample_actions(t, 60, 10);
        std::vector<labeled_action> train;
        for (std::size_t i = 0; i < 40; ++i)
            train.push_back({i, acts[i]});
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            double oracle = 0, random = 0;
            for (std::size_t i = 40; i < 60; ++i) {
                oracle += squared_error(oracle_baseline(acts[i], train).action, acts[i]);
                random += squared_error(random_baseline(train, synth::derive_seed(seed, i)).action, acts[i]);
            }
            EXPECT_LE(oracle, random) << synth::to_string(t) << " seed " << seed;
        }
    }
}

TEST(Supervised, SharesAugmentationConfigWithPretraining) {
    static_assert(std::is_same_v<decltype(supervised_config::aug), ssl::augmentation_config>);
    supervised_config c;
    c.aug.crop_scale_time = {0.0, 1.0};
    EXPECT_THROW(c.validate(), config_error);
}

class SupervisedFixture : public ::testing::Test {
protected:
    void SetUp() override {
        std::mt19937_64 rng(11);
        for (int i = 0; i < 12; ++i)
            raw.push_back(random_spec(1, rng));
        actions = sample_actions(task_id::rattle, 12, 11);
        norm = action_normalizer::fit(synth::spec_for(task_id::rattle), actions);
        cfg.epochs = 2;
        cfg.batch_size = 4;
        cfg.seed = 11;
    }

    supervised_model make() { return supervised_model::create(tiny_encoder(1), unit_stats(1), norm, 11); }

    std::vector<mel_spectrogram> raw;
    std::vector<action_params> actions;
    action_normalizer norm;
    supervised_config cfg;
};

TEST_F(SupervisedFixture, Reproducible) {
    for (bool aug : {false, true}) {
        cfg.augment = aug;
        auto a = make(), b = make();
        auto ta = train_supervised(a, raw, actions, cfg);
        auto tb = train_supervised(b, raw, actions, cfg);
        ASSERT_EQ(ta.size(), 2u);
        EXPECT_EQ(ta, tb);
        EXPECT_EQ(a.augmented, aug);
    }
}

TEST_F(SupervisedFixture, MemorizesOnePair) {
    auto m = make();
    cfg.epochs = 300;
    cfg.batch_size = 1;
    cfg.adam.lr = 3e-3;
    auto trace = train_supervised(m, {raw[0]}, {actions[0]}, cfg);
    EXPECT_LT(trace.back(), 1e-3 * trace.front());
    EXPECT_LT(trace.back(), 1e-3);
}

TEST_F(SupervisedFixture, PredictIsPureAndInBounds) {
    auto m = make();
    train_supervised(m, raw, actions, cfg);
    auto p1 = m.predict(raw);
    auto p2 = m.predict(raw);
    EXPECT_EQ(p1, p2);
    auto spec = synth::spec_for(task_id::rattle);
    for (const auto& a : p1)
        EXPECT_NO_THROW(synth::check_action(spec, a));
    // Batch composition does not change a clip's prediction in eval mode.
    EXPECT_EQ(m.predict({raw[3]})[0], p1[3]);

    std::mt19937_64 rng(12);
    EXPECT_THROW(m.predict({random_spec(2, rng)}), std::invalid_argument);
}

TEST_F(SupervisedFixture, CheckpointRoundTrip) {
    auto m = make();
    train_supervised(m, raw, actions, cfg);
    const auto dir = std::filesystem::temp_directory_path() / "sonact_test_models";
    std::filesystem::create_directories(dir);
    m.save(dir / "sup.arlc");
    auto back = supervised_model::load(dir / "sup.arlc");
    EXPECT_EQ(back.predict(raw), m.predict(raw));
    EXPECT_THROW(probe_model::load(dir / "sup.arlc"), format_error);
    std::filesystem::remove_all(dir);
}

TEST_F(SupervisedFixture, ProbeModelRoundTrip) {
    auto enc = ssl::encoder_state::create(tiny_encoder(1), unit_stats(1), 13);
    auto [model, fit] = train_probe(std::move(enc), norm, raw, actions);
    EXPECT_TRUE(fit.weights.finite());
    auto p = model.predict(raw);
    auto spec = synth::spec_for(task_id::rattle);
    for (const auto& a : p)
        EXPECT_NO_THROW(synth::check_action(spec, a));

    const auto dir = std::filesystem::temp_directory_path() / "sonact_test_probe";
    std::filesystem::create_directories(dir);
    model.save(dir / "probe.arlc");
    auto back = probe_model::load(dir / "probe.arlc");
    EXPECT_EQ(back.predict(raw), p);
    EXPECT_EQ(back.weights.W, model.weights.W);
    EXPECT_THROW(ssl::encoder_state::load(dir / "probe.arlc"), format_error);
    std::filesystem::remove_all(dir);

    EXPECT_THROW(train_probe(ssl::encoder_state::create(tiny_encoder(1), unit_stats(1), 0), norm, {}, {}),
                 config_error);
}
