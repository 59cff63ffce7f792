#include <sonact/harness/config.hpp>
#include <sonact/harness/metrics.hpp>
#include <sonact/harness/pipeline.hpp>
#include <sonact/harness/report.hpp>

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

using namespace sonact;
using namespace sonact::harness;
namespace fs = std::filesystem;

namespace {

const char* small_ini = R"(
[run]
tasks = rattle
methods = aurl, supervised, random, oracle
seeds = 0
metrics = mse, dtw

[data]
behaviors = 10
repeats = 2

[pretrain]
epochs = 2
batch_size = 8

[supervised]
epochs = 2
batch_size = 8

[probe]
epochs = 200
plateau_window = 50

[eval]
dtw_repeats = 2

[sweep]
slices = 4, 8
)";

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("sonact_harness_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

run_config small_config(const fs::path& root, bool deterministic = true) {
    cli_overrides cli;
    cli.deterministic = deterministic;
    auto c = parse_config(small_ini, cli);
    c.data_dir = root / "data";
    c.out_dir = root / "runs";
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

int exit_code_of(const std::string& cmd) {
    const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const bool quiet_logs = [] {
    spdlog::set_level(spdlog::level::warn);
    return true;
}();

} // namespace

// ---------------------------------------------------------------- config

TEST(Config, DefaultsAreDeskScale) {
    const auto c = parse_config("");
    EXPECT_EQ(c.tasks.size(), 5u);
    EXPECT_EQ(c.seeds, std::vector<std::uint64_t>{0});
    EXPECT_EQ(c.settings(task_id::rattle).data.behaviors, 200u);
    EXPECT_EQ(c.settings(task_id::rattle).data.repeats, 5u);
    EXPECT_EQ(c.settings(task_id::rattle).eval.dtw_repeats, 5u);
    EXPECT_EQ(c.settings(task_id::swatter).encoder.in_channels, 2u);
    EXPECT_EQ(c.settings(task_id::rattle).encoder.in_channels, 1u);
}

TEST(Config, TaskSectionsOverrideShared) {
    const auto c = parse_config("[pretrain]\nepochs = 7\n[task.swatter]\npretrain.epochs = 3\n");
    EXPECT_EQ(c.settings(task_id::rattle).pretrain.epochs, 7u);
    EXPECT_EQ(c.settings(task_id::swatter).pretrain.epochs, 3u);
}

TEST(Config, CliOverridesWin) {
    cli_overrides cli;
    cli.seed = 9;
    cli.out_dir = "/tmp/elsewhere";
    cli.deterministic = true;
    const auto c = parse_config("[run]\nseeds = 1, 2\n", cli);
    EXPECT_EQ(c.seeds, std::vector<std::uint64_t>{9});
    EXPECT_EQ(c.out_dir, fs::path("/tmp/elsewhere"));
    EXPECT_TRUE(c.deterministic);
}

TEST(Config, Errors) {
    EXPECT_THROW(parse_config("[run]\nbogus = 1\n"), config_error);
    EXPECT_THROW(parse_config("[run]\ntasks = kazoo\n"), config_error);
    EXPECT_THROW(parse_config("[run]\nmetrics = mse, bleu\n"), config_error);
    EXPECT_THROW(parse_config("[run]\nseeds = \n"), config_error);
    EXPECT_THROW(parse_config("[task.kazoo]\npretrain.epochs = 1\n"), config_error);
    EXPECT_THROW(parse_config("[task.rattle]\npretrain.nonsense = 1\n"), config_error);
    EXPECT_THROW(parse_config("[eval]\ndtw_repeats = 1\n"), config_error);
    EXPECT_THROW(parse_config("[datasets]\nrattle = /nonexistent/dir\n"), config_error);
    EXPECT_THROW(load_config("/nonexistent/config.ini"), config_error);
}

// ---------------------------------------------------------------- hashing

TEST(Hashing, Fnv1aReferenceValues) {
    EXPECT_EQ(hex16(fnv1a("")), "cbf29ce484222325");
    EXPECT_EQ(hex16(fnv1a("a")), "af63dc4c8601ec8c");
    EXPECT_EQ(hex16(fnv1a("foobar")), "85944171f73967e8");
}

TEST(Hashing, ConfigHashTracksContent) {
    const auto a = parse_config("");
    const auto b = parse_config("");
    cli_overrides cli;
    cli.seed = 3;
    const auto c = parse_config("", cli);
    EXPECT_EQ(config_hash(a), config_hash(b));
    EXPECT_NE(config_hash(a), config_hash(c));
}

TEST(Budget, ScalesEpochsByFullOverSlice) {
    EXPECT_EQ(budget_epochs(20, 160, 160), 20u);
    EXPECT_EQ(budget_epochs(20, 160, 50), 64u);
    EXPECT_EQ(budget_epochs(20, 160, 100), 32u);
    EXPECT_EQ(budget_epochs(1, 2, 100000), 1u);
    EXPECT_THROW(budget_epochs(20, 160, 0), config_error);
}

// ---------------------------------------------------------------- MSE

TEST(EvalMse, Examples) {
    const auto spec = synth::spec_for(task_id::swatter);
    const std::vector<action_params> truth{{1.0, 1.0, 1.0}, {1.5, 0.7, 1.2}};
    const auto norm = action_normalizer::fit(spec, truth);
    const auto perfect = eval_mse(truth, truth, norm);
    EXPECT_EQ(perfect.raw, 0.0);
    EXPECT_EQ(perfect.normalized, 0.0);
    EXPECT_EQ(perfect.n, 2u);

    const std::vector<models::labeled_action> train{{0, {1.0, 1.0, 1.0}}, {1, {1.5, 0.7, 1.2}}};
    const auto oracle = oracle_actions(train, truth);
    EXPECT_EQ(eval_mse(oracle, truth, norm).raw, 0.0);

    const std::vector<action_params> off{{1.5, 1.0, 1.0}, {1.5, 0.7, 1.2}};
    EXPECT_NEAR(eval_mse(off, truth, norm).raw, 0.25 / 2, 1e-12);
}

TEST(EvalMse, ClipsBeforeComparing) {
    const auto spec = synth::spec_for(task_id::swatter);
    const std::vector<action_params> truth{{spec.limits[0].hi, 1.0, 1.0}};
    const auto norm = action_normalizer::fit(spec, {{1.0, 1.0, 1.0}, {1.5, 0.7, 1.2}});
    EXPECT_EQ(eval_mse({{spec.limits[0].hi + 5.0, 1.0, 1.0}}, truth, norm).raw, 0.0);
}

TEST(EvalMse, RandomBaselineExpectation) {
    const std::vector<models::labeled_action> train{{0, {0.0}}, {1, {2.0}}};
    EXPECT_DOUBLE_EQ(models::random_expected_error(train, {0.0}), 2.0);
}

TEST(EvalMse, Errors) {
    const auto spec = synth::spec_for(task_id::swatter);
    const auto norm = action_normalizer::fit(spec, {{1.0, 1.0, 1.0}, {1.5, 0.7, 1.2}});
    EXPECT_THROW(eval_mse({}, {}, norm), config_error);
    EXPECT_THROW(eval_mse({{1.0, 1.0, 1.0}}, {{1.0, 1.0, 1.0}, {1.0, 1.0, 1.0}}, norm), std::invalid_argument);
    EXPECT_THROW(eval_random_mse({}, {{1.0, 1.0, 1.0}}, norm), config_error);
}

// ---------------------------------------------------------------- rollouts

class Rollout : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        root_ = new fs::path(scratch("rollout"));
        auto c = small_config(*root_);
        c.per_task[task_id::rattle].data.behaviors = 30;
        pipe_ = new pipeline(c);
        ref_ = new rollout_reference(build_rollout_reference(pipe_->dataset(task_id::rattle), 5));
    }
    static void TearDownTestSuite() {
        delete ref_;
        delete pipe_;
        fs::remove_all(*root_);
        delete root_;
    }
    static fs::path* root_;
    static pipeline* pipe_;
    static rollout_reference* ref_;
};
fs::path* Rollout::root_ = nullptr;
pipeline* Rollout::pipe_ = nullptr;
rollout_reference* Rollout::ref_ = nullptr;

TEST_F(Rollout, GroundTruthScoresAreCentred) {
    const auto r = eval_dtw_rollout(*ref_, ref_->truth);
    EXPECT_EQ(r.scores.size(), 12u);
    EXPECT_GE(r.mean, -0.5);
    EXPECT_LE(r.mean, 0.5);
}

TEST_F(Rollout, QuietPredictionScoresFarAboveZero) {
    const auto spec = synth::spec_for(task_id::rattle);
    auto loud = *ref_;
    for (std::size_t k = 0; k < loud.truth.size(); ++k) {
        auto a = loud.truth[k];
        a[0] = spec.limits[0].hi;
        loud.truth[k] = a;
        loud.desired[k] = rollout_envelope(synth::simulate(spec, a, loud.record_seeds[k], loud.noise_level));
    }
    loud.stats = fit_reference_stats(loud, 5);
    action_params floor(spec.dims());
    for (std::size_t d = 0; d < spec.dims(); ++d)
        floor[d] = spec.limits[d].lo;
    const std::vector<action_params> quiet(loud.truth.size(), floor);
    EXPECT_GT(eval_dtw_rollout(loud, quiet).mean, 5.0);
}

TEST_F(Rollout, IdenticalSeedsGiveIdenticalScores) {
    const auto a = eval_dtw_rollout(*ref_, ref_->truth);
    const auto b = eval_dtw_rollout(*ref_, ref_->truth);
    EXPECT_EQ(a.scores, b.scores);
}

TEST_F(Rollout, RejectsCountMismatch) {
    EXPECT_THROW(eval_dtw_rollout(*ref_, {}), std::invalid_argument);
}

// ---------------------------------------------------------------- pipeline

TEST(Pipeline, SlicesAreNestedByBehaviour) {
    const auto root = scratch("slices");
    pipeline p(small_config(root));
    const auto& ds = p.dataset(task_id::rattle);
    const auto small = ds.train_slice(4), large = ds.train_slice(8);
    for (auto i : small)
        EXPECT_NE(std::find(large.begin(), large.end(), i), large.end());
    EXPECT_EQ(small.size(), 8u);
    EXPECT_THROW(p.encoder(task_id::rattle, 0, 9), config_error);
    fs::remove_all(root);
}

TEST(Pipeline, RerunSkipsStagesAndReproducesReport) {
    const auto root = scratch("idempotent");
    const auto cfg = small_config(root);
    pipeline first(cfg);
    run_pipeline(first);
    EXPECT_GT(first.counts().at("pretrain").ran, 0u);
    const auto report = slurp(cfg.out_dir / "report.json");

    pipeline second(cfg);
    run_pipeline(second);
    for (const auto& [stage, c] : second.counts())
        EXPECT_EQ(c.ran, 0u) << stage;
    EXPECT_EQ(slurp(cfg.out_dir / "report.json"), report);

    pipeline offline(cfg, false);
    EXPECT_NO_THROW(run_pipeline(offline));
    fs::remove_all(root);
}

TEST(Pipeline, FullSliceMatchesStandardRun) {
    const auto root = scratch("full_slice");
    pipeline p(small_config(root));
    const auto full = p.train_behaviors(task_id::rattle);
    EXPECT_EQ(full, 8u);
    const auto standard = p.evaluate(task_id::rattle, method::aurl, 0, full, false);
    const auto again = p.evaluate(task_id::rattle, method::aurl, 0, 8, false);
    EXPECT_EQ(standard.mse_raw, again.mse_raw);
    EXPECT_EQ(standard.model_hash, again.model_hash);
    fs::remove_all(root);
}

TEST(Pipeline, ChangedSeedChangesArtifacts) {
    const auto root = scratch("seed");
    pipeline p(small_config(root));
    const auto a = p.encoder(task_id::rattle, 0, 8);
    const auto b = p.encoder(task_id::rattle, 1, 8);
    EXPECT_NE(a, b);
    EXPECT_EQ(p.counts().at("pretrain").ran, 2u);
    fs::remove_all(root);
}

TEST(Pipeline, MissingArtifactIsStageFailure) {
    const auto root = scratch("offline");
    pipeline p(small_config(root), false);
    try {
        p.encoder(task_id::rattle, 0, 8);
        FAIL() << "expected stage_error";
    } catch (const stage_error& e) {
        EXPECT_FALSE(e.stage().empty());
        EXPECT_EQ(e.hash().size(), 16u);
    }
    fs::remove_all(root);
}

TEST(Report, SchemaFields) {
    const auto root = scratch("report");
    const auto cfg = small_config(root);
    pipeline p(cfg);
    const auto j = run_pipeline(p);
    EXPECT_EQ(j.at("schema"), report_schema);
    EXPECT_EQ(j.at("config_hash"), config_hash(cfg));
    ASSERT_EQ(j.at("results").size(), 4u);
    for (const auto& r : j.at("results")) {
        for (const char* k : {"task", "method", "seed", "slice", "n_test", "mse_raw", "mse_normalized",
                              "dtw_normalized_mean", "wall_time_s", "model_hash"})
            EXPECT_TRUE(r.contains(k)) << k;
        EXPECT_TRUE(r.at("wall_time_s").is_null());
        EXPECT_TRUE(std::isfinite(r.at("mse_raw").get<double>()));
        EXPECT_TRUE(std::isfinite(r.at("dtw_normalized_mean").get<double>()));
    }
    EXPECT_TRUE(j.at("dtw_reference").contains("rattle"));
    for (const char* f : {"report.json", "table_mse_raw.csv", "table_mse_normalized.csv", "table_dtw.csv",
                          "results.csv"})
        EXPECT_TRUE(fs::exists(cfg.out_dir / f)) << f;
    const auto sweep = run_sweep(p);
    EXPECT_EQ(sweep.at("schema"), sweep_schema);
    EXPECT_TRUE(fs::exists(cfg.out_dir / "sweep.svg"));
    fs::remove_all(root);
}

// ---------------------------------------------------------------- CLI

TEST(Cli, ExitCodes) {
    const std::string bin = SONACT_CLI;
    const auto root = scratch("cli");
    {
        std::ofstream f(root / "bad.ini");
        f << "[run]\nbogus = 1\n";
    }
    {
        std::ofstream f(root / "small.ini");
        f << small_ini;
    }
    EXPECT_EQ(exit_code_of(bin + " --help"), 0);
    EXPECT_EQ(exit_code_of(bin), 2);
    EXPECT_EQ(exit_code_of(bin + " --config " + (root / "missing.ini").string() + " eval"), 2);
    EXPECT_EQ(exit_code_of(bin + " --config " + (root / "bad.ini").string() + " eval"), 2);
    EXPECT_EQ(exit_code_of(bin + " --config " + (root / "small.ini").string() + " --out " + (root / "o").string()
                           + " report"),
              3);
    EXPECT_EQ(exit_code_of(bin + " --config " + (root / "small.ini").string() + " --out " + (root / "o").string()
                           + " --deterministic baseline"),
              0);
    fs::remove_all(root);
}
