// Command-line front end of the experiment pipeline.

#include <sonact/harness/config.hpp>
#include <sonact/harness/pipeline.hpp>
#include <sonact/harness/report.hpp>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <malloc.h>

#include <cstdio>
#include <iostream>

namespace {

using namespace sonact;
using namespace sonact::harness;

constexpr int exit_config = 2;
constexpr int exit_stage = 3;

struct global_options {
    std::optional<std::uint64_t> seed;
    std::string config_path;
    bool deterministic = false;
    std::string scale;
    std::string out;
    std::vector<std::string> tasks;
    std::string log_level = "info";
};

run_config make_config(const global_options& g) {
    cli_overrides cli;
    cli.seed = g.seed;
    if (!g.scale.empty())
        cli.scale_name = g.scale;
    if (!g.out.empty())
        cli.out_dir = g.out;
    cli.deterministic = g.deterministic;
    auto cfg = g.config_path.empty() ? parse_config("", cli) : load_config(g.config_path, cli);
    if (!g.tasks.empty()) {
        std::vector<task_id> keep;
        for (const auto& name : g.tasks) {
            task_id t;
            try {
                t = synth::parse_task(name);
            } catch (const std::invalid_argument& e) {
                throw config_error(std::string("--task: ") + e.what());
            }
            if (std::find(cfg.tasks.begin(), cfg.tasks.end(), t) == cfg.tasks.end())
                throw config_error("--task " + name + " is not among the configured tasks");
            keep.push_back(t);
        }
        cfg.tasks = keep;
        cfg.validate();
    }
    return cfg;
}

void print_records(const std::vector<eval_record>& records) {
    std::printf("%-11s %-15s %5s %6s %12s %12s %10s\n", "task", "method", "seed", "slice", "mse_raw", "mse_norm",
                "dtw");
    for (const auto& r : records) {
        std::printf("%-11s %-15s %5llu %6zu %12.5g %12.5g ", std::string(synth::to_string(r.task)).c_str(),
                    to_string(r.meth).c_str(), static_cast<unsigned long long>(r.seed), r.slice, r.mse_raw,
                    r.mse_normalized);
        if (r.dtw_normalized_mean)
            std::printf("%10.4g\n", *r.dtw_normalized_mean);
        else
            std::printf("%10s\n", "-");
    }
}

void log_counts(const pipeline& p) {
    for (const auto& [stage, c] : p.counts())
        spdlog::info("stage {}: {} ran, {} reused", stage, c.ran, c.reused);
}

} // namespace

int main(int argc, char** argv) {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);

    CLI::App app{"Audio-to-action pipeline: synthetic contact-microphone data, self-supervised pretraining, "
                 "linear probes, baselines and evaluation."};
    app.require_subcommand(1);
    global_options g;
    app.add_option("--seed", g.seed, "Run seed (replaces run.seeds)");
    app.add_option("--config", g.config_path, "INI configuration file")->check(CLI::ExistingFile);
    app.add_flag("--deterministic", g.deterministic, "Omit wall times so reports are byte-reproducible");
    app.add_option("--scale", g.scale, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
    app.add_option("--out", g.out, "Output directory (replaces run.out_dir)");
    app.add_option("--task", g.tasks, "Restrict to these tasks");
    app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off");

    auto* gen = app.add_subcommand("gen", "Generate the synthetic datasets");
    auto* pre = app.add_subcommand("pretrain", "Pretrain encoders");
    auto* probe = app.add_subcommand("probe", "Fit linear probes on the pretrained encoders");
    auto* sup = app.add_subcommand("supervised", "Train the end-to-end supervised baselines");
    bool augment = false;
    sup->add_flag("--augment", augment, "Train the augmented variant only");
    auto* base = app.add_subcommand("baseline", "Evaluate the random and oracle baselines");
    auto* eval = app.add_subcommand("eval", "Run every stage and write the report");
    auto* sweep = app.add_subcommand("sweep", "Low-data sweep over training slices");
    auto* report = app.add_subcommand("report", "Rewrite the report from existing artifacts only");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_config;
    }
    spdlog::set_level(spdlog::level::from_str(g.log_level));
    spdlog::set_pattern("[%H:%M:%S] %v");

    try {
        const auto cfg = make_config(g);
        pipeline p(cfg, !report->parsed());
        spdlog::info("config hash {}", p.hash());
        auto full = [&](task_id t) { return p.train_behaviors(t); };

        if (gen->parsed()) {
            for (auto t : cfg.tasks) {
                p.dataset(t);
                p.features(t);
                std::printf("%s %s\n", std::string(synth::to_string(t)).c_str(), p.dataset_dir(t).string().c_str());
            }
        } else if (pre->parsed()) {
            for (auto t : cfg.tasks)
                for (auto seed : cfg.seeds)
                    std::printf("%s\n", p.encoder(t, seed, full(t)).string().c_str());
        } else if (probe->parsed()) {
            for (auto t : cfg.tasks)
                for (auto seed : cfg.seeds)
                    std::printf("%s\n", p.probe(t, seed, full(t)).string().c_str());
        } else if (sup->parsed()) {
            for (auto t : cfg.tasks)
                for (auto seed : cfg.seeds) {
                    if (!augment)
                        std::printf("%s\n", p.supervised(t, seed, full(t), false).string().c_str());
                    if (augment || cfg.has_method(method::supervised_aug))
                        std::printf("%s\n", p.supervised(t, seed, full(t), true).string().c_str());
                }
        } else if (base->parsed()) {
            std::vector<eval_record> records;
            for (auto t : cfg.tasks)
                for (auto seed : cfg.seeds)
                    for (auto m : {method::random, method::oracle})
                        records.push_back(p.evaluate(t, m, seed, full(t), true));
            print_records(records);
        } else if (eval->parsed() || report->parsed()) {
            run_pipeline(p);
            print_records(p.run_all());
            std::printf("report: %s\n", (cfg.out_dir / "report.json").string().c_str());
        } else if (sweep->parsed()) {
            run_sweep(p);
            print_records(p.sweep());
            std::printf("sweep: %s\n", (cfg.out_dir / "sweep.json").string().c_str());
        }
        log_counts(p);
    } catch (const config_error& e) {
        spdlog::error("{}", e.what());
        return exit_config;
    } catch (const stage_error& e) {
        spdlog::error("{}", e.what());
        return exit_stage;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return exit_stage;
    }
    return 0;
}
