#pragma once

// Orchestration: dataset generation, pretraining, probe and supervised
// training, evaluation and the low-data sweep. Every stage writes a
// content-addressed artifact named by the hash of its inputs and is skipped
// when that artifact already exists.

#include <sonact/audio/normalize.hpp>
#include <sonact/harness/config.hpp>
#include <sonact/harness/features.hpp>
#include <sonact/harness/metrics.hpp>
#include <sonact/models/baselines.hpp>
#include <sonact/models/policy.hpp>
#include <sonact/ssl/byol.hpp>
#include <sonact/synth/dataset.hpp>

#include <spdlog/spdlog.h>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sonact::harness {

using nlohmann::json;

/// A stage failed; carries the stage name and the hash of its inputs.
class stage_error : public std::runtime_error {
public:
    stage_error(std::string stage, std::string hash, const std::string& what)
        : std::runtime_error("stage '" + stage + "' [" + hash + "] failed: " + what), stage_(std::move(stage)),
          hash_(std::move(hash)) {}

    const std::string& stage() const noexcept { return stage_; }
    const std::string& hash() const noexcept { return hash_; }

private:
    std::string stage_, hash_;
};

struct stage_counts {
    std::size_t ran = 0;
    std::size_t reused = 0;
};

inline void write_json_atomic(const fs::path& path, const json& j) {
    fs::create_directories(path.parent_path());
    synth::detail::write_text_atomic(path, j.dump(1) + "\n");
}

inline json read_json(const fs::path& path) {
    std::ifstream f(path);
    if (!f)
        throw format_error("cannot open " + path.string());
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw format_error(path.string() + ": " + e.what());
    }
}

/// Epochs that keep the number of sample visits of a full-train run when only
/// `slice` of `full` behaviours are used.
inline std::size_t budget_epochs(std::size_t epochs, std::size_t full, std::size_t slice) {
    if (slice == 0)
        throw config_error("slice must be >= 1 behaviour");
    const auto e = std::llround(static_cast<double>(epochs) * static_cast<double>(full) / static_cast<double>(slice));
    return static_cast<std::size_t>(std::max<long long>(1, e));
}

/// One evaluated (task, method, seed, slice) cell.
struct eval_record {
    task_id task = task_id::rattle;
    method meth = method::aurl;
    std::string variant;
    std::uint64_t seed = 0;
    std::size_t slice = 0;
    std::size_t n_test = 0;
    double mse_raw = 0.0;
    double mse_normalized = 0.0;
    std::optional<double> dtw_normalized_mean;
    double wall_time_s = 0.0;
    std::string model_hash;
};

/// Per-task DTW reference summary.
struct dtw_reference_summary {
    double mu = 0.0;
    double sigma = 1.0;
    std::size_t n_pairs = 0;
    double ground_truth_mean = 0.0;
};

class pipeline {
public:
    /// With `allow_compute` false every missing artifact is a stage failure.
    explicit pipeline(run_config cfg, bool allow_compute = true)
        : cfg_(std::move(cfg)), compute_(allow_compute), hash_(config_hash(cfg_)) {}

    const run_config& config() const noexcept { return cfg_; }
    const std::string& hash() const noexcept { return hash_; }
    const std::map<std::string, stage_counts>& counts() const noexcept { return counts_; }

    // ------------------------------------------------------------ data

    fs::path dataset_dir(task_id t) const {
        if (auto it = cfg_.datasets.find(t); it != cfg_.datasets.end())
            return it->second;
        return cfg_.data_dir / (std::string(synth::to_string(t)) + "-" + data_key_hash(t));
    }

    /// Generates the dataset if needed and returns it loaded.
    const synth::dataset& dataset(task_id t) {
        if (auto it = datasets_.find(t); it != datasets_.end())
            return it->second;
        const auto dir = dataset_dir(t);
        const auto hash = data_key_hash(t);
        run_stage("gen", hash, !fs::exists(dir / "manifest.json"), [&] {
            if (cfg_.datasets.count(t))
                throw config_error("dataset for " + std::string(synth::to_string(t)) + " missing at " + dir.string());
            const auto& d = cfg_.settings(t).data;
            synth::generate_options opt;
            opt.n_behaviors = d.behaviors;
            opt.repeats = d.repeats;
            opt.noise_level = d.noise_level;
            opt.master_seed = d.seed;
            opt.overwrite = true;
            spdlog::info("gen {}: {} behaviours x {} repeats -> {}", synth::to_string(t), d.behaviors, d.repeats,
                         dir.string());
            synth::generate_dataset(t, opt, dir);
        });
        try {
            return datasets_.emplace(t, synth::dataset::load(dir / "manifest.json")).first->second;
        } catch (const format_error& e) {
            throw stage_error("gen", hash, e.what());
        }
    }

    /// Raw mel spectrograms of every record of a task, in manifest order.
    const std::vector<audio::mel_spectrogram>& features(task_id t) {
        if (auto it = features_.find(t); it != features_.end())
            return it->second;
        const auto& ds = dataset(t);
        std::vector<audio::mel_spectrogram> specs;
        try {
            specs = dataset_features(ds);
        } catch (const std::exception& e) {
            throw stage_error("features", data_hash(t), e.what());
        }
        return features_.emplace(t, std::move(specs)).first->second;
    }

    /// Hash identifying a task's data: the generation settings, or the
    /// manifest text for an explicitly supplied dataset.
    std::string data_hash(task_id t) {
        if (cfg_.datasets.count(t)) {
            std::ifstream f(dataset_dir(t) / "manifest.json");
            std::stringstream ss;
            ss << f.rdbuf();
            return hex16(fnv1a(ss.str()));
        }
        return data_key_hash(t);
    }

    std::size_t train_behaviors(task_id t) { return dataset(t).manifest().split.train.size(); }

    // ------------------------------------------------------------ training

    /// Pretrained encoder for (task, seed, slice); returns the checkpoint path.
    fs::path encoder(task_id t, std::uint64_t seed, std::size_t slice) {
        const auto& s = cfg_.settings(t);
        const bool shared = s.pretrain.kind == ssl::variant::byol_all;
        const auto tasks = shared ? cfg_.tasks : std::vector<task_id>{t};
        json data = json::object();
        for (auto u : tasks) {
            check_slice(u, slice);
            data[std::string(synth::to_string(u))] = data_hash(u);
        }
        auto pc = s.pretrain;
        pc.epochs = budget_epochs(pc.epochs, train_behaviors(t), slice);
        pc.seed = synth::derive_seed(seed, 12);
        json key = {{"stage", "encoder"}, {"data", data}, {"encoder", s.encoder}, {"pretrain", pretrain_json(pc)},
                    {"seed", seed}, {"slice", slice}};
        const auto hash = content_hash(key);
        const auto path = cfg_.out_dir / "encoders" / ("encoder-" + hash + ".ckpt");
        run_stage("pretrain", hash, !complete(path), [&] {
            std::vector<audio::mel_spectrogram> raw;
            std::vector<std::size_t> groups;
            for (std::size_t u = 0; u < tasks.size(); ++u) {
                const auto& ds = dataset(tasks[u]);
                const auto& feats = features(tasks[u]);
                for (auto i : ds.train_slice(slice)) {
                    raw.push_back(ssl::to_channels(feats[i], s.encoder.in_channels));
                    groups.push_back(u * 1000000 + ds.record(i).behavior_id);
                }
            }
            auto state = ssl::encoder_state::create(s.encoder, audio::fit_channel_stats(raw),
                                                    synth::derive_seed(seed, 11));
            ssl::view_pool pool;
            for (std::size_t k = 0; k < raw.size(); ++k)
                pool.add(state.prepare(raw[k]), groups[k]);
            spdlog::info("pretrain {} {} seed={} slice={} epochs={} samples={}", ssl::to_string(pc.kind),
                         shared ? std::string("all") : std::string(synth::to_string(t)), seed, slice, pc.epochs,
                         pool.size());
            const auto t0 = clock::now();
            auto res = ssl::pretrain(state, pool, pc, [&](std::size_t e, double l) {
                if (e == 1 || e % 10 == 0 || e == pc.epochs)
                    spdlog::info("  epoch {}/{} loss {:.4f}", e, pc.epochs, l);
            });
            state.info = key;
            fs::create_directories(path.parent_path());
            state.save(path);
            auto trace = path;
            trace.replace_extension(".loss.csv");
            ssl::write_loss_trace(trace, res.loss_trace);
            finish(path, key, seconds_since(t0));
        });
        return path;
    }

    /// Linear probe on the frozen encoder for (task, seed, slice).
    fs::path probe(task_id t, std::uint64_t seed, std::size_t slice) {
        const auto enc_path = encoder(t, seed, slice);
        const auto& s = cfg_.settings(t);
        auto pc = s.probe;
        pc.seed = synth::derive_seed(seed, 15);
        json key = {{"stage", "probe"},  {"encoder", artifact_hash(enc_path)}, {"data", data_hash(t)},
                    {"probe", probe_json(pc)}, {"seed", seed}, {"slice", slice}};
        const auto hash = content_hash(key);
        const auto path = task_dir(t) / ("probe-" + hash + ".ckpt");
        run_stage("probe", hash, !complete(path), [&] {
            const auto& ds = dataset(t);
            const auto& feats = features(t);
            const auto train = ds.train_slice(slice);
            auto enc = ssl::encoder_state::load(enc_path);
            const auto norm = normalizer(t, train);
            const auto t0 = clock::now();
            auto [model, fit] = models::train_probe(std::move(enc), norm, gather(feats, train), actions(ds, train), pc);
            spdlog::info("probe {} seed={} slice={}: loss {:.6f} after {} epochs", synth::to_string(t), seed, slice,
                         fit.train_loss, fit.epochs_run);
            fs::create_directories(path.parent_path());
            model.save(path);
            finish(path, key, seconds_since(t0) + wall_time(enc_path),
                   {{"train_loss", fit.train_loss}, {"epochs_run", fit.epochs_run}});
        });
        return path;
    }

    /// End-to-end supervised model for (task, seed, slice), with or without augmentation.
    fs::path supervised(task_id t, std::uint64_t seed, std::size_t slice, bool augment) {
        check_slice(t, slice);
        const auto& s = cfg_.settings(t);
        auto sc = s.supervised;
        sc.augment = augment;
        sc.epochs = budget_epochs(sc.epochs, train_behaviors(t), slice);
        sc.seed = synth::derive_seed(seed, augment ? 17 : 16);
        json key = {{"stage", "supervised"}, {"data", data_hash(t)},    {"encoder", s.encoder},
                    {"supervised", supervised_json(sc)}, {"seed", seed}, {"slice", slice}};
        const auto hash = content_hash(key);
        const auto path = task_dir(t) / ("supervised-" + hash + ".ckpt");
        run_stage(augment ? "supervised_aug" : "supervised", hash, !complete(path), [&] {
            const auto& ds = dataset(t);
            const auto& feats = features(t);
            const auto train = ds.train_slice(slice);
            auto raw = gather(feats, train);
            std::vector<audio::mel_spectrogram> widened;
            widened.reserve(raw.size());
            for (const auto& r : raw)
                widened.push_back(ssl::to_channels(r, s.encoder.in_channels));
            auto model = models::supervised_model::create(s.encoder, audio::fit_channel_stats(widened),
                                                          normalizer(t, train), synth::derive_seed(seed, 13));
            spdlog::info("supervised{} {} seed={} slice={} epochs={}", augment ? "+aug" : "", synth::to_string(t),
                         seed, slice, sc.epochs);
            const auto t0 = clock::now();
            auto trace = models::train_supervised(model, raw, actions(ds, train), sc, [&](std::size_t e, double l) {
                if (e == 1 || e % 10 == 0 || e == sc.epochs)
                    spdlog::info("  epoch {}/{} loss {:.5f}", e, sc.epochs, l);
            });
            fs::create_directories(path.parent_path());
            model.save(path);
            auto trace_path = path;
            trace_path.replace_extension(".loss.csv");
            ssl::write_loss_trace(trace_path, trace);
            finish(path, key, seconds_since(t0), {{"final_loss", trace.back()}});
        });
        return path;
    }

    // ------------------------------------------------------------ evaluation

    /// Pooled DTW statistics and the ground-truth re-simulation score of a task.
    dtw_reference_summary dtw_reference(task_id t) {
        const auto repeats = cfg_.settings(t).eval.dtw_repeats;
        json key = {{"stage", "dtw_reference"}, {"data", data_hash(t)}, {"repeats", repeats}};
        const auto hash = content_hash(key);
        const auto path = task_dir(t) / ("dtwref-" + hash + ".json");
        run_stage("dtw_reference", hash, !fs::exists(path), [&] {
            spdlog::info("dtw reference {}: {} re-simulations per test clip", synth::to_string(t), repeats);
            const auto t0 = clock::now();
            auto& ref = rollout_ref(t);
            ref.stats = fit_reference_stats(ref, repeats);
            const auto gt = eval_dtw_rollout(ref, ref.truth);
            write_json_atomic(path, {{"key", key},
                                     {"mu", ref.stats.mu},
                                     {"sigma", ref.stats.sigma},
                                     {"n_pairs", ref.stats.n_pairs},
                                     {"ground_truth_mean", gt.mean},
                                     {"wall_time_s", seconds_since(t0)}});
        });
        const auto j = read_json(path);
        dtw_reference_summary out{j.at("mu").get<double>(), j.at("sigma").get<double>(),
                                  j.at("n_pairs").get<std::size_t>(), j.at("ground_truth_mean").get<double>()};
        references_stats_[t] = {out.mu, out.sigma, out.n_pairs};
        return out;
    }

    /// Evaluates one method. DTW is computed when the config asks for it and
    /// `with_dtw` is set.
    eval_record evaluate(task_id t, method m, std::uint64_t seed, std::size_t slice, bool with_dtw) {
        check_slice(t, slice);
        eval_record rec;
        rec.task = t;
        rec.meth = m;
        rec.seed = seed;
        rec.slice = slice;
        rec.variant = m == method::aurl ? ssl::to_string(cfg_.settings(t).pretrain.kind) : "";

        std::optional<fs::path> model_path;
        json model_key;
        switch (m) {
        case method::aurl: model_path = probe(t, seed, slice); break;
        case method::supervised: model_path = supervised(t, seed, slice, false); break;
        case method::supervised_aug: model_path = supervised(t, seed, slice, true); break;
        case method::random:
        case method::oracle: break;
        }
        if (model_path)
            model_key = artifact_hash(*model_path);
        else
            model_key = {{"baseline", to_string(m)}, {"data", data_hash(t)}, {"slice", slice}};
        rec.model_hash = content_hash(model_key);

        // MSE
        json mkey = {{"stage", "eval_mse"}, {"model", model_key}, {"data", data_hash(t)}};
        const auto mhash = content_hash(mkey);
        const auto mpath = task_dir(t) / ("mse-" + mhash + ".json");
        run_stage("eval_mse", mhash, !fs::exists(mpath), [&] {
            const auto t0 = clock::now();
            const auto r = m == method::random ? random_mse(t, slice) : mse_of(predict(t, m, model_path, slice, seed), t, slice);
            write_json_atomic(mpath, {{"key", mkey},
                                      {"mse_raw", r.raw},
                                      {"mse_normalized", r.normalized},
                                      {"n_test", r.n},
                                      {"wall_time_s", seconds_since(t0)}});
        });
        const auto mj = read_json(mpath);
        rec.mse_raw = mj.at("mse_raw").get<double>();
        rec.mse_normalized = mj.at("mse_normalized").get<double>();
        rec.n_test = mj.at("n_test").get<std::size_t>();
        rec.wall_time_s = mj.at("wall_time_s").get<double>() + (model_path ? wall_time(*model_path) : 0.0);

        if (with_dtw && cfg_.metrics.count("dtw")) {
            const auto ref = dtw_reference(t);
            json dkey = {{"stage", "eval_dtw"},
                         {"model", model_key},
                         {"reference", {ref.mu, ref.sigma}},
                         {"rollout_seed", m == method::random ? json(seed) : json(nullptr)}};
            const auto dhash = content_hash(dkey);
            const auto dpath = task_dir(t) / ("dtw-" + dhash + ".json");
            run_stage("eval_dtw", dhash, !fs::exists(dpath), [&] {
                const auto t0 = clock::now();
                const auto r = eval_dtw_rollout(rollout_ref(t), predict(t, m, model_path, slice, seed));
                write_json_atomic(dpath, {{"key", dkey},
                                          {"dtw_normalized_mean", r.mean},
                                          {"scores", r.scores},
                                          {"wall_time_s", seconds_since(t0)}});
            });
            const auto dj = read_json(dpath);
            rec.dtw_normalized_mean = dj.at("dtw_normalized_mean").get<double>();
            rec.wall_time_s += dj.at("wall_time_s").get<double>();
        }
        return rec;
    }

    /// gen -> pretrain -> probe/supervised -> eval over every task, method and seed.
    std::vector<eval_record> run_all() {
        std::vector<eval_record> out;
        for (auto t : cfg_.tasks)
            for (auto seed : cfg_.seeds)
                for (auto m : cfg_.methods)
                    out.push_back(evaluate(t, m, seed, train_behaviors(t), true));
        return out;
    }

    /// MSE of every sweep method at every slice.
    std::vector<eval_record> sweep() {
        std::vector<eval_record> out;
        for (auto t : cfg_.tasks)
            for (auto n : cfg_.sweep_slices)
                check_slice(t, n);
        for (auto t : cfg_.tasks)
            for (auto n : cfg_.sweep_slices)
                for (auto seed : cfg_.seeds)
                    for (auto m : cfg_.sweep_methods)
                        out.push_back(evaluate(t, m, seed, n, false));
        return out;
    }

private:
    using clock = std::chrono::steady_clock;

    static double seconds_since(clock::time_point t0) {
        return std::chrono::duration<double>(clock::now() - t0).count();
    }

    std::string data_key_hash(task_id t) const {
        const auto& d = cfg_.settings(t).data;
        return content_hash({{"task", std::string(synth::to_string(t))},
                             {"behaviors", d.behaviors},
                             {"repeats", d.repeats},
                             {"noise_level", d.noise_level},
                             {"seed", d.seed},
                             {"schema", synth::manifest_schema_version}});
    }

    fs::path task_dir(task_id t) const { return cfg_.out_dir / std::string(synth::to_string(t)); }

    void check_slice(task_id t, std::size_t slice) {
        const auto n = train_behaviors(t);
        if (slice < 1 || slice > n)
            throw config_error("slice of " + std::to_string(slice) + " behaviours is outside [1, " + std::to_string(n)
                               + "] for " + std::string(synth::to_string(t)));
    }

    template <class F>
    void run_stage(const std::string& stage, const std::string& hash, bool needed, F&& body) {
        if (!needed) {
            ++counts_[stage].reused;
            return;
        }
        if (!compute_)
            throw stage_error(stage, hash, "artifact missing and computation is disabled");
        try {
            body();
        } catch (const config_error&) {
            throw;
        } catch (const stage_error&) {
            throw;
        } catch (const std::exception& e) {
            throw stage_error(stage, hash, e.what());
        }
        ++counts_[stage].ran;
    }

    static fs::path sidecar(const fs::path& artifact) {
        auto p = artifact;
        p += ".json";
        return p;
    }

    static bool complete(const fs::path& artifact) { return fs::exists(artifact) && fs::exists(sidecar(artifact)); }

    static void finish(const fs::path& artifact, const json& key, double seconds, json extra = json::object()) {
        extra["key"] = key;
        extra["hash"] = content_hash(key);
        extra["wall_time_s"] = seconds;
        write_json_atomic(sidecar(artifact), extra);
    }

    static std::string artifact_hash(const fs::path& artifact) {
        return read_json(sidecar(artifact)).at("hash").get<std::string>();
    }

    static double wall_time(const fs::path& artifact) {
        return read_json(sidecar(artifact)).at("wall_time_s").get<double>();
    }

    static json pretrain_json(const ssl::pretrain_config& p) {
        task_settings s;
        s.pretrain = p;
        auto j = to_json(s).at("pretrain");
        j["seed"] = p.seed;
        return j;
    }

    static json probe_json(const models::probe_config& p) {
        task_settings s;
        s.probe = p;
        auto j = to_json(s).at("probe");
        j["seed"] = p.seed;
        return j;
    }

    static json supervised_json(const models::supervised_config& c) {
        task_settings s;
        s.supervised = c;
        auto j = to_json(s).at("supervised");
        j["seed"] = c.seed;
        j["augment"] = c.augment;
        if (c.augment) {
            s.pretrain.aug = c.aug;
            const auto p = to_json(s).at("pretrain");
            j["aug"] = {{"crop_scale_time", p.at("crop_scale_time")}, {"crop_scale_mel", p.at("crop_scale_mel")}};
        }
        return j;
    }

    static std::vector<audio::mel_spectrogram> gather(const std::vector<audio::mel_spectrogram>& all,
                                                      const std::vector<std::size_t>& idx) {
        std::vector<audio::mel_spectrogram> out;
        out.reserve(idx.size());
        for (auto i : idx)
            out.push_back(all.at(i));
        return out;
    }

    static std::vector<action_params> actions(const synth::dataset& ds, const std::vector<std::size_t>& idx) {
        std::vector<action_params> out;
        out.reserve(idx.size());
        for (auto i : idx)
            out.push_back(ds.record(i).action);
        return out;
    }

    static std::vector<models::labeled_action> labeled(const synth::dataset& ds, const std::vector<std::size_t>& idx) {
        std::vector<models::labeled_action> out;
        out.reserve(idx.size());
        for (auto i : idx)
            out.push_back({ds.record(i).behavior_id, ds.record(i).action});
        return out;
    }

    action_normalizer normalizer(task_id t, const std::vector<std::size_t>& train) {
        const auto& ds = dataset(t);
        return action_normalizer::fit(ds.spec(), actions(ds, train));
    }

    std::vector<action_params> predict(task_id t, method m, const std::optional<fs::path>& model_path,
                                       std::size_t slice, std::uint64_t seed) {
        const auto& ds = dataset(t);
        const auto& test = ds.test_records();
        switch (m) {
        case method::aurl: {
            auto model = models::probe_model::load(*model_path);
            return model.predict(gather(features(t), test));
        }
        case method::supervised:
        case method::supervised_aug: {
            auto model = models::supervised_model::load(*model_path);
            return model.predict(gather(features(t), test));
        }
        case method::random:
            return random_rollout_actions(labeled(ds, ds.train_slice(slice)), test.size(),
                                          synth::derive_seed(seed, 18));
        case method::oracle:
            return oracle_actions(labeled(ds, ds.train_slice(slice)), actions(ds, test));
        }
        throw std::logic_error("predict: unknown method");
    }

    mse_result mse_of(const std::vector<action_params>& predicted, task_id t, std::size_t slice) {
        const auto& ds = dataset(t);
        return eval_mse(predicted, actions(ds, ds.test_records()), normalizer(t, ds.train_slice(slice)));
    }

    mse_result random_mse(task_id t, std::size_t slice) {
        const auto& ds = dataset(t);
        const auto train = ds.train_slice(slice);
        return eval_random_mse(labeled(ds, train), actions(ds, ds.test_records()), normalizer(t, train));
    }

    /// Desired envelopes of a task, with the statistics of the last
    /// dtw_reference() call.
    rollout_reference& rollout_ref(task_id t) {
        auto it = references_.find(t);
        if (it == references_.end())
            it = references_.emplace(t, desired_envelopes(dataset(t))).first;
        if (auto st = references_stats_.find(t); st != references_stats_.end())
            it->second.stats = st->second;
        return it->second;
    }

    run_config cfg_;
    bool compute_;
    std::string hash_;
    std::map<std::string, stage_counts> counts_;
    std::map<task_id, synth::dataset> datasets_;
    std::map<task_id, std::vector<audio::mel_spectrogram>> features_;
    std::map<task_id, rollout_reference> references_;
    std::map<task_id, align::normalization_stats> references_stats_;
};

} // namespace sonact::harness
