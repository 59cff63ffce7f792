#pragma once

#include <sonact/audio/wav.hpp>
#include <sonact/error.hpp>
#include <sonact/synth/simulator.hpp>

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace sonact::synth {

inline constexpr int manifest_schema_version = 1;
inline constexpr double train_fraction = 0.8;

struct sample_record {
    std::size_t behavior_id = 0;
    std::size_t repeat_idx = 0;
    std::uint64_t seed = 0;
    action_params action;
    std::string audio_path;
};

struct dataset_split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

struct dataset_manifest {
    task_id task = task_id::rattle;
    int schema_version = manifest_schema_version;
    int sample_rate = audio::capture_rate;
    std::size_t channels = 1;
    double duration_s = audio::clip_seconds;
    double noise_level = default_noise_level;
    action_spec spec;
    std::vector<sample_record> records;
    dataset_split split;
};

inline nlohmann::json to_json(const action_spec& s) {
    nlohmann::json b = nlohmann::json::array();
    std::vector<std::size_t> ints;
    for (std::size_t d = 0; d < s.dims(); ++d) {
        b.push_back({s.limits[d].lo, s.limits[d].hi});
        if (s.integer[d])
            ints.push_back(d);
    }
    return {{"task_id", to_string(s.task)}, {"dims", s.dims()}, {"names", s.names}, {"bounds", b},
            {"integer_dims", ints}};
}

inline action_spec action_spec_from_json(const nlohmann::json& j) {
    action_spec s;
    s.task = parse_task(j.at("task_id").get<std::string>());
    s.names = j.at("names").get<std::vector<std::string>>();
    for (const auto& b : j.at("bounds"))
        s.limits.push_back({b.at(0).get<double>(), b.at(1).get<double>()});
    s.integer.assign(s.names.size(), false);
    for (auto d : j.at("integer_dims").get<std::vector<std::size_t>>())
        s.integer.at(d) = true;
    if (j.at("dims").get<std::size_t>() != s.names.size())
        throw format_error("manifest action_spec: dims disagrees with names");
    s.validate();
    return s;
}

inline nlohmann::json to_json(const dataset_manifest& m) {
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : m.records)
        recs.push_back({{"behavior_id", r.behavior_id},
                        {"repeat_idx", r.repeat_idx},
                        {"seed", r.seed},
                        {"action", r.action},
                        {"audio_path", r.audio_path}});
    return {{"task_id", to_string(m.task)},
            {"schema_version", m.schema_version},
            {"sample_rate", m.sample_rate},
            {"channels", m.channels},
            {"duration_s", m.duration_s},
            {"noise_level", m.noise_level},
            {"action_spec", to_json(m.spec)},
            {"records", recs},
            {"split", {{"train", m.split.train}, {"test", m.split.test}}}};
}

inline dataset_manifest manifest_from_json(const nlohmann::json& j) {
    dataset_manifest m;
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version != manifest_schema_version)
        throw format_error("manifest: unsupported schema_version " + std::to_string(m.schema_version));
    m.task = parse_task(j.at("task_id").get<std::string>());
    m.sample_rate = j.at("sample_rate").get<int>();
    m.channels = j.at("channels").get<std::size_t>();
    m.duration_s = j.at("duration_s").get<double>();
    m.noise_level = j.at("noise_level").get<double>();
    m.spec = action_spec_from_json(j.at("action_spec"));
    for (const auto& r : j.at("records"))
        m.records.push_back({r.at("behavior_id").get<std::size_t>(), r.at("repeat_idx").get<std::size_t>(),
                             r.at("seed").get<std::uint64_t>(), r.at("action").get<action_params>(),
                             r.at("audio_path").get<std::string>()});
    m.split.train = j.at("split").at("train").get<std::vector<std::size_t>>();
    m.split.test = j.at("split").at("test").get<std::vector<std::size_t>>();
    return m;
}

namespace detail {

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f)
            throw std::runtime_error("cannot write " + tmp.string());
        f << text;
        if (!f)
            throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

} // namespace detail

inline std::string audio_name(std::size_t behavior, std::size_t repeat) {
    return "audio/" + std::to_string(behavior) + "_" + std::to_string(repeat) + ".wav";
}

struct generate_options {
    std::size_t n_behaviors = 200;
    std::size_t repeats = 5;
    double noise_level = default_noise_level;
    std::uint64_t master_seed = 0;
    bool overwrite = false;
};

/// Simulates every (behaviour, repeat) pair, writes the WAVs and then the manifest.
/// Test behaviours are the last 20 % of behaviour ids; actions are i.i.d., so this is
/// equivalent to a random split while keeping slices of the train set nested by id.
inline dataset_manifest generate_dataset(task_id task, const generate_options& opt,
                                         const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    if (opt.n_behaviors < 2)
        throw std::invalid_argument("generate_dataset: need at least 2 behaviours");
    if (opt.repeats < 1)
        throw std::invalid_argument("generate_dataset: need at least 1 repeat");
    if (fs::exists(out_dir / "manifest.json") && !opt.overwrite)
        throw std::runtime_error("generate_dataset: " + out_dir.string()
                                 + " already holds a dataset (pass overwrite to replace it)");
    std::error_code ec;
    fs::create_directories(out_dir / "audio", ec);
    if (ec)
        throw std::runtime_error("generate_dataset: cannot create " + (out_dir / "audio").string() + ": "
                                 + ec.message());

    dataset_manifest m;
    m.task = task;
    m.spec = spec_for(task);
    m.channels = task_channels(task);
    m.noise_level = opt.noise_level;

    for (std::size_t b = 0; b < opt.n_behaviors; ++b) {
        const auto action = sample_action(m.spec, record_seed(opt.master_seed, b, 0));
        for (std::size_t r = 0; r < opt.repeats; ++r) {
            sample_record rec{b, r, record_seed(opt.master_seed, b, r + 1), action, audio_name(b, r)};
            audio::write_wav(out_dir / rec.audio_path, simulate(m.spec, action, rec.seed, opt.noise_level));
            m.records.push_back(std::move(rec));
        }
    }
    const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(opt.n_behaviors)));
    for (std::size_t b = 0; b < opt.n_behaviors; ++b)
        (b < n_train ? m.split.train : m.split.test).push_back(b);

    detail::write_text_atomic(out_dir / "manifest.json", to_json(m).dump(1) + "\n");
    return m;
}

/// Loaded manifest plus index structures. Audio is read on demand.
class dataset {
public:
    dataset() = default;

    static dataset load(const std::filesystem::path& manifest_path) {
        namespace fs = std::filesystem;
        std::ifstream f(manifest_path);
        if (!f)
            throw format_error("cannot open manifest " + manifest_path.string());
        nlohmann::json j;
        try {
            f >> j;
        } catch (const nlohmann::json::exception& e) {
            throw format_error("manifest " + manifest_path.string() + ": " + e.what());
        }
        dataset ds;
        try {
            ds.manifest_ = manifest_from_json(j);
        } catch (const nlohmann::json::exception& e) {
            throw format_error("manifest " + manifest_path.string() + ": " + e.what());
        }
        ds.root_ = manifest_path.parent_path();
        ds.index();
        ds.verify_audio();
        return ds;
    }

    const dataset_manifest& manifest() const noexcept { return manifest_; }
    const std::filesystem::path& root() const noexcept { return root_; }
    task_id task() const noexcept { return manifest_.task; }
    const action_spec& spec() const noexcept { return manifest_.spec; }
    std::size_t size() const noexcept { return manifest_.records.size(); }
    const sample_record& record(std::size_t i) const { return manifest_.records.at(i); }

    /// Record indices of the train / test split, ordered by (behavior_id, repeat_idx).
    const std::vector<std::size_t>& train_records() const noexcept { return train_; }
    const std::vector<std::size_t>& test_records() const noexcept { return test_; }

    /// Record indices of every repeat of a behaviour, by repeat index.
    const std::vector<std::size_t>& repeats_of(std::size_t behavior_id) const { return by_behavior_.at(behavior_id); }

    /// Train records restricted to the first `n_behaviors` train behaviours (by id).
    std::vector<std::size_t> train_slice(std::size_t n_behaviors) const {
        const auto& ids = manifest_.split.train;
        if (n_behaviors > ids.size())
            throw config_error("slice of " + std::to_string(n_behaviors) + " behaviours exceeds the "
                               + std::to_string(ids.size()) + " train behaviours");
        std::vector<std::size_t> sorted(ids.begin(), ids.end());
        std::sort(sorted.begin(), sorted.end());
        std::vector<std::size_t> out;
        for (std::size_t k = 0; k < n_behaviors; ++k)
            for (auto r : repeats_of(sorted[k]))
                out.push_back(r);
        return out;
    }

    audio::audio_clip load_clip(std::size_t record_index) const {
        return audio::read_wav(root_ / record(record_index).audio_path);
    }

private:
    void index() {
        const auto& m = manifest_;
        std::set<std::pair<std::size_t, std::size_t>> seen;
        for (std::size_t i = 0; i < m.records.size(); ++i) {
            const auto& r = m.records[i];
            if (!seen.emplace(r.behavior_id, r.repeat_idx).second)
                throw format_error("manifest: duplicate record (behavior " + std::to_string(r.behavior_id)
                                   + ", repeat " + std::to_string(r.repeat_idx) + ")");
            check_action(m.spec, r.action);
            by_behavior_[r.behavior_id].push_back(i);
        }
        for (auto& [b, idx] : by_behavior_) {
            std::sort(idx.begin(), idx.end(),
                      [&](auto x, auto y) { return m.records[x].repeat_idx < m.records[y].repeat_idx; });
            for (auto i : idx)
                if (m.records[i].action != m.records[idx.front()].action)
                    throw format_error("manifest: repeats of behaviour " + std::to_string(b) + " disagree on action");
        }

        const std::set<std::size_t> train(m.split.train.begin(), m.split.train.end());
        for (auto b : m.split.test)
            if (train.count(b))
                throw format_error("manifest: behaviour " + std::to_string(b) + " is in both train and test splits");
        auto collect = [&](const std::vector<std::size_t>& ids, std::vector<std::size_t>& out) {
            std::vector<std::size_t> sorted(ids.begin(), ids.end());
            std::sort(sorted.begin(), sorted.end());
            for (auto b : sorted) {
                auto it = by_behavior_.find(b);
                if (it == by_behavior_.end())
                    throw format_error("manifest: split names behaviour " + std::to_string(b) + " with no records");
                out.insert(out.end(), it->second.begin(), it->second.end());
            }
        };
        collect(m.split.train, train_);
        collect(m.split.test, test_);
    }

    void verify_audio() const {
        namespace fs = std::filesystem;
        const auto frames = audio::samples_for(manifest_.duration_s, manifest_.sample_rate);
        const auto expected = 44 + frames * manifest_.channels * 4;
        for (const auto& r : manifest_.records) {
            const auto p = root_ / r.audio_path;
            std::error_code ec;
            const auto size = fs::file_size(p, ec);
            if (ec)
                throw format_error("record (behavior " + std::to_string(r.behavior_id) + ", repeat "
                                   + std::to_string(r.repeat_idx) + "): missing audio file " + p.string());
            if (size != expected)
                throw format_error("record (behavior " + std::to_string(r.behavior_id) + ", repeat "
                                   + std::to_string(r.repeat_idx) + "): " + p.string() + " has "
                                   + std::to_string(size) + " bytes, expected " + std::to_string(expected));
        }
    }

    dataset_manifest manifest_;
    std::filesystem::path root_;
    std::map<std::size_t, std::vector<std::size_t>> by_behavior_;
    std::vector<std::size_t> train_, test_;
};

} // namespace sonact::synth
