#pragma once

// Run configuration: INI file + CLI overrides, resolved per task, with a
// canonical JSON form whose hash names every derived artifact.

#include <sonact/error.hpp>
#include <sonact/models/policy.hpp>
#include <sonact/nn/encoder.hpp>
#include <sonact/ssl/byol.hpp>
#include <sonact/synth/action_spec.hpp>
#include <sonact/synth/simulator.hpp>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace sonact::harness {

namespace fs = std::filesystem;
using synth::task_id;

enum class method { aurl, supervised, supervised_aug, random, oracle };

inline std::string to_string(method m) {
    switch (m) {
    case method::aurl: return "aurl";
    case method::supervised: return "supervised";
    case method::supervised_aug: return "supervised_aug";
    case method::random: return "random";
    case method::oracle: return "oracle";
    }
    return "?";
}

inline method parse_method(const std::string& s) {
    for (auto m : {method::aurl, method::supervised, method::supervised_aug, method::random, method::oracle})
        if (to_string(m) == s)
            return m;
    throw config_error("unknown method '" + s + "' (expected aurl, supervised, supervised_aug, random, oracle)");
}

enum class scale { desk, paper };

inline scale parse_scale(const std::string& s) {
    if (s == "desk")
        return scale::desk;
    if (s == "paper")
        return scale::paper;
    throw config_error("unknown scale '" + s + "' (expected desk or paper)");
}

inline std::string to_string(scale s) { return s == scale::desk ? "desk" : "paper"; }

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex16(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4)
        s[static_cast<std::size_t>(i)] = digits[h & 0xf];
    return s;
}

/// Hash of the canonical (sorted-key, compact) JSON dump.
inline std::string content_hash(const nlohmann::json& j) { return hex16(fnv1a(j.dump())); }

struct data_settings {
    std::size_t behaviors = 200;
    std::size_t repeats = 5;
    double noise_level = synth::default_noise_level;
    std::uint64_t seed = 0;
};

struct eval_settings {
    std::size_t dtw_repeats = 5;
};

/// Everything that can differ between tasks.
struct task_settings {
    data_settings data;
    nn::encoder_config encoder;
    ssl::pretrain_config pretrain;
    models::probe_config probe;
    models::supervised_config supervised;
    eval_settings eval;
};

struct run_config {
    std::vector<task_id> tasks{synth::all_tasks.begin(), synth::all_tasks.end()};
    std::vector<method> methods{method::aurl, method::supervised, method::supervised_aug, method::random,
                                method::oracle};
    std::vector<std::uint64_t> seeds{0};
    scale run_scale = scale::desk;
    std::set<std::string> metrics{"mse", "dtw"};
    fs::path data_dir = "data";
    fs::path out_dir = "runs";
    std::map<task_id, fs::path> datasets; // explicit dataset directories
    bool deterministic = false;
    std::vector<std::size_t> sweep_slices{50, 100, 160};
    std::vector<method> sweep_methods{method::aurl, method::supervised};

    task_settings base;
    std::map<task_id, task_settings> per_task;

    const task_settings& settings(task_id t) const {
        auto it = per_task.find(t);
        return it == per_task.end() ? base : it->second;
    }

    bool has_method(method m) const { return std::find(methods.begin(), methods.end(), m) != methods.end(); }

    void validate() const;
};

// ---------------------------------------------------------------- JSON form

inline nlohmann::json to_json(const task_settings& s) {
    const auto& p = s.pretrain;
    const auto& a = p.aug;
    return {
        {"data", {{"behaviors", s.data.behaviors}, {"repeats", s.data.repeats}, {"noise_level", s.data.noise_level},
                  {"seed", s.data.seed}}},
        {"encoder", s.encoder},
        {"pretrain",
         {{"variant", ssl::to_string(p.kind)},
          {"epochs", p.epochs},
          {"batch_size", p.batch_size},
          {"ema_tau", p.ema_tau},
          {"lr", p.lars.lr},
          {"weight_decay", p.lars.weight_decay},
          {"momentum", p.lars.momentum},
          {"trust", p.lars.trust},
          {"crop_scale_time", {a.crop_scale_time.lo, a.crop_scale_time.hi}},
          {"crop_scale_mel", {a.crop_scale_mel.lo, a.crop_scale_mel.hi}},
          {"use_mixup", a.use_mixup},
          {"mixup_alpha", {a.mixup_alpha_range.lo, a.mixup_alpha_range.hi}}}},
        {"probe",
         {{"lr", s.probe.adam.lr},
          {"weight_decay", s.probe.adam.weight_decay},
          {"max_batch", s.probe.max_batch},
          {"epochs", s.probe.epochs},
          {"plateau_window", s.probe.plateau_window},
          {"tolerance", s.probe.tolerance}}},
        {"supervised",
         {{"epochs", s.supervised.epochs},
          {"batch_size", s.supervised.batch_size},
          {"lr", s.supervised.adam.lr},
          {"weight_decay", s.supervised.adam.weight_decay}}},
        {"eval", {{"dtw_repeats", s.eval.dtw_repeats}}},
    };
}

/// Canonical description of the run; paths are excluded so a run can move.
inline nlohmann::json to_json(const run_config& c) {
    nlohmann::json j;
    std::vector<std::string> tasks, methods, sweep_methods;
    for (auto t : c.tasks)
        tasks.emplace_back(synth::to_string(t));
    for (auto m : c.methods)
        methods.push_back(to_string(m));
    for (auto m : c.sweep_methods)
        sweep_methods.push_back(to_string(m));
    j["tasks"] = tasks;
    j["methods"] = methods;
    j["seeds"] = c.seeds;
    j["scale"] = to_string(c.run_scale);
    j["metrics"] = std::vector<std::string>(c.metrics.begin(), c.metrics.end());
    j["deterministic"] = c.deterministic;
    j["sweep"] = {{"slices", c.sweep_slices}, {"methods", sweep_methods}};
    nlohmann::json per = nlohmann::json::object();
    for (auto t : c.tasks)
        per[std::string(synth::to_string(t))] = to_json(c.settings(t));
    j["task_settings"] = per;
    return j;
}

inline std::string config_hash(const run_config& c) { return content_hash(to_json(c)); }

// ---------------------------------------------------------------- parsing

namespace detail {

using ptree = boost::property_tree::ptree;

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        const auto b = cur.find_first_not_of(" \t");
        const auto e = cur.find_last_not_of(" \t");
        if (b != std::string::npos)
            out.push_back(cur.substr(b, e - b + 1));
        cur.clear();
    };
    for (char ch : s) {
        if (ch == ',')
            flush();
        else
            cur += ch;
    }
    flush();
    return out;
}

template <class T>
T parse_value(const std::string& key, const std::string& text) {
    std::istringstream is(text);
    T v{};
    if constexpr (std::is_same_v<T, bool>) {
        if (text == "true" || text == "1" || text == "yes" || text == "on")
            return true;
        if (text == "false" || text == "0" || text == "no" || text == "off")
            return false;
        throw config_error("config: '" + key + "' expects a boolean, got '" + text + "'");
    } else if constexpr (std::is_unsigned_v<T>) {
        if (text.find('-') != std::string::npos)
            throw config_error("config: '" + key + "' must be non-negative, got '" + text + "'");
        is >> v;
    } else {
        is >> v;
    }
    if (!is || !(is >> std::ws).eof())
        throw config_error("config: cannot parse '" + key + "' value '" + text + "'");
    return v;
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
    std::vector<T> out;
    for (const auto& item : split_list(text))
        out.push_back(parse_value<T>(key, item));
    return out;
}

inline ssl::scale_range parse_range(const std::string& key, const std::string& text) {
    auto v = parse_list<double>(key, text);
    if (v.size() != 2)
        throw config_error("config: '" + key + "' expects 'lo, hi', got '" + text + "'");
    return {v[0], v[1]};
}

/// Reads `section.key` into `target` when present; records it as consumed.
class reader {
public:
    reader(const ptree& tree, std::set<std::string>& used) : tree_(tree), used_(used) {}

    template <class T>
    void get(const std::string& section, const std::string& key, T& target) {
        if (auto v = raw(section, key))
            target = parse_value<T>(section + "." + key, *v);
    }

    std::optional<std::string> raw(const std::string& section, const std::string& key) {
        auto sec = tree_.get_child_optional(section);
        if (!sec)
            return std::nullopt;
        auto v = sec->get_optional<std::string>(key);
        if (!v)
            return std::nullopt;
        used_.insert(section + "." + key);
        return *v;
    }

private:
    const ptree& tree_;
    std::set<std::string>& used_;
};

inline void apply_scale_defaults(task_settings& s, scale sc, std::size_t channels) {
    s.encoder.in_channels = channels;
    if (sc == scale::paper) {
        s.data.behaviors = 1000;
        s.encoder = nn::encoder_config::paper_scale(channels);
        s.pretrain.epochs = 1000;
        s.pretrain.batch_size = 1024;
        s.supervised.epochs = 1000;
        s.supervised.batch_size = 1024;
    }
}

/// Applies the per-stage sections of `tree` on top of `s`.
inline void read_settings(reader& r, task_settings& s) {
    r.get("data", "behaviors", s.data.behaviors);
    r.get("data", "repeats", s.data.repeats);
    r.get("data", "noise_level", s.data.noise_level);
    r.get("data", "seed", s.data.seed);

    if (auto v = r.raw("encoder", "block_widths"))
        s.encoder.block_widths = parse_list<std::size_t>("encoder.block_widths", *v);
    r.get("encoder", "repr_dim", s.encoder.repr_dim);
    r.get("encoder", "proj_dim", s.encoder.proj_dim);
    r.get("encoder", "pred_hidden", s.encoder.pred_hidden);

    auto& p = s.pretrain;
    if (auto v = r.raw("pretrain", "variant"))
        p.kind = ssl::parse_variant(*v);
    r.get("pretrain", "epochs", p.epochs);
    r.get("pretrain", "batch_size", p.batch_size);
    r.get("pretrain", "ema_tau", p.ema_tau);
    r.get("pretrain", "lr", p.lars.lr);
    r.get("pretrain", "weight_decay", p.lars.weight_decay);
    r.get("pretrain", "momentum", p.lars.momentum);
    r.get("pretrain", "trust", p.lars.trust);
    if (auto v = r.raw("pretrain", "crop_scale_time"))
        p.aug.crop_scale_time = parse_range("pretrain.crop_scale_time", *v);
    if (auto v = r.raw("pretrain", "crop_scale_mel"))
        p.aug.crop_scale_mel = parse_range("pretrain.crop_scale_mel", *v);
    r.get("pretrain", "use_mixup", p.aug.use_mixup);
    if (auto v = r.raw("pretrain", "mixup_alpha"))
        p.aug.mixup_alpha_range = parse_range("pretrain.mixup_alpha", *v);

    r.get("probe", "lr", s.probe.adam.lr);
    r.get("probe", "weight_decay", s.probe.adam.weight_decay);
    r.get("probe", "max_batch", s.probe.max_batch);
    r.get("probe", "epochs", s.probe.epochs);
    r.get("probe", "plateau_window", s.probe.plateau_window);
    r.get("probe", "tolerance", s.probe.tolerance);

    r.get("supervised", "epochs", s.supervised.epochs);
    r.get("supervised", "batch_size", s.supervised.batch_size);
    r.get("supervised", "lr", s.supervised.adam.lr);
    r.get("supervised", "weight_decay", s.supervised.adam.weight_decay);
    s.supervised.aug = s.pretrain.aug;

    r.get("eval", "dtw_repeats", s.eval.dtw_repeats);
}

/// Per-task section "task.<name>" holds "section.key = value" overrides.
inline ptree task_overrides(const ptree& tree, task_id t) {
    ptree out;
    auto sec = tree.get_child_optional(ptree::path_type("task." + std::string(synth::to_string(t)), '\x1f'));
    if (!sec)
        return out;
    for (const auto& [k, v] : *sec) {
        const auto dot = k.find('.');
        if (dot == std::string::npos)
            throw config_error("config: [task." + std::string(synth::to_string(t)) + "] key '" + k
                               + "' must name its section, e.g. pretrain.epochs");
        out.put(ptree::path_type(k.substr(0, dot) + "\x1f" + k.substr(dot + 1), '\x1f'), v.data());
    }
    return out;
}

} // namespace detail

/// Command-line values that take precedence over the file.
struct cli_overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> scale_name;
    std::optional<fs::path> out_dir;
    bool deterministic = false;
};

/// Builds a run configuration from INI text (may be empty) plus overrides.
inline run_config parse_config(const std::string& ini_text, const cli_overrides& cli = {},
                               const fs::path& base_dir = ".") {
    detail::ptree tree;
    if (!ini_text.empty()) {
        std::istringstream is(ini_text);
        try {
            boost::property_tree::ini_parser::read_ini(is, tree);
        } catch (const boost::property_tree::ini_parser_error& e) {
            throw config_error(std::string("config: ") + e.what());
        }
    }
    std::set<std::string> used;
    detail::reader r(tree, used);
    run_config c;

    std::string scale_name = "desk";
    r.get("run", "scale", scale_name);
    if (cli.scale_name)
        scale_name = *cli.scale_name;
    c.run_scale = parse_scale(scale_name);

    if (auto v = r.raw("run", "tasks")) {
        c.tasks.clear();
        for (const auto& s : detail::split_list(*v)) {
            try {
                c.tasks.push_back(synth::parse_task(s));
            } catch (const std::exception& e) {
                throw config_error(std::string("config: run.tasks: ") + e.what());
            }
        }
    }
    if (auto v = r.raw("run", "methods")) {
        c.methods.clear();
        for (const auto& s : detail::split_list(*v))
            c.methods.push_back(parse_method(s));
    }
    if (auto v = r.raw("run", "seeds"))
        c.seeds = detail::parse_list<std::uint64_t>("run.seeds", *v);
    if (auto v = r.raw("run", "metrics")) {
        c.metrics.clear();
        for (const auto& s : detail::split_list(*v)) {
            if (s != "mse" && s != "dtw")
                throw config_error("config: unknown metric '" + s + "' (expected mse, dtw)");
            c.metrics.insert(s);
        }
    }
    std::string data_dir = c.data_dir.string(), out_dir = c.out_dir.string();
    r.get("run", "data_dir", data_dir);
    r.get("run", "out_dir", out_dir);
    c.data_dir = base_dir / data_dir;
    c.out_dir = base_dir / out_dir;
    r.get("run", "deterministic", c.deterministic);
    if (auto v = r.raw("sweep", "slices"))
        c.sweep_slices = detail::parse_list<std::size_t>("sweep.slices", *v);
    if (auto v = r.raw("sweep", "methods")) {
        c.sweep_methods.clear();
        for (const auto& s : detail::split_list(*v))
            c.sweep_methods.push_back(parse_method(s));
    }
    if (auto sec = tree.get_child_optional("datasets"))
        for (const auto& [k, v] : *sec) {
            used.insert("datasets." + k);
            try {
                c.datasets[synth::parse_task(k)] = base_dir / v.data();
            } catch (const std::invalid_argument&) {
                throw config_error("config: [datasets] names unknown task '" + k + "'");
            }
        }

    for (auto t : c.tasks) {
        task_settings s;
        detail::apply_scale_defaults(s, c.run_scale, synth::task_channels(t));
        detail::read_settings(r, s);
        const auto over = detail::task_overrides(tree, t);
        std::set<std::string> over_used;
        detail::reader ro(over, over_used);
        detail::read_settings(ro, s);
        for (const auto& [sec, kv] : over)
            for (const auto& [k, v] : kv)
                if (!over_used.count(sec + "." + k))
                    throw config_error("config: [task." + std::string(synth::to_string(t)) + "] unknown key '" + sec
                                       + "." + k + "'");
        s.encoder.in_channels = s.pretrain.kind == ssl::variant::byol_all ? 2 : synth::task_channels(t);
        c.per_task[t] = s;
    }
    // Sections consumed per task are re-read for each task; a dummy pass
    // covers configs with an empty task list.
    {
        task_settings s;
        detail::read_settings(r, s);
        c.base = s;
    }
    for (const auto& [sec, kv] : tree) {
        if (sec.rfind("task.", 0) == 0) {
            try {
                synth::parse_task(sec.substr(5));
            } catch (const std::invalid_argument&) {
                throw config_error("config: section [" + sec + "] names an unknown task");
            }
            continue;
        }
        for (const auto& [k, v] : kv)
            if (!used.count(sec + "." + k))
                throw config_error("config: unknown key '" + k + "' in section [" + sec + "]");
    }

    if (cli.seed)
        c.seeds = {*cli.seed};
    if (cli.out_dir)
        c.out_dir = *cli.out_dir;
    if (cli.deterministic)
        c.deterministic = true;
    c.validate();
    return c;
}

inline run_config load_config(const fs::path& path, const cli_overrides& cli = {}) {
    std::ifstream f(path);
    if (!f)
        throw config_error("config: cannot open " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str(), cli, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

inline void run_config::validate() const {
    if (tasks.empty())
        throw config_error("config: run.tasks is empty");
    if (std::set<task_id>(tasks.begin(), tasks.end()).size() != tasks.size())
        throw config_error("config: run.tasks lists a task twice");
    if (seeds.empty())
        throw config_error("config: run.seeds is empty");
    if (methods.empty())
        throw config_error("config: run.methods is empty");
    for (const auto& [t, p] : datasets)
        if (!fs::exists(p / "manifest.json"))
            throw config_error("config: dataset for " + std::string(synth::to_string(t)) + " not found at "
                               + (p / "manifest.json").string());
    for (auto t : tasks) {
        const auto& s = settings(t);
        if (s.data.behaviors < 2 || s.data.repeats < 1)
            throw config_error("config: data needs >= 2 behaviours and >= 1 repeat");
        if (!(s.data.noise_level >= 0.0))
            throw config_error("config: data.noise_level must be >= 0");
        s.encoder.validate();
        s.pretrain.validate();
        s.probe.validate();
        s.supervised.validate();
        if (s.eval.dtw_repeats < 2)
            throw config_error("config: eval.dtw_repeats must be >= 2");
        if ((s.pretrain.kind == ssl::variant::byol_act || s.pretrain.kind == ssl::variant::byol_aa)
            && s.data.repeats < 2)
            throw config_error("config: " + ssl::to_string(s.pretrain.kind) + " needs data.repeats >= 2");
    }
    for (auto n : sweep_slices)
        if (n < 1)
            throw config_error("config: sweep slices must be >= 1");
}

} // namespace sonact::harness
