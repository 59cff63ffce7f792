#pragma once

// Report emission: the JSON report, CSV tables with one row per method and
// one column per task, and the SVG plot of the low-data sweep.

#include <sonact/harness/pipeline.hpp>

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace sonact::harness {

inline constexpr const char* report_schema = "sonact.report/1";
inline constexpr const char* sweep_schema = "sonact.sweep/1";

inline json to_json(const eval_record& r, bool with_wall_time) {
    return {{"task", std::string(synth::to_string(r.task))},
            {"method", to_string(r.meth)},
            {"variant", r.variant.empty() ? json(nullptr) : json(r.variant)},
            {"seed", r.seed},
            {"slice", r.slice},
            {"n_test", r.n_test},
            {"mse_raw", r.mse_raw},
            {"mse_normalized", r.mse_normalized},
            {"dtw_normalized_mean", r.dtw_normalized_mean ? json(*r.dtw_normalized_mean) : json(nullptr)},
            {"model_hash", r.model_hash},
            {"wall_time_s", with_wall_time ? json(r.wall_time_s) : json(nullptr)}};
}

namespace detail {

struct cell_key {
    std::string task;
    std::string method;
    std::size_t slice = 0;
    auto operator<=>(const cell_key&) const = default;
};

struct cell_stats {
    std::vector<double> mse_raw, mse_normalized, dtw;
};

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v)
        s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double std_of(const std::vector<double>& v) {
    if (v.size() < 2)
        return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v)
        s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

inline std::map<cell_key, cell_stats> aggregate(const std::vector<eval_record>& records) {
    std::map<cell_key, cell_stats> out;
    for (const auto& r : records) {
        auto& c = out[{std::string(synth::to_string(r.task)), to_string(r.meth), r.slice}];
        c.mse_raw.push_back(r.mse_raw);
        c.mse_normalized.push_back(r.mse_normalized);
        if (r.dtw_normalized_mean)
            c.dtw.push_back(*r.dtw_normalized_mean);
    }
    return out;
}

inline std::string num(double v) { return fmt::format("{:.6g}", v); }

} // namespace detail

/// Summary rows: mean and population std over seeds of each (task, method, slice).
inline json summarize(const std::vector<eval_record>& records) {
    json rows = json::array();
    for (const auto& [k, c] : detail::aggregate(records)) {
        json row = {{"task", k.task},
                    {"method", k.method},
                    {"slice", k.slice},
                    {"n_seeds", c.mse_raw.size()},
                    {"mse_raw_mean", detail::mean_of(c.mse_raw)},
                    {"mse_raw_std", detail::std_of(c.mse_raw)},
                    {"mse_normalized_mean", detail::mean_of(c.mse_normalized)},
                    {"mse_normalized_std", detail::std_of(c.mse_normalized)}};
        row["dtw_normalized_mean"] = c.dtw.empty() ? json(nullptr) : json(detail::mean_of(c.dtw));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline json build_report(const run_config& cfg, const std::vector<eval_record>& records,
                         const std::map<task_id, dtw_reference_summary>& references) {
    json j;
    j["schema"] = report_schema;
    j["config_hash"] = config_hash(cfg);
    j["config"] = to_json(cfg);
    json results = json::array();
    for (const auto& r : records)
        results.push_back(to_json(r, !cfg.deterministic));
    j["results"] = results;
    j["summary"] = summarize(records);
    json refs = json::object();
    for (const auto& [t, ref] : references)
        refs[std::string(synth::to_string(t))] = {{"mu", ref.mu},
                                                  {"sigma", ref.sigma},
                                                  {"n_pairs", ref.n_pairs},
                                                  {"ground_truth_mean", ref.ground_truth_mean}};
    j["dtw_reference"] = refs;
    j["notes"] = {
        {"mse_units", "mse_raw in action units after clipping; mse_normalized in the task's min-max space"},
        {"random_mse", "expectation over a uniform choice of train action"},
        {"supervised_budget", "supervised epochs as configured; slices below the full train set scale epochs "
                              "by full/slice for both pretraining and supervised training"}};
    return j;
}

/// Table with one row per method and one column per task; cells are means over seeds.
inline std::string method_task_table(const std::vector<eval_record>& records, const std::vector<task_id>& tasks,
                                     const std::vector<method>& methods,
                                     const std::function<std::optional<double>(const detail::cell_stats&)>& pick,
                                     const std::vector<std::pair<std::string, std::map<task_id, double>>>& extra = {}) {
    const auto cells = detail::aggregate(records);
    std::string out = "method";
    for (auto t : tasks)
        out += "," + std::string(synth::to_string(t));
    out += "\n";
    for (auto m : methods) {
        out += to_string(m);
        for (auto t : tasks) {
            out += ",";
            for (const auto& [k, c] : cells)
                if (k.task == synth::to_string(t) && k.method == to_string(m))
                    if (auto v = pick(c))
                        out += detail::num(*v);
        }
        out += "\n";
    }
    for (const auto& [name, values] : extra) {
        out += name;
        for (auto t : tasks) {
            out += ",";
            if (auto it = values.find(t); it != values.end())
                out += detail::num(it->second);
        }
        out += "\n";
    }
    return out;
}

/// Long-form CSV of every evaluated cell.
inline std::string results_csv(const std::vector<eval_record>& records) {
    std::string out = "task,method,variant,seed,slice,n_test,mse_raw,mse_normalized,dtw_normalized_mean\n";
    for (const auto& r : records)
        out += fmt::format("{},{},{},{},{},{},{},{},{}\n", synth::to_string(r.task), to_string(r.meth), r.variant,
                           r.seed, r.slice, r.n_test, detail::num(r.mse_raw), detail::num(r.mse_normalized),
                           r.dtw_normalized_mean ? detail::num(*r.dtw_normalized_mean) : "");
    return out;
}

/// Writes report.json and the CSV tables into `dir`; returns the report.
inline json write_report(const fs::path& dir, const run_config& cfg, const std::vector<eval_record>& records,
                         const std::map<task_id, dtw_reference_summary>& references) {
    const auto report = build_report(cfg, records, references);
    write_json_atomic(dir / "report.json", report);
    auto mse_raw = [](const detail::cell_stats& c) -> std::optional<double> { return detail::mean_of(c.mse_raw); };
    auto mse_norm = [](const detail::cell_stats& c) -> std::optional<double> {
        return detail::mean_of(c.mse_normalized);
    };
    auto dtw = [](const detail::cell_stats& c) -> std::optional<double> {
        if (c.dtw.empty())
            return std::nullopt;
        return detail::mean_of(c.dtw);
    };
    synth::detail::write_text_atomic(dir / "table_mse_raw.csv",
                                     method_task_table(records, cfg.tasks, cfg.methods, mse_raw));
    synth::detail::write_text_atomic(dir / "table_mse_normalized.csv",
                                     method_task_table(records, cfg.tasks, cfg.methods, mse_norm));
    if (cfg.metrics.count("dtw")) {
        std::map<task_id, double> gt;
        for (const auto& [t, ref] : references)
            gt[t] = ref.ground_truth_mean;
        synth::detail::write_text_atomic(dir / "table_dtw.csv",
                                         method_task_table(records, cfg.tasks, cfg.methods, dtw, {{"ground_truth", gt}}));
    }
    synth::detail::write_text_atomic(dir / "results.csv", results_csv(records));
    return report;
}

// ---------------------------------------------------------------- sweep

inline json build_sweep(const run_config& cfg, const std::vector<eval_record>& records,
                        const std::map<task_id, std::size_t>& train_behaviors) {
    json j;
    j["schema"] = sweep_schema;
    j["config_hash"] = config_hash(cfg);
    json tb = json::object();
    for (const auto& [t, n] : train_behaviors)
        tb[std::string(synth::to_string(t))] = n;
    j["train_behaviors"] = tb;
    json results = json::array();
    for (const auto& r : records)
        results.push_back(to_json(r, !cfg.deterministic));
    j["results"] = results;
    j["summary"] = summarize(records);
    return j;
}

/// Line chart of mean raw MSE against slice size, one panel per task and
/// one line per method, with a log-scaled y axis.
inline std::string sweep_svg(const std::vector<eval_record>& records, const std::vector<task_id>& tasks) {
    const auto cells = detail::aggregate(records);
    static const char* colors[] = {"#1b6ca8", "#d1495b", "#66a182", "#edae49", "#8d6a9f"};
    const double pw = 260, ph = 200, ml = 52, mt = 30, gap = 30;
    const double width = ml + static_cast<double>(tasks.size()) * (pw + gap) + 120, height = mt + ph + 60;
    std::string s = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" font-family=\"sans-serif\" "
        "font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        width, height);
    std::vector<std::string> method_names;
    for (const auto& [k, c] : cells)
        if (std::find(method_names.begin(), method_names.end(), k.method) == method_names.end())
            method_names.push_back(k.method);

    for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
        const std::string task(synth::to_string(tasks[ti]));
        const double x0 = ml + static_cast<double>(ti) * (pw + gap), y0 = mt;
        std::set<std::size_t> slices;
        double lo = 1e300, hi = 0.0;
        for (const auto& [k, c] : cells)
            if (k.task == task) {
                slices.insert(k.slice);
                const double v = std::max(detail::mean_of(c.mse_raw), 1e-12);
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\" font-weight=\"bold\">{}</text>\n",
                         x0 + pw / 2, y0 - 10, task);
        s += fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"none\" "
                         "stroke=\"#444\"/>\n",
                         x0, y0, pw, ph);
        if (slices.empty())
            continue;
        const double smin = static_cast<double>(*slices.begin()), smax = static_cast<double>(*slices.rbegin());
        const double llo = std::log10(lo) - 0.05, lhi = std::log10(hi) + 0.05;
        auto px = [&](double n) { return smax > smin ? x0 + 10 + (n - smin) / (smax - smin) * (pw - 20) : x0 + pw / 2; };
        auto py = [&](double v) {
            return y0 + ph - (std::log10(std::max(v, 1e-12)) - llo) / (lhi - llo) * ph;
        };
        for (auto n : slices)
            s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n",
                             px(static_cast<double>(n)), y0 + ph + 14, n);
        for (double v : {lo, hi})
            s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\">{}</text>\n", x0 - 4, py(v) + 4,
                             detail::num(v));
        for (std::size_t mi = 0; mi < method_names.size(); ++mi) {
            std::string pts;
            for (const auto& [k, c] : cells)
                if (k.task == task && k.method == method_names[mi])
                    pts += fmt::format("{:.1f},{:.1f} ", px(static_cast<double>(k.slice)),
                                       py(detail::mean_of(c.mse_raw)));
            if (pts.empty())
                continue;
            s += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n", pts,
                             colors[mi % 5]);
        }
    }
    const double lx = ml + static_cast<double>(tasks.size()) * (pw + gap);
    for (std::size_t mi = 0; mi < method_names.size(); ++mi) {
        const double ly = mt + 10 + static_cast<double>(mi) * 18;
        s += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"{}\" "
                         "stroke-width=\"2\"/>\n<text x=\"{:.1f}\" y=\"{:.1f}\">{}</text>\n",
                         lx, ly, lx + 20, ly, colors[mi % 5], lx + 26, ly + 4, method_names[mi]);
    }
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">training behaviours (raw MSE, log "
                     "scale)</text>\n</svg>\n",
                     width / 2, height - 12);
    return s;
}

/// Writes sweep.json, sweep.csv and sweep.svg into `dir`; returns the JSON.
inline json write_sweep(const fs::path& dir, const run_config& cfg, const std::vector<eval_record>& records,
                        const std::map<task_id, std::size_t>& train_behaviors) {
    const auto j = build_sweep(cfg, records, train_behaviors);
    write_json_atomic(dir / "sweep.json", j);
    synth::detail::write_text_atomic(dir / "sweep.csv", results_csv(records));
    synth::detail::write_text_atomic(dir / "sweep.svg", sweep_svg(records, cfg.tasks));
    return j;
}

/// Runs the whole pipeline and writes the report into the output directory.
inline json run_pipeline(pipeline& p) {
    auto records = p.run_all();
    std::map<task_id, dtw_reference_summary> refs;
    if (p.config().metrics.count("dtw"))
        for (auto t : p.config().tasks)
            refs[t] = p.dtw_reference(t);
    return write_report(p.config().out_dir, p.config(), records, refs);
}

inline json run_sweep(pipeline& p) {
    auto records = p.sweep();
    std::map<task_id, std::size_t> tb;
    for (auto t : p.config().tasks)
        tb[t] = p.train_behaviors(t);
    return write_sweep(p.config().out_dir, p.config(), records, tb);
}

} // namespace sonact::harness
