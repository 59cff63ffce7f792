#pragma once

// Audio-to-action models: the linear probe on a frozen encoder and the
// end-to-end supervised baseline.

#include <sonact/models/normalizer.hpp>
#include <sonact/models/probe.hpp>
#include <sonact/nn/checkpoint.hpp>
#include <sonact/ssl/augment.hpp>
#include <sonact/ssl/byol.hpp>

#include <functional>
#include <string>
#include <vector>

namespace sonact::models {

using audio::mel_spectrogram;

namespace detail {

inline void check_channels(const std::vector<mel_spectrogram>& raw, const action_normalizer& norm) {
    const std::size_t want = synth::task_channels(norm.spec().task);
    for (const auto& s : raw)
        if (s.channels != want)
            throw std::invalid_argument("predict: clip has " + std::to_string(s.channels) + " channel(s) but the "
                                        + std::string(synth::to_string(norm.spec().task)) + " model expects "
                                        + std::to_string(want));
}

inline std::vector<action_params> rows_to_actions(const Eigen::MatrixXd& z, const action_normalizer& norm) {
    std::vector<action_params> out;
    out.reserve(static_cast<std::size_t>(z.rows()));
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        action_params a(static_cast<std::size_t>(z.cols()));
        for (Eigen::Index k = 0; k < z.cols(); ++k)
            a[static_cast<std::size_t>(k)] = z(i, k);
        out.push_back(norm.to_action(a));
    }
    return out;
}

inline Eigen::MatrixXd normalized_targets(const std::vector<action_params>& actions, const action_normalizer& norm) {
    Eigen::MatrixXd y(static_cast<Eigen::Index>(actions.size()), static_cast<Eigen::Index>(norm.dims()));
    for (std::size_t i = 0; i < actions.size(); ++i) {
        const auto z = norm.normalize(actions[i]);
        for (std::size_t k = 0; k < z.size(); ++k)
            y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = z[k];
    }
    return y;
}

inline void drop_prefix(nn::checkpoint& ck, const std::string& prefix) {
    for (auto it = ck.tensors.begin(); it != ck.tensors.end();)
        it = it->first.rfind(prefix, 0) == 0 ? ck.tensors.erase(it) : std::next(it);
}

} // namespace detail

/// Frozen encoder + linear probe.
struct probe_model {
    ssl::encoder_state encoder;
    action_normalizer normalizer;
    probe_weights weights;

    /// Weights are rounded to float32, the checkpoint precision, so a model and
    /// its reloaded copy predict identically.
    static probe_model create(ssl::encoder_state enc, action_normalizer norm, probe_weights w) {
        if (static_cast<std::size_t>(w.W.rows()) != enc.config.repr_dim
            || static_cast<std::size_t>(w.W.cols()) != norm.dims() || static_cast<std::size_t>(w.b.size()) != norm.dims())
            throw std::invalid_argument("probe_model: weight shapes do not match the encoder and action space");
        w.W = w.W.cast<float>().cast<double>();
        w.b = w.b.cast<float>().cast<double>();
        return {std::move(enc), std::move(norm), std::move(w)};
    }

    /// Raw (unnormalized) spectrograms -> executable actions.
    std::vector<action_params> predict(const std::vector<mel_spectrogram>& raw) {
        detail::check_channels(raw, normalizer);
        std::vector<mel_spectrogram> prepared;
        prepared.reserve(raw.size());
        for (const auto& s : raw)
            prepared.push_back(encoder.prepare(s));
        return detail::rows_to_actions(weights.apply(ssl::represent(encoder.online, prepared)), normalizer);
    }

    nn::checkpoint to_checkpoint() {
        auto ck = encoder.to_checkpoint();
        ck.kind = "probe";
        ck.meta["normalizer"] = normalizer.to_json();
        std::vector<float> w(static_cast<std::size_t>(weights.W.size()));
        const auto r = static_cast<std::size_t>(weights.W.rows()), d = static_cast<std::size_t>(weights.W.cols());
        for (std::size_t k = 0; k < r; ++k)
            for (std::size_t j = 0; j < d; ++j)
                w[k * d + j] = static_cast<float>(weights.W(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)));
        std::vector<float> b(weights.b.data(), weights.b.data() + weights.b.size());
        ck.put("probe.W", {r, d}, w);
        ck.put("probe.b", {d}, b);
        return ck;
    }

    void save(const std::filesystem::path& path) { nn::save_checkpoint(to_checkpoint(), path); }

    static probe_model load(const std::filesystem::path& path) {
        auto ck = nn::load_checkpoint(path);
        if (ck.kind != "probe")
            throw format_error("checkpoint " + path.string() + " holds a '" + ck.kind + "', not a probe");
        probe_model m;
        m.encoder = ssl::encoder_state::from_checkpoint(ck, path.string());
        m.normalizer = action_normalizer::from_json(ck.meta.at("normalizer"));
        const std::size_t r = m.encoder.config.repr_dim, d = m.normalizer.dims();
        const auto& w = ck.get("probe.W", {r, d});
        const auto& b = ck.get("probe.b", {d});
        m.weights.W.resize(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(d));
        m.weights.b.resize(static_cast<Eigen::Index>(d));
        for (std::size_t k = 0; k < r; ++k)
            for (std::size_t j = 0; j < d; ++j)
                m.weights.W(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = w.values[k * d + j];
        for (std::size_t j = 0; j < d; ++j)
            m.weights.b(static_cast<Eigen::Index>(j)) = b.values[j];
        return m;
    }
};

/// Representations of raw spectrograms under a frozen encoder, ready for fit_probe.
inline Eigen::MatrixXd cached_representations(ssl::encoder_state& enc, const std::vector<mel_spectrogram>& raw) {
    std::vector<mel_spectrogram> prepared;
    prepared.reserve(raw.size());
    for (const auto& s : raw)
        prepared.push_back(enc.prepare(s));
    return ssl::represent(enc.online, prepared);
}

/// Fits the probe on a frozen encoder and returns the model with the fit.
inline std::pair<probe_model, probe_fit> train_probe(ssl::encoder_state enc, const action_normalizer& norm,
                                                     const std::vector<mel_spectrogram>& raw,
                                                     const std::vector<action_params>& actions,
                                                     const probe_config& cfg = {}) {
    if (raw.empty())
        throw config_error("fit_probe: empty training split");
    if (raw.size() != actions.size())
        throw std::invalid_argument("fit_probe: clip and action counts differ");
    const auto z = cached_representations(enc, raw);
    auto fit = fit_probe(z, detail::normalized_targets(actions, norm), cfg);
    auto model = probe_model::create(std::move(enc), norm, fit.weights);
    return {std::move(model), std::move(fit)};
}

// ---------------------------------------------------------------- supervised

struct supervised_config {
    std::size_t epochs = 100;
    std::size_t batch_size = 128;
    nn::adam_hparams adam{1e-4, 1e-4, 0.9, 0.999, 1e-8};
    bool augment = false;
    ssl::augmentation_config aug;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 1)
            throw config_error("supervised: epochs must be >= 1");
        if (batch_size < 1)
            throw config_error("supervised: batch_size must be >= 1");
        aug.validate();
    }
};

/// Randomly initialized encoder + linear head trained end to end on MSE.
struct supervised_model {
    nn::encoder_config config;
    nn::encoder<float> net;
    nn::linear_layer<float> head;
    audio::channel_stats stats;
    action_normalizer normalizer;
    bool augmented = false;

    static supervised_model create(const nn::encoder_config& cfg, audio::channel_stats stats,
                                   action_normalizer norm, std::uint64_t seed) {
        cfg.validate();
        if (stats.channels() != cfg.in_channels)
            throw config_error("supervised_model: normalization has " + std::to_string(stats.channels())
                               + " channels but in_channels=" + std::to_string(cfg.in_channels));
        std::mt19937_64 rng(seed);
        supervised_model m;
        m.config = cfg;
        m.net = nn::encoder<float>(cfg, rng);
        m.head = nn::linear_layer<float>(cfg.repr_dim, norm.dims(), rng);
        m.stats = std::move(stats);
        m.normalizer = std::move(norm);
        return m;
    }

    mel_spectrogram prepare(const mel_spectrogram& raw) const {
        return audio::apply_normalization(ssl::to_channels(raw, config.in_channels), stats);
    }

    nn::tensor forward(const nn::tensor& x, bool training) { return head(net(x, training)); }

    std::vector<action_params> predict(const std::vector<mel_spectrogram>& raw, std::size_t batch = 64) {
        detail::check_channels(raw, normalizer);
        nn::no_grad_guard ng;
        const std::size_t d = normalizer.dims();
        Eigen::MatrixXd z(static_cast<Eigen::Index>(raw.size()), static_cast<Eigen::Index>(d));
        for (std::size_t b0 = 0; b0 < raw.size(); b0 += batch) {
            std::vector<mel_spectrogram> chunk;
            for (std::size_t i = b0; i < std::min(raw.size(), b0 + batch); ++i)
                chunk.push_back(prepare(raw[i]));
            auto out = forward(ssl::to_batch(chunk), false);
            for (std::size_t r = 0; r < chunk.size(); ++r)
                for (std::size_t k = 0; k < d; ++k)
                    z(static_cast<Eigen::Index>(b0 + r), static_cast<Eigen::Index>(k)) = out.data()[r * d + k];
        }
        return detail::rows_to_actions(z, normalizer);
    }

    std::pair<std::vector<nn::named_param<float>>, std::vector<nn::named_buffer<float>>> state() {
        auto [ps, bs] = nn::collect_state<float>(net, "encoder");
        head.collect("head", ps);
        return {std::move(ps), std::move(bs)};
    }

    nn::checkpoint to_checkpoint() {
        nn::checkpoint ck;
        ck.kind = "supervised";
        ck.meta["config"] = config;
        ck.meta["stats"] = {{"mean", stats.mean}, {"std", stats.std}};
        ck.meta["normalizer"] = normalizer.to_json();
        ck.meta["augmented"] = augmented;
        auto [ps, bs] = state();
        nn::store_state(ck, ps, bs);
        return ck;
    }

    void save(const std::filesystem::path& path) { nn::save_checkpoint(to_checkpoint(), path); }

    static supervised_model load(const std::filesystem::path& path) {
        auto ck = nn::load_checkpoint(path);
        if (ck.kind != "supervised")
            throw format_error("checkpoint " + path.string() + " holds a '" + ck.kind + "', not a supervised model");
        supervised_model m;
        try {
            audio::channel_stats st;
            ck.meta.at("stats").at("mean").get_to(st.mean);
            ck.meta.at("stats").at("std").get_to(st.std);
            m = create(ck.meta.at("config").get<nn::encoder_config>(), st,
                       action_normalizer::from_json(ck.meta.at("normalizer")), 0);
            m.augmented = ck.meta.at("augmented").get<bool>();
        } catch (const nlohmann::json::exception& e) {
            throw format_error("checkpoint " + path.string() + ": bad metadata: " + e.what());
        }
        auto [ps, bs] = m.state();
        nn::restore_state(ck, ps, bs);
        return m;
    }
};

/// Trains `model` in place on raw spectrograms and their actions. Returns the
/// mean training loss (normalized action space) of each epoch.
inline std::vector<double> train_supervised(supervised_model& model, const std::vector<mel_spectrogram>& raw,
                                            const std::vector<action_params>& actions, const supervised_config& cfg,
                                            const std::function<void(std::size_t, double)>& on_epoch = {}) {
    cfg.validate();
    if (raw.empty())
        throw config_error("train_supervised: empty training split");
    if (raw.size() != actions.size())
        throw std::invalid_argument("train_supervised: clip and action counts differ");
    detail::check_channels(raw, model.normalizer);
    model.augmented = cfg.augment;

    std::vector<mel_spectrogram> prepared;
    prepared.reserve(raw.size());
    for (const auto& s : raw)
        prepared.push_back(model.prepare(s));
    const std::size_t d = model.normalizer.dims();
    std::vector<float> targets;
    targets.reserve(raw.size() * d);
    for (const auto& a : actions)
        for (double v : model.normalizer.normalize(a))
            targets.push_back(static_cast<float>(v));

    auto [ps, bs] = model.state();
    auto opt = nn::optimizer<float>::adam(ps, cfg.adam);
    std::mt19937_64 order_rng(synth::derive_seed(cfg.seed, 1));
    std::mt19937_64 aug_rng(synth::derive_seed(cfg.seed, 2));
    std::vector<std::size_t> order(raw.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;

    std::vector<double> trace;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        double sum = 0.0;
        std::size_t steps = 0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
            const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
            std::vector<mel_spectrogram> views;
            std::vector<const mel_spectrogram*> inputs;
            std::vector<float> y;
            y.reserve((b1 - b0) * d);
            if (cfg.augment)
                views.reserve(b1 - b0);
            for (std::size_t k = b0; k < b1; ++k) {
                const auto i = order[k];
                if (cfg.augment) {
                    views.push_back(ssl::random_resize_crop(prepared[i], cfg.aug, aug_rng));
                    inputs.push_back(&views.back());
                } else {
                    inputs.push_back(&prepared[i]);
                }
                y.insert(y.end(), targets.begin() + static_cast<std::ptrdiff_t>(i * d),
                         targets.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
            }
            opt.zero_grad();
            auto loss = nn::mse_loss(model.forward(ssl::to_batch(inputs), true), nn::tensor::from({b1 - b0, d}, y));
            const double lv = loss.item();
            if (!std::isfinite(lv))
                throw numeric_error("train_supervised: non-finite loss at epoch " + std::to_string(epoch + 1));
            nn::backward(loss);
            opt.step();
            sum += lv;
            ++steps;
        }
        trace.push_back(sum / static_cast<double>(steps));
        if (on_epoch)
            on_epoch(epoch + 1, trace.back());
    }
    return trace;
}

} // namespace sonact::models
