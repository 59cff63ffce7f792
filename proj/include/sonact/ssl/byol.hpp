#pragma once

// Bootstrap-your-own-latent pretraining: online/target networks, the
// normalized regression loss, EMA target updates and view construction for
// the pairing variants.

#include <sonact/audio/normalize.hpp>
#include <sonact/error.hpp>
#include <sonact/nn/checkpoint.hpp>
#include <sonact/nn/encoder.hpp>
#include <sonact/nn/optim.hpp>
#include <sonact/ssl/augment.hpp>
#include <sonact/synth/seed.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace sonact::ssl {

using nn::tensor;

enum class variant { byol, byol_act, byol_aa, byol_all };

inline std::string to_string(variant v) {
    switch (v) {
    case variant::byol: return "byol";
    case variant::byol_act: return "byol_act";
    case variant::byol_aa: return "byol_aa";
    case variant::byol_all: return "byol_all";
    }
    return "?";
}

inline variant parse_variant(const std::string& s) {
    for (auto v : {variant::byol, variant::byol_act, variant::byol_aa, variant::byol_all})
        if (to_string(v) == s)
            return v;
    throw config_error("unknown pretraining variant '" + s + "' (expected byol, byol_act, byol_aa, byol_all)");
}

/// Mean over the batch of 2 - 2 cos(p, z). The target side is treated as a constant.
inline tensor byol_loss(const tensor& online_pred, const tensor& target_proj) {
    auto z = target_proj.detach();
    auto cos = nn::rowdot(nn::l2_normalize(online_pred), nn::l2_normalize(z));
    return nn::affine(nn::mean(cos), -2.0f, 2.0f);
}

/// target <- tau * target + (1 - tau) * online
template <class T>
void ema_update(std::vector<nn::named_param<T>>& target, const std::vector<nn::named_param<T>>& online, double tau) {
    if (target.size() != online.size())
        throw std::invalid_argument("ema_update: parameter lists differ in length");
    for (std::size_t i = 0; i < target.size(); ++i) {
        auto t = target[i].value.data();
        auto o = online[i].value.data();
        if (t.size() != o.size())
            throw std::invalid_argument("ema_update: shape mismatch at '" + target[i].name + "'");
        for (std::size_t k = 0; k < t.size(); ++k)
            t[k] = static_cast<T>(tau * t[k] + (1.0 - tau) * o[k]);
    }
}

// ---------------------------------------------------------------- data

/// Repeats a mono spectrogram across channels; identity when counts already match.
inline mel_spectrogram to_channels(const mel_spectrogram& s, std::size_t channels) {
    if (s.channels == channels)
        return s;
    if (s.channels != 1)
        throw config_error("cannot map a " + std::to_string(s.channels) + "-channel spectrogram to in_channels="
                           + std::to_string(channels));
    mel_spectrogram out = mel_spectrogram::zeros(channels, s.n_mels, s.n_frames);
    out.frame_hop = s.frame_hop;
    out.source_rate = s.source_rate;
    for (std::size_t c = 0; c < channels; ++c)
        std::copy(s.values.begin(), s.values.end(), out.channel(c).begin());
    return out;
}

/// Stacks spectrograms of equal shape into an [N, C, mels, frames] tensor.
inline tensor to_batch(const std::vector<const mel_spectrogram*>& specs) {
    if (specs.empty())
        throw std::invalid_argument("to_batch: empty batch");
    const auto& f = *specs.front();
    std::vector<float> v;
    v.reserve(specs.size() * f.values.size());
    for (const auto* s : specs) {
        if (!s->same_shape(f))
            throw std::invalid_argument("to_batch: spectrogram shapes differ within a batch");
        v.insert(v.end(), s->values.begin(), s->values.end());
    }
    return tensor::from({specs.size(), f.channels, f.n_mels, f.n_frames}, std::move(v));
}

inline tensor to_batch(const std::vector<mel_spectrogram>& specs) {
    std::vector<const mel_spectrogram*> p;
    for (const auto& s : specs)
        p.push_back(&s);
    return to_batch(p);
}

/// Normalized spectrograms grouped by behaviour, so repeats of one action can be paired.
class view_pool {
public:
    void add(mel_spectrogram spec, std::size_t group_key) {
        if (!specs_.empty() && !spec.same_shape(specs_.front()))
            throw std::invalid_argument("view_pool: spectrogram shape differs from the pool");
        auto [it, fresh] = group_of_key_.try_emplace(group_key, members_.size());
        if (fresh)
            members_.emplace_back();
        group_.push_back(it->second);
        members_[it->second].push_back(specs_.size());
        specs_.push_back(std::move(spec));
    }

    std::size_t size() const noexcept { return specs_.size(); }
    bool empty() const noexcept { return specs_.empty(); }
    const mel_spectrogram& spec(std::size_t i) const { return specs_.at(i); }
    const std::vector<std::size_t>& siblings(std::size_t i) const { return members_[group_.at(i)]; }
    std::size_t channels() const { return specs_.empty() ? 0 : specs_.front().channels; }

private:
    std::vector<mel_spectrogram> specs_;
    std::vector<std::size_t> group_;
    std::map<std::size_t, std::size_t> group_of_key_;
    std::vector<std::vector<std::size_t>> members_;
};

/// One augmentation of pool sample i: random resize-crop, or mixup with a
/// random partner from the pool when the config selects mixup.
template <class Rng>
mel_spectrogram augment(const view_pool& pool, std::size_t i, const augmentation_config& aug, Rng& rng) {
    if (aug.use_mixup) {
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        return mixup(pool.spec(i), pool.spec(pick(rng)), aug, rng);
    }
    return random_resize_crop(pool.spec(i), aug, rng);
}

template <class Rng>
std::pair<mel_spectrogram, mel_spectrogram> make_view_pair(const view_pool& pool, std::size_t i, variant v,
                                                           const augmentation_config& aug, Rng& rng) {
    if (v == variant::byol || v == variant::byol_all)
        return {augment(pool, i, aug, rng), augment(pool, i, aug, rng)};

    const auto& sib = pool.siblings(i);
    if (sib.size() < 2)
        throw config_error(to_string(v) + " needs at least two repeats per behaviour; sample " + std::to_string(i)
                           + " has none");
    std::uniform_int_distribution<std::size_t> pick(0, sib.size() - 2);
    std::size_t j = sib[pick(rng)];
    if (j == i)
        j = sib.back();
    if (v == variant::byol_act)
        return {pool.spec(i), pool.spec(j)};
    return {augment(pool, i, aug, rng), augment(pool, j, aug, rng)};
}

// ---------------------------------------------------------------- state

/// Online encoder, projector and predictor, the EMA target copies, and the
/// input normalization the encoder was trained with.
struct encoder_state {
    nn::encoder_config config;
    nn::encoder<float> online;
    nn::mlp_head<float> projector;
    nn::mlp_head<float> predictor;
    nn::encoder<float> target;
    nn::mlp_head<float> target_projector;
    audio::channel_stats stats;
    long step = 0;
    nlohmann::json info = nlohmann::json::object();

    static encoder_state create(const nn::encoder_config& cfg, audio::channel_stats stats, std::uint64_t seed) {
        cfg.validate();
        if (stats.channels() != cfg.in_channels)
            throw config_error("encoder_state: normalization has " + std::to_string(stats.channels())
                               + " channels but in_channels=" + std::to_string(cfg.in_channels));
        std::mt19937_64 rng(seed);
        encoder_state s;
        s.config = cfg;
        s.online = nn::encoder<float>(cfg, rng);
        s.projector = nn::mlp_head<float>(cfg.repr_dim, cfg.pred_hidden, cfg.proj_dim, rng);
        s.predictor = nn::mlp_head<float>(cfg.proj_dim, cfg.pred_hidden, cfg.proj_dim, rng);
        s.reset_target();
        s.stats = std::move(stats);
        return s;
    }

    void reset_target() {
        target = online.clone();
        target_projector = projector.clone();
    }

    std::pair<std::vector<nn::named_param<float>>, std::vector<nn::named_buffer<float>>> online_state() {
        auto [ps, bs] = nn::collect_state<float>(online, "encoder");
        projector.collect("projector", ps, bs);
        predictor.collect("predictor", ps, bs);
        return {std::move(ps), std::move(bs)};
    }

    /// Online encoder + projector, aligned element-wise with target_params().
    std::vector<nn::named_param<float>> online_ema_params() {
        auto [ps, bs] = nn::collect_state<float>(online, "encoder");
        projector.collect("projector", ps, bs);
        return ps;
    }

    std::vector<nn::named_param<float>> target_params() {
        auto [ps, bs] = nn::collect_state<float>(target, "encoder");
        target_projector.collect("projector", ps, bs);
        return ps;
    }

    /// Normalizes (and channel-reconciles) a raw spectrogram for this encoder.
    mel_spectrogram prepare(const mel_spectrogram& raw) const {
        return audio::apply_normalization(to_channels(raw, config.in_channels), stats);
    }

    /// The checkpoint drops the target network.
    nn::checkpoint to_checkpoint() {
        nn::checkpoint ck;
        ck.kind = "encoder";
        ck.meta["config"] = config;
        ck.meta["stats"] = {{"mean", stats.mean}, {"std", stats.std}};
        ck.meta["step"] = step;
        ck.meta["info"] = info;
        auto [ps, bs] = online_state();
        nn::store_state(ck, ps, bs);
        return ck;
    }

    void save(const std::filesystem::path& path) { nn::save_checkpoint(to_checkpoint(), path); }

    /// Loads an encoder checkpoint; `expect_in_channels` guards against using
    /// an encoder trained for a task with a different microphone count.
    static encoder_state load(const std::filesystem::path& path, std::optional<std::size_t> expect_in_channels = {}) {
        auto ck = nn::load_checkpoint(path);
        if (ck.kind != "encoder")
            throw format_error("checkpoint " + path.string() + " holds a '" + ck.kind + "', not an encoder");
        return from_checkpoint(ck, path.string(), expect_in_channels);
    }

    /// Rebuilds the online networks from any checkpoint that embeds them.
    static encoder_state from_checkpoint(const nn::checkpoint& ck, const std::string& origin,
                                         std::optional<std::size_t> expect_in_channels = {}) {
        nn::encoder_config cfg;
        audio::channel_stats st;
        try {
            cfg = ck.meta.at("config").get<nn::encoder_config>();
            ck.meta.at("stats").at("mean").get_to(st.mean);
            ck.meta.at("stats").at("std").get_to(st.std);
        } catch (const nlohmann::json::exception& e) {
            throw format_error("checkpoint " + origin + ": bad encoder metadata: " + e.what());
        }
        if (expect_in_channels && *expect_in_channels != cfg.in_channels)
            throw format_error("checkpoint " + origin + " has in_channels=" + std::to_string(cfg.in_channels)
                               + " but the task needs in_channels=" + std::to_string(*expect_in_channels));
        auto s = create(cfg, st, 0);
        s.step = ck.meta.value("step", 0L);
        s.info = ck.meta.value("info", nlohmann::json::object());
        auto [ps, bs] = s.online_state();
        nn::restore_state(ck, ps, bs);
        s.reset_target();
        return s;
    }
};

/// Frozen-encoder representations of prepared spectrograms, one row per input.
/// The final linear layer is applied in double precision, so the rank of the
/// representation set is that of the pooled features, not inflated by float
/// rounding.
inline Eigen::MatrixXd represent(nn::encoder<float>& enc, const std::vector<mel_spectrogram>& prepared,
                                 std::size_t batch = 64) {
    nn::no_grad_guard ng;
    const auto& fc = enc.head();
    const std::size_t out = fc.weight.dim(0), in = fc.weight.dim(1);
    Eigen::MatrixXd w(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    for (std::size_t o = 0; o < out; ++o)
        for (std::size_t i = 0; i < in; ++i)
            w(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(i)) = fc.weight.data()[o * in + i];
    Eigen::RowVectorXd bias(static_cast<Eigen::Index>(out));
    for (std::size_t o = 0; o < out; ++o)
        bias(static_cast<Eigen::Index>(o)) = fc.bias.data()[o];

    const std::size_t n = prepared.size();
    Eigen::MatrixXd feats(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in));
    for (std::size_t b0 = 0; b0 < n; b0 += batch) {
        std::vector<const mel_spectrogram*> chunk;
        for (std::size_t i = b0; i < std::min(n, b0 + batch); ++i)
            chunk.push_back(&prepared[i]);
        auto h = enc.trunk(to_batch(chunk), false);
        for (std::size_t r = 0; r < chunk.size(); ++r)
            for (std::size_t k = 0; k < in; ++k)
                feats(static_cast<Eigen::Index>(b0 + r), static_cast<Eigen::Index>(k)) = h.data()[r * in + k];
    }
    Eigen::MatrixXd z = feats * w.transpose();
    z.rowwise() += bias;
    return z;
}

// ---------------------------------------------------------------- training

struct pretrain_config {
    variant kind = variant::byol;
    std::size_t epochs = 100;
    std::size_t batch_size = 128;
    double ema_tau = 0.99;
    nn::lars_hparams lars;
    augmentation_config aug;
    std::uint64_t seed = 0;
    /// Also evaluate the untrained networks on the first epoch's pairs.
    bool measure_initial_loss = false;

    void validate() const {
        if (!(ema_tau >= 0.0 && ema_tau < 1.0))
            throw config_error("pretrain: ema_tau must lie in [0, 1)");
        if (batch_size < 2)
            throw config_error("pretrain: batch_size must be >= 2");
        if (epochs < 1)
            throw config_error("pretrain: epochs must be >= 1");
        aug.validate();
    }
};

struct pretrain_result {
    std::vector<double> loss_trace;
    std::optional<double> initial_loss;
};

namespace detail {

inline tensor symmetric_loss(encoder_state& s, const tensor& x1, const tensor& x2) {
    auto p1 = s.predictor(s.projector(s.online(x1, true), true), true);
    auto p2 = s.predictor(s.projector(s.online(x2, true), true), true);
    tensor z1, z2;
    {
        nn::no_grad_guard ng;
        z1 = s.target_projector(s.target(x1, true), true);
        z2 = s.target_projector(s.target(x2, true), true);
    }
    return nn::add(byol_loss(p1, z2), byol_loss(p2, z1));
}

} // namespace detail

/// Runs symmetrized BYOL with LARS and an EMA target. The loss trace holds
/// the mean symmetrized loss (range [0, 8]) of each epoch.
inline pretrain_result pretrain(encoder_state& state, const view_pool& pool, const pretrain_config& cfg,
                                const std::function<void(std::size_t, double)>& on_epoch = {}) {
    cfg.validate();
    if (pool.empty())
        throw config_error("pretrain: empty training pool");
    if (pool.channels() != state.config.in_channels)
        throw config_error("pretrain: pool has " + std::to_string(pool.channels()) + " channels, encoder in_channels="
                           + std::to_string(state.config.in_channels));
    if (pool.size() < 2)
        throw config_error("pretrain: need at least two samples");

    auto [online_ps, online_bs] = state.online_state();
    auto opt = nn::optimizer<float>::lars(online_ps, cfg.lars);
    auto ema_online = state.online_ema_params();
    auto ema_target = state.target_params();

    std::mt19937_64 order_rng(synth::derive_seed(cfg.seed, 1));
    std::mt19937_64 view_rng(synth::derive_seed(cfg.seed, 2));

    pretrain_result res;
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;

    std::optional<encoder_state> frozen;
    if (cfg.measure_initial_loss) {
        frozen.emplace();
        frozen->config = state.config;
        frozen->online = state.online.clone();
        frozen->projector = state.projector.clone();
        frozen->predictor = state.predictor.clone();
        frozen->target = state.target.clone();
        frozen->target_projector = state.target_projector.clone();
    }
    double frozen_sum = 0.0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
            const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
            if (b1 - b0 < 2)
                break;
            std::vector<mel_spectrogram> v1, v2;
            v1.reserve(b1 - b0);
            v2.reserve(b1 - b0);
            for (std::size_t k = b0; k < b1; ++k) {
                auto [a, b] = make_view_pair(pool, order[k], cfg.kind, cfg.aug, view_rng);
                v1.push_back(std::move(a));
                v2.push_back(std::move(b));
            }
            auto x1 = to_batch(v1), x2 = to_batch(v2);

            if (frozen && epoch == 0) {
                nn::no_grad_guard ng;
                frozen_sum += detail::symmetric_loss(*frozen, x1, x2).item();
            }

            opt.zero_grad();
            auto loss = detail::symmetric_loss(state, x1, x2);
            const double lv = loss.item();
            if (!std::isfinite(lv))
                throw numeric_error("pretrain: non-finite loss at epoch " + std::to_string(epoch + 1) + ", step "
                                    + std::to_string(state.step + 1));
            nn::backward(loss);
            opt.step();
            ema_update(ema_target, ema_online, cfg.ema_tau);
            ++state.step;
            loss_sum += lv;
            ++batches;
        }
        const double epoch_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
        if (frozen && epoch == 0)
            res.initial_loss = frozen_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
        res.loss_trace.push_back(epoch_loss);
        if (on_epoch)
            on_epoch(epoch + 1, epoch_loss);
    }
    return res;
}

/// Writes "epoch,loss" rows.
inline void write_loss_trace(const std::filesystem::path& path, const std::vector<double>& trace) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp);
        f << "epoch,loss\n";
        f.precision(9);
        for (std::size_t i = 0; i < trace.size(); ++i)
            f << (i + 1) << ',' << trace[i] << '\n';
        if (!f)
            throw std::runtime_error("cannot write " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

} // namespace sonact::ssl
