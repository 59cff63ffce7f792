#pragma once

// Convolutional spectrogram encoder and the two-layer heads used on top of it.

#include <sonact/error.hpp>
#include <sonact/nn/ops.hpp>

#include <json.hpp>

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace sonact::nn {

/// A trainable tensor with a stable name. `exempt` marks norm and bias
/// parameters, which skip weight decay and LARS trust scaling.
template <class T>
struct named_param {
    std::string name;
    basic_tensor<T> value;
    bool exempt = false;
};

/// Non-trainable state that still belongs in checkpoints (batch-norm running stats).
template <class T>
struct named_buffer {
    std::string name;
    std::vector<T>* values;
};

struct encoder_config {
    std::size_t in_channels = 1;
    std::vector<std::size_t> block_widths{8, 8, 16, 32};
    std::size_t repr_dim = 64;
    std::size_t proj_dim = 32;
    std::size_t pred_hidden = 128;

    void validate() const {
        if (in_channels < 1)
            throw config_error("encoder: in_channels must be >= 1");
        if (repr_dim < 1 || proj_dim < 1 || pred_hidden < 1)
            throw config_error("encoder: repr_dim, proj_dim and pred_hidden must be >= 1");
        if (block_widths.empty())
            throw config_error("encoder: block_widths must not be empty");
        for (auto w : block_widths)
            if (w < 1)
                throw config_error("encoder: block widths must be >= 1");
    }

    static encoder_config paper_scale(std::size_t in_channels) {
        encoder_config c;
        c.in_channels = in_channels;
        c.block_widths = {64, 128, 256, 512};
        c.repr_dim = 512;
        c.proj_dim = 128;
        c.pred_hidden = 1024;
        return c;
    }

    bool operator==(const encoder_config&) const = default;
};

inline void to_json(nlohmann::json& j, const encoder_config& c) {
    j = {{"in_channels", c.in_channels},
         {"block_widths", c.block_widths},
         {"repr_dim", c.repr_dim},
         {"proj_dim", c.proj_dim},
         {"pred_hidden", c.pred_hidden}};
}

inline void from_json(const nlohmann::json& j, encoder_config& c) {
    j.at("in_channels").get_to(c.in_channels);
    j.at("block_widths").get_to(c.block_widths);
    j.at("repr_dim").get_to(c.repr_dim);
    j.at("proj_dim").get_to(c.proj_dim);
    j.at("pred_hidden").get_to(c.pred_hidden);
}

namespace detail {

template <class T>
basic_tensor<T> he_normal(shape_t shape, std::size_t fan_in, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    std::vector<T> v(numel_of(shape));
    for (auto& x : v)
        x = static_cast<T>(d(rng));
    return basic_tensor<T>::parameter(std::move(shape), std::move(v));
}

template <class T>
basic_tensor<T> uniform_fan_in(shape_t shape, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> d(-bound, bound);
    std::vector<T> v(numel_of(shape));
    for (auto& x : v)
        x = static_cast<T>(d(rng));
    return basic_tensor<T>::parameter(std::move(shape), std::move(v));
}

template <class T>
basic_tensor<T> filled(std::size_t n, T value) {
    return basic_tensor<T>::parameter({n}, std::vector<T>(n, value));
}

template <class T>
basic_tensor<T> deep_copy(const basic_tensor<T>& t) {
    auto c = basic_tensor<T>::from(t.shape(), t.values());
    if (t.requires_grad())
        c = basic_tensor<T>::parameter(t.shape(), t.values());
    return c;
}

} // namespace detail

template <class T>
struct batch_norm_layer {
    basic_tensor<T> gamma, beta;
    bn_buffers<T> buffers;

    batch_norm_layer() = default;
    explicit batch_norm_layer(std::size_t channels)
        : gamma(detail::filled<T>(channels, T(1))), beta(detail::filled<T>(channels, T(0))), buffers(channels) {}

    basic_tensor<T> operator()(const basic_tensor<T>& x, bool training) {
        return batch_norm(x, gamma, beta, buffers, training);
    }

    void collect(const std::string& prefix, std::vector<named_param<T>>& ps, std::vector<named_buffer<T>>& bs) {
        ps.push_back({prefix + ".gamma", gamma, true});
        ps.push_back({prefix + ".beta", beta, true});
        bs.push_back({prefix + ".running_mean", &buffers.running_mean});
        bs.push_back({prefix + ".running_var", &buffers.running_var});
    }

    batch_norm_layer clone() const {
        batch_norm_layer c;
        c.gamma = detail::deep_copy(gamma);
        c.beta = detail::deep_copy(beta);
        c.buffers = buffers;
        return c;
    }
};

template <class T>
struct linear_layer {
    basic_tensor<T> weight, bias;

    linear_layer() = default;
    linear_layer(std::size_t in, std::size_t out, std::mt19937_64& rng)
        : weight(detail::uniform_fan_in<T>({out, in}, in, rng)), bias(detail::uniform_fan_in<T>({out}, in, rng)) {}

    basic_tensor<T> operator()(const basic_tensor<T>& x) const { return linear(x, weight, bias); }

    void collect(const std::string& prefix, std::vector<named_param<T>>& ps) {
        ps.push_back({prefix + ".weight", weight, false});
        ps.push_back({prefix + ".bias", bias, true});
    }

    linear_layer clone() const { return {detail::deep_copy(weight), detail::deep_copy(bias)}; }

private:
    linear_layer(basic_tensor<T> w, basic_tensor<T> b) : weight(std::move(w)), bias(std::move(b)) {}
};

/// conv3x3 -> batch norm -> relu -> maxpool 2x2
template <class T>
struct conv_block {
    basic_tensor<T> weight;
    batch_norm_layer<T> bn;

    conv_block() = default;
    conv_block(std::size_t in, std::size_t out, std::mt19937_64& rng)
        : weight(detail::he_normal<T>({out, in, 3, 3}, in * 9, rng)), bn(out) {}

    basic_tensor<T> operator()(const basic_tensor<T>& x, bool training) {
        return maxpool_2x2(relu(bn(conv2d_3x3(x, weight), training)));
    }

    void collect(const std::string& prefix, std::vector<named_param<T>>& ps, std::vector<named_buffer<T>>& bs) {
        ps.push_back({prefix + ".weight", weight, false});
        bn.collect(prefix + ".bn", ps, bs);
    }

    conv_block clone() const {
        conv_block c;
        c.weight = detail::deep_copy(weight);
        c.bn = bn.clone();
        return c;
    }
};

/// Spectrogram [N, C, mels, frames] -> representation [N, repr_dim].
template <class T>
class encoder {
public:
    encoder() = default;
    encoder(const encoder_config& cfg, std::mt19937_64& rng) : cfg_(cfg) {
        cfg.validate();
        std::size_t in = cfg.in_channels;
        for (auto w : cfg.block_widths) {
            blocks_.emplace_back(in, w, rng);
            in = w;
        }
        fc_ = linear_layer<T>(in, cfg.repr_dim, rng);
    }

    basic_tensor<T> operator()(const basic_tensor<T>& x, bool training) {
        return fc_(trunk(x, training));
    }

    /// Pooled block features [N, last width], before the final linear layer.
    basic_tensor<T> trunk(const basic_tensor<T>& x, bool training) {
        if (x.rank() != 4 || x.dim(1) != cfg_.in_channels)
            throw std::invalid_argument("encoder: expected input [N," + std::to_string(cfg_.in_channels)
                                        + ",H,W] (in_channels=" + std::to_string(cfg_.in_channels) + "), got "
                                        + shape_str(x.shape()));
        auto h = x;
        for (auto& b : blocks_)
            h = b(h, training);
        return global_avg_pool(h);
    }

    const linear_layer<T>& head() const { return fc_; }

    void collect(const std::string& prefix, std::vector<named_param<T>>& ps, std::vector<named_buffer<T>>& bs) {
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].collect(prefix + ".block" + std::to_string(i), ps, bs);
        fc_.collect(prefix + ".fc", ps);
    }

    encoder clone() const {
        encoder c;
        c.cfg_ = cfg_;
        for (const auto& b : blocks_)
            c.blocks_.push_back(b.clone());
        c.fc_ = fc_.clone();
        return c;
    }

    const encoder_config& config() const { return cfg_; }

private:
    encoder_config cfg_;
    std::vector<conv_block<T>> blocks_;
    linear_layer<T> fc_;
};

/// linear -> batch norm -> relu -> linear
template <class T>
class mlp_head {
public:
    mlp_head() = default;
    mlp_head(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng)
        : l1_(in, hidden, rng), bn_(hidden), l2_(hidden, out, rng) {}

    basic_tensor<T> operator()(const basic_tensor<T>& x, bool training) { return l2_(relu(bn_(l1_(x), training))); }

    void collect(const std::string& prefix, std::vector<named_param<T>>& ps, std::vector<named_buffer<T>>& bs) {
        l1_.collect(prefix + ".l1", ps);
        bn_.collect(prefix + ".bn", ps, bs);
        l2_.collect(prefix + ".l2", ps);
    }

    mlp_head clone() const {
        mlp_head c;
        c.l1_ = l1_.clone();
        c.bn_ = bn_.clone();
        c.l2_ = l2_.clone();
        return c;
    }

private:
    linear_layer<T> l1_;
    batch_norm_layer<T> bn_;
    linear_layer<T> l2_;
};

/// Parameters and buffers of a module under a name prefix.
template <class T, class Module>
std::pair<std::vector<named_param<T>>, std::vector<named_buffer<T>>> collect_state(Module& m,
                                                                                   const std::string& prefix) {
    std::vector<named_param<T>> ps;
    std::vector<named_buffer<T>> bs;
    m.collect(prefix, ps, bs);
    return {std::move(ps), std::move(bs)};
}

/// Total number of scalar parameters.
template <class T>
std::size_t count_parameters(const std::vector<named_param<T>>& ps) {
    std::size_t n = 0;
    for (const auto& p : ps)
        n += p.value.numel();
    return n;
}

} // namespace sonact::nn
