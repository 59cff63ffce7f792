#pragma once

// Linear probe on frozen representations.

#include <sonact/error.hpp>
#include <sonact/nn/ops.hpp>
#include <sonact/nn/optim.hpp>
#include <sonact/synth/seed.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace sonact::models {

/// a = W^T z + b, in normalized action space.
struct probe_weights {
    Eigen::MatrixXd W; // repr_dim x action_dim
    Eigen::VectorXd b; // action_dim

    Eigen::MatrixXd apply(const Eigen::MatrixXd& z) const {
        Eigen::MatrixXd out = z * W;
        out.rowwise() += b.transpose();
        return out;
    }

    bool finite() const { return W.allFinite() && b.allFinite(); }
};

struct probe_config {
    nn::adam_hparams adam{1e-4, 1e-4, 0.9, 0.999, 1e-8};
    std::size_t max_batch = 1024;
    /// Upper bound on epochs.
    std::size_t epochs = 40000;
    /// Stop once a window of this many epochs improves the loss by less than
    /// `tolerance` (relative). Zero disables early stopping.
    std::size_t plateau_window = 1000;
    double tolerance = 1e-5;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 1)
            throw config_error("probe: epochs must be >= 1");
        if (max_batch < 1)
            throw config_error("probe: max_batch must be >= 1");
        if (!(adam.lr > 0.0))
            throw config_error("probe: learning rate must be positive");
    }
};

struct probe_fit {
    probe_weights weights;
    double train_loss = 0.0; // mean over samples of squared L2 residual
    std::size_t epochs_run = 0;
};

/// Mean over rows of the squared L2 residual.
inline double probe_loss(const probe_weights& w, const Eigen::MatrixXd& z, const Eigen::MatrixXd& targets) {
    return (w.apply(z) - targets).rowwise().squaredNorm().mean();
}

/// Adam on the squared loss. Features are whitened internally and the weights
/// folded back to the original feature space on return; the bias starts at
/// the target mean.
inline probe_fit fit_probe(const Eigen::MatrixXd& z, const Eigen::MatrixXd& targets, const probe_config& cfg = {}) {
    cfg.validate();
    const auto n = static_cast<std::size_t>(z.rows());
    if (n == 0)
        throw config_error("fit_probe: empty training split");
    if (targets.rows() != z.rows())
        throw std::invalid_argument("fit_probe: " + std::to_string(z.rows()) + " representations but "
                                    + std::to_string(targets.rows()) + " targets");
    if (!z.allFinite() || !targets.allFinite())
        throw numeric_error("fit_probe: non-finite representations or targets");
    const auto d = static_cast<std::size_t>(targets.cols());

    // Whitening basis: principal directions scaled to unit variance; directions
    // with negligible variance are dropped.
    const Eigen::RowVectorXd mu = z.colwise().mean();
    const Eigen::MatrixXd zc = z.rowwise() - mu;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig((zc.transpose() * zc) / static_cast<double>(n));
    const Eigen::VectorXd& lam = eig.eigenvalues();
    const double lam_max = lam.size() ? std::max(lam.maxCoeff(), 0.0) : 0.0;
    std::vector<Eigen::Index> keep;
    for (Eigen::Index k = 0; k < lam.size(); ++k)
        if (lam(k) > 1e-10 * lam_max && lam(k) > 1e-300)
            keep.push_back(k);
    Eigen::MatrixXd basis(z.cols(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k)
        basis.col(static_cast<Eigen::Index>(k)) = eig.eigenvectors().col(keep[k]) / std::sqrt(lam(keep[k]));
    const Eigen::MatrixXd zs = zc * basis;
    const auto r = static_cast<std::size_t>(zs.cols());
    if (r == 0) {
        probe_fit fit;
        fit.weights.W = Eigen::MatrixXd::Zero(z.cols(), targets.cols());
        fit.weights.b = targets.colwise().mean().transpose();
        fit.train_loss = probe_loss(fit.weights, z, targets);
        return fit;
    }

    // [n, r] and [n, d] row-major copies for the autodiff graph.
    std::vector<double> xs(n * r), ys(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < r; ++k)
            xs[i * r + k] = zs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
        for (std::size_t k = 0; k < d; ++k)
            ys[i * d + k] = targets(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    }

    auto w = nn::tensor64::parameter({d, r}, std::vector<double>(d * r, 0.0));
    std::vector<double> b0(d);
    for (std::size_t k = 0; k < d; ++k)
        b0[k] = targets.col(static_cast<Eigen::Index>(k)).mean();
    auto b = nn::tensor64::parameter({d}, b0);
    auto opt = nn::optimizer<double>::adam({{"probe.weight", w, false}, {"probe.bias", b, true}}, cfg.adam);

    const std::size_t batch = std::min(cfg.max_batch, n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(synth::derive_seed(cfg.seed, 3));
    nn::tensor64 x_full = nn::tensor64::from({n, r}, xs), y_full = nn::tensor64::from({n, d}, ys);

    auto full_loss = [&] {
        nn::no_grad_guard ng;
        return nn::mse_loss(nn::linear(x_full, w, b), y_full).item();
    };

    probe_fit fit;
    double window_start = full_loss();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (batch < n)
            std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t s0 = 0; s0 < n; s0 += batch) {
            const std::size_t s1 = std::min(n, s0 + batch);
            nn::tensor64 x = x_full, y = y_full;
            if (batch < n) {
                std::vector<double> bx((s1 - s0) * r), by((s1 - s0) * d);
                for (std::size_t i = s0; i < s1; ++i) {
                    std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>(order[i] * r), r,
                                bx.begin() + static_cast<std::ptrdiff_t>((i - s0) * r));
                    std::copy_n(ys.begin() + static_cast<std::ptrdiff_t>(order[i] * d), d,
                                by.begin() + static_cast<std::ptrdiff_t>((i - s0) * d));
                }
                x = nn::tensor64::from({s1 - s0, r}, std::move(bx));
                y = nn::tensor64::from({s1 - s0, d}, std::move(by));
            }
            opt.zero_grad();
            nn::backward(nn::mse_loss(nn::linear(x, w, b), y));
            opt.step();
        }
        fit.epochs_run = epoch + 1;
        if (cfg.plateau_window > 0 && fit.epochs_run % cfg.plateau_window == 0) {
            const double now = full_loss();
            if (!std::isfinite(now))
                throw numeric_error("fit_probe: non-finite loss at epoch " + std::to_string(fit.epochs_run));
            if (window_start - now < cfg.tolerance * std::max(now, 1e-300))
                break;
            window_start = now;
        }
    }

    // Fold the whitening back: W = basis Ws, b = bs - mu W.
    Eigen::MatrixXd ws(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < r; ++k)
        for (std::size_t j = 0; j < d; ++j)
            ws(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = w.data()[j * r + k];
    fit.weights.W = basis * ws;
    fit.weights.b = Eigen::Map<const Eigen::VectorXd>(b.data().data(), static_cast<Eigen::Index>(d));
    fit.weights.b -= (mu * fit.weights.W).transpose();
    if (!fit.weights.finite())
        throw numeric_error("fit_probe: non-finite weights");
    fit.train_loss = probe_loss(fit.weights, z, targets);
    return fit;
}

} // namespace sonact::models
