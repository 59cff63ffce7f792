#pragma once

// Differentiable operations. Activations use NCHW layout; dense layers use
// [batch, features]. Reductions accumulate in double.

#include <sonact/nn/tensor.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>

namespace sonact::nn {

namespace detail {

template <class T>
using row_matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using matrix_map = Eigen::Map<row_matrix<T>>;
template <class T>
using const_matrix_map = Eigen::Map<const row_matrix<T>>;

inline void require(bool ok, const std::string& op, const std::string& what) {
    if (!ok)
        throw std::invalid_argument(op + ": " + what);
}

template <class T>
void require_same_shape(const basic_tensor<T>& a, const basic_tensor<T>& b, const char* op) {
    require(a.shape() == b.shape(), op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Double-precision reductions with eight independent partial sums, so the
// compiler can vectorize while the summation order stays fixed.
template <class T>
double sum_d(const T* __restrict x, std::size_t n) {
    double acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (std::size_t j = 0; j < 8; ++j)
            acc[j] += static_cast<double>(x[i + j]);
    for (; i < n; ++i)
        acc[0] += static_cast<double>(x[i]);
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

template <class T>
double dot_d(const T* __restrict x, const T* __restrict y, std::size_t n) {
    double acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (std::size_t j = 0; j < 8; ++j)
            acc[j] += static_cast<double>(x[i + j]) * static_cast<double>(y[i + j]);
    for (; i < n; ++i)
        acc[0] += static_cast<double>(x[i]) * static_cast<double>(y[i]);
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

/// sum (x - m)^2
template <class T>
double sq_dev_d(const T* __restrict x, std::size_t n, double m) {
    double acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (std::size_t j = 0; j < 8; ++j) {
            const double d = static_cast<double>(x[i + j]) - m;
            acc[j] += d * d;
        }
    for (; i < n; ++i) {
        const double d = static_cast<double>(x[i]) - m;
        acc[0] += d * d;
    }
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

template <class T>
node<T>* grad_target(node<T>& self, std::size_t i) {
    auto* p = self.parents[i].get();
    if (!p || !p->requires_grad)
        return nullptr;
    p->ensure_grad();
    return p;
}

} // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
basic_tensor<T> add(const basic_tensor<T>& a, const basic_tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.data()[i] + b.data()[i];
    return make_result<T>(a.shape(), std::move(out), {a, b}, [](node<T>& self) {
        for (std::size_t k = 0; k < 2; ++k)
            if (auto* p = detail::grad_target(self, k))
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    p->grad[i] += self.grad[i];
    });
}

template <class T>
basic_tensor<T> sub(const basic_tensor<T>& a, const basic_tensor<T>& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.data()[i] - b.data()[i];
    return make_result<T>(a.shape(), std::move(out), {a, b}, [](node<T>& self) {
        if (auto* p = detail::grad_target(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                p->grad[i] += self.grad[i];
        if (auto* p = detail::grad_target(self, 1))
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                p->grad[i] -= self.grad[i];
    });
}

template <class T>
basic_tensor<T> mul(const basic_tensor<T>& a, const basic_tensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.data()[i] * b.data()[i];
    return make_result<T>(a.shape(), std::move(out), {a, b}, [](node<T>& self) {
        const auto& x = self.parents[0]->data;
        const auto& y = self.parents[1]->data;
        if (auto* p = detail::grad_target(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                p->grad[i] += self.grad[i] * y[i];
        if (auto* p = detail::grad_target(self, 1))
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                p->grad[i] += self.grad[i] * x[i];
    });
}

/// s * a + c
template <class T>
basic_tensor<T> affine(const basic_tensor<T>& a, T s, T c = T(0)) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = s * a.data()[i] + c;
    return make_result<T>(a.shape(), std::move(out), {a}, [s](node<T>& self) {
        if (auto* p = detail::grad_target(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                p->grad[i] += s * self.grad[i];
    });
}

template <class T>
basic_tensor<T> square(const basic_tensor<T>& a) {
    return mul(a, a);
}

template <class T>
basic_tensor<T> relu(const basic_tensor<T>& a) {
    const std::size_t n = a.numel();
    std::vector<T> out(n);
    const T* x = a.data().data();
    T* y = out.data();
    for (std::size_t i = 0; i < n; ++i)
        y[i] = x[i] > T(0) ? x[i] : T(0);
    if (auto* tr = detail::active_trace)
        for (std::size_t i = 0; i < n; ++i)
            tr->decisions.push_back(x[i] > T(0));
    return make_result<T>(a.shape(), std::move(out), {a}, [](node<T>& self) {
        if (auto* p = detail::grad_target(self, 0)) {
            const std::size_t n = self.grad.size();
            const T* __restrict x = p->data.data();
            const T* __restrict g = self.grad.data();
            T* __restrict dx = p->grad.data();
            for (std::size_t i = 0; i < n; ++i)
                dx[i] += x[i] > T(0) ? g[i] : T(0);
        }
    });
}

// ---------------------------------------------------------------- reductions

template <class T>
basic_tensor<T> sum(const basic_tensor<T>& a) {
    const double acc = detail::sum_d(a.data().data(), a.numel());
    return make_result<T>({1}, {static_cast<T>(acc)}, {a}, [](node<T>& self) {
        if (auto* p = detail::grad_target(self, 0))
            for (auto& g : p->grad)
                g += self.grad[0];
    });
}

template <class T>
basic_tensor<T> mean(const basic_tensor<T>& a) {
    return affine(sum(a), T(1) / static_cast<T>(a.numel()));
}

/// Mean over the batch of the squared L2 error per row: (1/N) sum_n ||p_n - t_n||^2.
/// The target is treated as a constant.
template <class T>
basic_tensor<T> mse_loss(const basic_tensor<T>& pred, const basic_tensor<T>& target) {
    detail::require_same_shape(pred, target, "mse_loss");
    const std::size_t n = pred.dim(0);
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double d = double(pred.data()[i]) - target.data()[i];
        acc += d * d;
    }
    auto diff = std::vector<T>(pred.numel());
    for (std::size_t i = 0; i < diff.size(); ++i)
        diff[i] = pred.data()[i] - target.data()[i];
    return make_result<T>({1}, {static_cast<T>(acc / n)}, {pred},
                          [diff = std::move(diff), n](node<T>& self) {
                              if (auto* p = detail::grad_target(self, 0)) {
                                  const T k = T(2) * self.grad[0] / static_cast<T>(n);
                                  for (std::size_t i = 0; i < diff.size(); ++i)
                                      p->grad[i] += k * diff[i];
                              }
                          });
}

/// Row-wise dot product of two [N, D] tensors -> [N].
template <class T>
basic_tensor<T> rowdot(const basic_tensor<T>& a, const basic_tensor<T>& b) {
    detail::require_same_shape(a, b, "rowdot");
    detail::require(a.rank() == 2, "rowdot", "expects [N, D], got " + shape_str(a.shape()));
    const std::size_t n = a.dim(0), d = a.dim(1);
    std::vector<T> out(n);
    for (std::size_t r = 0; r < n; ++r) {
        out[r] = static_cast<T>(detail::dot_d(a.data().data() + r * d, b.data().data() + r * d, d));
    }
    return make_result<T>({n}, std::move(out), {a, b}, [n, d](node<T>& self) {
        const auto& x = self.parents[0]->data;
        const auto& y = self.parents[1]->data;
        if (auto* p = detail::grad_target(self, 0))
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t k = 0; k < d; ++k)
                    p->grad[r * d + k] += self.grad[r] * y[r * d + k];
        if (auto* p = detail::grad_target(self, 1))
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t k = 0; k < d; ++k)
                    p->grad[r * d + k] += self.grad[r] * x[r * d + k];
    });
}

inline constexpr double l2_eps = 1e-12;

/// Rows scaled to unit L2 norm; an all-zero row stays zero (and passes no gradient).
template <class T>
basic_tensor<T> l2_normalize(const basic_tensor<T>& a) {
    detail::require(a.rank() == 2, "l2_normalize", "expects [N, D], got " + shape_str(a.shape()));
    const std::size_t n = a.dim(0), d = a.dim(1);
    std::vector<T> out(a.numel());
    std::vector<double> norms(n);
    for (std::size_t r = 0; r < n; ++r) {
        double sq = 0.0;
        for (std::size_t k = 0; k < d; ++k)
            sq += double(a.data()[r * d + k]) * a.data()[r * d + k];
        norms[r] = std::sqrt(sq);
        const double inv = norms[r] > l2_eps ? 1.0 / norms[r] : 0.0;
        for (std::size_t k = 0; k < d; ++k)
            out[r * d + k] = static_cast<T>(a.data()[r * d + k] * inv);
    }
    return make_result<T>(a.shape(), out, {a}, [n, d, norms = std::move(norms), y = out](node<T>& self) {
        auto* p = detail::grad_target(self, 0);
        if (!p)
            return;
        // dx = (g - y <y, g>) / ||x||
        for (std::size_t r = 0; r < n; ++r) {
            if (!(norms[r] > l2_eps))
                continue;
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k)
                dot += double(self.grad[r * d + k]) * y[r * d + k];
            for (std::size_t k = 0; k < d; ++k)
                p->grad[r * d + k] += static_cast<T>((self.grad[r * d + k] - y[r * d + k] * dot) / norms[r]);
        }
    });
}

// ---------------------------------------------------------------- dense

/// y = x W^T + b with x [N, I], W [O, I], b [O] (optional).
template <class T>
basic_tensor<T> linear(const basic_tensor<T>& x, const basic_tensor<T>& w, const basic_tensor<T>& b = {}) {
    detail::require(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(1), "linear",
                    "input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(w.shape()));
    const std::size_t n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
    if (b.defined())
        detail::require(b.rank() == 1 && b.dim(0) == out_dim, "linear",
                        "bias " + shape_str(b.shape()) + " does not match weight " + shape_str(w.shape()));

    std::vector<T> out(n * out_dim);
    detail::matrix_map<T> Y(out.data(), n, out_dim);
    detail::const_matrix_map<T> X(x.data().data(), n, in), W(w.data().data(), out_dim, in);
    Y.noalias() = X * W.transpose();
    if (b.defined())
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t o = 0; o < out_dim; ++o)
                out[r * out_dim + o] += b.data()[o];

    return make_result<T>({n, out_dim}, std::move(out), {x, w, b}, [n, in, out_dim](node<T>& self) {
        detail::const_matrix_map<T> G(self.grad.data(), n, out_dim);
        if (auto* p = detail::grad_target(self, 0)) {
            detail::const_matrix_map<T> W(self.parents[1]->data.data(), out_dim, in);
            detail::matrix_map<T>(p->grad.data(), n, in).noalias() += G * W;
        }
        if (auto* p = detail::grad_target(self, 1)) {
            detail::const_matrix_map<T> X(self.parents[0]->data.data(), n, in);
            detail::matrix_map<T>(p->grad.data(), out_dim, in).noalias() += G.transpose() * X;
        }
        if (self.parents.size() > 2)
            if (auto* p = detail::grad_target(self, 2))
                for (std::size_t o = 0; o < out_dim; ++o) {
                    double acc = 0.0;
                    for (std::size_t r = 0; r < n; ++r)
                        acc += self.grad[r * out_dim + o];
                    p->grad[o] += static_cast<T>(acc);
                }
    });
}

// ---------------------------------------------------------------- convolution

namespace detail {

/// col[(c*9 + ky*3 + kx), y*W + x] = img[c, y+ky-1, x+kx-1] (zero outside).
template <class T>
void im2col_3x3(const T* img, std::size_t C, std::size_t H, std::size_t W, T* col) {
    const std::size_t hw = H * W;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t ky = 0; ky < 3; ++ky)
            for (std::size_t kx = 0; kx < 3; ++kx) {
                T* row = col + ((c * 3 + ky) * 3 + kx) * hw;
                for (std::size_t y = 0; y < H; ++y) {
                    T* dst = row + y * W;
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) {
                        std::fill(dst, dst + W, T(0));
                        continue;
                    }
                    const T* src = img + (c * H + static_cast<std::size_t>(sy)) * W;
                    // x + kx - 1 in [0, W)
                    const std::size_t x0 = kx == 0 ? 1 : 0;
                    const std::size_t x1 = kx == 2 ? W - 1 : W;
                    if (x0 > 0)
                        dst[0] = T(0);
                    if (x1 < W)
                        dst[W - 1] = T(0);
                    for (std::size_t x = x0; x < x1; ++x)
                        dst[x] = src[x + kx - 1];
                }
            }
}

template <class T>
void col2im_3x3(const T* col, std::size_t C, std::size_t H, std::size_t W, T* img) {
    const std::size_t hw = H * W;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t ky = 0; ky < 3; ++ky)
            for (std::size_t kx = 0; kx < 3; ++kx) {
                const T* row = col + ((c * 3 + ky) * 3 + kx) * hw;
                for (std::size_t y = 0; y < H; ++y) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H))
                        continue;
                    T* dst = img + (c * H + static_cast<std::size_t>(sy)) * W;
                    const T* src = row + y * W;
                    const std::size_t x0 = kx == 0 ? 1 : 0;
                    const std::size_t x1 = kx == 2 ? W - 1 : W;
                    for (std::size_t x = x0; x < x1; ++x)
                        dst[x + kx - 1] += src[x];
                }
            }
}

} // namespace detail

/// 3x3 convolution, stride 1, zero padding 1. x [N,C,H,W], w [O,C,3,3], b [O] optional.
template <class T>
basic_tensor<T> conv2d_3x3(const basic_tensor<T>& x, const basic_tensor<T>& w, const basic_tensor<T>& b = {}) {
    detail::require(x.rank() == 4, "conv2d_3x3", "input must be [N,C,H,W], got " + shape_str(x.shape()));
    detail::require(w.rank() == 4 && w.dim(1) == x.dim(1) && w.dim(2) == 3 && w.dim(3) == 3, "conv2d_3x3",
                    "weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = w.dim(0);
    if (b.defined())
        detail::require(b.numel() == O, "conv2d_3x3", "bias " + shape_str(b.shape()) + " for " + std::to_string(O)
                                                          + " output channels");
    const std::size_t hw = H * W, k = C * 9;

    std::vector<T> out(N * O * hw);
    {
        std::vector<T> col(k * hw);
        detail::const_matrix_map<T> Wm(w.data().data(), O, k);
        for (std::size_t n = 0; n < N; ++n) {
            detail::im2col_3x3(x.data().data() + n * C * hw, C, H, W, col.data());
            detail::matrix_map<T> Y(out.data() + n * O * hw, O, hw);
            Y.noalias() = Wm * detail::const_matrix_map<T>(col.data(), k, hw);
            if (b.defined())
                for (std::size_t o = 0; o < O; ++o)
                    Y.row(o).array() += b.data()[o];
        }
    }

    return make_result<T>({N, O, H, W}, std::move(out), {x, w, b}, [N, C, H, W, O, hw, k](node<T>& self) {
        auto* px = detail::grad_target(self, 0);
        auto* pw = detail::grad_target(self, 1);
        auto* pb = self.parents.size() > 2 ? detail::grad_target(self, 2) : nullptr;
        const auto& xin = self.parents[0]->data;
        detail::const_matrix_map<T> Wm(self.parents[1]->data.data(), O, k);
        std::vector<T> col(k * hw), dcol(px ? k * hw : 0);
        detail::row_matrix<T> dW = detail::row_matrix<T>::Zero(O, k);
        for (std::size_t n = 0; n < N; ++n) {
            detail::const_matrix_map<T> G(self.grad.data() + n * O * hw, O, hw);
            if (pw) {
                detail::im2col_3x3(xin.data() + n * C * hw, C, H, W, col.data());
                dW.noalias() += G * detail::const_matrix_map<T>(col.data(), k, hw).transpose();
            }
            if (px) {
                detail::matrix_map<T>(dcol.data(), k, hw).noalias() = Wm.transpose() * G;
                detail::col2im_3x3(dcol.data(), C, H, W, px->grad.data() + n * C * hw);
            }
        }
        if (pw)
            detail::matrix_map<T>(pw->grad.data(), O, k) += dW;
        if (pb)
            for (std::size_t o = 0; o < O; ++o) {
                double acc = 0.0;
                for (std::size_t n = 0; n < N; ++n)
                    acc += detail::sum_d(self.grad.data() + (n * O + o) * hw, hw);
                pb->grad[o] += static_cast<T>(acc);
            }
    });
}

// ---------------------------------------------------------------- batch norm

/// Running statistics of a batch-norm layer (not trained by gradient).
template <class T>
struct bn_buffers {
    std::vector<T> running_mean;
    std::vector<T> running_var;

    explicit bn_buffers(std::size_t channels = 0) : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

inline constexpr double bn_eps = 1e-5;
inline constexpr double bn_momentum = 0.1;

/// Batch norm over [N,C] or [N,C,H,W]. Training mode normalises with batch
/// statistics and updates the running buffers; eval mode uses the buffers.
template <class T>
basic_tensor<T> batch_norm(const basic_tensor<T>& x, const basic_tensor<T>& gamma, const basic_tensor<T>& beta,
                           bn_buffers<T>& buffers, bool training) {
    detail::require(x.rank() == 2 || x.rank() == 4, "batch_norm", "expects [N,C] or [N,C,H,W], got "
                                                                      + shape_str(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), S = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
    detail::require(gamma.numel() == C && beta.numel() == C && buffers.running_mean.size() == C, "batch_norm",
                    "parameters do not match " + std::to_string(C) + " channels of input " + shape_str(x.shape()));
    const std::size_t M = N * S;
    detail::require(!training || M > 1, "batch_norm", "training mode needs more than one value per channel");

    const T* xd = x.data().data();
    std::vector<double> mu(C, 0.0), inv_std(C);
    if (training) {
        std::vector<double> var(C, 0.0);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c) {
                mu[c] += detail::sum_d(xd + (n * C + c) * S, S);
            }
        for (auto& m : mu)
            m /= static_cast<double>(M);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c) {
                var[c] += detail::sq_dev_d(xd + (n * C + c) * S, S, mu[c]);
            }
        for (std::size_t c = 0; c < C; ++c) {
            const double v = var[c] / static_cast<double>(M);
            inv_std[c] = 1.0 / std::sqrt(v + bn_eps);
            if (grad_mode()) {
                buffers.running_mean[c] =
                    static_cast<T>((1 - bn_momentum) * buffers.running_mean[c] + bn_momentum * mu[c]);
                buffers.running_var[c] = static_cast<T>((1 - bn_momentum) * buffers.running_var[c]
                                                        + bn_momentum * v * static_cast<double>(M) / (M - 1));
            }
        }
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            mu[c] = buffers.running_mean[c];
            inv_std[c] = 1.0 / std::sqrt(double(buffers.running_var[c]) + bn_eps);
        }
    }

    const bool keep_xhat = grad_mode() && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
    std::vector<T> xhat(keep_xhat ? x.numel() : 0), out(x.numel());
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t o = (n * C + c) * S;
            const T* __restrict row = xd + o;
            T* __restrict y = out.data() + o;
            const T m = static_cast<T>(mu[c]), is = static_cast<T>(inv_std[c]);
            const T g = gamma.data()[c], b = beta.data()[c];
            if (keep_xhat) {
                T* __restrict xh = xhat.data() + o;
                for (std::size_t i = 0; i < S; ++i) {
                    xh[i] = (row[i] - m) * is;
                    y[i] = g * xh[i] + b;
                }
            } else {
                for (std::size_t i = 0; i < S; ++i)
                    y[i] = g * ((row[i] - m) * is) + b;
            }
        }

    return make_result<T>(x.shape(), std::move(out), {x, gamma, beta},
                          [N, C, S, M, training, inv_std = std::move(inv_std), xhat = std::move(xhat)](node<T>& self) {
                              const T* g = self.grad.data();
                              const auto& gam = self.parents[1]->data;
                              std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
                              for (std::size_t n = 0; n < N; ++n)
                                  for (std::size_t c = 0; c < C; ++c) {
                                      const std::size_t o = (n * C + c) * S;
                                      sum_g[c] += detail::sum_d(g + o, S);
                                      sum_gx[c] += detail::dot_d(g + o, xhat.data() + o, S);
                                  }
                              if (auto* p = detail::grad_target(self, 1))
                                  for (std::size_t c = 0; c < C; ++c)
                                      p->grad[c] += static_cast<T>(sum_gx[c]);
                              if (auto* p = detail::grad_target(self, 2))
                                  for (std::size_t c = 0; c < C; ++c)
                                      p->grad[c] += static_cast<T>(sum_g[c]);
                              auto* p = detail::grad_target(self, 0);
                              if (!p)
                                  return;
                              for (std::size_t n = 0; n < N; ++n)
                                  for (std::size_t c = 0; c < C; ++c) {
                                      const std::size_t o = (n * C + c) * S;
                                      const T k = static_cast<T>(gam[c] * inv_std[c]);
                                      const T* __restrict gi = g + o;
                                      const T* __restrict xh = xhat.data() + o;
                                      T* __restrict dx = p->grad.data() + o;
                                      if (training) {
                                          const T mg = static_cast<T>(sum_g[c] / static_cast<double>(M));
                                          const T mgx = static_cast<T>(sum_gx[c] / static_cast<double>(M));
                                          for (std::size_t i = 0; i < S; ++i)
                                              dx[i] += k * (gi[i] - mg - xh[i] * mgx);
                                      } else {
                                          for (std::size_t i = 0; i < S; ++i)
                                              dx[i] += k * gi[i];
                                      }
                                  }
                          });
}

// ---------------------------------------------------------------- pooling

/// 2x2 max pooling, stride 2; odd trailing rows/columns are dropped.
template <class T>
basic_tensor<T> maxpool_2x2(const basic_tensor<T>& x) {
    detail::require(x.rank() == 4, "maxpool_2x2", "input must be [N,C,H,W], got " + shape_str(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Ho = H / 2, Wo = W / 2;
    detail::require(Ho > 0 && Wo > 0, "maxpool_2x2", "spatial size too small: " + shape_str(x.shape()));
    std::vector<T> out(N * C * Ho * Wo);
    std::vector<std::uint32_t> arg(out.size());
    const T* xd = x.data().data();
    auto* tr = detail::active_trace;
    for (std::size_t p = 0; p < N * C; ++p)
        for (std::size_t y = 0; y < Ho; ++y)
            for (std::size_t xo = 0; xo < Wo; ++xo) {
                const std::size_t base = p * H * W + 2 * y * W + 2 * xo;
                const std::size_t cand[4] = {base, base + 1, base + W, base + W + 1};
                std::size_t best = cand[0];
                for (std::size_t q = 1; q < 4; ++q)
                    if (xd[cand[q]] > xd[best])
                        best = cand[q];
                const std::size_t o = (p * Ho + y) * Wo + xo;
                out[o] = xd[best];
                arg[o] = static_cast<std::uint32_t>(best);
                if (tr)
                    tr->decisions.push_back(static_cast<std::uint32_t>(best - base));
            }
    return make_result<T>({N, C, Ho, Wo}, std::move(out), {x}, [arg = std::move(arg)](node<T>& self) {
        if (auto* p = detail::grad_target(self, 0))
            for (std::size_t o = 0; o < arg.size(); ++o)
                p->grad[arg[o]] += self.grad[o];
    });
}

/// [N,C,H,W] -> [N,C], spatial mean.
template <class T>
basic_tensor<T> global_avg_pool(const basic_tensor<T>& x) {
    detail::require(x.rank() == 4, "global_avg_pool", "input must be [N,C,H,W], got " + shape_str(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
    std::vector<T> out(N * C);
    for (std::size_t p = 0; p < N * C; ++p) {
        out[p] = static_cast<T>(detail::sum_d(x.data().data() + p * S, S) / static_cast<double>(S));
    }
    return make_result<T>({N, C}, std::move(out), {x}, [S](node<T>& self) {
        if (auto* p = detail::grad_target(self, 0)) {
            const T k = T(1) / static_cast<T>(S);
            for (std::size_t q = 0; q < self.grad.size(); ++q)
                for (std::size_t i = 0; i < S; ++i)
                    p->grad[q * S + i] += k * self.grad[q];
        }
    });
}

} // namespace sonact::nn
