#pragma once

// Dense tensors with a recorded graph for reverse-mode differentiation.
//
// A basic_tensor is a shared handle to a node. Ops build new nodes whose
// `backward` closure reads the node's gradient and accumulates into the
// gradients of its parents. Nodes only reference their parents, so a graph
// is released as soon as the last handle to its output goes away.

#include <sonact/error.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace sonact::nn {

using shape_t = std::vector<std::size_t>;

inline std::size_t numel_of(const shape_t& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const shape_t& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i)
        os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

template <class T>
struct node {
    shape_t shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<node>> parents;
    std::function<void(node&)> backward;

    void ensure_grad() {
        if (grad.empty())
            grad.assign(data.size(), T(0));
    }
};

namespace detail {
inline thread_local bool grad_enabled = true;
} // namespace detail

/// Disables graph recording for its lifetime (target network, inference, EMA).
class no_grad_guard {
public:
    no_grad_guard() : saved_(detail::grad_enabled) { detail::grad_enabled = false; }
    ~no_grad_guard() { detail::grad_enabled = saved_; }
    no_grad_guard(const no_grad_guard&) = delete;
    no_grad_guard& operator=(const no_grad_guard&) = delete;

private:
    bool saved_;
};

inline bool grad_mode() noexcept { return detail::grad_enabled; }

template <class T>
class basic_tensor {
public:
    using value_type = T;
    using node_type = node<T>;

    basic_tensor() = default;
    explicit basic_tensor(std::shared_ptr<node_type> n) : n_(std::move(n)) {}

    static basic_tensor zeros(shape_t shape) { return from(shape, std::vector<T>(numel_of(shape), T(0))); }

    static basic_tensor from(shape_t shape, std::vector<T> data) {
        if (data.size() != numel_of(shape))
            throw std::invalid_argument("tensor: " + std::to_string(data.size()) + " values for shape "
                                        + shape_str(shape));
        auto n = std::make_shared<node_type>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        return basic_tensor(std::move(n));
    }

    static basic_tensor scalar(T v) { return from({1}, {v}); }

    /// Leaf that accumulates gradients.
    static basic_tensor parameter(shape_t shape, std::vector<T> data) {
        auto t = from(std::move(shape), std::move(data));
        t.n_->requires_grad = true;
        return t;
    }

    bool defined() const noexcept { return static_cast<bool>(n_); }
    const shape_t& shape() const { return n_->shape; }
    std::size_t dim(std::size_t i) const { return n_->shape.at(i); }
    std::size_t rank() const { return n_->shape.size(); }
    std::size_t numel() const { return n_->data.size(); }

    std::span<T> data() { return n_->data; }
    std::span<const T> data() const { return n_->data; }
    std::vector<T>& values() { return n_->data; }
    const std::vector<T>& values() const { return n_->data; }

    bool has_grad() const { return !n_->grad.empty(); }
    std::span<const T> grad() const { return n_->grad; }
    std::span<T> grad() { return n_->grad; }
    /// Gradient, or zeros when backward never reached this tensor.
    std::vector<T> grad_or_zero() const { return has_grad() ? n_->grad : std::vector<T>(numel(), T(0)); }
    void zero_grad() { n_->grad.clear(); }

    bool requires_grad() const { return n_->requires_grad; }

    T item() const {
        if (numel() != 1)
            throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
        return n_->data[0];
    }

    /// Independent leaf holding a copy of the values.
    basic_tensor detach() const { return from(shape(), n_->data); }

    /// Same storage viewed with a new shape of equal size.
    basic_tensor reshape(shape_t new_shape) const;

    node_type* get() const noexcept { return n_.get(); }
    const std::shared_ptr<node_type>& ptr() const noexcept { return n_; }

private:
    std::shared_ptr<node_type> n_;
};

using tensor = basic_tensor<float>;
using tensor64 = basic_tensor<double>;

/// Builds an op result. The graph edge is recorded only when grad mode is on
/// and at least one input requires a gradient.
template <class T>
basic_tensor<T> make_result(shape_t shape, std::vector<T> data, std::initializer_list<basic_tensor<T>> inputs,
                            std::function<void(node<T>&)> backward) {
    auto out = basic_tensor<T>::from(std::move(shape), std::move(data));
    if (!grad_mode())
        return out;
    bool any = false;
    for (const auto& in : inputs)
        any = any || (in.defined() && in.requires_grad());
    if (!any)
        return out;
    auto* n = out.get();
    n->requires_grad = true;
    for (const auto& in : inputs)
        n->parents.push_back(in.ptr());
    n->backward = std::move(backward);
    return out;
}

template <class T>
basic_tensor<T> basic_tensor<T>::reshape(shape_t new_shape) const {
    if (numel_of(new_shape) != numel())
        throw std::invalid_argument("reshape: " + shape_str(shape()) + " -> " + shape_str(new_shape));
    return make_result<T>(std::move(new_shape), n_->data, {*this}, [](node<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad)
            return;
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            p.grad[i] += self.grad[i];
    });
}

/// Reverse-mode accumulation from a scalar loss into every reachable tensor
/// that requires a gradient. Visits nodes in reverse topological order.
template <class T>
void backward(const basic_tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be a scalar, got shape "
                                    + (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    if (!loss.requires_grad())
        return;

    std::vector<node<T>*> order;
    std::unordered_set<node<T>*> seen;
    std::vector<std::pair<node<T>*, std::size_t>> stack{{loss.get(), 0}};
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            node<T>* p = n->parents[next++].get();
            if (p && p->requires_grad && seen.insert(p).second)
                stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    loss.get()->ensure_grad();
    loss.get()->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        node<T>* n = *it;
        if (n->backward && !n->grad.empty())
            n->backward(*n);
    }
}

/// Records branch decisions (ReLU signs, max-pool winners) of a forward pass so
/// a finite-difference check can tell when a perturbation crossed a kink.
struct branch_trace {
    std::vector<std::uint32_t> decisions;
};

namespace detail {
inline thread_local branch_trace* active_trace = nullptr;
} // namespace detail

class trace_scope {
public:
    explicit trace_scope(branch_trace& t) : saved_(detail::active_trace) { detail::active_trace = &t; }
    ~trace_scope() { detail::active_trace = saved_; }
    trace_scope(const trace_scope&) = delete;
    trace_scope& operator=(const trace_scope&) = delete;

private:
    branch_trace* saved_;
};

} // namespace sonact::nn
