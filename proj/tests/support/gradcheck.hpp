#pragma once

// Central finite-difference oracle for reverse-mode gradients (double precision).

#include <sonact/nn/ops.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace sonact::testing {

struct gradcheck_result {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped_kinks = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Compares backward() against (f(x+h) - f(x-h)) / 2h for every coordinate of
/// every leaf. Coordinates whose perturbation flips a ReLU sign or a max-pool
/// winner are skipped, since the function is not differentiable across them.
/// The relative error of one coordinate is |a - n| / max(|a|, |n|, floor).
inline gradcheck_result gradcheck(const std::function<nn::tensor64()>& loss_fn, std::vector<nn::tensor64> leaves,
                                  double h = 1e-3, double floor = 1e-8) {
    for (auto& l : leaves)
        l.zero_grad();
    nn::branch_trace base;
    {
        nn::trace_scope scope(base);
        nn::backward(loss_fn());
    }
    std::vector<std::vector<double>> analytic;
    for (const auto& l : leaves)
        analytic.push_back(l.grad_or_zero());

    gradcheck_result r;
    nn::no_grad_guard ng;
    auto eval = [&](nn::branch_trace& tr) {
        nn::trace_scope scope(tr);
        return loss_fn().item();
    };
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto x = leaves[li].data();
        for (std::size_t k = 0; k < x.size(); ++k) {
            const double saved = x[k];
            nn::branch_trace tp, tm;
            x[k] = saved + h;
            const double fp = eval(tp);
            x[k] = saved - h;
            const double fm = eval(tm);
            x[k] = saved;
            if (tp.decisions != base.decisions || tm.decisions != base.decisions) {
                ++r.skipped_kinks;
                continue;
            }
            const double num = (fp - fm) / (2 * h);
            const double a = analytic[li][k];
            const double err = std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor});
            if (err > r.max_rel_error) {
                r.max_rel_error = err;
                r.worst_analytic = a;
                r.worst_numeric = num;
            }
            ++r.checked;
        }
    }
    return r;
}

} // namespace sonact::testing
