#pragma once

// Central-difference gradient checker. Re-runs the graph builder around
// perturbed inputs and compares against the analytic backward pass, in double.

#include <cmath>
#include <functional>
#include <vector>

#include "nairstd/tensor.hpp"

namespace nairstd::testing {

struct GradcheckResult {
    double max_rel_err = 0.0;
    std::string where;
    bool ok(double tol) const { return max_rel_err < tol; }
};

// build() must construct a fresh graph from the current contents of `inputs`
// and return a scalar. Inputs must have requires_grad set by the caller.
inline GradcheckResult gradcheck(const std::function<Tensor<double>()>& build,
                                 std::vector<Tensor<double>*> inputs,
                                 double h = 1e-5) {
    GradcheckResult res;
    for (auto* t : inputs) t->zero_grad();
    Tensor<double> loss = build();
    loss.backward();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (auto* t : inputs) analytic.push_back(t->grad());

    NoGradGuard ng;
    for (size_t ti = 0; ti < inputs.size(); ++ti) {
        Tensor<double>& t = *inputs[ti];
        for (int64_t i = 0; i < t.numel(); ++i) {
            const double orig = t.data()[i];
            t.data()[i] = orig + h;
            const double f1 = build().item();
            t.data()[i] = orig - h;
            const double f2 = build().item();
            t.data()[i] = orig;
            const double num = (f1 - f2) / (2 * h);
            const double ana = analytic[ti][i];
            const double rel =
                std::abs(num - ana) / std::max({1.0, std::abs(num), std::abs(ana)});
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.where = "input " + std::to_string(ti) + " elem " + std::to_string(i) +
                            " analytic=" + std::to_string(ana) +
                            " numeric=" + std::to_string(num);
            }
        }
    }
    return res;
}

inline std::vector<double> randn_vec(int64_t n, uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, scale);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

inline std::vector<float> randn_vecf(int64_t n, uint64_t seed, float scale = 1.0f) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> d(0.0f, scale);
    std::vector<float> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

}  // namespace nairstd::testing
