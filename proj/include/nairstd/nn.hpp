#pragma once

// Parameter plumbing and the small layer modules everything is built from.
// Every parameter gets a stable hierarchical name ("native.s0.conv1.w") and is
// initialized from its own rng stream keyed by that name, so values never
// depend on construction order and stage-1 / stage-2 models agree on shared
// parameters by construction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "nairstd/common.hpp"
#include "nairstd/tensor.hpp"

namespace nairstd::nn {

using nairstd::Shape;
using nairstd::Tensor;

template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<ParamRef<T>>;

struct InitCtx {
    uint64_t seed = 0;
    std::string prefix;

    InitCtx child(const std::string& local) const {
        return {seed, prefix.empty() ? local : prefix + "." + local};
    }
    std::string qualify(const std::string& local) const {
        return prefix.empty() ? local : prefix + "." + local;
    }
};

enum class Init { KaimingConv, LinearDefault, SmallNormal, Zeros, Ones };

template <typename T>
Tensor<T> make_param(const InitCtx& ctx, const std::string& local, Shape shape, Init kind,
                     int64_t fan_in = 0) {
    const std::string name = ctx.qualify(local);
    const int64_t n = shape_numel(shape);
    std::vector<T> v(n);
    switch (kind) {
        case Init::Zeros: break;
        case Init::Ones: std::fill(v.begin(), v.end(), T(1)); break;
        default: {
            double std_dev;
            if (kind == Init::KaimingConv) std_dev = std::sqrt(2.0 / double(fan_in));
            else if (kind == Init::LinearDefault) std_dev = std::sqrt(1.0 / double(fan_in));
            else std_dev = 0.01;
            auto rng = rng_stream(ctx.seed, name);
            std::normal_distribution<double> dist(0.0, std_dev);
            for (auto& x : v) x = T(dist(rng));
        }
    }
    Tensor<T> t = Tensor<T>::from_data(std::move(shape), std::move(v));
    t.set_requires_grad(true);
    return t;
}

template <typename T>
struct Conv2d {
    Tensor<T> w, b;
    int64_t stride = 1, pad = 0;
    std::string name;

    Conv2d() = default;
    Conv2d(const InitCtx& ctx, const std::string& local, int64_t ci, int64_t co, int64_t k,
           int64_t stride_, int64_t pad_)
        : stride(stride_), pad(pad_), name(ctx.qualify(local)) {
        InitCtx c = ctx.child(local);
        w = make_param<T>(c, "w", Shape{co, ci, k, k}, Init::KaimingConv, ci * k * k);
        b = make_param<T>(c, "b", Shape{co}, Init::Zeros);
    }
    Tensor<T> operator()(const Tensor<T>& x) const { return ops::conv2d(x, w, b, stride, pad); }
    void collect(ParamList<T>& out) {
        out.push_back({name + ".w", w});
        out.push_back({name + ".b", b});
    }
};

template <typename T>
struct Linear {
    Tensor<T> w, b;
    std::string name;

    Linear() = default;
    Linear(const InitCtx& ctx, const std::string& local, int64_t in, int64_t out_dim,
           Init kind = Init::LinearDefault)
        : name(ctx.qualify(local)) {
        InitCtx c = ctx.child(local);
        w = make_param<T>(c, "w", Shape{out_dim, in}, kind, in);
        b = make_param<T>(c, "b", Shape{out_dim}, Init::Zeros);
    }
    Tensor<T> operator()(const Tensor<T>& x) const { return ops::linear(x, w, b); }
    void collect(ParamList<T>& out) {
        out.push_back({name + ".w", w});
        out.push_back({name + ".b", b});
    }
};

template <typename T>
struct GroupNorm {
    Tensor<T> gamma, beta;
    int64_t groups = 1;
    T eps = T(1e-5);
    std::string name;

    GroupNorm() = default;
    GroupNorm(const InitCtx& ctx, const std::string& local, int64_t channels, int64_t groups_)
        : groups(groups_), name(ctx.qualify(local)) {
        InitCtx c = ctx.child(local);
        gamma = make_param<T>(c, "gamma", Shape{channels}, Init::Ones);
        beta = make_param<T>(c, "beta", Shape{channels}, Init::Zeros);
    }
    Tensor<T> operator()(const Tensor<T>& x, bool fuse_silu = false) const {
        return ops::group_norm(x, gamma, beta, groups, eps, fuse_silu);
    }
    void collect(ParamList<T>& out) {
        out.push_back({name + ".gamma", gamma});
        out.push_back({name + ".beta", beta});
    }
};

template <typename T>
void set_frozen(ParamList<T>& params, bool frozen) {
    for (auto& p : params) p.tensor.set_requires_grad(!frozen);
}

template <typename T>
uint64_t hash_params(const ParamList<T>& params) {
    uint64_t h = 1469598103934665603ull;
    for (const auto& p : params) {
        h = fnv1a(p.name.data(), p.name.size(), h);
        h = fnv1a(reinterpret_cast<const char*>(p.tensor.data()),
                  p.tensor.numel() * sizeof(T), h);
    }
    return h;
}

}  // namespace nairstd::nn
