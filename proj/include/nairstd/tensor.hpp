#pragma once

// Minimal tape autograd over dense row-major tensors.
//
// Design notes:
//  - Every op allocates a fresh output node; there are no views or aliasing,
//    which keeps backward rules local and trivially correct.
//  - A node participates in the graph iff it is a leaf with requires_grad or
//    it carries a backward fn. Ops on untracked inputs build no tape at all,
//    so frozen parameters cost nothing and cannot receive gradients.
//  - backward() topologically orders the tape, seeds d(root)=1, runs each
//    node's rule (which accumulates += into parent grads), then frees the
//    consumed pieces so peak memory stays near the forward footprint.
//  - Templated on the element type: training runs float, the finite-difference
//    gradient tests instantiate the same code in double.

#include <chrono>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <source_location>
#include <string>
#include <unordered_set>
#include <vector>

#include "nairstd/common.hpp"
#include "nairstd/kernels.hpp"

namespace nairstd {

// Opt-in (NAIRSTD_PROF=1) wall-time accounting of backward rules, keyed by
// the op that attached them. Costs one pointer per node when off.
struct tape_prof {
    inline static bool on = [] { return std::getenv("NAIRSTD_PROF") != nullptr; }();
    inline static std::map<std::string, double>& acc() {
        static std::map<std::string, double> m;
        return m;
    }
    static void dump() {
        for (const auto& [k, v] : acc()) std::fprintf(stderr, "%10.2f ms  %s\n", v, k.c_str());
        acc().clear();
    }
};

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string r = "[";
    for (size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
    return r + "]";
}

struct autograd {
    inline static bool enabled = true;
};

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(autograd::enabled) { autograd::enabled = false; }
    ~NoGradGuard() { autograd::enabled = prev; }
};

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // sized lazily, kept for leaves until zero_grad
    bool requires_grad = false;
    const char* tag = nullptr;  // attaching op, for tape_prof
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;  // reads this->grad, accumulates into parents

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    bool tracked() const { return requires_grad || static_cast<bool>(backward); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

template <typename T>
class Tensor {
    std::shared_ptr<Node<T>> n_;

public:
    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : n_(std::make_shared<Node<T>>()) {
        n_->shape = std::move(shape);
        n_->data.assign(shape_numel(n_->shape), fill);
    }
    static Tensor from_data(Shape shape, std::vector<T> data) {
        Tensor t;
        t.n_ = std::make_shared<Node<T>>();
        NAIRSTD_CHECK(shape_numel(shape) == (int64_t)data.size(),
                      "from_data: %lld values for shape %s", (long long)data.size(),
                      shape_str(shape).c_str());
        t.n_->shape = std::move(shape);
        t.n_->data = std::move(data);
        return t;
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    int ndim() const { return static_cast<int>(n_->shape.size()); }
    int64_t dim(int i) const { return n_->shape[i]; }
    int64_t numel() const { return n_->numel(); }
    T* data() { return n_->data.data(); }
    const T* data() const { return n_->data.data(); }
    std::vector<T>& vec() { return n_->data; }
    const std::vector<T>& vec() const { return n_->data; }
    T item() const {
        NAIRSTD_CHECK(numel() == 1, "item() on tensor of %lld elements", (long long)numel());
        return n_->data[0];
    }

    std::shared_ptr<Node<T>> node() const { return n_; }
    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool v) { n_->requires_grad = v; }
    bool tracked() const { return n_ && n_->tracked(); }

    std::vector<T>& grad() {
        n_->ensure_grad();
        return n_->grad;
    }
    void zero_grad() {
        n_->grad.assign(n_->data.size(), T(0));
    }

    Tensor detach() const {
        Tensor t;
        t.n_ = std::make_shared<Node<T>>();
        t.n_->shape = n_->shape;
        t.n_->data = n_->data;
        return t;
    }

    // Reverse pass from a scalar root. Consumes the tape: intermediate grads
    // and backward closures are released as soon as they have been used.
    void backward() {
        NAIRSTD_CHECK(numel() == 1, "backward() root must be scalar, got %s",
                      shape_str(shape()).c_str());
        std::vector<std::shared_ptr<Node<T>>> order;
        std::unordered_set<Node<T>*> done;
        std::vector<std::pair<std::shared_ptr<Node<T>>, size_t>> stack;
        stack.push_back({n_, 0});
        while (!stack.empty()) {
            auto& [nd, next] = stack.back();
            if (done.count(nd.get())) {
                stack.pop_back();
                continue;
            }
            if (next < nd->parents.size()) {
                auto p = nd->parents[next++];
                if (!done.count(p.get())) stack.push_back({p, 0});
            } else {
                done.insert(nd.get());
                order.push_back(nd);
                stack.pop_back();
            }
        }
        n_->ensure_grad();
        n_->grad[0] = T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node<T>* nd = it->get();
            if (nd->backward && !nd->grad.empty()) {
                if (tape_prof::on) {
                    const auto t0 = std::chrono::steady_clock::now();
                    nd->backward(*nd);
                    tape_prof::acc()[nd->tag ? nd->tag : "?"] +=
                        std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
                } else {
                    nd->backward(*nd);
                }
            }
            if (!nd->requires_grad) {
                nd->grad.clear();
                nd->grad.shrink_to_fit();
            }
            nd->backward = nullptr;
            nd->parents.clear();
        }
    }
};

namespace ops {

template <typename T>
bool track(std::initializer_list<const Tensor<T>*> ins) {
    if (!autograd::enabled) return false;
    for (const auto* t : ins)
        if (t->tracked()) return true;
    return false;
}

template <typename T>
void attach(Tensor<T>& out, std::initializer_list<Tensor<T>> parents,
            std::function<void(Node<T>&)> fn,
            std::source_location loc = std::source_location::current()) {
    out.node()->tag = loc.function_name();
    for (const auto& p : parents) out.node()->parents.push_back(p.node());
    out.node()->backward = std::move(fn);
}

// ---- elementwise ------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    NAIRSTD_CHECK(a.shape() == b.shape(), "add: shape mismatch %s vs %s",
                  shape_str(a.shape()).c_str(), shape_str(b.shape()).c_str());
    Tensor<T> out(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (track<T>({&a, &b})) {
        attach<T>(out, {a, b}, [](Node<T>& self) {
            for (int s = 0; s < 2; ++s) {
                auto& p = *self.parents[s];
                if (!p.tracked()) continue;
                p.ensure_grad();
                kern::vaxpy(p.grad.data(), T(1), self.grad.data(), self.numel());
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    NAIRSTD_CHECK(a.shape() == b.shape(), "mul: shape mismatch");
    Tensor<T> out(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (track<T>({&a, &b})) {
        attach<T>(out, {a, b}, [](Node<T>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            const int64_t n = self.numel();
            if (pa.tracked()) {
                pa.ensure_grad();
                for (int64_t i = 0; i < n; ++i) pa.grad[i] += self.grad[i] * pb.data[i];
            }
            if (pb.tracked()) {
                pb.ensure_grad();
                for (int64_t i = 0; i < n; ++i) pb.grad[i] += self.grad[i] * pa.data[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
    Tensor<T> out(x.shape());
    kern::vscale(out.data(), x.data(), c, x.numel());
    if (track<T>({&x})) {
        attach<T>(out, {x}, [c](Node<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            kern::vaxpy(p.grad.data(), c, self.grad.data(), self.numel());
        });
    }
    return out;
}

// out = x * gain[0]; gain is a learnable one-element tensor.
template <typename T>
Tensor<T> scalar_gain(const Tensor<T>& x, const Tensor<T>& gain) {
    NAIRSTD_CHECK(gain.numel() == 1, "scalar_gain: gain must be scalar");
    Tensor<T> out(x.shape());
    kern::vscale(out.data(), x.data(), gain.data()[0], x.numel());
    if (track<T>({&x, &gain})) {
        attach<T>(out, {x, gain}, [](Node<T>& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            if (px.tracked()) {
                px.ensure_grad();
                kern::vaxpy(px.grad.data(), pg.data[0], self.grad.data(), self.numel());
            }
            if (pg.tracked()) {
                pg.ensure_grad();
                pg.grad[0] += kern::vdot(self.grad.data(), px.data.data(), self.numel());
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = kern::sigmoid_(x.data()[i]);
    if (track<T>({&x})) {
        attach<T>(out, {x}, [](Node<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (int64_t i = 0; i < self.numel(); ++i) {
                const T s = self.data[i];
                p.grad[i] += self.grad[i] * s * (T(1) - s);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = kern::silu_(x.data()[i]);
    if (track<T>({&x})) {
        attach<T>(out, {x}, [](Node<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (int64_t i = 0; i < self.numel(); ++i)
                p.grad[i] += self.grad[i] * kern::silu_grad_(p.data[i]);
        });
    }
    return out;
}

// ---- shape ------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    NAIRSTD_CHECK(shape_numel(shape) == x.numel(), "reshape: %s -> %s changes numel",
                  shape_str(x.shape()).c_str(), shape_str(shape).c_str());
    Tensor<T> out = Tensor<T>::from_data(std::move(shape), x.vec());
    if (track<T>({&x})) {
        attach<T>(out, {x}, [](Node<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            kern::vaxpy(p.grad.data(), T(1), self.grad.data(), self.numel());
        });
    }
    return out;
}

// M x C x H x W  ->  M x (H*W) x C   (token layout for attention)
template <typename T>
Tensor<T> nchw_to_tokens(const Tensor<T>& x) {
    NAIRSTD_CHECK(x.ndim() == 4, "nchw_to_tokens: want 4-d, got %s",
                  shape_str(x.shape()).c_str());
    const int64_t M = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor<T> out(Shape{M, HW, C});
    for (int64_t m = 0; m < M; ++m) {
        const T* xm = x.data() + m * C * HW;
        T* om = out.data() + m * C * HW;
        for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < HW; ++i) om[i * C + c] = xm[c * HW + i];
    }
    if (track<T>({&x})) {
        attach<T>(out, {x}, [M, C, HW](Node<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (int64_t m = 0; m < M; ++m) {
                const T* gm = self.grad.data() + m * C * HW;
                T* pm = p.grad.data() + m * C * HW;
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t i = 0; i < HW; ++i) pm[c * HW + i] += gm[i * C + c];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> tokens_to_nchw(const Tensor<T>& x, int64_t H, int64_t W) {
    NAIRSTD_CHECK(x.ndim() == 3 && x.dim(1) == H * W, "tokens_to_nchw: bad shape %s",
                  shape_str(x.shape()).c_str());
    const int64_t M = x.dim(0), C = x.dim(2), HW = H * W;
    Tensor<T> out(Shape{M, C, H, W});
    for (int64_t m = 0; m < M; ++m) {
        const T* xm = x.data() + m * C * HW;
        T* om = out.data() + m * C * HW;
        for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < HW; ++i) om[c * HW + i] = xm[i * C + c];
    }
    if (track<T>({&x})) {
        attach<T>(out, {x}, [M, C, HW](Node<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (int64_t m = 0; m < M; ++m) {
                const T* gm = self.grad.data() + m * C * HW;
                T* pm = p.grad.data() + m * C * HW;
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t i = 0; i < HW; ++i) pm[i * C + c] += gm[c * HW + i];
            }
        });
    }
    return out;
}

// ---- reductions / losses ----------------------------------------------------

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    Tensor<T> out(Shape{1});
    out.data()[0] = kern::vsum(x.data(), x.numel()) / T(x.numel());
    if (track<T>({&x})) {
        attach<T>(out, {x}, [](Node<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            const T g = self.grad[0] / T(p.numel());
            for (int64_t i = 0; i < p.numel(); ++i) p.grad[i] += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    Tensor<T> out(Shape{1});
    out.data()[0] = kern::vsum(x.data(), x.numel());
    if (track<T>({&x})) {
        attach<T>(out, {x}, [](Node<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            const T g = self.grad[0];
            for (int64_t i = 0; i < p.numel(); ++i) p.grad[i] += g;
        });
    }
    return out;
}

// Mean binary cross-entropy on probabilities, clamped to [eps, 1-eps].
// Gradient is zero where the clamp is active (true clamp semantics).
template <typename T>
Tensor<T> bce_mean(const Tensor<T>& p, const Tensor<T>& y, T eps = T(1e-7)) {
    NAIRSTD_CHECK(p.shape() == y.shape(), "bce_mean: shape mismatch");
    const int64_t n = p.numel();
    Tensor<T> out(Shape{1});
    T acc[kern::kLanes] = {};
    for (int64_t i = 0; i < n; ++i) {
        T pc = std::min(std::max(p.data()[i], eps), T(1) - eps);
        acc[i % kern::kLanes] -=
            y.data()[i] * std::log(pc) + (T(1) - y.data()[i]) * std::log(T(1) - pc);
    }
    T s = 0;
    for (int l = 0; l < kern::kLanes; ++l) s += acc[l];
    out.data()[0] = s / T(n);
    if (track<T>({&p, &y})) {
        attach<T>(out, {p, y}, [eps](Node<T>& self) {
            auto& pp = *self.parents[0];
            auto& py = *self.parents[1];
            NAIRSTD_CHECK(!py.tracked(), "bce_mean: targets must not require grad");
            if (!pp.tracked()) return;
            pp.ensure_grad();
            const int64_t n = pp.numel();
            const T g = self.grad[0] / T(n);
            for (int64_t i = 0; i < n; ++i) {
                const T pv = pp.data[i];
                if (pv <= eps || pv >= T(1) - eps) continue;
                pp.grad[i] += g * (pv - py.data[i]) / (pv * (T(1) - pv));
            }
        });
    }
    return out;
}

// Mean BCE directly on logits (stable form).
template <typename T>
Tensor<T> bce_with_logits_mean(const Tensor<T>& z, const Tensor<T>& y) {
    NAIRSTD_CHECK(z.shape() == y.shape(), "bce_with_logits: shape mismatch");
    const int64_t n = z.numel();
    Tensor<T> out(Shape{1});
    // chunked map into a stack buffer keeps the elementwise loop branch-free
    // (max(z,0) spelled as (z+|z|)/2) so it vectorizes without -ffast-math
    constexpr int64_t kChunk = 2048;
    T buf[kChunk];
    T s = 0;
    for (int64_t base = 0; base < n; base += kChunk) {
        const int64_t c = std::min<int64_t>(kChunk, n - base);
        const T* zp = z.data() + base;
        const T* yp = y.data() + base;
        for (int64_t i = 0; i < c; ++i) {
            const T zi = zp[i], az = std::abs(zi);
            buf[i] = T(0.5) * (zi + az) - zi * yp[i] + kern::log1p_(kern::exp_<T>(-az));
        }
        s += kern::vsum(buf, c);
    }
    out.data()[0] = s / T(n);
    if (track<T>({&z, &y})) {
        attach<T>(out, {z, y}, [](Node<T>& self) {
            auto& pz = *self.parents[0];
            auto& py = *self.parents[1];
            if (!pz.tracked()) return;
            pz.ensure_grad();
            const int64_t n = pz.numel();
            const T g = self.grad[0] / T(n);
            for (int64_t i = 0; i < n; ++i)
                pz.grad[i] += g * (kern::sigmoid_(pz.data[i]) - py.data[i]);
        });
    }
    return out;
}

// Soft Dice loss over the flattened batch: 1 - (2*sum(p*y)+eps)/(sum p + sum y + eps).
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& p, const Tensor<T>& y, T eps = T(1e-6)) {
    NAIRSTD_CHECK(p.shape() == y.shape(), "dice_loss: shape mismatch");
    const int64_t n = p.numel();
    const T inter = kern::vdot(p.data(), y.data(), n);
    const T sp = kern::vsum(p.data(), n);
    const T sy = kern::vsum(y.data(), n);
    Tensor<T> out(Shape{1});
    const T denom = sp + sy + eps;
    out.data()[0] = T(1) - (T(2) * inter + eps) / denom;
    if (track<T>({&p, &y})) {
        attach<T>(out, {p, y}, [inter, denom, eps](Node<T>& self) {
            auto& pp = *self.parents[0];
            auto& py = *self.parents[1];
            if (!pp.tracked()) return;
            pp.ensure_grad();
            const T g = self.grad[0];
            const T num = T(2) * inter + eps;
            const int64_t n = pp.numel();
            // d/dp_i [ -(2*I+e)/D ] = -(2*y_i*D - num)/D^2
            const T invD = T(1) / denom;
            for (int64_t i = 0; i < n; ++i)
                pp.grad[i] += g * (num * invD * invD - T(2) * py.data[i] * invD);
        });
    }
    return out;
}

// ---- linear / conv / norm ---------------------------------------------------

// x: [..., In], w: [Out, In], b: [Out] or undefined -> [..., Out]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    NAIRSTD_CHECK(x.ndim() >= 1 && w.ndim() == 2, "linear: bad ranks");
    const int64_t In = x.dim(x.ndim() - 1);
    const int64_t Out = w.dim(0);
    NAIRSTD_CHECK(w.dim(1) == In, "linear: In mismatch (%lld vs %lld)",
                  (long long)w.dim(1), (long long)In);
    const int64_t M = x.numel() / In;
    Shape oshape = x.shape();
    oshape.back() = Out;
    Tensor<T> out(oshape);
    kern::bmm(x.data(), w.data(), out.data(), 1, M, In, Out, false, true, false);
    if (b.defined()) {
        NAIRSTD_CHECK(b.numel() == Out, "linear: bias size");
        for (int64_t i = 0; i < M; ++i)
            for (int64_t o = 0; o < Out; ++o) out.data()[i * Out + o] += b.data()[o];
    }
    const bool has_b = b.defined();
    if ((has_b && track<T>({&x, &w, &b})) || (!has_b && track<T>({&x, &w}))) {
        auto fn = [M, In, Out, has_b](Node<T>& self) {
            auto& px = *self.parents[0];
            auto& pw = *self.parents[1];
            if (px.tracked()) {
                px.ensure_grad();
                kern::bmm(self.grad.data(), pw.data.data(), px.grad.data(), 1, M, Out,
                          In, false, false, true);
            }
            if (pw.tracked()) {
                pw.ensure_grad();
                kern::bmm(self.grad.data(), px.data.data(), pw.grad.data(), 1, Out, M,
                          In, true, false, true);
            }
            if (has_b) {
                auto& pb = *self.parents[2];
                if (pb.tracked()) {
                    pb.ensure_grad();
                    for (int64_t i = 0; i < M; ++i)
                        kern::vaxpy(pb.grad.data(), T(1), self.grad.data() + i * Out, Out);
                }
            }
        };
        if (has_b) attach<T>(out, {x, w, b}, fn);
        else attach<T>(out, {x, w}, fn);
    }
    return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int64_t stride, int64_t pad) {
    NAIRSTD_CHECK(x.ndim() == 4 && w.ndim() == 4, "conv2d: bad ranks");
    const int64_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    NAIRSTD_CHECK(w.dim(1) == Ci, "conv2d: channel mismatch");
    const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    NAIRSTD_CHECK(Ho > 0 && Wo > 0, "conv2d: empty output");
    Tensor<T> out(Shape{B, Co, Ho, Wo});
    kern::conv2d_fwd(x.data(), w.data(), b.defined() ? b.data() : nullptr, out.data(),
                     B, Ci, H, W, Co, kh, kw, stride, pad);
    const bool has_b = b.defined();
    if ((has_b && track<T>({&x, &w, &b})) || (!has_b && track<T>({&x, &w}))) {
        auto fn = [=](Node<T>& self) {
            auto& px = *self.parents[0];
            auto& pw = *self.parents[1];
            if (px.tracked()) {
                px.ensure_grad();
                kern::conv2d_bwd_input(self.grad.data(), pw.data.data(), px.grad.data(),
                                       B, Ci, H, W, Co, kh, kw, stride, pad);
            }
            if (pw.tracked() || (has_b && self.parents[2]->tracked())) {
                T* dwp = nullptr;
                T* dbp = nullptr;
                std::vector<T> dume;
                if (pw.tracked()) {
                    pw.ensure_grad();
                    dwp = pw.grad.data();
                } else {
                    dume.assign(pw.data.size(), T(0));
                    dwp = dume.data();
                }
                if (has_b && self.parents[2]->tracked()) {
                    self.parents[2]->ensure_grad();
                    dbp = self.parents[2]->grad.data();
                }
                kern::conv2d_bwd_weight(px.data.data(), self.grad.data(), dwp, dbp, B,
                                        Ci, H, W, Co, kh, kw, stride, pad);
            }
        };
        if (has_b) attach<T>(out, {x, w, b}, fn);
        else attach<T>(out, {x, w}, fn);
    }
    return out;
}

// GroupNorm with affine params, optionally fused with SiLU.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     int64_t groups, T eps, bool fuse_silu) {
    NAIRSTD_CHECK(x.ndim() == 4, "group_norm: want 4-d input");
    const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    NAIRSTD_CHECK(C % groups == 0, "group_norm: C=%lld not divisible by %lld groups",
                  (long long)C, (long long)groups);
    NAIRSTD_CHECK(gamma.numel() == C && beta.numel() == C, "group_norm: affine size");
    Tensor<T> out(x.shape());
    std::vector<T> mean(B * groups), rstd(B * groups);
    kern::gn_fwd(x.data(), gamma.data(), beta.data(), out.data(), mean.data(),
                 rstd.data(), B, C, HW, groups, eps, fuse_silu);
    if (track<T>({&x, &gamma, &beta})) {
        attach<T>(out, {x, gamma, beta},
                  [B, C, HW, groups, fuse_silu, mean = std::move(mean),
                   rstd = std::move(rstd)](Node<T>& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            auto& pb = *self.parents[2];
            px.ensure_grad();
            pg.ensure_grad();
            pb.ensure_grad();
            kern::gn_bwd(px.data.data(), pg.data.data(), pb.data.data(), mean.data(),
                         rstd.data(), self.grad.data(), px.grad.data(), pg.grad.data(),
                         pb.grad.data(), B, C, HW, groups, fuse_silu);
        });
    }
    return out;
}

// ---- attention pieces -------------------------------------------------------

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transA, bool transB) {
    NAIRSTD_CHECK(a.ndim() == 3 && b.ndim() == 3 && a.dim(0) == b.dim(0),
                  "bmm: want matching 3-d batches, got %s vs %s",
                  shape_str(a.shape()).c_str(), shape_str(b.shape()).c_str());
    const int64_t Bt = a.dim(0);
    const int64_t M = transA ? a.dim(2) : a.dim(1);
    const int64_t K = transA ? a.dim(1) : a.dim(2);
    const int64_t Kb = transB ? b.dim(2) : b.dim(1);
    const int64_t N = transB ? b.dim(1) : b.dim(2);
    NAIRSTD_CHECK(K == Kb, "bmm: inner dims %lld vs %lld", (long long)K, (long long)Kb);
    Tensor<T> out(Shape{Bt, M, N});
    kern::bmm(a.data(), b.data(), out.data(), Bt, M, K, N, transA, transB, false);
    if (track<T>({&a, &b})) {
        attach<T>(out, {a, b}, [Bt, M, K, N, transA, transB](Node<T>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (pa.tracked()) {
                pa.ensure_grad();
                if (!transA)
                    kern::bmm(self.grad.data(), pb.data.data(), pa.grad.data(), Bt, M, N,
                              K, false, !transB, true);
                else
                    kern::bmm(pb.data.data(), self.grad.data(), pa.grad.data(), Bt, K, N,
                              M, transB, true, true);
            }
            if (pb.tracked()) {
                pb.ensure_grad();
                if (!transB)
                    kern::bmm(pa.data.data(), self.grad.data(), pb.grad.data(), Bt, K, M,
                              N, !transA, false, true);
                else
                    kern::bmm(self.grad.data(), pa.data.data(), pb.grad.data(), Bt, N, M,
                              K, true, transA, true);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
    NAIRSTD_CHECK(x.ndim() >= 1, "softmax: scalar input");
    const int64_t n = x.dim(x.ndim() - 1);
    const int64_t rows = x.numel() / n;
    Tensor<T> out(x.shape());
    kern::softmax_rows_fwd(x.data(), out.data(), rows, n);
    if (track<T>({&x})) {
        attach<T>(out, {x}, [rows, n](Node<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            kern::softmax_rows_bwd(self.data.data(), self.grad.data(), p.grad.data(),
                                   rows, n);
        });
    }
    return out;
}

// softmax(q k^T) v as one op. The M x N attention matrix lives in a scratch
// buffer instead of two graph nodes, so neither it nor the logits ever get a
// grad buffer; backward runs the same kernel sequence as the composed ops.
// q comes in pre-scaled by 1/sqrt(d).
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
    NAIRSTD_CHECK(q.ndim() == 3 && k.ndim() == 3 && v.ndim() == 3,
                  "attention: want 3-d q/k/v");
    const int64_t Bt = q.dim(0), M = q.dim(1), C = q.dim(2), N = k.dim(1);
    NAIRSTD_CHECK(k.dim(0) == Bt && v.dim(0) == Bt && k.dim(2) == C &&
                      v.dim(1) == N && v.dim(2) == C,
                  "attention: shapes q=%s k=%s v=%s", shape_str(q.shape()).c_str(),
                  shape_str(k.shape()).c_str(), shape_str(v.shape()).c_str());
    std::shared_ptr<T[]> att(new T[size_t(Bt * M * N)]);
    kern::bmm(q.data(), k.data(), att.get(), Bt, M, C, N, false, true, false);
    kern::softmax_rows_fwd(att.get(), att.get(), Bt * M, N);
    Tensor<T> out(Shape{Bt, M, C});
    kern::bmm(att.get(), v.data(), out.data(), Bt, M, N, C, false, false, false);
    if (track<T>({&q, &k, &v})) {
        attach<T>(out, {q, k, v}, [Bt, M, C, N, att](Node<T>& self) {
            auto& pq = *self.parents[0];
            auto& pk = *self.parents[1];
            auto& pv = *self.parents[2];
            if (pv.tracked()) {
                pv.ensure_grad();
                kern::bmm(att.get(), self.grad.data(), pv.grad.data(), Bt, N, M, C,
                          true, false, true);
            }
            if (pq.tracked() || pk.tracked()) {
                std::unique_ptr<T[]> datt(new T[size_t(Bt * M * N)]);
                kern::bmm(self.grad.data(), pv.data.data(), datt.get(), Bt, M, C, N,
                          false, true, false);
                kern::softmax_rows_bwd_inplace(att.get(), datt.get(), Bt * M, N);
                if (pq.tracked()) {
                    pq.ensure_grad();
                    kern::bmm(datt.get(), pk.data.data(), pq.grad.data(), Bt, M, N, C,
                              false, false, true);
                }
                if (pk.tracked()) {
                    pk.ensure_grad();
                    kern::bmm(datt.get(), pq.data.data(), pk.grad.data(), Bt, N, M, C,
                              true, false, true);
                }
            }
        });
    }
    return out;
}

// ---- spatial ----------------------------------------------------------------

// M x C x H x W -> M x C (mean over H*W)
template <typename T>
Tensor<T> mean_spatial(const Tensor<T>& x) {
    NAIRSTD_CHECK(x.ndim() == 4, "mean_spatial: want 4-d");
    const int64_t M = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor<T> out(Shape{M, C});
    for (int64_t i = 0; i < M * C; ++i)
        out.data()[i] = kern::vsum(x.data() + i * HW, HW) / T(HW);
    if (track<T>({&x})) {
        attach<T>(out, {x}, [M, C, HW](Node<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (int64_t i = 0; i < M * C; ++i) {
                const T g = self.grad[i] / T(HW);
                T* dst = p.grad.data() + i * HW;
                for (int64_t k = 0; k < HW; ++k) dst[k] += g;
            }
        });
    }
    return out;
}

// out[m,c,:,:] = x[m,c,:,:] + z[m,c]
template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& z) {
    NAIRSTD_CHECK(x.ndim() == 4 && z.ndim() == 2 && x.dim(0) == z.dim(0) &&
                      x.dim(1) == z.dim(1),
                  "add_channel_bias: %s vs %s", shape_str(x.shape()).c_str(),
                  shape_str(z.shape()).c_str());
    const int64_t MC = x.dim(0) * x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor<T> out(x.shape());
    for (int64_t i = 0; i < MC; ++i) {
        const T zv = z.data()[i];
        const T* src = x.data() + i * HW;
        T* dst = out.data() + i * HW;
        for (int64_t k = 0; k < HW; ++k) dst[k] = src[k] + zv;
    }
    if (track<T>({&x, &z})) {
        attach<T>(out, {x, z}, [MC, HW](Node<T>& self) {
            auto& px = *self.parents[0];
            auto& pz = *self.parents[1];
            if (px.tracked()) {
                px.ensure_grad();
                kern::vaxpy(px.grad.data(), T(1), self.grad.data(), MC * HW);
            }
            if (pz.tracked()) {
                pz.ensure_grad();
                for (int64_t i = 0; i < MC; ++i)
                    pz.grad[i] += kern::vsum(self.grad.data() + i * HW, HW);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> upsample2x_nearest(const Tensor<T>& x) {
    NAIRSTD_CHECK(x.ndim() == 4, "upsample2x: want 4-d");
    const int64_t planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> out(Shape{x.dim(0), x.dim(1), 2 * H, 2 * W});
    kern::upsample2x_nearest_fwd(x.data(), out.data(), planes, H, W);
    if (track<T>({&x})) {
        attach<T>(out, {x}, [planes, H, W](Node<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            kern::upsample2x_nearest_bwd(self.grad.data(), p.grad.data(), planes, H, W);
        });
    }
    return out;
}

// B x C x H x W -> B x 4C x H/2 x W/2; output channel c*4 + (2*py + px) holds
// input channel c at pixel phase (py, px). A 1x1 conv over the result is
// exactly a learned 2x2 stride-2 convolution, but runs on contiguous rows.
template <typename T>
Tensor<T> space_to_depth2(const Tensor<T>& x) {
    NAIRSTD_CHECK(x.ndim() == 4, "space_to_depth2: want 4-d");
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    NAIRSTD_CHECK(H % 2 == 0 && W % 2 == 0, "space_to_depth2: odd spatial dims");
    const int64_t Ho = H / 2, Wo = W / 2;
    Tensor<T> out(Shape{B, 4 * C, Ho, Wo});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t ph = 0; ph < 4; ++ph) {
                const int64_t py = ph / 2, px = ph % 2;
                const T* src = x.data() + (b * C + c) * H * W;
                T* dst = out.data() + (b * 4 * C + c * 4 + ph) * Ho * Wo;
                for (int64_t i = 0; i < Ho; ++i) {
                    const T* sr = src + (2 * i + py) * W + px;
                    T* dr = dst + i * Wo;
                    for (int64_t j = 0; j < Wo; ++j) dr[j] = sr[2 * j];
                }
            }
    if (track<T>({&x})) {
        attach<T>(out, {x}, [B, C, H, W, Ho, Wo](Node<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t ph = 0; ph < 4; ++ph) {
                        const int64_t py = ph / 2, px = ph % 2;
                        T* dst = p.grad.data() + (b * C + c) * H * W;
                        const T* g = self.grad.data() + (b * 4 * C + c * 4 + ph) * Ho * Wo;
                        for (int64_t i = 0; i < Ho; ++i) {
                            T* dr = dst + (2 * i + py) * W + px;
                            const T* gr = g + i * Wo;
                            for (int64_t j = 0; j < Wo; ++j) dr[2 * j] += gr[j];
                        }
                    }
        });
    }
    return out;
}

template <typename T>
Tensor<T> avgpool2x2(const Tensor<T>& x) {
    NAIRSTD_CHECK(x.ndim() == 4, "avgpool2x2: want 4-d");
    const int64_t planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
    NAIRSTD_CHECK(H % 2 == 0 && W % 2 == 0, "avgpool2x2: odd spatial dims");
    Tensor<T> out(Shape{x.dim(0), x.dim(1), H / 2, W / 2});
    kern::avgpool2x2_fwd(x.data(), out.data(), planes, H, W);
    if (track<T>({&x})) {
        attach<T>(out, {x}, [planes, H, W](Node<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            kern::avgpool2x2_bwd(self.grad.data(), p.grad.data(), planes, H, W);
        });
    }
    return out;
}

// B x 1 x H x W -> B x C x H x W by channel replication
template <typename T>
Tensor<T> repeat_channels(const Tensor<T>& x, int64_t c) {
    NAIRSTD_CHECK(x.ndim() == 4 && x.dim(1) == 1, "repeat_channels: want B x 1 x H x W");
    const int64_t B = x.dim(0), HW = x.dim(2) * x.dim(3);
    Tensor<T> out(Shape{B, c, x.dim(2), x.dim(3)});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t ch = 0; ch < c; ++ch)
            std::memcpy(out.data() + (b * c + ch) * HW, x.data() + b * HW, sizeof(T) * HW);
    if (track<T>({&x})) {
        attach<T>(out, {x}, [B, c, HW](Node<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t ch = 0; ch < c; ++ch) {
                    const T* g = self.grad.data() + (b * c + ch) * HW;
                    T* d = p.grad.data() + b * HW;
                    for (int64_t i = 0; i < HW; ++i) d[i] += g[i];
                }
        });
    }
    return out;
}

// Combined segmentation loss: BCE + Dice. Probability form matches the
// definition; the logits form is the numerically stable one training uses.
template <typename T>
Tensor<T> seg_loss(const Tensor<T>& p, const Tensor<T>& y) {
    return add(bce_mean(p, y), dice_loss(p, y));
}

template <typename T>
Tensor<T> seg_loss_logits(const Tensor<T>& z, const Tensor<T>& y) {
    return add(bce_with_logits_mean(z, y), dice_loss(sigmoid(z), y));
}

// ---- gather / scatter -------------------------------------------------------

// x: B x N x R (any trailing shape flattened to R), idx: B x K rows -> B x K x R
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::vector<int64_t>>& idx) {
    NAIRSTD_CHECK(x.ndim() >= 2, "gather_rows: want >=2-d");
    const int64_t B = x.dim(0), N = x.dim(1), R = x.numel() / (B * N);
    NAIRSTD_CHECK((int64_t)idx.size() == B, "gather_rows: idx batch mismatch");
    const int64_t K = (int64_t)idx[0].size();
    Shape oshape = x.shape();
    oshape[1] = K;
    Tensor<T> out(oshape);
    for (int64_t b = 0; b < B; ++b) {
        NAIRSTD_CHECK((int64_t)idx[b].size() == K, "gather_rows: ragged idx");
        for (int64_t k = 0; k < K; ++k) {
            const int64_t j = idx[b][k];
            NAIRSTD_CHECK(j >= 0 && j < N, "gather_rows: index %lld out of [0,%lld)",
                          (long long)j, (long long)N);
            std::memcpy(out.data() + (b * K + k) * R, x.data() + (b * N + j) * R,
                        sizeof(T) * R);
        }
    }
    if (track<T>({&x})) {
        attach<T>(out, {x}, [B, N, K, R, idx](Node<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t k = 0; k < K; ++k)
                    kern::vaxpy(p.grad.data() + (b * N + idx[b][k]) * R, T(1),
                                self.grad.data() + (b * K + k) * R, R);
        });
    }
    return out;
}

// Extract KxCxPsxPs windows from B x C x H x W at per-image patch indices.
// Window j covers rows [u*Ps, (u+1)*Ps) x cols [v*Ps, (v+1)*Ps) with
// u = j / (W/Ps), v = j % (W/Ps): the row-major patch lattice at this scale.
template <typename T>
Tensor<T> gather_windows(const Tensor<T>& x, const std::vector<std::vector<int64_t>>& idx,
                         int64_t Ps) {
    NAIRSTD_CHECK(x.ndim() == 4, "gather_windows: want 4-d");
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    NAIRSTD_CHECK(H % Ps == 0 && W % Ps == 0, "gather_windows: %lldx%lld not tiled by %lld",
                  (long long)H, (long long)W, (long long)Ps);
    const int64_t gw = W / Ps, N = (H / Ps) * gw;
    const int64_t K = (int64_t)idx[0].size();
    Tensor<T> out(Shape{B, K, C, Ps, Ps});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t k = 0; k < K; ++k) {
            const int64_t j = idx[b][k];
            NAIRSTD_CHECK(j >= 0 && j < N, "gather_windows: index out of range");
            const int64_t r0 = (j / gw) * Ps, c0 = (j % gw) * Ps;
            for (int64_t c = 0; c < C; ++c)
                for (int64_t r = 0; r < Ps; ++r)
                    std::memcpy(out.data() + (((b * K + k) * C + c) * Ps + r) * Ps,
                                x.data() + ((b * C + c) * H + r0 + r) * W + c0,
                                sizeof(T) * Ps);
        }
    if (track<T>({&x})) {
        attach<T>(out, {x}, [B, C, H, W, Ps, gw, K, idx](Node<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t k = 0; k < K; ++k) {
                    const int64_t j = idx[b][k];
                    const int64_t r0 = (j / gw) * Ps, c0 = (j % gw) * Ps;
                    for (int64_t c = 0; c < C; ++c)
                        for (int64_t r = 0; r < Ps; ++r)
                            kern::vaxpy(p.grad.data() + ((b * C + c) * H + r0 + r) * W + c0,
                                        T(1),
                                        self.grad.data() +
                                            (((b * K + k) * C + c) * Ps + r) * Ps,
                                        Ps);
                }
        });
    }
    return out;
}

// Copy of x with the K windows replaced by `patches` (B x K x C x Ps x Ps).
// Untouched regions are bitwise-identical to x.
template <typename T>
Tensor<T> scatter_windows(const Tensor<T>& x, const Tensor<T>& patches,
                          const std::vector<std::vector<int64_t>>& idx) {
    NAIRSTD_CHECK(x.ndim() == 4 && patches.ndim() == 5, "scatter_windows: bad ranks");
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t K = patches.dim(1), Ps = patches.dim(3);
    NAIRSTD_CHECK(patches.dim(0) == B && patches.dim(2) == C && patches.dim(4) == Ps,
                  "scatter_windows: patch shape %s vs base %s",
                  shape_str(patches.shape()).c_str(), shape_str(x.shape()).c_str());
    const int64_t gw = W / Ps;
    Tensor<T> out = Tensor<T>::from_data(x.shape(), x.vec());
    for (int64_t b = 0; b < B; ++b)
        for (int64_t k = 0; k < K; ++k) {
            const int64_t j = idx[b][k];
            const int64_t r0 = (j / gw) * Ps, c0 = (j % gw) * Ps;
            for (int64_t c = 0; c < C; ++c)
                for (int64_t r = 0; r < Ps; ++r)
                    std::memcpy(out.data() + ((b * C + c) * H + r0 + r) * W + c0,
                                patches.data() + (((b * K + k) * C + c) * Ps + r) * Ps,
                                sizeof(T) * Ps);
        }
    if (track<T>({&x, &patches})) {
        attach<T>(out, {x, patches}, [B, C, H, W, K, Ps, gw, idx](Node<T>& self) {
            auto& px = *self.parents[0];
            auto& pp = *self.parents[1];
            if (px.tracked()) {
                px.ensure_grad();
                // gradient flows to x everywhere except the overwritten windows
                std::vector<T> masked = self.grad;
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t k = 0; k < K; ++k) {
                        const int64_t j = idx[b][k];
                        const int64_t r0 = (j / gw) * Ps, c0 = (j % gw) * Ps;
                        for (int64_t c = 0; c < C; ++c)
                            for (int64_t r = 0; r < Ps; ++r)
                                std::memset(masked.data() + ((b * C + c) * H + r0 + r) * W + c0,
                                            0, sizeof(T) * Ps);
                    }
                kern::vaxpy(px.grad.data(), T(1), masked.data(), px.numel());
            }
            if (pp.tracked()) {
                pp.ensure_grad();
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t k = 0; k < K; ++k) {
                        const int64_t j = idx[b][k];
                        const int64_t r0 = (j / gw) * Ps, c0 = (j % gw) * Ps;
                        for (int64_t c = 0; c < C; ++c)
                            for (int64_t r = 0; r < Ps; ++r)
                                kern::vaxpy(pp.grad.data() +
                                                (((b * K + k) * C + c) * Ps + r) * Ps,
                                            T(1),
                                            self.grad.data() +
                                                ((b * C + c) * H + r0 + r) * W + c0,
                                            Ps);
                    }
            }
        });
    }
    return out;
}

}  // namespace ops
}  // namespace nairstd
