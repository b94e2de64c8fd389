#pragma once

// Serial CPU kernels. Everything here is written so that gcc/clang at -O3 can
// auto-vectorize without -ffast-math: reductions use fixed 16-lane accumulator
// arrays (deterministic summation order, independent of ISA width), and
// transcendental maps go through branch-free polynomial approximations for the
// float path. No BLAS, no threads: results are bit-reproducible run to run.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <type_traits>

#include "nairstd/common.hpp"

namespace nairstd::kern {

inline constexpr int kLanes = 16;

// the scalar math helpers must stay inlinable even inside large instantiations
// (a residual call in a loop body defeats auto-vectorization), so they bypass
// gcc's inline budget
#define NAIRSTD_MATH_INLINE inline __attribute__((always_inline))

// ---- scalar math ------------------------------------------------------------

// exp for float, accurate to ~2 ulp, saturating (0 / ~1.7e38) outside
// [-88, 88]. Every step is branch-free arithmetic: gcc's if-conversion gives
// up on float min/max feeding the bit-cast exponent chain, so the input is
// bounded via an integer min on |x|'s bit pattern (IEEE ordering == integer
// ordering for non-negative floats) and round-to-nearest uses the 1.5*2^23
// magic constant instead of nearbyintf. Double path uses libm (only test code
// and low-volume paths run in double).
NAIRSTD_MATH_INLINE float fast_expf(float x) {
    float ax = std::fabs(x);
    int32_t ai = std::min(std::bit_cast<int32_t>(ax), std::bit_cast<int32_t>(88.0f));
    x = std::copysign(std::bit_cast<float>(ai), x);
    float z = x * 1.44269504088896341f;          // x / ln 2
    float nf = z + 12582912.0f;                  // n stored in low mantissa bits
    int32_t ni = std::bit_cast<int32_t>(nf) - 0x4b400000;
    float n = nf - 12582912.0f;
    // Cody-Waite reduction: r = x - n*ln2, carried in two pieces.
    float r = x - n * 0.693145751953125f;
    r -= n * 1.428606765330187045e-06f;
    // degree-7 Taylor on |r| <= 0.347
    float p = 1.0f / 5040.0f;
    p = p * r + 1.0f / 720.0f;
    p = p * r + 1.0f / 120.0f;
    p = p * r + 1.0f / 24.0f;
    p = p * r + 1.0f / 6.0f;
    p = p * r + 0.5f;
    p = p * r + 1.0f;
    p = p * r + 1.0f;
    return p * std::bit_cast<float>((ni + 127) << 23);
}

// log for float, ~1 ulp for normal inputs. Zero, negatives and denormals are
// pinned to FLT_MIN (returns ~-87.34) so callers get a large-negative finite
// value instead of -inf/NaN. Exponent/mantissa split is done in integer space
// (offset by the bits of sqrt(0.5) so the mantissa lands in [sqrt(.5),
// sqrt(2))); same vectorization constraints as fast_expf.
NAIRSTD_MATH_INLINE float fast_logf(float x) {
    int32_t xi = std::max(std::bit_cast<int32_t>(x), 0x00800000);
    const int32_t ei = (xi - 0x3f3504f3) >> 23;
    const float m = std::bit_cast<float>(xi - (ei << 23));
    const float e = static_cast<float>(ei);
    const float t = m - 1.0f;
    const float z = t * t;
    float y = 7.0376836292e-2f;
    y = y * t - 1.1514610310e-1f;
    y = y * t + 1.1676998740e-1f;
    y = y * t - 1.2420140846e-1f;
    y = y * t + 1.4249322787e-1f;
    y = y * t - 1.6668057665e-1f;
    y = y * t + 2.0000714765e-1f;
    y = y * t - 2.4999993993e-1f;
    y = y * t + 3.3333331174e-1f;
    y = y * t * z;
    y += e * -2.12194440e-4f;   // low part of ln 2
    y -= 0.5f * z;
    return t + y + e * 0.693359375f;
}

template <typename T>
NAIRSTD_MATH_INLINE T exp_(T x) {
    if constexpr (std::is_same_v<T, float>) return fast_expf(x);
    else return std::exp(x);
}

template <typename T>
NAIRSTD_MATH_INLINE T log_(T x) {
    if constexpr (std::is_same_v<T, float>) return fast_logf(x);
    else return std::log(x);
}

template <typename T>
NAIRSTD_MATH_INLINE T log1p_(T x) {
    // float path trades the last bit of precision near x=0 for vectorizability
    if constexpr (std::is_same_v<T, float>) return fast_logf(1.0f + x);
    else return std::log1p(x);
}

template <typename T>
NAIRSTD_MATH_INLINE T sigmoid_(T x) {
    // naive form is total because exp_ saturates instead of overflowing
    return T(1) / (T(1) + exp_<T>(-x));
}

template <typename T>
NAIRSTD_MATH_INLINE T silu_(T x) {
    return x * sigmoid_(x);
}

template <typename T>
NAIRSTD_MATH_INLINE T silu_grad_(T x) {
    T s = sigmoid_(x);
    return s * (T(1) + x * (T(1) - s));
}

// ---- reductions (fixed-order, lane-blocked) ---------------------------------

template <typename T>
T vsum(const T* x, int64_t n) {
    T acc[kLanes] = {};
    int64_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        for (int l = 0; l < kLanes; ++l) acc[l] += x[i + l];
    T s = 0;
    for (int l = 0; l < kLanes; ++l) s += acc[l];
    for (; i < n; ++i) s += x[i];
    return s;
}

template <typename T>
T vdot(const T* a, const T* b, int64_t n) {
    T acc[kLanes] = {};
    int64_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        for (int l = 0; l < kLanes; ++l) acc[l] += a[i + l] * b[i + l];
    T s = 0;
    for (int l = 0; l < kLanes; ++l) s += acc[l];
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

// sum of (x - mu)^2
template <typename T>
T vsqdev(const T* x, T mu, int64_t n) {
    T acc[kLanes] = {};
    int64_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        for (int l = 0; l < kLanes; ++l) {
            T d = x[i + l] - mu;
            acc[l] += d * d;
        }
    T s = 0;
    for (int l = 0; l < kLanes; ++l) s += acc[l];
    for (; i < n; ++i) {
        T d = x[i] - mu;
        s += d * d;
    }
    return s;
}

// float compare-and-select reductions don't vectorize under strict IEEE
// semantics, so the float path max-reduces bit patterns mapped to the
// order-preserving unsigned-integer key (the radix-sort float transform);
// the result is bit-identical to a sequential std::max scan.
NAIRSTD_MATH_INLINE uint32_t float_sortkey(float v) {
    uint32_t b = std::bit_cast<uint32_t>(v);
    return b ^ (uint32_t(int32_t(b) >> 31) | 0x80000000u);
}
NAIRSTD_MATH_INLINE float float_unsortkey(uint32_t u) {
    return std::bit_cast<float>(u ^ (uint32_t(int32_t(~u) >> 31) | 0x80000000u));
}

template <typename T>
T vmax(const T* x, int64_t n) {
    if constexpr (std::is_same_v<T, float>) {
        if (n >= kLanes) {
            uint32_t acc[kLanes];
            for (int l = 0; l < kLanes; ++l) acc[l] = float_sortkey(x[l]);
            int64_t i = kLanes;
            for (; i + kLanes <= n; i += kLanes)
                for (int l = 0; l < kLanes; ++l) {
                    const uint32_t v = float_sortkey(x[i + l]);
                    acc[l] = acc[l] < v ? v : acc[l];
                }
            uint32_t m = acc[0];
            for (int l = 1; l < kLanes; ++l) m = acc[l] > m ? acc[l] : m;
            for (; i < n; ++i) {
                const uint32_t v = float_sortkey(x[i]);
                m = v > m ? v : m;
            }
            return float_unsortkey(m);
        }
    }
    T m = x[0];
    for (int64_t i = 1; i < n; ++i) m = std::max(m, x[i]);
    return m;
}

template <typename T>
void vaxpy(T* y, T a, const T* x, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
void vscale(T* y, const T* x, T a, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = a * x[i];
}

template <typename T>
void vfill(T* y, T v, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = v;
}

// ---- conv2d -----------------------------------------------------------------
//
// Direct convolution, NCHW, square stride/pad, arbitrary odd-ish kernel.
// Layout of loops keeps each input row L1-resident across the kw taps; the
// stride-1 inner loop is a contiguous shifted axpy. The 3x3/s1/p1 case (the
// bulk of model FLOPs) gets fused three-tap row passes.

template <typename T>
void conv3x3s1p1_fwd(const T* x, const T* w, const T* bias, T* y,
                     int64_t B, int64_t Ci, int64_t H, int64_t W, int64_t Co) {
    for (int64_t m = 0; m < B; ++m) {
        const T* xm = x + m * Ci * H * W;
        T* ym = y + m * Co * H * W;
        for (int64_t co = 0; co < Co; ++co) {
            T* yp = ym + co * H * W;
            vfill(yp, bias ? bias[co] : T(0), H * W);
            for (int64_t ci = 0; ci < Ci; ++ci) {
                const T* xp = xm + ci * H * W;
                const T* wp = w + (co * Ci + ci) * 9;
                for (int64_t ky = 0; ky < 3; ++ky) {
                    const T w0 = wp[ky * 3], w1 = wp[ky * 3 + 1], w2 = wp[ky * 3 + 2];
                    for (int64_t yy = std::max<int64_t>(0, 1 - ky);
                         yy < std::min(H, H + 1 - ky); ++yy) {
                        const T* xr = xp + (yy + ky - 1) * W;
                        T* yr = yp + yy * W;
                        yr[0] += w1 * xr[0] + w2 * xr[1];
                        for (int64_t xx = 1; xx < W - 1; ++xx)
                            yr[xx] += w0 * xr[xx - 1] + w1 * xr[xx] + w2 * xr[xx + 1];
                        yr[W - 1] += w0 * xr[W - 2] + w1 * xr[W - 1];
                    }
                }
            }
        }
    }
}

// Backward passes run flat over the whole (sub)plane so the vector loops see
// ~H*W contiguous elements instead of per-row W-2 fragments; the handful of
// cross-row terms the flat pass gets wrong are fixed up with scalar edits.

template <typename T>
void conv3x3s1p1_bwd_input(const T* dy, const T* w, T* dx,
                           int64_t B, int64_t Ci, int64_t H, int64_t W, int64_t Co) {
    for (int64_t m = 0; m < B; ++m) {
        const T* dym = dy + m * Co * H * W;
        T* dxm = dx + m * Ci * H * W;
        for (int64_t ci = 0; ci < Ci; ++ci) {
            T* dxp = dxm + ci * H * W;
            for (int64_t co = 0; co < Co; ++co) {
                const T* gp = dym + co * H * W;
                const T* wp = w + (co * Ci + ci) * 9;
                // dx[r][c] += w[ky][0]*g[r'][c+1] + w[ky][1]*g[r'][c] + w[ky][2]*g[r'][c-1],
                // r' = r - ky + 1
                for (int64_t ky = 0; ky < 3; ++ky) {
                    const T w0 = wp[ky * 3], w1 = wp[ky * 3 + 1], w2 = wp[ky * 3 + 2];
                    const int64_t r0 = std::max<int64_t>(0, ky - 1);
                    const int64_t rows = std::min(H, H + ky - 1) - r0;
                    if (rows <= 0) continue;
                    const T* G = gp + (r0 - ky + 1) * W;
                    T* D = dxp + r0 * W;
                    const int64_t L = rows * W;
                    for (int64_t i = 1; i < L - 1; ++i)
                        D[i] += w0 * G[i + 1] + w1 * G[i] + w2 * G[i - 1];
                    D[0] += w1 * G[0] + w0 * G[1];
                    D[L - 1] += w1 * G[L - 1] + w2 * G[L - 2];
                    for (int64_t k = 1; k < rows; ++k) {
                        const int64_t i0 = k * W;
                        D[i0] -= w2 * G[i0 - 1];      // no left neighbor at col 0
                        D[i0 - 1] -= w0 * G[i0];      // no right neighbor at col W-1
                    }
                }
            }
        }
    }
}

template <typename T>
void conv3x3s1p1_bwd_weight(const T* x, const T* dy, T* dw, T* db,
                            int64_t B, int64_t Ci, int64_t H, int64_t W, int64_t Co) {
    for (int64_t m = 0; m < B; ++m) {
        const T* xm = x + m * Ci * H * W;
        const T* dym = dy + m * Co * H * W;
        for (int64_t co = 0; co < Co; ++co) {
            const T* gp = dym + co * H * W;
            if (db) db[co] += vsum(gp, H * W);
            for (int64_t ci = 0; ci < Ci; ++ci) {
                const T* xp = xm + ci * H * W;
                T* wp = dw + (co * Ci + ci) * 9;
                for (int64_t ky = 0; ky < 3; ++ky) {
                    const int64_t y0 = std::max<int64_t>(0, 1 - ky);
                    const int64_t rows = std::min(H, H + 1 - ky) - y0;
                    if (rows <= 0) continue;
                    const T* G = gp + y0 * W;
                    const T* X = xp + (y0 + ky - 1) * W;
                    const int64_t L = rows * W;
                    T a0 = vdot(G + 1, X, L - 1);
                    T a1 = vdot(G, X, L);
                    T a2 = vdot(G, X + 1, L - 1);
                    for (int64_t k = 1; k < rows; ++k) {
                        const int64_t i0 = k * W;
                        a0 -= G[i0] * X[i0 - 1];  // cross-row pairs are not real taps
                        a2 -= G[i0 - 1] * X[i0];
                    }
                    wp[ky * 3] += a0;
                    wp[ky * 3 + 1] += a1;
                    wp[ky * 3 + 2] += a2;
                }
            }
        }
    }
}

template <typename T>
void conv2d_fwd(const T* x, const T* w, const T* bias, T* y,
                int64_t B, int64_t Ci, int64_t H, int64_t W,
                int64_t Co, int64_t kh, int64_t kw, int64_t stride, int64_t pad) {
    if (kh == 3 && kw == 3 && stride == 1 && pad == 1 && W >= 2) {
        conv3x3s1p1_fwd(x, w, bias, y, B, Ci, H, W, Co);
        return;
    }
    const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    for (int64_t m = 0; m < B; ++m) {
        const T* xm = x + m * Ci * H * W;
        T* ym = y + m * Co * Ho * Wo;
        for (int64_t co = 0; co < Co; ++co) {
            T* yp = ym + co * Ho * Wo;
            vfill(yp, bias ? bias[co] : T(0), Ho * Wo);
            for (int64_t ci = 0; ci < Ci; ++ci) {
                const T* xp = xm + ci * H * W;
                const T* wp = w + ((co * Ci + ci) * kh) * kw;
                for (int64_t ky = 0; ky < kh; ++ky) {
                    const int64_t y0 = std::max<int64_t>(0, ceil_div(pad - ky, stride));
                    const int64_t y1 = std::min(Ho, ceil_div(H + pad - ky, stride));
                    for (int64_t yy = y0; yy < y1; ++yy) {
                        const T* xrow = xp + (yy * stride + ky - pad) * W;
                        T* yrow = yp + yy * Wo;
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            const T wv = wp[ky * kw + kx];
                            const int64_t x0 = std::max<int64_t>(0, ceil_div(pad - kx, stride));
                            const int64_t x1 = std::min(Wo, ceil_div(W + pad - kx, stride));
                            const T* xr = xrow + kx - pad;
                            if (stride == 1) {
                                for (int64_t xx = x0; xx < x1; ++xx)
                                    yrow[xx] += wv * xr[xx];
                            } else {
                                for (int64_t xx = x0; xx < x1; ++xx)
                                    yrow[xx] += wv * xr[xx * stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv2d_bwd_input(const T* dy, const T* w, T* dx,
                      int64_t B, int64_t Ci, int64_t H, int64_t W,
                      int64_t Co, int64_t kh, int64_t kw, int64_t stride, int64_t pad) {
    if (kh == 3 && kw == 3 && stride == 1 && pad == 1 && W >= 2) {
        conv3x3s1p1_bwd_input(dy, w, dx, B, Ci, H, W, Co);
        return;
    }
    const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    for (int64_t m = 0; m < B; ++m) {
        T* dxm = dx + m * Ci * H * W;
        const T* dym = dy + m * Co * Ho * Wo;
        for (int64_t co = 0; co < Co; ++co) {
            const T* gp = dym + co * Ho * Wo;
            for (int64_t ci = 0; ci < Ci; ++ci) {
                T* dxp = dxm + ci * H * W;
                const T* wp = w + ((co * Ci + ci) * kh) * kw;
                for (int64_t ky = 0; ky < kh; ++ky) {
                    const int64_t y0 = std::max<int64_t>(0, ceil_div(pad - ky, stride));
                    const int64_t y1 = std::min(Ho, ceil_div(H + pad - ky, stride));
                    for (int64_t yy = y0; yy < y1; ++yy) {
                        const T* grow = gp + yy * Wo;
                        T* dxrow = dxp + (yy * stride + ky - pad) * W;
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            const T wv = wp[ky * kw + kx];
                            const int64_t x0 = std::max<int64_t>(0, ceil_div(pad - kx, stride));
                            const int64_t x1 = std::min(Wo, ceil_div(W + pad - kx, stride));
                            T* dxr = dxrow + kx - pad;
                            if (stride == 1) {
                                for (int64_t xx = x0; xx < x1; ++xx)
                                    dxr[xx] += wv * grow[xx];
                            } else {
                                for (int64_t xx = x0; xx < x1; ++xx)
                                    dxr[xx * stride] += wv * grow[xx];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv2d_bwd_weight(const T* x, const T* dy, T* dw, T* db,
                       int64_t B, int64_t Ci, int64_t H, int64_t W,
                       int64_t Co, int64_t kh, int64_t kw, int64_t stride, int64_t pad) {
    if (kh == 3 && kw == 3 && stride == 1 && pad == 1 && W >= 2) {
        conv3x3s1p1_bwd_weight(x, dy, dw, db, B, Ci, H, W, Co);
        return;
    }
    const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    for (int64_t m = 0; m < B; ++m) {
        const T* xm = x + m * Ci * H * W;
        const T* dym = dy + m * Co * Ho * Wo;
        for (int64_t co = 0; co < Co; ++co) {
            const T* gp = dym + co * Ho * Wo;
            if (db) db[co] += vsum(gp, Ho * Wo);
            for (int64_t ci = 0; ci < Ci; ++ci) {
                const T* xp = xm + ci * H * W;
                T* wp = dw + ((co * Ci + ci) * kh) * kw;
                for (int64_t ky = 0; ky < kh; ++ky) {
                    const int64_t y0 = std::max<int64_t>(0, ceil_div(pad - ky, stride));
                    const int64_t y1 = std::min(Ho, ceil_div(H + pad - ky, stride));
                    for (int64_t kx = 0; kx < kw; ++kx) {
                        const int64_t x0 = std::max<int64_t>(0, ceil_div(pad - kx, stride));
                        const int64_t x1 = std::min(Wo, ceil_div(W + pad - kx, stride));
                        if (x1 <= x0) continue;
                        T acc = 0;
                        for (int64_t yy = y0; yy < y1; ++yy) {
                            const T* grow = gp + yy * Wo + x0;
                            const T* xrow = xp + (yy * stride + ky - pad) * W + kx - pad;
                            if (stride == 1) {
                                acc += vdot(grow, xrow + x0, x1 - x0);
                            } else {
                                T a = 0;
                                for (int64_t xx = x0; xx < x1; ++xx)
                                    a += grow[xx - x0] * xrow[xx * stride];
                                acc += a;
                            }
                        }
                        wp[ky * kw + kx] += acc;
                    }
                }
            }
        }
    }
}

// ---- batched matmul ---------------------------------------------------------
//
// C[b] (+)= opA(A[b]) @ opB(B[b]) with opX in {identity, transpose}.
// A is Bt x (M x K) pre-op, B is Bt x (K x N) pre-op, C is Bt x M x N.

// dst (R x Cc, row-major) = transpose of src (Cc x R, row-major). Tiled so the
// strided side stays within L1; a flat loop costs a cache line per element
// once R outgrows a few hundred.
template <typename T>
void transpose_pack(const T* src, T* dst, int64_t R, int64_t Cc) {
    constexpr int64_t TB = 32;
    for (int64_t i0 = 0; i0 < R; i0 += TB) {
        const int64_t i1 = std::min(R, i0 + TB);
        for (int64_t j0 = 0; j0 < Cc; j0 += TB) {
            const int64_t j1 = std::min(Cc, j0 + TB);
            for (int64_t i = i0; i < i1; ++i)
                for (int64_t j = j0; j < j1; ++j) dst[i * Cc + j] = src[j * R + i];
        }
    }
}

template <typename T>
void bmm(const T* A, const T* Bm, T* C, int64_t Bt, int64_t M, int64_t K, int64_t N,
         bool transA, bool transB, bool accumulate) {
    // The shapes here pair a narrow channel axis (4..32) with long token axes
    // (up to 40k), in both operand orders. Two regimes keep the inner loop
    // contiguous and vector-wide: narrow rows with long K take dot products
    // over K, everything else takes k-ordered axpys over N (gcc emits
    // smaller-width epilogues, so even N of 4-16 beats the scalar loop).
    // Either way a transposed (or wrong-major) operand is packed once per
    // batch; the extra pass is noise next to the multiply. Only genuinely
    // tiny N falls through to the plain triple loop.
    const bool dotty = N < 48 && K >= 128;
    const bool wide = !dotty && N >= 4;
    std::vector<T> apack, bpack;
    const int64_t asz = M * K, bsz = K * N;
    for (int64_t b = 0; b < Bt; ++b) {
        const T* a = A + b * asz;
        const T* bb = Bm + b * bsz;
        T* c = C + b * M * N;
        if ((wide || dotty) && transA) {  // want a as M x K row-major
            apack.resize(asz);
            transpose_pack(a, apack.data(), M, K);
            a = apack.data();
        }
        if (wide && transB) {  // want bb as K x N row-major
            bpack.resize(bsz);
            transpose_pack(bb, bpack.data(), K, N);
            bb = bpack.data();
        } else if (dotty && !transB) {  // want bb as N x K row-major
            bpack.resize(bsz);
            transpose_pack(bb, bpack.data(), N, K);
            bb = bpack.data();
        }
        if (wide) {
            for (int64_t i = 0; i < M; ++i) {
                T* ci = c + i * N;
                if (accumulate) vaxpy(ci, a[i * K], bb, N);
                else vscale(ci, bb, a[i * K], N);  // k = 0 writes, no memset pass
                for (int64_t k = 1; k < K; ++k) vaxpy(ci, a[i * K + k], bb + k * N, N);
            }
        } else if (dotty) {
            for (int64_t i = 0; i < M; ++i)
                for (int64_t j = 0; j < N; ++j) {
                    const T s = vdot(a + i * K, bb + j * K, K);
                    c[i * N + j] = accumulate ? c[i * N + j] + s : s;
                }
        } else {
            for (int64_t i = 0; i < M; ++i)
                for (int64_t j = 0; j < N; ++j) {
                    T s = 0;
                    for (int64_t k = 0; k < K; ++k)
                        s += (transA ? a[k * M + i] : a[i * K + k]) *
                             (transB ? bb[j * K + k] : bb[k * N + j]);
                    c[i * N + j] = accumulate ? c[i * N + j] + s : s;
                }
        }
    }
}

// ---- softmax over last dim --------------------------------------------------

template <typename T>
void softmax_rows_fwd(const T* x, T* y, int64_t rows, int64_t n) {
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = x + r * n;
        T* yr = y + r * n;
        const T mx = vmax(xr, n);
        for (int64_t i = 0; i < n; ++i) yr[i] = exp_<T>(xr[i] - mx);
        const T inv = T(1) / vsum(yr, n);
        for (int64_t i = 0; i < n; ++i) yr[i] *= inv;
    }
}

template <typename T>
void softmax_rows_bwd(const T* y, const T* dy, T* dx, int64_t rows, int64_t n) {
    for (int64_t r = 0; r < rows; ++r) {
        const T* yr = y + r * n;
        const T* gr = dy + r * n;
        T* dr = dx + r * n;
        const T dot = vdot(yr, gr, n);
        for (int64_t i = 0; i < n; ++i) dr[i] += yr[i] * (gr[i] - dot);
    }
}

// Same update written back over dy; used where dy is a scratch buffer.
template <typename T>
void softmax_rows_bwd_inplace(const T* y, T* g, int64_t rows, int64_t n) {
    for (int64_t r = 0; r < rows; ++r) {
        const T* yr = y + r * n;
        T* gr = g + r * n;
        const T dot = vdot(yr, gr, n);
        for (int64_t i = 0; i < n; ++i) gr[i] = yr[i] * (gr[i] - dot);
    }
}

// ---- group norm (optionally fused with SiLU) --------------------------------

template <typename T>
void gn_fwd(const T* x, const T* gamma, const T* beta, T* y, T* mean, T* rstd,
            int64_t B, int64_t C, int64_t HW, int64_t G, T eps, bool silu) {
    const int64_t Cg = C / G;
    const int64_t n = Cg * HW;
    for (int64_t m = 0; m < B; ++m) {
        for (int64_t g = 0; g < G; ++g) {
            const T* xg = x + (m * C + g * Cg) * HW;
            const T mu = vsum(xg, n) / T(n);
            const T var = vsqdev(xg, mu, n) / T(n);
            const T rs = T(1) / std::sqrt(var + eps);
            mean[m * G + g] = mu;
            rstd[m * G + g] = rs;
            for (int64_t cc = 0; cc < Cg; ++cc) {
                const int64_t c = g * Cg + cc;
                const T scale = gamma[c] * rs;
                const T shift = beta[c] - mu * scale;
                const T* xp = x + (m * C + c) * HW;
                T* yp = y + (m * C + c) * HW;
                if (silu) {
                    for (int64_t i = 0; i < HW; ++i) {
                        T a = xp[i] * scale + shift;
                        yp[i] = silu_(a);
                    }
                } else {
                    for (int64_t i = 0; i < HW; ++i) yp[i] = xp[i] * scale + shift;
                }
            }
        }
    }
}

// kSilu is a template parameter (not a runtime flag) so each instantiation has
// a straight-line loop body: with silu_grad_ inlined the body exceeds gcc's
// loop-unswitching size limit, and a runtime `if (silu)` inside the loop kills
// vectorization.
template <bool kSilu, typename T>
void gn_bwd_impl(const T* __restrict x, const T* __restrict gamma, const T* __restrict beta,
                 const T* __restrict mean, const T* __restrict rstd, const T* __restrict dy,
                 T* __restrict dx, T* __restrict dgamma, T* __restrict dbeta,
                 int64_t B, int64_t C, int64_t HW, int64_t G) {
    const int64_t Cg = C / G;
    const T invn = T(1) / T(Cg * HW);
    for (int64_t m = 0; m < B; ++m) {
        for (int64_t g = 0; g < G; ++g) {
            const T mu = mean[m * G + g];
            const T rs = rstd[m * G + g];
            T s1 = 0, s2 = 0;  // sum(ga), sum(ga * xhat), ga = dL/d(pre-act) * gamma
            for (int64_t cc = 0; cc < Cg; ++cc) {
                const int64_t c = g * Cg + cc;
                const T* xp = x + (m * C + c) * HW;
                const T* gp = dy + (m * C + c) * HW;
                const T scale = gamma[c] * rs;
                const T shift = beta[c] - mu * scale;
                T accb[kLanes] = {}, accg[kLanes] = {};
                int64_t i = 0;
                for (; i + kLanes <= HW; i += kLanes) {
                    for (int l = 0; l < kLanes; ++l) {
                        const T xh = (xp[i + l] - mu) * rs;
                        T gpre = gp[i + l];
                        if constexpr (kSilu) gpre *= silu_grad_(xp[i + l] * scale + shift);
                        accb[l] += gpre;
                        accg[l] += gpre * xh;
                    }
                }
                T tb = 0, tg = 0;
                for (int l = 0; l < kLanes; ++l) { tb += accb[l]; tg += accg[l]; }
                for (; i < HW; ++i) {
                    const T xh = (xp[i] - mu) * rs;
                    T gpre = gp[i];
                    if constexpr (kSilu) gpre *= silu_grad_(xp[i] * scale + shift);
                    tb += gpre;
                    tg += gpre * xh;
                }
                dbeta[c] += tb;
                dgamma[c] += tg;
                s1 += tb * gamma[c];
                s2 += tg * gamma[c];
            }
            s1 *= invn;
            s2 *= invn;
            for (int64_t cc = 0; cc < Cg; ++cc) {
                const int64_t c = g * Cg + cc;
                const T* xp = x + (m * C + c) * HW;
                const T* gp = dy + (m * C + c) * HW;
                T* dp = dx + (m * C + c) * HW;
                const T scale = gamma[c] * rs;
                const T shift = beta[c] - mu * scale;
                int64_t i = 0;
                for (; i + kLanes <= HW; i += kLanes) {
                    for (int l = 0; l < kLanes; ++l) {
                        const T xh = (xp[i + l] - mu) * rs;
                        T gpre = gp[i + l];
                        if constexpr (kSilu) gpre *= silu_grad_(xp[i + l] * scale + shift);
                        dp[i + l] += rs * (gpre * gamma[c] - s1 - xh * s2);
                    }
                }
                for (; i < HW; ++i) {
                    const T xh = (xp[i] - mu) * rs;
                    T gpre = gp[i];
                    if constexpr (kSilu) gpre *= silu_grad_(xp[i] * scale + shift);
                    dp[i] += rs * (gpre * gamma[c] - s1 - xh * s2);
                }
            }
        }
    }
}

template <typename T>
void gn_bwd(const T* x, const T* gamma, const T* beta, const T* mean, const T* rstd,
            const T* dy, T* dx, T* dgamma, T* dbeta,
            int64_t B, int64_t C, int64_t HW, int64_t G, bool silu) {
    if (silu)
        gn_bwd_impl<true>(x, gamma, beta, mean, rstd, dy, dx, dgamma, dbeta, B, C, HW, G);
    else
        gn_bwd_impl<false>(x, gamma, beta, mean, rstd, dy, dx, dgamma, dbeta, B, C, HW, G);
}

// ---- misc spatial ops -------------------------------------------------------

template <typename T>
void upsample2x_nearest_fwd(const T* x, T* y, int64_t planes, int64_t H, int64_t W) {
    for (int64_t p = 0; p < planes; ++p) {
        const T* xp = x + p * H * W;
        T* yp = y + p * 4 * H * W;
        for (int64_t i = 0; i < H; ++i) {
            T* r0 = yp + (2 * i) * 2 * W;
            T* r1 = r0 + 2 * W;
            const T* xr = xp + i * W;
            for (int64_t j = 0; j < W; ++j) {
                r0[2 * j] = r0[2 * j + 1] = xr[j];
            }
            std::memcpy(r1, r0, sizeof(T) * 2 * W);
        }
    }
}

template <typename T>
void avgpool2x2_fwd(const T* x, T* y, int64_t planes, int64_t H, int64_t W) {
    const int64_t Ho = H / 2, Wo = W / 2;
    for (int64_t p = 0; p < planes; ++p) {
        const T* xp = x + p * H * W;
        T* yp = y + p * Ho * Wo;
        for (int64_t i = 0; i < Ho; ++i) {
            const T* r0 = xp + (2 * i) * W;
            const T* r1 = r0 + W;
            T* yr = yp + i * Wo;
            for (int64_t j = 0; j < Wo; ++j)
                yr[j] = (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]) * T(0.25);
        }
    }
}

template <typename T>
void avgpool2x2_bwd(const T* dy, T* dx, int64_t planes, int64_t H, int64_t W) {
    const int64_t Ho = H / 2, Wo = W / 2;
    for (int64_t p = 0; p < planes; ++p) {
        const T* gp = dy + p * Ho * Wo;
        T* dp = dx + p * H * W;
        for (int64_t i = 0; i < Ho; ++i) {
            const T* gr = gp + i * Wo;
            T* d0 = dp + (2 * i) * W;
            T* d1 = d0 + W;
            for (int64_t j = 0; j < Wo; ++j) {
                T g = gr[j] * T(0.25);
                d0[2 * j] += g;
                d0[2 * j + 1] += g;
                d1[2 * j] += g;
                d1[2 * j + 1] += g;
            }
        }
    }
}

template <typename T>
void upsample2x_nearest_bwd(const T* dy, T* dx, int64_t planes, int64_t H, int64_t W) {
    for (int64_t p = 0; p < planes; ++p) {
        const T* gp = dy + p * 4 * H * W;
        T* dp = dx + p * H * W;
        for (int64_t i = 0; i < H; ++i) {
            const T* r0 = gp + (2 * i) * 2 * W;
            const T* r1 = r0 + 2 * W;
            T* dr = dp + i * W;
            for (int64_t j = 0; j < W; ++j)
                dr[j] += r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1];
        }
    }
}

}  // namespace nairstd::kern
