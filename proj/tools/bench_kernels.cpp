// Throughput probe for the conv/matmul kernels on the host CPU.
// Not part of the shipped CLI; used to size the desk-scale config.

#include <chrono>
#include <cstdio>
#include <vector>

#include "nairstd/kernels.hpp"

using namespace nairstd;

static double now_s() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

struct ConvCase {
    const char* name;
    int64_t B, Ci, H, W, Co, k, stride, pad;
};

int main() {
    std::vector<ConvCase> cases = {
        {"patch  3->4  32x32 B64", 64, 3, 32, 32, 4, 3, 1, 1},
        {"patch  4->4  32x32 B64", 64, 4, 32, 32, 4, 3, 1, 1},
        {"patch 16->16 32x32 B64", 64, 16, 32, 32, 16, 3, 1, 1},
        {"bb  3->8 s2 256x256 B1", 1, 3, 256, 256, 8, 3, 2, 1},
        {"bb  8->8  128x128 B1", 1, 8, 128, 128, 8, 3, 1, 1},
        {"bb 12->12  64x64  B1", 1, 12, 64, 64, 12, 3, 1, 1},
        {"bb 16->16  32x32  B1", 1, 16, 32, 32, 16, 3, 1, 1},
        {"bb 24->24  16x16  B1", 1, 24, 24, 24, 24, 3, 1, 1},
        {"dec  8->8  128x128 B1", 1, 8, 128, 128, 8, 3, 1, 1},
        {"head 4->1 256x256 B1", 1, 4, 256, 256, 1, 3, 1, 1},
    };
    for (const auto& c : cases) {
        int64_t Ho = (c.H + 2 * c.pad - c.k) / c.stride + 1;
        int64_t Wo = (c.W + 2 * c.pad - c.k) / c.stride + 1;
        std::vector<float> x(c.B * c.Ci * c.H * c.W, 0.5f);
        std::vector<float> w(c.Co * c.Ci * c.k * c.k, 0.1f);
        std::vector<float> b(c.Co, 0.0f);
        std::vector<float> y(c.B * c.Co * Ho * Wo);
        std::vector<float> dx(x.size(), 0.f), dw(w.size(), 0.f), db(c.Co, 0.f);
        double macs = double(c.B) * c.Co * c.Ci * Ho * Wo * c.k * c.k;

        // warm
        kern::conv2d_fwd(x.data(), w.data(), b.data(), y.data(), c.B, c.Ci, c.H,
                         c.W, c.Co, c.k, c.k, c.stride, c.pad);
        int reps = std::max<int>(3, int(2e9 / macs));
        double t0 = now_s();
        for (int r = 0; r < reps; ++r)
            kern::conv2d_fwd(x.data(), w.data(), b.data(), y.data(), c.B, c.Ci,
                             c.H, c.W, c.Co, c.k, c.k, c.stride, c.pad);
        double tf = (now_s() - t0) / reps;

        t0 = now_s();
        for (int r = 0; r < reps; ++r) {
            kern::conv2d_bwd_input(y.data(), w.data(), dx.data(), c.B, c.Ci, c.H,
                                   c.W, c.Co, c.k, c.k, c.stride, c.pad);
            kern::conv2d_bwd_weight(x.data(), y.data(), dw.data(), db.data(), c.B,
                                    c.Ci, c.H, c.W, c.Co, c.k, c.k, c.stride, c.pad);
        }
        double tb = (now_s() - t0) / reps;

        std::printf("%-24s fwd %7.3f ms  %6.2f GMAC/s | bwd %7.3f ms  %6.2f GMAC/s\n",
                    c.name, tf * 1e3, macs / tf * 1e-9, tb * 1e3, 2 * macs / tb * 1e-9);
    }

    // attention-ish matmul: (B*K) x P'2 x C  @  C x P2
    {
        int64_t Bt = 40, M = 256, K = 12, N = 1024;
        std::vector<float> A(Bt * M * K, 0.3f), Bm(Bt * K * N, 0.2f), C(Bt * M * N);
        double macs = double(Bt) * M * K * N;
        double t0 = now_s();
        kern::bmm(A.data(), Bm.data(), C.data(), Bt, M, K, N, false, false, false);
        double t = now_s() - t0;
        std::printf("bmm NN 40x256x12x1024    %7.3f ms  %6.2f GMAC/s\n", t * 1e3,
                    macs / t * 1e-9);
    }
    {
        int64_t Bt = 40, M = 256, K = 12, N = 1024;
        std::vector<float> A(Bt * M * K, 0.3f), Bm(Bt * N * K, 0.2f), C(Bt * M * N);
        double macs = double(Bt) * M * K * N;
        double t0 = now_s();
        kern::bmm(A.data(), Bm.data(), C.data(), Bt, M, K, N, false, true, false);
        double t = now_s() - t0;
        std::printf("bmm NT 40x256x12x1024    %7.3f ms  %6.2f GMAC/s\n", t * 1e3,
                    macs / t * 1e-9);
    }
    return 0;
}
