#pragma once

// Shared plumbing: error types, checked asserts, RNG streams, small helpers.

#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#if defined(__GLIBC__) || defined(__linux__)
#include <malloc.h>
#endif

namespace nairstd {

// Large activation tensors (tens of MB) churn every step; with default malloc
// thresholds each one is a fresh mmap and the kernel spends more time zeroing
// pages than we spend computing. Raise the mmap/trim thresholds so the arena
// recycles those blocks. Idempotent; call from any binary entry point.
inline void tune_allocator() {
#if defined(__GLIBC__) && defined(M_MMAP_THRESHOLD)
    static const bool done = [] {
        mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
        mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
        return true;
    }();
    (void)done;
#endif
}

// Exit-code-mapped error categories (see cli): config=2, data=3, checkpoint=4.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};
struct DataError : std::runtime_error {
    explicit DataError(const std::string& m) : std::runtime_error(m) {}
};
struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& m) : std::runtime_error(m) {}
};

// Internal invariant violation (a bug, not bad user input).
struct InternalError : std::logic_error {
    explicit InternalError(const std::string& m) : std::logic_error(m) {}
};

namespace detail {
template <class... Args>
std::string format(const char* fmt, Args... args) {
    if constexpr (sizeof...(Args) == 0) {
        return std::string(fmt);
    } else {
        char buf[1024];
        std::snprintf(buf, sizeof(buf), fmt, args...);
        return std::string(buf);
    }
}
}  // namespace detail

#define NAIRSTD_CHECK(cond, ...)                                                       \
    do {                                                                               \
        if (!(cond))                                                                   \
            throw ::nairstd::InternalError(::nairstd::detail::format(__VA_ARGS__) +    \
                                           " [" + __FILE__ + ":" +                     \
                                           std::to_string(__LINE__) + "]");            \
    } while (0)

#define NAIRSTD_CHECK_CONFIG(cond, ...)                                                \
    do {                                                                               \
        if (!(cond)) throw ::nairstd::ConfigError(::nairstd::detail::format(__VA_ARGS__)); \
    } while (0)

#define NAIRSTD_CHECK_DATA(cond, ...)                                                  \
    do {                                                                               \
        if (!(cond)) throw ::nairstd::DataError(::nairstd::detail::format(__VA_ARGS__)); \
    } while (0)

#define NAIRSTD_CHECK_THROW(Err, cond, ...)                                            \
    do {                                                                               \
        if (!(cond)) throw Err(::nairstd::detail::format(__VA_ARGS__));                \
    } while (0)

// FNV-1a, used both for content hashing (freeze checks) and to derive
// independent per-name RNG streams from one master seed.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}
inline uint64_t fnv1a(const std::string& s, uint64_t h = 1469598103934665603ull) {
    return fnv1a(s.data(), s.size(), h);
}

// Named RNG stream: same master seed + same name -> same sequence, regardless
// of construction order. Keeps init/data/training draws decoupled.
inline std::mt19937_64 rng_stream(uint64_t master_seed, const std::string& name) {
    uint64_t h = fnv1a(name);
    std::seed_seq seq{uint32_t(master_seed), uint32_t(master_seed >> 32),
                      uint32_t(h), uint32_t(h >> 32)};
    return std::mt19937_64(seq);
}

inline int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

}  // namespace nairstd
