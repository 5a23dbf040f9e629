#ifndef DIFFEDIT_UTIL_HPP
#define DIFFEDIT_UTIL_HPP

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "diffedit/error.hpp"

namespace diffedit {

inline constexpr const char* kCodeVersion = "0.1.0";

inline uint64_t fnv1a(const void* data, size_t len, uint64_t h = UINT64_C(0xCBF29CE484222325)) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= UINT64_C(0x100000001B3);
    }
    return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = UINT64_C(0xCBF29CE484222325)) {
    return fnv1a(s.data(), s.size(), h);
}

inline std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// digest of a file's raw bytes; used to pin checkpoints in manifests
inline std::string file_digest(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::io, "file_digest: cannot open " + path);
    uint64_t h = UINT64_C(0xCBF29CE484222325);
    char buf[65536];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0)
        h = fnv1a(buf, static_cast<size_t>(f.gcount()), h);
    return hex64(h);
}

// shortest round-trippable decimal text for a double
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return buf;
    }
    return std::string(buf, ptr);
}

// shorter form for CSV cells; "inf" sentinel preserved
inline std::string csv_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

// Runs fn(i) for i in [0, n). Work is split into fixed contiguous chunks so
// the result set is identical for every thread count; items must be
// independent.
inline void parallel_for(int64_t n, const std::function<void(int64_t)>& fn, int threads = 0) {
    if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
    if (threads <= 1 || n <= 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    int64_t chunk = (n + threads - 1) / threads;
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
        int64_t lo = t * chunk, hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn]() {
            for (int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::io, "write_text_file: cannot open " + path);
    f << content;
    require(f.good(), ErrorKind::io, "write_text_file: write failed for " + path);
}

}  // namespace diffedit

#endif  // DIFFEDIT_UTIL_HPP
