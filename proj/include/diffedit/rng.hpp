#ifndef DIFFEDIT_RNG_HPP
#define DIFFEDIT_RNG_HPP

#include <cstdint>

#include "diffedit/tensor.hpp"

namespace diffedit {

namespace detail {

// SplitMix64 finalizer (Steele/Lea/Flood; Vigna's fixed-increment variant).
inline uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * UINT64_C(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)) * UINT64_C(0x94D049BB133111EB);
    return z ^ (z >> 31);
}

constexpr uint64_t kGolden = UINT64_C(0x9E3779B97F4A7C15);

}  // namespace detail

// Counter-based stream: the i-th output is a pure function of
// (master_seed, stream_id, i), so sequences are bit-identical across runs
// and platforms, and distinct stream ids give unrelated sequences.
// Single-owner by convention; parallel work splits into child streams.
class RngStream {
public:
    RngStream(uint64_t master_seed, uint64_t stream_id)
        : master_seed_(master_seed),
          stream_id_(stream_id),
          key_(detail::mix64(master_seed ^ detail::mix64(stream_id * detail::kGolden + 1))),
          counter_(0) {}

    uint64_t master_seed() const { return master_seed_; }
    uint64_t stream_id() const { return stream_id_; }
    uint64_t counter() const { return counter_; }

    uint64_t next_u64() { return detail::mix64(key_ + (++counter_) * detail::kGolden); }

    // uniform in [0, 1)
    double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // standard normal via Box-Muller; consumes exactly two u64 draws
    double next_gaussian() {
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        double u2 = next_uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // uniform integer in [0, n)
    uint64_t next_below(uint64_t n) { return next_u64() % n; }

    double next_uniform_in(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

    // Independent child stream; children of distinct tags never collide with
    // each other or with the parent.
    RngStream split(uint64_t tag) const {
        return RngStream(master_seed_, detail::mix64(stream_id_ * detail::kGolden + 13) ^ (tag + 1));
    }

private:
    uint64_t master_seed_;
    uint64_t stream_id_;
    uint64_t key_;
    uint64_t counter_;
};

inline Tensor gaussian(RngStream& rng, std::vector<int64_t> shape) {
    Tensor t(std::move(shape));  // validates non-empty, positive extents
    for (double& v : t.data) v = rng.next_gaussian();
    return t;
}

inline Tensor uniform(RngStream& rng, std::vector<int64_t> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.next_uniform_in(lo, hi);
    return t;
}

}  // namespace diffedit

#endif  // DIFFEDIT_RNG_HPP
