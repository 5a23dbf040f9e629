#ifndef DIFFEDIT_TENSOR_HPP
#define DIFFEDIT_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "diffedit/error.hpp"

namespace diffedit {

// Flat row-major array of 64-bit reals plus a shape. The single value type
// carried through the whole pipeline: images, latents, noise, parameters.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)), data(checked_numel(shape), 0.0) {}
    Tensor(std::vector<int64_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        require(static_cast<int64_t>(data.size()) == checked_numel(shape), ErrorKind::invalid_shape,
                "tensor data length does not match shape");
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }

    double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // 2-D accessors, row-major
    double& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * shape[1] + c)]; }
    double at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * shape[1] + c)]; }

    int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
    int64_t cols() const { return ndim() < 2 ? 1 : shape[1]; }

    static int64_t checked_numel(const std::vector<int64_t>& s) {
        require(!s.empty(), ErrorKind::invalid_shape, "shape must be non-empty");
        int64_t n = 1;
        for (int64_t e : s) {
            require(e > 0, ErrorKind::invalid_shape, "shape extents must be positive");
            n *= e;
        }
        return n;
    }
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

inline std::string shape_str(const Tensor& t) {
    std::string s = "[";
    for (size_t i = 0; i < t.shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(t.shape[i]);
    }
    return s + "]";
}

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

inline Tensor full(std::vector<int64_t> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
}

inline bool all_finite(const Tensor& t) {
    for (double v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

inline void require_finite(const Tensor& t, const std::string& who) {
    require(all_finite(t), ErrorKind::numeric, who + ": non-finite values");
}

inline double dot(const Tensor& a, const Tensor& b) {
    require(same_shape(a, b), ErrorKind::invalid_shape, "dot: shape mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

inline double norm2(const Tensor& a) { return std::sqrt(dot(a, a)); }

inline double mse(const Tensor& a, const Tensor& b) {
    require(same_shape(a, b), ErrorKind::invalid_shape, "mse: shape mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return s / static_cast<double>(a.data.size());
}

inline double mean_abs_diff(const Tensor& a, const Tensor& b) {
    require(same_shape(a, b), ErrorKind::invalid_shape, "mean_abs_diff: shape mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) s += std::fabs(a.data[i] - b.data[i]);
    return s / static_cast<double>(a.data.size());
}

inline double rel_l2_error(const Tensor& approx, const Tensor& ref) {
    require(same_shape(approx, ref), ErrorKind::invalid_shape, "rel_l2_error: shape mismatch");
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < ref.data.size(); ++i) {
        double d = approx.data[i] - ref.data[i];
        num += d * d;
        den += ref.data[i] * ref.data[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

// a + c*b, elementwise
inline Tensor axpy(const Tensor& a, double c, const Tensor& b) {
    require(same_shape(a, b), ErrorKind::invalid_shape, "axpy: shape mismatch");
    Tensor out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += c * b.data[i];
    return out;
}

inline Tensor scaled(const Tensor& a, double c) {
    Tensor out = a;
    for (double& v : out.data) v *= c;
    return out;
}

inline Tensor reshaped(const Tensor& a, std::vector<int64_t> shape) {
    require(Tensor::checked_numel(shape) == a.numel(), ErrorKind::invalid_shape,
            "reshape: element count mismatch");
    Tensor out = a;
    out.shape = std::move(shape);
    return out;
}

// <a,b> / (|a||b|). Norms below 1e-12 are refused; the caller decides how to
// handle degenerate directions (see the guidance losses).
inline double cosine_similarity(const Tensor& a, const Tensor& b) {
    require(same_shape(a, b), ErrorKind::invalid_shape, "cosine_similarity: shape mismatch");
    double na = norm2(a), nb = norm2(b);
    require(na >= 1e-12 && nb >= 1e-12, ErrorKind::degenerate,
            "cosine_similarity: vector norm below 1e-12");
    double c = dot(a, b) / (na * nb);
    return std::min(1.0, std::max(-1.0, c));
}

}  // namespace diffedit

#endif  // DIFFEDIT_TENSOR_HPP
