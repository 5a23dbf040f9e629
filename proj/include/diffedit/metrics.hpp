#ifndef DIFFEDIT_METRICS_HPP
#define DIFFEDIT_METRICS_HPP

#include <cmath>
#include <limits>
#include <vector>

#include "diffedit/error.hpp"
#include "diffedit/tensor.hpp"

namespace diffedit {

// 10 log10(max_val^2 / MSE); identical images give the +inf sentinel
// (written as "inf" in CSV output)
inline double psnr(const Tensor& x, const Tensor& y, double max_val = 1.0) {
    require(same_shape(x, y), ErrorKind::invalid_shape, "psnr: shape mismatch");
    double m = mse(x, y);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(max_val * max_val / m);
}

// Mean local SSIM over all centers where the full window fits, Gaussian
// window (default 11, sigma 1.5), stabilizers C1 = (0.01 L)^2, C2 = (0.03 L)^2.
inline double ssim(const Tensor& x, const Tensor& y, int window = 11, double sigma = 1.5,
                   double max_val = 1.0) {
    require(same_shape(x, y), ErrorKind::invalid_shape, "ssim: shape mismatch");
    require(x.ndim() == 2, ErrorKind::invalid_shape, "ssim: expected [H,W] images");
    int64_t H = x.shape[0], W = x.shape[1];
    require(window >= 1 && window <= H && window <= W, ErrorKind::window,
            "ssim: window larger than image extent");

    std::vector<double> kernel(static_cast<size_t>(window) * window);
    double ksum = 0.0;
    double half = (window - 1) / 2.0;
    for (int i = 0; i < window; ++i)
        for (int j = 0; j < window; ++j) {
            double di = i - half, dj = j - half;
            double k = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
            kernel[static_cast<size_t>(i * window + j)] = k;
            ksum += k;
        }
    for (double& k : kernel) k /= ksum;

    double c1 = (0.01 * max_val) * (0.01 * max_val);
    double c2 = (0.03 * max_val) * (0.03 * max_val);

    double total = 0.0;
    int64_t count = 0;
    for (int64_t r = 0; r + window <= H; ++r) {
        for (int64_t c = 0; c + window <= W; ++c) {
            double mx = 0.0, my = 0.0, ex2 = 0.0, ey2 = 0.0, exy = 0.0;
            for (int i = 0; i < window; ++i)
                for (int j = 0; j < window; ++j) {
                    double k = kernel[static_cast<size_t>(i * window + j)];
                    double xv = x.at(r + i, c + j), yv = y.at(r + i, c + j);
                    mx += k * xv;
                    my += k * yv;
                    ex2 += k * (xv * xv);
                    ey2 += k * (yv * yv);
                    exy += k * (xv * yv);  // association keeps ssim(x,y) == ssim(y,x)
                }
            double vx = ex2 - mx * mx;
            double vy = ey2 - my * my;
            double cov = exy - mx * my;
            double num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
            double den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += num / den;
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

}  // namespace diffedit

#endif  // DIFFEDIT_METRICS_HPP
