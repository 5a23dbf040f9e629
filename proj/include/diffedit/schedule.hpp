#ifndef DIFFEDIT_SCHEDULE_HPP
#define DIFFEDIT_SCHEDULE_HPP

#include <cmath>
#include <cstdint>
#include <vector>

#include "diffedit/error.hpp"

namespace diffedit {

// beta/alpha/alpha_bar sequences over t = 1..T. Index 0 is the virtual
// clean state: alpha_bar(0) == 1 exactly, so the step into t=0 recovers
// the denoised prediction with no residual noise term.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;       // betas[t], t in 1..T (index 0 unused)
    std::vector<double> alphas;      // 1 - beta_t
    std::vector<double> alpha_bars;  // prod_{s<=t} alpha_s, alpha_bars[0] == 1

    double beta(int t) const {
        require(t >= 1 && t <= T, ErrorKind::range, "beta: t out of range");
        return betas[static_cast<size_t>(t)];
    }
    double alpha(int t) const {
        require(t >= 1 && t <= T, ErrorKind::range, "alpha: t out of range");
        return alphas[static_cast<size_t>(t)];
    }
    double alpha_bar(int t) const {
        require(t >= 0 && t <= T, ErrorKind::range, "alpha_bar: t out of range");
        return alpha_bars[static_cast<size_t>(t)];
    }
};

inline NoiseSchedule linear_schedule(int T, double beta_start, double beta_end) {
    require(T >= 2, ErrorKind::range, "linear_schedule: T must be >= 2");
    require(beta_start > 0.0 && beta_start < 1.0 && beta_end > 0.0 && beta_end < 1.0,
            ErrorKind::range, "linear_schedule: beta endpoints must lie in (0,1)");
    require(beta_start <= beta_end, ErrorKind::range, "linear_schedule: beta_start > beta_end");
    NoiseSchedule s;
    s.T = T;
    s.betas.assign(static_cast<size_t>(T) + 1, 0.0);
    s.alphas.assign(static_cast<size_t>(T) + 1, 0.0);
    s.alpha_bars.assign(static_cast<size_t>(T) + 1, 0.0);
    s.alpha_bars[0] = 1.0;
    for (int t = 1; t <= T; ++t) {
        double frac = static_cast<double>(t - 1) / static_cast<double>(T - 1);
        double b = beta_start + (beta_end - beta_start) * frac;
        s.betas[static_cast<size_t>(t)] = b;
        s.alphas[static_cast<size_t>(t)] = 1.0 - b;
        s.alpha_bars[static_cast<size_t>(t)] =
            s.alpha_bars[static_cast<size_t>(t - 1)] * s.alphas[static_cast<size_t>(t)];
    }
    return s;
}

// sigma_tau(eta) = eta * sqrt((1-ab_prev)/(1-ab_cur)) * sqrt(1 - ab_cur/ab_prev).
// tau_prev = 0 is accepted (alpha_bar(0) = 1), giving sigma = 0.
inline double ddim_sigma(const NoiseSchedule& s, int tau_prev, int tau_cur, double eta) {
    require(tau_prev < tau_cur, ErrorKind::ordering, "ddim_sigma: tau_prev must be < tau_cur");
    require(tau_prev >= 0 && tau_cur <= s.T, ErrorKind::range, "ddim_sigma: index out of range");
    require(eta >= 0.0, ErrorKind::range, "ddim_sigma: eta must be >= 0");
    double ab_prev = s.alpha_bar(tau_prev);
    double ab_cur = s.alpha_bar(tau_cur);
    return eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab_cur)) * std::sqrt(1.0 - ab_cur / ab_prev);
}

// Jump-step subsequence tau_1..tau_S, S = T_ddim, evenly spaced over [1, t0]
// with exact endpoints. Rounding is half-up; collisions bump forward.
struct StepPlan {
    std::vector<int> taus;
    int t0 = 0;

    int steps() const { return static_cast<int>(taus.size()); }
};

inline StepPlan build_step_plan(int T_ddim, int t0, int T) {
    require(T_ddim >= 2, ErrorKind::range, "build_step_plan: T_ddim must be >= 2");
    require(t0 >= 1 && t0 <= T, ErrorKind::range, "build_step_plan: t0 out of range");
    require(T_ddim <= t0, ErrorKind::infeasible_plan,
            "build_step_plan: T_ddim exceeds t0, no strictly increasing plan exists");
    StepPlan plan;
    plan.t0 = t0;
    plan.taus.resize(static_cast<size_t>(T_ddim));
    for (int i = 0; i < T_ddim; ++i) {
        double x = 1.0 + (static_cast<double>(t0) - 1.0) * static_cast<double>(i) /
                             (static_cast<double>(T_ddim) - 1.0);
        plan.taus[static_cast<size_t>(i)] = static_cast<int>(std::floor(x + 0.5));
    }
    plan.taus.front() = 1;
    plan.taus.back() = t0;
    for (int i = 1; i < T_ddim; ++i)
        if (plan.taus[static_cast<size_t>(i)] <= plan.taus[static_cast<size_t>(i - 1)])
            plan.taus[static_cast<size_t>(i)] = plan.taus[static_cast<size_t>(i - 1)] + 1;
    require(plan.taus.back() == t0, ErrorKind::infeasible_plan,
            "build_step_plan: collision bumping overran t0");
    return plan;
}

}  // namespace diffedit

#endif  // DIFFEDIT_SCHEDULE_HPP
