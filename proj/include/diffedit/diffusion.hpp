#ifndef DIFFEDIT_DIFFUSION_HPP
#define DIFFEDIT_DIFFUSION_HPP

#include <utility>
#include <vector>

#include "diffedit/denoiser.hpp"
#include "diffedit/rng.hpp"
#include "diffedit/schedule.hpp"

namespace diffedit {

// unconditional guidance scale and the conditioning label
struct GuidanceSpec {
    double gamma = 1.0;
    MaybeLabel y;
};

// (1-gamma) * eps_uncond + gamma * eps_cond
inline Tensor cfg_mix(const Tensor& eps_uncond, const Tensor& eps_cond, double gamma) {
    require(same_shape(eps_uncond, eps_cond), ErrorKind::invalid_shape, "cfg_mix: shape mismatch");
    Tensor out = scaled(eps_uncond, 1.0 - gamma);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += gamma * eps_cond.data[i];
    return out;
}

// Classifier-free mixing of the score estimates. gamma == 1 collapses to the
// conditional branch and the null branch is never evaluated.
inline Tensor cfg_eps(const DenoiserParams& p, const Tensor& z_t, int t, const GuidanceSpec& g) {
    require(g.y.has_value(), ErrorKind::guidance, "cfg_eps: guidance label must not be null");
    require(std::isfinite(g.gamma), ErrorKind::guidance, "cfg_eps: gamma must be finite");
    Tensor cond = predict_eps(p, z_t, t, g.y);
    if (g.gamma == 1.0) return cond;
    return cfg_mix(predict_eps(p, z_t, t, MaybeLabel{}), cond, g.gamma);
}

// z_t = sqrt(ab_t) z_0 + sqrt(1-ab_t) eps; returns the drawn eps as well
inline std::pair<Tensor, Tensor> forward_noise(const Tensor& z0, int t, const NoiseSchedule& s,
                                               RngStream& rng) {
    require(t >= 1 && t <= s.T, ErrorKind::range, "forward_noise: t out of range");
    Tensor eps = gaussian(rng, z0.shape);
    double ab = s.alpha_bar(t);
    double c0 = std::sqrt(ab), c1 = std::sqrt(1.0 - ab);
    Tensor z_t = z0;
    for (size_t i = 0; i < z_t.data.size(); ++i) z_t.data[i] = c0 * z0.data[i] + c1 * eps.data[i];
    return {std::move(z_t), std::move(eps)};
}

// one-shot denoised prediction: (z_t - sqrt(1-ab_t) eps_hat) / sqrt(ab_t)
inline Tensor f_theta_from_eps(const Tensor& z_t, const Tensor& eps_hat, int t,
                               const NoiseSchedule& s) {
    require(t >= 0 && t <= s.T, ErrorKind::range, "f_theta: t out of range");
    double ab = s.alpha_bar(t);
    double c = std::sqrt(1.0 - ab), inv = 1.0 / std::sqrt(ab);
    Tensor f = z_t;
    for (size_t i = 0; i < f.data.size(); ++i) f.data[i] = (z_t.data[i] - c * eps_hat.data[i]) * inv;
    return f;
}

inline Tensor f_theta(const DenoiserParams& p, const Tensor& z_t, int t, MaybeLabel y,
                      const NoiseSchedule& s) {
    require(t >= 1 && t <= s.T, ErrorKind::range, "f_theta: t out of range");
    return f_theta_from_eps(z_t, predict_eps(p, z_t, t, y), t, s);
}

// One ancestral step, Eq.-3 style. sigma_1 is exactly zero because
// alpha_bar(0) == 1, so no noise enters the final state.
inline Tensor ddpm_step(const DenoiserParams& p, const Tensor& z_t, int t, MaybeLabel y,
                        const NoiseSchedule& s, RngStream& rng) {
    require(t >= 1 && t <= s.T, ErrorKind::range, "ddpm_step: t out of range");
    Tensor eps_hat = predict_eps(p, z_t, t, y);
    double a = s.alpha(t), ab = s.alpha_bar(t), ab_prev = s.alpha_bar(t - 1);
    double mean_c = 1.0 / std::sqrt(a);
    double eps_c = (1.0 - a) / std::sqrt(1.0 - ab);
    double sigma = std::sqrt((1.0 - ab_prev) / (1.0 - ab) * s.beta(t));
    Tensor out = z_t;
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = mean_c * (z_t.data[i] - eps_c * eps_hat.data[i]);
    if (sigma > 0.0) {
        Tensor noise = gaussian(rng, z_t.shape);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += sigma * noise.data[i];
    }
    return out;
}

// Jump step given a precomputed eps_hat. tau_prev may be 0 (clean state).
inline Tensor ddim_step_from_eps(const Tensor& z_cur, const Tensor& eps_hat, int tau_cur,
                                 int tau_prev, double eta, const NoiseSchedule& s,
                                 RngStream* rng) {
    require(tau_prev < tau_cur, ErrorKind::ordering, "ddim_step: tau_prev must be < tau_cur");
    require(tau_cur <= s.T && tau_prev >= 0, ErrorKind::range, "ddim_step: index out of range");
    double sigma = ddim_sigma(s, tau_prev, tau_cur, eta);
    double ab_prev = s.alpha_bar(tau_prev);
    require(sigma * sigma <= 1.0 - ab_prev + 1e-15, ErrorKind::range,
            "ddim_step: sigma^2 exceeds 1 - alpha_bar(tau_prev)");
    Tensor f = f_theta_from_eps(z_cur, eps_hat, tau_cur, s);
    double c0 = std::sqrt(ab_prev);
    double c1 = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
    Tensor out = z_cur;
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = c0 * f.data[i] + c1 * eps_hat.data[i];
    if (sigma > 0.0) {
        require(rng != nullptr, ErrorKind::contract, "ddim_step: eta > 0 needs an rng stream");
        Tensor noise = gaussian(*rng, z_cur.shape);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += sigma * noise.data[i];
    }
    return out;
}

inline Tensor ddim_step(const DenoiserParams& p, const Tensor& z_cur, int tau_cur, int tau_prev,
                        MaybeLabel y, double eta, const NoiseSchedule& s, RngStream& rng) {
    return ddim_step_from_eps(z_cur, predict_eps(p, z_cur, tau_cur, y), tau_cur, tau_prev, eta, s,
                              &rng);
}

// ordered (t, z_t) pairs actually visited along a plan, plus the conditioning
// that produced them; ascending for inversion, descending for generation
struct Trajectory {
    struct Point {
        int t;
        Tensor z;
    };
    std::vector<Point> points;
    StepPlan plan;
    double eta = 0.0;
    double gamma = 1.0;
    MaybeLabel y;
    bool ascending = true;
};

// Deterministic forward DDIM (eta = 0 by definition): walks the plan upward
// from the clean latent to z_{t0}, conditioning every eps on y_src. The
// first step leaves the clean state, where alpha_bar(0) == 1 makes the
// denoised prediction the latent itself; the network time index is clamped
// to tau_1.
inline std::pair<Tensor, Trajectory> ddim_invert(const DenoiserParams& p, const Tensor& z0,
                                                 MaybeLabel y_src, const StepPlan& plan,
                                                 const NoiseSchedule& s, double gamma = 1.0) {
    GuidanceSpec g{gamma, y_src};
    Trajectory traj;
    traj.plan = plan;
    traj.eta = 0.0;
    traj.gamma = gamma;
    traj.y = y_src;
    traj.ascending = true;

    Tensor z = z0;
    int t_from = 0;
    for (int tau : plan.taus) {
        int t_eval = std::max(t_from, 1);
        Tensor eps = (gamma == 1.0 && !y_src.has_value())
                         ? predict_eps(p, z, t_eval, MaybeLabel{})
                         : cfg_eps(p, z, t_eval, g);
        Tensor f = f_theta_from_eps(z, eps, t_from, s);  // t_from = 0 gives f = z
        double ab_to = s.alpha_bar(tau);
        double c0 = std::sqrt(ab_to), c1 = std::sqrt(1.0 - ab_to);
        for (size_t i = 0; i < z.data.size(); ++i) z.data[i] = c0 * f.data[i] + c1 * eps.data[i];
        traj.points.push_back({tau, z});
        t_from = tau;
    }
    return {std::move(z), std::move(traj)};
}

// Reverse DDIM along the descending plan, conditioned on y_trg. The final
// step lands on t = 0 through alpha_bar(0) == 1, i.e. returns the denoised
// prediction of the last visited state. rng is only touched when eta > 0.
inline std::pair<Tensor, Trajectory> ddim_generate(const DenoiserParams& p, const Tensor& z_t0,
                                                   MaybeLabel y_trg, const StepPlan& plan,
                                                   const NoiseSchedule& s, double gamma,
                                                   double eta, RngStream& rng) {
    GuidanceSpec g{gamma, y_trg};
    Trajectory traj;
    traj.plan = plan;
    traj.eta = eta;
    traj.gamma = gamma;
    traj.y = y_trg;
    traj.ascending = false;

    Tensor z = z_t0;
    traj.points.push_back({plan.taus.back(), z});
    for (int k = static_cast<int>(plan.taus.size()) - 1; k >= 0; --k) {
        int t_cur = plan.taus[static_cast<size_t>(k)];
        int t_prev = (k == 0) ? 0 : plan.taus[static_cast<size_t>(k - 1)];
        Tensor eps = (gamma == 1.0 && !y_trg.has_value())
                         ? predict_eps(p, z, t_cur, MaybeLabel{})
                         : cfg_eps(p, z, t_cur, g);
        z = ddim_step_from_eps(z, eps, t_cur, t_prev, eta, s, &rng);
        if (t_prev > 0) traj.points.push_back({t_prev, z});
    }
    return {std::move(z), std::move(traj)};
}

// Max absolute discrepancy of the exact ODE rewrite of the eta = 0 step:
// y_{t'} - y_t == (p_{t'} - p_t) eps_hat with y_t = z_t / sqrt(ab_t) and
// p_t = sqrt(1/ab_t - 1). Re-evaluates eps_hat at the state the sampler
// evaluated it at, with the trajectory's recorded conditioning.
inline double ode_residual_check(const DenoiserParams& p, const Trajectory& traj,
                                 const NoiseSchedule& s) {
    require(traj.eta == 0.0, ErrorKind::contract,
            "ode_residual_check: trajectory must be deterministic (eta = 0)");
    GuidanceSpec g{traj.gamma, traj.y};
    double worst = 0.0;
    for (size_t k = 0; k + 1 < traj.points.size(); ++k) {
        // in both directions the model was evaluated at the k-th visited state
        const Trajectory::Point& a = traj.points[k];
        const Trajectory::Point& b = traj.points[k + 1];
        Tensor eps = (g.gamma == 1.0 && !g.y.has_value())
                         ? predict_eps(p, a.z, a.t, MaybeLabel{})
                         : cfg_eps(p, a.z, a.t, g);
        double ab_a = s.alpha_bar(a.t), ab_b = s.alpha_bar(b.t);
        double ya = 1.0 / std::sqrt(ab_a), yb = 1.0 / std::sqrt(ab_b);
        double pa = std::sqrt(1.0 / ab_a - 1.0), pb = std::sqrt(1.0 / ab_b - 1.0);
        for (size_t i = 0; i < a.z.data.size(); ++i) {
            double lhs = yb * b.z.data[i] - ya * a.z.data[i];
            double rhs = (pb - pa) * eps.data[i];
            worst = std::max(worst, std::fabs(lhs - rhs));
        }
    }
    return worst;
}

// Taped eta = 0 reverse chain used by guided finetuning: gradients flow from
// the produced latent back into the denoiser parameters through every step.
inline Var ddim_generate_on(Tape& tape, const DenoiserParams& p, const DenoiserVars& v, Var z_t0,
                            MaybeLabel y_trg, const StepPlan& plan, const NoiseSchedule& s,
                            double gamma) {
    const Tensor& zv = tape.value(z_t0);
    require(zv.ndim() == 2 && zv.shape[1] == p.input_dim, ErrorKind::invalid_shape,
            "ddim_generate_on: latent batch must be [B,input_dim]");
    int64_t B = zv.shape[0];
    std::vector<MaybeLabel> ys(static_cast<size_t>(B), y_trg);
    std::vector<MaybeLabel> nulls(static_cast<size_t>(B), MaybeLabel{});

    Var z = z_t0;
    for (int k = static_cast<int>(plan.taus.size()) - 1; k >= 0; --k) {
        int t_cur = plan.taus[static_cast<size_t>(k)];
        int t_prev = (k == 0) ? 0 : plan.taus[static_cast<size_t>(k - 1)];
        std::vector<int> ts(static_cast<size_t>(B), t_cur);
        Var eps = predict_eps_on(tape, p, v, z, ts, ys);
        if (gamma != 1.0) {
            Var eps_null = predict_eps_on(tape, p, v, z, ts, nulls);
            eps = tape.add(tape.scale(eps_null, 1.0 - gamma), tape.scale(eps, gamma));
        }
        double ab_cur = s.alpha_bar(t_cur), ab_prev = s.alpha_bar(t_prev);
        double inv = 1.0 / std::sqrt(ab_cur);
        Var f = tape.scale(tape.sub(z, tape.scale(eps, std::sqrt(1.0 - ab_cur))), inv);
        z = tape.add(tape.scale(f, std::sqrt(ab_prev)), tape.scale(eps, std::sqrt(1.0 - ab_prev)));
    }
    return z;
}

}  // namespace diffedit

#endif  // DIFFEDIT_DIFFUSION_HPP
