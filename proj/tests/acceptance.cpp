// Acceptance suite: one pass/fail line per criterion, pinned tolerances,
// per-criterion runtime budgets. Exit code is the number of failures.
#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "diffedit/checkpoint.hpp"
#include "diffedit/editing.hpp"
#include "diffedit/guidance.hpp"
#include "testutil.hpp"

using namespace diffedit;

namespace {

struct Report {
    int failures = 0;

    void run(int id, const std::string& name, double budget_s,
             const std::function<bool(std::string&)>& body) {
        auto t0 = std::chrono::steady_clock::now();
        std::string detail;
        bool ok = false;
        try {
            ok = body(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
            ok = false;
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (budget_s > 0 && secs > budget_s) {
            ok = false;
            detail += (detail.empty() ? "" : "; ") + std::string("runtime budget exceeded");
        }
        std::printf("[%s] criterion %d: %s (%.1f s)%s%s\n", ok ? "PASS" : "FAIL", id, name.c_str(),
                    secs, detail.empty() ? "" : " -- ", detail.c_str());
        std::fflush(stdout);
        if (!ok) ++failures;
    }
};

struct World {
    ToyDataset train, test;
    NoiseSchedule sched;
    EmotionOracle oracle;
    IdentityEmbedder embedder;
    FirstStageParams fs;
    DenoiserParams denoiser;
};

World build_world() {
    auto t0 = std::chrono::steady_clock::now();
    World w;
    w.train = make_toy_dataset(200, 16, RngStream(42, 1));
    w.test = make_toy_dataset(34, 16, RngStream(42, 2));
    w.sched = linear_schedule(100, 1e-3, 0.2);
    w.oracle = train_emotion_oracle(w.train, OracleTrainConfig{}, RngStream(42, 3));
    w.embedder = train_identity_embedder(w.train, OracleTrainConfig{}, RngStream(42, 4));
    w.fs = FirstStageParams::identity();
    w.denoiser = DenoiserParams::init(256, kNumEmotions, 256, 3, RngStream(42, 5));
    Tensor lat({static_cast<int64_t>(w.train.size()), 256});
    for (size_t i = 0; i < w.train.size(); ++i)
        for (int k = 0; k < 256; ++k)
            lat.at(static_cast<int64_t>(i), k) = w.train.images[i].data[static_cast<size_t>(k)];
    TrainConfig tc;
    tc.epochs = 90;
    std::vector<double> curve = run_ldm_training(w.denoiser, lat, w.train.labels, w.sched, tc,
                                                 RngStream(42, 6));
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("# shared setup: dataset + evaluators + denoiser (loss %.3f -> %.3f) in %.1f s\n",
                curve.front(), curve.back(), secs);
    std::fflush(stdout);
    return w;
}

// ---- criterion bodies ----------------------------------------------------------

bool criterion1(std::string& detail) {
    // (a) training loss on a width-8 network
    DenoiserParams p = DenoiserParams::init(3, 2, 8, 1, RngStream(77, 0));
    RngStream rng(41, 0);
    for (double& v : p.out_proj.w.data) v = rng.next_uniform_in(-0.3, 0.3);
    NoiseSchedule sched = linear_schedule(10, 1e-2, 0.2);
    Tensor z0 = uniform(rng, {4, 3}, -1.0, 1.0);
    Tensor eps = gaussian(rng, {4, 3});
    std::vector<int> ts{1, 4, 7, 10};
    std::vector<MaybeLabel> ys{MaybeLabel{0}, MaybeLabel{}, MaybeLabel{1}, MaybeLabel{0}};
    ParamList plist = p.named_params();
    std::vector<Tensor*> raw;
    for (auto& np : plist) raw.push_back(np.tensor);
    auto loss_a = [&]() {
        Tape tape(false);
        DenoiserVars v = bind(tape, p);
        return tape.scalar_value(ldm_loss_on(tape, p, v, z0, ts, ys, eps, sched));
    };
    auto grads_a = [&]() {
        Tape tape;
        DenoiserVars v = bind(tape, p, true);
        Var loss = ldm_loss_on(tape, p, v, z0, ts, ys, eps, sched);
        tape.backward(loss);
        return collect_grads(tape, v.all());
    };
    double err_a = testutil::gradcheck(loss_a, grads_a, raw);

    // (b) finetuning loss through a 2-step chain on a width-4 network
    RngStream wrng(61, 0);
    EmotionOracle oracle;
    oracle.net = FeatureNet::init(16, 8, 6, kNumEmotions, wrng.split(1));
    oracle.prototypes = Tensor({kNumEmotions, 6});
    for (int c = 0; c < kNumEmotions; ++c) {
        Tensor row = gaussian(wrng, {6});
        double n = norm2(row);
        for (int j = 0; j < 6; ++j) oracle.prototypes.at(c, j) = row[j] / n;
    }
    IdentityEmbedder embedder;
    embedder.net = FeatureNet::init(16, 8, 5, kIdentityDims, wrng.split(2));
    DenoiserParams dn = DenoiserParams::init(16, kNumEmotions, 4, 1, wrng.split(3));
    for (double& v : dn.out_proj.w.data) v = wrng.next_uniform_in(-0.3, 0.3);
    FirstStageParams fs = FirstStageParams::identity();
    NoiseSchedule tiny_sched = linear_schedule(10, 0.01, 0.2);
    StepPlan plan = build_step_plan(2, 6, tiny_sched.T);
    Tensor z_t0 = uniform(wrng, {2, 16}, -1.0, 1.0);
    Tensor x_src = uniform(wrng, {2, 16}, 0.0, 1.0);
    std::vector<int> src_labels{0, 2};
    FinetuneConfig fcfg;
    fcfg.gamma = 2.0;  // exercises the guidance mixing inside the chain
    ParamList plist_b = dn.named_params();
    std::vector<Tensor*> raw_b;
    for (auto& np : plist_b) raw_b.push_back(np.tensor);
    auto loss_b = [&]() {
        Tape tape(false);
        DenoiserVars dnv = bind(tape, dn);
        FirstStageVars fsv = bind(tape, fs);
        return tape.scalar_value(finetune_loss_on(tape, dn, dnv, fs, fsv, oracle, embedder, z_t0,
                                                  x_src, src_labels, 1, plan, tiny_sched, fcfg, 4,
                                                  4));
    };
    auto grads_b = [&]() {
        Tape tape;
        DenoiserVars dnv = bind(tape, dn, true);
        FirstStageVars fsv = bind(tape, fs);
        Var loss = finetune_loss_on(tape, dn, dnv, fs, fsv, oracle, embedder, z_t0, x_src,
                                    src_labels, 1, plan, tiny_sched, fcfg, 4, 4);
        tape.backward(loss);
        return collect_grads(tape, dnv.all());
    };
    double err_b = testutil::gradcheck(loss_b, grads_b, raw_b);

    char buf[128];
    std::snprintf(buf, sizeof(buf), "training rel err %.2e (tol 1e-4), chain rel err %.2e (tol 1e-3)",
                  err_a, err_b);
    detail = buf;
    return err_a < 1e-4 && err_b < 1e-3;
}

bool criterion2(std::string& detail) {
    DenoiserParams p = DenoiserParams::init(4, 2, 8, 1, RngStream(88, 0));
    RngStream irng(88, 1);
    for (double& v : p.out_proj.w.data) v = 0.3 * irng.next_gaussian();
    NoiseSchedule sched = linear_schedule(100, 1e-3, 0.2);
    const int n = 100000;
    double worst_sigma_gap = 0.0, worst_band_ratio = 0.0;
    for (int t : {20, 55, 90}) {
        double sigma_ddim = ddim_sigma(sched, t - 1, t, 1.0);
        double sigma_ddpm =
            std::sqrt((1.0 - sched.alpha_bar(t - 1)) / (1.0 - sched.alpha_bar(t)) * sched.beta(t));
        worst_sigma_gap = std::max(worst_sigma_gap, std::fabs(sigma_ddim - sigma_ddpm));

        Tensor z = gaussian(irng, {4});
        Tensor eps_hat = predict_eps(p, z, t, 0);
        double a = sched.alpha(t), ab = sched.alpha_bar(t);
        Tensor mean_true = z;
        for (int64_t i = 0; i < 4; ++i)
            mean_true[i] = (z[i] - (1.0 - a) / std::sqrt(1.0 - ab) * eps_hat[i]) / std::sqrt(a);

        RngStream r1(90, static_cast<uint64_t>(t)), r2(91, static_cast<uint64_t>(t));
        Tensor s1({4}), q1({4}), s2({4}), q2({4});
        for (int i = 0; i < n; ++i) {
            Tensor x1 = ddim_step(p, z, t, t - 1, 0, 1.0, sched, r1);
            Tensor x2 = ddpm_step(p, z, t, 0, sched, r2);
            for (int64_t j = 0; j < 4; ++j) {
                s1[j] += x1[j];
                q1[j] += x1[j] * x1[j];
                s2[j] += x2[j];
                q2[j] += x2[j] * x2[j];
            }
        }
        // two-sample comparison: the difference of two independent estimators
        // carries sqrt(2) times the single-run Monte Carlo sd
        double mean_band = 3.0 * sigma_ddpm * std::sqrt(2.0 / static_cast<double>(n));
        double var_band = 3.0 * sigma_ddpm * sigma_ddpm * 2.0 / std::sqrt(n - 1.0);
        for (int64_t j = 0; j < 4; ++j) {
            double m1 = s1[j] / n, v1 = q1[j] / n - m1 * m1;
            double m2 = s2[j] / n, v2 = q2[j] / n - m2 * m2;
            worst_band_ratio = std::max(worst_band_ratio, std::fabs(m1 - m2) / mean_band);
            worst_band_ratio = std::max(worst_band_ratio, std::fabs(v1 - v2) / var_band);
            // both samplers must also share the analytic deterministic part
            worst_band_ratio = std::max(
                worst_band_ratio, std::fabs(m1 - mean_true[j]) / (mean_band * std::sqrt(2.0)));
            worst_band_ratio = std::max(
                worst_band_ratio, std::fabs(m2 - mean_true[j]) / (mean_band * std::sqrt(2.0)));
        }
    }
    char buf[128];
    std::snprintf(buf, sizeof(buf), "sigma identity gap %.1e, worst moment at %.2f of the 3-sigma band",
                  worst_sigma_gap, worst_band_ratio);
    detail = buf;
    return worst_sigma_gap < 1e-12 && worst_band_ratio < 1.0;
}

bool criterion3(const World& w, std::string& detail) {
    // bit-identical edits across seeds and thread counts
    EditConfig cfg;
    cfg.T_ddim = 20;
    cfg.t0 = 50;
    cfg.gamma = 3.0;
    cfg.eta = 0.0;
    cfg.y_src = w.test.labels[0];
    cfg.y_trg = (cfg.y_src + 3) % kNumEmotions;
    EditResult e1 = edit(w.fs, w.denoiser, w.test.images[0], cfg, w.sched, RngStream(5, 5));
    EditResult e2 = edit(w.fs, w.denoiser, w.test.images[0], cfg, w.sched, RngStream(777, 99));
    if (e1.x_gen.data != e2.x_gen.data) {
        detail = "edit output depends on the seed at eta = 0";
        return false;
    }
    std::vector<size_t> items{0, 1, 2, 3, 4, 5, 6, 7};
    GridCell cell{50, 3.0, 20};
    MetricsRow m1 = edit_cell(w.fs, w.denoiser, w.test, items, cfg.y_trg, cell, 0.0, -1.0,
                              w.oracle, w.embedder, w.sched, RngStream(6, 6), 1);
    MetricsRow m4 = edit_cell(w.fs, w.denoiser, w.test, items, cfg.y_trg, cell, 0.0, -1.0,
                              w.oracle, w.embedder, w.sched, RngStream(6, 6), 4);
    if (m1.psnr_db != m4.psnr_db || m1.accuracy != m4.accuracy) {
        detail = "edit_cell result depends on the thread count";
        return false;
    }

    // matched-label cycle errors non-increasing across plan refinement
    int t0 = 80;
    std::vector<double> errs;
    for (int steps : {10, 20, 40, 80}) {
        StepPlan plan = build_step_plan(steps, t0, w.sched.T);
        double err = 0.0;
        for (size_t i = 0; i < 100; ++i) {
            const Tensor& img = w.test.images[i];
            Tensor z0 = reshaped(encode(w.fs, img), {256});
            auto [z_t0, ti] = ddim_invert(w.denoiser, z0, w.test.labels[i], plan, w.sched, 1.0);
            RngStream gr(0, 0);
            auto [z_rec, tg] =
                ddim_generate(w.denoiser, z_t0, w.test.labels[i], plan, w.sched, 1.0, 0.0, gr);
            err += rel_l2_error(z_rec, z0);
        }
        errs.push_back(err / 100.0);
    }
    bool mono = true;
    for (size_t i = 1; i < errs.size(); ++i) mono = mono && errs[i] <= errs[i - 1];
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "cycle err by T_ddim {10,20,40,80}: %.4f %.4f %.4f %.4f%s", errs[0], errs[1],
                  errs[2], errs[3], mono ? "" : " (not monotone)");
    detail = buf;
    return mono;
}

bool criterion4(const World& w, std::string& detail) {
    double worst = 0.0;
    for (size_t i = 0; i < 5; ++i) {
        Tensor z0 = reshaped(encode(w.fs, w.test.images[i]), {256});
        StepPlan plan = build_step_plan(20, 60, w.sched.T);
        auto [z_t0, inv] = ddim_invert(w.denoiser, z0, w.test.labels[i], plan, w.sched, 3.0);
        worst = std::max(worst, ode_residual_check(w.denoiser, inv, w.sched));
        RngStream gr(0, 0);
        auto [z_gen, gen] = ddim_generate(w.denoiser, z_t0, (w.test.labels[i] + 2) % kNumEmotions,
                                          plan, w.sched, 3.0, 0.0, gr);
        worst = std::max(worst, ode_residual_check(w.denoiser, gen, w.sched));
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "max residual %.2e (tol 1e-10)", worst);
    detail = buf;
    return worst < 1e-10;
}

bool criterion5(const World& w, std::string& detail) {
    const std::vector<int> t0s{40, 50, 60};
    const std::vector<double> gammas{1.0, 2.0, 3.0, 4.0, 5.0};
    // per-target curves for monotonicity, aggregated cells for psnr/argmax
    double acc[kNumEmotions][3][5];
    double agg_acc[3][5] = {};
    double agg_psnr[3][5] = {};
    int64_t cell_n[3][5] = {};

    for (int y_trg = 0; y_trg < kNumEmotions; ++y_trg) {
        std::vector<size_t> items;
        for (size_t i = 0; i < w.test.size(); ++i)
            if (w.test.labels[i] != y_trg) items.push_back(i);
        for (size_t ti = 0; ti < t0s.size(); ++ti) {
            for (size_t gi = 0; gi < gammas.size(); ++gi) {
                MetricsRow row = edit_cell(w.fs, w.denoiser, w.test, items, y_trg,
                                           GridCell{t0s[ti], gammas[gi], 20}, 0.0, -1.0, w.oracle,
                                           w.embedder, w.sched, RngStream(9, 9));
                acc[y_trg][ti][gi] = row.accuracy;
                agg_acc[ti][gi] += row.accuracy * static_cast<double>(items.size());
                agg_psnr[ti][gi] += row.psnr_db * static_cast<double>(items.size());
                cell_n[ti][gi] += static_cast<int64_t>(items.size());
            }
        }
    }
    for (int ti = 0; ti < 3; ++ti)
        for (int gi = 0; gi < 5; ++gi) {
            agg_acc[ti][gi] /= static_cast<double>(cell_n[ti][gi]);
            agg_psnr[ti][gi] /= static_cast<double>(cell_n[ti][gi]);
        }

    // (i) accuracy non-decreasing in gamma at fixed t0, per target
    int mono_ok = 0, mono_total = 0;
    for (int y = 0; y < kNumEmotions; ++y)
        for (int ti = 0; ti < 3; ++ti)
            for (int gi = 1; gi < 5; ++gi) {
                ++mono_total;
                if (acc[y][ti][gi] >= acc[y][ti][gi - 1]) ++mono_ok;
            }
    bool pass_i = mono_ok >= static_cast<int>(0.9 * mono_total);

    // (ii) aggregated psnr strictly decreasing in t0 at fixed gamma
    bool pass_ii = true;
    for (int gi = 0; gi < 5; ++gi)
        pass_ii = pass_ii && agg_psnr[0][gi] > agg_psnr[1][gi] && agg_psnr[1][gi] > agg_psnr[2][gi];

    // (iii) the (gamma=5, t0=60) cell achieves the highest aggregated accuracy
    double best = -1.0;
    for (int ti = 0; ti < 3; ++ti)
        for (int gi = 0; gi < 5; ++gi) best = std::max(best, agg_acc[ti][gi]);
    bool pass_iii = agg_acc[2][4] >= best;

    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "monotone pairs %d/%d (need %d), psnr-in-t0 %s, top cell acc %.3f at "
                  "(5,60) vs best %.3f",
                  mono_ok, mono_total, static_cast<int>(0.9 * mono_total),
                  pass_ii ? "strict" : "violated", agg_acc[2][4], best);
    detail = buf;
    return pass_i && pass_ii && pass_iii;
}

bool criterion6(const World& w, std::string& detail) {
    FinetuneConfig base_cfg;
    base_cfg.gamma = 1.0;
    base_cfg.t0 = 50;
    base_cfg.T_ddim_invert = 20;
    base_cfg.learning_rate = 2.5e-4;
    LatentStore store = precompute_latents(w.denoiser, w.fs, w.train, base_cfg.t0,
                                           base_cfg.T_ddim_invert, base_cfg.gamma, w.sched,
                                           base_cfg.precompute_per_class, "acceptance");

    auto eval_model = [&](const DenoiserParams& dn, int y_trg) {
        std::vector<size_t> items;
        for (size_t i = 0; i < w.test.size(); ++i)
            if (w.test.labels[i] != y_trg) items.push_back(i);
        MetricsRow row = edit_cell(w.fs, dn, w.test, items, y_trg, GridCell{50, 1.0, 20}, 0.0,
                                   -1.0, w.oracle, w.embedder, w.sched, RngStream(10, 10));
        return std::pair<double, double>(row.accuracy, row.psnr_db);
    };

    std::vector<std::pair<double, double>> base_scores;
    for (int y = 0; y < kNumEmotions; ++y) base_scores.push_back(eval_model(w.denoiser, y));

    bool pass = true;
    std::string summary;
    std::vector<double> mean_acc_by_lambda;
    for (double ld : {1.0, 2.0, 3.0}) {
        int wins = 0;
        bool psnr_ok = true;
        double mean_acc = 0.0;
        for (int y = 0; y < kNumEmotions; ++y) {
            FinetuneConfig cfg = base_cfg;
            cfg.lambda_dir = ld;
            FinetuneResult tuned = finetune(w.denoiser, store, w.train, y, w.oracle, w.embedder,
                                            w.fs, w.sched, cfg,
                                            RngStream(11, static_cast<uint64_t>(y)));
            auto [acc_t, psnr_t] = eval_model(tuned.params, y);
            mean_acc += acc_t / kNumEmotions;
            if (acc_t > base_scores[static_cast<size_t>(y)].first) ++wins;
            if (psnr_t < 0.8 * base_scores[static_cast<size_t>(y)].second) psnr_ok = false;
        }
        mean_acc_by_lambda.push_back(mean_acc);
        char buf[96];
        std::snprintf(buf, sizeof(buf), "ld=%.0f wins %d/7 acc %.3f psnr %s; ", ld, wins, mean_acc,
                      psnr_ok ? "within 20%" : "dropped >20%");
        summary += buf;
        pass = pass && wins >= 5 && psnr_ok;
    }
    // mean accuracy grows with the directional weight across the endpoints
    bool lambda_trend = mean_acc_by_lambda.back() > mean_acc_by_lambda.front();
    summary += lambda_trend ? "lambda trend up" : "lambda trend VIOLATED";
    detail = summary;
    return pass && lambda_trend;
}

bool criterion7(const World& w, std::string& detail) {
    RngStream rng(12, 12);
    std::vector<double> cross;
    for (int i = 0; i < 300; ++i) {
        Tensor a = uniform(rng, {kIdentityDims}, -1.0, 1.0);
        Tensor b = uniform(rng, {kIdentityDims}, -1.0, 1.0);
        int e1 = static_cast<int>(rng.next_below(kNumEmotions));
        int e2 = static_cast<int>(rng.next_below(kNumEmotions));
        cross.push_back(
            csim_toy(w.embedder, render_face({a, e1}, 16), render_face({b, e2}, 16)));
    }
    std::sort(cross.begin(), cross.end());
    double median = cross[cross.size() / 2];

    int above = 0;
    const int total = 200;
    for (int i = 0; i < total; ++i) {
        size_t item = static_cast<size_t>(i) % w.test.size();
        EditConfig cfg;
        cfg.T_ddim = 20;
        cfg.t0 = 50;
        cfg.gamma = 3.0;
        cfg.eta = 0.0;
        cfg.y_src = w.test.labels[item];
        cfg.y_trg = (cfg.y_src + 1 + i % (kNumEmotions - 1)) % kNumEmotions;
        EditResult r = edit(w.fs, w.denoiser, w.test.images[item], cfg, w.sched,
                            RngStream(13, static_cast<uint64_t>(i)));
        if (csim_toy(w.embedder, r.x_gen, w.test.images[item]) > median) ++above;
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%d/%d edited triples above the cross-identity median %.3f",
                  above, total, median);
    detail = buf;
    return above >= static_cast<int>(0.9 * total);
}

bool criterion8(std::string& detail) {
    Tensor x({4, 4});
    Tensor y = x;
    for (double& v : y.data) v = 0.1;  // MSE exactly 0.01
    bool psnr_ok = std::fabs(psnr(x, y, 1.0) - 20.0) < 1e-9;
    RngStream rng(14, 14);
    Tensor img = render_face({uniform(rng, {kIdentityDims}, -1.0, 1.0), 2}, 16);
    bool ssim_ok = ssim(img, img) == 1.0;
    Tensor v = gaussian(rng, {8});
    bool cos_ok = std::fabs(cosine_similarity(v, v) - 1.0) < 1e-12;
    Tensor probe = cfg_mix(Tensor({1}, {0.0}), Tensor({1}, {1.0}), 3.0);
    bool cfg_ok = probe[0] == 3.0;
    detail = std::string("psnr20 ") + (psnr_ok ? "ok" : "BAD") + ", ssim1 " +
             (ssim_ok ? "ok" : "BAD") + ", cos1 " + (cos_ok ? "ok" : "BAD") + ", cfg3 " +
             (cfg_ok ? "ok" : "BAD");
    return psnr_ok && ssim_ok && cos_ok && cfg_ok;
}

bool criterion9(const World& w, std::string& detail) {
    // identity mode is exact
    RngStream rng(15, 15);
    Tensor probe = uniform(rng, {16, 16}, 0.0, 1.0);
    FirstStageParams ident = FirstStageParams::identity();
    if (decode(ident, encode(ident, probe)).data != probe.data) {
        detail = "identity mode not exact";
        return false;
    }

    FirstStageParams vq =
        FirstStageParams::init(FirstStageMode::vq_ae, 4, 3, 24, 64, RngStream(16, 0));
    FirstStageTrainConfig cfg;
    cfg.epochs = 120;
    train_first_stage(vq, w.train.images, cfg, RngStream(16, 1));
    double l1 = 0.0;
    std::vector<int64_t> counts(64, 0);
    for (const Tensor& img : w.train.images) {
        Tensor z = encode(vq, img);
        l1 += mean_abs_diff(decode(vq, z), img);
        QuantizeResult q = quantize(vq.codebook, reshaped(z, {16, 3}));
        for (int idx : q.indices) counts[static_cast<size_t>(idx)]++;
    }
    l1 /= static_cast<double>(w.train.size());
    int used = 0;
    for (int64_t c : counts)
        if (c > 0) ++used;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "identity exact, vq l1 %.4f (tol 0.05), codebook usage %d/64",
                  l1, used);
    detail = buf;
    return l1 < 0.05 && used >= 16;
}

}  // namespace

int main() {
    std::printf("# acceptance suite, toy grid T=100, seed 42\n");
    World w = build_world();
    Report report;
    report.run(1, "gradient correctness vs central finite differences", 10.0, criterion1);
    report.run(2, "ddpm/ddim per-step moment equivalence at eta 1", 60.0, criterion2);
    report.run(3, "determinism and inversion cycle trend", 120.0,
               [&](std::string& d) { return criterion3(w, d); });
    report.run(4, "ode rewrite residual on deterministic trajectories", 0.0,
               [&](std::string& d) { return criterion4(w, d); });
    report.run(5, "ablation grid trend reproduction", 1200.0,
               [&](std::string& d) { return criterion5(w, d); });
    report.run(6, "guided finetuning trade-off", 1800.0,
               [&](std::string& d) { return criterion6(w, d); });
    report.run(7, "identity preservation of edits", 0.0,
               [&](std::string& d) { return criterion7(w, d); });
    report.run(8, "metric unit probes", 0.0, criterion8);
    report.run(9, "first-stage round trip", 0.0,
               [&](std::string& d) { return criterion9(w, d); });
    if (report.failures == 0)
        std::printf("# all acceptance criteria passed\n");
    else
        std::printf("# %d acceptance criteria FAILED\n", report.failures);
    return report.failures;
}
