#ifndef DIFFEDIT_EDITING_HPP
#define DIFFEDIT_EDITING_HPP

#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include "diffedit/diffusion.hpp"
#include "diffedit/first_stage.hpp"
#include "diffedit/toyworld.hpp"
#include "diffedit/util.hpp"

namespace diffedit {

// Full hyperparameter state of one translation. The inversion branch is
// always deterministic (eta = 0 by definition); eta applies to the
// regeneration branch. gamma_invert < 0 means "use gamma on both branches".
struct EditConfig {
    int T_ddim = 20;
    int t0 = 50;
    double eta = 0.0;
    double gamma = 3.0;
    int y_src = 0;
    int y_trg = 0;
    double gamma_invert = -1.0;

    double invert_gamma() const { return gamma_invert < 0.0 ? gamma : gamma_invert; }

    void validate(int T) const {
        require(t0 <= T, ErrorKind::config, "edit: t0 exceeds the diffusion horizon T");
        require(T_ddim >= 2 && T_ddim <= t0, ErrorKind::config,
                "edit: need 2 <= T_ddim <= t0");
        require(eta >= 0.0, ErrorKind::config, "edit: eta must be >= 0");
        require(y_src >= 0 && y_src < kNumEmotions && y_trg >= 0 && y_trg < kNumEmotions,
                ErrorKind::label, "edit: label out of range");
    }
};

struct EditResult {
    Tensor x_gen;        // clamped to the [0,1] image range
    Tensor x_roundtrip;  // regeneration under y_src: the self-audit reconstruction
    Trajectory invert_traj;
    Trajectory generate_traj;
};

inline void clamp_image(Tensor& img) {
    for (double& v : img.data) v = std::min(1.0, std::max(0.0, v));
}

// encode -> conditional DDIM inversion to t0 -> conditional regeneration
// toward y_trg -> decode. Pure for eta = 0 (the rng is never touched).
inline EditResult edit(const FirstStageParams& fs, const DenoiserParams& dn, const Tensor& image,
                       const EditConfig& cfg, const NoiseSchedule& sched, RngStream rng) {
    cfg.validate(sched.T);
    StepPlan plan = build_step_plan(cfg.T_ddim, cfg.t0, sched.T);

    Tensor z0 = encode(fs, image);
    std::vector<int64_t> latent_shape = z0.shape;
    Tensor z0_flat = reshaped(z0, {z0.numel()});

    EditResult r;
    auto [z_t0, inv_traj] = ddim_invert(dn, z0_flat, cfg.y_src, plan, sched, cfg.invert_gamma());
    r.invert_traj = std::move(inv_traj);

    RngStream gen_rng = rng.split(1);
    auto [z_hat, gen_traj] =
        ddim_generate(dn, z_t0, cfg.y_trg, plan, sched, cfg.gamma, cfg.eta, gen_rng);
    r.generate_traj = std::move(gen_traj);
    r.x_gen = decode(fs, reshaped(z_hat, latent_shape));
    clamp_image(r.x_gen);

    RngStream rt_rng = rng.split(2);
    auto [z_rt, rt_traj] =
        ddim_generate(dn, z_t0, cfg.y_src, plan, sched, cfg.gamma, cfg.eta, rt_rng);
    r.x_roundtrip = decode(fs, reshaped(z_rt, latent_shape));
    clamp_image(r.x_roundtrip);
    return r;
}

struct MetricsRow {
    int t0 = 0;
    double gamma = 0.0;
    int T_ddim = 0;
    int y_src = -1;  // -1 marks a mixed-source aggregate
    int y_trg = 0;
    double accuracy = 0.0;
    double psnr_db = 0.0;
    double ssim_val = 0.0;
    double csim_val = 0.0;
};

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows,
                              const std::string& comment = "") {
    std::ofstream f(path);
    require(f.good(), ErrorKind::io, "write_metrics_csv: cannot open " + path);
    if (!comment.empty()) f << "# " << comment << "\n";
    f << "t0,gamma,T_ddim,y_src,y_trg,accuracy,psnr,ssim,csim\n";
    for (const MetricsRow& r : rows)
        f << r.t0 << "," << csv_double(r.gamma) << "," << r.T_ddim << "," << r.y_src << ","
          << r.y_trg << "," << csv_double(r.accuracy) << "," << csv_double(r.psnr_db) << ","
          << csv_double(r.ssim_val) << "," << csv_double(r.csim_val) << "\n";
    require(f.good(), ErrorKind::io, "write_metrics_csv: write failed");
}

struct GridCell {
    int t0;
    double gamma;
    int T_ddim;
};

// One aggregate MetricsRow per grid cell: every selected image is translated
// toward y_trg and scored with the frozen evaluators. Items run in parallel
// with split rng streams; the result is independent of the thread count.
inline MetricsRow edit_cell(const FirstStageParams& fs, const DenoiserParams& dn,
                            const ToyDataset& ds, const std::vector<size_t>& items, int y_trg,
                            const GridCell& cell, double eta, double gamma_invert,
                            const EmotionOracle& oracle, const IdentityEmbedder& id_emb,
                            const NoiseSchedule& sched, RngStream rng, int threads = 0) {
    require(!items.empty(), ErrorKind::contract, "edit_cell: empty dataset slice");
    std::vector<double> psnrs(items.size()), ssims(items.size()), csims(items.size());
    std::vector<int> hits(items.size());
    parallel_for(
        static_cast<int64_t>(items.size()),
        [&](int64_t i) {
            size_t item = items[static_cast<size_t>(i)];
            EditConfig cfg;
            cfg.T_ddim = cell.T_ddim;
            cfg.t0 = cell.t0;
            cfg.gamma = cell.gamma;
            cfg.gamma_invert = gamma_invert;
            cfg.eta = eta;
            cfg.y_src = ds.labels[item];
            cfg.y_trg = y_trg;
            EditResult r = edit(fs, dn, ds.images[item], cfg, sched, rng.split(static_cast<uint64_t>(item)));
            const Tensor& src = ds.images[item];
            hits[static_cast<size_t>(i)] = oracle.predict(r.x_gen) == y_trg ? 1 : 0;
            psnrs[static_cast<size_t>(i)] = psnr(r.x_gen, src, 1.0);
            ssims[static_cast<size_t>(i)] = ssim(r.x_gen, src);
            csims[static_cast<size_t>(i)] = csim_toy(id_emb, r.x_gen, src);
        },
        threads);

    MetricsRow row;
    row.t0 = cell.t0;
    row.gamma = cell.gamma;
    row.T_ddim = cell.T_ddim;
    row.y_trg = y_trg;
    double n = static_cast<double>(items.size());
    for (size_t i = 0; i < items.size(); ++i) {
        row.accuracy += hits[i];
        row.psnr_db += psnrs[i];
        row.ssim_val += ssims[i];
        row.csim_val += csims[i];
    }
    row.accuracy /= n;
    row.psnr_db /= n;
    row.ssim_val /= n;
    row.csim_val /= n;
    return row;
}

inline std::vector<MetricsRow> edit_batch(const FirstStageParams& fs, const DenoiserParams& dn,
                                          const ToyDataset& ds, const std::vector<size_t>& items,
                                          int y_trg, const std::vector<GridCell>& grid, double eta,
                                          double gamma_invert, const EmotionOracle& oracle,
                                          const IdentityEmbedder& id_emb,
                                          const NoiseSchedule& sched, RngStream rng,
                                          int threads = 0) {
    require(!grid.empty(), ErrorKind::contract, "edit_batch: empty grid");
    require(!items.empty(), ErrorKind::contract, "edit_batch: empty dataset slice");
    std::vector<MetricsRow> rows;
    for (size_t c = 0; c < grid.size(); ++c)
        rows.push_back(edit_cell(fs, dn, ds, items, y_trg, grid[c], eta, gamma_invert, oracle,
                                 id_emb, sched, rng.split(1000 + c), threads));
    return rows;
}

// (t, ||z||) rows, or full per-coordinate values with coords=true
inline void write_trajectory_csv(const Trajectory& traj, const std::string& path,
                                 bool coords = false) {
    std::ofstream f(path);
    require(f.good(), ErrorKind::io, "write_trajectory_csv: cannot open " + path);
    if (coords) {
        f << "t";
        int64_t d = traj.points.empty() ? 0 : traj.points[0].z.numel();
        for (int64_t j = 0; j < d; ++j) f << ",z" << j;
        f << "\n";
        for (const auto& pt : traj.points) {
            f << pt.t;
            for (double v : pt.z.data) f << "," << csv_double(v);
            f << "\n";
        }
    } else {
        f << "t,norm\n";
        for (const auto& pt : traj.points) f << pt.t << "," << csv_double(norm2(pt.z)) << "\n";
    }
    require(f.good(), ErrorKind::io, "write_trajectory_csv: write failed");
}

}  // namespace diffedit

#endif  // DIFFEDIT_EDITING_HPP
