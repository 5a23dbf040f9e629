#ifndef DIFFEDIT_GUIDANCE_HPP
#define DIFFEDIT_GUIDANCE_HPP

#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "diffedit/diffusion.hpp"
#include "diffedit/first_stage.hpp"
#include "diffedit/toyworld.hpp"

namespace diffedit {

// Pluggable embedding surface standing in for the CLIP image/text encoders:
// unit-norm image embeddings and unit-norm class prototype vectors.
struct EmbedderOracle {
    std::function<Tensor(const Tensor&)> image_embed;
    std::function<Tensor(int)> class_embed;
};

inline EmbedderOracle make_embedder_oracle(const EmotionOracle& o) {
    return {[&o](const Tensor& img) { return o.image_embed(img); },
            [&o](int label) { return o.class_embed(label); }};
}

inline EmbedderOracle make_embedder_oracle(const IdentityEmbedder& e) {
    return {[&e](const Tensor& img) { return e.embed(img); }, {}};
}

// 1 - cos between the image-embedding difference and the class-prototype
// difference. A direction with norm below 1e-12 gets the defined fallback
// loss of 1 (the orthogonal value) and sets *flagged.
inline double directional_loss(const EmbedderOracle& oracle, const Tensor& x_gen,
                               const Tensor& x_src, int y_trg, int y_src,
                               bool* flagged = nullptr) {
    if (flagged) *flagged = false;
    Tensor d_img = axpy(oracle.image_embed(x_gen), -1.0, oracle.image_embed(x_src));
    Tensor d_cls = axpy(oracle.class_embed(y_trg), -1.0, oracle.class_embed(y_src));
    if (norm2(d_img) < 1e-12 || norm2(d_cls) < 1e-12) {
        if (flagged) *flagged = true;
        return 1.0;
    }
    return 1.0 - cosine_similarity(d_img, d_cls);
}

// 1 - cosine similarity of identity embeddings, in [0,2]
inline double identity_loss(const EmbedderOracle& embedder, const Tensor& x_gen,
                            const Tensor& x_src, bool* flagged = nullptr) {
    if (flagged) *flagged = false;
    try {
        return 1.0 - cosine_similarity(embedder.image_embed(x_gen), embedder.image_embed(x_src));
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::degenerate) throw;
        if (flagged) *flagged = true;
        return 1.0;
    }
}

struct FinetuneConfig {
    double lambda_dir = 2.0;
    double lambda_id = 1.0;
    double lambda_l2 = 1.0;
    int T_tune = 6;
    int t0 = 50;
    int T_ddim_invert = 20;  // plan used when precomputing latents
    double gamma = 1.0;
    int epochs = 20;
    double learning_rate = 2.5e-4;
    int batch_size = 4;
    int precompute_per_class = 50;
    int subsample = 100;
    double grad_clip = 5.0;  // global-norm clip; the recursive chain drifts without it
};

inline double total_loss(double dir, double id, double l2, const FinetuneConfig& cfg) {
    require(cfg.lambda_dir >= 0.0 && cfg.lambda_id >= 0.0 && cfg.lambda_l2 >= 0.0,
            ErrorKind::range, "total_loss: lambdas must be >= 0");
    return cfg.lambda_dir * dir + cfg.lambda_id * id + cfg.lambda_l2 * l2;
}

// ---- precomputed latent store -------------------------------------------------

// image-id -> z_{t0} map produced by deterministic inversion, keyed by the
// inversion settings that made it
struct LatentStore {
    int t0 = 0;
    int T_ddim = 0;
    double gamma = 1.0;
    std::string config_hash;
    std::vector<int64_t> ids;
    std::vector<int> src_labels;
    std::vector<Tensor> latents;  // flattened z_{t0}

    size_t size() const { return latents.size(); }
};

// Deterministic forward DDIM (eta = 0) for the first `per_class` items of
// each class, conditioned on each item's own source label.
inline LatentStore precompute_latents(const DenoiserParams& dn, const FirstStageParams& fs,
                                      const ToyDataset& ds, int t0, int T_ddim, double gamma,
                                      const NoiseSchedule& sched, int per_class,
                                      const std::string& config_hash) {
    LatentStore store;
    store.t0 = t0;
    store.T_ddim = T_ddim;
    store.gamma = gamma;
    store.config_hash = config_hash;
    StepPlan plan = build_step_plan(T_ddim, t0, sched.T);
    std::vector<int> taken(kNumEmotions, 0);
    for (size_t i = 0; i < ds.size(); ++i) {
        int label = ds.labels[i];
        if (taken[static_cast<size_t>(label)] >= per_class) continue;
        taken[static_cast<size_t>(label)]++;
        Tensor z0 = encode(fs, ds.images[i]);
        Tensor z0_flat = reshaped(z0, {z0.numel()});
        auto [z_t0, traj] = ddim_invert(dn, z0_flat, label, plan, sched, gamma);
        store.ids.push_back(static_cast<int64_t>(i));
        store.src_labels.push_back(label);
        store.latents.push_back(std::move(z_t0));
    }
    return store;
}

inline void save_latent_store(const LatentStore& store, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::io, "save_latent_store: cannot open " + path);
    int64_t dim = store.latents.empty() ? 0 : store.latents[0].numel();
    char gamma_buf[64];
    std::snprintf(gamma_buf, sizeof(gamma_buf), "%.17g", store.gamma);
    f << "diffedit-latent-store v1\n"
      << "config_hash " << store.config_hash << "\n"
      << "t0 " << store.t0 << "\n"
      << "t_ddim " << store.T_ddim << "\n"
      << "gamma " << gamma_buf << "\n"
      << "count " << store.size() << "\n"
      << "dim " << dim << "\n";
    for (size_t i = 0; i < store.size(); ++i)
        f << store.ids[i] << " " << store.src_labels[i] << "\n";
    f << "blob\n";
    for (const Tensor& z : store.latents)
        f.write(reinterpret_cast<const char*>(z.data.data()),
                static_cast<std::streamsize>(z.data.size() * sizeof(double)));
    require(f.good(), ErrorKind::io, "save_latent_store: write failed");
}

// Loading against a different key (t0, T_ddim, gamma, config hash) is a
// staleness error: the caller must re-run precomputation.
inline LatentStore load_latent_store(const std::string& path, int t0, int T_ddim, double gamma,
                                     const std::string& config_hash) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::io, "load_latent_store: cannot open " + path);
    std::string magic, version;
    f >> magic >> version;
    require(magic == "diffedit-latent-store" && version == "v1", ErrorKind::io,
            "load_latent_store: bad header");
    LatentStore store;
    std::string key;
    int64_t count = 0, dim = 0;
    f >> key >> store.config_hash;
    f >> key >> store.t0;
    f >> key >> store.T_ddim;
    f >> key >> store.gamma;
    f >> key >> count;
    f >> key >> dim;
    require(store.t0 == t0 && store.T_ddim == T_ddim && store.gamma == gamma &&
                store.config_hash == config_hash,
            ErrorKind::staleness,
            "load_latent_store: stored key does not match the requested configuration");
    store.ids.resize(static_cast<size_t>(count));
    store.src_labels.resize(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i)
        f >> store.ids[static_cast<size_t>(i)] >> store.src_labels[static_cast<size_t>(i)];
    f >> key;
    require(key == "blob", ErrorKind::io, "load_latent_store: missing blob marker");
    f.get();
    for (int64_t i = 0; i < count; ++i) {
        Tensor z({dim});
        f.read(reinterpret_cast<char*>(z.data.data()),
               static_cast<std::streamsize>(z.data.size() * sizeof(double)));
        store.latents.push_back(std::move(z));
    }
    require(f.good(), ErrorKind::io, "load_latent_store: truncated blob");
    return store;
}

// ---- finetuning ---------------------------------------------------------------

// Composite objective on a batch: lambda_dir * L_dir + lambda_id * L_id +
// lambda_l2 * per-pixel MSE, with the generated images produced by the taped
// T_tune-step DDIM chain so gradients reach the denoiser parameters through
// every sampling step. Degenerate directions contribute the fallback loss 1
// with no gradient (row mask).
inline Var finetune_loss_on(Tape& tape, const DenoiserParams& dn, const DenoiserVars& dnv,
                            const FirstStageParams& fs, const FirstStageVars& fsv,
                            const EmotionOracle& oracle, const IdentityEmbedder& id_emb,
                            const Tensor& z_t0_rows, const Tensor& x_src_rows,
                            const std::vector<int>& src_labels, int y_trg, const StepPlan& plan,
                            const NoiseSchedule& sched, const FinetuneConfig& cfg, int64_t H,
                            int64_t W, int* flagged_out = nullptr) {
    int64_t B = z_t0_rows.shape[0];
    Var z_hat = ddim_generate_on(tape, dn, dnv, tape.leaf_ref(&z_t0_rows), y_trg, plan, sched,
                                 cfg.gamma);
    Var x_gen = decode_on(tape, fs, fsv, z_hat, H, W);
    Var x_src = tape.leaf_ref(&x_src_rows);

    // directional term
    FeatureNetVars ov = bind(tape, oracle.net);
    Var emb_gen = unit_features_on(tape, oracle.net, ov, x_gen);
    Tensor emb_src({B, oracle.net.feat_dim});
    Tensor d_cls({B, oracle.net.feat_dim});
    Tensor cls_norm({B});
    Tensor mask({B});
    int flagged = 0;
    for (int64_t i = 0; i < B; ++i) {
        Tensor row_img({H * W});
        for (int64_t j = 0; j < H * W; ++j) row_img[j] = x_src_rows.at(i, j);
        Tensor es = oracle.image_embed(reshaped(row_img, {H, W}));
        Tensor dc = axpy(oracle.class_embed(y_trg), -1.0,
                         oracle.class_embed(src_labels[static_cast<size_t>(i)]));
        for (int64_t j = 0; j < oracle.net.feat_dim; ++j) {
            emb_src.at(i, j) = es[j];
            d_cls.at(i, j) = dc[j];
        }
        cls_norm[i] = norm2(dc);
        mask[i] = 1.0;
        if (cls_norm[i] < 1e-12) {
            // degenerate class direction (same source and target label): the
            // row is masked out, and its inputs are replaced by a safe unit
            // vector so no NaN can leak through the masked product
            mask[i] = 0.0;
            ++flagged;
            d_cls.at(i, 0) = 1.0;
            cls_norm[i] = 1.0;
        }
    }
    Var d_img = tape.sub(emb_gen, tape.constant(std::move(emb_src)));
    {
        const Tensor& dv = tape.value(d_img);
        for (int64_t i = 0; i < B; ++i) {
            double n2 = 0.0;
            for (int64_t j = 0; j < dv.shape[1]; ++j) n2 += dv.at(i, j) * dv.at(i, j);
            if (mask[i] > 0.5 && n2 < 1e-24) {
                mask[i] = 0.0;
                ++flagged;
            }
        }
    }
    if (flagged_out) *flagged_out = flagged;
    Var num = tape.row_dot(d_img, tape.constant(std::move(d_cls)));
    Var den = tape.mul(tape.sqrt_(tape.add_const(tape.row_dot(d_img, d_img), 1e-24)),
                       tape.constant(cls_norm));
    Var cos_rows = tape.div(num, den);
    Var dir_rows = tape.sub(tape.constant(full({B}, 1.0)),
                            tape.mul(tape.constant(std::move(mask)), cos_rows));
    Var dir_term = tape.mean(dir_rows);

    // identity term: both embeddings unit-norm, cos is a plain row dot
    FeatureNetVars iv = bind(tape, id_emb.net);
    Var id_gen = unit_features_on(tape, id_emb.net, iv, x_gen);
    Tensor id_src({B, id_emb.net.feat_dim});
    for (int64_t i = 0; i < B; ++i) {
        Tensor row_img({H * W});
        for (int64_t j = 0; j < H * W; ++j) row_img[j] = x_src_rows.at(i, j);
        Tensor e = id_emb.embed(reshaped(row_img, {H, W}));
        for (int64_t j = 0; j < id_emb.net.feat_dim; ++j) id_src.at(i, j) = e[j];
    }
    Var id_cos = tape.row_dot(id_gen, tape.constant(std::move(id_src)));
    Var id_term = tape.mean(tape.sub(tape.constant(full({B}, 1.0)), id_cos));

    // pixel term: per-pixel MSE
    Var l2_term = tape.mean(tape.square(tape.sub(x_gen, x_src)));

    return tape.add(tape.scale(dir_term, cfg.lambda_dir),
                    tape.add(tape.scale(id_term, cfg.lambda_id), tape.scale(l2_term, cfg.lambda_l2)));
}

struct FinetuneResult {
    DenoiserParams params;
    std::vector<double> epoch_losses;
    int flagged_samples = 0;
};

// One tuned copy per target label; the base checkpoint is left untouched.
// Each step regenerates from stored z_{t0} with T_tune DDIM steps, decodes,
// and backpropagates the composite loss through the whole chain.
inline FinetuneResult finetune(const DenoiserParams& base, const LatentStore& store,
                               const ToyDataset& ds, int y_trg, const EmotionOracle& oracle,
                               const IdentityEmbedder& id_emb, const FirstStageParams& fs,
                               const NoiseSchedule& sched, const FinetuneConfig& cfg,
                               RngStream rng) {
    require(store.size() > 0, ErrorKind::contract, "finetune: latent store is empty");
    require(y_trg >= 0 && y_trg < kNumEmotions, ErrorKind::label, "finetune: bad target label");
    require(cfg.T_tune >= 2, ErrorKind::range, "finetune: T_tune must be >= 2");

    FinetuneResult result;
    result.params = base;  // tuned copy
    StepPlan plan = build_step_plan(cfg.T_tune, cfg.t0, sched.T);
    AdamWOptimizer opt(cfg.learning_rate);

    int64_t H = ds.image_size, W = ds.image_size;
    int64_t D = store.latents[0].numel();

    std::vector<size_t> pool(store.size());
    for (size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    for (size_t i = pool.size(); i > 1; --i)
        std::swap(pool[i - 1], pool[static_cast<size_t>(rng.next_below(i))]);
    size_t use_n = std::min(pool.size(), static_cast<size_t>(cfg.subsample));

    ParamList plist = result.params.named_params();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        int64_t seen = 0;
        for (size_t start = 0; start < use_n; start += static_cast<size_t>(cfg.batch_size)) {
            size_t stop = std::min(use_n, start + static_cast<size_t>(cfg.batch_size));
            int64_t B = static_cast<int64_t>(stop - start);
            Tensor zb({B, D});
            Tensor xb({B, H * W});
            std::vector<int> src_labels;
            for (int64_t b = 0; b < B; ++b) {
                size_t item = pool[start + static_cast<size_t>(b)];
                const Tensor& z = store.latents[item];
                const Tensor& img = ds.images[static_cast<size_t>(store.ids[item])];
                for (int64_t j = 0; j < D; ++j) zb.at(b, j) = z[j];
                for (int64_t j = 0; j < H * W; ++j) xb.at(b, j) = img.data[static_cast<size_t>(j)];
                src_labels.push_back(store.src_labels[item]);
            }
            Tape tape;
            DenoiserVars dnv = bind(tape, result.params, true);
            FirstStageVars fsv = bind(tape, fs, false);
            int flagged = 0;
            Var loss = finetune_loss_on(tape, result.params, dnv, fs, fsv, oracle, id_emb, zb, xb,
                                        src_labels, y_trg, plan, sched, cfg, H, W, &flagged);
            result.flagged_samples += flagged;
            double lv = tape.scalar_value(loss);
            require(std::isfinite(lv), ErrorKind::numeric, "finetune: non-finite loss, aborting");
            epoch_loss += lv * static_cast<double>(B);
            seen += B;
            tape.backward(loss);
            std::vector<Tensor> grads = collect_grads(tape, dnv.all());
            if (cfg.grad_clip > 0.0) {
                double norm2_sum = 0.0;
                for (const Tensor& g : grads)
                    for (double x : g.data) norm2_sum += x * x;
                double norm = std::sqrt(norm2_sum);
                if (norm > cfg.grad_clip) {
                    double s = cfg.grad_clip / norm;
                    for (Tensor& g : grads)
                        for (double& x : g.data) x *= s;
                }
            }
            opt.step(plist, grads);
            require(params_finite(plist), ErrorKind::numeric,
                    "finetune: parameters became non-finite");
        }
        result.epoch_losses.push_back(epoch_loss / static_cast<double>(seen));
    }
    return result;
}

}  // namespace diffedit

#endif  // DIFFEDIT_GUIDANCE_HPP
