#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "diffedit/checkpoint.hpp"
#include "diffedit/editing.hpp"
#include "diffedit/guidance.hpp"
#include "testutil.hpp"

using namespace diffedit;

namespace {

// hand-built evaluators over a 4x4 pixel world; random but frozen weights
struct TinyWorld {
    EmotionOracle oracle;
    IdentityEmbedder embedder;
    DenoiserParams denoiser;
    FirstStageParams fs;
    NoiseSchedule sched;

    TinyWorld() {
        RngStream rng(61, 0);
        oracle.net = FeatureNet::init(16, 8, 6, kNumEmotions, rng.split(1));
        oracle.prototypes = Tensor({kNumEmotions, 6});
        for (int c = 0; c < kNumEmotions; ++c) {
            Tensor row = gaussian(rng, {6});
            double n = norm2(row);
            for (int j = 0; j < 6; ++j) oracle.prototypes.at(c, j) = row[j] / n;
        }
        embedder.net = FeatureNet::init(16, 8, 5, kIdentityDims, rng.split(2));
        denoiser = DenoiserParams::init(16, kNumEmotions, 8, 1, rng.split(3));
        // non-zero head so every parameter sees gradient
        for (double& v : denoiser.out_proj.w.data) v = rng.next_uniform_in(-0.3, 0.3);
        fs = FirstStageParams::identity();
        sched = linear_schedule(10, 0.01, 0.2);
    }
};

const ToyDataset& face_train() {
    static ToyDataset ds = make_toy_dataset(150, 16, RngStream(62, 1));
    return ds;
}

const EmotionOracle& face_oracle() {
    static EmotionOracle o = train_emotion_oracle(face_train(), OracleTrainConfig{}, RngStream(62, 3));
    return o;
}

const IdentityEmbedder& face_embedder() {
    static IdentityEmbedder e =
        train_identity_embedder(face_train(), OracleTrainConfig{}, RngStream(62, 4));
    return e;
}

const DenoiserParams& face_denoiser() {
    static DenoiserParams dn = [] {
        DenoiserParams p = DenoiserParams::init(256, kNumEmotions, 128, 2, RngStream(62, 5));
        NoiseSchedule sched = linear_schedule(100, 1e-3, 0.2);
        const ToyDataset& ds = face_train();
        Tensor lat({static_cast<int64_t>(ds.size()), 256});
        for (size_t i = 0; i < ds.size(); ++i)
            for (int k = 0; k < 256; ++k)
                lat.at(static_cast<int64_t>(i), k) = ds.images[i].data[static_cast<size_t>(k)];
        TrainConfig tc;
        tc.epochs = 30;
        run_ldm_training(p, lat, ds.labels, sched, tc, RngStream(62, 6));
        return p;
    }();
    return dn;
}

}  // namespace

TEST_CASE("directional loss closed forms") {
    const TinyWorld w;
    EmbedderOracle oracle = make_embedder_oracle(w.oracle);
    // craft inputs whose embedding difference is parallel to the prototype
    // direction by probing two images and reusing the class pair that matches
    RngStream rng(1, 1);
    Tensor a = uniform(rng, {4, 4}, 0.0, 1.0);
    Tensor b = uniform(rng, {4, 4}, 0.0, 1.0);

    // parallel: compare the image direction with itself via a synthetic oracle
    EmbedderOracle synthetic;
    synthetic.image_embed = [&](const Tensor& img) { return oracle.image_embed(img); };
    synthetic.class_embed = [&](int label) {
        // class prototypes chosen so proto(1) - proto(0) equals the a->b
        // image direction (parallel case) and its negation for label 2
        Tensor d = axpy(oracle.image_embed(b), -1.0, oracle.image_embed(a));
        if (label == 0) return scaled(d, 0.0);
        if (label == 1) return d;
        return scaled(d, -1.0);
    };
    CHECK(directional_loss(synthetic, b, a, 1, 0) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(directional_loss(synthetic, b, a, 2, 0) == doctest::Approx(2.0).epsilon(1e-9));

    bool flagged = false;
    CHECK(directional_loss(oracle, a, a, 1, 0, &flagged) == 1.0);
    CHECK(flagged);
}

TEST_CASE("identity loss closed forms") {
    const TinyWorld w;
    EmbedderOracle emb = make_embedder_oracle(w.embedder);
    RngStream rng(2, 2);
    Tensor x = uniform(rng, {4, 4}, 0.0, 1.0);
    CHECK(identity_loss(emb, x, x) == doctest::Approx(0.0).epsilon(1e-12));

    EmbedderOracle orth;
    orth.image_embed = [](const Tensor& img) {
        // orthogonal unit embeddings keyed on the first pixel
        Tensor e({2});
        e[img.data[0] > 0.5 ? 0 : 1] = 1.0;
        return e;
    };
    Tensor hi = full({4, 4}, 0.9), lo = full({4, 4}, 0.1);
    CHECK(identity_loss(orth, hi, lo) == doctest::Approx(1.0));
}

TEST_CASE("identity loss separates same-identity from cross-identity pairs") {
    const IdentityEmbedder& e = face_embedder();
    EmbedderOracle emb = make_embedder_oracle(e);
    RngStream rng(3, 3);
    std::vector<double> same, cross;
    for (int i = 0; i < 60; ++i) {
        Tensor id = uniform(rng, {kIdentityDims}, -1.0, 1.0);
        Tensor other = uniform(rng, {kIdentityDims}, -1.0, 1.0);
        int e1 = static_cast<int>(rng.next_below(kNumEmotions));
        int e2 = (e1 + 1 + static_cast<int>(rng.next_below(kNumEmotions - 1))) % kNumEmotions;
        same.push_back(identity_loss(emb, render_face({id, e2}, 16), render_face({id, e1}, 16)));
        cross.push_back(identity_loss(emb, render_face({other, e1}, 16), render_face({id, e1}, 16)));
    }
    std::sort(cross.begin(), cross.end());
    double cross_median = cross[cross.size() / 2];
    int below = 0;
    for (double s : same)
        if (s < cross_median) ++below;
    CHECK(below >= 57);  // same-identity loss below the cross-identity median
}

TEST_CASE("total loss is the weighted sum with exact linearity") {
    FinetuneConfig cfg;
    cfg.lambda_dir = 0.0;
    cfg.lambda_id = 0.0;
    cfg.lambda_l2 = 0.0;
    CHECK(total_loss(0.7, 0.3, 0.9, cfg) == 0.0);
    cfg.lambda_dir = 2.0;
    cfg.lambda_id = 1.0;
    cfg.lambda_l2 = 1.0;
    CHECK(total_loss(0.5, 0.2, 0.1, cfg) == doctest::Approx(1.3));
    // linear in each coefficient
    FinetuneConfig doubled = cfg;
    doubled.lambda_dir = 4.0;
    CHECK(total_loss(0.5, 0.2, 0.1, doubled) - total_loss(0.5, 0.2, 0.1, cfg) ==
          doctest::Approx(2.0 * 0.5));
    cfg.lambda_id = -1.0;
    CHECK_THROWS_AS(total_loss(0.1, 0.1, 0.1, cfg), Error);
}

TEST_CASE("embedding oracle outputs are unit norm") {
    const EmotionOracle& o = face_oracle();
    EmbedderOracle emb = make_embedder_oracle(o);
    RngStream rng(4, 4);
    for (int i = 0; i < 4; ++i) {
        Tensor img = render_face({uniform(rng, {kIdentityDims}, -1.0, 1.0), i % kNumEmotions}, 16);
        CHECK(std::fabs(norm2(emb.image_embed(img)) - 1.0) < 1e-9);
    }
    for (int c = 0; c < kNumEmotions; ++c) CHECK(std::fabs(norm2(emb.class_embed(c)) - 1.0) < 1e-9);
}

TEST_CASE("precompute_latents is deterministic with one latent per image") {
    const TinyWorld w;
    ToyDataset ds;
    ds.image_size = 4;
    RngStream rng(5, 5);
    for (int c = 0; c < kNumEmotions; ++c)
        for (int i = 0; i < 3; ++i) {
            ds.specs.push_back({uniform(rng, {kIdentityDims}, -1.0, 1.0), c});
            ds.images.push_back(uniform(rng, {4, 4}, 0.0, 1.0));
            ds.labels.push_back(c);
        }
    LatentStore a = precompute_latents(w.denoiser, w.fs, ds, 6, 2, 1.0, w.sched, 2, "h1");
    LatentStore b = precompute_latents(w.denoiser, w.fs, ds, 6, 2, 1.0, w.sched, 2, "h1");
    REQUIRE(a.size() == 2 * kNumEmotions);  // per-class cap, one latent per image
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a.ids[i] == b.ids[i]);
        CHECK(a.latents[i].data == b.latents[i].data);  // bit-exact recompute
    }
}

TEST_CASE("latent store round-trips bit-exactly and rejects stale keys") {
    const TinyWorld w;
    ToyDataset ds;
    ds.image_size = 4;
    RngStream rng(6, 6);
    for (int c = 0; c < kNumEmotions; ++c) {
        ds.specs.push_back({uniform(rng, {kIdentityDims}, -1.0, 1.0), c});
        ds.images.push_back(uniform(rng, {4, 4}, 0.0, 1.0));
        ds.labels.push_back(c);
    }
    LatentStore store = precompute_latents(w.denoiser, w.fs, ds, 6, 2, 2.0, w.sched, 1, "cfg77");
    namespace sfs = std::filesystem;
    sfs::path dir = sfs::temp_directory_path() / "diffedit_test_guidance";
    sfs::create_directories(dir);
    std::string path = (dir / "latents.bin").string();
    save_latent_store(store, path);
    LatentStore loaded = load_latent_store(path, 6, 2, 2.0, "cfg77");
    REQUIRE(loaded.size() == store.size());
    for (size_t i = 0; i < store.size(); ++i) {
        CHECK(loaded.latents[i].data == store.latents[i].data);
        CHECK(loaded.src_labels[i] == store.src_labels[i]);
    }
    CHECK_THROWS_AS(load_latent_store(path, 6, 2, 3.0, "cfg77"), Error);   // gamma mismatch
    CHECK_THROWS_AS(load_latent_store(path, 6, 2, 2.0, "other"), Error);   // config mismatch
    sfs::remove_all(dir);
}

TEST_CASE("finetuning gradients through a 2-step chain match finite differences") {
    TinyWorld w;
    RngStream rng(7, 7);
    StepPlan plan = build_step_plan(2, 6, w.sched.T);
    Tensor z_t0 = uniform(rng, {2, 16}, -1.0, 1.0);
    Tensor x_src = uniform(rng, {2, 16}, 0.0, 1.0);
    std::vector<int> src_labels{0, 2};
    FinetuneConfig cfg;
    cfg.lambda_dir = 2.0;
    cfg.lambda_id = 1.0;
    cfg.lambda_l2 = 1.0;

    for (double gamma : {1.0, 2.0}) {
        cfg.gamma = gamma;
        ParamList plist = w.denoiser.named_params();
        std::vector<Tensor*> raw;
        for (auto& np : plist) raw.push_back(np.tensor);
        auto eval_loss = [&]() {
            Tape tape(false);
            DenoiserVars dnv = bind(tape, w.denoiser, false);
            FirstStageVars fsv = bind(tape, w.fs, false);
            return tape.scalar_value(finetune_loss_on(tape, w.denoiser, dnv, w.fs, fsv, w.oracle,
                                                      w.embedder, z_t0, x_src, src_labels, 1, plan,
                                                      w.sched, cfg, 4, 4));
        };
        auto eval_grads = [&]() {
            Tape tape;
            DenoiserVars dnv = bind(tape, w.denoiser, true);
            FirstStageVars fsv = bind(tape, w.fs, false);
            Var loss = finetune_loss_on(tape, w.denoiser, dnv, w.fs, fsv, w.oracle, w.embedder,
                                        z_t0, x_src, src_labels, 1, plan, w.sched, cfg, 4, 4);
            tape.backward(loss);
            return collect_grads(tape, dnv.all());
        };
        double worst = testutil::gradcheck(eval_loss, eval_grads, raw);
        CHECK(worst < 1e-3);
    }
}

TEST_CASE("finetune skips flagged samples and keeps the base checkpoint intact") {
    TinyWorld w;
    ToyDataset ds;
    ds.image_size = 4;
    RngStream rng(8, 8);
    for (int c = 0; c < kNumEmotions; ++c)
        for (int i = 0; i < 2; ++i) {
            ds.specs.push_back({uniform(rng, {kIdentityDims}, -1.0, 1.0), c});
            ds.images.push_back(uniform(rng, {4, 4}, 0.0, 1.0));
            ds.labels.push_back(c);
        }
    // the store includes target-class items, whose class direction is zero
    LatentStore store = precompute_latents(w.denoiser, w.fs, ds, 6, 2, 1.0, w.sched, 2, "k");

    namespace sfs = std::filesystem;
    sfs::path dir = sfs::temp_directory_path() / "diffedit_test_guidance2";
    sfs::create_directories(dir);
    std::string base_path = (dir / "base.ckpt").string();
    CheckpointMeta meta;
    meta.config_hash = "k";
    save_denoiser(base_path, w.denoiser, meta);
    std::string digest_before = file_digest(base_path);

    FinetuneConfig cfg;
    cfg.epochs = 2;
    cfg.subsample = 14;
    cfg.learning_rate = 1e-4;
    cfg.t0 = 6;
    cfg.T_tune = 3;
    FinetuneResult result =
        finetune(w.denoiser, store, ds, 3, w.oracle, w.embedder, w.fs, w.sched, cfg, RngStream(9, 9));
    CHECK(result.flagged_samples > 0);  // target-class items got the fallback
    CHECK(result.epoch_losses.size() == 2);
    for (double l : result.epoch_losses) CHECK(std::isfinite(l));

    CHECK(file_digest(base_path) == digest_before);  // base untouched

    // tuned checkpoints are keyed; a mismatched key fails loudly
    std::string tuned_path = (dir / "tuned.ckpt").string();
    CheckpointMeta tuned_meta;
    tuned_meta.config_hash = "k";
    tuned_meta.extra["y_trg"] = "3";
    tuned_meta.extra["gamma"] = format_double(cfg.gamma);
    tuned_meta.extra["lambda_dir"] = format_double(cfg.lambda_dir);
    save_denoiser(tuned_path, result.params, tuned_meta);
    CheckpointMeta loaded = read_checkpoint_meta(tuned_path);
    CHECK_NOTHROW(expect_meta(loaded, "y_trg", "3"));
    CHECK_THROWS_AS(expect_meta(loaded, "y_trg", "5"), Error);
    sfs::remove_all(dir);
}

TEST_CASE("reconstruction-only finetuning drifts less than a base target edit") {
    const DenoiserParams& base = face_denoiser();
    const ToyDataset& train = face_train();
    NoiseSchedule sched = linear_schedule(100, 1e-3, 0.2);
    FirstStageParams fs = FirstStageParams::identity();

    FinetuneConfig cfg;
    cfg.lambda_dir = 0.0;  // no directional pull
    cfg.lambda_id = 4.0;
    cfg.lambda_l2 = 4.0;
    cfg.gamma = 1.0;
    cfg.t0 = 50;
    cfg.epochs = 4;
    cfg.subsample = 40;
    cfg.learning_rate = 1e-4;
    LatentStore store = precompute_latents(base, fs, train, cfg.t0, cfg.T_ddim_invert, cfg.gamma,
                                           sched, 10, "reg");
    FinetuneResult tuned = finetune(base, store, train, 1, face_oracle(), face_embedder(), fs,
                                    sched, cfg, RngStream(10, 10));

    ToyDataset test = make_toy_dataset(6, 16, RngStream(63, 1));
    double tuned_identity_drift = 0.0, base_target_drift = 0.0;
    for (size_t i = 0; i < test.size(); ++i) {
        EditConfig ec;
        ec.T_ddim = 10;
        ec.t0 = 50;
        ec.gamma = 1.0;
        ec.y_src = test.labels[i];
        ec.y_trg = test.labels[i];
        EditResult r1 = edit(fs, tuned.params, test.images[i], ec, sched, RngStream(11, i));
        tuned_identity_drift += mean_abs_diff(r1.x_gen, test.images[i]);
        ec.y_trg = (test.labels[i] + 3) % kNumEmotions;
        EditResult r2 = edit(fs, base, test.images[i], ec, sched, RngStream(11, i));
        base_target_drift += mean_abs_diff(r2.x_gen, test.images[i]);
    }
    CHECK(tuned_identity_drift < base_target_drift);
}
