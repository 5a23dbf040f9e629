#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "diffedit/metrics.hpp"
#include "diffedit/toyworld.hpp"
#include "testutil.hpp"

using namespace diffedit;

namespace {

const ToyDataset& calibration_dataset() {
    static ToyDataset ds = make_toy_dataset(150, 16, RngStream(777, 0));
    return ds;
}

const EmotionOracle& oracle() {
    static EmotionOracle o =
        train_emotion_oracle(calibration_dataset(), OracleTrainConfig{}, RngStream(777, 1));
    return o;
}

const IdentityEmbedder& embedder() {
    static IdentityEmbedder e =
        train_identity_embedder(calibration_dataset(), OracleTrainConfig{}, RngStream(777, 2));
    return e;
}

}  // namespace

TEST_CASE("rendering is deterministic") {
    RngStream rng(1, 0);
    FaceSpec spec{uniform(rng, {kIdentityDims}, -1.0, 1.0), 4};
    Tensor a = render_face(spec, 16);
    Tensor b = render_face(spec, 16);
    CHECK(a.data == b.data);
}

TEST_CASE("render validation") {
    FaceSpec spec{Tensor({kIdentityDims}), 0};
    CHECK_THROWS_AS(render_face(spec, 4), Error);
    CHECK_THROWS_AS(render_face({Tensor({2}), 0}, 16), Error);
    CHECK_THROWS_AS(render_face({Tensor({kIdentityDims}), 9}, 16), Error);
}

TEST_CASE("emotion changes touch only the mouth and brow boxes") {
    RngStream rng(2, 0);
    Tensor mask = mouth_brow_mask(16);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor id = uniform(rng, {kIdentityDims}, -1.0, 1.0);
        int e1 = static_cast<int>(rng.next_below(7));
        int e2 = (e1 + 1 + static_cast<int>(rng.next_below(6))) % 7;
        Tensor a = render_face({id, e1}, 16);
        Tensor b = render_face({id, e2}, 16);
        double outside = 0.0, inside = 0.0;
        for (int64_t i = 0; i < a.numel(); ++i) {
            double d = std::fabs(a[i] - b[i]);
            if (mask[i] > 0.5)
                inside = std::max(inside, d);
            else
                outside = std::max(outside, d);
        }
        CHECK(outside == 0.0);
        CHECK(inside > 0.01);
    }
}

TEST_CASE("pixel range stays in [0,1] over a ten-thousand-spec sweep") {
    RngStream rng(3, 0);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 10000; ++i) {
        FaceSpec spec{uniform(rng, {kIdentityDims}, -1.0, 1.0), i % 7};
        Tensor img = render_face(spec, 16);
        for (double v : img.data) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    CHECK(lo >= 0.0);
    CHECK(hi <= 1.0);
}

TEST_CASE("rendering is smooth in the identity parameters") {
    RngStream rng(4, 0);
    Tensor id = uniform(rng, {kIdentityDims}, -0.9, 0.9);
    Tensor id2 = id;
    id2[0] += 0.01;
    Tensor a = render_face({id, 1}, 16);
    Tensor b = render_face({id2, 1}, 16);
    double worst = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
    CHECK(worst < 0.05);
    CHECK(worst > 0.0);
}

TEST_CASE("generator emits balanced classes") {
    ToyDataset ds = make_toy_dataset(12, 16, RngStream(5, 0));
    std::vector<int> counts(kNumEmotions, 0);
    for (int label : ds.labels) counts[static_cast<size_t>(label)]++;
    for (int c : counts) CHECK(c == 12);
    CHECK(ds.size() == 12 * kNumEmotions);
}

TEST_CASE("emotion oracle classifies clean renders of fresh specs") {
    const EmotionOracle& o = oracle();
    RngStream rng(6, 0);
    int hit = 0;
    const int n = 700;
    for (int i = 0; i < n; ++i) {
        FaceSpec spec{uniform(rng, {kIdentityDims}, -1.0, 1.0), i % 7};
        if (o.predict(render_face(spec, 16)) == spec.emotion) ++hit;
    }
    CHECK(static_cast<double>(hit) / n >= 0.98);
}

TEST_CASE("shuffled labels cannot pass the calibration gate") {
    ToyDataset ds = calibration_dataset();
    RngStream rng(7, 0);
    for (size_t i = ds.labels.size(); i > 1; --i)
        std::swap(ds.labels[i - 1], ds.labels[static_cast<size_t>(rng.next_below(i))]);
    OracleTrainConfig cfg;
    cfg.epochs = 10;  // no signal to find, keep it short
    CHECK_THROWS_AS(train_emotion_oracle(ds, cfg, RngStream(7, 1)), Error);
}

TEST_CASE("oracle embeddings are unit norm with unit-norm prototypes") {
    const EmotionOracle& o = oracle();
    RngStream rng(8, 0);
    for (int i = 0; i < 5; ++i) {
        FaceSpec spec{uniform(rng, {kIdentityDims}, -1.0, 1.0), i % 7};
        CHECK(std::fabs(norm2(o.image_embed(render_face(spec, 16))) - 1.0) < 1e-9);
    }
    for (int c = 0; c < kNumEmotions; ++c)
        CHECK(std::fabs(norm2(o.class_embed(c)) - 1.0) < 1e-9);
    CHECK_THROWS_AS(o.class_embed(9), Error);
    // prototypes of different classes point in different directions
    CHECK(cosine_similarity(o.class_embed(1), o.class_embed(2)) < 0.99);
}

TEST_CASE("identity embedder separates same-identity from cross-identity pairs") {
    const IdentityEmbedder& e = embedder();
    RngStream rng(9, 0);
    int wins = 0;
    const int n = 200;
    for (int i = 0; i < n; ++i) {
        Tensor id = uniform(rng, {kIdentityDims}, -1.0, 1.0);
        Tensor other = uniform(rng, {kIdentityDims}, -1.0, 1.0);
        int e1 = static_cast<int>(rng.next_below(7));
        int e2 = (e1 + 1 + static_cast<int>(rng.next_below(6))) % 7;
        double same = csim_toy(e, render_face({id, e1}, 16), render_face({id, e2}, 16));
        double cross = csim_toy(e, render_face({id, e1}, 16), render_face({other, e1}, 16));
        if (same > cross) ++wins;
    }
    CHECK(static_cast<double>(wins) / n >= 0.95);
}

TEST_CASE("csim of an image with itself is one") {
    RngStream rng(10, 0);
    Tensor img = render_face({uniform(rng, {kIdentityDims}, -1.0, 1.0), 3}, 16);
    CHECK(csim_toy(embedder(), img, img) == doctest::Approx(1.0));
}

TEST_CASE("random noise scores below the same-identity fifth percentile") {
    const IdentityEmbedder& e = embedder();
    RngStream rng(11, 0);
    std::vector<double> same_scores;
    for (int i = 0; i < 100; ++i) {
        Tensor id = uniform(rng, {kIdentityDims}, -1.0, 1.0);
        int e1 = static_cast<int>(rng.next_below(7));
        int e2 = (e1 + 1 + static_cast<int>(rng.next_below(6))) % 7;
        same_scores.push_back(
            csim_toy(e, render_face({id, e1}, 16), render_face({id, e2}, 16)));
    }
    std::sort(same_scores.begin(), same_scores.end());
    double p5 = same_scores[5];
    double worst_noise = -1.0;
    for (int i = 0; i < 20; ++i) {
        Tensor id = uniform(rng, {kIdentityDims}, -1.0, 1.0);
        Tensor noise = uniform(rng, {16, 16}, 0.0, 1.0);
        worst_noise = std::max(worst_noise, csim_toy(e, noise, render_face({id, 0}, 16)));
    }
    CHECK(worst_noise < p5);
}

TEST_CASE("psnr closed forms") {
    Tensor x({4, 4});
    Tensor y = x;
    CHECK(std::isinf(psnr(x, y, 1.0)));
    for (double& v : y.data) v = 0.1;
    CHECK(psnr(x, y, 1.0) == doctest::Approx(20.0).epsilon(1e-9));
    for (double& v : y.data) v = 0.01;
    CHECK(psnr(x, y, 1.0) == doctest::Approx(40.0).epsilon(1e-9));
    CHECK_THROWS_AS(psnr(x, Tensor({2, 2}), 1.0), Error);
}

TEST_CASE("ssim is exactly one on identical images") {
    RngStream rng(12, 0);
    for (int i = 0; i < 5; ++i) {
        Tensor img = render_face({uniform(rng, {kIdentityDims}, -1.0, 1.0), i % 7}, 16);
        CHECK(ssim(img, img) == 1.0);
    }
}

TEST_CASE("ssim of an image against its negative is negative on high contrast") {
    Tensor x({16, 16});
    for (int64_t r = 0; r < 16; ++r)
        for (int64_t c = 0; c < 16; ++c) x.at(r, c) = ((r + c) % 2) ? 1.0 : 0.0;
    Tensor y = x;
    for (double& v : y.data) v = 1.0 - v;
    CHECK(ssim(x, y) < 0.0);
}

TEST_CASE("ssim is symmetric to machine precision") {
    RngStream rng(13, 0);
    Tensor a = render_face({uniform(rng, {kIdentityDims}, -1.0, 1.0), 1}, 16);
    Tensor b = render_face({uniform(rng, {kIdentityDims}, -1.0, 1.0), 5}, 16);
    CHECK(ssim(a, b) == ssim(b, a));
}

TEST_CASE("ssim window validation") {
    Tensor x({8, 8});
    CHECK_THROWS_AS(ssim(x, x, 11), Error);
    CHECK_NOTHROW(ssim(x, x, 7));
}
