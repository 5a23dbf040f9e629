#ifndef DIFFEDIT_TOYWORLD_HPP
#define DIFFEDIT_TOYWORLD_HPP

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include "diffedit/metrics.hpp"
#include "diffedit/nn.hpp"
#include "diffedit/rng.hpp"

namespace diffedit {

inline constexpr int kNumEmotions = 7;

// AffectNet-style label set with contempt remapped to neutral upstream
inline const std::array<std::string, kNumEmotions>& emotion_names() {
    static const std::array<std::string, kNumEmotions> names = {
        "neutral", "happy", "sad", "surprised", "scared", "disgusted", "angry"};
    return names;
}

inline int emotion_index(const std::string& name) {
    const auto& names = emotion_names();
    for (int i = 0; i < kNumEmotions; ++i)
        if (names[static_cast<size_t>(i)] == name) return i;
    fail(ErrorKind::label, "unknown emotion label: " + name);
}

inline constexpr int kIdentityDims = 4;

// Identity parameters (face width, eye spacing, skin tone, expressiveness)
// in [-1,1] plus an emotion class. Rendering is a pure function of the spec;
// emotion features are confined to fixed mouth/brow boxes so the two factors
// vary on disjoint pixel regions. Expressiveness scales the feature contrast,
// which spreads per-face editing difficulty the way in-the-wild data does.
struct FaceSpec {
    Tensor identity;  // [kIdentityDims]
    int emotion = 0;
};

namespace faceworld {

// per-class mouth curvature / openness, brow raise / angle, and mouth height
// offset. Each class sits at the extreme of its own feature axis so that
// over-guided edits amplify the class signature instead of crossing into a
// neighboring class.
struct EmotionShape {
    double curv, open, raise, angle, dy;
};

inline const std::array<EmotionShape, kNumEmotions>& emotion_shapes() {
    static const std::array<EmotionShape, kNumEmotions> shapes = {{
        {0.0, 0.0, 0.0, 0.0, 0.0},        // neutral
        {1.0, 0.0, 0.0, 0.0, 0.0},        // happy: upward curvature
        {-1.0, 0.0, 0.0, 0.0, 0.0},       // sad: downward curvature
        {0.0, 1.0, 0.9, 0.0, 0.0},        // surprised: wide-open mouth, raised brows
        {-0.15, 0.55, 0.55, 0.8, 0.0},    // scared: inner-raised brow tilt
        {-0.3, 0.25, -0.55, 0.0, -0.9},   // disgusted: mouth pulled upward
        {-0.35, 0.0, -0.25, -1.0, 0.0},   // angry: V-shaped brows
    }};
    return shapes;
}

// canonical 16-unit coordinates; emotion strokes are zeroed outside these
inline bool in_brow_box(double x, double y) { return y >= 1.5 && y <= 5.5 && x >= 2.0 && x <= 14.0; }
inline bool in_mouth_box(double x, double y) { return y >= 9.0 && y <= 14.0 && x >= 3.0 && x <= 13.0; }

inline double smooth01(double t) { return 1.0 / (1.0 + std::exp(-t)); }

inline double segment_dist(double px, double py, double ax, double ay, double bx, double by) {
    double vx = bx - ax, vy = by - ay;
    double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
    t = std::min(1.0, std::max(0.0, t));
    double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace faceworld

// Grayscale face in [0,1]. Identity drives face width, eye spacing and skin
// tone; the emotion class drives mouth curvature/openness and brow pose.
inline Tensor render_face(const FaceSpec& spec, int size = 16) {
    require(size >= 8, ErrorKind::range, "render_face: size must be >= 8");
    require(spec.identity.numel() == kIdentityDims, ErrorKind::invalid_shape,
            "render_face: identity must have " + std::to_string(kIdentityDims) + " parameters");
    require(spec.emotion >= 0 && spec.emotion < kNumEmotions, ErrorKind::label,
            "render_face: emotion class out of range");
    using namespace faceworld;

    double id0 = spec.identity[0], id1 = spec.identity[1], id2 = spec.identity[2];
    double contrast = 0.625 + 0.375 * spec.identity[3];  // in [0.25, 1.0]
    const EmotionShape& em = emotion_shapes()[static_cast<size_t>(spec.emotion)];

    double rx = 5.4 + 1.1 * id0;
    double ry = 6.9;
    double tone = 0.55 + 0.25 * id2;
    double eye_dx = 2.2 + 0.9 * id1;
    double brow_y = 4.0 - 0.9 * em.raise;
    double mouth_y = 11.9 + em.dy;
    // mouth width and brow length follow the face geometry, so every class
    // carries identity-driven intra-class variation
    double mouth_w = 2.6 + 0.5 * id0;
    double brow_l = 1.5 + 0.3 * id1;

    double u = static_cast<double>(size) / 16.0;
    Tensor img({size, size});
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            double x = (c + 0.5) / u, y = (r + 0.5) / u;
            double val = 0.06;

            double dxf = (x - 8.0) / rx, dyf = (y - 8.0) / ry;
            double face = smooth01((1.0 - (dxf * dxf + dyf * dyf)) * 6.0);
            val += (tone - val) * face;

            for (int s = -1; s <= 1; s += 2) {
                double ex = 8.0 + s * eye_dx, ey = 5.4;
                double d2 = (x - ex) * (x - ex) + (y - ey) * (y - ey);
                double eye = std::exp(-d2 / 0.35);
                val += (0.95 - val) * eye;
            }

            if (in_brow_box(x, y)) {
                for (int s = -1; s <= 1; s += 2) {
                    double bx = 8.0 + s * eye_dx;
                    double ix = bx - s * brow_l, iy = brow_y - em.angle * 1.0;  // inner end
                    double ox = bx + s * brow_l, oy = brow_y + em.angle * 1.0;
                    double d = segment_dist(x, y, ix, iy, ox, oy);
                    double cov = contrast * std::exp(-(d / 0.5) * (d / 0.5));
                    val += (0.05 - val) * cov;
                }
            }

            if (in_mouth_box(x, y)) {
                if (em.open > 0.05) {
                    double orx = 1.6 + 0.7 * em.open, ory = 0.5 + 1.3 * em.open;
                    double dxm = (x - 8.0) / orx, dym = (y - mouth_y) / ory;
                    double cov = contrast * smooth01((1.0 - (dxm * dxm + dym * dym)) * 6.0);
                    val += (0.04 - val) * cov;
                }
                double best = 1e9;
                for (int k = 0; k <= 24; ++k) {
                    double s = -1.0 + 2.0 * k / 24.0;
                    double cx2 = 8.0 + mouth_w * s;
                    double cy2 = mouth_y + em.curv * (0.45 - 1.35 * s * s);
                    double ddx = x - cx2, ddy = y - cy2;
                    best = std::min(best, ddx * ddx + ddy * ddy);
                }
                double cov = contrast * std::exp(-best / (0.52 * 0.52));
                val += (0.04 - val) * cov;
            }

            img.at(r, c) = std::min(1.0, std::max(0.0, val));
        }
    }
    return img;
}

// 1 inside the fixed mouth/brow boxes, 0 elsewhere; the only pixels that may
// change when just the emotion class changes
inline Tensor mouth_brow_mask(int size = 16) {
    double u = static_cast<double>(size) / 16.0;
    Tensor m({size, size});
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) {
            double x = (c + 0.5) / u, y = (r + 0.5) / u;
            m.at(r, c) = (faceworld::in_brow_box(x, y) || faceworld::in_mouth_box(x, y)) ? 1.0 : 0.0;
        }
    return m;
}

struct ToyDataset {
    std::vector<FaceSpec> specs;
    std::vector<Tensor> images;
    std::vector<int> labels;
    int image_size = 16;

    size_t size() const { return images.size(); }
};

// Balanced dataset: per_class faces for each emotion, identities drawn
// uniformly from [-1,1]^3.
inline ToyDataset make_toy_dataset(int per_class, int image_size, RngStream rng) {
    ToyDataset ds;
    ds.image_size = image_size;
    for (int c = 0; c < kNumEmotions; ++c) {
        for (int i = 0; i < per_class; ++i) {
            FaceSpec spec;
            spec.identity = uniform(rng, {kIdentityDims}, -1.0, 1.0);
            spec.emotion = c;
            ds.specs.push_back(spec);
            ds.images.push_back(render_face(spec, image_size));
            ds.labels.push_back(c);
        }
    }
    return ds;
}

// ---- frozen evaluators ------------------------------------------------------

// Small MLP with an exposed penultimate feature layer. Stand-in for the
// pretrained evaluators: trained once on the toy world, then frozen.
struct FeatureNet {
    Linear fc1, fc2, head;  // in -> h1 -> feat -> out
    Tensor feat_mean;       // [feat], set at calibration time
    int input_dim = 0, feat_dim = 0, out_dim = 0;

    static FeatureNet init(int input_dim, int h1, int feat, int out, RngStream rng) {
        FeatureNet n;
        n.input_dim = input_dim;
        n.feat_dim = feat;
        n.out_dim = out;
        n.fc1 = Linear(input_dim, h1, rng);
        n.fc2 = Linear(h1, feat, rng);
        n.head = Linear(feat, out, rng);
        n.feat_mean = Tensor({feat});
        return n;
    }

    ParamList named_params() {
        ParamList out;
        fc1.collect(out, "fc1");
        fc2.collect(out, "fc2");
        head.collect(out, "head");
        out.push_back({"feat_mean", &feat_mean});
        return out;
    }
};

struct FeatureNetVars {
    LinearVars fc1, fc2, head;
};

inline FeatureNetVars bind(Tape& tape, const FeatureNet& n, bool requires_grad = false) {
    return {bind(tape, n.fc1, requires_grad), bind(tape, n.fc2, requires_grad),
            bind(tape, n.head, requires_grad)};
}

inline Var features_on(Tape& tape, const FeatureNetVars& v, Var x) {
    return tape.silu(linear(tape, tape.silu(linear(tape, x, v.fc1)), v.fc2));
}

// centered unit-norm feature rows; the epsilon keeps degenerate rows finite,
// and their gradients are masked out by the callers
inline Var unit_features_on(Tape& tape, const FeatureNet& n, const FeatureNetVars& v, Var x) {
    Var feat = features_on(tape, v, x);
    Tensor neg_mean = scaled(n.feat_mean, -1.0);
    Var centered = tape.add(feat, tape.constant(std::move(neg_mean)));
    Var norm = tape.sqrt_(tape.add_const(tape.row_dot(centered, centered), 1e-24));
    Var inv = tape.div(tape.constant(full({tape.value(norm).shape[0]}, 1.0)), norm);
    return tape.scale_rows(centered, inv);
}

namespace detail {

inline Tensor flat_rows(const Tensor& img) { return reshaped(img, {1, img.numel()}); }

inline Tensor net_features(const FeatureNet& n, const Tensor& image) {
    Tape tape(false);
    Var f = features_on(tape, bind(tape, n), tape.constant(flat_rows(image)));
    return reshaped(tape.value(f), {n.feat_dim});
}

inline Tensor net_logits(const FeatureNet& n, const Tensor& image) {
    Tape tape(false);
    FeatureNetVars v = bind(tape, n);
    Var f = features_on(tape, v, tape.constant(flat_rows(image)));
    return reshaped(tape.value(linear(tape, f, v.head)), {n.out_dim});
}

inline Tensor unit_embed(const FeatureNet& n, const Tensor& image) {
    Tensor f = net_features(n, image);
    for (int64_t i = 0; i < f.numel(); ++i) f[i] -= n.feat_mean[i];
    double nm = norm2(f);
    require(nm >= 1e-12, ErrorKind::degenerate, "embedding norm below 1e-12");
    return scaled(f, 1.0 / nm);
}

}  // namespace detail

// Emotion classifier plus the embedding-oracle surface built from it: unit
// image embeddings from centered penultimate features and one unit prototype
// per class (the per-class mean feature).
struct EmotionOracle {
    FeatureNet net;
    Tensor prototypes;  // [C, feat], unit rows
    int num_classes = kNumEmotions;

    int predict(const Tensor& image) const {
        Tensor logits = detail::net_logits(net, image);
        int best = 0;
        for (int64_t j = 1; j < logits.numel(); ++j)
            if (logits[j] > logits[best]) best = static_cast<int>(j);
        return best;
    }

    Tensor image_embed(const Tensor& image) const { return detail::unit_embed(net, image); }

    Tensor class_embed(int label) const {
        require(label >= 0 && label < num_classes, ErrorKind::label,
                "class_embed: label out of range");
        Tensor row({net.feat_dim});
        for (int64_t j = 0; j < net.feat_dim; ++j) row[j] = prototypes.at(label, j);
        return row;
    }
};

// Identity-parameter regressor; embeddings are centered unit penultimate
// features, used as the CSIM stand-in.
struct IdentityEmbedder {
    FeatureNet net;

    Tensor embed(const Tensor& image) const { return detail::unit_embed(net, image); }
};

struct OracleTrainConfig {
    int epochs = 50;
    double learning_rate = 1.5e-3;
    int batch_size = 64;
    double holdout_fraction = 0.1;
    double min_accuracy = 0.98;  // calibration gate, measured on clean renders
    double min_auc = 0.95;
    // additive pixel-noise copies of the training split; keeps the classifier
    // stable on mildly distorted generated images
    int augment_copies = 2;
    double augment_noise_sd = 0.07;
};

namespace detail {

inline std::vector<size_t> shuffled_indices(size_t n, RngStream& rng) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    for (size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[static_cast<size_t>(rng.next_below(i))]);
    return idx;
}

inline Tensor stack_rows(const std::vector<Tensor>& images, const std::vector<size_t>& idx,
                         size_t start, size_t stop) {
    int64_t D = images[0].numel();
    Tensor out({static_cast<int64_t>(stop - start), D});
    for (size_t b = start; b < stop; ++b)
        for (int64_t j = 0; j < D; ++j)
            out.data[static_cast<size_t>((b - start) * static_cast<size_t>(D)) + static_cast<size_t>(j)] =
                images[idx[b]].data[static_cast<size_t>(j)];
    return out;
}

}  // namespace detail

// Trains the emotion classifier, checks the held-out accuracy gate, freezes
// feature mean and class prototypes. Throws a calibration error if the gate
// is not met (blocks everything downstream).
inline EmotionOracle train_emotion_oracle(const ToyDataset& ds, const OracleTrainConfig& cfg,
                                          RngStream rng) {
    require(ds.size() >= 1000, ErrorKind::contract,
            "train_emotion_oracle: need at least 1000 labeled items");
    int64_t D = ds.images[0].numel();
    EmotionOracle oracle;
    oracle.net = FeatureNet::init(static_cast<int>(D), 64, 64, kNumEmotions, rng.split(1));
    AdamWOptimizer opt(cfg.learning_rate);
    ParamList plist;
    oracle.net.fc1.collect(plist, "fc1");
    oracle.net.fc2.collect(plist, "fc2");
    oracle.net.head.collect(plist, "head");

    std::vector<size_t> idx = detail::shuffled_indices(ds.size(), rng);
    size_t holdout = static_cast<size_t>(static_cast<double>(ds.size()) * cfg.holdout_fraction);
    size_t train_n = ds.size() - holdout;

    // training pool: clean split plus noisy copies of it
    std::vector<Tensor> pool;
    std::vector<int> pool_labels;
    RngStream noise_rng = rng.split(17);
    for (size_t b = 0; b < train_n; ++b) {
        pool.push_back(ds.images[idx[b]]);
        pool_labels.push_back(ds.labels[idx[b]]);
        for (int rep = 0; rep < cfg.augment_copies; ++rep) {
            Tensor img = ds.images[idx[b]];
            for (double& v : img.data) v += cfg.augment_noise_sd * noise_rng.next_gaussian();
            pool.push_back(std::move(img));
            pool_labels.push_back(ds.labels[idx[b]]);
        }
    }
    std::vector<size_t> pool_idx = detail::shuffled_indices(pool.size(), rng);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (size_t start = 0; start < pool.size(); start += static_cast<size_t>(cfg.batch_size)) {
            size_t stop = std::min(pool.size(), start + static_cast<size_t>(cfg.batch_size));
            Tensor xb = detail::stack_rows(pool, pool_idx, start, stop);
            std::vector<int> yb;
            for (size_t b = start; b < stop; ++b) yb.push_back(pool_labels[pool_idx[b]]);
            Tape tape;
            FeatureNetVars v = bind(tape, oracle.net, true);
            Var logits = linear(tape, features_on(tape, v, tape.leaf_ref(&xb)), v.head);
            Var loss = tape.softmax_xent(logits, yb);
            tape.backward(loss);
            std::vector<Var> pv{v.fc1.w, v.fc1.b, v.fc2.w, v.fc2.b, v.head.w, v.head.b};
            opt.step(plist, collect_grads(tape, pv));
        }
    }

    size_t correct = 0;
    for (size_t b = train_n; b < ds.size(); ++b)
        if (oracle.predict(ds.images[idx[b]]) == ds.labels[idx[b]]) ++correct;
    double acc = holdout ? static_cast<double>(correct) / static_cast<double>(holdout) : 0.0;
    require(acc >= cfg.min_accuracy, ErrorKind::calibration,
            "emotion oracle held-out accuracy " + std::to_string(acc) + " below gate " +
                std::to_string(cfg.min_accuracy));

    // freeze feature mean and per-class prototypes over the training split
    Tensor mean({oracle.net.feat_dim});
    std::vector<Tensor> class_sum(kNumEmotions, Tensor({oracle.net.feat_dim}));
    std::vector<int64_t> class_n(kNumEmotions, 0);
    for (size_t b = 0; b < train_n; ++b) {
        Tensor f = detail::net_features(oracle.net, ds.images[idx[b]]);
        for (int64_t j = 0; j < f.numel(); ++j) mean[j] += f[j];
        int c = ds.labels[idx[b]];
        for (int64_t j = 0; j < f.numel(); ++j) class_sum[static_cast<size_t>(c)][j] += f[j];
        class_n[static_cast<size_t>(c)]++;
    }
    for (int64_t j = 0; j < mean.numel(); ++j) mean[j] /= static_cast<double>(train_n);
    oracle.net.feat_mean = mean;
    oracle.prototypes = Tensor({kNumEmotions, oracle.net.feat_dim});
    for (int c = 0; c < kNumEmotions; ++c) {
        Tensor proto({oracle.net.feat_dim});
        for (int64_t j = 0; j < proto.numel(); ++j)
            proto[j] = class_sum[static_cast<size_t>(c)][j] / static_cast<double>(class_n[static_cast<size_t>(c)]) -
                       mean[j];
        double nm = norm2(proto);
        require(nm >= 1e-12, ErrorKind::calibration, "degenerate class prototype");
        for (int64_t j = 0; j < proto.numel(); ++j) oracle.prototypes.at(c, j) = proto[j] / nm;
    }
    return oracle;
}

// Trains the identity regressor and checks the same-vs-cross identity cosine
// separation (AUC gate) on sampled triples.
inline IdentityEmbedder train_identity_embedder(const ToyDataset& ds, const OracleTrainConfig& cfg,
                                                RngStream rng) {
    require(ds.size() >= 1000, ErrorKind::contract,
            "train_identity_embedder: need at least 1000 labeled items");
    int64_t D = ds.images[0].numel();
    IdentityEmbedder emb;
    emb.net = FeatureNet::init(static_cast<int>(D), 64, 32, kIdentityDims, rng.split(2));
    AdamWOptimizer opt(cfg.learning_rate);
    ParamList plist;
    emb.net.fc1.collect(plist, "fc1");
    emb.net.fc2.collect(plist, "fc2");
    emb.net.head.collect(plist, "head");

    std::vector<size_t> idx = detail::shuffled_indices(ds.size(), rng);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (size_t start = 0; start < ds.size(); start += static_cast<size_t>(cfg.batch_size)) {
            size_t stop = std::min(ds.size(), start + static_cast<size_t>(cfg.batch_size));
            Tensor xb = detail::stack_rows(ds.images, idx, start, stop);
            Tensor yb({static_cast<int64_t>(stop - start), kIdentityDims});
            for (size_t b = start; b < stop; ++b)
                for (int64_t j = 0; j < kIdentityDims; ++j)
                    yb.at(static_cast<int64_t>(b - start), j) = ds.specs[idx[b]].identity[j];
            Tape tape;
            FeatureNetVars v = bind(tape, emb.net, true);
            Var pred = linear(tape, features_on(tape, v, tape.leaf_ref(&xb)), v.head);
            Var loss = tape.mean(tape.square(tape.sub(pred, tape.leaf_ref(&yb))));
            tape.backward(loss);
            std::vector<Var> pv{v.fc1.w, v.fc1.b, v.fc2.w, v.fc2.b, v.head.w, v.head.b};
            opt.step(plist, collect_grads(tape, pv));
        }
    }

    // feature mean over the dataset
    Tensor mean({emb.net.feat_dim});
    for (const Tensor& img : ds.images) {
        Tensor f = detail::net_features(emb.net, img);
        for (int64_t j = 0; j < f.numel(); ++j) mean[j] += f[j];
    }
    for (int64_t j = 0; j < mean.numel(); ++j) mean[j] /= static_cast<double>(ds.size());
    emb.net.feat_mean = mean;

    // AUC over sampled triples: same identity (different emotion) must beat a
    // cross-identity pair
    RngStream trng = rng.split(3);
    int wins = 0;
    const int trials = 500;
    for (int t = 0; t < trials; ++t) {
        Tensor id = uniform(trng, {kIdentityDims}, -1.0, 1.0);
        int e1 = static_cast<int>(trng.next_below(kNumEmotions));
        int e2 = (e1 + 1 + static_cast<int>(trng.next_below(kNumEmotions - 1))) % kNumEmotions;
        Tensor other_id = uniform(trng, {kIdentityDims}, -1.0, 1.0);
        Tensor a = render_face({id, e1}, ds.image_size);
        Tensor b = render_face({id, e2}, ds.image_size);
        Tensor c = render_face({other_id, e1}, ds.image_size);
        double same = cosine_similarity(emb.embed(a), emb.embed(b));
        double cross = cosine_similarity(emb.embed(a), emb.embed(c));
        if (same > cross) ++wins;
    }
    double auc = static_cast<double>(wins) / trials;
    require(auc >= cfg.min_auc, ErrorKind::calibration,
            "identity embedder AUC " + std::to_string(auc) + " below gate " +
                std::to_string(cfg.min_auc));
    return emb;
}

// cosine similarity of identity embeddings; the CSIM analog
inline double csim_toy(const IdentityEmbedder& emb, const Tensor& x_gen, const Tensor& x_src) {
    return cosine_similarity(emb.embed(x_gen), emb.embed(x_src));
}

}  // namespace diffedit

#endif  // DIFFEDIT_TOYWORLD_HPP
