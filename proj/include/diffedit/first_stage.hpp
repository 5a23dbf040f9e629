#ifndef DIFFEDIT_FIRST_STAGE_HPP
#define DIFFEDIT_FIRST_STAGE_HPP

#include <string>
#include <vector>

#include "diffedit/nn.hpp"
#include "diffedit/rng.hpp"

namespace diffedit {

enum class FirstStageMode { identity, ae, vq_ae };

inline std::string to_string(FirstStageMode m) {
    switch (m) {
        case FirstStageMode::identity: return "identity";
        case FirstStageMode::ae: return "ae";
        default: return "vq-ae";
    }
}

inline FirstStageMode first_stage_mode_from(const std::string& s) {
    if (s == "identity") return FirstStageMode::identity;
    if (s == "ae") return FirstStageMode::ae;
    if (s == "vq-ae" || s == "vq_ae") return FirstStageMode::vq_ae;
    fail(ErrorKind::config, "unknown first_stage mode: " + s);
}

// K entries of dimension c; quantize maps each latent vector to its nearest
// entry under L2, ties to the lowest index.
struct Codebook {
    Tensor entries;                // [K, c]
    std::vector<int64_t> usage;    // hits per entry over the current epoch

    int64_t K() const { return entries.ndim() ? entries.shape[0] : 0; }
    int64_t dim() const { return entries.ndim() ? entries.shape[1] : 0; }

    int nearest(const double* v) const {
        int64_t k = K(), c = dim();
        int best = 0;
        double best_d = 0.0;
        for (int64_t e = 0; e < k; ++e) {
            const double* row = &entries.data[static_cast<size_t>(e * c)];
            double d = 0.0;
            for (int64_t j = 0; j < c; ++j) {
                double diff = v[j] - row[j];
                d += diff * diff;
            }
            if (e == 0 || d < best_d) {
                best_d = d;
                best = static_cast<int>(e);
            }
        }
        return best;
    }
};

struct QuantizeResult {
    Tensor z_q;
    std::vector<int> indices;  // one per latent vector
    double commit_loss;        // ||z - stopgrad(z_q)||^2
};

// Element-wise nearest-entry replacement over the channel dimension (the
// trailing extent of z).
inline QuantizeResult quantize(const Codebook& cb, const Tensor& z) {
    require(cb.K() >= 2, ErrorKind::contract, "quantize: codebook needs at least 2 entries");
    int64_t c = cb.dim();
    require(z.ndim() >= 1 && z.shape.back() == c, ErrorKind::invalid_shape,
            "quantize: latent channel dim does not match codebook entry dim");
    int64_t n = z.numel() / c;
    QuantizeResult r;
    r.z_q = z;
    r.indices.resize(static_cast<size_t>(n));
    r.commit_loss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double* v = &z.data[static_cast<size_t>(i * c)];
        int e = cb.nearest(v);
        r.indices[static_cast<size_t>(i)] = e;
        const double* row = &cb.entries.data[static_cast<size_t>(e * c)];
        for (int64_t j = 0; j < c; ++j) {
            double q = row[j];
            double d = v[j] - q;
            r.commit_loss += d * d;
            r.z_q.data[static_cast<size_t>(i * c + j)] = q;
        }
    }
    return r;
}

// Toy analog of the VQGAN first stage: a shared per-patch MLP encoder and
// decoder over f x f patches, with optional vector quantization, plus a
// strict identity mode that keeps the whole pipeline in pixel space.
struct FirstStageParams {
    FirstStageMode mode = FirstStageMode::identity;
    int f = 1;       // downsample factor (power of two)
    int c = 1;       // latent channels
    int hidden = 16;

    Linear enc1, enc2;  // f*f -> hidden -> c
    Linear dec1, dec2;  // c -> hidden -> f*f
    Codebook codebook;  // vq-ae only

    static FirstStageParams identity() { return FirstStageParams{}; }

    static FirstStageParams init(FirstStageMode mode, int f, int c, int hidden, int codebook_size,
                                 RngStream rng) {
        FirstStageParams p;
        p.mode = mode;
        if (mode == FirstStageMode::identity) return p;
        require((f & (f - 1)) == 0 && f >= 2, ErrorKind::config,
                "first_stage: downsample factor must be a power of two >= 2");
        p.f = f;
        p.c = c;
        p.hidden = hidden;
        p.enc1 = Linear(f * f, hidden, rng);
        p.enc2 = Linear(hidden, c, rng);
        p.dec1 = Linear(c, hidden, rng);
        p.dec2 = Linear(hidden, f * f, rng);
        if (mode == FirstStageMode::vq_ae) {
            p.codebook.entries = Tensor({codebook_size, c});
            for (double& v : p.codebook.entries.data) v = 0.5 * rng.next_gaussian();
            p.codebook.usage.assign(static_cast<size_t>(codebook_size), 0);
        }
        return p;
    }

    ParamList named_params() {
        ParamList out;
        if (mode == FirstStageMode::identity) return out;
        enc1.collect(out, "enc1");
        enc2.collect(out, "enc2");
        dec1.collect(out, "dec1");
        dec2.collect(out, "dec2");
        if (mode == FirstStageMode::vq_ae) out.push_back({"codebook", &codebook.entries});
        return out;
    }

    int64_t latent_numel(int64_t H, int64_t W) const {
        if (mode == FirstStageMode::identity) return H * W;
        return (H / f) * (W / f) * c;
    }
};

namespace detail {

// flat-index permutation taking a [H,W] image to [P, f*f] patch rows
inline std::vector<int64_t> patch_gather_idx(int64_t H, int64_t W, int f, int64_t batch) {
    int64_t hw = H * W, pw = W / f;
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(batch * hw));
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t p = 0; p < (H / f) * pw; ++p) {
            int64_t pr = p / pw, pc = p % pw;
            for (int k = 0; k < f * f; ++k) {
                int64_t r = pr * f + k / f, col = pc * f + k % f;
                idx.push_back(b * hw + r * W + col);
            }
        }
    return idx;
}

inline std::vector<int64_t> invert_perm(const std::vector<int64_t>& idx) {
    std::vector<int64_t> inv(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) inv[static_cast<size_t>(idx[i])] = static_cast<int64_t>(i);
    return inv;
}

}  // namespace detail

struct FirstStageVars {
    LinearVars enc1, enc2, dec1, dec2;
};

inline FirstStageVars bind(Tape& tape, const FirstStageParams& p, bool requires_grad = false) {
    FirstStageVars v;
    if (p.mode == FirstStageMode::identity) return v;
    v.enc1 = bind(tape, p.enc1, requires_grad);
    v.enc2 = bind(tape, p.enc2, requires_grad);
    v.dec1 = bind(tape, p.dec1, requires_grad);
    v.dec2 = bind(tape, p.dec2, requires_grad);
    return v;
}

// x as [B, H*W] rows -> latent rows [B, P*c]
inline Var encode_on(Tape& tape, const FirstStageParams& p, const FirstStageVars& v, Var x,
                     int64_t H, int64_t W) {
    if (p.mode == FirstStageMode::identity) return x;
    int64_t B = tape.value(x).shape[0];
    int64_t P = (H / p.f) * (W / p.f);
    Var patches = tape.gather(x, detail::patch_gather_idx(H, W, p.f, B),
                              {B * P, static_cast<int64_t>(p.f) * p.f});
    Var h = tape.silu(linear(tape, patches, v.enc1));
    Var z = linear(tape, h, v.enc2);
    return tape.reshape(z, {B, P * p.c});
}

// latent rows [B, P*c] -> image rows [B, H*W]; vq-ae quantizes first with a
// straight-through Jacobian toward the encoder side
inline Var decode_on(Tape& tape, const FirstStageParams& p, const FirstStageVars& v, Var z,
                     int64_t H, int64_t W) {
    if (p.mode == FirstStageMode::identity) return z;
    int64_t B = tape.value(z).shape[0];
    int64_t P = (H / p.f) * (W / p.f);
    Var zr = tape.reshape(z, {B * P, static_cast<int64_t>(p.c)});
    if (p.mode == FirstStageMode::vq_ae) {
        QuantizeResult q = quantize(p.codebook, tape.value(zr));
        zr = tape.straight_through(zr, std::move(q.z_q));
    }
    Var h = tape.silu(linear(tape, zr, v.dec1));
    Var patches = linear(tape, h, v.dec2);
    std::vector<int64_t> stitch =
        detail::invert_perm(detail::patch_gather_idx(H, W, p.f, B));
    return tape.gather(patches, stitch, {B, H * W});
}

namespace detail {

inline void check_image(const FirstStageParams& p, const Tensor& x) {
    require(x.ndim() == 2 || (x.ndim() == 3 && x.shape[2] == 1), ErrorKind::invalid_shape,
            "first_stage: expected a [H,W] or [H,W,1] image, got " + shape_str(x));
    if (p.mode != FirstStageMode::identity)
        require(x.shape[0] % p.f == 0 && x.shape[1] % p.f == 0, ErrorKind::invalid_shape,
                "first_stage: image extents not divisible by the downsample factor");
}

}  // namespace detail

// image [H,W] -> latent [H/f, W/f, c]; strict pass-through in identity mode
inline Tensor encode(const FirstStageParams& p, const Tensor& x) {
    detail::check_image(p, x);
    if (p.mode == FirstStageMode::identity) return x;
    int64_t H = x.shape[0], W = x.shape[1];
    Tape tape(false);
    Var z = encode_on(tape, p, bind(tape, p), tape.constant(reshaped(x, {1, H * W})), H, W);
    return reshaped(tape.value(z), {H / p.f, W / p.f, p.c});
}

// latent -> image [H,W]; exact inverse of encode's shape map
inline Tensor decode(const FirstStageParams& p, const Tensor& z) {
    if (p.mode == FirstStageMode::identity) return z;
    require(z.ndim() == 3 && z.shape[2] == p.c, ErrorKind::invalid_shape,
            "decode: expected [h,w,c] latent, got " + shape_str(z));
    int64_t H = z.shape[0] * p.f, W = z.shape[1] * p.f;
    Tape tape(false);
    Var x = decode_on(tape, p, bind(tape, p), tape.constant(reshaped(z, {1, z.numel()})), H, W);
    return reshaped(tape.value(x), {H, W});
}

struct FirstStageTrainConfig {
    int epochs = 60;
    double learning_rate = 3e-3;
    int batch_size = 32;
    double commit_weight = 1.0;
    double codebook_ema = 0.95;  // per-batch decay of the cluster statistics
};

// Minimizes per-pixel l1 (plus the commitment term in vq-ae mode). The
// codebook is updated by per-batch EMA cluster means; entries unused for a
// full epoch are re-seeded to a random encoder output. Returns the
// per-epoch mean l1 curve. Divergence past 10x the initial loss aborts.
inline std::vector<double> train_first_stage(FirstStageParams& p, const std::vector<Tensor>& images,
                                             const FirstStageTrainConfig& cfg, RngStream rng) {
    require(!images.empty(), ErrorKind::contract, "train_first_stage: dataset is empty");
    if (p.mode == FirstStageMode::identity)
        return std::vector<double>(static_cast<size_t>(cfg.epochs), 0.0);

    int64_t H = images[0].shape[0], W = images[0].shape[1];
    detail::check_image(p, images[0]);
    int64_t P = (H / p.f) * (W / p.f);
    AdamWOptimizer opt(cfg.learning_rate);
    ParamList plist;
    p.enc1.collect(plist, "enc1");
    p.enc2.collect(plist, "enc2");
    p.dec1.collect(plist, "dec1");
    p.dec2.collect(plist, "dec2");

    std::vector<double> curve;
    double initial = -1.0;
    std::vector<size_t> order(images.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    int64_t K = p.codebook.K();
    Tensor ema_sum = (p.mode == FirstStageMode::vq_ae) ? Tensor({std::max<int64_t>(K, 1), p.c}) : Tensor({1});
    std::vector<double> ema_n(static_cast<size_t>(std::max<int64_t>(K, 1)), 0.0);
    if (p.mode == FirstStageMode::vq_ae)
        for (int64_t e = 0; e < K; ++e)
            for (int64_t j = 0; j < p.c; ++j)
                ema_sum.data[static_cast<size_t>(e * p.c + j)] =
                    p.codebook.entries.data[static_cast<size_t>(e * p.c + j)];
    std::fill(ema_n.begin(), ema_n.end(), 1.0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // deterministic shuffle
        for (size_t i = order.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(rng.next_below(i));
            std::swap(order[i - 1], order[j]);
        }
        if (p.mode == FirstStageMode::vq_ae)
            std::fill(p.codebook.usage.begin(), p.codebook.usage.end(), 0);

        double epoch_l1 = 0.0;
        int64_t seen = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            int64_t B = static_cast<int64_t>(stop - start);
            Tensor xb({B, H * W});
            for (int64_t b = 0; b < B; ++b) {
                const Tensor& img = images[order[start + static_cast<size_t>(b)]];
                for (int64_t i = 0; i < H * W; ++i)
                    xb.data[static_cast<size_t>(b * H * W + i)] = img.data[static_cast<size_t>(i)];
            }

            Tape tape;
            FirstStageVars v = bind(tape, p, true);
            Var x = tape.leaf_ref(&xb);
            Var z = encode_on(tape, p, v, x, H, W);
            Var loss;
            if (p.mode == FirstStageMode::vq_ae) {
                Var zr = tape.reshape(z, {B * P, static_cast<int64_t>(p.c)});
                QuantizeResult q = quantize(p.codebook, tape.value(zr));
                // per-batch EMA cluster statistics drive the codebook
                Tensor batch_sum({K, static_cast<int64_t>(p.c)});
                std::vector<double> batch_n(static_cast<size_t>(K), 0.0);
                for (size_t i = 0; i < q.indices.size(); ++i) {
                    int e = q.indices[i];
                    p.codebook.usage[static_cast<size_t>(e)]++;
                    batch_n[static_cast<size_t>(e)] += 1.0;
                    for (int64_t j = 0; j < p.c; ++j)
                        batch_sum.data[static_cast<size_t>(e * p.c + j)] +=
                            tape.value(zr).data[static_cast<size_t>(static_cast<int64_t>(i) * p.c + j)];
                }
                double d = cfg.codebook_ema;
                for (int64_t e = 0; e < K; ++e) {
                    ema_n[static_cast<size_t>(e)] =
                        d * ema_n[static_cast<size_t>(e)] + (1.0 - d) * batch_n[static_cast<size_t>(e)];
                    for (int64_t j = 0; j < p.c; ++j) {
                        double& s = ema_sum.data[static_cast<size_t>(e * p.c + j)];
                        s = d * s + (1.0 - d) * batch_sum.data[static_cast<size_t>(e * p.c + j)];
                        if (ema_n[static_cast<size_t>(e)] > 1e-6)
                            p.codebook.entries.data[static_cast<size_t>(e * p.c + j)] =
                                s / ema_n[static_cast<size_t>(e)];
                    }
                }
                Var commit = tape.mean(tape.square(tape.sub(zr, tape.constant(q.z_q))));
                Var zq = tape.straight_through(zr, std::move(q.z_q));
                Var h = tape.silu(linear(tape, zq, v.dec1));
                Var patches = linear(tape, h, v.dec2);
                Var xh = tape.gather(patches, detail::invert_perm(detail::patch_gather_idx(H, W, p.f, B)),
                                     {B, H * W});
                Var l1 = tape.mean(tape.abs_(tape.sub(xh, x)));
                epoch_l1 += tape.scalar_value(l1) * static_cast<double>(B);
                loss = tape.add(l1, tape.scale(commit, cfg.commit_weight));
            } else {
                Var xh = decode_on(tape, p, v, z, H, W);
                Var l1 = tape.mean(tape.abs_(tape.sub(xh, x)));
                epoch_l1 += tape.scalar_value(l1) * static_cast<double>(B);
                loss = l1;
            }
            seen += B;
            double lv = tape.scalar_value(loss);
            require(std::isfinite(lv), ErrorKind::numeric, "train_first_stage: non-finite loss");
            if (initial < 0.0) initial = lv;
            require(lv <= 10.0 * initial + 1e-9, ErrorKind::numeric,
                    "train_first_stage: loss diverged past 10x initial");
            tape.backward(loss);
            std::vector<Var> pvars{v.enc1.w, v.enc1.b, v.enc2.w, v.enc2.b,
                                   v.dec1.w, v.dec1.b, v.dec2.w, v.dec2.b};
            opt.step(plist, collect_grads(tape, pvars));
        }

        if (p.mode == FirstStageMode::vq_ae) {
            for (int64_t e = 0; e < K; ++e) {
                if (p.codebook.usage[static_cast<size_t>(e)] > 0) continue;
                // dead for a full epoch: re-seed to a random encoder output
                const Tensor& img = images[static_cast<size_t>(rng.next_below(images.size()))];
                Tensor lat = encode(p, img);
                int64_t pick = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(P)));
                for (int64_t j = 0; j < p.c; ++j) {
                    double v2 = lat.data[static_cast<size_t>(pick * p.c + j)];
                    p.codebook.entries.data[static_cast<size_t>(e * p.c + j)] = v2;
                    ema_sum.data[static_cast<size_t>(e * p.c + j)] = v2;
                }
                ema_n[static_cast<size_t>(e)] = 1.0;
            }
        }
        curve.push_back(epoch_l1 / static_cast<double>(seen));
    }
    return curve;
}

}  // namespace diffedit

#endif  // DIFFEDIT_FIRST_STAGE_HPP
