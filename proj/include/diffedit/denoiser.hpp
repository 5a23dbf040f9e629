#ifndef DIFFEDIT_DENOISER_HPP
#define DIFFEDIT_DENOISER_HPP

#include <optional>
#include <vector>

#include "diffedit/nn.hpp"
#include "diffedit/schedule.hpp"

namespace diffedit {

// class label, or nullopt for the null (unconditional) label
using MaybeLabel = std::optional<int>;

// Conditional noise-prediction network over flattened latents: a residual
// MLP with additive sinusoidal-time and class-embedding conditioning. The
// class table has num_classes + 1 rows; the last row is the null label used
// for classifier-free training. The output head starts at zero.
struct DenoiserParams {
    int input_dim = 0;
    int width = 0;
    int num_blocks = 0;
    int num_classes = 0;
    int d_cls = 32;
    int time_dim = 32;

    Linear in_proj;    // input_dim -> width
    Linear time_proj;  // time_dim -> width
    Linear cls_proj;   // d_cls -> width
    Tensor class_embed;  // [num_classes+1, d_cls]
    struct Block {
        Linear fc1, fc2;  // width -> width
    };
    std::vector<Block> blocks;
    Linear out_proj;  // width -> input_dim, zero-initialized

    static DenoiserParams init(int input_dim, int num_classes, int width, int num_blocks,
                               RngStream rng) {
        DenoiserParams p;
        p.input_dim = input_dim;
        p.width = width;
        p.num_blocks = num_blocks;
        p.num_classes = num_classes;
        p.in_proj = Linear(input_dim, width, rng);
        p.time_proj = Linear(p.time_dim, width, rng);
        p.cls_proj = Linear(p.d_cls, width, rng);
        p.class_embed = Tensor({num_classes + 1, p.d_cls});
        for (double& v : p.class_embed.data) v = 0.05 * rng.next_gaussian();
        for (int i = 0; i < num_blocks; ++i)
            p.blocks.push_back({Linear(width, width, rng), Linear(width, width, rng)});
        p.out_proj = Linear::zeros(width, input_dim);
        return p;
    }

    ParamList named_params() {
        ParamList out;
        in_proj.collect(out, "in_proj");
        time_proj.collect(out, "time_proj");
        cls_proj.collect(out, "cls_proj");
        out.push_back({"class_embed", &class_embed});
        for (size_t i = 0; i < blocks.size(); ++i) {
            blocks[i].fc1.collect(out, "block" + std::to_string(i) + ".fc1");
            blocks[i].fc2.collect(out, "block" + std::to_string(i) + ".fc2");
        }
        out_proj.collect(out, "out_proj");
        return out;
    }

    int embed_row(MaybeLabel y) const {
        if (!y.has_value()) return num_classes;
        require(*y >= 0 && *y < num_classes, ErrorKind::label,
                "denoiser: class label out of range");
        return *y;
    }
};

// sinusoidal features of an integer timestep, 16 geometric frequencies with
// base 1e4, sin halves then cos halves
inline Tensor time_features(int t, int time_dim) {
    int half = time_dim / 2;
    Tensor f({time_dim});
    for (int k = 0; k < half; ++k) {
        double freq = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(half - 1));
        f[k] = std::sin(t * freq);
        f[half + k] = std::cos(t * freq);
    }
    return f;
}

struct DenoiserVars {
    LinearVars in_proj, time_proj, cls_proj, out_proj;
    Var class_embed;
    std::vector<std::pair<LinearVars, LinearVars>> blocks;

    std::vector<Var> all() const {
        std::vector<Var> v{in_proj.w, in_proj.b, time_proj.w, time_proj.b,
                           cls_proj.w, cls_proj.b, class_embed};
        for (const auto& b : blocks) {
            v.push_back(b.first.w);
            v.push_back(b.first.b);
            v.push_back(b.second.w);
            v.push_back(b.second.b);
        }
        v.push_back(out_proj.w);
        v.push_back(out_proj.b);
        return v;
    }
};

inline DenoiserVars bind(Tape& tape, const DenoiserParams& p, bool requires_grad = false) {
    DenoiserVars v;
    v.in_proj = bind(tape, p.in_proj, requires_grad);
    v.time_proj = bind(tape, p.time_proj, requires_grad);
    v.cls_proj = bind(tape, p.cls_proj, requires_grad);
    v.class_embed = tape.leaf_ref(&p.class_embed, requires_grad);
    for (auto& b : p.blocks)
        v.blocks.emplace_back(bind(tape, b.fc1, requires_grad), bind(tape, b.fc2, requires_grad));
    v.out_proj = bind(tape, p.out_proj, requires_grad);
    return v;
}

// eps_theta(z_t, t, y) on a tape; z [B,input_dim], one (t, y) per row
inline Var predict_eps_on(Tape& tape, const DenoiserParams& p, const DenoiserVars& v, Var z,
                          const std::vector<int>& ts, const std::vector<MaybeLabel>& ys) {
    const Tensor& zv = tape.value(z);
    require(zv.ndim() == 2 && zv.shape[1] == p.input_dim, ErrorKind::invalid_shape,
            "predict_eps: expected [B," + std::to_string(p.input_dim) + "], got " + shape_str(zv));
    int64_t B = zv.shape[0];
    require(static_cast<int64_t>(ts.size()) == B && static_cast<int64_t>(ys.size()) == B,
            ErrorKind::invalid_shape, "predict_eps: per-row t/y counts must match batch");

    Tensor tf({B, static_cast<int64_t>(p.time_dim)});
    for (int64_t i = 0; i < B; ++i) {
        Tensor fi = time_features(ts[static_cast<size_t>(i)], p.time_dim);
        for (int j = 0; j < p.time_dim; ++j) tf.data[static_cast<size_t>(i * p.time_dim + j)] = fi[j];
    }
    std::vector<int> rows(ys.size());
    for (size_t i = 0; i < ys.size(); ++i) rows[i] = p.embed_row(ys[i]);

    Var cond = tape.add(tape.matmul(tape.constant(std::move(tf)), v.time_proj.w),
                        v.time_proj.b);
    cond = tape.add(cond, linear(tape, tape.embed_rows(v.class_embed, rows), v.cls_proj));
    Var h = tape.silu(tape.add(linear(tape, z, v.in_proj), cond));
    for (const auto& b : v.blocks)
        h = tape.add(h, linear(tape, tape.silu(linear(tape, h, b.first)), b.second));
    return linear(tape, h, v.out_proj);
}

// Plain-tensor entry point. Accepts [input_dim] or [B,input_dim]; output
// shape equals input shape. Pure function of (params, z, t, y).
inline Tensor predict_eps(const DenoiserParams& p, const Tensor& z_t, int t, MaybeLabel y) {
    require(t >= 1, ErrorKind::range, "predict_eps: t must be >= 1");
    p.embed_row(y);  // validates the label
    bool single = (z_t.ndim() == 1);
    require((single && z_t.shape[0] == p.input_dim) ||
                (z_t.ndim() == 2 && z_t.shape[1] == p.input_dim),
            ErrorKind::invalid_shape, "predict_eps: bad input shape " + shape_str(z_t));
    Tape tape(false);
    Var z = single ? tape.constant(reshaped(z_t, {1, p.input_dim})) : tape.leaf_ref(&z_t);
    int64_t B = single ? 1 : z_t.shape[0];
    DenoiserVars v = bind(tape, p);
    Var out = predict_eps_on(tape, p, v, z, std::vector<int>(static_cast<size_t>(B), t),
                             std::vector<MaybeLabel>(static_cast<size_t>(B), y));
    Tensor res = tape.value(out);
    return single ? reshaped(res, z_t.shape) : res;
}

struct TrainConfig {
    double p_uncond = 0.2;
    double learning_rate = 1e-3;
    int batch_size = 64;
    int epochs = 100;
    enum class Optimizer { plain_sgd, adaptive_moment } optimizer = Optimizer::adaptive_moment;
    double weight_decay = 0.0;
};

struct LatentBatch {
    Tensor z0;               // [B, input_dim]
    std::vector<int> labels; // one per row
};

// Eq.-style simple objective with everything that varies per step already
// drawn: mean squared eps-prediction error over the batch.
inline Var ldm_loss_on(Tape& tape, const DenoiserParams& p, const DenoiserVars& v,
                       const Tensor& z0, const std::vector<int>& ts,
                       const std::vector<MaybeLabel>& ys, const Tensor& eps,
                       const NoiseSchedule& sched) {
    int64_t B = z0.shape[0], D = z0.shape[1];
    Tensor z_t({B, D});
    for (int64_t i = 0; i < B; ++i) {
        double ab = sched.alpha_bar(ts[static_cast<size_t>(i)]);
        double c0 = std::sqrt(ab), c1 = std::sqrt(1.0 - ab);
        for (int64_t j = 0; j < D; ++j)
            z_t.data[static_cast<size_t>(i * D + j)] =
                c0 * z0.data[static_cast<size_t>(i * D + j)] + c1 * eps.data[static_cast<size_t>(i * D + j)];
    }
    Var eps_hat = predict_eps_on(tape, p, v, tape.constant(std::move(z_t)), ts, ys);
    return tape.mean(tape.square(tape.sub(eps_hat, tape.leaf_ref(&eps))));
}

// Keeps optimizer state across steps.
class DenoiserTrainer {
public:
    DenoiserTrainer(DenoiserParams& params, TrainConfig cfg)
        : params_(params),
          cfg_(cfg),
          adamw_(cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay),
          sgd_(cfg.learning_rate) {}

    // Samples t ~ U{1..T} and eps per item, drops labels to null with
    // probability p_uncond, takes one optimizer step. Returns the pre-update
    // loss.
    double train_step(const LatentBatch& batch, const NoiseSchedule& sched, RngStream& rng) {
        int64_t B = batch.z0.shape[0];
        require(B > 0, ErrorKind::invalid_shape, "train_step: empty batch");
        std::vector<int> ts(static_cast<size_t>(B));
        std::vector<MaybeLabel> ys(static_cast<size_t>(B));
        for (int64_t i = 0; i < B; ++i) {
            ts[static_cast<size_t>(i)] = 1 + static_cast<int>(rng.next_below(static_cast<uint64_t>(sched.T)));
            bool drop = rng.next_uniform() < cfg_.p_uncond;
            ys[static_cast<size_t>(i)] = drop ? MaybeLabel{} : MaybeLabel{batch.labels[static_cast<size_t>(i)]};
        }
        Tensor eps = gaussian(rng, batch.z0.shape);

        Tape tape;
        DenoiserVars v = bind(tape, params_, true);
        Var loss = ldm_loss_on(tape, params_, v, batch.z0, ts, ys, eps, sched);
        double loss_val = tape.scalar_value(loss);
        require(std::isfinite(loss_val), ErrorKind::numeric,
                "train_step: non-finite loss, aborting with diagnostics");
        tape.backward(loss);

        ParamList plist = params_.named_params();
        std::vector<Tensor> grads = collect_grads(tape, v.all());
        if (cfg_.optimizer == TrainConfig::Optimizer::plain_sgd)
            sgd_.step(plist, grads);
        else
            adamw_.step(plist, grads);
        require(params_finite(plist), ErrorKind::numeric,
                "train_step: parameters became non-finite after update");
        return loss_val;
    }

private:
    DenoiserParams& params_;
    TrainConfig cfg_;
    AdamWOptimizer adamw_;
    SgdOptimizer sgd_;
};

// Epoch-driven training loop over a fixed latent set, with the learning rate
// stepped down 3x at each third of the budget (the plateau at a flat rate is
// far above what the staged schedule reaches). Returns per-epoch mean losses.
inline std::vector<double> run_ldm_training(DenoiserParams& params, const Tensor& latents,
                                            const std::vector<int>& labels,
                                            const NoiseSchedule& sched, const TrainConfig& cfg,
                                            RngStream rng) {
    int64_t n = latents.shape[0];
    int64_t D = latents.shape[1];
    require(n > 0 && static_cast<int64_t>(labels.size()) == n, ErrorKind::contract,
            "run_ldm_training: empty or mismatched dataset");
    std::vector<size_t> order(static_cast<size_t>(n));
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<double> curve;
    int stages = 3;
    int per_stage = std::max(1, cfg.epochs / stages);
    for (int stage = 0; stage < stages; ++stage) {
        TrainConfig stage_cfg = cfg;
        stage_cfg.learning_rate = cfg.learning_rate / std::pow(3.0, stage);
        DenoiserTrainer trainer(params, stage_cfg);
        int stage_epochs = (stage == stages - 1) ? cfg.epochs - per_stage * (stages - 1) : per_stage;
        for (int ep = 0; ep < stage_epochs; ++ep) {
            for (size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[static_cast<size_t>(rng.next_below(i))]);
            double epoch_loss = 0.0;
            int64_t steps = 0;
            for (int64_t s = 0; s + cfg.batch_size <= n; s += cfg.batch_size) {
                LatentBatch batch;
                batch.z0 = Tensor({cfg.batch_size, D});
                for (int64_t j = 0; j < cfg.batch_size; ++j) {
                    size_t item = order[static_cast<size_t>(s + j)];
                    for (int64_t k = 0; k < D; ++k)
                        batch.z0.at(j, k) = latents.at(static_cast<int64_t>(item), k);
                    batch.labels.push_back(labels[item]);
                }
                epoch_loss += trainer.train_step(batch, sched, rng);
                ++steps;
            }
            curve.push_back(epoch_loss / static_cast<double>(std::max<int64_t>(steps, 1)));
        }
    }
    return curve;
}

}  // namespace diffedit

#endif  // DIFFEDIT_DENOISER_HPP
