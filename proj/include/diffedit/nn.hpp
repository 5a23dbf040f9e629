#ifndef DIFFEDIT_NN_HPP
#define DIFFEDIT_NN_HPP

#include <string>
#include <vector>

#include "diffedit/autodiff.hpp"
#include "diffedit/rng.hpp"
#include "diffedit/tensor.hpp"

namespace diffedit {

struct NamedParam {
    std::string name;
    Tensor* tensor;
};

using ParamList = std::vector<NamedParam>;

// weights [in,out], bias [out]
struct Linear {
    Tensor w;
    Tensor b;

    Linear() = default;
    Linear(int64_t in, int64_t out, RngStream& rng) : w({in, out}), b({out}) {
        double a = std::sqrt(6.0 / static_cast<double>(in + out));
        for (double& v : w.data) v = rng.next_uniform_in(-a, a);
    }

    static Linear zeros(int64_t in, int64_t out) {
        Linear l;
        l.w = Tensor({in, out});
        l.b = Tensor({out});
        return l;
    }

    void collect(ParamList& out, const std::string& prefix) {
        out.push_back({prefix + ".w", &w});
        out.push_back({prefix + ".b", &b});
    }
};

// Tape-side view of a Linear layer.
struct LinearVars {
    Var w, b;
};

// Gradients live on the tape, so binding never mutates the parameters.
inline LinearVars bind(Tape& tape, const Linear& l, bool requires_grad = false) {
    return {tape.leaf_ref(&l.w, requires_grad), tape.leaf_ref(&l.b, requires_grad)};
}

inline Var linear(Tape& tape, Var x, const LinearVars& l) {
    return tape.add(tape.matmul(x, l.w), l.b);
}

class SgdOptimizer {
public:
    explicit SgdOptimizer(double lr) : lr_(lr) {}

    void step(const ParamList& params, const std::vector<Tensor>& grads) {
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i].tensor;
            for (size_t j = 0; j < p.data.size(); ++j) p.data[j] -= lr_ * grads[i].data[j];
        }
    }

private:
    double lr_;
};

// Adam with decoupled weight decay.
class AdamWOptimizer {
public:
    explicit AdamWOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999,
                            double eps = 1e-8, double weight_decay = 0.0)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

    void step(const ParamList& params, const std::vector<Tensor>& grads) {
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(p.tensor->shape);
                v_.emplace_back(p.tensor->shape);
            }
        }
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, t_);
        double bc2 = 1.0 - std::pow(beta2_, t_);
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i].tensor;
            const Tensor& g = grads[i];
            for (size_t j = 0; j < p.data.size(); ++j) {
                double gj = g.data[j];
                m_[i].data[j] = beta1_ * m_[i].data[j] + (1.0 - beta1_) * gj;
                v_[i].data[j] = beta2_ * v_[i].data[j] + (1.0 - beta2_) * gj * gj;
                double mh = m_[i].data[j] / bc1;
                double vh = v_[i].data[j] / bc2;
                p.data[j] -= lr_ * (mh / (std::sqrt(vh) + eps_) + wd_ * p.data[j]);
            }
        }
    }

private:
    double lr_, beta1_, beta2_, eps_, wd_;
    int t_ = 0;
    std::vector<Tensor> m_, v_;
};

// Pulls adjoints for a bound parameter set off the tape, in parameter order.
inline std::vector<Tensor> collect_grads(const Tape& tape, const std::vector<Var>& vars) {
    std::vector<Tensor> grads;
    grads.reserve(vars.size());
    for (Var v : vars) grads.push_back(tape.grad(v));
    return grads;
}

inline bool params_finite(const ParamList& params) {
    for (const auto& p : params)
        if (!all_finite(*p.tensor)) return false;
    return true;
}

}  // namespace diffedit

#endif  // DIFFEDIT_NN_HPP
