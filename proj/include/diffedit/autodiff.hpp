#ifndef DIFFEDIT_AUTODIFF_HPP
#define DIFFEDIT_AUTODIFF_HPP

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "diffedit/error.hpp"
#include "diffedit/tensor.hpp"

namespace diffedit {

class Tape;

// Handle into a tape. Cheap to copy; valid for the lifetime of the tape.
struct Var {
    Tape* tape = nullptr;
    int32_t idx = -1;
};

namespace detail {

// C += A B
inline void matmul_nn(const Tensor& a, const Tensor& b, Tensor& c) {
    int64_t n = a.shape[0], k = a.shape[1], m = b.shape[1];
    for (int64_t i = 0; i < n; ++i) {
        const double* arow = &a.data[static_cast<size_t>(i * k)];
        double* crow = &c.data[static_cast<size_t>(i * m)];
        for (int64_t p = 0; p < k; ++p) {
            double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = &b.data[static_cast<size_t>(p * m)];
            for (int64_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A^T B with A [k,n], B [k,m] -> C [n,m]
inline void matmul_tn(const Tensor& a, const Tensor& b, Tensor& c) {
    int64_t k = a.shape[0], n = a.shape[1], m = b.shape[1];
    for (int64_t p = 0; p < k; ++p) {
        const double* arow = &a.data[static_cast<size_t>(p * n)];
        const double* brow = &b.data[static_cast<size_t>(p * m)];
        for (int64_t i = 0; i < n; ++i) {
            double av = arow[i];
            if (av == 0.0) continue;
            double* crow = &c.data[static_cast<size_t>(i * m)];
            for (int64_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A B^T with A [n,k], B [m,k] -> C [n,m]
inline void matmul_nt(const Tensor& a, const Tensor& b, Tensor& c) {
    int64_t n = a.shape[0], k = a.shape[1], m = b.shape[0];
    for (int64_t i = 0; i < n; ++i) {
        const double* arow = &a.data[static_cast<size_t>(i * k)];
        double* crow = &c.data[static_cast<size_t>(i * m)];
        for (int64_t j = 0; j < m; ++j) {
            const double* brow = &b.data[static_cast<size_t>(j * k)];
            double s = 0.0;
            for (int64_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] += s;
        }
    }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

// Dynamic recording tape. Operations append nodes in execution order, which
// is already a topological order, so the backward pass is one reverse sweep
// that visits each node exactly once; adjoints of nodes the loss does not
// reach stay exactly zero. A tape built with record=false evaluates the same
// arithmetic but stores no backward closures (inference, finite-difference
// oracles). Construction is single-threaded per tape.
class Tape {
public:
    explicit Tape(bool record = true) : record_(record) {}

    bool recording() const { return record_; }
    size_t size() const { return nodes_.size(); }

    Var leaf(Tensor value, bool requires_grad = false) {
        return push(std::move(value), requires_grad && record_);
    }

    // Borrow a tensor owned by the caller; no copy. The tensor must outlive
    // the tape and stay unmodified until backward() is done.
    Var leaf_ref(const Tensor* value, bool requires_grad = false) {
        Node n;
        n.ext = value;
        n.needs_grad = requires_grad && record_;
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
    }

    Var constant(Tensor value) { return leaf(std::move(value), false); }
    Var scalar(double v) { return constant(Tensor({1}, {v})); }

    const Tensor& value(Var v) const { return val(check(v)); }
    double scalar_value(Var v) const { return val(check(v)).data[0]; }

    // Adjoint of a node after backward(); exactly zero if the loss does not
    // depend on it.
    Tensor grad(Var v) const {
        const Node& n = nodes_[static_cast<size_t>(check(v))];
        if (!n.has_grad) return Tensor(val(check(v)).shape);
        return n.grad;
    }

    // ---- elementwise / broadcast ----------------------------------------

    // same shape, or [B,d] + [d] row broadcast, or scalar [1] on either side
    Var add(Var a, Var b) {
        const Tensor& x = value(a);
        const Tensor& y = value(b);
        if (same_shape(x, y)) {
            Tensor out = x;
            for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += y.data[i];
            Var o = push(std::move(out), wants(a, b));
            attach(o, [this, a, b, o]() {
                accumulate(a, [&](Tensor& ga) { acc(ga, gradient(o)); });
                accumulate(b, [&](Tensor& gb) { acc(gb, gradient(o)); });
            });
            return o;
        }
        if (x.ndim() == 2 && y.ndim() == 1 && x.shape[1] == y.shape[0]) {
            int64_t B = x.shape[0], d = x.shape[1];
            Tensor out = x;
            for (int64_t i = 0; i < B; ++i)
                for (int64_t j = 0; j < d; ++j)
                    out.data[static_cast<size_t>(i * d + j)] += y.data[static_cast<size_t>(j)];
            Var o = push(std::move(out), wants(a, b));
            attach(o, [this, a, b, o, B, d]() {
                accumulate(a, [&](Tensor& ga) { acc(ga, gradient(o)); });
                accumulate(b, [&](Tensor& gb) {
                    const Tensor& g = gradient(o);
                    for (int64_t i = 0; i < B; ++i)
                        for (int64_t j = 0; j < d; ++j)
                            gb.data[static_cast<size_t>(j)] += g.data[static_cast<size_t>(i * d + j)];
                });
            });
            return o;
        }
        if (y.numel() == 1) {
            Tensor out = x;
            double s = y.data[0];
            for (double& v : out.data) v += s;
            Var o = push(std::move(out), wants(a, b));
            attach(o, [this, a, b, o]() {
                accumulate(a, [&](Tensor& ga) { acc(ga, gradient(o)); });
                accumulate(b, [&](Tensor& gb) { gb.data[0] += sum_of(gradient(o)); });
            });
            return o;
        }
        if (x.numel() == 1) return add(b, a);
        fail(ErrorKind::invalid_shape, "add: incompatible shapes " + shape_str(x) + " vs " + shape_str(y));
    }

    Var sub(Var a, Var b) {
        const Tensor& x = value(a);
        const Tensor& y = value(b);
        if (same_shape(x, y)) {
            Tensor out = x;
            for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= y.data[i];
            Var o = push(std::move(out), wants(a, b));
            attach(o, [this, a, b, o]() {
                accumulate(a, [&](Tensor& ga) { acc(ga, gradient(o)); });
                accumulate(b, [&](Tensor& gb) { acc(gb, gradient(o), -1.0); });
            });
            return o;
        }
        if (y.numel() == 1) {
            Tensor out = x;
            double s = y.data[0];
            for (double& v : out.data) v -= s;
            Var o = push(std::move(out), wants(a, b));
            attach(o, [this, a, b, o]() {
                accumulate(a, [&](Tensor& ga) { acc(ga, gradient(o)); });
                accumulate(b, [&](Tensor& gb) { gb.data[0] -= sum_of(gradient(o)); });
            });
            return o;
        }
        if (x.numel() == 1) {
            Tensor out = y;
            double s = x.data[0];
            for (double& v : out.data) v = s - v;
            Var o = push(std::move(out), wants(a, b));
            attach(o, [this, a, b, o]() {
                accumulate(a, [&](Tensor& ga) { ga.data[0] += sum_of(gradient(o)); });
                accumulate(b, [&](Tensor& gb) { acc(gb, gradient(o), -1.0); });
            });
            return o;
        }
        fail(ErrorKind::invalid_shape, "sub: incompatible shapes " + shape_str(x) + " vs " + shape_str(y));
    }

    Var mul(Var a, Var b) {
        const Tensor& x = value(a);
        const Tensor& y = value(b);
        if (same_shape(x, y)) {
            Tensor out = x;
            for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= y.data[i];
            Var o = push(std::move(out), wants(a, b));
            attach(o, [this, a, b, o]() {
                const Tensor& g = gradient(o);
                accumulate(a, [&](Tensor& ga) {
                    const Tensor& yv = value(b);
                    for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * yv.data[i];
                });
                accumulate(b, [&](Tensor& gb) {
                    const Tensor& xv = value(a);
                    for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i] * xv.data[i];
                });
            });
            return o;
        }
        if (y.numel() == 1) {
            double s = y.data[0];
            Tensor out = x;
            for (double& v : out.data) v *= s;
            Var o = push(std::move(out), wants(a, b));
            attach(o, [this, a, b, o, s]() {
                const Tensor& g = gradient(o);
                accumulate(a, [&](Tensor& ga) { acc(ga, g, s); });
                accumulate(b, [&](Tensor& gb) {
                    const Tensor& xv = value(a);
                    double t = 0.0;
                    for (size_t i = 0; i < g.data.size(); ++i) t += g.data[i] * xv.data[i];
                    gb.data[0] += t;
                });
            });
            return o;
        }
        if (x.numel() == 1) return mul(b, a);
        fail(ErrorKind::invalid_shape, "mul: incompatible shapes " + shape_str(x) + " vs " + shape_str(y));
    }

    // elementwise same-shape, or division by a scalar [1] node
    Var div(Var a, Var b) {
        const Tensor& x = value(a);
        const Tensor& y = value(b);
        if (same_shape(x, y)) {
            Tensor out = x;
            for (size_t i = 0; i < out.data.size(); ++i) out.data[i] /= y.data[i];
            Var o = push(std::move(out), wants(a, b));
            attach(o, [this, a, b, o]() {
                const Tensor& g = gradient(o);
                const Tensor& xv = value(a);
                const Tensor& yv = value(b);
                accumulate(a, [&](Tensor& ga) {
                    for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] / yv.data[i];
                });
                accumulate(b, [&](Tensor& gb) {
                    for (size_t i = 0; i < g.data.size(); ++i)
                        gb.data[i] -= g.data[i] * xv.data[i] / (yv.data[i] * yv.data[i]);
                });
            });
            return o;
        }
        if (y.numel() == 1) {
            double s = y.data[0];
            Tensor out = x;
            for (double& v : out.data) v /= s;
            Var o = push(std::move(out), wants(a, b));
            attach(o, [this, a, b, o, s]() {
                const Tensor& g = gradient(o);
                accumulate(a, [&](Tensor& ga) { acc(ga, g, 1.0 / s); });
                accumulate(b, [&](Tensor& gb) {
                    const Tensor& xv = value(a);
                    double t = 0.0;
                    for (size_t i = 0; i < g.data.size(); ++i) t += g.data[i] * xv.data[i];
                    gb.data[0] -= t / (s * s);
                });
            });
            return o;
        }
        fail(ErrorKind::invalid_shape, "div: incompatible shapes " + shape_str(x) + " vs " + shape_str(y));
    }

    Var scale(Var a, double c) {
        Tensor out = value(a);
        for (double& v : out.data) v *= c;
        Var o = push(std::move(out), wants(a));
        attach(o, [this, a, o, c]() { accumulate(a, [&](Tensor& ga) { acc(ga, gradient(o), c); }); });
        return o;
    }

    Var add_const(Var a, double c) {
        Tensor out = value(a);
        for (double& v : out.data) v += c;
        Var o = push(std::move(out), wants(a));
        attach(o, [this, a, o]() { accumulate(a, [&](Tensor& ga) { acc(ga, gradient(o)); }); });
        return o;
    }

    Var neg(Var a) { return scale(a, -1.0); }

    // ---- matrix / reductions ---------------------------------------------

    // [B,n] x [n,m] -> [B,m]
    Var matmul(Var a, Var b) {
        const Tensor& x = value(a);
        const Tensor& y = value(b);
        require(x.ndim() == 2 && y.ndim() == 2 && x.shape[1] == y.shape[0], ErrorKind::invalid_shape,
                "matmul: need [B,n] x [n,m], got " + shape_str(x) + " x " + shape_str(y));
        Tensor out({x.shape[0], y.shape[1]});
        detail::matmul_nn(x, y, out);
        Var o = push(std::move(out), wants(a, b));
        attach(o, [this, a, b, o]() {
            const Tensor& g = gradient(o);
            accumulate(a, [&](Tensor& ga) { detail::matmul_nt(g, value(b), ga); });
            accumulate(b, [&](Tensor& gb) { detail::matmul_tn(value(a), g, gb); });
        });
        return o;
    }

    Var sum(Var a) {
        Tensor out({1}, {sum_of(value(a))});
        Var o = push(std::move(out), wants(a));
        attach(o, [this, a, o]() {
            accumulate(a, [&](Tensor& ga) {
                double s = gradient(o).data[0];
                for (double& v : ga.data) v += s;
            });
        });
        return o;
    }

    Var mean(Var a) {
        double n = static_cast<double>(value(a).numel());
        Tensor out({1}, {sum_of(value(a)) / n});
        Var o = push(std::move(out), wants(a));
        attach(o, [this, a, o, n]() {
            accumulate(a, [&](Tensor& ga) {
                double s = gradient(o).data[0] / n;
                for (double& v : ga.data) v += s;
            });
        });
        return o;
    }

    // multiply each row of a [B,d] by the matching entry of s [B]
    Var scale_rows(Var a, Var s) {
        const Tensor& x = value(a);
        const Tensor& sv = value(s);
        require(x.ndim() == 2 && sv.ndim() == 1 && sv.shape[0] == x.shape[0],
                ErrorKind::invalid_shape, "scale_rows: need [B,d] and [B]");
        int64_t B = x.shape[0], d = x.shape[1];
        Tensor out = x;
        for (int64_t i = 0; i < B; ++i)
            for (int64_t j = 0; j < d; ++j)
                out.data[static_cast<size_t>(i * d + j)] *= sv.data[static_cast<size_t>(i)];
        Var o = push(std::move(out), wants(a, s));
        attach(o, [this, a, s, o, B, d]() {
            const Tensor& g = gradient(o);
            accumulate(a, [&](Tensor& ga) {
                const Tensor& svv = value(s);
                for (int64_t i = 0; i < B; ++i)
                    for (int64_t j = 0; j < d; ++j)
                        ga.data[static_cast<size_t>(i * d + j)] +=
                            g.data[static_cast<size_t>(i * d + j)] * svv.data[static_cast<size_t>(i)];
            });
            accumulate(s, [&](Tensor& gs) {
                const Tensor& xv = value(a);
                for (int64_t i = 0; i < B; ++i) {
                    double t = 0.0;
                    for (int64_t j = 0; j < d; ++j)
                        t += g.data[static_cast<size_t>(i * d + j)] * xv.data[static_cast<size_t>(i * d + j)];
                    gs.data[static_cast<size_t>(i)] += t;
                }
            });
        });
        return o;
    }

    // per-row inner product: [B,d] x [B,d] -> [B]
    Var row_dot(Var a, Var b) {
        const Tensor& x = value(a);
        const Tensor& y = value(b);
        require(x.ndim() == 2 && same_shape(x, y), ErrorKind::invalid_shape, "row_dot: need matching [B,d]");
        int64_t B = x.shape[0], d = x.shape[1];
        Tensor out({B});
        for (int64_t i = 0; i < B; ++i) {
            double s = 0.0;
            for (int64_t j = 0; j < d; ++j)
                s += x.data[static_cast<size_t>(i * d + j)] * y.data[static_cast<size_t>(i * d + j)];
            out.data[static_cast<size_t>(i)] = s;
        }
        Var o = push(std::move(out), wants(a, b));
        attach(o, [this, a, b, o, B, d]() {
            const Tensor& g = gradient(o);
            accumulate(a, [&](Tensor& ga) {
                const Tensor& yv = value(b);
                for (int64_t i = 0; i < B; ++i)
                    for (int64_t j = 0; j < d; ++j)
                        ga.data[static_cast<size_t>(i * d + j)] +=
                            g.data[static_cast<size_t>(i)] * yv.data[static_cast<size_t>(i * d + j)];
            });
            accumulate(b, [&](Tensor& gb) {
                const Tensor& xv = value(a);
                for (int64_t i = 0; i < B; ++i)
                    for (int64_t j = 0; j < d; ++j)
                        gb.data[static_cast<size_t>(i * d + j)] +=
                            g.data[static_cast<size_t>(i)] * xv.data[static_cast<size_t>(i * d + j)];
            });
        });
        return o;
    }

    // ---- nonlinearities ----------------------------------------------------

    Var silu(Var a) {
        const Tensor& x = value(a);
        Tensor out = x;
        for (double& v : out.data) v = v * detail::sigmoid(v);
        Var o = push(std::move(out), wants(a));
        attach(o, [this, a, o]() {
            accumulate(a, [&](Tensor& ga) {
                const Tensor& g = gradient(o);
                const Tensor& xv = value(a);
                for (size_t i = 0; i < g.data.size(); ++i) {
                    double s = detail::sigmoid(xv.data[i]);
                    ga.data[i] += g.data[i] * (s + xv.data[i] * s * (1.0 - s));
                }
            });
        });
        return o;
    }

    Var tanh_(Var a) {
        Tensor out = value(a);
        for (double& v : out.data) v = std::tanh(v);
        Var o = push(std::move(out), wants(a));
        attach(o, [this, a, o]() {
            accumulate(a, [&](Tensor& ga) {
                const Tensor& g = gradient(o);
                const Tensor& ov = value(o);
                for (size_t i = 0; i < g.data.size(); ++i)
                    ga.data[i] += g.data[i] * (1.0 - ov.data[i] * ov.data[i]);
            });
        });
        return o;
    }

    Var square(Var a) {
        const Tensor& x = value(a);
        Tensor out = x;
        for (double& v : out.data) v *= v;
        Var o = push(std::move(out), wants(a));
        attach(o, [this, a, o]() {
            accumulate(a, [&](Tensor& ga) {
                const Tensor& g = gradient(o);
                const Tensor& xv = value(a);
                for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += 2.0 * g.data[i] * xv.data[i];
            });
        });
        return o;
    }

    Var sqrt_(Var a) {
        Tensor out = value(a);
        for (double& v : out.data) v = std::sqrt(v);
        Var o = push(std::move(out), wants(a));
        attach(o, [this, a, o]() {
            accumulate(a, [&](Tensor& ga) {
                const Tensor& g = gradient(o);
                const Tensor& ov = value(o);
                for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * 0.5 / ov.data[i];
            });
        });
        return o;
    }

    Var abs_(Var a) {
        const Tensor& x = value(a);
        Tensor out = x;
        for (double& v : out.data) v = std::fabs(v);
        Var o = push(std::move(out), wants(a));
        attach(o, [this, a, o]() {
            accumulate(a, [&](Tensor& ga) {
                const Tensor& g = gradient(o);
                const Tensor& xv = value(a);
                for (size_t i = 0; i < g.data.size(); ++i)
                    ga.data[i] += g.data[i] * (xv.data[i] > 0 ? 1.0 : (xv.data[i] < 0 ? -1.0 : 0.0));
            });
        });
        return o;
    }

    // ---- structure ---------------------------------------------------------

    Var reshape(Var a, std::vector<int64_t> shape) {
        Tensor out = reshaped(value(a), std::move(shape));
        Var o = push(std::move(out), wants(a));
        attach(o, [this, a, o]() {
            accumulate(a, [&](Tensor& ga) { acc(ga, gradient(o)); });
        });
        return o;
    }

    // rows of an embedding table selected per batch item: [K,d], idx[B] -> [B,d]
    Var embed_rows(Var table, std::vector<int> idx) {
        const Tensor& t = value(table);
        require(t.ndim() == 2, ErrorKind::invalid_shape, "embed_rows: table must be [K,d]");
        int64_t K = t.shape[0], d = t.shape[1];
        int64_t B = static_cast<int64_t>(idx.size());
        for (int i : idx) require(i >= 0 && i < K, ErrorKind::label, "embed_rows: row index out of range");
        Tensor out({B, d});
        for (int64_t b = 0; b < B; ++b)
            for (int64_t j = 0; j < d; ++j)
                out.data[static_cast<size_t>(b * d + j)] =
                    t.data[static_cast<size_t>(idx[static_cast<size_t>(b)] * d + j)];
        Var o = push(std::move(out), wants(table));
        attach(o, [this, table, o, idx, d]() {
            accumulate(table, [&](Tensor& gt) {
                const Tensor& g = gradient(o);
                int64_t B2 = static_cast<int64_t>(idx.size());
                for (int64_t b = 0; b < B2; ++b)
                    for (int64_t j = 0; j < d; ++j)
                        gt.data[static_cast<size_t>(idx[static_cast<size_t>(b)] * d + j)] +=
                            g.data[static_cast<size_t>(b * d + j)];
            });
        });
        return o;
    }

    // mean softmax cross-entropy over rows: logits [B,C], labels[B] -> [1]
    Var softmax_xent(Var logits, std::vector<int> labels) {
        const Tensor& z = value(logits);
        require(z.ndim() == 2, ErrorKind::invalid_shape, "softmax_xent: logits must be [B,C]");
        int64_t B = z.shape[0], C = z.shape[1];
        require(static_cast<int64_t>(labels.size()) == B, ErrorKind::invalid_shape,
                "softmax_xent: label count mismatch");
        Tensor probs({B, C});
        double loss = 0.0;
        for (int64_t i = 0; i < B; ++i) {
            require(labels[static_cast<size_t>(i)] >= 0 && labels[static_cast<size_t>(i)] < C,
                    ErrorKind::label, "softmax_xent: label out of range");
            const double* row = &z.data[static_cast<size_t>(i * C)];
            double mx = row[0];
            for (int64_t j = 1; j < C; ++j) mx = std::max(mx, row[j]);
            double denom = 0.0;
            for (int64_t j = 0; j < C; ++j) denom += std::exp(row[j] - mx);
            double logdenom = std::log(denom) + mx;
            for (int64_t j = 0; j < C; ++j)
                probs.data[static_cast<size_t>(i * C + j)] = std::exp(row[j] - logdenom);
            loss -= row[labels[static_cast<size_t>(i)]] - logdenom;
        }
        loss /= static_cast<double>(B);
        Var o = push(Tensor({1}, {loss}), wants(logits));
        attach(o, [this, logits, o, probs, labels, B, C]() {
            accumulate(logits, [&](Tensor& gz) {
                double s = gradient(o).data[0] / static_cast<double>(B);
                for (int64_t i = 0; i < B; ++i)
                    for (int64_t j = 0; j < C; ++j) {
                        double p = probs.data[static_cast<size_t>(i * C + j)];
                        double y = (labels[static_cast<size_t>(i)] == j) ? 1.0 : 0.0;
                        gz.data[static_cast<size_t>(i * C + j)] += s * (p - y);
                    }
            });
        });
        return o;
    }

    // out.flat[i] = a.flat[idx[i]]; backward scatter-adds. Covers patch
    // extraction and stitching, which are permutations of the flat image.
    Var gather(Var a, const std::vector<int64_t>& idx, std::vector<int64_t> out_shape) {
        const Tensor& x = value(a);
        Tensor out(std::move(out_shape));
        require(static_cast<int64_t>(idx.size()) == out.numel(), ErrorKind::invalid_shape,
                "gather: index count must match output size");
        for (size_t i = 0; i < idx.size(); ++i) {
            require(idx[i] >= 0 && idx[i] < x.numel(), ErrorKind::invalid_shape,
                    "gather: index out of range");
            out.data[i] = x.data[static_cast<size_t>(idx[i])];
        }
        Var o = push(std::move(out), wants(a));
        attach(o, [this, a, o, idx]() {
            accumulate(a, [&](Tensor& ga) {
                const Tensor& g = gradient(o);
                for (size_t i = 0; i < idx.size(); ++i)
                    ga.data[static_cast<size_t>(idx[i])] += g.data[i];
            });
        });
        return o;
    }

    // Forward takes the replacement value, backward passes gradients straight
    // through to `a` (identity Jacobian). Shapes must match.
    Var straight_through(Var a, Tensor replacement) {
        require(same_shape(value(a), replacement), ErrorKind::invalid_shape,
                "straight_through: replacement shape mismatch");
        Var o = push(std::move(replacement), wants(a));
        attach(o, [this, a, o]() {
            accumulate(a, [&](Tensor& ga) { acc(ga, gradient(o)); });
        });
        return o;
    }

    // ---- backward ------------------------------------------------------------

    void backward(Var loss) {
        require(record_, ErrorKind::contract, "backward: tape was created without recording");
        int32_t li = check(loss);
        Node& ln = nodes_[static_cast<size_t>(li)];
        require(val(li).numel() == 1, ErrorKind::contract, "backward: loss must be a scalar node");
        ensure_grad(li);
        ln.grad.data[0] = 1.0;
        for (int32_t i = li; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (!n.has_grad || !n.backward_fn) continue;
            n.backward_fn();
        }
    }

    void clear() { nodes_.clear(); }

private:
    struct Node {
        const Tensor* ext = nullptr;  // borrowed value, or
        Tensor value;                 // owned value
        Tensor grad;
        bool has_grad = false;
        bool needs_grad = false;
        std::function<void()> backward_fn;
    };

    std::vector<Node> nodes_;
    bool record_;

    int32_t check(Var v) const {
        require(v.tape == this && v.idx >= 0 && v.idx < static_cast<int32_t>(nodes_.size()),
                ErrorKind::contract, "Var does not belong to this tape");
        return v.idx;
    }

    const Tensor& val(int32_t i) const {
        const Node& n = nodes_[static_cast<size_t>(i)];
        return n.ext ? *n.ext : n.value;
    }

    bool wants(Var a) const { return record_ && nodes_[static_cast<size_t>(check(a))].needs_grad; }
    bool wants(Var a, Var b) const { return wants(a) || wants(b); }

    static double sum_of(const Tensor& t) {
        double s = 0.0;
        for (double v : t.data) s += v;
        return s;
    }

    static void acc(Tensor& dst, const Tensor& g, double c = 1.0) {
        for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += c * g.data[i];
    }

    void ensure_grad(int32_t i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (!n.has_grad) {
            n.grad = Tensor(val(i).shape);
            n.has_grad = true;
        }
    }

    // Adjoint of an interior node during the reverse sweep.
    const Tensor& gradient(Var v) { return nodes_[static_cast<size_t>(check(v))].grad; }

    // Run `fn` against the parent's grad buffer if the parent wants gradients.
    template <typename F>
    void accumulate(Var parent, F fn) {
        int32_t i = check(parent);
        if (!nodes_[static_cast<size_t>(i)].needs_grad) return;
        ensure_grad(i);
        fn(nodes_[static_cast<size_t>(i)].grad);
    }

    Var push(Tensor value, bool needs_grad) {
        Node n;
        n.value = std::move(value);
        n.needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
    }

    template <typename F>
    void attach(Var v, F fn) {
        Node& n = nodes_[static_cast<size_t>(check(v))];
        if (n.needs_grad) n.backward_fn = fn;
    }
};

}  // namespace diffedit

#endif  // DIFFEDIT_AUTODIFF_HPP
