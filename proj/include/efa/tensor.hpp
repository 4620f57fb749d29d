#pragma once

// Dense matrix tensor with reverse-mode differentiation. All values are
// 64-bit reals; scalars are 1x1, vectors are n x 1.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace efa {

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int r, int c, double fill = 0.0) : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill) {
        if (r < 0 || c < 0) throw ShapeError("negative tensor dimension");
    }
    static Tensor scalar(double x) {
        Tensor t(1, 1);
        t.v[0] = x;
        return t;
    }
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rws) {
        Tensor t(static_cast<int>(rws.size()), static_cast<int>(rws.begin()->size()));
        int r = 0;
        for (const auto& rw : rws) {
            if (static_cast<int>(rw.size()) != t.cols) throw ShapeError("ragged initializer");
            int c = 0;
            for (double x : rw) t(r, c++) = x;
            ++r;
        }
        return t;
    }

    int size() const { return rows * cols; }
    double& operator()(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }

    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (int i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
    return m;
}

// ---------------------------------------------------------------------------
// Autodiff graph
// ---------------------------------------------------------------------------

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Tensor val;
    Tensor grad;  // allocated on demand during backward
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backprop;  // routes this->grad into parents' grads

    void ensure_grad() {
        if (grad.rows != val.rows || grad.cols != val.cols) grad = Tensor(val.rows, val.cols);
    }
    void zero_grad() { std::fill(grad.v.begin(), grad.v.end(), 0.0); }
};

// Handle to a node in the computation graph. Copies share the node.
class Var {
public:
    Var() = default;
    explicit Var(NodePtr n) : n_(std::move(n)) {}

    static Var param(Tensor t) {
        auto n = std::make_shared<Node>();
        n->val = std::move(t);
        n->requires_grad = true;
        n->ensure_grad();
        return Var(n);
    }
    static Var constant(Tensor t) {
        auto n = std::make_shared<Node>();
        n->val = std::move(t);
        return Var(n);
    }

    const Tensor& value() const { return n_->val; }
    Tensor& value() { return n_->val; }
    const Tensor& grad() const { return n_->grad; }
    bool requires_grad() const { return n_->requires_grad; }
    NodePtr node() const { return n_; }
    bool defined() const { return static_cast<bool>(n_); }
    int rows() const { return n_->val.rows; }
    int cols() const { return n_->val.cols; }

private:
    NodePtr n_;
};

namespace detail {

inline Var make_op(Tensor out, std::vector<NodePtr> parents, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->val = std::move(out);
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return Var(n);
}

inline void accumulate(const NodePtr& p, const Tensor& g) {
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (int i = 0; i < g.size(); ++i) p->grad.v[i] += g.v[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.cols != B.rows) throw ShapeError("matmul: inner dimensions mismatch");
    Tensor out(A.rows, B.cols);
    for (int i = 0; i < A.rows; ++i)
        for (int k = 0; k < A.cols; ++k) {
            double aik = A(i, k);
            if (aik == 0.0) continue;
            for (int j = 0; j < B.cols; ++j) out(i, j) += aik * B(k, j);
        }
    auto an = a.node(), bn = b.node();
    return detail::make_op(std::move(out), {an, bn}, [an, bn](Node& n) {
        const Tensor& G = n.grad;
        const Tensor& A = an->val;
        const Tensor& B = bn->val;
        if (an->requires_grad) {
            Tensor dA(A.rows, A.cols);
            for (int i = 0; i < A.rows; ++i)
                for (int j = 0; j < B.cols; ++j) {
                    double g = G(i, j);
                    if (g == 0.0) continue;
                    for (int k = 0; k < A.cols; ++k) dA(i, k) += g * B(k, j);
                }
            detail::accumulate(an, dA);
        }
        if (bn->requires_grad) {
            Tensor dB(B.rows, B.cols);
            for (int i = 0; i < A.rows; ++i)
                for (int k = 0; k < A.cols; ++k) {
                    double aik = A(i, k);
                    if (aik == 0.0) continue;
                    for (int j = 0; j < B.cols; ++j) dB(k, j) += aik * G(i, j);
                }
            detail::accumulate(bn, dB);
        }
    });
}

// a^T b without materializing the transpose.
inline Var matmul_tn(const Var& a, const Var& b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.rows != B.rows) throw ShapeError("matmul_tn: leading dimensions mismatch");
    Tensor out(A.cols, B.cols);
    for (int k = 0; k < A.rows; ++k)
        for (int i = 0; i < A.cols; ++i) {
            double aki = A(k, i);
            if (aki == 0.0) continue;
            for (int j = 0; j < B.cols; ++j) out(i, j) += aki * B(k, j);
        }
    auto an = a.node(), bn = b.node();
    return detail::make_op(std::move(out), {an, bn}, [an, bn](Node& n) {
        const Tensor& G = n.grad;  // A.cols x B.cols
        const Tensor& A = an->val;
        const Tensor& B = bn->val;
        if (an->requires_grad) {
            Tensor dA(A.rows, A.cols);  // dA = B G^T
            for (int k = 0; k < B.rows; ++k)
                for (int j = 0; j < B.cols; ++j) {
                    double bkj = B(k, j);
                    if (bkj == 0.0) continue;
                    for (int i = 0; i < A.cols; ++i) dA(k, i) += bkj * G(i, j);
                }
            detail::accumulate(an, dA);
        }
        if (bn->requires_grad) {
            Tensor dB(B.rows, B.cols);  // dB = A G
            for (int k = 0; k < A.rows; ++k)
                for (int i = 0; i < A.cols; ++i) {
                    double aki = A(k, i);
                    if (aki == 0.0) continue;
                    for (int j = 0; j < B.cols; ++j) dB(k, j) += aki * G(i, j);
                }
            detail::accumulate(bn, dB);
        }
    });
}

inline Var transpose(const Var& a) {
    const Tensor& A = a.value();
    Tensor out(A.cols, A.rows);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) out(j, i) = A(i, j);
    auto an = a.node();
    return detail::make_op(std::move(out), {an}, [an](Node& n) {
        Tensor dA(an->val.rows, an->val.cols);
        for (int i = 0; i < dA.rows; ++i)
            for (int j = 0; j < dA.cols; ++j) dA(i, j) = n.grad(j, i);
        detail::accumulate(an, dA);
    });
}

inline Var add(const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value())) throw ShapeError("add: shape mismatch");
    Tensor out = a.value();
    for (int i = 0; i < out.size(); ++i) out.v[i] += b.value().v[i];
    auto an = a.node(), bn = b.node();
    return detail::make_op(std::move(out), {an, bn}, [an, bn](Node& n) {
        detail::accumulate(an, n.grad);
        detail::accumulate(bn, n.grad);
    });
}

inline Var sub(const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value())) throw ShapeError("sub: shape mismatch");
    Tensor out = a.value();
    for (int i = 0; i < out.size(); ++i) out.v[i] -= b.value().v[i];
    auto an = a.node(), bn = b.node();
    return detail::make_op(std::move(out), {an, bn}, [an, bn](Node& n) {
        detail::accumulate(an, n.grad);
        if (bn->requires_grad) {
            Tensor g = n.grad;
            for (double& x : g.v) x = -x;
            detail::accumulate(bn, g);
        }
    });
}

inline Var mul(const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value())) throw ShapeError("mul: shape mismatch");
    Tensor out = a.value();
    for (int i = 0; i < out.size(); ++i) out.v[i] *= b.value().v[i];
    auto an = a.node(), bn = b.node();
    return detail::make_op(std::move(out), {an, bn}, [an, bn](Node& n) {
        if (an->requires_grad) {
            Tensor g = n.grad;
            for (int i = 0; i < g.size(); ++i) g.v[i] *= bn->val.v[i];
            detail::accumulate(an, g);
        }
        if (bn->requires_grad) {
            Tensor g = n.grad;
            for (int i = 0; i < g.size(); ++i) g.v[i] *= an->val.v[i];
            detail::accumulate(bn, g);
        }
    });
}

inline Var scale(const Var& a, double c) {
    Tensor out = a.value();
    for (double& x : out.v) x *= c;
    auto an = a.node();
    return detail::make_op(std::move(out), {an}, [an, c](Node& n) {
        Tensor g = n.grad;
        for (double& x : g.v) x *= c;
        detail::accumulate(an, g);
    });
}

inline Var add_const(const Var& a, double c) {
    Tensor out = a.value();
    for (double& x : out.v) x += c;
    auto an = a.node();
    return detail::make_op(std::move(out), {an}, [an](Node& n) { detail::accumulate(an, n.grad); });
}

// Adds column vector b (r x 1) to every column of a.
inline Var add_bias_cols(const Var& a, const Var& b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (B.cols != 1 || B.rows != A.rows) throw ShapeError("add_bias_cols: bias shape mismatch");
    Tensor out = A;
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) out(i, j) += B(i, 0);
    auto an = a.node(), bn = b.node();
    return detail::make_op(std::move(out), {an, bn}, [an, bn](Node& n) {
        detail::accumulate(an, n.grad);
        if (bn->requires_grad) {
            Tensor g(bn->val.rows, 1);
            for (int i = 0; i < n.grad.rows; ++i)
                for (int j = 0; j < n.grad.cols; ++j) g(i, 0) += n.grad(i, j);
            detail::accumulate(bn, g);
        }
    });
}

inline Var relu(const Var& a) {
    Tensor out = a.value();
    for (double& x : out.v) x = x > 0.0 ? x : 0.0;
    auto an = a.node();
    return detail::make_op(std::move(out), {an}, [an](Node& n) {
        Tensor g = n.grad;
        for (int i = 0; i < g.size(); ++i)
            if (an->val.v[i] <= 0.0) g.v[i] = 0.0;
        detail::accumulate(an, g);
    });
}

inline Var exp_(const Var& a) {
    Tensor out = a.value();
    for (double& x : out.v) x = std::exp(x);
    auto an = a.node();
    Tensor saved = out;
    return detail::make_op(std::move(out), {an}, [an, saved](Node& n) {
        Tensor g = n.grad;
        for (int i = 0; i < g.size(); ++i) g.v[i] *= saved.v[i];
        detail::accumulate(an, g);
    });
}

inline Var log_(const Var& a) {
    Tensor out = a.value();
    for (double& x : out.v) x = std::log(x);
    auto an = a.node();
    return detail::make_op(std::move(out), {an}, [an](Node& n) {
        Tensor g = n.grad;
        for (int i = 0; i < g.size(); ++i) g.v[i] /= an->val.v[i];
        detail::accumulate(an, g);
    });
}

// Entrywise clamp to [-bound, bound]; subgradient 1 at the boundary.
inline Var clip(const Var& a, double bound) {
    if (bound <= 0.0) throw ContractError("clip: bound must be positive");
    Tensor out = a.value();
    for (double& x : out.v) x = std::clamp(x, -bound, bound);
    auto an = a.node();
    return detail::make_op(std::move(out), {an}, [an, bound](Node& n) {
        Tensor g = n.grad;
        for (int i = 0; i < g.size(); ++i)
            if (std::abs(an->val.v[i]) > bound) g.v[i] = 0.0;
        detail::accumulate(an, g);
    });
}

// Column-wise softmax of (x + mask). Mask entries are 0 or -inf; a fully
// masked column is a degenerate-mask error. Max-subtraction per column.
inline Var masked_softmax_cols(const Var& x, const Tensor& mask) {
    const Tensor& A = x.value();
    if (!A.same_shape(mask)) throw ShapeError("masked_softmax_cols: mask shape mismatch");
    Tensor out(A.rows, A.cols);
    for (int j = 0; j < A.cols; ++j) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < A.rows; ++i) {
            double z = A(i, j) + mask(i, j);
            if (z > mx) mx = z;
        }
        if (!std::isfinite(mx)) throw ContractError("masked_softmax_cols: fully masked column");
        double sum = 0.0;
        for (int i = 0; i < A.rows; ++i) {
            double z = A(i, j) + mask(i, j);
            double e = std::isinf(z) ? 0.0 : std::exp(z - mx);
            out(i, j) = e;
            sum += e;
        }
        for (int i = 0; i < A.rows; ++i) out(i, j) /= sum;
    }
    auto xn = x.node();
    Tensor saved = out;
    return detail::make_op(std::move(out), {xn}, [xn, saved](Node& n) {
        Tensor g(saved.rows, saved.cols);
        for (int j = 0; j < saved.cols; ++j) {
            double dot = 0.0;
            for (int i = 0; i < saved.rows; ++i) dot += saved(i, j) * n.grad(i, j);
            for (int i = 0; i < saved.rows; ++i) g(i, j) = saved(i, j) * (n.grad(i, j) - dot);
        }
        detail::accumulate(xn, g);
    });
}

inline Var softmax_cols(const Var& x) {
    return masked_softmax_cols(x, Tensor(x.rows(), x.cols(), 0.0));
}

// Row vector (1 x c) of column-wise log-sum-exp.
inline Var logsumexp_cols(const Var& x) {
    const Tensor& A = x.value();
    Tensor out(1, A.cols);
    for (int j = 0; j < A.cols; ++j) {
        double mx = A(0, j);
        for (int i = 1; i < A.rows; ++i) mx = std::max(mx, A(i, j));
        double s = 0.0;
        for (int i = 0; i < A.rows; ++i) s += std::exp(A(i, j) - mx);
        out(0, j) = mx + std::log(s);
    }
    auto xn = x.node();
    Tensor saved = out;
    return detail::make_op(std::move(out), {xn}, [xn, saved](Node& n) {
        const Tensor& A = xn->val;
        Tensor g(A.rows, A.cols);
        for (int j = 0; j < A.cols; ++j)
            for (int i = 0; i < A.rows; ++i)
                g(i, j) = n.grad(0, j) * std::exp(A(i, j) - saved(0, j));
        detail::accumulate(xn, g);
    });
}

// Per-column layer normalization with learned gain/bias (r x 1 each).
inline Var layer_norm_cols(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5) {
    const Tensor& A = x.value();
    if (gain.rows() != A.rows || gain.cols() != 1 || bias.rows() != A.rows || bias.cols() != 1)
        throw ShapeError("layer_norm_cols: gain/bias shape mismatch");
    Tensor xhat(A.rows, A.cols);
    Tensor inv_sd(1, A.cols);
    Tensor out(A.rows, A.cols);
    for (int j = 0; j < A.cols; ++j) {
        double mu = 0.0;
        for (int i = 0; i < A.rows; ++i) mu += A(i, j);
        mu /= A.rows;
        double var = 0.0;
        for (int i = 0; i < A.rows; ++i) var += (A(i, j) - mu) * (A(i, j) - mu);
        var /= A.rows;
        double isd = 1.0 / std::sqrt(var + eps);
        inv_sd(0, j) = isd;
        for (int i = 0; i < A.rows; ++i) {
            xhat(i, j) = (A(i, j) - mu) * isd;
            out(i, j) = gain.value()(i, 0) * xhat(i, j) + bias.value()(i, 0);
        }
    }
    auto xn = x.node(), gn = gain.node(), bn = bias.node();
    return detail::make_op(std::move(out), {xn, gn, bn}, [xn, gn, bn, xhat, inv_sd](Node& n) {
        const int R = xhat.rows, C = xhat.cols;
        if (gn->requires_grad) {
            Tensor dg(R, 1);
            for (int i = 0; i < R; ++i)
                for (int j = 0; j < C; ++j) dg(i, 0) += n.grad(i, j) * xhat(i, j);
            detail::accumulate(gn, dg);
        }
        if (bn->requires_grad) {
            Tensor db(R, 1);
            for (int i = 0; i < R; ++i)
                for (int j = 0; j < C; ++j) db(i, 0) += n.grad(i, j);
            detail::accumulate(bn, db);
        }
        if (xn->requires_grad) {
            Tensor dx(R, C);
            for (int j = 0; j < C; ++j) {
                double sum_gy = 0.0, sum_gyx = 0.0;
                for (int i = 0; i < R; ++i) {
                    double gy = n.grad(i, j) * gn->val(i, 0);
                    sum_gy += gy;
                    sum_gyx += gy * xhat(i, j);
                }
                for (int i = 0; i < R; ++i) {
                    double gy = n.grad(i, j) * gn->val(i, 0);
                    dx(i, j) = inv_sd(0, j) * (gy - sum_gy / R - xhat(i, j) * sum_gyx / R);
                }
            }
            detail::accumulate(xn, dx);
        }
    });
}

inline Var concat_rows(const Var& a, const Var& b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.cols != B.cols) throw ShapeError("concat_rows: column count mismatch");
    Tensor out(A.rows + B.rows, A.cols);
    for (int j = 0; j < A.cols; ++j) {
        for (int i = 0; i < A.rows; ++i) out(i, j) = A(i, j);
        for (int i = 0; i < B.rows; ++i) out(A.rows + i, j) = B(i, j);
    }
    auto an = a.node(), bn = b.node();
    return detail::make_op(std::move(out), {an, bn}, [an, bn](Node& n) {
        const int ar = an->val.rows, br = bn->val.rows, C = an->val.cols;
        if (an->requires_grad) {
            Tensor g(ar, C);
            for (int i = 0; i < ar; ++i)
                for (int j = 0; j < C; ++j) g(i, j) = n.grad(i, j);
            detail::accumulate(an, g);
        }
        if (bn->requires_grad) {
            Tensor g(br, C);
            for (int i = 0; i < br; ++i)
                for (int j = 0; j < C; ++j) g(i, j) = n.grad(ar + i, j);
            detail::accumulate(bn, g);
        }
    });
}

// Columns of `a` selected by index (embedding lookup); scatter-add on backward.
inline Var gather_cols(const Var& a, std::vector<int> idx) {
    const Tensor& A = a.value();
    for (int j : idx)
        if (j < 0 || j >= A.cols) throw ContractError("gather_cols: index out of range");
    Tensor out(A.rows, static_cast<int>(idx.size()));
    for (int j = 0; j < out.cols; ++j)
        for (int i = 0; i < A.rows; ++i) out(i, j) = A(i, idx[j]);
    auto an = a.node();
    return detail::make_op(std::move(out), {an}, [an, idx](Node& n) {
        Tensor g(an->val.rows, an->val.cols);
        for (int j = 0; j < static_cast<int>(idx.size()); ++j)
            for (int i = 0; i < g.rows; ++i) g(i, idx[j]) += n.grad(i, j);
        detail::accumulate(an, g);
    });
}

inline Var col(const Var& a, int j) { return gather_cols(a, {j}); }

// Copy of `a` with column j replaced by column vector c (r x 1).
inline Var set_col(const Var& a, int j, const Var& c) {
    const Tensor& A = a.value();
    if (j < 0 || j >= A.cols) throw ContractError("set_col: index out of range");
    if (c.rows() != A.rows || c.cols() != 1) throw ShapeError("set_col: column shape mismatch");
    Tensor out = A;
    for (int i = 0; i < A.rows; ++i) out(i, j) = c.value()(i, 0);
    auto an = a.node(), cn = c.node();
    return detail::make_op(std::move(out), {an, cn}, [an, cn, j](Node& n) {
        if (an->requires_grad) {
            Tensor g = n.grad;
            for (int i = 0; i < g.rows; ++i) g(i, j) = 0.0;
            detail::accumulate(an, g);
        }
        if (cn->requires_grad) {
            Tensor g(n.grad.rows, 1);
            for (int i = 0; i < g.rows; ++i) g(i, 0) = n.grad(i, j);
            detail::accumulate(cn, g);
        }
    });
}

inline Var sum(const Var& a) {
    double s = std::accumulate(a.value().v.begin(), a.value().v.end(), 0.0);
    auto an = a.node();
    return detail::make_op(Tensor::scalar(s), {an}, [an](Node& n) {
        Tensor g(an->val.rows, an->val.cols, n.grad.v[0]);
        detail::accumulate(an, g);
    });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / a.value().size()); }

// Row vector (1 x c) of per-column sums.
inline Var col_sums(const Var& a) {
    const Tensor& A = a.value();
    Tensor out(1, A.cols);
    for (int j = 0; j < A.cols; ++j)
        for (int i = 0; i < A.rows; ++i) out(0, j) += A(i, j);
    auto an = a.node();
    return detail::make_op(std::move(out), {an}, [an](Node& n) {
        Tensor g(an->val.rows, an->val.cols);
        for (int j = 0; j < g.cols; ++j)
            for (int i = 0; i < g.rows; ++i) g(i, j) = n.grad(0, j);
        detail::accumulate(an, g);
    });
}

// Single entry as a 1x1 tensor.
inline Var pick(const Var& a, int r, int c) {
    const Tensor& A = a.value();
    if (r < 0 || r >= A.rows || c < 0 || c >= A.cols) throw ContractError("pick: index out of range");
    auto an = a.node();
    return detail::make_op(Tensor::scalar(A(r, c)), {an}, [an, r, c](Node& n) {
        Tensor g(an->val.rows, an->val.cols);
        g(r, c) = n.grad.v[0];
        detail::accumulate(an, g);
    });
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar loss; gradients accumulate into every
// requires_grad node reachable from it. Parameter grads are not cleared
// first, so zero them between steps (see training.hpp).
inline void backward(const Var& loss) {
    if (loss.value().size() != 1) throw ContractError("backward: loss must be scalar");
    if (!loss.requires_grad()) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // order is post-order: parents before children; walk in reverse.
    for (Node* n : order)
        if (n != loss.node().get()) {
            n->ensure_grad();
            if (n->backprop) n->zero_grad();  // interior node: fresh accumulation
        }
    loss.node()->ensure_grad();
    loss.node()->zero_grad();
    loss.node()->grad.v[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop(**it);
}

// Central-difference gradient of f with respect to the entries of x.
inline Tensor finite_difference_gradients(const std::function<double()>& f, Tensor& x, double h) {
    if (h <= 0.0) throw ContractError("finite_difference_gradients: h must be positive");
    Tensor g(x.rows, x.cols);
    for (int i = 0; i < x.size(); ++i) {
        double orig = x.v[i];
        x.v[i] = orig + h;
        double fp = f();
        x.v[i] = orig - h;
        double fm = f();
        x.v[i] = orig;
        g.v[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

}  // namespace efa
