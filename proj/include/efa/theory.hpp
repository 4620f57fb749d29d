#pragma once

// Executable diagnostics for the identifiability and generalization theory:
// embedding extraction, linear-map probes, diversity-matrix conditioning,
// the layerwise operator-norm functional, clipping, and the sample
// complexity bound expression.

#include <cmath>
#include <limits>
#include <vector>

#include "model.hpp"

namespace efa {

struct StructureError : std::runtime_error {
    explicit StructureError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Dense linear algebra helpers (small matrices only)
// ---------------------------------------------------------------------------

// Largest singular value by power iteration on A^T A; tolerance 1e-9.
inline double operator_norm(const Tensor& a) {
    const int n = a.cols;
    if (a.size() == 0) return 0.0;
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i) v[i] = 1.0 + 0.01 * i;  // deterministic, not axis-aligned
    double lam = 0.0;
    for (int iter = 0; iter < 100000; ++iter) {
        // w = A^T (A v)
        std::vector<double> av(a.rows, 0.0), w(n, 0.0);
        for (int r = 0; r < a.rows; ++r)
            for (int c = 0; c < n; ++c) av[r] += a(r, c) * v[c];
        for (int c = 0; c < n; ++c)
            for (int r = 0; r < a.rows; ++r) w[c] += a(r, c) * av[r];
        double norm = 0.0;
        for (double x : w) norm += x * x;
        norm = std::sqrt(norm);
        if (norm == 0.0) return 0.0;
        double new_lam = 0.0;
        for (int i = 0; i < n; ++i) new_lam += v[i] * w[i];
        for (int i = 0; i < n; ++i) v[i] = w[i] / norm;
        if (iter > 0 && std::abs(new_lam - lam) <= 1e-9 * std::max(1.0, std::abs(new_lam))) {
            lam = new_lam;
            break;
        }
        lam = new_lam;
    }
    return std::sqrt(std::max(0.0, lam));
}

// Solve A x = b by Gaussian elimination with partial pivoting; A square.
inline std::vector<double> solve_linear(Tensor a, std::vector<double> b, bool* singular = nullptr) {
    const int n = a.rows;
    if (a.cols != n || static_cast<int>(b.size()) != n) throw ShapeError("solve_linear: square system required");
    if (singular) *singular = false;
    for (int col = 0; col < n; ++col) {
        int piv = col;
        for (int r = col + 1; r < n; ++r)
            if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
        if (std::abs(a(piv, col)) < 1e-12) {
            if (singular) *singular = true;
            a(piv, col) = a(piv, col) >= 0 ? 1e-12 : -1e-12;
        }
        if (piv != col) {
            for (int c = 0; c < n; ++c) std::swap(a(col, c), a(piv, c));
            std::swap(b[col], b[piv]);
        }
        for (int r = col + 1; r < n; ++r) {
            double f = a(r, col) / a(col, col);
            if (f == 0.0) continue;
            for (int c = col; c < n; ++c) a(r, c) -= f * a(col, c);
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n);
    for (int r = n - 1; r >= 0; --r) {
        double s = b[r];
        for (int c = r + 1; c < n; ++c) s -= a(r, c) * x[c];
        x[r] = s / a(r, r);
    }
    return x;
}

// Least-squares fit of A in  target ~= A * basis  via normal equations:
// A = T B^T (B B^T)^{-1}, solved row by row.
inline Tensor least_squares_map(const Tensor& target, const Tensor& basis, bool* singular = nullptr) {
    if (target.cols != basis.cols) throw ShapeError("least_squares_map: column count mismatch");
    const int k = basis.rows;
    Tensor gram(k, k, 0.0);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
            double s = 0.0;
            for (int c = 0; c < basis.cols; ++c) s += basis(i, c) * basis(j, c);
            gram(i, j) = s;
        }
    Tensor a(target.rows, k);
    bool any_singular = false;
    for (int r = 0; r < target.rows; ++r) {
        std::vector<double> rhs(k, 0.0);
        for (int i = 0; i < k; ++i)
            for (int c = 0; c < basis.cols; ++c) rhs[i] += basis(i, c) * target(r, c);
        bool sing = false;
        auto row = solve_linear(gram, rhs, &sing);
        any_singular = any_singular || sing;
        for (int i = 0; i < k; ++i) a(r, i) = row[i];
    }
    if (singular) *singular = any_singular;
    return a;
}

inline double frobenius(const Tensor& a) {
    double s = 0.0;
    for (double x : a.v) s += x * x;
    return std::sqrt(s);
}

// Condition number via cyclic Jacobi on the Gram matrix.
inline double condition_number(const Tensor& a) {
    const int n = a.cols;
    Tensor g(n, n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int r = 0; r < a.rows; ++r) s += a(r, i) * a(r, j);
            g(i, j) = s;
        }
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += g(p, q) * g(p, q);
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                if (std::abs(g(p, q)) < 1e-18) continue;
                double theta = (g(q, q) - g(p, p)) / (2.0 * g(p, q));
                double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (int i = 0; i < n; ++i) {
                    double gip = g(i, p), giq = g(i, q);
                    g(i, p) = c * gip - s * giq;
                    g(i, q) = s * gip + c * giq;
                }
                for (int i = 0; i < n; ++i) {
                    double gpi = g(p, i), gqi = g(q, i);
                    g(p, i) = c * gpi - s * gqi;
                    g(q, i) = s * gpi + c * gqi;
                }
            }
    }
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (int i = 0; i < n; ++i) {
        double ev = std::max(0.0, g(i, i));
        lo = std::min(lo, ev);
        hi = std::max(hi, ev);
    }
    if (lo <= hi * 1e-30) return std::numeric_limits<double>::infinity();
    return std::sqrt(hi / lo);
}

inline std::vector<double> singular_values(const Tensor& a) {
    // eigenvalues of the Gram matrix via the same Jacobi sweep
    const int n = a.cols;
    Tensor g(n, n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int r = 0; r < a.rows; ++r) s += a(r, i) * a(r, j);
            g(i, j) = s;
        }
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += g(p, q) * g(p, q);
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                if (std::abs(g(p, q)) < 1e-18) continue;
                double theta = (g(q, q) - g(p, p)) / (2.0 * g(p, q));
                double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (int i = 0; i < n; ++i) {
                    double gip = g(i, p), giq = g(i, q);
                    g(i, p) = c * gip - s * giq;
                    g(i, q) = s * gip + c * giq;
                }
                for (int i = 0; i < n; ++i) {
                    double gpi = g(p, i), gqi = g(q, i);
                    g(p, i) = c * gpi - s * gqi;
                    g(q, i) = s * gpi + c * gqi;
                }
            }
    }
    std::vector<double> sv(n);
    for (int i = 0; i < n; ++i) sv[i] = std::sqrt(std::max(0.0, g(i, i)));
    std::sort(sv.rbegin(), sv.rend());
    return sv;
}

// ---------------------------------------------------------------------------
// Embedding extraction
// ---------------------------------------------------------------------------

struct Embeddings {
    Tensor H;      // masked-pass context embedding at position i (K x 1)
    Tensor e;      // center embedding table (K x D)
    Tensor K_emb;  // value readout's penultimate vector (d_j x 1)
    Tensor L_vec;  // value readout's final linear map (1 x d_j)
};

inline Embeddings extract_embeddings(const EfaModel& model, const Sequence& seq, const Tensor& attributes, int i) {
    Embeddings out;
    if (model.has_cat) {
        out.H = model.cat.context_embedding(seq.x, i);
        out.e = model.cat.delta.value();
    }
    if (model.has_val) {
        if (!model.val.lam2.affine_readout())
            throw StructureError("extract_embeddings: value readout must be in affine mode");
        auto sb = model.val.shared_blocks(seq, attributes);
        Var lam = set_col(sb.lam_base, i, model.val.lam1.mask_column());
        Var Y = sb.has_top ? concat_rows(sb.top, lam) : lam;
        if (model.val.use_positional) {
            std::vector<int> pcols(seq.length());
            for (int j = 0; j < seq.length(); ++j) pcols[j] = j;
            Y = add(Y, gather_cols(model.val.pos, pcols));
        }
        Var Hm = attention_stack(Y, model.val.layers, direction_mask(model.val.direction), model.val.attn);
        out.K_emb = model.val.lam2.penultimate(col(Hm, i)).value();
        out.L_vec = model.val.lam2.Ws.back().value();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Identifiability probes
// ---------------------------------------------------------------------------

struct ProbeContext {
    Sequence seq;
    int i = 0;
};

struct IdentifiabilityProbeReport {
    Tensor map_H, map_e, map_K;                      // fitted linear maps
    double res_H = 0.0, res_e = 0.0, res_K = 0.0, res_L = 0.0;
    int probe_count = 0;
    bool conditioning_warning = false;
    bool has_cat = false, has_val = false;
};

inline IdentifiabilityProbeReport linear_identifiability_probe(const EfaModel& a, const EfaModel& b,
                                                               const std::vector<ProbeContext>& probes,
                                                               const Tensor& attributes = Tensor()) {
    if (probes.empty()) throw ContractError("probe: no contexts");
    IdentifiabilityProbeReport rep;
    rep.probe_count = static_cast<int>(probes.size());
    rep.has_cat = a.has_cat && b.has_cat;
    rep.has_val = a.has_val && b.has_val;
    auto rel = [](const Tensor& target, const Tensor& map, const Tensor& basis) {
        Tensor pred(target.rows, target.cols, 0.0);
        for (int r = 0; r < target.rows; ++r)
            for (int c = 0; c < target.cols; ++c) {
                double s = 0.0;
                for (int k = 0; k < basis.rows; ++k) s += map(r, k) * basis(k, c);
                pred(r, c) = s;
            }
        Tensor diff = target;
        for (int i = 0; i < diff.size(); ++i) diff.v[i] -= pred.v[i];
        double denom = frobenius(target);
        return denom == 0.0 ? 0.0 : frobenius(diff) / denom;
    };
    if (rep.has_cat) {
        const int K = a.cat.K, P = rep.probe_count;
        Tensor HA(K, P), HB(K, P);
        for (int p = 0; p < P; ++p) {
            Tensor ha = a.cat.context_embedding(probes[p].seq.x, probes[p].i);
            Tensor hb = b.cat.context_embedding(probes[p].seq.x, probes[p].i);
            for (int r = 0; r < K; ++r) {
                HA(r, p) = ha(r, 0);
                HB(r, p) = hb(r, 0);
            }
        }
        bool sing = false;
        rep.map_H = least_squares_map(HA, HB, &sing);
        rep.conditioning_warning = rep.conditioning_warning || sing;
        rep.res_H = rel(HA, rep.map_H, HB);
        rep.map_e = least_squares_map(a.cat.delta.value(), b.cat.delta.value(), &sing);
        rep.conditioning_warning = rep.conditioning_warning || sing;
        rep.res_e = rel(a.cat.delta.value(), rep.map_e, b.cat.delta.value());
    }
    if (rep.has_val) {
        std::vector<Tensor> ka, kb;
        for (const auto& pc : probes) {
            ka.push_back(extract_embeddings(a, pc.seq, attributes, pc.i).K_emb);
            kb.push_back(extract_embeddings(b, pc.seq, attributes, pc.i).K_emb);
        }
        const int dj = ka[0].rows, P = rep.probe_count;
        Tensor KA(dj, P), KB(dj, P);
        for (int p = 0; p < P; ++p)
            for (int r = 0; r < dj; ++r) {
                KA(r, p) = ka[p](r, 0);
                KB(r, p) = kb[p](r, 0);
            }
        bool sing = false;
        rep.map_K = least_squares_map(KA, KB, &sing);
        rep.conditioning_warning = rep.conditioning_warning || sing;
        rep.res_K = rel(KA, rep.map_K, KB);
        // kappa invariance: K_A = C K_B forces L_B = C^T L_A
        const Tensor& la = a.val.lam2.Ws.back().value();
        const Tensor& lb = b.val.lam2.Ws.back().value();
        Tensor pred(1, dj, 0.0);
        for (int c = 0; c < dj; ++c)
            for (int r = 0; r < dj; ++r) pred(0, c) += rep.map_K(r, c) * la(0, r);
        double num = 0.0, den = 0.0;
        for (int c = 0; c < dj; ++c) {
            num += (lb(0, c) - pred(0, c)) * (lb(0, c) - pred(0, c));
            den += lb(0, c) * lb(0, c);
        }
        rep.res_L = den == 0.0 ? 0.0 : std::sqrt(num / den);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Diversity matrices
// ---------------------------------------------------------------------------

struct DiversityReport {
    double cond_L = 0.0, cond_M = 0.0, cond_N = 0.0;
    bool L_singular = false, M_singular = false, N_singular = false;
};

// L: columns e(x_A) - e(x_B) over K token pairs; M: columns
// [-log sum_x' exp(H^T e(x')); H] over K+1 probe contexts; N: columns K_emb
// over d_j probe contexts.
inline DiversityReport diversity_matrices(const EfaModel& model, const std::vector<std::pair<int, int>>& token_pairs,
                                          const std::vector<ProbeContext>& probes,
                                          const Tensor& attributes = Tensor()) {
    DiversityReport rep;
    if (model.has_cat) {
        const int K = model.cat.K;
        if (static_cast<int>(token_pairs.size()) < K) throw ContractError("diversity: need K token pairs");
        if (static_cast<int>(probes.size()) < K + 1) throw ContractError("diversity: need K+1 probe contexts");
        const Tensor& e = model.cat.delta.value();
        Tensor L(K, K);
        for (int c = 0; c < K; ++c) {
            auto [xa, xb] = token_pairs[c];
            for (int r = 0; r < K; ++r) L(r, c) = e(r, xa) - e(r, xb);
        }
        rep.cond_L = condition_number(L);
        rep.L_singular = !std::isfinite(rep.cond_L);
        Tensor M(K + 1, K + 1);
        for (int c = 0; c <= K; ++c) {
            Tensor h = model.cat.context_embedding(probes[c].seq.x, probes[c].i);
            double mx = -std::numeric_limits<double>::infinity();
            std::vector<double> dots(model.cat.D);
            for (int d = 0; d < model.cat.D; ++d) {
                double s = 0.0;
                for (int r = 0; r < K; ++r) s += h(r, 0) * e(r, d);
                dots[d] = s;
                mx = std::max(mx, s);
            }
            double lse = 0.0;
            for (double s : dots) lse += std::exp(s - mx);
            M(0, c) = -(mx + std::log(lse));
            for (int r = 0; r < K; ++r) M(r + 1, c) = h(r, 0);
        }
        rep.cond_M = condition_number(M);
        rep.M_singular = !std::isfinite(rep.cond_M);
    }
    if (model.has_val) {
        Tensor k0 = extract_embeddings(model, probes[0].seq, attributes, probes[0].i).K_emb;
        const int dj = k0.rows;
        if (static_cast<int>(probes.size()) < dj) throw ContractError("diversity: need d_j probe contexts");
        Tensor N(dj, dj);
        for (int c = 0; c < dj; ++c) {
            Tensor k = extract_embeddings(model, probes[c].seq, attributes, probes[c].i).K_emb;
            for (int r = 0; r < dj; ++r) N(r, c) = k(r, 0);
        }
        rep.cond_N = condition_number(N);
        rep.N_singular = !std::isfinite(rep.cond_N);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Norm functional, clipping, bound
// ---------------------------------------------------------------------------

// max over layers of {max_m max(||Q_m||, ||K_m||) + sum_m ||V_m|| + ||W1|| +
// ||W2||} + ||G1|| + ||G2||; missing pieces contribute 0.
inline double theta_norm(const std::vector<AttentionLayerParams>& layers, const AttributeEncoder* encoder = nullptr) {
    double best = 0.0;
    for (const auto& layer : layers) {
        double qk = 0.0, vsum = 0.0;
        for (const auto& h : layer.heads) {
            qk = std::max(qk, std::max(operator_norm(h.wq.value()), operator_norm(h.wk.value())));
            vsum += operator_norm(h.wv.value());
        }
        double term = qk + vsum;
        if (layer.has_ff) term += operator_norm(layer.ff_w1.value()) + operator_norm(layer.ff_w2.value());
        best = std::max(best, term);
    }
    if (encoder) best += operator_norm(encoder->g1.value()) + operator_norm(encoder->g2.value());
    return best;
}

inline Tensor clip_tensor(const Tensor& x, double bound) {
    if (bound <= 0.0) throw ContractError("clip: bound must be positive");
    Tensor out = x;
    for (double& v : out.v) v = std::max(-bound, std::min(bound, v));
    return out;
}

struct GeneralizationBoundInputs {
    double B_y = 1.0, B = 1.0, R = 1.0;
    int L = 1, M = 1, D = 1, Dp = 1, K = 1, Kp = 1, tau_dim = 1, F = 1;
    double xi = 0.05;

    void validate() const {
        if (B_y <= 0 || B <= 0 || R <= 0) throw ContractError("bound: B_y, B, R must be positive");
        if (L < 1 || M < 1 || D < 1 || Dp < 1 || K < 1 || Kp < 1 || tau_dim < 1 || F < 1)
            throw ContractError("bound: integer inputs must be positive");
        if (xi <= 0.0 || xi >= 1.0) throw ContractError("bound: xi must lie in (0,1)");
    }
};

// Complexity expression with the big-O constant fixed to 1; a relative
// measure, not an absolute guarantee.
inline double generalization_bound(const GeneralizationBoundInputs& in) {
    in.validate();
    double iota = std::log(2.0 + std::max({in.B, in.R, 1.0 / (2.0 * in.B_y)}));
    double dims = static_cast<double>(in.L) *
                      (static_cast<double>(in.L) * (3.0 * in.M * in.D * in.D + 2.0 * in.D * in.Dp) +
                       static_cast<double>(in.Kp) * (in.K + in.tau_dim));
    return in.B_y * in.B_y * std::sqrt((43.0 * dims * iota + std::log(1.0 / in.xi)) / in.F);
}

}  // namespace efa
