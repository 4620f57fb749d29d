#pragma once

// Linear latent-factor baselines: the natural parameter is an inner product
// between a center embedding and the (averaged) sum of context embeddings.
// Also the constructive attention-parameter builders showing each baseline
// is a special case of the attention model.

#include <vector>

#include "model.hpp"
#include "training.hpp"

namespace efa {

enum class FmVariant { CategoricalFM, GaussianFM, GaussianKNN_FM, PoissonV1, PoissonV2 };

struct FMParams {
    FmVariant variant = FmVariant::CategoricalFM;
    int K = 0, D = 0;
    Var rho;    // K x D center embeddings
    Var alpha;  // K x D context embeddings
    bool has_encoder = false;
    AttributeEncoder h;  // GaussianKNN_FM: embeddings are h(tau), not tables
    Direction direction = Direction::Bidirectional;
    int knn_k = 0;
    std::vector<std::vector<int>> neighbors;  // per site, self excluded
    double sigma2 = 1.0;                      // Gaussian variants

    std::vector<Var> parameters() const {
        std::vector<Var> out;
        if (has_encoder) {
            h.collect_parameters(out);
        } else {
            out.push_back(rho);
            out.push_back(alpha);
        }
        return out;
    }

    ExpFamHead head() const {
        switch (variant) {
            case FmVariant::CategoricalFM: return ExpFamHead::categorical(D);
            case FmVariant::GaussianFM:
            case FmVariant::GaussianKNN_FM: return ExpFamHead::gaussian(sigma2);
            case FmVariant::PoissonV1: return ExpFamHead::poisson_shifted();
            case FmVariant::PoissonV2: return ExpFamHead::poisson_one_plus();
        }
        throw ContractError("unreachable");
    }

    void check_tokens(const std::vector<int>& x) const {
        for (int t : x)
            if (t < 0 || t >= D) throw VocabError("token out of vocabulary");
    }
};

namespace detail {

// Column i holds weight 1/|c_i| on each context row j; c_i is j != i
// (bidirectional) or j < i (unidirectional). Empty context leaves the
// column zero, so the natural argument is 0 by convention.
inline Tensor context_weights(int I, Direction dir) {
    Tensor C(I, I, 0.0);
    for (int i = 0; i < I; ++i) {
        int n = dir == Direction::Bidirectional ? I - 1 : i;
        if (n == 0) continue;
        double w = 1.0 / n;
        int hi = dir == Direction::Bidirectional ? I : i;
        for (int j = 0; j < hi; ++j)
            if (j != i) C(j, i) = w;
    }
    return C;
}

}  // namespace detail

// logits_i = (1/|c_i|) rho^T sum_{j in c_i} alpha_{x_j}; D x I, differentiable.
inline Var fm_categorical_logits_var(const FMParams& p, const std::vector<int>& x) {
    if (p.variant != FmVariant::CategoricalFM) throw ContractError("fm_categorical_logits: wrong variant");
    p.check_tokens(x);
    const int I = static_cast<int>(x.size());
    Var A = gather_cols(p.alpha, x);
    Var ctx = matmul(A, Var::constant(detail::context_weights(I, p.direction)));
    return matmul_tn(p.rho, ctx);
}

inline Tensor fm_categorical_logits(const FMParams& p, const std::vector<int>& x) {
    return fm_categorical_logits_var(p, x).value();
}

// natural argument_i = (1/|c_i|) rho_{x_i}^T sum_{j in c_i} alpha_{x_j} y_j;
// 1 x I, differentiable. Shared by the Poisson variants and GaussianFM.
inline Var fm_value_natural_var(const FMParams& p, const std::vector<int>& x, const std::vector<double>& y) {
    if (p.variant == FmVariant::CategoricalFM || p.variant == FmVariant::GaussianKNN_FM)
        throw ContractError("fm_value_natural: wrong variant");
    p.check_tokens(x);
    if (x.size() != y.size()) throw ShapeError("fm_value_natural: x/y length mismatch");
    const int I = static_cast<int>(x.size());
    Var A = gather_cols(p.alpha, x);
    Tensor Yb(p.K, I);
    for (int r = 0; r < p.K; ++r)
        for (int i = 0; i < I; ++i) Yb(r, i) = y[i];
    Var ctx = matmul(mul(A, Var::constant(Yb)), Var::constant(detail::context_weights(I, p.direction)));
    return col_sums(mul(gather_cols(p.rho, x), ctx));
}

inline Tensor fm_poisson_natural(const FMParams& p, const std::vector<int>& x, const std::vector<double>& y) {
    if (p.variant != FmVariant::PoissonV1 && p.variant != FmVariant::PoissonV2)
        throw ContractError("fm_poisson_natural: wrong variant");
    return fm_value_natural_var(p, x, y).value();
}

// mean_i = h(tau_i)^T sum_{j in KNN(k,i)} h(tau_j) y_j; 1 x I, differentiable.
inline Var fm_gaussian_mean_var(const FMParams& p, const std::vector<double>& y, const Tensor& tau) {
    if (p.variant != FmVariant::GaussianKNN_FM) throw ContractError("fm_gaussian_mean: wrong variant");
    const int I = tau.cols;
    if (static_cast<int>(y.size()) != I) throw ShapeError("fm_gaussian_mean: y/tau length mismatch");
    if (p.knn_k < 1 || p.knn_k >= I) throw ContractError("fm_gaussian_mean: need 1 <= k < I");
    if (static_cast<int>(p.neighbors.size()) != I) throw ContractError("fm_gaussian_mean: neighbor lists missing");
    Var H = p.h.encode(Var::constant(tau));
    Tensor W(I, I, 0.0);
    for (int i = 0; i < I; ++i)
        for (int j : p.neighbors[i]) {
            if (j == i) throw ContractError("fm_gaussian_mean: neighbor list contains self");
            W(j, i) = y[j];
        }
    Var ctx = matmul(H, Var::constant(W));
    return col_sums(mul(H, ctx));
}

inline Tensor fm_gaussian_mean(const FMParams& p, const std::vector<double>& y, const Tensor& tau) {
    return fm_gaussian_mean_var(p, y, tau).value();
}

// Summed NLL over one sequence, differentiable; the baselines' training
// objective mirrors the attention model's.
inline Var fm_sequence_nll(const FMParams& p, const Sequence& seq, const Tensor& attributes) {
    switch (p.variant) {
        case FmVariant::CategoricalFM: {
            Var lg = fm_categorical_logits_var(p, seq.x);
            Var total = Var::constant(Tensor::scalar(0.0));
            Var lse = logsumexp_cols(lg);
            for (int i = 0; i < static_cast<int>(seq.x.size()); ++i)
                total = sub(total, sub(pick(lg, seq.x[i], i), pick(lse, 0, i)));
            return total;
        }
        case FmVariant::GaussianKNN_FM:
            return p.head().nll_sum(fm_gaussian_mean_var(p, seq.y, attributes), seq.y);
        case FmVariant::GaussianFM:
        case FmVariant::PoissonV1:
        case FmVariant::PoissonV2:
            return p.head().nll_sum(fm_value_natural_var(p, seq.x, seq.y), seq.y);
    }
    throw ContractError("unreachable");
}

inline Objective objective_for(const FMParams& p) {
    Objective o;
    o.params = p.parameters();
    o.sequence_nll = [&p](const Sequence& s, const Tensor& a) { return fm_sequence_nll(p, s, a); };
    return o;
}

inline Predictor predictor_for(const FMParams& p) {
    Predictor pred;
    ExpFamHead head = p.head();
    pred.head = head.kind;
    switch (p.variant) {
        case FmVariant::CategoricalFM:
            pred.mean = nullptr;
            pred.log_prob = [&p, head](const Sequence& s, const Tensor&, int i) {
                Tensor lg = fm_categorical_logits(p, s.x);
                std::vector<double> logits(p.D);
                for (int d = 0; d < p.D; ++d) logits[d] = lg(d, i);
                return head.log_prob_logits(logits, s.x[i]);
            };
            break;
        case FmVariant::GaussianKNN_FM:
            pred.mean = [&p](const Sequence& s, const Tensor& a, int i) {
                return fm_gaussian_mean(p, s.y, a)(0, i);
            };
            pred.log_prob = [&p, head](const Sequence& s, const Tensor& a, int i) {
                return head.log_prob(fm_gaussian_mean(p, s.y, a)(0, i), s.y[i]);
            };
            break;
        default:
            pred.mean = [&p, head](const Sequence& s, const Tensor&, int i) {
                return head.mean(fm_value_natural_var(p, s.x, s.y).value()(0, i));
            };
            pred.log_prob = [&p, head](const Sequence& s, const Tensor&, int i) {
                return head.log_prob(fm_value_natural_var(p, s.x, s.y).value()(0, i), s.y[i]);
            };
            break;
    }
    return pred;
}

// ---------------------------------------------------------------------------
// Constructive embeddings of the baselines into the attention model
// ---------------------------------------------------------------------------

enum class Proposition { P1, P2, P3 };

namespace detail {

inline Tensor identity(int n) {
    Tensor t(n, n, 0.0);
    for (int i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

inline Tensor diag_flags(int n, int zero_from) {  // diag(1,...,1,0,...,0)
    Tensor t(n, n, 0.0);
    for (int i = 0; i < zero_from; ++i) t(i, i) = 1.0;
    return t;
}

}  // namespace detail

// Builds an attention model whose forward map coincides with the baseline's
// closed form for every bidirectional sequence of length I. The categorical
// case depends on I through the delta rescale; value cases through the
// 1/(I-1) context average folded into the context-embedding block.
inline EfaModel construct_equivalent_efa(Proposition prop, const FMParams& p, int I) {
    if (I < 2) throw ContractError("construct_equivalent_efa: I >= 2 required");
    EfaModel m;
    switch (prop) {
        case Proposition::P1: {
            if (p.variant != FmVariant::CategoricalFM) throw ContractError("P1 needs CategoricalFM");
            auto& c = m.cat;
            m.has_cat = true;
            c.K = p.K;
            c.D = p.D;
            c.direction = Direction::Bidirectional;
            c.attn.kind = AttnKind::Softmax;
            // beta columns are the context table; MASK column zero; zero
            // positional offsets. Zero Q/K make attention uniform over the I
            // live rows (the masked row contributes 0), so X'_ii is the
            // context average scaled by (I-1)/I; delta absorbs I/(I-1).
            Tensor beta(p.K, p.D + 1, 0.0);
            const Tensor& a = p.alpha.value();
            for (int r = 0; r < p.K; ++r)
                for (int d = 0; d < p.D; ++d) beta(r, d) = a(r, d);
            c.beta = Var::param(beta);
            Tensor delta = p.rho.value();
            double f = static_cast<double>(I) / (I - 1);
            for (double& v : delta.v) v *= f;
            c.delta = Var::param(delta);
            AttentionLayerParams layer;
            HeadParams head;
            head.wq = Var::param(Tensor(p.K, p.K, 0.0));
            head.wk = Var::param(Tensor(p.K, p.K, 0.0));
            head.wv = Var::param(detail::identity(p.K));
            layer.heads.push_back(head);
            c.layers.push_back(layer);
            break;
        }
        case Proposition::P2: {
            if (p.variant != FmVariant::GaussianKNN_FM || !p.has_encoder)
                throw ContractError("P2 needs GaussianKNN_FM with encoder");
            auto& v = m.val;
            m.has_val = true;
            m.head_y = ExpFamHead::gaussian(p.sigma2);
            const int d = p.K + 1;
            v.K = p.K;
            v.use_tokens = false;
            v.use_attributes = true;
            v.encoder = p.h;
            v.direction = Direction::Bidirectional;
            v.attn.kind = AttnKind::Linear;
            v.lam1.kind = ValueEmbedder::Kind::IdentityZero;
            v.lam1.Kp = 1;
            AttentionLayerParams layer;
            HeadParams head;
            // Q/K drop the value row, V keeps only it; the score for context
            // j at target i is h(tau_j)^T h(tau_i)/d, and the readout rescale
            // by d cancels the denominator.
            head.wq = Var::param(detail::diag_flags(d, p.K));
            head.wk = Var::param(detail::diag_flags(d, p.K));
            Tensor wv(d, d, 0.0);
            wv(d - 1, d - 1) = 1.0;
            head.wv = Var::param(wv);
            layer.heads.push_back(head);
            v.layers.push_back(layer);
            v.lam2.kind = Readout::Kind::ScaledCoordinate;
            v.lam2.coord = d - 1;
            v.lam2.coef = static_cast<double>(d);
            break;
        }
        case Proposition::P3: {
            if (p.variant != FmVariant::PoissonV1 && p.variant != FmVariant::PoissonV2)
                throw ContractError("P3 needs a Poisson variant");
            auto& v = m.val;
            m.has_val = true;
            m.head_y = p.head();
            const int K = p.K, d = 2 * K + 1;
            v.K = K;
            v.D = p.D;
            v.use_tokens = true;
            v.use_delta_bar = true;
            v.beta_bar = Var::param(p.rho.value());
            Tensor db = p.alpha.value();  // context block carries the 1/(I-1)
            for (double& x : db.v) x /= (I - 1);
            v.delta_bar = Var::param(db);
            v.direction = Direction::Bidirectional;
            v.attn.kind = AttnKind::Linear;
            v.lam1.kind = ValueEmbedder::Kind::IdentityZero;
            v.lam1.Kp = 1;
            AttentionLayerParams layer;
            HeadParams head;
            // Q selects the context block in place; K moves the center block
            // into that slot, so score(j, i) = (alpha_{x_j}/(I-1))^T rho_{x_i}/d.
            Tensor wq(d, d, 0.0);
            for (int r = 0; r < K; ++r) wq(K + r, K + r) = 1.0;
            head.wq = Var::param(wq);
            Tensor wk(d, d, 0.0);
            for (int r = 0; r < K; ++r) wk(K + r, r) = 1.0;
            head.wk = Var::param(wk);
            Tensor wv(d, d, 0.0);
            wv(d - 1, d - 1) = 1.0;
            head.wv = Var::param(wv);
            layer.heads.push_back(head);
            v.layers.push_back(layer);
            v.lam2.kind = Readout::Kind::ScaledCoordinate;
            v.lam2.coord = d - 1;
            v.lam2.coef = static_cast<double>(d);
            break;
        }
    }
    return m;
}

}  // namespace efa
