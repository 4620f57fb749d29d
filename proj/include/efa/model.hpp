#pragma once

// The EFA model: categorical next-token component (eta) and exponential
// family value component (kappa), their joint likelihood, and the three
// worked instantiations.

#include <optional>
#include <vector>

#include "attention.hpp"
#include "expfam.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace efa {

enum class Direction { Unidirectional, Bidirectional };

inline MaskKind direction_mask(Direction d) {
    return d == Direction::Unidirectional ? MaskKind::Causal : MaskKind::None;
}

struct VocabError : std::runtime_error {
    explicit VocabError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

struct Sequence {
    std::vector<int> x;     // tokens in [0, D); may be empty for value-only models
    std::vector<double> y;  // values; may be empty for categorical-only models

    int length() const { return static_cast<int>(x.empty() ? y.size() : x.size()); }
};

struct SequenceBatch {
    std::vector<Sequence> seqs;
    Tensor attributes;  // tau_dim x I, shared across elements; 0x0 when absent

    bool has_attributes() const { return attributes.size() > 0; }
    int size() const { return static_cast<int>(seqs.size()); }
    int max_length() const {
        int m = 0;
        for (const auto& s : seqs) m = std::max(m, s.length());
        return m;
    }
};

// ---------------------------------------------------------------------------
// Sub-networks
// ---------------------------------------------------------------------------

// g(tau) = G2 relu(G1 tau)
struct AttributeEncoder {
    Var g1;  // Kp x tau_dim
    Var g2;  // K x Kp

    Var encode(const Var& tau) const { return matmul(g2, relu(matmul(g1, tau))); }
    Tensor encode_values(const Tensor& tau) const {
        return encode(Var::constant(tau)).value();
    }
    void collect_parameters(std::vector<Var>& out) const {
        out.push_back(g1);
        out.push_back(g2);
    }
};

inline Var attribute_encode(const AttributeEncoder& enc, const Var& tau) { return enc.encode(tau); }

// lambda_1: scalar value -> K'-vector, with a dedicated MASK embedding.
struct ValueEmbedder {
    enum class Kind {
        IdentityZero,  // K' = 1, lambda_1(y) = y, MASK -> 0
        AffineChain,   // learned affine(+relu) chain from the scalar value
        Table,         // per-integer-value learned embedding
    };
    Kind kind = Kind::IdentityZero;
    int Kp = 1;
    std::vector<Var> Ws, bs;  // AffineChain layers; relu between, linear last
    Var mask_emb;             // Kp x 1 learned MASK embedding (unless zero_mask)
    bool zero_mask = false;
    Var table;      // Kp x n_values (Table kind); MASK uses mask_emb
    int value_lo = 0;  // Table: integer value mapped to column (y - value_lo)

    // K' x n block of embedded values.
    Var embed_row(const std::vector<double>& ys) const {
        const int n = static_cast<int>(ys.size());
        Tensor yrow(1, n);
        for (int i = 0; i < n; ++i) yrow.v[i] = ys[i];
        switch (kind) {
            case Kind::IdentityZero:
                return Var::constant(yrow);
            case Kind::AffineChain: {
                Var h = Var::constant(yrow);
                for (size_t l = 0; l < Ws.size(); ++l) {
                    h = add_bias_cols(matmul(Ws[l], h), bs[l]);
                    if (l + 1 < Ws.size()) h = relu(h);
                }
                return h;
            }
            case Kind::Table: {
                std::vector<int> idx(n);
                for (int i = 0; i < n; ++i) {
                    int v = static_cast<int>(ys[i]) - value_lo;
                    if (v < 0 || v >= table.cols() || ys[i] != std::floor(ys[i]))
                        throw SupportError("ValueEmbedder: value outside table");
                    idx[i] = v;
                }
                return gather_cols(table, idx);
            }
        }
        throw ContractError("unreachable");
    }

    Var mask_column() const {
        if (zero_mask || kind == Kind::IdentityZero) return Var::constant(Tensor(Kp, 1, 0.0));
        return mask_emb;
    }

    void collect_parameters(std::vector<Var>& out) const {
        for (const auto& w : Ws) out.push_back(w);
        for (const auto& b : bs) out.push_back(b);
        if (kind == Kind::Table) out.push_back(table);
        if (!zero_mask && kind != Kind::IdentityZero && mask_emb.defined()) out.push_back(mask_emb);
    }
};

// lambda_2: readout from the masked column to the natural parameter.
struct Readout {
    enum class Kind { Mlp, ScaledCoordinate };
    Kind kind = Kind::Mlp;
    std::vector<Var> Ws, bs;  // Mlp; relu between layers, linear last
    bool final_bias = true;   // false = affine-readout mode (kappa = L^T z exactly)
    int coord = 0;            // ScaledCoordinate: kappa = coef * z[coord]
    double coef = 1.0;

    Var apply(const Var& z) const {
        if (kind == Kind::ScaledCoordinate) return scale(pick(z, coord, 0), coef);
        Var h = penultimate(z);
        Var out = matmul(Ws.back(), h);
        if (final_bias) out = add_bias_cols(out, bs.back());
        return out;
    }

    // Input to the final linear layer (the Assumption-1 embedding).
    Var penultimate(const Var& z) const {
        if (kind != Kind::Mlp) throw ContractError("penultimate: only for Mlp readout");
        Var h = z;
        for (size_t l = 0; l + 1 < Ws.size(); ++l) h = relu(add_bias_cols(matmul(Ws[l], h), bs[l]));
        return h;
    }

    bool affine_readout() const { return kind == Kind::Mlp && !final_bias; }

    void collect_parameters(std::vector<Var>& out) const {
        if (kind != Kind::Mlp) return;
        for (const auto& w : Ws) out.push_back(w);
        for (size_t l = 0; l < bs.size(); ++l)
            if (l + 1 < Ws.size() || final_bias) out.push_back(bs[l]);
    }
};

// ---------------------------------------------------------------------------
// Categorical component (theta_1)
// ---------------------------------------------------------------------------

struct CategoricalComponentParams {
    int K = 0, D = 0, Imax = 0;
    Var beta;   // K x (D+1); column D is the MASK embedding
    Var delta;  // K x D
    bool use_positional = false;
    Var pos;  // K x Imax
    std::vector<AttentionLayerParams> layers;
    Direction direction = Direction::Bidirectional;
    AttnSpec attn;

    void collect_parameters(std::vector<Var>& out) const {
        out.push_back(beta);
        out.push_back(delta);
        if (use_positional) out.push_back(pos);
        for (const auto& l : layers) l.collect_parameters(out);
    }

    void check_tokens(const std::vector<int>& x) const {
        for (int t : x)
            if (t < 0 || t >= D) throw VocabError("token out of vocabulary");
        if (use_positional && static_cast<int>(x.size()) > Imax)
            throw ContractError("sequence longer than positional table");
    }

    // One masked pass: position i replaced by MASK, attention, logits for i.
    Var logits_at(const std::vector<int>& x, int i) const {
        check_tokens(x);
        const int I = static_cast<int>(x.size());
        if (i < 0 || i >= I) throw ContractError("logits_at: index out of range");
        std::vector<int> idx(x.begin(), x.end());
        idx[i] = D;  // MASK column
        Var X = gather_cols(beta, idx);
        if (use_positional) {
            std::vector<int> pcols(I);
            for (int j = 0; j < I; ++j) pcols[j] = j;
            X = add(X, gather_cols(pos, pcols));
        }
        Var H = attention_stack(X, layers, direction_mask(direction), attn);
        return matmul_tn(delta, col(H, i));  // D x 1
    }

    // D x I matrix of per-position probability vectors (no gradients).
    Tensor probs(const std::vector<int>& x) const {
        const int I = static_cast<int>(x.size());
        Tensor out(D, I);
        for (int i = 0; i < I; ++i) {
            Var lg = logits_at(x, i);
            Var p = softmax_cols(lg);
            for (int d = 0; d < D; ++d) out(d, i) = p.value()(d, 0);
        }
        return out;
    }

    // X'_ii of the masked pass at position i (the theta_1 context embedding).
    Tensor context_embedding(const std::vector<int>& x, int i) const {
        check_tokens(x);
        std::vector<int> idx(x.begin(), x.end());
        idx[i] = D;
        Var X = gather_cols(beta, idx);
        if (use_positional) {
            std::vector<int> pcols(static_cast<int>(x.size()));
            for (size_t j = 0; j < x.size(); ++j) pcols[j] = static_cast<int>(j);
            X = add(X, gather_cols(pos, pcols));
        }
        Var H = attention_stack(X, layers, direction_mask(direction), attn);
        return col(H, i).value();
    }
};

// ---------------------------------------------------------------------------
// Value component (theta_2)
// ---------------------------------------------------------------------------

struct ValueComponentParams {
    int K = 0, Kp = 1, D = 0, Imax = 0;
    bool use_tokens = true;  // stack beta_bar (and optionally delta_bar) rows
    Var beta_bar;            // K x D
    bool use_delta_bar = true;
    Var delta_bar;  // K x D
    bool use_attributes = false;
    AttributeEncoder encoder;  // replaces token embeddings with g(tau)
    bool use_positional = false;
    Var pos;  // height x Imax
    std::vector<AttentionLayerParams> layers;
    Direction direction = Direction::Bidirectional;
    AttnSpec attn;
    ValueEmbedder lam1;
    Readout lam2;

    int height() const {
        int h = lam1.Kp;
        if (use_attributes) h += K;
        if (use_tokens) h += K * (use_delta_bar ? 2 : 1);
        return h;
    }

    void collect_parameters(std::vector<Var>& out) const {
        if (use_tokens) {
            out.push_back(beta_bar);
            if (use_delta_bar) out.push_back(delta_bar);
        }
        if (use_attributes) encoder.collect_parameters(out);
        if (use_positional) out.push_back(pos);
        for (const auto& l : layers) l.collect_parameters(out);
        lam1.collect_parameters(out);
        lam2.collect_parameters(out);
    }

    // Top block shared by all masked passes over one sequence (identities and
    // attributes are never masked), plus the unmasked value row block.
    struct SharedBlocks {
        Var top;       // (height - Kp) x I; undefined when only values are modeled
        Var lam_base;  // Kp x I, no masking applied yet
        bool has_top = false;
    };

    SharedBlocks shared_blocks(const Sequence& seq, const Tensor& attributes) const {
        SharedBlocks sb;
        const int I = seq.length();
        if (use_tokens) {
            for (int t : seq.x)
                if (t < 0 || t >= D) throw VocabError("token out of vocabulary");
            Var top = gather_cols(beta_bar, seq.x);
            if (use_delta_bar) top = concat_rows(top, gather_cols(delta_bar, seq.x));
            sb.top = top;
            sb.has_top = true;
        }
        if (use_attributes) {
            if (attributes.cols != I) throw ShapeError("attribute matrix width must match sequence length");
            Var g = encoder.encode(Var::constant(attributes));
            sb.top = sb.has_top ? concat_rows(sb.top, g) : g;
            sb.has_top = true;
        }
        sb.lam_base = lam1.embed_row(seq.y);
        return sb;
    }

    // kappa_i for one masked pass, reusing the shared blocks.
    Var natural_param_at(const SharedBlocks& sb, int i) const {
        const int I = sb.lam_base.cols();
        if (i < 0 || i >= I) throw ContractError("natural_param_at: index out of range");
        Var lam = set_col(sb.lam_base, i, lam1.mask_column());
        Var Y = sb.has_top ? concat_rows(sb.top, lam) : lam;
        if (use_positional) {
            if (I > Imax) throw ContractError("sequence longer than positional table");
            std::vector<int> pcols(I);
            for (int j = 0; j < I; ++j) pcols[j] = j;
            Y = add(Y, gather_cols(pos, pcols));
        }
        Var H = attention_stack(Y, layers, direction_mask(direction), attn);
        return lam2.apply(col(H, i));  // 1 x 1
    }

    // Natural parameters for every position of one sequence.
    std::vector<double> natural_params(const Sequence& seq, const Tensor& attributes) const {
        SharedBlocks sb = shared_blocks(seq, attributes);
        std::vector<double> out(seq.length());
        for (int i = 0; i < seq.length(); ++i) out[i] = natural_param_at(sb, i).value().v[0];
        return out;
    }
};

// ---------------------------------------------------------------------------
// Full model
// ---------------------------------------------------------------------------

enum class ExampleKind { Baskets, SpatioTemporalGaussian, MovieRatings };

struct EfaModel {
    bool has_cat = false;
    CategoricalComponentParams cat;
    bool has_val = false;
    ValueComponentParams val;
    ExpFamHead head_y;  // value head

    std::vector<Var> parameters() const {
        std::vector<Var> out;
        if (has_cat) cat.collect_parameters(out);
        if (has_val) val.collect_parameters(out);
        return out;
    }

    // Summed negative log-likelihood over one sequence (differentiable).
    Var sequence_nll(const Sequence& seq, const Tensor& attributes) const {
        const int I = seq.length();
        if (I == 0) throw ContractError("sequence_nll: empty sequence");
        Var total = Var::constant(Tensor::scalar(0.0));
        if (has_cat) {
            for (int i = 0; i < I; ++i) {
                Var lg = cat.logits_at(seq.x, i);
                Var ll = sub(pick(lg, seq.x[i], 0), pick(logsumexp_cols(lg), 0, 0));
                total = sub(total, ll);
            }
        }
        if (has_val) {
            auto sb = val.shared_blocks(seq, attributes);
            Var kcol = val.natural_param_at(sb, 0);  // grows to I x 1
            for (int i = 1; i < I; ++i) kcol = concat_rows(kcol, val.natural_param_at(sb, i));
            total = add(total, head_y.nll_sum(transpose(kcol), seq.y));
        }
        return total;
    }

    // Averaged joint log-likelihood per Eq-of-record: (1/(F*I)) sum of both
    // component log terms; either component can be absent.
    double joint_log_likelihood(const SequenceBatch& batch) const {
        if (batch.seqs.empty()) throw ContractError("joint_log_likelihood: empty batch");
        double total = 0.0;
        long positions = 0;
        for (const auto& seq : batch.seqs) {
            total -= sequence_nll(seq, batch.attributes).value().v[0];
            positions += seq.length();
        }
        return total / static_cast<double>(positions);
    }

    // Mean prediction and log-probability for a held value.
    struct MaskedPrediction {
        double mean;
        double log_prob;
    };
    MaskedPrediction predict_masked(const Sequence& seq, const Tensor& attributes, int i) const {
        if (!has_val) throw ContractError("predict_masked: no value component");
        if (i < 0 || i >= seq.length()) throw ContractError("predict_masked: index out of range");
        auto sb = val.shared_blocks(seq, attributes);
        double kappa = val.natural_param_at(sb, i).value().v[0];
        return {head_y.mean(kappa), head_y.log_prob(kappa, seq.y[i])};
    }
};

// ---------------------------------------------------------------------------
// Initialization and instantiation
// ---------------------------------------------------------------------------

struct ModelDims {
    int K = 8;        // embedding dim
    int Kp = 8;       // value embedding dim
    int D = 0;        // vocabulary size
    int Imax = 0;     // positional table size
    int tau_dim = 0;  // attribute dim
    int layers = 1;
    int heads = 1;
    int readout_hidden = 16;  // lambda_2 hidden width
    bool residual = true;
    bool feed_forward = false;
    int ff_width = 64;
    bool layer_norm = false;
};

namespace detail {

inline Var init_param(Rng& rng, int r, int c, double s = 0.05) {
    return Var::param(rng.uniform_tensor(r, c, -s, s));
}

inline std::vector<AttentionLayerParams> init_attention(Rng& rng, int d, const ModelDims& dims) {
    std::vector<AttentionLayerParams> layers(dims.layers);
    for (auto& layer : layers) {
        layer.heads.resize(dims.heads);
        for (auto& h : layer.heads) {
            h.wq = init_param(rng, d, d);
            h.wk = init_param(rng, d, d);
            h.wv = init_param(rng, d, d);
        }
        layer.use_residual = dims.residual;
        if (dims.feed_forward) {
            layer.has_ff = true;
            layer.ff_w1 = init_param(rng, dims.ff_width, d);
            layer.ff_b1 = Var::param(Tensor(dims.ff_width, 1));
            layer.ff_w2 = init_param(rng, d, dims.ff_width);
            layer.ff_b2 = Var::param(Tensor(d, 1));
        }
        if (dims.layer_norm) {
            layer.has_ln = true;
            layer.ln_gain = Var::param(Tensor(d, 1, 1.0));
            layer.ln_bias = Var::param(Tensor(d, 1));
        }
    }
    return layers;
}

// lambda_2 chain with zero-initialized final layer so the initial kappa is 0.
inline Readout init_readout(Rng& rng, int in_dim, int hidden, bool affine_mode = false) {
    Readout r;
    r.kind = Readout::Kind::Mlp;
    r.Ws.push_back(init_param(rng, hidden, in_dim));
    r.bs.push_back(Var::param(Tensor(hidden, 1)));
    r.Ws.push_back(Var::param(Tensor(1, hidden)));
    r.bs.push_back(Var::param(Tensor(1, 1)));
    r.final_bias = !affine_mode;
    return r;
}

}  // namespace detail

inline EfaModel instantiate_example(ExampleKind kind, const ModelDims& dims, Direction direction, Rng& rng) {
    EfaModel m;
    switch (kind) {
        case ExampleKind::Baskets: {
            if (dims.D < 2) throw ContractError("Baskets: D >= 2 required");
            m.has_cat = true;
            auto& c = m.cat;
            c.K = dims.K;
            c.D = dims.D;
            c.Imax = dims.Imax;
            c.direction = direction;
            c.beta = detail::init_param(rng, dims.K, dims.D + 1);
            c.delta = detail::init_param(rng, dims.K, dims.D);
            // positional embeddings only when the within-basket order is known
            c.use_positional = dims.Imax > 0;
            if (c.use_positional) c.pos = detail::init_param(rng, dims.K, dims.Imax);
            c.layers = detail::init_attention(rng, dims.K, dims);
            break;
        }
        case ExampleKind::SpatioTemporalGaussian: {
            if (dims.tau_dim < 1) throw ContractError("SpatioTemporalGaussian: tau_dim >= 1 required");
            m.has_val = true;
            m.head_y = ExpFamHead::gaussian(1.0);
            auto& v = m.val;
            v.K = dims.K;
            v.Kp = dims.Kp;
            v.D = 0;
            v.use_tokens = false;
            v.use_attributes = true;
            v.encoder.g1 = detail::init_param(rng, dims.Kp, dims.tau_dim);
            v.encoder.g2 = detail::init_param(rng, dims.K, dims.Kp);
            v.use_positional = false;  // site order is irrelevant
            v.direction = Direction::Bidirectional;
            v.lam1.kind = ValueEmbedder::Kind::AffineChain;
            v.lam1.Kp = dims.Kp;
            v.lam1.Ws = {detail::init_param(rng, dims.Kp, 1)};
            v.lam1.bs = {Var::param(Tensor(dims.Kp, 1))};
            v.lam1.mask_emb = detail::init_param(rng, dims.Kp, 1);
            v.layers = detail::init_attention(rng, v.height(), dims);
            v.lam2 = detail::init_readout(rng, v.height(), dims.readout_hidden);
            break;
        }
        case ExampleKind::MovieRatings: {
            if (dims.D < 2) throw ContractError("MovieRatings: D >= 2 required");
            m.has_cat = true;
            m.has_val = true;
            m.head_y = ExpFamHead::poisson_shifted();
            auto& c = m.cat;
            c.K = dims.K;
            c.D = dims.D;
            c.Imax = dims.Imax;
            c.direction = direction;
            c.beta = detail::init_param(rng, dims.K, dims.D + 1);
            c.delta = detail::init_param(rng, dims.K, dims.D);
            c.use_positional = true;
            c.pos = detail::init_param(rng, dims.K, dims.Imax);
            c.layers = detail::init_attention(rng, dims.K, dims);
            auto& v = m.val;
            v.K = dims.K;
            v.Kp = dims.Kp;
            v.D = dims.D;
            v.Imax = dims.Imax;
            v.use_tokens = true;
            v.use_delta_bar = true;
            v.beta_bar = detail::init_param(rng, dims.K, dims.D);
            v.delta_bar = detail::init_param(rng, dims.K, dims.D);
            v.direction = direction;
            v.lam1.kind = ValueEmbedder::Kind::Table;
            v.lam1.Kp = dims.Kp;
            v.lam1.value_lo = 1;
            v.lam1.table = detail::init_param(rng, dims.Kp, 3);  // ratings {1,2,3}
            v.lam1.mask_emb = detail::init_param(rng, dims.Kp, 1);
            v.use_positional = true;
            v.pos = detail::init_param(rng, v.height(), dims.Imax);
            v.layers = detail::init_attention(rng, v.height(), dims);
            v.lam2 = detail::init_readout(rng, v.height(), dims.readout_hidden);
            break;
        }
    }
    return m;
}

}  // namespace efa
