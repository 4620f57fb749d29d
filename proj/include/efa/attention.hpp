#pragma once

// Single- and multi-layer, multi-head self-attention, softmax or linear,
// with optional causal masking. Convention: columns are positions; the mask
// entry (r, c) gates whether position r may inform position c, so column i
// attends to rows 1..i under the causal mask.

#include <vector>

#include "tensor.hpp"

namespace efa {

enum class AttnKind { Softmax, Linear };
enum class MaskKind { Causal, None };

// Scale denominator defaults to the embedding dimension d (not sqrt d);
// sqrt_scale is an ablation switch.
struct AttnSpec {
    AttnKind kind = AttnKind::Softmax;
    bool sqrt_scale = false;

    double denom(int d) const { return sqrt_scale ? std::sqrt(static_cast<double>(d)) : static_cast<double>(d); }
};

struct HeadParams {
    Var wq, wk, wv;  // d x d each
};

struct AttentionLayerParams {
    std::vector<HeadParams> heads;
    bool use_residual = false;
    bool has_ff = false;
    Var ff_w1, ff_b1;  // D' x d, D' x 1
    Var ff_w2, ff_b2;  // d x D', d x 1
    bool has_ln = false;
    Var ln_gain, ln_bias;  // d x 1 each

    void collect_parameters(std::vector<Var>& out) const {
        for (const auto& h : heads) {
            out.push_back(h.wq);
            out.push_back(h.wk);
            out.push_back(h.wv);
        }
        if (has_ff) {
            out.push_back(ff_w1);
            out.push_back(ff_b1);
            out.push_back(ff_w2);
            out.push_back(ff_b2);
        }
        if (has_ln) {
            out.push_back(ln_gain);
            out.push_back(ln_bias);
        }
    }
};

// Mask realization: additive 0/-inf for softmax, multiplicative 1/0 for
// linear attention. Entry (r, c) is live iff r <= c.
inline Tensor causal_mask(int i_len, AttnKind kind) {
    if (i_len < 1) throw ContractError("causal_mask: length must be >= 1");
    const double off = kind == AttnKind::Softmax ? -std::numeric_limits<double>::infinity() : 0.0;
    const double on = kind == AttnKind::Softmax ? 0.0 : 1.0;
    Tensor m(i_len, i_len, off);
    for (int r = 0; r < i_len; ++r)
        for (int c = r; c < i_len; ++c) m(r, c) = on;
    return m;
}

inline Tensor no_mask(int i_len, AttnKind kind) {
    return Tensor(i_len, i_len, kind == AttnKind::Softmax ? 0.0 : 1.0);
}

inline Tensor mask_tensor(MaskKind mask, int i_len, AttnKind kind) {
    return mask == MaskKind::Causal ? causal_mask(i_len, kind) : no_mask(i_len, kind);
}

// Attention weight matrix S with S[:, j] the weights for output column j.
inline Var attention_scores(const Var& x, const HeadParams& head, MaskKind mask, const AttnSpec& spec) {
    const int d = x.rows(), I = x.cols();
    Var q = matmul(head.wq, x);
    Var k = matmul(head.wk, x);
    Var s = scale(matmul_tn(q, k), 1.0 / spec.denom(d));
    Tensor m = mask_tensor(mask, I, spec.kind);
    if (spec.kind == AttnKind::Softmax) return masked_softmax_cols(s, m);
    return mask == MaskKind::Causal ? mul(s, Var::constant(m)) : s;
}

inline Var attend(const Var& x, const HeadParams& head, MaskKind mask, const AttnSpec& spec) {
    return matmul(matmul(head.wv, x), attention_scores(x, head, mask, spec));
}

// One layer: head outputs summed, then residual, feed-forward, layer norm.
inline Var attention_layer(const Var& x, const AttentionLayerParams& layer, MaskKind mask, const AttnSpec& spec) {
    if (layer.heads.empty()) throw ContractError("attention_layer: needs at least one head");
    Var h = attend(x, layer.heads[0], mask, spec);
    for (size_t m = 1; m < layer.heads.size(); ++m) h = add(h, attend(x, layer.heads[m], mask, spec));
    if (layer.use_residual) h = add(h, x);
    if (layer.has_ff) {
        Var ff = add_bias_cols(matmul(layer.ff_w2, relu(add_bias_cols(matmul(layer.ff_w1, h), layer.ff_b1))), layer.ff_b2);
        h = add(h, ff);
    }
    if (layer.has_ln) h = layer_norm_cols(h, layer.ln_gain, layer.ln_bias);
    return h;
}

// Sequential layers; an empty list is the identity.
inline Var attention_stack(const Var& x, const std::vector<AttentionLayerParams>& layers, MaskKind mask,
                           const AttnSpec& spec) {
    Var h = x;
    for (const auto& layer : layers) h = attention_layer(h, layer, mask, spec);
    return h;
}

}  // namespace efa
