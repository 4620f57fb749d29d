#include <catch2/catch_amalgamated.hpp>

#include "efa/attention.hpp"
#include "efa/rng.hpp"

using namespace efa;

namespace {

HeadParams random_head(Rng& rng, int d) {
    HeadParams h;
    h.wq = Var::param(rng.uniform_tensor(d, d, -0.5, 0.5));
    h.wk = Var::param(rng.uniform_tensor(d, d, -0.5, 0.5));
    h.wv = Var::param(rng.uniform_tensor(d, d, -0.5, 0.5));
    return h;
}

}  // namespace

TEST_CASE("causal mask structure") {
    const double ninf = -std::numeric_limits<double>::infinity();
    Tensor m = causal_mask(2, AttnKind::Softmax);
    REQUIRE(m(0, 0) == 0.0);
    REQUIRE(m(0, 1) == 0.0);
    REQUIRE(m(1, 0) == ninf);
    REQUIRE(m(1, 1) == 0.0);
    Tensor ml = causal_mask(3, AttnKind::Linear);
    REQUIRE(ml(0, 2) == 1.0);
    REQUIRE(ml(2, 0) == 0.0);
    REQUIRE(ml(1, 1) == 1.0);
    REQUIRE_THROWS_AS(causal_mask(0, AttnKind::Softmax), ContractError);
    Tensor nm = no_mask(2, AttnKind::Softmax);
    REQUIRE(nm(1, 0) == 0.0);
}

TEST_CASE("scale denominator is d, with sqrt as ablation") {
    AttnSpec spec;
    REQUIRE(spec.denom(9) == 9.0);
    spec.sqrt_scale = true;
    REQUIRE(spec.denom(9) == 3.0);
}

TEST_CASE("softmax attention forward matches dense oracle") {
    Var x = Var::constant(Tensor::from_rows({{0.5, -1.0, 2.0}, {1.5, 0.5, -0.5}}));
    HeadParams h;
    h.wq = Var::constant(Tensor::from_rows({{0.2, -0.3}, {0.4, 0.1}}));
    h.wk = Var::constant(Tensor::from_rows({{-0.1, 0.5}, {0.3, 0.2}}));
    h.wv = Var::constant(Tensor::from_rows({{1.0, 0.5}, {-0.5, 0.2}}));
    AttnSpec spec;
    Tensor w = attention_scores(x, h, MaskKind::Causal, spec).value();
    Tensor w_expect = Tensor::from_rows({{1.0, 0.4825071423336103, 0.3646926234755705},
                                         {0.0, 0.5174928576663897, 0.30614378319930874},
                                         {0.0, 0.0, 0.3291635933251208}});
    REQUIRE(max_abs_diff(w, w_expect) < 1e-14);
    Tensor out = attend(x, h, MaskKind::Causal, spec).value();
    Tensor out_expect = Tensor::from_rows({{1.25, 0.2150142846672206, 0.802294230263943},
                                           {0.05000000000000002, 0.33462107171651434, -0.16015905156426913}});
    REQUIRE(max_abs_diff(out, out_expect) < 1e-14);
}

TEST_CASE("linear attention forward matches dense oracle") {
    Var x = Var::constant(Tensor::from_rows({{0.5, -1.0, 2.0}, {1.5, 0.5, -0.5}}));
    HeadParams h;
    h.wq = Var::constant(Tensor::from_rows({{0.2, -0.3}, {0.4, 0.1}}));
    h.wk = Var::constant(Tensor::from_rows({{-0.1, 0.5}, {0.3, 0.2}}));
    h.wv = Var::constant(Tensor::from_rows({{1.0, 0.5}, {-0.5, 0.2}}));
    AttnSpec spec;
    spec.kind = AttnKind::Linear;
    Tensor out = attend(x, h, MaskKind::Causal, spec).value();
    Tensor expect = Tensor::from_rows({{-0.05468749999999997, -0.10062499999999999, 0.3259375},
                                       {-0.0021875, -0.02056249999999999, -0.0670625}});
    REQUIRE(max_abs_diff(out, expect) < 1e-14);
}

TEST_CASE("attention weight columns are distributions") {
    Rng rng(5);
    Var x = Var::constant(rng.uniform_tensor(4, 6, -1.0, 1.0));
    HeadParams h = random_head(rng, 4);
    AttnSpec spec;
    for (MaskKind mk : {MaskKind::None, MaskKind::Causal}) {
        Tensor w = attention_scores(x, h, mk, spec).value();
        for (int j = 0; j < 6; ++j) {
            double s = 0.0;
            for (int i = 0; i < 6; ++i) {
                REQUIRE(w(i, j) >= 0.0);
                s += w(i, j);
            }
            REQUIRE(s == Catch::Approx(1.0).epsilon(1e-12));
        }
        if (mk == MaskKind::Causal)
            for (int j = 0; j < 6; ++j)
                for (int i = j + 1; i < 6; ++i) REQUIRE(w(i, j) == 0.0);
    }
}

TEST_CASE("zero query/key gives uniform weights over live rows") {
    Rng rng(6);
    Var x = Var::constant(rng.uniform_tensor(3, 4, -1.0, 1.0));
    HeadParams h;
    h.wq = Var::constant(Tensor(3, 3, 0.0));
    h.wk = Var::constant(Tensor(3, 3, 0.0));
    h.wv = Var::constant(Tensor(3, 3, 0.0));
    AttnSpec spec;
    Tensor w = attention_scores(x, h, MaskKind::Causal, spec).value();
    for (int j = 0; j < 4; ++j)
        for (int i = 0; i <= j; ++i) REQUIRE(w(i, j) == Catch::Approx(1.0 / (j + 1)).epsilon(1e-14));
}

TEST_CASE("causal outputs ignore future positions") {
    Rng rng(9);
    for (AttnKind kind : {AttnKind::Softmax, AttnKind::Linear}) {
        AttnSpec spec;
        spec.kind = kind;
        AttentionLayerParams layer;
        layer.heads.push_back(random_head(rng, 3));
        layer.use_residual = true;
        Tensor base = rng.uniform_tensor(3, 5, -1.0, 1.0);
        Tensor h0 = attention_layer(Var::constant(base), layer, MaskKind::Causal, spec).value();
        Tensor perturbed = base;
        perturbed(1, 4) += 3.0;  // last position only
        Tensor h1 = attention_layer(Var::constant(perturbed), layer, MaskKind::Causal, spec).value();
        for (int j = 0; j < 4; ++j)
            for (int i = 0; i < 3; ++i) REQUIRE(h0(i, j) == h1(i, j));  // bit-identical
    }
}

TEST_CASE("multi-head outputs are summed") {
    Rng rng(12);
    Var x = Var::constant(rng.uniform_tensor(3, 4, -1.0, 1.0));
    AttnSpec spec;
    AttentionLayerParams layer;
    layer.heads.push_back(random_head(rng, 3));
    layer.heads.push_back(random_head(rng, 3));
    Tensor both = attention_layer(x, layer, MaskKind::None, spec).value();
    Tensor a = attend(x, layer.heads[0], MaskKind::None, spec).value();
    Tensor b = attend(x, layer.heads[1], MaskKind::None, spec).value();
    for (int i = 0; i < both.size(); ++i) REQUIRE(both.v[i] == Catch::Approx(a.v[i] + b.v[i]).epsilon(1e-14));
}

TEST_CASE("empty stack is the identity") {
    Rng rng(1);
    Tensor base = rng.uniform_tensor(3, 3, -1.0, 1.0);
    AttnSpec spec;
    Tensor out = attention_stack(Var::constant(base), {}, MaskKind::None, spec).value();
    REQUIRE(max_abs_diff(out, base) == 0.0);
}

TEST_CASE("full layer gradients match finite differences") {
    Rng rng(21);
    const int d = 3, I = 4;
    AttentionLayerParams layer;
    layer.heads.push_back(random_head(rng, d));
    layer.use_residual = true;
    layer.has_ff = true;
    layer.ff_w1 = Var::param(rng.uniform_tensor(5, d, -0.5, 0.5));
    layer.ff_b1 = Var::param(rng.uniform_tensor(5, 1, -0.1, 0.1));
    layer.ff_w2 = Var::param(rng.uniform_tensor(d, 5, -0.5, 0.5));
    layer.ff_b2 = Var::param(rng.uniform_tensor(d, 1, -0.1, 0.1));
    layer.has_ln = true;
    layer.ln_gain = Var::param(rng.uniform_tensor(d, 1, 0.8, 1.2));
    layer.ln_bias = Var::param(rng.uniform_tensor(d, 1, -0.1, 0.1));
    Var x = Var::param(rng.uniform_tensor(d, I, -1.0, 1.0));
    Tensor w = rng.uniform_tensor(d, I, 0.1, 1.0);
    for (AttnKind kind : {AttnKind::Softmax, AttnKind::Linear}) {
        AttnSpec spec;
        spec.kind = kind;
        auto loss_fn = [&]() {
            Var out = attention_layer(x, layer, MaskKind::Causal, spec);
            return sum(mul(out, Var::constant(w)));
        };
        std::vector<Var> params;
        layer.collect_parameters(params);
        params.push_back(x);
        for (auto& p : params) p.node()->zero_grad();
        backward(loss_fn());
        for (auto& p : params) {
            Tensor analytic = p.grad();
            auto f = [&]() { return loss_fn().value().v[0]; };
            Tensor numeric = finite_difference_gradients(f, p.value(), 1e-5);
            double scale_ref = 0.0;
            for (double v : numeric.v) scale_ref = std::max(scale_ref, std::abs(v));
            REQUIRE(max_abs_diff(analytic, numeric) < 1e-5 * std::max(1.0, scale_ref));
        }
    }
}
