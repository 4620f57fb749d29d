#include <catch2/catch_amalgamated.hpp>

#include "efa/expfam.hpp"
#include "efa/rng.hpp"

using namespace efa;

TEST_CASE("head constructors enforce their domains") {
    REQUIRE_THROWS_AS(ExpFamHead::categorical(1), ContractError);
    REQUIRE_THROWS_AS(ExpFamHead::gaussian(0.0), ContractError);
    REQUIRE_NOTHROW(ExpFamHead::categorical(2));
    REQUIRE_NOTHROW(ExpFamHead::poisson_shifted());
}

TEST_CASE("log-probabilities match reference implementations") {
    // frozen from an independent statistics library
    REQUIRE(ExpFamHead::gaussian(2.0).log_prob(0.4, 1.3) ==
            Catch::Approx(-1.4680121234846453).epsilon(1e-13));
    REQUIRE(ExpFamHead::poisson_shifted().log_prob(0.7, 4.0) ==
            Catch::Approx(-1.7055121766985315).epsilon(1e-13));
    REQUIRE(ExpFamHead::poisson_one_plus().log_prob(-0.2, 3.0) ==
            Catch::Approx(-1.8160736141612612).epsilon(1e-13));
    ExpFamHead cat = ExpFamHead::categorical(4);
    std::vector<double> lg = {0.5, -1.2, 2.0, 0.3};
    REQUIRE(cat.log_prob_logits(lg, 2) == Catch::Approx(-0.36919930736901835).epsilon(1e-13));
    REQUIRE(cat.log_prob_logits(lg, 1) == Catch::Approx(-3.5691993073690185).epsilon(1e-13));
}

TEST_CASE("support violations throw") {
    REQUIRE_THROWS_AS(ExpFamHead::poisson_shifted().log_prob(0.0, 0.0), SupportError);
    REQUIRE_THROWS_AS(ExpFamHead::poisson_shifted().log_prob(0.0, 1.5), SupportError);
    REQUIRE_THROWS_AS(ExpFamHead::poisson_one_plus().log_prob(0.0, -1.0), SupportError);
    REQUIRE_THROWS_AS(ExpFamHead::categorical(3).log_prob_logits({0, 0, 0}, 3), SupportError);
}

TEST_CASE("means agree with analytic values") {
    REQUIRE(ExpFamHead::gaussian(1.0).mean(0.4) == 0.4);
    REQUIRE(ExpFamHead::poisson_shifted().mean(0.7) == Catch::Approx(3.0137527074704766).epsilon(1e-13));
    REQUIRE(ExpFamHead::poisson_one_plus().mean(-0.2) == Catch::Approx(1.8187307530779817).epsilon(1e-13));
    auto p = ExpFamHead::categorical(3).mean_probs({1.0, 1.0, 1.0});
    REQUIRE(p[0] == Catch::Approx(1.0 / 3.0));
}

TEST_CASE("distributions normalize to one") {
    // Gaussian by trapezoid quadrature over +-12 sd; Poissons by truncation;
    // categorical by direct summation.
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        double kappa = rng.uniform(-1.5, 1.5);
        {
            ExpFamHead h = ExpFamHead::gaussian(rng.uniform(0.3, 2.5));
            double sd = std::sqrt(h.sigma2), lo = kappa - 12 * sd, hi = kappa + 12 * sd;
            const int n = 40000;
            double dx = (hi - lo) / n, total = 0.0;
            for (int i = 0; i <= n; ++i) {
                double w = (i == 0 || i == n) ? 0.5 : 1.0;
                total += w * std::exp(h.log_prob(kappa, lo + i * dx)) * dx;
            }
            REQUIRE(total == Catch::Approx(1.0).margin(1e-6));
        }
        {
            double total = 0.0;
            for (int y = 1; y <= 300; ++y) total += std::exp(ExpFamHead::poisson_shifted().log_prob(kappa, y));
            REQUIRE(total == Catch::Approx(1.0).margin(1e-6));
        }
        {
            double total = 0.0;
            for (int y = 0; y <= 300; ++y) total += std::exp(ExpFamHead::poisson_one_plus().log_prob(kappa, y));
            REQUIRE(total == Catch::Approx(1.0).margin(1e-6));
        }
        {
            ExpFamHead h = ExpFamHead::categorical(7);
            std::vector<double> lg(7);
            for (auto& x : lg) x = rng.uniform(-2.0, 2.0);
            double total = 0.0;
            for (int y = 0; y < 7; ++y) total += std::exp(h.log_prob_logits(lg, y));
            REQUIRE(total == Catch::Approx(1.0).margin(1e-9));
        }
    }
}

TEST_CASE("differentiable NLL agrees with scalar log_prob and its gradient") {
    Rng rng(3);
    for (HeadKind kind : {HeadKind::GaussianKnownVar, HeadKind::PoissonShifted, HeadKind::PoissonOnePlus}) {
        ExpFamHead h;
        std::vector<double> ys;
        switch (kind) {
            case HeadKind::GaussianKnownVar:
                h = ExpFamHead::gaussian(1.7);
                ys = {0.3, -1.2, 2.5};
                break;
            case HeadKind::PoissonShifted:
                h = ExpFamHead::poisson_shifted();
                ys = {1.0, 4.0, 2.0};
                break;
            default:
                h = ExpFamHead::poisson_one_plus();
                ys = {0.0, 3.0, 1.0};
                break;
        }
        Var kappa = Var::param(rng.uniform_tensor(1, 3, -1.0, 1.0));
        Var nll = h.nll_sum(kappa, ys);
        double direct = 0.0;
        for (int i = 0; i < 3; ++i) direct -= h.log_prob(kappa.value()(0, i), ys[i]);
        REQUIRE(nll.value().v[0] == Catch::Approx(direct).epsilon(1e-12));
        kappa.node()->zero_grad();
        backward(nll);
        Tensor analytic = kappa.grad();
        auto f = [&]() { return h.nll_sum(kappa, ys).value().v[0]; };
        Tensor numeric = finite_difference_gradients(f, kappa.value(), 1e-6);
        REQUIRE(max_abs_diff(analytic, numeric) < 1e-5);
    }
}

TEST_CASE("batch NLL is the mean of pointwise NLLs") {
    ExpFamHead h = ExpFamHead::gaussian(1.0);
    std::vector<double> k = {0.0, 1.0}, y = {0.5, 0.5};
    double expect = -(h.log_prob(0.0, 0.5) + h.log_prob(1.0, 0.5)) / 2.0;
    REQUIRE(h.nll_batch(k, y) == Catch::Approx(expect).epsilon(1e-14));
    REQUIRE_THROWS_AS(h.nll_batch({}, {}), ContractError);
}
