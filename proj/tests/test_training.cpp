#include <catch2/catch_amalgamated.hpp>

#include "efa/data.hpp"
#include "efa/fm.hpp"
#include "efa/training.hpp"

using namespace efa;

TEST_CASE("adam first step moves by about lr in the gradient's direction") {
    FitConfig cfg;
    cfg.learning_rate = 0.1;
    std::vector<Var> params = {Var::param(Tensor::from_rows({{1.0, -2.0}}))};
    params[0].node()->zero_grad();
    params[0].node()->grad = Tensor::from_rows({{0.3, -0.7}});
    AdamState st(params);
    adam_step(params, st, cfg);
    REQUIRE(params[0].value()(0, 0) == Catch::Approx(1.0 - 0.1).epsilon(1e-6));
    REQUIRE(params[0].value()(0, 1) == Catch::Approx(-2.0 + 0.1).epsilon(1e-6));
}

TEST_CASE("adam leaves parameters alone on zero gradient") {
    FitConfig cfg;
    std::vector<Var> params = {Var::param(Tensor::from_rows({{1.5, 2.5}}))};
    params[0].node()->zero_grad();
    AdamState st(params);
    adam_step(params, st, cfg);
    REQUIRE(params[0].value()(0, 0) == 1.5);
    REQUIRE(params[0].value()(0, 1) == 2.5);
}

TEST_CASE("adam matches a scalar simulation on a quadratic") {
    // loss = 0.5 theta^2, gradient = theta; simulate the same recursion with
    // plain doubles and require identical trajectories.
    FitConfig cfg;
    cfg.learning_rate = 0.05;
    std::vector<Var> params = {Var::param(Tensor::scalar(3.0))};
    AdamState st(params);
    double theta = 3.0, m = 0.0, v = 0.0;
    double prev_abs = std::abs(theta);
    for (int t = 1; t <= 100; ++t) {
        params[0].node()->zero_grad();
        backward(scale(mul(params[0], params[0]), 0.5));
        adam_step(params, st, cfg);
        double g = theta;
        m = cfg.beta1 * m + (1 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
        double mh = m / (1 - std::pow(cfg.beta1, t)), vh = v / (1 - std::pow(cfg.beta2, t));
        theta -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.eps);
        REQUIRE(params[0].value().v[0] == Catch::Approx(theta).margin(1e-12));
        if (t > 10) {
            REQUIRE(std::abs(theta) <= prev_abs);  // monotone after warmup
            prev_abs = std::abs(theta);
        }
    }
}

TEST_CASE("fit overfits a small sample to the entropy floor") {
    SequenceBatch data = generate_synthetic_ratings(8, 99);
    Rng rng(1);
    ModelDims dims;
    dims.K = 6;
    dims.Kp = 6;
    dims.D = 5;
    dims.Imax = 5;
    EfaModel m = instantiate_example(ExampleKind::MovieRatings, dims, Direction::Bidirectional, rng);
    m.has_cat = false;  // value component only; the metric of interest is the rating NLL
    m.head_y = ExpFamHead::gaussian(1.0);
    m.val.lam1 = ValueEmbedder{};
    m.val.lam1.kind = ValueEmbedder::Kind::AffineChain;
    m.val.lam1.Kp = dims.Kp;
    m.val.lam1.Ws = {Var::param(rng.uniform_tensor(dims.Kp, 1, -0.05, 0.05))};
    m.val.lam1.bs = {Var::param(Tensor(dims.Kp, 1))};
    m.val.lam1.mask_emb = Var::param(rng.uniform_tensor(dims.Kp, 1, -0.05, 0.05));
    FitConfig cfg;
    cfg.learning_rate = 5e-3;
    cfg.max_epochs = 400;
    cfg.patience = 400;
    cfg.seed = 7;
    Objective obj = objective_for(m);
    FitReport rep = fit(obj, data, data, cfg);
    const double floor = 0.5 * std::log(2.0 * M_PI * std::exp(1.0));  // 1.4189
    REQUIRE(rep.train_losses.back() < 1.1 * floor);
}

TEST_CASE("early stopping triggers on a flat validation curve") {
    // loss is constant in the parameter, so no epoch ever improves on the first
    Objective obj;
    obj.params = {Var::param(Tensor::scalar(1.0))};
    obj.sequence_nll = [&obj](const Sequence&, const Tensor&) {
        return add_const(scale(obj.params[0], 0.0), 1.0);
    };
    SequenceBatch b;
    b.seqs.push_back({{0}, {}});
    FitConfig cfg;
    cfg.max_epochs = 50;
    cfg.patience = 4;
    FitReport rep = fit(obj, b, b, cfg);
    REQUIRE(rep.best_epoch == 0);
    REQUIRE(static_cast<int>(rep.val_losses.size()) == 1 + cfg.patience);
}

TEST_CASE("fit is deterministic under a fixed seed") {
    auto run = [&]() {
        SequenceBatch data = generate_synthetic_ratings(12, 5);
        Rng rng(77);
        FMParams p;
        p.variant = FmVariant::GaussianFM;
        p.K = 4;
        p.D = 5;
        p.direction = Direction::Bidirectional;
        p.rho = Var::param(rng.uniform_tensor(4, 5, -0.05, 0.05));
        p.alpha = Var::param(rng.uniform_tensor(4, 5, -0.05, 0.05));
        FitConfig cfg;
        cfg.learning_rate = 1e-2;
        cfg.max_epochs = 12;
        cfg.patience = 12;
        cfg.seed = 3;
        cfg.batch_size = 4;
        Objective obj = objective_for(p);
        FitReport rep = fit(obj, data, data, cfg);
        rep.wall_clock_seconds = 0.0;  // the only field allowed to differ
        return rep.to_json() + "|" + std::to_string(p.rho.value()(0, 0));
    };
    REQUIRE(run() == run());
}

TEST_CASE("one epoch decreases training loss from fresh initialization") {
    for (std::uint64_t seed : {11u, 12u, 13u}) {
        SequenceBatch data = generate_synthetic_ratings(20, seed);
        Rng rng(seed);
        FMParams p;
        p.variant = FmVariant::GaussianFM;
        p.K = 4;
        p.D = 5;
        p.direction = Direction::Bidirectional;
        p.rho = Var::param(rng.uniform_tensor(4, 5, -0.05, 0.05));
        p.alpha = Var::param(rng.uniform_tensor(4, 5, -0.05, 0.05));
        FitConfig cfg;
        cfg.learning_rate = 1e-2;
        cfg.max_epochs = 2;
        cfg.patience = 2;
        cfg.seed = seed;
        Objective obj = objective_for(p);
        FitReport rep = fit(obj, data, data, cfg);
        REQUIRE(rep.train_losses[1] < rep.train_losses[0]);
    }
}

TEST_CASE("divergence raises with the epoch index") {
    Objective obj;
    obj.params = {Var::param(Tensor::scalar(1.0))};
    obj.sequence_nll = [&obj](const Sequence&, const Tensor&) {
        return log_(scale(obj.params[0], -1.0));  // log of a negative: NaN
    };
    SequenceBatch b;
    b.seqs.push_back({{0}, {}});
    FitConfig cfg;
    REQUIRE_THROWS_AS(fit(obj, b, b, cfg), DivergenceError);
}

TEST_CASE("metric edge cases") {
    SequenceBatch data;
    data.seqs.push_back({{}, {1.0, 2.0, 3.0}});
    Predictor perfect;
    perfect.head = HeadKind::GaussianKnownVar;
    perfect.mean = [](const Sequence& s, const Tensor&, int i) { return s.y[i]; };
    perfect.log_prob = [](const Sequence& s, const Tensor&, int i) {
        return ExpFamHead::gaussian(1.0).log_prob(s.y[i], s.y[i]);
    };
    REQUIRE(evaluate(perfect, data, Metric::MSE).value == 0.0);

    Predictor uniform;
    uniform.head = HeadKind::Categorical;
    uniform.log_prob = [](const Sequence&, const Tensor&, int) { return -std::log(50.0); };
    SequenceBatch cat_data;
    cat_data.seqs.push_back({{0, 1}, {}});
    REQUIRE(evaluate(uniform, cat_data, Metric::CrossEntropy).value ==
            Catch::Approx(std::log(50.0)).epsilon(1e-12));

    Predictor constant2;
    constant2.head = HeadKind::PoissonShifted;
    constant2.mean = [](const Sequence&, const Tensor&, int) { return 2.0; };
    SequenceBatch ratings;
    ratings.seqs.push_back({{}, {1.0, 2.0, 3.0, 2.0}});
    auto r = evaluate(constant2, ratings, Metric::MeanByActual);
    REQUIRE(r.by_actual.at(1) == 2.0);
    REQUIRE(r.by_actual.at(2) == 2.0);
    REQUIRE(r.by_actual.at(3) == 2.0);

    REQUIRE_THROWS_AS(evaluate(uniform, cat_data, Metric::MSE), ContractError);
    REQUIRE_THROWS_AS(evaluate(perfect, data, Metric::CrossEntropy), ContractError);
}

TEST_CASE("mse equals the affine transform of the gaussian nll") {
    // with sigma^2 = 1: nll = 0.5 log(2 pi) + 0.5 (y - mean)^2, so
    // mse = 2 nll - log(2 pi) on identical predictions
    SequenceBatch data;
    data.seqs.push_back({{}, {0.4, -1.2, 2.0}});
    Predictor p;
    p.head = HeadKind::GaussianKnownVar;
    p.mean = [](const Sequence& s, const Tensor&, int i) { return 0.5 * s.y[i]; };
    p.log_prob = [](const Sequence& s, const Tensor&, int i) {
        return ExpFamHead::gaussian(1.0).log_prob(0.5 * s.y[i], s.y[i]);
    };
    double mse = evaluate(p, data, Metric::MSE).value;
    double nll = 0.0;
    for (int i = 0; i < 3; ++i) nll -= p.log_prob(data.seqs[0], Tensor(), i);
    nll /= 3.0;
    REQUIRE(mse == Catch::Approx(2.0 * nll - std::log(2.0 * M_PI)).epsilon(1e-12));
}

TEST_CASE("config validation") {
    FitConfig cfg;
    cfg.learning_rate = 0.0;
    REQUIRE_THROWS_AS(cfg.validate(), ContractError);
    cfg = FitConfig{};
    cfg.patience = 0;
    REQUIRE_THROWS_AS(cfg.validate(), ContractError);
}
