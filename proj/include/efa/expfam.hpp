#pragma once

// Conditional output distributions: categorical, Gaussian with known
// variance, and the two shifted-Poisson rating variants. Natural parameters
// are mean-parameterized for the Gaussian and log-rate for the Poissons.

#include <cmath>
#include <vector>

#include "tensor.hpp"

namespace efa {

struct SupportError : std::runtime_error {
    explicit SupportError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class HeadKind {
    Categorical,       // y in [0, D)
    GaussianKnownVar,  // y real, N(kappa, sigma2)
    PoissonShifted,    // y in {1, 2, ...}, y - 1 ~ Poisson(exp(kappa))
    PoissonOnePlus,    // y in {0, 1, ...}, y ~ Poisson(1 + exp(kappa))
};

struct ExpFamHead {
    HeadKind kind = HeadKind::GaussianKnownVar;
    int D = 0;            // category count (Categorical only)
    double sigma2 = 1.0;  // known variance (Gaussian only)

    static ExpFamHead categorical(int d) {
        if (d < 2) throw ContractError("Categorical head needs D >= 2");
        return {HeadKind::Categorical, d, 0.0};
    }
    static ExpFamHead gaussian(double s2) {
        if (s2 <= 0.0) throw ContractError("Gaussian head needs sigma2 > 0");
        return {HeadKind::GaussianKnownVar, 0, s2};
    }
    static ExpFamHead poisson_shifted() { return {HeadKind::PoissonShifted, 0, 0.0}; }
    static ExpFamHead poisson_one_plus() { return {HeadKind::PoissonOnePlus, 0, 0.0}; }

    // Log-density/mass of a scalar-valued head at natural parameter kappa.
    double log_prob(double kappa, double y) const {
        switch (kind) {
            case HeadKind::GaussianKnownVar:
                return -0.5 * std::log(2.0 * M_PI * sigma2) - (y - kappa) * (y - kappa) / (2.0 * sigma2);
            case HeadKind::PoissonShifted: {
                double k = y - 1.0;
                if (k < 0.0 || k != std::floor(k)) throw SupportError("PoissonShifted: y must be in {1,2,...}");
                return k * kappa - std::exp(kappa) - std::lgamma(k + 1.0);
            }
            case HeadKind::PoissonOnePlus: {
                if (y < 0.0 || y != std::floor(y)) throw SupportError("PoissonOnePlus: y must be in {0,1,...}");
                double lam = 1.0 + std::exp(kappa);
                return y * std::log(lam) - lam - std::lgamma(y + 1.0);
            }
            case HeadKind::Categorical:
                throw ContractError("categorical head: use log_prob_logits");
        }
        return 0.0;
    }

    // Log-mass of category y under log-softmax of the given logits.
    double log_prob_logits(const std::vector<double>& logits, int y) const {
        if (kind != HeadKind::Categorical) throw ContractError("log_prob_logits: not a categorical head");
        if (y < 0 || y >= static_cast<int>(logits.size())) throw SupportError("categorical: y out of support");
        double mx = logits[0];
        for (double l : logits) mx = std::max(mx, l);
        double s = 0.0;
        for (double l : logits) s += std::exp(l - mx);
        return logits[y] - mx - std::log(s);
    }

    double mean(double kappa) const {
        switch (kind) {
            case HeadKind::GaussianKnownVar:
                return kappa;
            case HeadKind::PoissonShifted:
            case HeadKind::PoissonOnePlus:
                return 1.0 + std::exp(kappa);
            case HeadKind::Categorical:
                throw ContractError("categorical head: use mean_probs");
        }
        return 0.0;
    }

    std::vector<double> mean_probs(const std::vector<double>& logits) const {
        if (kind != HeadKind::Categorical) throw ContractError("mean_probs: not a categorical head");
        double mx = logits[0];
        for (double l : logits) mx = std::max(mx, l);
        double s = 0.0;
        std::vector<double> p(logits.size());
        for (size_t i = 0; i < logits.size(); ++i) {
            p[i] = std::exp(logits[i] - mx);
            s += p[i];
        }
        for (double& x : p) x /= s;
        return p;
    }

    // Mean of -log_prob over the batch.
    double nll_batch(const std::vector<double>& kappas, const std::vector<double>& ys) const {
        if (kappas.empty() || kappas.size() != ys.size()) throw ContractError("nll_batch: empty or mismatched batch");
        double s = 0.0;
        for (size_t i = 0; i < kappas.size(); ++i) s -= log_prob(kappas[i], ys[i]);
        return s / static_cast<double>(kappas.size());
    }

    // Differentiable negative log-likelihood summed over a row of natural
    // parameters (1 x n) against observations ys; returns a 1x1 Var.
    Var nll_sum(const Var& kappa_row, const std::vector<double>& ys) const {
        if (kappa_row.rows() != 1 || kappa_row.cols() != static_cast<int>(ys.size()))
            throw ShapeError("nll_sum: kappa row shape mismatch");
        const int n = kappa_row.cols();
        Tensor yrow(1, n);
        for (int i = 0; i < n; ++i) yrow.v[i] = ys[i];
        Var y = Var::constant(yrow);
        switch (kind) {
            case HeadKind::GaussianKnownVar: {
                Var resid = sub(y, kappa_row);
                Var sq = mul(resid, resid);
                double c = 0.5 * std::log(2.0 * M_PI * sigma2);
                return add_const(scale(sum(sq), 1.0 / (2.0 * sigma2)), c * n);
            }
            case HeadKind::PoissonShifted: {
                // -sum[(y-1) kappa - exp(kappa) - lgamma(y)]
                Tensor krow(1, n);
                double cst = 0.0;
                for (int i = 0; i < n; ++i) {
                    double k = ys[i] - 1.0;
                    if (k < 0.0 || k != std::floor(k)) throw SupportError("PoissonShifted: y must be in {1,2,...}");
                    krow.v[i] = k;
                    cst += std::lgamma(k + 1.0);
                }
                Var kconst = Var::constant(krow);
                Var lin = sum(mul(kconst, kappa_row));
                Var rate = sum(exp_(kappa_row));
                return add_const(sub(rate, lin), cst);
            }
            case HeadKind::PoissonOnePlus: {
                // lambda = 1 + exp(kappa); -sum[y log lambda - lambda - lgamma(y+1)]
                Tensor yr(1, n);
                double cst = 0.0;
                for (int i = 0; i < n; ++i) {
                    if (ys[i] < 0.0 || ys[i] != std::floor(ys[i]))
                        throw SupportError("PoissonOnePlus: y must be in {0,1,...}");
                    yr.v[i] = ys[i];
                    cst += std::lgamma(ys[i] + 1.0);
                }
                Var lam = add_const(exp_(kappa_row), 1.0);
                Var lin = sum(mul(Var::constant(yr), log_(lam)));
                return add_const(sub(sum(lam), lin), cst);
            }
            case HeadKind::Categorical:
                throw ContractError("categorical head: compose with logsumexp_cols/pick instead");
        }
        throw ContractError("unreachable");
    }
};

}  // namespace efa
