#pragma once

// Adam optimization of the per-position negative log-likelihood with
// validation-based early stopping, plus the evaluation metrics.

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "model.hpp"
#include "rng.hpp"

namespace efa {

struct DivergenceError : std::runtime_error {
    int epoch;
    DivergenceError(const std::string& msg, int ep) : std::runtime_error(msg), epoch(ep) {}
};

struct FitConfig {
    double learning_rate = 1e-3;
    int max_epochs = 100;
    int patience = 10;
    int batch_size = 0;  // 0 = full batch
    std::uint64_t seed = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void validate() const {
        if (learning_rate <= 0.0) throw ContractError("FitConfig: learning_rate must be > 0");
        if (patience < 1) throw ContractError("FitConfig: patience must be >= 1");
        if (max_epochs < 1) throw ContractError("FitConfig: max_epochs must be >= 1");
    }
};

struct FitReport {
    std::vector<double> train_losses, val_losses;  // per epoch, NLL per position
    int best_epoch = -1;
    double best_val_loss = 0.0;
    double wall_clock_seconds = 0.0;

    std::string to_json() const {
        std::ostringstream os;
        os.precision(17);
        auto arr = [&os](const std::vector<double>& v) {
            os << "[";
            for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
            os << "]";
        };
        os << "{\"train_losses\":";
        arr(train_losses);
        os << ",\"val_losses\":";
        arr(val_losses);
        os << ",\"best_epoch\":" << best_epoch << ",\"best_val_loss\":" << best_val_loss
           << ",\"wall_clock_seconds\":" << wall_clock_seconds << "}";
        return os.str();
    }
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
    std::vector<Tensor> m, v;
    long t = 0;

    explicit AdamState(const std::vector<Var>& params) {
        for (const auto& p : params) {
            m.emplace_back(p.value().rows, p.value().cols);
            v.emplace_back(p.value().rows, p.value().cols);
        }
    }
};

// Standard update with bias correction; gradients are read from the
// parameters' accumulated grads and must be zeroed by the caller afterwards.
inline void adam_step(std::vector<Var>& params, AdamState& st, const FitConfig& cfg) {
    if (params.size() != st.m.size()) throw ContractError("adam_step: state/param count mismatch");
    ++st.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
    for (size_t p = 0; p < params.size(); ++p) {
        Tensor& val = params[p].value();
        const Tensor& g = params[p].grad();
        if (!val.same_shape(g)) throw ShapeError("adam_step: grad shape mismatch");
        for (int i = 0; i < val.size(); ++i) {
            double gi = g.v[i];
            st.m[p].v[i] = cfg.beta1 * st.m[p].v[i] + (1.0 - cfg.beta1) * gi;
            st.v[p].v[i] = cfg.beta2 * st.v[p].v[i] + (1.0 - cfg.beta2) * gi * gi;
            double mhat = st.m[p].v[i] / bc1;
            double vhat = st.v[p].v[i] / bc2;
            val.v[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Objective abstraction: one summed-NLL graph per sequence
// ---------------------------------------------------------------------------

struct Objective {
    std::vector<Var> params;
    // Summed (not averaged) NLL over the sequence's positions.
    std::function<Var(const Sequence&, const Tensor& attributes)> sequence_nll;
};

inline Objective objective_for(const EfaModel& model) {
    Objective o;
    o.params = model.parameters();
    o.sequence_nll = [&model](const Sequence& s, const Tensor& a) { return model.sequence_nll(s, a); };
    return o;
}

// Average NLL per position over a batch, without gradients.
inline double dataset_loss(const Objective& obj, const SequenceBatch& batch) {
    double total = 0.0;
    long positions = 0;
    for (const auto& seq : batch.seqs) {
        total += obj.sequence_nll(seq, batch.attributes).value().v[0];
        positions += seq.length();
    }
    return total / static_cast<double>(positions);
}

// ---------------------------------------------------------------------------
// Fit loop
// ---------------------------------------------------------------------------

inline FitReport fit(Objective& obj, const SequenceBatch& train, const SequenceBatch& val, const FitConfig& cfg) {
    cfg.validate();
    if (train.seqs.empty() || val.seqs.empty()) throw ContractError("fit: empty split");
    const auto t0 = std::chrono::steady_clock::now();
    AdamState st(obj.params);
    Rng rng(cfg.seed);
    FitReport rep;
    std::vector<Tensor> best;
    int since_best = 0;
    std::vector<int> order(train.seqs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    const int bs = cfg.batch_size > 0 ? cfg.batch_size : static_cast<int>(train.seqs.size());

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        long epoch_positions = 0;
        for (size_t start = 0; start < order.size(); start += bs) {
            for (const auto& p : obj.params) p.node()->zero_grad();
            long batch_positions = 0;
            size_t end = std::min(order.size(), start + bs);
            for (size_t k = start; k < end; ++k) batch_positions += train.seqs[order[k]].length();
            for (size_t k = start; k < end; ++k) {
                const Sequence& seq = train.seqs[order[k]];
                Var nll = obj.sequence_nll(seq, train.attributes);
                // normalize to per-position mean before accumulating grads
                Var loss = scale(nll, 1.0 / static_cast<double>(batch_positions));
                backward(loss);
                epoch_loss += nll.value().v[0];
            }
            epoch_positions += batch_positions;
            if (!std::isfinite(epoch_loss)) throw DivergenceError("fit: non-finite training loss", epoch);
            adam_step(obj.params, st, cfg);
        }
        rep.train_losses.push_back(epoch_loss / static_cast<double>(epoch_positions));
        double vloss = dataset_loss(obj, val);
        if (!std::isfinite(vloss)) throw DivergenceError("fit: non-finite validation loss", epoch);
        rep.val_losses.push_back(vloss);
        if (rep.best_epoch < 0 || vloss < rep.best_val_loss) {
            rep.best_epoch = epoch;
            rep.best_val_loss = vloss;
            best.clear();
            for (const auto& p : obj.params) best.push_back(p.value());
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    for (size_t p = 0; p < obj.params.size(); ++p) obj.params[p].value() = best[p];
    rep.wall_clock_seconds =
        std::chrono::duration_cast<std::chrono::duration<double>>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

enum class Metric { MSE, CrossEntropy, PoissonNLL, MeanByActual };

// Per-position prediction interface shared by both model families.
struct Predictor {
    // mean prediction for position i given the rest of the sequence
    std::function<double(const Sequence&, const Tensor& attrs, int i)> mean;
    // log-probability of the observed value/token at position i
    std::function<double(const Sequence&, const Tensor& attrs, int i)> log_prob;
    HeadKind head = HeadKind::GaussianKnownVar;
};

inline Predictor predictor_for(const EfaModel& model) {
    Predictor p;
    if (model.has_val) {
        p.head = model.head_y.kind;
        p.mean = [&model](const Sequence& s, const Tensor& a, int i) {
            return model.predict_masked(s, a, i).mean;
        };
        p.log_prob = [&model](const Sequence& s, const Tensor& a, int i) {
            return model.predict_masked(s, a, i).log_prob;
        };
    } else {
        p.head = HeadKind::Categorical;
        p.mean = nullptr;
        p.log_prob = [&model](const Sequence& s, const Tensor&, int i) {
            Var lg = model.cat.logits_at(s.x, i);
            return ExpFamHead::categorical(model.cat.D).log_prob_logits(
                std::vector<double>(lg.value().v.begin(), lg.value().v.end()), s.x[i]);
        };
    }
    return p;
}

struct EvalResult {
    double value = 0.0;
    std::map<int, double> by_actual;  // MeanByActual only
};

inline EvalResult evaluate(const Predictor& p, const SequenceBatch& data, Metric metric) {
    if (data.seqs.empty()) throw ContractError("evaluate: empty data");
    EvalResult r;
    double total = 0.0;
    long n = 0;
    std::map<int, double> sums;
    std::map<int, long> counts;
    for (const auto& seq : data.seqs) {
        for (int i = 0; i < seq.length(); ++i) {
            switch (metric) {
                case Metric::MSE: {
                    if (!p.mean || p.head == HeadKind::Categorical)
                        throw ContractError("evaluate: MSE needs a value head");
                    double e = p.mean(seq, data.attributes, i) - seq.y[i];
                    total += e * e;
                    break;
                }
                case Metric::CrossEntropy: {
                    if (p.head != HeadKind::Categorical)
                        throw ContractError("evaluate: CrossEntropy needs a categorical head");
                    total -= p.log_prob(seq, data.attributes, i);
                    break;
                }
                case Metric::PoissonNLL: {
                    if (p.head != HeadKind::PoissonShifted && p.head != HeadKind::PoissonOnePlus)
                        throw ContractError("evaluate: PoissonNLL needs a Poisson head");
                    total -= p.log_prob(seq, data.attributes, i);
                    break;
                }
                case Metric::MeanByActual: {
                    if (!p.mean) throw ContractError("evaluate: MeanByActual needs a value head");
                    int actual = static_cast<int>(seq.y[i]);
                    sums[actual] += p.mean(seq, data.attributes, i);
                    counts[actual] += 1;
                    break;
                }
            }
            ++n;
        }
    }
    if (metric == Metric::MeanByActual) {
        for (const auto& [k, s] : sums) r.by_actual[k] = s / counts[k];
    } else {
        r.value = total / static_cast<double>(n);
    }
    return r;
}

}  // namespace efa
