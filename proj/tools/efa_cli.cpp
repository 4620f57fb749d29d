// Experiment driver: config-driven training runs, attention/QKV dumps,
// co-purchase queries, identifiability probes, and synthetic data export.
//
// Config schema (flat `key = value` lines, '#' comments):
//   experiment     synthetic | ratings-seq | ratings-values | baskets | temperature
//   model          efa | fm
//   direction      uni | bi                          (default bi)
//   head           poisson-shifted | poisson-one-plus (ratings-values only)
//   seed           integer                            (default 1; --seed overrides)
//   K, Kp          embedding dims                     (default 8, 8)
//   layers, heads  attention depth/width              (default 1, 1)
//   readout_hidden, residual, feed_forward, ff_width, layer_norm, sqrt_scale
//   positional     baskets only                       (default true)
//   sigma2         Gaussian observation variance      (default 1.0)
//   learning_rate, max_epochs, patience, batch_size   (fit settings)
//   train_users, val_users, test_users                (synthetic; default 5000/1000/1000)
//   data           CSV path (ratings-*, baskets, temperature)
//   top_items      ratings vocabulary size            (default 50)
//   min_basket_count, min_items_per_basket            (baskets; default 2, 2)
//   train_lo..test_hi, lagged, knn_k                  (temperature)
//   probe_* keys                                      (theory-probe; see below)
//
// Exit codes: 0 success, 1 usage/config, 2 data, 3 divergence.

#include <CLI11.hpp>
#include <json.hpp>

#include <array>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "efa/data.hpp"
#include "efa/fm.hpp"
#include "efa/io.hpp"
#include "efa/theory.hpp"
#include "efa/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace efa;

namespace {

struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Config interpretation
// ---------------------------------------------------------------------------

Direction parse_direction(const std::string& s) {
    if (s == "uni") return Direction::Unidirectional;
    if (s == "bi") return Direction::Bidirectional;
    throw UsageError("direction must be uni or bi, got: " + s);
}

struct Setup {
    SequenceBatch train, val, test;
    Tensor coords;  // temperature only, 2 x n_sites
    int D = 0, Imax = 0, tau_dim = 0;
    Metric metric = Metric::MSE;
};

void validate_config(const Config& cfg) {
    const std::string exp = cfg.get_str("experiment");
    const std::string model = cfg.get_str("model", "efa");
    if (exp != "synthetic" && exp != "ratings-seq" && exp != "ratings-values" && exp != "baskets" &&
        exp != "temperature")
        throw UsageError("unknown experiment: " + exp);
    if (model != "efa" && model != "fm") throw UsageError("model must be efa or fm, got: " + model);
    parse_direction(cfg.get_str("direction", "bi"));
    if (exp == "temperature" && cfg.get_bool("positional", false))
        throw UsageError("temperature runs forbid positional embeddings (sites are unordered)");
    if (exp == "temperature" && model == "fm" && cfg.get_bool("lagged", false))
        throw UsageError("the nearest-neighbor baseline does not support lagged columns");
    if (cfg.has("head")) {
        const std::string h = cfg.get_str("head");
        if (exp != "ratings-values") throw UsageError("head is only configurable for ratings-values");
        if (h != "poisson-shifted" && h != "poisson-one-plus") throw UsageError("unknown head: " + h);
    }
    if (exp != "synthetic" && !cfg.has("data")) throw UsageError("experiment " + exp + " needs data = <csv>");
}

ModelDims dims_from(const Config& cfg, const Setup& s) {
    ModelDims d;
    d.K = static_cast<int>(cfg.get_int("K", 8));
    d.Kp = static_cast<int>(cfg.get_int("Kp", 8));
    d.D = s.D;
    d.Imax = s.Imax;
    d.tau_dim = s.tau_dim;
    d.layers = static_cast<int>(cfg.get_int("layers", 1));
    d.heads = static_cast<int>(cfg.get_int("heads", 1));
    d.readout_hidden = static_cast<int>(cfg.get_int("readout_hidden", 16));
    d.residual = cfg.get_bool("residual", true);
    d.feed_forward = cfg.get_bool("feed_forward", false);
    d.ff_width = static_cast<int>(cfg.get_int("ff_width", 64));
    d.layer_norm = cfg.get_bool("layer_norm", false);
    return d;
}

FitConfig fit_config_from(const Config& cfg, std::uint64_t seed) {
    FitConfig fc;
    fc.learning_rate = cfg.get_double("learning_rate", 1e-3);
    fc.max_epochs = static_cast<int>(cfg.get_int("max_epochs", 100));
    fc.patience = static_cast<int>(cfg.get_int("patience", 10));
    fc.batch_size = static_cast<int>(cfg.get_int("batch_size", 0));
    fc.seed = seed;
    return fc;
}

// Seeded shuffle-split used for corpora that arrive without one.
void split_baskets(const BasketData& bd, std::uint64_t seed, SequenceBatch& train, SequenceBatch& val,
                   SequenceBatch& test) {
    std::vector<int> order(bd.baskets.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng rng(seed);
    rng.shuffle(order);
    const int n = static_cast<int>(order.size());
    const int n_train = static_cast<int>(n * 0.5625), n_val = static_cast<int>(n * 0.1875);
    for (int i = 0; i < n; ++i) {
        Sequence s;
        s.x = bd.baskets[order[i]];
        (i < n_train ? train : i < n_train + n_val ? val : test).seqs.push_back(std::move(s));
    }
}

Setup load_setup(const Config& cfg, std::uint64_t seed) {
    Setup s;
    const std::string exp = cfg.get_str("experiment");
    if (exp == "synthetic") {
        s.train = generate_synthetic_ratings(static_cast<int>(cfg.get_int("train_users", 5000)), seed);
        s.val = generate_synthetic_ratings(static_cast<int>(cfg.get_int("val_users", 1000)), seed + 1);
        s.test = generate_synthetic_ratings(static_cast<int>(cfg.get_int("test_users", 1000)), seed + 2);
        s.D = 5;
        s.Imax = 5;
        s.metric = Metric::MSE;
    } else if (exp == "ratings-seq" || exp == "ratings-values") {
        auto events = load_ratings_csv(cfg.get_str("data"));
        int top = static_cast<int>(cfg.get_int("top_items", 50));
        RatingsData rd = exp == "ratings-seq" ? preprocess_ratings_exp1(events, top, seed)
                                              : preprocess_ratings_exp2(events, top, seed);
        s.train = std::move(rd.train);
        s.val = std::move(rd.val);
        s.test = std::move(rd.test);
        s.D = rd.n_items;
        s.Imax = std::max({s.train.max_length(), s.val.max_length(), s.test.max_length()});
        s.metric = exp == "ratings-seq" ? Metric::CrossEntropy : Metric::MSE;
    } else if (exp == "baskets") {
        auto baskets = load_baskets_csv(cfg.get_str("data"));
        BasketData bd = preprocess_baskets(baskets, static_cast<int>(cfg.get_int("min_basket_count", 2)),
                                           static_cast<int>(cfg.get_int("min_items_per_basket", 2)));
        split_baskets(bd, seed, s.train, s.val, s.test);
        s.D = static_cast<int>(bd.vocab.size());
        s.Imax = cfg.get_bool("positional", true)
                     ? std::max({s.train.max_length(), s.val.max_length(), s.test.max_length()})
                     : 0;
        s.metric = Metric::CrossEntropy;
    } else {  // temperature
        auto readings = load_temperature_csv(cfg.get_str("data"));
        YearRange tr{static_cast<int>(cfg.get_int("train_lo", 2007)), static_cast<int>(cfg.get_int("train_hi", 2012))};
        YearRange va{static_cast<int>(cfg.get_int("val_lo", 2013)), static_cast<int>(cfg.get_int("val_hi", 2016))};
        YearRange te{static_cast<int>(cfg.get_int("test_lo", 2017)), static_cast<int>(cfg.get_int("test_hi", 2019))};
        TemperatureData td = load_temperatures(readings, tr, va, te, cfg.get_bool("lagged", false));
        s.train = std::move(td.train);
        s.val = std::move(td.val);
        s.test = std::move(td.test);
        s.coords = td.coords;
        s.D = 0;
        s.Imax = 0;
        s.tau_dim = s.train.attributes.rows;
        s.metric = Metric::MSE;
    }
    if (s.train.seqs.empty() || s.val.seqs.empty() || s.test.seqs.empty())
        throw DataError("a data split is empty; adjust filtering or split settings");
    return s;
}

// ---------------------------------------------------------------------------
// Model construction (identical draws for training and checkpoint reload)
// ---------------------------------------------------------------------------

EfaModel build_efa(const Config& cfg, const Setup& s, Rng& rng) {
    const std::string exp = cfg.get_str("experiment");
    Direction dir = parse_direction(cfg.get_str("direction", "bi"));
    ModelDims dims = dims_from(cfg, s);
    EfaModel m;
    if (exp == "synthetic") {
        m = instantiate_example(ExampleKind::MovieRatings, dims, dir, rng);
        // ratings are real-valued: drop the categorical half, swap the value
        // embedder for an affine chain, and observe through a Gaussian head
        m.has_cat = false;
        m.head_y = ExpFamHead::gaussian(cfg.get_double("sigma2", 1.0));
        m.val.lam1 = ValueEmbedder{};
        m.val.lam1.kind = ValueEmbedder::Kind::AffineChain;
        m.val.lam1.Kp = dims.Kp;
        m.val.lam1.Ws = {Var::param(rng.uniform_tensor(dims.Kp, 1, -0.05, 0.05))};
        m.val.lam1.bs = {Var::param(Tensor(dims.Kp, 1))};
        m.val.lam1.mask_emb = Var::param(rng.uniform_tensor(dims.Kp, 1, -0.05, 0.05));
    } else if (exp == "ratings-seq" || exp == "baskets") {
        m = instantiate_example(ExampleKind::Baskets, dims, dir, rng);
    } else if (exp == "ratings-values") {
        m = instantiate_example(ExampleKind::MovieRatings, dims, dir, rng);
        if (cfg.get_str("head", "poisson-shifted") == "poisson-one-plus")
            m.head_y = ExpFamHead::poisson_one_plus();
    } else {  // temperature
        m = instantiate_example(ExampleKind::SpatioTemporalGaussian, dims, dir, rng);
        m.head_y = ExpFamHead::gaussian(cfg.get_double("sigma2", 1.0));
    }
    if (cfg.get_bool("sqrt_scale", false)) {
        AttnSpec spec;
        spec.sqrt_scale = true;
        if (m.has_cat) m.cat.attn = spec;
        if (m.has_val) m.val.attn = spec;
    }
    return m;
}

FMParams build_fm(const Config& cfg, const Setup& s, Rng& rng) {
    const std::string exp = cfg.get_str("experiment");
    FMParams p;
    p.K = static_cast<int>(cfg.get_int("K", 8));
    p.D = s.D;
    p.direction = parse_direction(cfg.get_str("direction", "bi"));
    p.sigma2 = cfg.get_double("sigma2", 1.0);
    if (exp == "synthetic") {
        p.variant = FmVariant::GaussianFM;
    } else if (exp == "ratings-seq" || exp == "baskets") {
        p.variant = FmVariant::CategoricalFM;
    } else if (exp == "ratings-values") {
        p.variant = cfg.get_str("head", "poisson-shifted") == "poisson-one-plus" ? FmVariant::PoissonV2
                                                                                 : FmVariant::PoissonV1;
    } else {  // temperature
        p.variant = FmVariant::GaussianKNN_FM;
        p.has_encoder = true;
        const int Kp = static_cast<int>(cfg.get_int("Kp", 8));
        p.h.g1 = Var::param(rng.uniform_tensor(Kp, s.tau_dim, -0.05, 0.05));
        p.h.g2 = Var::param(rng.uniform_tensor(p.K, Kp, -0.05, 0.05));
        p.knn_k = static_cast<int>(cfg.get_int("knn_k", 3));
        std::vector<std::pair<double, double>> coords;
        for (int i = 0; i < s.coords.cols; ++i) coords.emplace_back(s.coords(0, i), s.coords(1, i));
        p.neighbors = haversine_knn(coords, p.knn_k);
    }
    if (!p.has_encoder) {
        p.rho = Var::param(rng.uniform_tensor(p.K, p.D, -0.05, 0.05));
        p.alpha = Var::param(rng.uniform_tensor(p.K, p.D, -0.05, 0.05));
    }
    return p;
}

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

std::string metric_name(Metric m) { return m == Metric::CrossEntropy ? "cross_entropy" : "mse"; }

// CSV with a header row of column labels and a leading label per row.
void write_matrix_csv(const fs::path& path, const Tensor& t, const std::string& corner,
                      const std::vector<std::string>& col_labels,
                      const std::vector<std::string>& row_labels) {
    std::ostringstream os;
    os.precision(17);
    os << corner;
    for (const auto& c : col_labels) os << "," << c;
    os << "\n";
    for (int r = 0; r < t.rows; ++r) {
        os << row_labels[r];
        for (int c = 0; c < t.cols; ++c) os << "," << t(r, c);
        os << "\n";
    }
    write_file(path, os.str());
}

std::vector<std::string> index_labels(const std::string& prefix, int n) {
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
    return out;
}

Checkpoint make_checkpoint(const Config& cfg, const Setup& s, std::uint64_t seed,
                           const std::vector<Var>& params) {
    std::vector<std::pair<std::string, std::string>> meta = {
        {"experiment", cfg.get_str("experiment")},
        {"model", cfg.get_str("model", "efa")},
        {"seed", std::to_string(seed)},
        {"D", std::to_string(s.D)},
        {"Imax", std::to_string(s.Imax)},
        {"tau_dim", std::to_string(s.tau_dim)},
    };
    return snapshot_parameters(params, std::move(meta));
}

// Rebuild the run's model and load the trained weights. The builder consumes
// the rng in the same order as the original run, so shapes line up exactly.
struct LoadedRun {
    Config cfg;
    Setup shape;  // only D/Imax/tau_dim/coords-free fields are meaningful
    EfaModel efa;
    FMParams fm;
    bool is_efa = true;
    std::vector<Var> params;
};

LoadedRun load_run(const std::string& run_dir) {
    LoadedRun lr;
    lr.cfg = Config::parse_file((fs::path(run_dir) / "config.snapshot").string());
    Checkpoint ck = load_checkpoint((fs::path(run_dir) / "checkpoint").string());
    auto need = [&ck](const std::string& k) {
        const std::string* v = ck.find(k);
        if (!v) throw IoError("checkpoint: missing meta key " + k);
        return *v;
    };
    lr.shape.D = std::stoi(need("D"));
    lr.shape.Imax = std::stoi(need("Imax"));
    lr.shape.tau_dim = std::stoi(need("tau_dim"));
    std::uint64_t seed = std::stoull(need("seed"));
    Rng rng(seed);
    lr.is_efa = need("model") == "efa";
    if (lr.is_efa) {
        lr.efa = build_efa(lr.cfg, lr.shape, rng);
        lr.params = lr.efa.parameters();
    } else {
        if (lr.cfg.get_str("experiment") == "temperature")
            throw UsageError("dump verbs need site coordinates; re-run the training verb instead");
        lr.fm = build_fm(lr.cfg, lr.shape, rng);
        lr.params = lr.fm.parameters();
    }
    restore_parameters(ck, lr.params);
    return lr;
}

std::vector<int> parse_sequence(const std::string& csv, int D) {
    std::vector<int> x;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            x.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw UsageError("bad token in --seq: " + tok);
        }
    }
    if (x.empty()) throw UsageError("--seq is empty");
    for (int t : x)
        if (t < 0 || t >= D) throw DataError("token out of vocabulary: " + std::to_string(t));
    return x;
}

// ---------------------------------------------------------------------------
// Verbs
// ---------------------------------------------------------------------------

int cmd_run(const std::string& config_path, const std::string& out_dir, long seed_override) {
    Config cfg = Config::parse_file(config_path);
    if (seed_override >= 0) cfg.set("seed", std::to_string(seed_override));
    validate_config(cfg);
    const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("seed", 1));

    fs::create_directories(fs::path(out_dir) / "dumps");
    write_file(fs::path(out_dir) / "config.snapshot", cfg.snapshot());

    Setup s = load_setup(cfg, seed);
    Rng rng(seed);
    const bool is_efa = cfg.get_str("model", "efa") == "efa";
    EfaModel efa;
    FMParams fm;
    Objective obj;
    Predictor pred;
    if (is_efa) {
        efa = build_efa(cfg, s, rng);
        obj = objective_for(efa);
        pred = predictor_for(efa);
    } else {
        fm = build_fm(cfg, s, rng);
        obj = objective_for(fm);
        pred = predictor_for(fm);
    }

    FitConfig fc = fit_config_from(cfg, seed);
    FitReport rep = fit(obj, s.train, s.val, fc);

    json metrics;
    metrics["experiment"] = cfg.get_str("experiment");
    metrics["model"] = cfg.get_str("model", "efa");
    metrics["direction"] = cfg.get_str("direction", "bi");
    metrics["seed"] = seed;
    metrics["metric"] = metric_name(s.metric);
    metrics["train"] = evaluate(pred, s.train, s.metric).value;
    metrics["val"] = evaluate(pred, s.val, s.metric).value;
    metrics["test"] = evaluate(pred, s.test, s.metric).value;
    metrics["best_epoch"] = rep.best_epoch;
    metrics["best_val_loss"] = rep.best_val_loss;
    metrics["epochs_run"] = rep.val_losses.size();
    if (s.metric == Metric::MSE && pred.mean) {
        auto by = evaluate(pred, s.test, Metric::MeanByActual).by_actual;
        json j;
        for (const auto& [actual, mean] : by) j[std::to_string(actual)] = mean;
        metrics["test_mean_by_actual"] = j;
    }
    write_file(fs::path(out_dir) / "metrics.json", metrics.dump(2) + "\n");
    write_file(fs::path(out_dir) / "report.json", rep.to_json() + "\n");
    save_checkpoint((fs::path(out_dir) / "checkpoint").string(),
                    make_checkpoint(cfg, s, seed, obj.params));
    std::cout << "test " << metric_name(s.metric) << ": " << metrics["test"].get<double>() << "\n";
    return 0;
}

int cmd_dump_attention(const std::string& run_dir, const std::string& seq_csv) {
    LoadedRun lr = load_run(run_dir);
    fs::path dumps = fs::path(run_dir) / "dumps";
    fs::create_directories(dumps);
    Direction dir = parse_direction(lr.cfg.get_str("direction", "bi"));
    if (!lr.is_efa) {
        // the linear baseline weights every context position uniformly
        std::vector<int> x = parse_sequence(seq_csv, lr.fm.D);
        const int I = static_cast<int>(x.size());
        Tensor w = transpose(Var::constant(detail::context_weights(I, dir))).value();
        write_matrix_csv(dumps / "attention_fm.csv", w, "query", index_labels("j", I), index_labels("i", I));
        std::cout << "wrote " << (dumps / "attention_fm.csv").string() << "\n";
        return 0;
    }
    if (!lr.efa.has_cat) throw UsageError("attention dump needs a categorical component");
    const auto& c = lr.efa.cat;
    std::vector<int> x = parse_sequence(seq_csv, c.D);
    const int I = static_cast<int>(x.size());
    if (c.use_positional && I > c.Imax) throw DataError("sequence longer than positional table");
    Var X = gather_cols(c.beta, x);
    if (c.use_positional) {
        std::vector<int> pcols(I);
        for (int j = 0; j < I; ++j) pcols[j] = j;
        X = add(X, gather_cols(c.pos, pcols));
    }
    MaskKind mask = direction_mask(dir);
    for (size_t l = 0; l < c.layers.size(); ++l) {
        Tensor avg(I, I);
        for (size_t m = 0; m < c.layers[l].heads.size(); ++m) {
            // column convention internally; dumped transposed so each row is
            // one query position summing to 1
            Tensor w = transpose(attention_scores(X, c.layers[l].heads[m], mask, c.attn)).value();
            for (int i = 0; i < w.size(); ++i) avg.v[i] += w.v[i] / c.layers[l].heads.size();
            write_matrix_csv(dumps / ("attention_l" + std::to_string(l) + "_h" + std::to_string(m) + ".csv"),
                             w, "query", index_labels("j", I), index_labels("i", I));
        }
        write_matrix_csv(dumps / ("attention_l" + std::to_string(l) + "_avg.csv"), avg, "query",
                         index_labels("j", I), index_labels("i", I));
        X = attention_layer(X, c.layers[l], mask, c.attn);
    }
    std::cout << "wrote attention dumps for " << c.layers.size() << " layer(s) to " << dumps.string() << "\n";
    return 0;
}

int cmd_dump_qkv(const std::string& run_dir, int layer) {
    LoadedRun lr = load_run(run_dir);
    if (!lr.is_efa || !lr.efa.has_cat) throw UsageError("qkv dump needs a categorical component");
    const auto& c = lr.efa.cat;
    if (layer < 0 || layer >= static_cast<int>(c.layers.size())) throw UsageError("layer out of range");
    fs::path dumps = fs::path(run_dir) / "dumps";
    fs::create_directories(dumps);
    // item columns only; the MASK column is not an item
    std::vector<int> items(c.D);
    for (int d = 0; d < c.D; ++d) items[d] = d;
    Tensor beta_items = gather_cols(c.beta, items).value();
    const auto& heads = c.layers[layer].heads;
    for (size_t m = 0; m < heads.size(); ++m) {
        const std::array<std::pair<const char*, const Var*>, 3> mats = {
            {{"q", &heads[m].wq}, {"k", &heads[m].wk}, {"v", &heads[m].wv}}};
        for (const auto& [tag, w] : mats) {
            Tensor prod = matmul(*w, Var::constant(beta_items)).value();
            write_matrix_csv(dumps / ("qkv_l" + std::to_string(layer) + "_h" + std::to_string(m) + "_" +
                                      tag + ".csv"),
                             prod, "dim", index_labels("item", c.D), index_labels("k", prod.rows));
        }
    }
    std::cout << "wrote qkv dumps for layer " << layer << " to " << dumps.string() << "\n";
    return 0;
}

int cmd_copurchase(const std::string& run_dir, int item, int k) {
    LoadedRun lr = load_run(run_dir);
    if (!lr.is_efa || !lr.efa.has_cat) throw UsageError("co-purchase scores need a categorical component");
    const auto& c = lr.efa.cat;
    if (item < 0 || item >= c.D) throw DataError("unknown item: " + std::to_string(item));
    if (k < 1 || k >= c.D) throw UsageError("need 1 <= k <= D-1");
    const Tensor& beta = c.beta.value();
    const Tensor& delta = c.delta.value();
    // delta_item . beta_g appears twice in the displayed symmetric score
    std::vector<std::pair<double, int>> scored;
    for (int g = 0; g < c.D; ++g) {
        if (g == item) continue;
        double s = 0.0;
        for (int r = 0; r < c.K; ++r) s += delta(r, item) * beta(r, g);
        scored.emplace_back(2.0 * s, g);
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    std::ostringstream os;
    os.precision(17);
    os << "rank,item,score\n";
    for (int i = 0; i < k; ++i) os << i + 1 << "," << scored[i].second << "," << scored[i].first << "\n";
    fs::path dumps = fs::path(run_dir) / "dumps";
    fs::create_directories(dumps);
    write_file(dumps / ("copurchase_item" + std::to_string(item) + ".csv"), os.str());
    std::cout << os.str();
    return 0;
}

// Trains two categorical models on the same synthetic order sequences and
// reports the fitted cross-model linear maps plus norm/bound diagnostics.
// Extra config keys: probe_users (200), probe_contexts (40), probe_K (4).
int cmd_theory_probe(const std::string& config_path, const std::string& out_dir, long seed_override) {
    Config cfg = Config::parse_file(config_path);
    if (seed_override >= 0) cfg.set("seed", std::to_string(seed_override));
    const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("seed", 1));
    const int users = static_cast<int>(cfg.get_int("probe_users", 200));
    const int n_probes = static_cast<int>(cfg.get_int("probe_contexts", 40));

    fs::create_directories(out_dir);
    write_file(fs::path(out_dir) / "config.snapshot", cfg.snapshot());

    SequenceBatch train = generate_synthetic_ratings(users, seed);
    SequenceBatch val = generate_synthetic_ratings(users / 4 + 1, seed + 1);

    ModelDims dims;
    dims.K = static_cast<int>(cfg.get_int("probe_K", 4));  // K <= D-1 keeps L well posed
    dims.D = 5;
    dims.Imax = 5;
    dims.layers = static_cast<int>(cfg.get_int("layers", 1));
    dims.heads = static_cast<int>(cfg.get_int("heads", 1));
    FitConfig fc = fit_config_from(cfg, seed);

    auto train_one = [&](std::uint64_t init_seed) {
        Rng rng(init_seed);
        auto model = std::make_unique<EfaModel>(
            instantiate_example(ExampleKind::Baskets, dims, Direction::Bidirectional, rng));
        Objective obj = objective_for(*model);
        fit(obj, train, val, fc);
        double val_nll = dataset_loss(obj, val);
        return std::make_pair(std::move(model), val_nll);
    };
    auto [ma, nll_a] = train_one(seed + 11);
    auto [mb, nll_b] = train_one(seed + 12);

    std::vector<ProbeContext> probes;
    Rng prng(seed + 13);
    for (int p = 0; p < n_probes; ++p) {
        ProbeContext pc;
        pc.seq = val.seqs[prng.randint(static_cast<int>(val.seqs.size()))];
        pc.i = prng.randint(pc.seq.length());
        probes.push_back(std::move(pc));
    }
    auto rep = linear_identifiability_probe(*ma, *mb, probes);

    std::vector<std::pair<int, int>> pairs;
    for (int d = 0; d + 1 < dims.D && static_cast<int>(pairs.size()) < dims.K; ++d) pairs.emplace_back(d, d + 1);
    auto div = diversity_matrices(*ma, pairs, probes);

    GeneralizationBoundInputs bi;
    bi.B_y = 5.0;
    bi.B = 1.0;
    bi.R = 1.0;
    bi.L = dims.layers;
    bi.M = dims.heads;
    bi.D = dims.K;  // attention operates on K-dimensional columns
    bi.Dp = dims.ff_width;
    bi.K = dims.K;
    bi.Kp = dims.Kp;
    bi.tau_dim = 1;
    bi.F = users;

    json out;
    out["probe_count"] = rep.probe_count;
    out["res_H"] = rep.res_H;
    out["res_e"] = rep.res_e;
    out["conditioning_warning"] = rep.conditioning_warning;
    out["val_nll_gap"] = std::abs(nll_a - nll_b);
    out["theta_norm_a"] = theta_norm(ma->cat.layers);
    out["theta_norm_b"] = theta_norm(mb->cat.layers);
    out["cond_L"] = std::isfinite(div.cond_L) ? json(div.cond_L) : json("inf");
    out["cond_M"] = std::isfinite(div.cond_M) ? json(div.cond_M) : json("inf");
    out["generalization_bound"] = generalization_bound(bi);
    write_file(fs::path(out_dir) / "report.json", out.dump(2) + "\n");
    std::cout << "res_H " << rep.res_H << ", res_e " << rep.res_e << ", val gap "
              << std::abs(nll_a - nll_b) << "\n";
    return 0;
}

int cmd_gen_synthetic(int users, long seed, const std::string& out_path) {
    if (users < 1) throw UsageError("--users must be positive");
    SequenceBatch b = generate_synthetic_ratings(users, static_cast<std::uint64_t>(seed));
    std::ostringstream os;
    os.precision(17);
    os << "user,position,item,rating\n";
    for (size_t u = 0; u < b.seqs.size(); ++u)
        for (int i = 0; i < b.seqs[u].length(); ++i)
            os << u << "," << i << "," << b.seqs[u].x[i] << "," << b.seqs[u].y[i] << "\n";
    write_file(out_path, os.str());
    std::cout << "wrote " << users << " users to " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"attention-based exponential family sequence models: experiment driver"};
    app.require_subcommand(1);

    std::string config_path, out_dir, run_dir, seq_csv, out_path;
    long seed = -1;
    int item = 0, k = 3, layer = 0, users = 1000;

    auto* run = app.add_subcommand("run", "train a model from a config and write metrics");
    run->add_option("--config", config_path, "config file")->required();
    run->add_option("--out", out_dir, "output directory")->required();
    run->add_option("--seed", seed, "override the config seed");

    auto* datt = app.add_subcommand("dump-attention", "export attention weight matrices for a sequence");
    datt->add_option("--run", run_dir, "completed run directory")->required();
    datt->add_option("--seq", seq_csv, "comma-separated token sequence")->required();

    auto* dqkv = app.add_subcommand("dump-qkv", "export per-item query/key/value embeddings");
    dqkv->add_option("--run", run_dir, "completed run directory")->required();
    dqkv->add_option("--layer", layer, "layer index");

    auto* cop = app.add_subcommand("copurchase", "rank items by symmetric co-purchase score");
    cop->add_option("--run", run_dir, "completed run directory")->required();
    cop->add_option("--item", item, "query item token")->required();
    cop->add_option("--k", k, "number of results");

    auto* prob = app.add_subcommand("theory-probe", "train a model pair and probe linear identifiability");
    prob->add_option("--config", config_path, "config file")->required();
    prob->add_option("--out", out_dir, "output directory")->required();
    prob->add_option("--seed", seed, "override the config seed");

    auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic ratings CSV");
    gen->add_option("--users", users, "number of users");
    gen->add_option("--seed", seed, "generator seed");
    gen->add_option("--out", out_path, "output CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage problems map to exit 1
    }

    try {
        if (run->parsed()) return cmd_run(config_path, out_dir, seed);
        if (datt->parsed()) return cmd_dump_attention(run_dir, seq_csv);
        if (dqkv->parsed()) return cmd_dump_qkv(run_dir, layer);
        if (cop->parsed()) return cmd_copurchase(run_dir, item, k);
        if (prob->parsed()) return cmd_theory_probe(config_path, out_dir, seed);
        if (gen->parsed()) return cmd_gen_synthetic(users, seed < 0 ? 1 : seed, out_path);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DivergenceError& e) {
        std::cerr << "error: training diverged at epoch " << e.epoch << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const VocabError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
