#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <array>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "efa/attention.hpp"
#include "efa/io.hpp"

using namespace efa;
namespace fs = std::filesystem;

#ifndef CLI_PATH
#define CLI_PATH "efa_cli"
#endif

namespace {

const fs::path kWork = fs::temp_directory_path() / "efa_cli_test";

int cli(const std::string& args) {
    int status = std::system((std::string(CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void spit(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
    REQUIRE(out.good());
}

// Parses a labeled CSV dump: drops the header row and the leading label column.
Tensor read_dump(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::string line;
    REQUIRE(std::getline(in, line));  // header
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        std::vector<double> row;
        std::stringstream ss(line);
        std::string field;
        bool first = true;
        while (std::getline(ss, field, ',')) {
            if (first) {
                first = false;
                continue;
            }
            row.push_back(std::stod(field));
        }
        rows.push_back(std::move(row));
    }
    Tensor t(static_cast<int>(rows.size()), rows.empty() ? 0 : static_cast<int>(rows[0].size()));
    for (int r = 0; r < t.rows; ++r)
        for (int c = 0; c < t.cols; ++c) t(r, c) = rows[r][c];
    return t;
}

void write_basket_corpus(const fs::path& p) {
    // 40 deterministic baskets over items 100..104
    std::ostringstream os;
    os << "basket_id,position,item\n";
    for (int b = 0; b < 40; ++b) {
        int n = 2 + (b * 7) % 4;
        for (int i = 0; i < n; ++i) os << b << "," << i << "," << 100 + (b * 3 + i * 5) % 5 << "\n";
    }
    spit(p, os.str());
}

void write_basket_config(const fs::path& p, const std::string& model) {
    spit(p,
         "experiment = baskets\n"
         "model = " + model + "\n"
         "direction = uni\n"
         "data = " + (kWork / "baskets.csv").string() + "\n"
         "min_basket_count = 1\n"
         "min_items_per_basket = 1\n"
         "K = 3\n"
         "max_epochs = 3\n"
         "patience = 3\n"
         "seed = 2\n");
}

}  // namespace

TEST_CASE("cli workspace setup") {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
    write_basket_corpus(kWork / "baskets.csv");
    write_basket_config(kWork / "bask.cfg", "efa");
    write_basket_config(kWork / "bask_fm.cfg", "fm");
    spit(kWork / "syn.cfg",
         "experiment = synthetic\n"
         "model = efa\n"
         "direction = uni\n"
         "train_users = 30\n"
         "val_users = 10\n"
         "test_users = 10\n"
         "max_epochs = 3\n"
         "patience = 3\n"
         "K = 4\n"
         "Kp = 4\n"
         "seed = 7\n");
    REQUIRE(fs::exists(kWork / "baskets.csv"));
}

TEST_CASE("repeated runs write byte-identical metrics") {
    fs::path a = kWork / "runA", b = kWork / "runB";
    REQUIRE(cli("run --config " + (kWork / "syn.cfg").string() + " --out " + a.string()) == 0);
    REQUIRE(cli("run --config " + (kWork / "syn.cfg").string() + " --out " + b.string()) == 0);
    // report.json is excluded: its wall-clock field varies by design
    for (const char* f : {"metrics.json", "config.snapshot", "checkpoint"})
        REQUIRE(slurp(a / f) == slurp(b / f));
}

TEST_CASE("attention dump: stochastic rows, causal zeros, library round trip") {
    fs::path run = kWork / "run_bask";
    REQUIRE(cli("run --config " + (kWork / "bask.cfg").string() + " --out " + run.string()) == 0);
    REQUIRE(cli("dump-attention --run " + run.string() + " --seq 0,1,2,3") == 0);
    Tensor w = read_dump(run / "dumps" / "attention_l0_h0.csv");
    REQUIRE(w.rows == 4);
    REQUIRE(w.cols == 4);
    for (int i = 0; i < 4; ++i) {
        double s = 0.0;
        for (int j = 0; j < 4; ++j) {
            s += w(i, j);
            if (j > i) REQUIRE(w(i, j) == 0.0);  // strictly-future entries
        }
        REQUIRE(s == Catch::Approx(1.0).margin(1e-12));
    }
    // one head: the averaged dump is that head's matrix
    REQUIRE(max_abs_diff(read_dump(run / "dumps" / "attention_l0_avg.csv"), w) == 0.0);

    // recompute from the checkpoint with the library and compare to the dump
    Checkpoint ck = load_checkpoint((run / "checkpoint").string());
    // parameter order: beta, delta, pos, then per-head wq, wk, wv
    Var beta = Var::constant(ck.tensors[0]);
    std::vector<int> x = {0, 1, 2, 3}, pcols = {0, 1, 2, 3};
    Var X = add(gather_cols(beta, x), gather_cols(Var::constant(ck.tensors[2]), pcols));
    HeadParams head;
    head.wq = Var::constant(ck.tensors[3]);
    head.wk = Var::constant(ck.tensors[4]);
    head.wv = Var::constant(ck.tensors[5]);
    Tensor expect = transpose(attention_scores(X, head, MaskKind::Causal, AttnSpec{})).value();
    REQUIRE(max_abs_diff(w, expect) < 1e-9);
}

TEST_CASE("fm attention dump is the uniform context-weight matrix") {
    fs::path run = kWork / "run_bask_fm";
    REQUIRE(cli("run --config " + (kWork / "bask_fm.cfg").string() + " --out " + run.string()) == 0);
    REQUIRE(cli("dump-attention --run " + run.string() + " --seq 0,1,2") == 0);
    Tensor w = read_dump(run / "dumps" / "attention_fm.csv");
    Tensor expect = Tensor::from_rows({{0.0, 0.0, 0.0}, {1.0, 0.0, 0.0}, {0.5, 0.5, 0.0}});
    REQUIRE(max_abs_diff(w, expect) == 0.0);
}

TEST_CASE("qkv dump matches the direct product") {
    fs::path run = kWork / "run_bask";
    REQUIRE(cli("dump-qkv --run " + run.string() + " --layer 0") == 0);
    Checkpoint ck = load_checkpoint((run / "checkpoint").string());
    const Tensor& beta = ck.tensors[0];  // K x (D+1), MASK column last
    const int K = beta.rows, D = beta.cols - 1;
    const std::array<std::pair<const char*, int>, 3> mats = {{{"q", 3}, {"k", 4}, {"v", 5}}};
    for (const auto& [tag, idx] : mats) {
        Tensor dump = read_dump(run / "dumps" / (std::string("qkv_l0_h0_") + tag + ".csv"));
        REQUIRE(dump.rows == K);
        REQUIRE(dump.cols == D);
        const Tensor& wmat = ck.tensors[idx];
        for (int r = 0; r < K; ++r)
            for (int c = 0; c < D; ++c) {
                double s = 0.0;
                for (int k = 0; k < K; ++k) s += wmat(r, k) * beta(k, c);
                REQUIRE(dump(r, c) == Catch::Approx(s).margin(1e-9));
            }
    }
    REQUIRE(cli("dump-qkv --run " + run.string() + " --layer 3") == 1);
}

TEST_CASE("copurchase ranks a planted maximum first") {
    // handcrafted run directory: Baskets-shape model, K=2, D=5, no positional
    const int K = 2, D = 5;
    fs::path run = kWork / "run_planted";
    fs::create_directories(run);
    spit(run / "config.snapshot",
         "K = 2\n"
         "direction = uni\n"
         "experiment = baskets\n"
         "model = efa\n"
         "positional = false\n"
         "seed = 1\n");
    Checkpoint ck;
    ck.meta = {{"experiment", "baskets"}, {"model", "efa"}, {"seed", "1"},
               {"D", "5"},               {"Imax", "0"},     {"tau_dim", "0"}};
    Tensor beta(K, D + 1), delta(K, D);
    // query item 1 reads row 0; item 3 dominates, then 0, then 4, then 2
    delta(0, 1) = 1.0;
    beta(0, 3) = 5.0;
    beta(0, 0) = 2.0;
    beta(0, 4) = 1.0;
    beta(0, 2) = -1.0;
    beta(1, 1) = 9.0;  // row 1 is ignored by item 1's delta column
    ck.tensors = {beta, delta, Tensor(K, K), Tensor(K, K), Tensor(K, K)};
    save_checkpoint((run / "checkpoint").string(), ck);

    REQUIRE(cli("copurchase --run " + run.string() + " --item 1 --k 4") == 0);
    std::istringstream in(slurp(run / "dumps" / "copurchase_item1.csv"));
    std::string header, line;
    std::getline(in, header);
    REQUIRE(header == "rank,item,score");
    std::vector<int> items;
    std::vector<double> scores;
    while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string rank, item, score;
        std::getline(ss, rank, ',');
        std::getline(ss, item, ',');
        std::getline(ss, score, ',');
        items.push_back(std::stoi(item));
        scores.push_back(std::stod(score));
    }
    REQUIRE(items == std::vector<int>{3, 0, 4, 2});  // k = D-1: full ranking
    REQUIRE(scores[0] == 10.0);                      // both inner-product terms
    REQUIRE(cli("copurchase --run " + run.string() + " --item 9 --k 2") == 2);
    REQUIRE(cli("copurchase --run " + run.string() + " --item 1 --k 0") == 1);
}

TEST_CASE("synthetic export is deterministic") {
    fs::path a = kWork / "synthA.csv", b = kWork / "synthB.csv";
    REQUIRE(cli("gen-synthetic --users 12 --seed 4 --out " + a.string()) == 0);
    REQUIRE(cli("gen-synthetic --users 12 --seed 4 --out " + b.string()) == 0);
    std::string text = slurp(a);
    REQUIRE(text == slurp(b));
    REQUIRE(text.rfind("user,position,item,rating\n", 0) == 0);
    REQUIRE(std::count(text.begin(), text.end(), '\n') == 1 + 12 * 5);
}

TEST_CASE("exit codes distinguish usage, data, and config problems") {
    REQUIRE(cli("run --config /nonexistent.cfg --out " + (kWork / "x").string()) == 2);
    REQUIRE(cli("nonsense-verb") == 1);
    REQUIRE(cli("run --config") == 1);  // missing flag value
    spit(kWork / "bad.cfg",
         "experiment = temperature\n"
         "model = efa\n"
         "data = nowhere.csv\n"
         "positional = true\n");
    REQUIRE(cli("run --config " + (kWork / "bad.cfg").string() + " --out " + (kWork / "y").string()) == 1);
    spit(kWork / "badexp.cfg", "experiment = what\nmodel = efa\n");
    REQUIRE(cli("run --config " + (kWork / "badexp.cfg").string() + " --out " + (kWork / "z").string()) == 1);
}
