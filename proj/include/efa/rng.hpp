#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "tensor.hpp"

namespace efa {

// Seeded RNG wrapper; one instance per run keeps everything reproducible.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : g_(seed) {}

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(g_);
    }
    double normal(double mean, double sd) {
        return std::normal_distribution<double>(mean, sd)(g_);
    }
    int randint(int n) {  // [0, n)
        return std::uniform_int_distribution<int>(0, n - 1)(g_);
    }
    template <typename T>
    void shuffle(std::vector<T>& xs) {
        for (int i = static_cast<int>(xs.size()) - 1; i > 0; --i) std::swap(xs[i], xs[randint(i + 1)]);
    }

    Tensor uniform_tensor(int r, int c, double lo, double hi) {
        Tensor t(r, c);
        for (double& x : t.v) x = uniform(lo, hi);
        return t;
    }

    std::mt19937_64& engine() { return g_; }

private:
    std::mt19937_64 g_;
};

}  // namespace efa
