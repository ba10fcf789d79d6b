#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>

namespace diamond {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// splitmix64 finalizer; used to derive decorrelated child seeds from a root
// seed plus stream indices, so particle loops stay deterministic regardless
// of execution order.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
    return splitmix64(splitmix64(root) ^ splitmix64(stream * 0x9e3779b97f4a7c15ULL + 1));
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b) {
    return derive_seed(derive_seed(root, a), b);
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(splitmix64(seed)) {}

    double normal() { return normal_(gen_); }
    double uniform() { return uniform_(gen_); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    Vec normal_vec(Eigen::Index n) {
        Vec v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
        return v;
    }

    // Multinomial draw from unnormalized nonnegative weights.
    int categorical(const Vec& weights) {
        double total = weights.sum();
        double u = uniform() * total;
        double acc = 0.0;
        for (Eigen::Index i = 0; i < weights.size(); ++i) {
            acc += weights[i];
            if (u <= acc) return static_cast<int>(i);
        }
        return static_cast<int>(weights.size() - 1);
    }

    std::mt19937_64& engine() { return gen_; }

  private:
    std::mt19937_64 gen_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace diamond
