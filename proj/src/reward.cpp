#include "diamond/reward.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace diamond {

Vec Reward::grad(const Vec& z) const {
    // Central-difference fallback.
    const double h = 1e-6;
    Vec g(z.size());
    Vec zp = z, zm = z;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        zp[i] = z[i] + h;
        zm[i] = z[i] - h;
        g[i] = (eval(zp) - eval(zm)) / (2.0 * h);
        zp[i] = z[i];
        zm[i] = z[i];
    }
    return g;
}

QuadraticReward::QuadraticReward(Mat A, Vec b, double c) : A_(std::move(A)), b_(std::move(b)), c_(c) {
    if (A_.rows() != A_.cols() || A_.rows() != b_.size())
        throw std::invalid_argument("QuadraticReward: dimension mismatch");
    if (!A_.isApprox(A_.transpose(), 1e-10))
        throw std::invalid_argument("QuadraticReward: A must be symmetric");
}

RadialReward::RadialReward(Vec target, double scale) : target_(std::move(target)), scale_(scale) {
    if (scale_ <= 0.0) throw std::invalid_argument("RadialReward: scale must be positive");
}

Vec CustomReward::grad(const Vec& z) const {
    if (grad_) return grad_(z);
    return Reward::grad(z);
}

double log_sum_exp(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("log_sum_exp: empty input");
    double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;  // all -inf (or a stray +inf/nan propagates)
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

std::vector<double> softmax(const std::vector<double>& v) {
    double lse = log_sum_exp(v);
    std::vector<double> w(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) w[i] = std::exp(v[i] - lse);
    return w;
}

double ess(const std::vector<double>& log_weights) {
    if (log_weights.empty()) throw std::invalid_argument("ess: empty input");
    double m = -std::numeric_limits<double>::infinity();
    for (double w : log_weights) {
        if (std::isnan(w)) throw std::invalid_argument("ess: nan log-weight");
        m = std::max(m, w);
    }
    if (!std::isfinite(m)) throw std::invalid_argument("ess: all log-weights are -inf");
    double s1 = 0.0, s2 = 0.0;
    for (double w : log_weights) {
        double e = std::exp(w - m);
        s1 += e;
        s2 += e * e;
    }
    return s1 * s1 / (static_cast<double>(log_weights.size()) * s2);
}

}  // namespace diamond
