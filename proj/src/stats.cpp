#include "diamond/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace diamond {

namespace {

void check_sets(const SampleSet& a, const SampleSet& b) {
    if (a.n() < 2 || b.n() < 2) throw std::invalid_argument("distance: need at least 2 samples");
    if (a.dim() != b.dim()) throw std::invalid_argument("distance: dimension mismatch");
    if (!a.samples.allFinite() || !b.samples.allFinite())
        throw std::invalid_argument("distance: non-finite samples");
}

// Integrates |Qa - Qb|^p over the merged quantile grid of two sorted vectors.
double quantile_coupling(const std::vector<double>& a, const std::vector<double>& b, int p) {
    const std::size_t n = a.size(), m = b.size();
    std::size_t i = 0, j = 0;
    double u = 0.0, acc = 0.0;
    while (i < n && j < m) {
        double ua = static_cast<double>(i + 1) / n;
        double ub = static_cast<double>(j + 1) / m;
        double next = std::min(ua, ub);
        double diff = std::abs(a[i] - b[j]);
        acc += (p == 1 ? diff : diff * diff) * (next - u);
        u = next;
        if (ua <= ub) ++i;
        if (ub <= ua) ++j;
    }
    return acc;
}

std::vector<double> sorted_column(const Vec& v) {
    std::vector<double> out(v.data(), v.data() + v.size());
    std::sort(out.begin(), out.end());
    return out;
}

double ks_q(double lambda) {
    double sum = 0.0;
    double sign = 1.0;
    for (int k = 1; k <= 100; ++k) {
        double term = sign * std::exp(-2.0 * k * k * lambda * lambda);
        sum += term;
        if (std::abs(term) < 1e-12 * std::abs(sum) + 1e-300) break;
        sign = -sign;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

}  // namespace

SampleSet make_sample_set(Mat samples, std::string label, std::uint64_t seed) {
    return {std::move(samples), std::move(label), seed};
}

double w1_1d(const SampleSet& a, const SampleSet& b) {
    check_sets(a, b);
    if (a.dim() != 1) throw std::invalid_argument("w1_1d: requires d = 1");
    return quantile_coupling(sorted_column(a.samples.col(0)), sorted_column(b.samples.col(0)), 1);
}

double w2_sq_1d(Vec a, Vec b) {
    std::sort(a.data(), a.data() + a.size());
    std::sort(b.data(), b.data() + b.size());
    std::vector<double> av(a.data(), a.data() + a.size());
    std::vector<double> bv(b.data(), b.data() + b.size());
    return quantile_coupling(av, bv, 2);
}

double sliced_w2(const SampleSet& a, const SampleSet& b, int n_projections, std::uint64_t seed) {
    check_sets(a, b);
    if (n_projections < 1) throw std::invalid_argument("sliced_w2: n_projections must be >= 1");
    Rng rng(seed);
    double acc = 0.0;
    for (int p = 0; p < n_projections; ++p) {
        Vec dir = rng.normal_vec(a.dim());
        double norm = dir.norm();
        if (norm == 0.0) {
            dir = Vec::Unit(a.dim(), 0);
            norm = 1.0;
        }
        dir /= norm;
        acc += w2_sq_1d(a.samples * dir, b.samples * dir);
    }
    return std::sqrt(acc / n_projections);
}

MmdEstimate rbf_mmd(const SampleSet& a, const SampleSet& b, double bandwidth) {
    check_sets(a, b);
    if (bandwidth <= 0.0) throw std::invalid_argument("rbf_mmd: bandwidth must be positive");
    const Eigen::Index n = a.n(), m = b.n();
    const double inv = -0.5 / (bandwidth * bandwidth);
    auto kernel = [inv](const Mat& x, const Mat& y) {
        Vec xn = x.rowwise().squaredNorm();
        Vec yn = y.rowwise().squaredNorm();
        Mat d2 = ((-2.0 * x * y.transpose()).colwise() + xn).rowwise() + yn.transpose();
        return (inv * d2.array()).exp().matrix().eval();
    };
    Mat kxx = kernel(a.samples, a.samples);
    Mat kyy = kernel(b.samples, b.samples);
    Mat kxy = kernel(a.samples, b.samples);

    double sxx = kxx.sum() - kxx.trace();
    double syy = kyy.sum() - kyy.trace();
    double sxy = kxy.sum();
    auto stat = [](double sx, double sy, double sc, double nn, double mm) {
        return sx / (nn * (nn - 1.0)) + sy / (mm * (mm - 1.0)) - 2.0 * sc / (nn * mm);
    };
    double mmd2 = stat(sxx, syy, sxy, static_cast<double>(n), static_cast<double>(m));

    // Jackknife: delete one x (then one y) and recombine in quadrature.
    Vec rowx = kxx.rowwise().sum() - kxx.diagonal();
    Vec rowy = kyy.rowwise().sum() - kyy.diagonal();
    Vec cross_x = kxy.rowwise().sum();
    Vec cross_y = kxy.colwise().sum().transpose();
    auto jackknife_var = [&](Eigen::Index count, const std::function<double(Eigen::Index)>& loo) {
        double mean = 0.0;
        std::vector<double> vals(count);
        for (Eigen::Index i = 0; i < count; ++i) {
            vals[i] = loo(i);
            mean += vals[i];
        }
        mean /= static_cast<double>(count);
        double ss = 0.0;
        for (double v : vals) ss += (v - mean) * (v - mean);
        return ss * (count - 1.0) / static_cast<double>(count);
    };
    double var_x = jackknife_var(n, [&](Eigen::Index i) {
        return stat(sxx - 2.0 * rowx[i], syy, sxy - cross_x[i], static_cast<double>(n - 1),
                    static_cast<double>(m));
    });
    double var_y = jackknife_var(m, [&](Eigen::Index j) {
        return stat(sxx, syy - 2.0 * rowy[j], sxy - cross_y[j], static_cast<double>(n),
                    static_cast<double>(m - 1));
    });
    return {mmd2, std::sqrt(var_x + var_y)};
}

KsResult ks_test_1d(const SampleSet& a, const SampleSet& b) {
    check_sets(a, b);
    if (a.dim() != 1) throw std::invalid_argument("ks_test_1d: requires d = 1");
    auto xs = sorted_column(a.samples.col(0));
    auto ys = sorted_column(b.samples.col(0));
    const std::size_t n = xs.size(), m = ys.size();
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < n && j < m) {
        double v = std::min(xs[i], ys[j]);
        while (i < n && xs[i] <= v) ++i;
        while (j < m && ys[j] <= v) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
    }
    double ne = std::sqrt(static_cast<double>(n) * m / static_cast<double>(n + m));
    double lambda = (ne + 0.12 + 0.11 / ne) * d;
    return {d, ks_q(lambda)};
}

double fd_grad_check(const std::function<double(const Vec&)>& f,
                     const std::function<Vec(const Vec&)>& grad, const Vec& x, double h) {
    Vec g = grad(x);
    Vec fd(x.size());
    Vec xp = x, xm = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        xp[i] = x[i] + h;
        xm[i] = x[i] - h;
        fd[i] = (f(xp) - f(xm)) / (2.0 * h);
        xp[i] = x[i];
        xm[i] = x[i];
    }
    double scale = std::max({g.cwiseAbs().maxCoeff(), fd.cwiseAbs().maxCoeff(), 1e-12});
    return (g - fd).cwiseAbs().maxCoeff() / scale;
}

}  // namespace diamond
