#include "diamond/maps.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace diamond {

namespace {
constexpr double kFdStep = 1e-5;
}

Mat FlowMap::input_jacobian(const Vec& x, double t, double r) const {
    const Eigen::Index d = x.size();
    Mat jac(d, d);
    Vec xp = x, xm = x;
    for (Eigen::Index j = 0; j < d; ++j) {
        xp[j] = x[j] + kFdStep;
        xm[j] = x[j] - kFdStep;
        jac.col(j) = (apply(xp, t, r) - apply(xm, t, r)) / (2.0 * kFdStep);
        xp[j] = x[j];
        xm[j] = x[j];
    }
    return jac;
}

std::pair<Vec, Mat> FlowMap::apply_with_jacobian(const Vec& x, double t, double r) const {
    return {apply(x, t, r), input_jacobian(x, t, r)};
}

OracleFlowMap::OracleFlowMap(const MixtureOracle& oracle, int n_steps)
    : oracle_(&oracle), n_steps_(n_steps) {
    if (n_steps < 1) throw std::invalid_argument("OracleFlowMap: n_steps must be >= 1");
}

Vec OracleFlowMap::apply(const Vec& x, double t, double r) const {
    if (r < t) throw std::domain_error("FlowMap: requires t <= r");
    const auto& sc = sched();
    const double t0 = sc.clamp(t), t1 = sc.clamp(r);
    if (t1 <= t0) return x;
    Vec y = x;
    const double h = (t1 - t0) / n_steps_;
    for (int i = 0; i < n_steps_; ++i) {
        const double ti = t0 + i * h;
        Vec k1 = oracle_->velocity(y, ti);
        Vec k2 = oracle_->velocity(y + 0.5 * h * k1, ti + 0.5 * h);
        Vec k3 = oracle_->velocity(y + 0.5 * h * k2, ti + 0.5 * h);
        Vec k4 = oracle_->velocity(y + h * k3, ti + h);
        y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return y;
}

std::pair<Vec, Mat> OracleFlowMap::apply_with_jacobian(const Vec& x, double t, double r) const {
    if (r < t) throw std::domain_error("FlowMap: requires t <= r");
    const auto& sc = sched();
    const double t0 = sc.clamp(t), t1 = sc.clamp(r);
    const Eigen::Index d = dim();
    Vec y = x;
    Mat tg = Mat::Identity(d, d);
    if (t1 <= t0) return {y, tg};
    const double h = (t1 - t0) / n_steps_;
    auto rhs = [&](const Vec& yy, const Mat& tt, double ti, Vec& dy, Mat& dt) {
        dy = oracle_->velocity(yy, ti);
        dt = oracle_->velocity_jacobian(yy, ti) * tt;
    };
    Vec k1x(d), k2x(d), k3x(d), k4x(d);
    Mat k1t, k2t, k3t, k4t;
    for (int i = 0; i < n_steps_; ++i) {
        const double ti = t0 + i * h;
        rhs(y, tg, ti, k1x, k1t);
        rhs(y + 0.5 * h * k1x, tg + 0.5 * h * k1t, ti + 0.5 * h, k2x, k2t);
        rhs(y + 0.5 * h * k2x, tg + 0.5 * h * k2t, ti + 0.5 * h, k3x, k3t);
        rhs(y + h * k3x, tg + h * k3t, ti + h, k4x, k4t);
        y += (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        tg += (h / 6.0) * (k1t + 2.0 * k2t + 2.0 * k3t + k4t);
    }
    return {y, tg};
}

Mat OracleFlowMap::input_jacobian(const Vec& x, double t, double r) const {
    return apply_with_jacobian(x, t, r).second;
}

// ---------------------------------------------------------------------------

Mat PosteriorDiamondMap::cond_jacobian(const Vec& x_bar, double s, double r, const Vec& x_t,
                                       double t) const {
    const Eigen::Index d = x_t.size();
    Mat jac(d, d);
    Vec xp = x_t, xm = x_t;
    for (Eigen::Index j = 0; j < d; ++j) {
        xp[j] = x_t[j] + kFdStep;
        xm[j] = x_t[j] - kFdStep;
        jac.col(j) = (apply(x_bar, s, r, xp, t) - apply(x_bar, s, r, xm, t)) / (2.0 * kFdStep);
        xp[j] = x_t[j];
        xm[j] = x_t[j];
    }
    return jac;
}

std::pair<Vec, Mat> PosteriorDiamondMap::apply_with_cond_jacobian(const Vec& x_bar, double s,
                                                                  double r, const Vec& x_t,
                                                                  double t) const {
    return {apply(x_bar, s, r, x_t, t), cond_jacobian(x_bar, s, r, x_t, t)};
}

Vec PosteriorDiamondMap::dr_apply(const Vec& x_bar, double s, double r, const Vec& x_t,
                                  double t) const {
    return (apply(x_bar, s, r + kFdStep, x_t, t) - apply(x_bar, s, r - kFdStep, x_t, t)) /
           (2.0 * kFdStep);
}

Vec PosteriorDiamondMap::ds_apply(const Vec& x_bar, double s, double r, const Vec& x_t,
                                  double t) const {
    return (apply(x_bar, s + kFdStep, r, x_t, t) - apply(x_bar, s - kFdStep, r, x_t, t)) /
           (2.0 * kFdStep);
}

Vec PosteriorDiamondMap::xbar_jvp(const Vec& x_bar, double s, double r, const Vec& x_t, double t,
                                  const Vec& tangent) const {
    return (apply(x_bar + kFdStep * tangent, s, r, x_t, t) -
            apply(x_bar - kFdStep * tangent, s, r, x_t, t)) /
           (2.0 * kFdStep);
}

OracleDiamondMap::OracleDiamondMap(const GlassField& field, int n_steps)
    : field_(&field), n_steps_(n_steps) {
    if (n_steps < 1) throw std::invalid_argument("OracleDiamondMap: n_steps must be >= 1");
}

Vec OracleDiamondMap::apply(const Vec& x_bar, double s, double r, const Vec& x_t, double t) const {
    if (r < s) throw std::domain_error("PosteriorDiamondMap: requires s <= r");
    const auto& sc = sched();
    const double s0 = sc.clamp(s), s1 = sc.clamp(r);
    if (s1 <= s0) return x_bar;
    return field_->integrate(x_bar, s0, s1, x_t, t, n_steps_);
}

std::pair<Vec, Mat> OracleDiamondMap::apply_with_cond_jacobian(const Vec& x_bar, double s, double r,
                                                               const Vec& x_t, double t) const {
    if (r < s) throw std::domain_error("PosteriorDiamondMap: requires s <= r");
    const auto& sc = sched();
    const double s0 = sc.clamp(s), s1 = sc.clamp(r);
    Mat tg = Mat::Zero(dim(), dim());
    if (s1 <= s0) return {x_bar, tg};
    return field_->integrate_with_xt_tangent(x_bar, tg, s0, s1, x_t, t, n_steps_);
}

Mat OracleDiamondMap::cond_jacobian(const Vec& x_bar, double s, double r, const Vec& x_t,
                                    double t) const {
    return apply_with_cond_jacobian(x_bar, s, r, x_t, t).second;
}

// ---------------------------------------------------------------------------

Vec renoise(const Scheduler& sched, const Vec& x_t, double t, double t_prime, const Vec& eps) {
    if (!(t_prime < t)) throw std::domain_error("renoise: requires t_prime < t");
    const double at = sched.alpha(t), ap = sched.alpha(t_prime);
    const double st = sched.sigma(t), sp = sched.sigma(t_prime);
    const double ratio = ap / at;
    const double var = sp * sp - ratio * ratio * st * st;
    if (var < -1e-12) throw std::domain_error("renoise: negative noise variance");
    return ratio * x_t + std::sqrt(std::max(var, 0.0)) * eps;
}

Vec diamond_ddpm_step(const PosteriorDiamondMap& map, const Vec& x_t, double t, double t_prime,
                      Rng& rng) {
    const auto& sc = map.sched();
    const double r_star = sc.r_star(t, t_prime);
    Vec x_bar = rng.normal_vec(map.dim());
    Vec x_bar_r = map.apply(x_bar, 0.0, r_star, x_t, t);
    return sc.alpha(t_prime) * sufficient_statistic(sc, x_bar_r, x_t, r_star, t);
}

Vec diamond_ddpm_step(const PosteriorDiamondMap& map, const Vec& x_t, double t, double t_prime,
                      std::uint64_t seed) {
    Rng rng(seed);
    return diamond_ddpm_step(map, x_t, t, t_prime, rng);
}

Vec naive_renoise_step(const PosteriorDiamondMap& map, const Vec& x_t, double t, double t_prime,
                       std::uint64_t seed) {
    Rng rng(seed);
    Vec x_bar = rng.normal_vec(map.dim());
    Vec x1 = map.apply(x_bar, 0.0, 1.0, x_t, t);
    const auto& sc = map.sched();
    return sc.alpha(t_prime) * x1 + sc.sigma(t_prime) * rng.normal_vec(map.dim());
}

Vec ddpm_reference_sample(const MixtureOracle& oracle, const Vec& x_t, double t, double t_prime,
                          Rng& rng) {
    if (!(t_prime > t)) throw std::domain_error("ddpm_reference_sample: requires t_prime > t");
    const auto& sc = oracle.sched();
    Vec z = oracle.posterior(x_t, t).sample(rng);
    const double at = sc.alpha(t), ap = sc.alpha(t_prime);
    const double st = sc.sigma(t), sp = sc.sigma(t_prime);
    Vec mean = ap * z + (at * sp * sp / (ap * st * st)) * (x_t - at * z);
    const double var = sp * sp * (1.0 - at * at * sp * sp / (ap * ap * st * st));
    if (var < -1e-12) throw std::domain_error("ddpm_reference_sample: negative conditional variance");
    return mean + std::sqrt(std::max(var, 0.0)) * rng.normal_vec(x_t.size());
}

Vec ddpm_reference_sample(const MixtureOracle& oracle, const Vec& x_t, double t, double t_prime,
                          std::uint64_t seed) {
    Rng rng(seed);
    return ddpm_reference_sample(oracle, x_t, t, t_prime, rng);
}

Mat r_star_surface(const Scheduler& sched, const std::vector<double>& grid_t,
                   const std::vector<double>& grid_t_prime) {
    Mat out(grid_t.size(), grid_t_prime.size());
    for (std::size_t i = 0; i < grid_t.size(); ++i)
        for (std::size_t j = 0; j < grid_t_prime.size(); ++j)
            out(i, j) = grid_t[i] < grid_t_prime[j]
                            ? sched.r_star(grid_t[i], grid_t_prime[j])
                            : std::numeric_limits<double>::quiet_NaN();
    return out;
}

}  // namespace diamond
