#include "diamond/glass.hpp"

#include <stdexcept>

namespace diamond {

Vec sufficient_statistic(const Scheduler& sched, const Vec& x_bar, const Vec& x_t, double s,
                         double t) {
    const double as = sched.alpha(s), at = sched.alpha(t);
    const double ss = sched.sigma(s), st = sched.sigma(t);
    const double denom = st * st * as * as + at * at * ss * ss;
    if (denom <= 0.0) throw std::domain_error("sufficient_statistic: zero denominator");
    return (as * st * st * x_bar + at * ss * ss * x_t) / denom;
}

double GlassField::w1(double s) const { return sched().sigma_dot(s) / sched().sigma(s); }

double GlassField::w2(double s) const { return sched().alpha_dot(s) - sched().alpha(s) * w1(s); }

Vec GlassField::velocity(const Vec& x_bar, const Vec& x_t, double s, double t) const {
    const auto& sc = sched();
    const double ts = sc.clamp(sc.t_star(s, t));
    Vec fused = sc.alpha(ts) * sufficient_statistic(sc, x_bar, x_t, s, t);
    return w1(s) * x_bar + w2(s) * oracle_->denoiser(fused, ts);
}

GlassField::Jacobians GlassField::velocity_jacobians(const Vec& x_bar, const Vec& x_t, double s,
                                                     double t) const {
    const auto& sc = sched();
    const double ts = sc.clamp(sc.t_star(s, t));
    const double as = sc.alpha(s), at = sc.alpha(t);
    const double ss = sc.sigma(s), st = sc.sigma(t);
    const double denom = st * st * as * as + at * at * ss * ss;
    if (denom <= 0.0) throw std::domain_error("velocity_jacobians: zero denominator");
    const double c_bar = as * st * st / denom;
    const double c_t = at * ss * ss / denom;
    Vec fused = sc.alpha(ts) * sufficient_statistic(sc, x_bar, x_t, s, t);
    Mat jd = oracle_->denoiser_jacobian(fused, ts);
    const double scale = w2(s) * sc.alpha(ts);
    Jacobians out;
    out.d_xbar = w1(s) * Mat::Identity(dim(), dim()) + scale * c_bar * jd;
    out.d_xt = scale * c_t * jd;
    return out;
}

Vec GlassField::integrate(Vec x_bar, double s0, double s1, const Vec& x_t, double t,
                          int n_steps) const {
    if (n_steps < 1) throw std::invalid_argument("integrate: n_steps must be >= 1");
    if (s1 <= s0) return x_bar;
    const double h = (s1 - s0) / n_steps;
    for (int i = 0; i < n_steps; ++i) {
        const double s = s0 + i * h;
        Vec k1 = velocity(x_bar, x_t, s, t);
        Vec k2 = velocity(x_bar + 0.5 * h * k1, x_t, s + 0.5 * h, t);
        Vec k3 = velocity(x_bar + 0.5 * h * k2, x_t, s + 0.5 * h, t);
        Vec k4 = velocity(x_bar + h * k3, x_t, s + h, t);
        x_bar += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return x_bar;
}

std::pair<Vec, Mat> GlassField::integrate_with_xt_tangent(Vec x_bar, Mat tangent, double s0,
                                                          double s1, const Vec& x_t, double t,
                                                          int n_steps) const {
    if (n_steps < 1) throw std::invalid_argument("integrate: n_steps must be >= 1");
    if (s1 <= s0) return {x_bar, tangent};
    const double h = (s1 - s0) / n_steps;
    auto rhs = [&](const Vec& xb, const Mat& tg, double s, Vec& dx, Mat& dt) {
        auto jac = velocity_jacobians(xb, x_t, s, t);
        dx = velocity(xb, x_t, s, t);
        dt = jac.d_xbar * tg + jac.d_xt;
    };
    Vec k1x(dim()), k2x(dim()), k3x(dim()), k4x(dim());
    Mat k1t, k2t, k3t, k4t;
    for (int i = 0; i < n_steps; ++i) {
        const double s = s0 + i * h;
        rhs(x_bar, tangent, s, k1x, k1t);
        rhs(x_bar + 0.5 * h * k1x, tangent + 0.5 * h * k1t, s + 0.5 * h, k2x, k2t);
        rhs(x_bar + 0.5 * h * k2x, tangent + 0.5 * h * k2t, s + 0.5 * h, k3x, k3t);
        rhs(x_bar + h * k3x, tangent + h * k3t, s + h, k4x, k4t);
        x_bar += (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        tangent += (h / 6.0) * (k1t + 2.0 * k2t + 2.0 * k3t + k4t);
    }
    return {x_bar, tangent};
}

void GlassField::integrate_path(Vec x_bar, double s0, double s1, const Vec& x_t, double t,
                                int n_steps,
                                const std::function<void(double, const Vec&)>& on_node) const {
    if (n_steps < 1) throw std::invalid_argument("integrate_path: n_steps must be >= 1");
    on_node(s0, x_bar);
    if (s1 <= s0) return;
    const double h = (s1 - s0) / n_steps;
    for (int i = 0; i < n_steps; ++i) {
        const double s = s0 + i * h;
        Vec k1 = velocity(x_bar, x_t, s, t);
        Vec k2 = velocity(x_bar + 0.5 * h * k1, x_t, s + 0.5 * h, t);
        Vec k3 = velocity(x_bar + 0.5 * h * k2, x_t, s + 0.5 * h, t);
        Vec k4 = velocity(x_bar + h * k3, x_t, s + h, t);
        x_bar += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        on_node(s + h, x_bar);
    }
}

Vec GlassField::sample_posterior_ode(const Vec& x_t, double t, int n_steps,
                                     std::uint64_t seed) const {
    Rng rng(seed);
    Vec x0 = rng.normal_vec(dim());
    return integrate(std::move(x0), sched().t_min(), sched().t_max(), x_t, t, n_steps);
}

}  // namespace diamond
