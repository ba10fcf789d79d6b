#include "diamond/estimators.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "diamond/parallel.hpp"

namespace diamond {

namespace {

constexpr double kFdStep = 1e-5;

struct LogMeanExp {
    double value;
    double std_error;  // jackknife; 0 when n == 1
};

LogMeanExp log_mean_exp_jackknife(const std::vector<double>& r) {
    const int n = static_cast<int>(r.size());
    double m = *std::max_element(r.begin(), r.end());
    double total = 0.0;
    for (double ri : r) total += std::exp(ri - m);
    LogMeanExp out;
    out.value = m + std::log(total / n);
    out.std_error = 0.0;
    if (n > 1) {
        std::vector<double> loo(n);
        double mean = 0.0;
        for (int i = 0; i < n; ++i) {
            loo[i] = m + std::log((total - std::exp(r[i] - m)) / (n - 1));
            mean += loo[i];
        }
        mean /= n;
        double ss = 0.0;
        for (double v : loo) ss += (v - mean) * (v - mean);
        out.std_error = std::sqrt(ss * (n - 1) / static_cast<double>(n));
    }
    return out;
}

// Softmax-weighted vector sum with streaming leave-one-out jackknife.
void weighted_grad_jackknife(const std::vector<double>& v, const std::vector<Vec>& g,
                             ValueEstimate& est) {
    const int n = static_cast<int>(v.size());
    const Eigen::Index d = g[0].size();
    double m = *std::max_element(v.begin(), v.end());
    double denom = 0.0;
    Vec num = Vec::Zero(d);
    for (int i = 0; i < n; ++i) {
        double w = std::exp(v[i] - m);
        denom += w;
        num += w * g[i];
    }
    est.gradient = num / denom;
    if (n > 1) {
        Mat loo(n, d);
        for (int i = 0; i < n; ++i) {
            double w = std::exp(v[i] - m);
            loo.row(i) = ((num - w * g[i]) / (denom - w)).transpose();
        }
        Vec mean = loo.colwise().mean();
        Vec se(d);
        for (Eigen::Index j = 0; j < d; ++j) {
            double ss = (loo.col(j).array() - mean[j]).square().sum();
            se[j] = std::sqrt(ss * (n - 1) / static_cast<double>(n));
        }
        est.gradient_std_error = se;
    }
}

}  // namespace

SensitivityMode parse_sensitivity_mode(std::string_view name) {
    if (name == "tangent-ode") return SensitivityMode::TangentOde;
    if (name == "finite-difference") return SensitivityMode::FiniteDifference;
    throw std::invalid_argument("unknown sensitivity mode: " + std::string(name));
}

ValueEstimate posterior_value(const PosteriorDiamondMap& map, const Vec& x_t, double t,
                              const Reward& reward, int n_particles, std::uint64_t seed) {
    if (n_particles < 1) throw std::invalid_argument("posterior_value: n_particles must be >= 1");
    const Eigen::Index d = map.dim();
    std::vector<double> r(n_particles);
    parallel_for(n_particles, [&](std::size_t k) {
        Rng rng(derive_seed(seed, k));
        Vec z = map.apply(rng.normal_vec(d), 0.0, 1.0, x_t, t);
        r[k] = reward.eval(z);
    });
    auto lme = log_mean_exp_jackknife(r);
    ValueEstimate est;
    est.value = lme.value;
    est.std_error = lme.std_error;
    est.ess = ess(r);
    est.n_particles = n_particles;
    return est;
}

ValueEstimate posterior_value_gradient(const PosteriorDiamondMap& map, const Vec& x_t, double t,
                                       const Reward& reward, int n_particles, std::uint64_t seed,
                                       SensitivityMode mode) {
    if (n_particles < 1)
        throw std::invalid_argument("posterior_value_gradient: n_particles must be >= 1");
    const Eigen::Index d = map.dim();
    std::vector<double> r(n_particles);
    std::vector<Vec> grads(n_particles);
    parallel_for(n_particles, [&](std::size_t k) {
        Rng rng(derive_seed(seed, k));
        Vec x_bar = rng.normal_vec(d);
        if (mode == SensitivityMode::TangentOde) {
            auto [z, jac] = map.apply_with_cond_jacobian(x_bar, 0.0, 1.0, x_t, t);
            r[k] = reward.eval(z);
            grads[k] = jac.transpose() * reward.grad(z);
        } else {
            Vec z = map.apply(x_bar, 0.0, 1.0, x_t, t);
            r[k] = reward.eval(z);
            Vec g(d);
            Vec xp = x_t, xm = x_t;
            for (Eigen::Index j = 0; j < d; ++j) {
                xp[j] = x_t[j] + kFdStep;
                xm[j] = x_t[j] - kFdStep;
                g[j] = (reward.eval(map.apply(x_bar, 0.0, 1.0, xp, t)) -
                        reward.eval(map.apply(x_bar, 0.0, 1.0, xm, t))) /
                       (2.0 * kFdStep);
                xp[j] = x_t[j];
                xm[j] = x_t[j];
            }
            grads[k] = g;
        }
    });
    ValueEstimate est;
    est.n_particles = n_particles;
    est.ess = ess(r);
    weighted_grad_jackknife(r, grads, est);
    return est;
}

ValueEstimate denoiser_value(const MixtureOracle& oracle, const Vec& x_t, double t,
                             const Reward& reward) {
    Vec d_t = oracle.denoiser(x_t, t);
    ValueEstimate est;
    est.value = reward.eval(d_t);
    est.gradient = oracle.denoiser_jacobian(x_t, t).transpose() * reward.grad(d_t);
    est.ess = 1.0;
    est.n_particles = 1;
    return est;
}

ValueEstimate weighted_diamond_gradient(const FlowMap& flow, const ScoreFn& score, const Vec& x_t,
                                        double t, double lambda, const Reward& reward,
                                        int n_particles, std::uint64_t seed, SensitivityMode mode,
                                        std::vector<WeightedParticle>* particles_out) {
    if (n_particles < 1)
        throw std::invalid_argument("weighted_diamond_gradient: n_particles must be >= 1");
    const auto& sc = flow.sched();
    const double t_prime = sc.snr_shift_time(t, lambda);
    if (!(t_prime < t))
        throw std::domain_error("weighted_diamond_gradient: lambda must yield t_prime < t");
    const Eigen::Index d = x_t.size();
    const double at = sc.alpha(t), ap = sc.alpha(t_prime);
    const double st2 = sc.sigma(t) * sc.sigma(t);
    const Vec score_t = score(x_t, t);
    const Vec score_p_xt = score(x_t, t_prime);

    std::vector<double> v(n_particles);
    std::vector<Vec> g(n_particles);
    std::vector<WeightedParticle> parts(n_particles);
    parallel_for(n_particles, [&](std::size_t i) {
        Rng rng(derive_seed(seed, i));
        WeightedParticle p;
        p.eps = rng.normal_vec(d);
        p.x_tp = renoise(sc, x_t, t, t_prime, p.eps);

        Vec grad_r_local(d);
        if (mode == SensitivityMode::TangentOde) {
            auto [z, jac] = flow.apply_with_jacobian(p.x_tp, t_prime, 1.0);
            p.z = z;
            Vec resid = x_t - at * p.z;
            grad_r_local = (ap / at) * (jac.transpose() * (reward.grad(p.z) + (at / st2) * resid)) -
                           resid / st2;
        } else {
            p.z = flow.apply(p.x_tp, t_prime, 1.0);
            auto local = [&](const Vec& x) {
                Vec zz = flow.apply(renoise(sc, x, t, t_prime, p.eps), t_prime, 1.0);
                return reward.eval(zz) - (x - at * zz).squaredNorm() / (2.0 * st2);
            };
            Vec xp = x_t, xm = x_t;
            for (Eigen::Index j = 0; j < d; ++j) {
                xp[j] = x_t[j] + kFdStep;
                xm[j] = x_t[j] - kFdStep;
                grad_r_local[j] = (local(xp) - local(xm)) / (2.0 * kFdStep);
                xp[j] = x_t[j];
                xm[j] = x_t[j];
            }
        }
        p.r_local = reward.eval(p.z) - (x_t - at * p.z).squaredNorm() / (2.0 * st2);
        Vec score_p = score(p.x_tp, t_prime);
        p.gamma = 0.5 * (score_p_xt + score_p).dot(p.x_tp - x_t);
        p.v = p.r_local + p.gamma + 0.5 * p.eps.squaredNorm();
        p.delta_score = (ap / at) * score_p - score_t;
        v[i] = p.v;
        g[i] = grad_r_local + p.delta_score;
        parts[i] = std::move(p);
    });

    ValueEstimate est;
    est.n_particles = n_particles;
    est.ess = ess(v);
    weighted_grad_jackknife(v, g, est);
    if (particles_out) *particles_out = std::move(parts);
    return est;
}

ValueEstimate weighted_diamond_value(const FlowMap& flow, const ScoreFn& score,
                                     const VelocityFn& velocity, const Vec& x_t, double t,
                                     double lambda, const Reward& reward, int n_particles,
                                     int n_hutchinson, std::uint64_t seed,
                                     const JacobianFn& velocity_jacobian, int n_quad) {
    if (n_particles < 1)
        throw std::invalid_argument("weighted_diamond_value: n_particles must be >= 1");
    if (n_quad < 2) throw std::invalid_argument("weighted_diamond_value: n_quad must be >= 2");
    if (n_hutchinson == 0 && !velocity_jacobian)
        throw std::invalid_argument(
            "weighted_diamond_value: analytic divergence needs a velocity Jacobian");
    const auto& sc = flow.sched();
    const double t_prime = sc.snr_shift_time(t, lambda);
    if (!(t_prime < t))
        throw std::domain_error("weighted_diamond_value: lambda must yield t_prime < t");
    const Eigen::Index d = x_t.size();
    const double at = sc.alpha(t), ap = sc.alpha(t_prime);
    const double st2 = sc.sigma(t) * sc.sigma(t);
    const double sp2 = sc.sigma(t_prime) * sc.sigma(t_prime);
    const double var_q = sp2 - (ap / at) * (ap / at) * st2;
    const double log2pi = std::log(2.0 * std::numbers::pi);
    const double log_norm_p = -0.5 * d * (log2pi + std::log(st2));
    const double log_norm_q = -0.5 * d * (log2pi + std::log(var_q));
    const Vec score_p_xt = score(x_t, t_prime);

    std::vector<double> w(n_particles);
    parallel_for(n_particles, [&](std::size_t i) {
        Rng rng(derive_seed(seed, i));
        Vec eps = rng.normal_vec(d);
        Vec x_tp = renoise(sc, x_t, t, t_prime, eps);
        Vec z = flow.apply(x_tp, t_prime, 1.0);
        double gamma = 0.5 * (score_p_xt + score(x_tp, t_prime)).dot(x_tp - x_t);
        double log_p = log_norm_p - (x_t - at * z).squaredNorm() / (2.0 * st2);
        double log_q = log_norm_q - 0.5 * eps.squaredNorm();
        w[i] = reward.eval(z) + gamma + log_p - log_q;
    });
    auto lme = log_mean_exp_jackknife(w);

    // Offset integral_{t'}^{t} [score_r(x)'u_r(x) + div u_r(x)] dr at fixed x,
    // trapezoid in r; divergence by analytic trace or Hutchinson probes.
    const double hq = (t - t_prime) / (n_quad - 1);
    std::vector<double> base(n_quad);
    std::vector<double> nodes(n_quad);
    for (int j = 0; j < n_quad; ++j) {
        nodes[j] = t_prime + j * hq;
        base[j] = score(x_t, nodes[j]).dot(velocity(x_t, nodes[j]));
    }
    auto trapz = [&](const std::vector<double>& f) {
        double acc = 0.5 * (f[0] + f[n_quad - 1]);
        for (int j = 1; j < n_quad - 1; ++j) acc += f[j];
        return acc * hq;
    };
    double offset = 0.0, offset_se = 0.0;
    if (n_hutchinson == 0) {
        std::vector<double> f(n_quad);
        for (int j = 0; j < n_quad; ++j)
            f[j] = base[j] + velocity_jacobian(x_t, nodes[j]).trace();
        offset = trapz(f);
    } else {
        std::vector<double> probe_integrals(n_hutchinson);
        parallel_for(n_hutchinson, [&](std::size_t p) {
            Rng rng(derive_seed(seed, 0x48757463ULL, p));
            Vec eps = rng.normal_vec(d);
            std::vector<double> f(n_quad);
            for (int j = 0; j < n_quad; ++j) {
                Vec jv;
                if (velocity_jacobian) {
                    jv = velocity_jacobian(x_t, nodes[j]) * eps;
                } else {
                    jv = (velocity(x_t + kFdStep * eps, nodes[j]) -
                          velocity(x_t - kFdStep * eps, nodes[j])) /
                         (2.0 * kFdStep);
                }
                f[j] = base[j] + eps.dot(jv);
            }
            probe_integrals[p] = trapz(f);
        });
        double mean = 0.0;
        for (double x : probe_integrals) mean += x;
        mean /= n_hutchinson;
        offset = mean;
        if (n_hutchinson > 1) {
            double ss = 0.0;
            for (double x : probe_integrals) ss += (x - mean) * (x - mean);
            offset_se = std::sqrt(ss / (n_hutchinson - 1.0) / n_hutchinson);
        }
    }

    ValueEstimate est;
    est.value = lme.value + offset;
    est.std_error = std::sqrt(lme.std_error * lme.std_error + offset_se * offset_se);
    est.ess = ess(w);
    est.n_particles = n_particles;
    return est;
}

}  // namespace diamond
