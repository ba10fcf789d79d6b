#include "diamond/align.hpp"

#include <cmath>
#include <stdexcept>

#include "diamond/parallel.hpp"

namespace diamond {

namespace {

constexpr std::uint64_t kInitStream = 0x696e6974ULL;   // trajectory init draws
constexpr std::uint64_t kStepStream = 0x73746570ULL;   // per-step estimator seeds
constexpr std::uint64_t kValueStream = 0x76616c75ULL;  // smc value estimates
constexpr std::uint64_t kMoveStream = 0x6d6f7665ULL;   // smc proposal moves

std::vector<int> resample_indices(const Vec& log_w, ResampleScheme scheme, Rng& rng) {
    const int m = static_cast<int>(log_w.size());
    Vec w = (log_w.array() - log_w.maxCoeff()).exp();
    std::vector<int> idx(m);
    if (scheme == ResampleScheme::Multinomial) {
        for (int i = 0; i < m; ++i) idx[i] = rng.categorical(w);
    } else {
        w /= w.sum();
        double u = rng.uniform() / m;
        double acc = w[0];
        int j = 0;
        for (int i = 0; i < m; ++i) {
            double target = u + static_cast<double>(i) / m;
            while (acc < target && j + 1 < m) acc += w[++j];
            idx[i] = j;
        }
    }
    return idx;
}

}  // namespace

Vec guide_posterior(const MixtureOracle& oracle, const PosteriorDiamondMap* map,
                    const Reward& reward, const GuidanceConfig& cfg, std::uint64_t seed,
                    std::vector<GuideStepRecord>* trace) {
    if (cfg.n_steps < 1) throw std::invalid_argument("guide_posterior: n_steps must be >= 1");
    if (cfg.gradient_mode == GradientMode::Estimator && map == nullptr)
        throw std::invalid_argument("guide_posterior: estimator mode needs a diamond map");
    const auto& sc = oracle.sched();
    Rng init(derive_seed(seed, kInitStream));
    Vec x = init.normal_vec(oracle.dim());
    const double t0 = sc.t_min(), t1 = sc.t_max();
    const double h = (t1 - t0) / cfg.n_steps;
    for (int n = 0; n < cfg.n_steps; ++n) {
        const double t = t0 + n * h;
        Vec u = oracle.velocity(x, t);
        double step_ess = 1.0;
        if (t >= cfg.t_lo && t <= cfg.t_hi) {
            Vec grad;
            if (cfg.gradient_mode == GradientMode::Exact) {
                grad = oracle.value_exact(x, t, reward).gradient;
            } else {
                auto est = posterior_value_gradient(*map, x, t, reward, cfg.particles,
                                                    derive_seed(seed, kStepStream, n),
                                                    cfg.sensitivity);
                grad = *est.gradient;
                step_ess = est.ess;
            }
            u += cfg.reward_scale * sc.velocity_coeffs(t).b * grad;
        }
        if (trace) trace->push_back({t, reward.eval(oracle.denoiser(x, t)), step_ess});
        x += h * u;
    }
    return x;
}

Vec guide_weighted(const MixtureOracle& oracle, const FlowMap& flow, const Reward& reward,
                   const GuidanceConfig& cfg, std::uint64_t seed,
                   std::vector<GuideStepRecord>* trace) {
    if (cfg.n_steps < 1) throw std::invalid_argument("guide_weighted: n_steps must be >= 1");
    const auto& sc = oracle.sched();
    ScoreFn score = [&](const Vec& y, double tt) { return oracle.score(y, tt); };
    Rng init(derive_seed(seed, kInitStream));
    Vec x = init.normal_vec(oracle.dim());
    const double t0 = sc.t_min(), t1 = sc.t_max();
    const double h = (t1 - t0) / cfg.n_steps;
    for (int n = 0; n < cfg.n_steps; ++n) {
        const double t = t0 + n * h;
        Vec u = oracle.velocity(x, t);
        double step_ess = 1.0;
        if (t >= cfg.t_lo && t <= cfg.t_hi) {
            auto est = weighted_diamond_gradient(flow, score, x, t, cfg.lambda, reward,
                                                 cfg.particles, derive_seed(seed, kStepStream, n),
                                                 cfg.sensitivity);
            u += cfg.reward_scale * sc.velocity_coeffs(t).b * (*est.gradient);
            step_ess = est.ess;
        }
        if (trace) trace->push_back({t, reward.eval(oracle.denoiser(x, t)), step_ess});
        x += h * u;
    }
    return x;
}

ParticleEnsemble smc(const MixtureOracle& oracle, const PosteriorDiamondMap& map,
                     const Reward& reward, int n_particles, int n_steps, int n_inner,
                     const SmcOptions& options, std::uint64_t seed) {
    if (n_particles < 1) throw std::invalid_argument("smc: n_particles must be >= 1");
    if (n_steps < 1) throw std::invalid_argument("smc: n_steps must be >= 1");
    const auto& sc = oracle.sched();
    const Eigen::Index d = oracle.dim();
    const int m = n_particles;

    ParticleEnsemble ens;
    ens.states.resize(m, d);
    ens.log_potentials = Vec::Zero(m);
    ens.last_values = Vec::Zero(m);
    GaussianMixture init_marginal = oracle.marginal_at(sc.t_min());
    {
        Rng init(derive_seed(seed, kInitStream));
        for (int i = 0; i < m; ++i) ens.states.row(i) = init_marginal.sample(init).transpose();
    }
    ens.t = sc.t_min();
    Rng resample_rng(derive_seed(seed, 0x72657331ULL));

    const double h = (sc.t_max() - sc.t_min()) / n_steps;
    for (int n = 0; n < n_steps; ++n) {
        const double t = sc.t_min() + n * h;
        const double t_next = (n + 1 == n_steps) ? sc.t_max() : t + h;
        Vec values(m);
        parallel_for(m, [&](std::size_t i) {
            Vec x = ens.states.row(i).transpose();
            x = diamond_ddpm_step(map, x, t, t_next, derive_seed(seed, kMoveStream, n * m + i));
            ens.states.row(i) = x.transpose();
            values[i] = *posterior_value(map, x, t_next, reward, n_inner,
                                         derive_seed(seed, kValueStream, n * m + i))
                             .value;
        });

        Vec log_w(m);
        if (options.mode == ResampleMode::PerStepReset) {
            log_w = values - ens.last_values;
        } else {
            ens.log_potentials += values - ens.last_values;
            log_w = ens.log_potentials;
        }

        SmcStepRecord rec;
        rec.t = t_next;
        std::vector<double> lw(log_w.data(), log_w.data() + m);
        rec.ess = ess(lw);
        rec.degenerate = rec.ess < 1.0 / m;
        rec.mean_value = values.mean();
        rec.resampled = options.resample;
        if (options.record_values) {
            rec.values = values;
            rec.log_weights = log_w;
        }

        if (options.resample) {
            auto idx = resample_indices(log_w, options.scheme, resample_rng);
            Mat new_states(m, d);
            Vec new_values(m), new_pot(m);
            for (int i = 0; i < m; ++i) {
                new_states.row(i) = ens.states.row(idx[i]);
                new_values[i] = values[idx[i]];
                new_pot[i] = ens.log_potentials[idx[i]];
            }
            ens.states = std::move(new_states);
            ens.last_values = std::move(new_values);
            if (options.mode == ResampleMode::PerStepReset)
                ens.log_potentials = Vec::Zero(m);
            else
                ens.log_potentials = std::move(new_pot);
        } else {
            ens.last_values = values;
        }
        ens.t = t_next;
        ens.history.push_back(std::move(rec));
    }
    return ens;
}

Vec search(const MixtureOracle& oracle, const PosteriorDiamondMap& map, const Reward& reward,
           int n_particles, int n_steps, int n_inner, std::uint64_t seed) {
    if (n_particles < 1) throw std::invalid_argument("search: n_particles must be >= 1");
    const auto& sc = oracle.sched();
    const Eigen::Index d = oracle.dim();
    const int m = n_particles;

    Mat states(m, d);
    {
        GaussianMixture init_marginal = oracle.marginal_at(sc.t_min());
        Rng init(derive_seed(seed, kInitStream));
        for (int i = 0; i < m; ++i) states.row(i) = init_marginal.sample(init).transpose();
    }
    Vec last_values = Vec::Zero(m);

    const double h = (sc.t_max() - sc.t_min()) / n_steps;
    for (int n = 0; n < n_steps; ++n) {
        const double t = sc.t_min() + n * h;
        const double t_next = (n + 1 == n_steps) ? sc.t_max() : t + h;
        Vec values(m);
        parallel_for(m, [&](std::size_t i) {
            Vec x = states.row(i).transpose();
            x = diamond_ddpm_step(map, x, t, t_next, derive_seed(seed, kMoveStream, n * m + i));
            states.row(i) = x.transpose();
            values[i] = *posterior_value(map, x, t_next, reward, n_inner,
                                         derive_seed(seed, kValueStream, n * m + i))
                             .value;
        });
        Vec potential = values - last_values;
        int best = 0;
        for (int i = 1; i < m; ++i)
            if (potential[i] > potential[best]) best = i;
        Vec winner = states.row(best).transpose();
        for (int i = 0; i < m; ++i) states.row(i) = winner.transpose();
        last_values = Vec::Constant(m, values[best]);
    }
    return states.row(0).transpose();
}

Vec best_of_n(const SamplerFn& sampler, const Reward& reward, int n, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("best_of_n: n must be >= 1");
    Vec best;
    double best_r = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
        Vec z = sampler(derive_seed(seed, i));
        double r = reward.eval(z);
        if (r > best_r) {
            best_r = r;
            best = std::move(z);
        }
    }
    return best;
}

}  // namespace diamond
