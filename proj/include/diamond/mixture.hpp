#pragma once

#include <cstdint>
#include <vector>

#include "diamond/reward.hpp"
#include "diamond/rng.hpp"
#include "diamond/sched.hpp"

namespace diamond {

struct MixtureComponent {
    double weight;
    Vec mean;
    Mat cov;
};

/// Weighted Gaussian mixture with full (possibly singular) covariances.
/// Point-mass components (zero covariance) are first-class so that
/// degenerate-data sanity cases stay exact.
class GaussianMixture {
  public:
    explicit GaussianMixture(std::vector<MixtureComponent> components);
    static GaussianMixture single(Vec mean, Mat cov);
    static GaussianMixture isotropic(Vec mean, double var);

    Eigen::Index dim() const { return dim_; }
    std::size_t n_components() const { return comps_.size(); }
    const std::vector<MixtureComponent>& components() const { return comps_; }

    double log_pdf(const Vec& x) const;
    Vec score(const Vec& x) const;
    Vec sample(Rng& rng) const;
    Mat sample_matrix(std::size_t n, std::uint64_t seed) const;

    Vec mean() const;
    Mat covariance() const;

    /// Exact exponential tilt under r(z) = c'z: means shift by Sigma_k c,
    /// covariances stay, weights pick up exp(c'mu_k + c'Sigma_k c / 2).
    GaussianMixture tilt_linear(const Vec& c) const;

  private:
    std::vector<MixtureComponent> comps_;
    std::vector<Mat> sqrt_cov_;       // U sqrt(Lambda), for sampling
    std::vector<bool> degenerate_;    // any covariance eigenvalue ~ 0
    std::vector<double> log_norm_;    // -(d/2) log 2pi - (1/2) log|Sigma| when PD
    std::vector<Mat> cov_inv_;        // only valid when not degenerate
    Eigen::Index dim_;
};

struct ValueGrad {
    double value;
    Vec gradient;
};

/// Closed-form flow-matching oracle over a Gaussian mixture: marginal density,
/// score, denoiser, velocity, exact posterior and exact value function, all
/// as analytic functions of (x, t).
class MixtureOracle {
  public:
    MixtureOracle(GaussianMixture data, Scheduler sched);

    const GaussianMixture& data() const { return data_; }
    const Scheduler& sched() const { return sched_; }
    Eigen::Index dim() const { return data_.dim(); }

    /// Mixture of N(alpha mu_k, alpha^2 Sigma_k + sigma^2 I).
    GaussianMixture marginal_at(double t) const;

    double log_marginal(const Vec& x, double t) const;
    Vec score(const Vec& x, double t) const;
    Vec denoiser(const Vec& x, double t) const;
    Vec velocity(const Vec& x, double t) const;
    Vec conditional_velocity(const Vec& x, const Vec& z, double t) const;

    GaussianMixture posterior(const Vec& x, double t) const;

    Mat score_hessian(const Vec& x, double t) const;
    Mat denoiser_jacobian(const Vec& x, double t) const;
    Mat velocity_jacobian(const Vec& x, double t) const;
    double velocity_divergence(const Vec& x, double t) const;

    /// Exact value V_t^r(x) = log E[exp r(z)] over the posterior, with its
    /// x-gradient. Requires a reward in quadratic form whose tilt is proper.
    ValueGrad value_exact(const Vec& x, double t, const Reward& reward) const;

    /// Monte Carlo value over exact posterior draws, for arbitrary rewards.
    ValueEstimate value_mc(const Vec& x, double t, const Reward& reward, int n_samples,
                           std::uint64_t seed) const;

  private:
    struct PosteriorStats;
    PosteriorStats posterior_stats(const Vec& x, double t) const;
    void check_time(double t) const;

    GaussianMixture data_;
    Scheduler sched_;
};

}  // namespace diamond
