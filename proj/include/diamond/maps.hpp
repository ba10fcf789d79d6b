#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "diamond/glass.hpp"

namespace diamond {

/// Deterministic flow map X_{t,r}: transports an ODE state from time t to
/// time r in one call. apply(x, t, t) == x exactly.
class FlowMap {
  public:
    virtual ~FlowMap() = default;
    virtual const Scheduler& sched() const = 0;
    virtual Eigen::Index dim() const = 0;
    virtual Vec apply(const Vec& x, double t, double r) const = 0;
    /// Jacobian of apply w.r.t. the input state; finite differences by default.
    virtual Mat input_jacobian(const Vec& x, double t, double r) const;
    virtual std::pair<Vec, Mat> apply_with_jacobian(const Vec& x, double t, double r) const;
};

/// Reference flow map: RK4 on the oracle marginal velocity field.
class OracleFlowMap final : public FlowMap {
  public:
    explicit OracleFlowMap(const MixtureOracle& oracle, int n_steps = 64);
    const Scheduler& sched() const override { return oracle_->sched(); }
    Eigen::Index dim() const override { return oracle_->dim(); }
    Vec apply(const Vec& x, double t, double r) const override;
    Mat input_jacobian(const Vec& x, double t, double r) const override;
    std::pair<Vec, Mat> apply_with_jacobian(const Vec& x, double t, double r) const override;

  private:
    const MixtureOracle* oracle_;
    int n_steps_;
};

/// Stochastic flow map X_{s,r}(x_bar | x_t, t) over the inner time axis of
/// the GLASS flow; one full pass maps noise to a posterior sample.
class PosteriorDiamondMap {
  public:
    virtual ~PosteriorDiamondMap() = default;
    virtual const Scheduler& sched() const = 0;
    virtual Eigen::Index dim() const = 0;
    virtual Vec apply(const Vec& x_bar, double s, double r, const Vec& x_t, double t) const = 0;

    /// Jacobian of apply w.r.t. the conditioning state x_t.
    virtual Mat cond_jacobian(const Vec& x_bar, double s, double r, const Vec& x_t, double t) const;
    virtual std::pair<Vec, Mat> apply_with_cond_jacobian(const Vec& x_bar, double s, double r,
                                                         const Vec& x_t, double t) const;

    // Derivative hooks used by the flow-map loss evaluators. Defaults are
    // central differences; trained maps override them with exact tangents.
    virtual Vec dr_apply(const Vec& x_bar, double s, double r, const Vec& x_t, double t) const;
    virtual Vec ds_apply(const Vec& x_bar, double s, double r, const Vec& x_t, double t) const;
    virtual Vec xbar_jvp(const Vec& x_bar, double s, double r, const Vec& x_t, double t,
                         const Vec& tangent) const;
};

class OracleDiamondMap final : public PosteriorDiamondMap {
  public:
    explicit OracleDiamondMap(const GlassField& field, int n_steps = 64);
    const Scheduler& sched() const override { return field_->sched(); }
    Eigen::Index dim() const override { return field_->dim(); }
    int n_steps() const { return n_steps_; }
    Vec apply(const Vec& x_bar, double s, double r, const Vec& x_t, double t) const override;
    Mat cond_jacobian(const Vec& x_bar, double s, double r, const Vec& x_t, double t) const override;
    std::pair<Vec, Mat> apply_with_cond_jacobian(const Vec& x_bar, double s, double r,
                                                 const Vec& x_t, double t) const override;

  private:
    const GlassField* field_;
    int n_steps_;
};

/// Forward-process renoising: x_{t'} = (a'/a) x_t + sqrt(s'^2 - (a'/a)^2 s^2) eps, t' < t.
Vec renoise(const Scheduler& sched, const Vec& x_t, double t, double t_prime, const Vec& eps);

/// One-step DDPM transition: run the inner flow to r*(t, t') and fuse back
/// through the sufficient statistic. Distributed as the reverse-SDE kernel.
Vec diamond_ddpm_step(const PosteriorDiamondMap& map, const Vec& x_t, double t, double t_prime,
                      std::uint64_t seed);
Vec diamond_ddpm_step(const PosteriorDiamondMap& map, const Vec& x_t, double t, double t_prime,
                      Rng& rng);

/// Baseline: full denoise to time 1, then forward-noise to t'.
Vec naive_renoise_step(const PosteriorDiamondMap& map, const Vec& x_t, double t, double t_prime,
                       std::uint64_t seed);

/// Exact reverse-SDE reference: draw z from the exact posterior, then x_{t'}
/// from the conditional Gaussian of the forward-process joint given (x_t, z).
Vec ddpm_reference_sample(const MixtureOracle& oracle, const Vec& x_t, double t, double t_prime,
                          std::uint64_t seed);
Vec ddpm_reference_sample(const MixtureOracle& oracle, const Vec& x_t, double t, double t_prime,
                          Rng& rng);

/// r*(t, t') over a grid; NaN where t >= t'. Rows follow grid_t.
Mat r_star_surface(const Scheduler& sched, const std::vector<double>& grid_t,
                   const std::vector<double>& grid_t_prime);

}  // namespace diamond
