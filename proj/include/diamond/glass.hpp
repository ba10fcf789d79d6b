#pragma once

#include <cstdint>
#include <functional>

#include "diamond/mixture.hpp"

namespace diamond {

/// Precision-weighted fusion of an inner state at time s and an outer state
/// at time t into one effective observation (the GLASS sufficient statistic).
Vec sufficient_statistic(const Scheduler& sched, const Vec& x_bar, const Vec& x_t, double s, double t);

/// The GLASS reparameterization of the denoiser: a velocity field over an
/// inner time axis s whose ODE, started from Gaussian noise, ends at a draw
/// from the posterior p_{1|t}(. | x_t). Inner schedule equals the outer one.
class GlassField {
  public:
    explicit GlassField(const MixtureOracle& oracle) : oracle_(&oracle) {}

    const MixtureOracle& oracle() const { return *oracle_; }
    const Scheduler& sched() const { return oracle_->sched(); }
    Eigen::Index dim() const { return oracle_->dim(); }

    double w1(double s) const;  // sigma_dot / sigma
    double w2(double s) const;  // alpha_dot - alpha w1

    Vec velocity(const Vec& x_bar, const Vec& x_t, double s, double t) const;

    struct Jacobians {
        Mat d_xbar;
        Mat d_xt;
    };
    Jacobians velocity_jacobians(const Vec& x_bar, const Vec& x_t, double s, double t) const;

    /// RK4 integration of the field over inner time [s0, s1] at fixed (x_t, t).
    Vec integrate(Vec x_bar, double s0, double s1, const Vec& x_t, double t, int n_steps) const;

    /// Same, also propagating the tangent d x_bar / d x_t alongside the state.
    std::pair<Vec, Mat> integrate_with_xt_tangent(Vec x_bar, Mat tangent, double s0, double s1,
                                                  const Vec& x_t, double t, int n_steps) const;

    /// Integration with a per-node callback (grid point after each step).
    void integrate_path(Vec x_bar, double s0, double s1, const Vec& x_t, double t, int n_steps,
                        const std::function<void(double, const Vec&)>& on_node) const;

    /// Draws x_bar ~ N(0, I) and runs the inner flow across the clamped time
    /// range; the endpoint is a posterior sample.
    Vec sample_posterior_ode(const Vec& x_t, double t, int n_steps, std::uint64_t seed) const;

  private:
    const MixtureOracle* oracle_;
};

}  // namespace diamond
