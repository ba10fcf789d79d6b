#pragma once

#include <cstdint>
#include <functional>

#include "diamond/maps.hpp"

namespace diamond {

/// How pullback gradients through maps are propagated.
enum class SensitivityMode { TangentOde, FiniteDifference };

SensitivityMode parse_sensitivity_mode(std::string_view name);

using ScoreFn = std::function<Vec(const Vec&, double)>;
using VelocityFn = std::function<Vec(const Vec&, double)>;
using JacobianFn = std::function<Mat(const Vec&, double)>;

/// Prop. 1 value estimator: log-mean-exp of rewards over posterior draws.
ValueEstimate posterior_value(const PosteriorDiamondMap& map, const Vec& x_t, double t,
                              const Reward& reward, int n_particles, std::uint64_t seed);

/// Prop. 1 gradient estimator: softmax-weighted reward gradients pulled back
/// through the map's dependence on x_t.
ValueEstimate posterior_value_gradient(const PosteriorDiamondMap& map, const Vec& x_t, double t,
                                       const Reward& reward, int n_particles, std::uint64_t seed,
                                       SensitivityMode mode = SensitivityMode::TangentOde);

/// Denoiser approximation V ~ r(D_t(x)); carries the Jensen-gap bias.
ValueEstimate denoiser_value(const MixtureOracle& oracle, const Vec& x_t, double t,
                             const Reward& reward);

/// Prop. 3: renoise, map to data with a deterministic flow map, and reweight
/// with the local reward, the gamma path term and the score correction.
ValueEstimate weighted_diamond_gradient(const FlowMap& flow, const ScoreFn& score, const Vec& x_t,
                                        double t, double lambda, const Reward& reward,
                                        int n_particles, std::uint64_t seed,
                                        SensitivityMode mode = SensitivityMode::TangentOde,
                                        std::vector<WeightedParticle>* particles_out = nullptr);

/// Weighted Diamond value estimator with the continuity-equation offset
/// integral; the divergence term uses Hutchinson probes (n_hutchinson > 0)
/// or the analytic trace (n_hutchinson == 0, velocity_jacobian required).
ValueEstimate weighted_diamond_value(const FlowMap& flow, const ScoreFn& score,
                                     const VelocityFn& velocity, const Vec& x_t, double t,
                                     double lambda, const Reward& reward, int n_particles,
                                     int n_hutchinson, std::uint64_t seed,
                                     const JacobianFn& velocity_jacobian = nullptr,
                                     int n_quad = 9);

}  // namespace diamond
