#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "diamond/estimators.hpp"

namespace diamond {

enum class GradientMode { Exact, Estimator };

struct GuidanceConfig {
    int n_steps = 128;
    int particles = 64;       // Monte Carlo samples per gradient estimate
    double lambda = 20.0;     // SNR factor for the weighted renoise time
    double t_lo = 0.05;       // guidance window
    double t_hi = 0.25;
    double reward_scale = 1.0;  // multiplier on b_t
    GradientMode gradient_mode = GradientMode::Estimator;
    SensitivityMode sensitivity = SensitivityMode::TangentOde;
};

struct GuideStepRecord {
    double t;
    double proxy_reward;  // reward of the denoised state r(D_t(x))
    double ess;           // estimator ESS; 1 outside the window or in exact mode
};

/// Euler integration of u_t + b_t grad V_t^r across the clamped time range;
/// the value gradient (exact, or Prop. 1 with `map`) is applied inside the
/// guidance window only. Returns the terminal state.
Vec guide_posterior(const MixtureOracle& oracle, const PosteriorDiamondMap* map,
                    const Reward& reward, const GuidanceConfig& cfg, std::uint64_t seed,
                    std::vector<GuideStepRecord>* trace = nullptr);

/// Same loop with the Prop. 3 weighted Diamond gradient over a deterministic
/// flow map; t' is chosen per step by the SNR rule.
Vec guide_weighted(const MixtureOracle& oracle, const FlowMap& flow, const Reward& reward,
                   const GuidanceConfig& cfg, std::uint64_t seed,
                   std::vector<GuideStepRecord>* trace = nullptr);

enum class ResampleMode { PerStepReset, LiteralCarry };
enum class ResampleScheme { Multinomial, Systematic };

struct SmcOptions {
    ResampleMode mode = ResampleMode::PerStepReset;
    ResampleScheme scheme = ResampleScheme::Multinomial;
    bool resample = true;        // off: weights accumulate, no selection
    bool record_values = false;  // keep per-particle values in the history
};

struct SmcStepRecord {
    double t;
    double ess;
    bool resampled;
    bool degenerate;  // ess dropped below 1/M
    double mean_value;
    Vec values;       // filled when record_values
    Vec log_weights;  // filled when record_values
};

/// Particle ensemble: states with their running potentials and last values.
struct ParticleEnsemble {
    Mat states;  // M x d
    Vec log_potentials;
    Vec last_values;
    double t = 0.0;
    std::vector<SmcStepRecord> history;
};

/// Alg. 2: evolve M particles by Diamond DDPM steps, weight by value
/// increments, resample each step. Returns the terminal ensemble.
ParticleEnsemble smc(const MixtureOracle& oracle, const PosteriorDiamondMap& map,
                     const Reward& reward, int n_particles, int n_steps, int n_inner,
                     const SmcOptions& options, std::uint64_t seed);

/// Zero-temperature variant: every step collapses the population onto the
/// argmax-potential particle (ties to the lowest index).
Vec search(const MixtureOracle& oracle, const PosteriorDiamondMap& map, const Reward& reward,
           int n_particles, int n_steps, int n_inner, std::uint64_t seed);

using SamplerFn = std::function<Vec(std::uint64_t seed)>;

/// Draw n terminal samples, keep the reward argmax.
Vec best_of_n(const SamplerFn& sampler, const Reward& reward, int n, std::uint64_t seed);

}  // namespace diamond
