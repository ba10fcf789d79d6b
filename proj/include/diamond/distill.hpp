#pragma once

#include <memory>
#include <string>
#include <vector>

#include "diamond/maps.hpp"

namespace diamond {

struct NetConfig {
    Eigen::Index dim = 2;
    std::vector<int> hidden = {128, 128, 128};
    int n_freqs = 4;  // sinusoidal frequencies per time channel
};

/// Small tanh MLP parameterizing the average velocity v_{s,r}(x_bar | x_t, t);
/// the map itself is X = x_bar + (r - s) v, so X_{s,s} is the identity by
/// construction. Inputs are (x_bar, x_t) plus sinusoidal embeddings of
/// s, r - s and t. Parameters live in one flat vector; gradients and tangents
/// are hand-rolled (reverse mode for training, forward mode for JVPs).
class DiamondNet {
  public:
    DiamondNet(NetConfig cfg, std::uint64_t seed);
    DiamondNet(NetConfig cfg, Vec params);

    const NetConfig& config() const { return cfg_; }
    const Vec& params() const { return params_; }
    void set_params(Vec p);
    Eigen::Index n_params() const { return params_.size(); }
    Eigen::Index input_dim() const { return input_dim_; }

    Vec features(const Vec& x_bar, const Vec& x_t, double s, double r, double t) const;

    Vec mlp_forward(const Vec& input) const;
    Vec mlp_jvp(const Vec& input, const Vec& din) const;

    /// Batched forward; rows are samples. `cache` keeps activations for backward.
    Mat mlp_forward_batch(const Mat& inputs, std::vector<Mat>* cache = nullptr) const;
    /// Parameter gradient for dL/doutput rows, given the forward cache.
    Vec mlp_backward_batch(const Mat& inputs, const std::vector<Mat>& cache, const Mat& dout) const;

    Vec avg_velocity(const Vec& x_bar, const Vec& x_t, double s, double r, double t) const;
    Vec map(const Vec& x_bar, double s, double r, const Vec& x_t, double t) const;
    Vec map_dr(const Vec& x_bar, double s, double r, const Vec& x_t, double t) const;
    Vec map_ds(const Vec& x_bar, double s, double r, const Vec& x_t, double t) const;
    Vec map_jvp_xbar(const Vec& x_bar, double s, double r, const Vec& x_t, double t,
                     const Vec& tangent) const;
    Vec map_jvp_xt(const Vec& x_bar, double s, double r, const Vec& x_t, double t,
                   const Vec& tangent) const;

  private:
    Vec embed(double tau) const;
    Vec embed_dot(double tau) const;
    struct Layer {
        Eigen::Index w_off, b_off, in, out;
    };

    NetConfig cfg_;
    Eigen::Index input_dim_;
    std::vector<Layer> layers_;
    Vec params_;
};

/// Trained Posterior Diamond Map backed by a DiamondNet.
class DistilledDiamondMap final : public PosteriorDiamondMap {
  public:
    DistilledDiamondMap(std::shared_ptr<const DiamondNet> net, Scheduler sched);
    const Scheduler& sched() const override { return sched_; }
    Eigen::Index dim() const override { return net_->config().dim; }
    const DiamondNet& net() const { return *net_; }
    std::shared_ptr<const DiamondNet> net_ptr() const { return net_; }
    Vec apply(const Vec& x_bar, double s, double r, const Vec& x_t, double t) const override;
    Mat cond_jacobian(const Vec& x_bar, double s, double r, const Vec& x_t, double t) const override;
    Vec dr_apply(const Vec& x_bar, double s, double r, const Vec& x_t, double t) const override;
    Vec ds_apply(const Vec& x_bar, double s, double r, const Vec& x_t, double t) const override;
    Vec xbar_jvp(const Vec& x_bar, double s, double r, const Vec& x_t, double t,
                 const Vec& tangent) const override;

  private:
    std::shared_ptr<const DiamondNet> net_;
    Scheduler sched_;
};

/// Plain flow map carved out of a diamond net: conditioning on pure noise at
/// the clamp floor makes the inner field coincide with the marginal one.
class DistilledFlowMap final : public FlowMap {
  public:
    DistilledFlowMap(std::shared_ptr<const DiamondNet> net, Scheduler sched);
    const Scheduler& sched() const override { return sched_; }
    Eigen::Index dim() const override { return net_->config().dim; }
    Vec apply(const Vec& x, double t, double r) const override;
    Mat input_jacobian(const Vec& x, double t, double r) const override;

  private:
    std::shared_ptr<const DiamondNet> net_;
    Scheduler sched_;
    Vec zero_cond_;
};

struct TrainConfig {
    NetConfig net;
    int n_iters = 8000;
    int batch = 256;
    double lr = 1e-3;
    double lr_min_frac = 0.1;  // cosine decay floor as a fraction of lr
    int teacher_steps = 16;    // RK4 steps per teacher rollout
    std::uint64_t seed = 0;
};

struct TrainResult {
    std::shared_ptr<DiamondNet> net;
    std::vector<double> loss_history;  // one entry per iteration
};

/// Distills the GLASS flow by regressing the map output onto RK4 teacher
/// rollouts, with Adam and cosine learning-rate decay. Throws if the running
/// loss exceeds 10x its initial level.
TrainResult rollout_regression_train(const GlassField& teacher, const TrainConfig& cfg);

struct DistillBatch {
    std::vector<Vec> x_bar, x_t;
    std::vector<double> s, r, t;
    std::size_t size() const { return s.size(); }
};

/// Times (s <= r) uniform on the clamped upper triangle, t uniform, states
/// drawn from the conditional paths of a shared clean sample.
DistillBatch sample_distill_batch(const GlassField& teacher, int n, std::uint64_t seed);

/// Mean squared residual of d/dr X_{s,r} against the teacher field at X_{s,r}.
double lagrangian_loss_eval(const PosteriorDiamondMap& student, const GlassField& teacher,
                            const DistillBatch& batch);

/// Mean squared residual of d/ds X_{s,r} + (dX/dx_bar) u_s; the JVP is exact
/// (one tangent per sample), n_jvp_probes is kept for diagnostics only.
double eulerian_loss_eval(const PosteriorDiamondMap& student, const GlassField& teacher,
                          const DistillBatch& batch, int n_jvp_probes = 0);

void save_checkpoint(const DistilledDiamondMap& map, const std::string& path);
DistilledDiamondMap load_checkpoint(const std::string& path);

}  // namespace diamond
