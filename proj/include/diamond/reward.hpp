#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "diamond/rng.hpp"

namespace diamond {

/// Reward r(z) over clean data points. Rewards that are (affine-)quadratic
/// expose their canonical form r(z) = 1/2 z'Az + b'z + c so the mixture
/// oracle can tilt Gaussians in closed form.
class Reward {
  public:
    virtual ~Reward() = default;
    virtual double eval(const Vec& z) const = 0;
    virtual Vec grad(const Vec& z) const;

    virtual bool has_quadratic_form() const { return false; }
    virtual Mat quad_A(Eigen::Index dim) const { return Mat::Zero(dim, dim); }
    virtual Vec quad_b(Eigen::Index dim) const { return Vec::Zero(dim); }
    virtual double quad_c() const { return 0.0; }
};

class ZeroReward final : public Reward {
  public:
    double eval(const Vec&) const override { return 0.0; }
    Vec grad(const Vec& z) const override { return Vec::Zero(z.size()); }
    bool has_quadratic_form() const override { return true; }
};

class LinearReward final : public Reward {
  public:
    explicit LinearReward(Vec c) : c_(std::move(c)) {}
    double eval(const Vec& z) const override { return c_.dot(z); }
    Vec grad(const Vec&) const override { return c_; }
    bool has_quadratic_form() const override { return true; }
    Vec quad_b(Eigen::Index) const override { return c_; }
    const Vec& direction() const { return c_; }

  private:
    Vec c_;
};

class QuadraticReward final : public Reward {
  public:
    QuadraticReward(Mat A, Vec b, double c = 0.0);
    double eval(const Vec& z) const override { return 0.5 * z.dot(A_ * z) + b_.dot(z) + c_; }
    Vec grad(const Vec& z) const override { return A_ * z + b_; }
    bool has_quadratic_form() const override { return true; }
    Mat quad_A(Eigen::Index) const override { return A_; }
    Vec quad_b(Eigen::Index) const override { return b_; }
    double quad_c() const override { return c_; }

  private:
    Mat A_;
    Vec b_;
    double c_;
};

/// r(z) = -scale/2 * |z - target|^2, a quadratic with curvature -scale*I.
class RadialReward final : public Reward {
  public:
    RadialReward(Vec target, double scale);
    double eval(const Vec& z) const override { return -0.5 * scale_ * (z - target_).squaredNorm(); }
    Vec grad(const Vec& z) const override { return -scale_ * (z - target_); }
    bool has_quadratic_form() const override { return true; }
    Mat quad_A(Eigen::Index dim) const override { return -scale_ * Mat::Identity(dim, dim); }
    Vec quad_b(Eigen::Index) const override { return scale_ * target_; }
    double quad_c() const override { return -0.5 * scale_ * target_.squaredNorm(); }

  private:
    Vec target_;
    double scale_;
};

/// Arbitrary callable reward; gradient falls back to central differences
/// when no gradient callback is supplied.
class CustomReward final : public Reward {
  public:
    using EvalFn = std::function<double(const Vec&)>;
    using GradFn = std::function<Vec(const Vec&)>;
    explicit CustomReward(EvalFn eval, GradFn grad = nullptr)
        : eval_(std::move(eval)), grad_(std::move(grad)) {}
    double eval(const Vec& z) const override { return eval_(z); }
    Vec grad(const Vec& z) const override;

  private:
    EvalFn eval_;
    GradFn grad_;
};

/// Result of a Monte Carlo value-function estimator.
struct ValueEstimate {
    std::optional<double> value;
    std::optional<Vec> gradient;
    double ess = 1.0;  // normalized effective sample size in (0, 1]
    int n_particles = 0;
    std::optional<double> std_error;
    std::optional<Vec> gradient_std_error;
};

/// One renoised particle of the weighted Diamond estimator.
struct WeightedParticle {
    Vec eps;
    Vec x_tp;
    Vec z;
    double r_local = 0.0;
    double gamma = 0.0;
    double v = 0.0;  // log-weight: r_local + gamma + |eps|^2 / 2
    Vec delta_score;
};

/// Normalized ESS of importance log-weights: (sum w)^2 / (N sum w^2).
double ess(const std::vector<double>& log_weights);

/// log(sum_i exp(v_i)) evaluated stably; -inf on an all(-inf) input.
double log_sum_exp(const std::vector<double>& v);

/// Softmax of log-weights (translation invariant).
std::vector<double> softmax(const std::vector<double>& v);

}  // namespace diamond
