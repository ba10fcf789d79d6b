#pragma once

#include <string>
#include <string_view>

namespace diamond {

enum class ScheduleKind { Linear, VariancePreserving, VarianceExploding };

ScheduleKind parse_schedule_kind(std::string_view name);
std::string schedule_kind_name(ScheduleKind kind);

/// Noise schedule (alpha_t, sigma_t) together with the scalar time algebra
/// built on g(t) = sigma_t^2 / alpha_t^2: the fusion time t*, the early-stop
/// time r*, the velocity<->score coefficients and the SNR renoise rule.
///
/// Linear and variance-preserving kinds run noise->data over [0,1] with
/// alpha(0)=0, sigma(1)=0. The variance-exploding kind keeps alpha=1 and is
/// exempt from those boundary conventions.
class Scheduler {
  public:
    explicit Scheduler(ScheduleKind kind, double t_min = 1e-3, double t_max = 1.0 - 1e-3);

    ScheduleKind kind() const { return kind_; }
    double t_min() const { return t_min_; }
    double t_max() const { return t_max_; }
    double clamp(double t) const;

    double alpha(double t) const;
    double sigma(double t) const;
    double alpha_dot(double t) const;
    double sigma_dot(double t) const;

    /// g(t) = sigma_t^2 / alpha_t^2 (inverse squared SNR); strictly monotone.
    double g(double t) const;
    /// Functional inverse of g; accepts y >= 0.
    double g_inv(double y) const;

    /// Fusion time: t*(s,t) with 1/g(t*) = 1/g(s) + 1/g(t).
    double t_star(double s, double t) const;

    /// Early-stop time: r* with t*(r*, t) = t_prime; requires t < t_prime.
    double r_star(double t, double t_prime) const;

    struct VelocityCoeffs {
        double a;  // alpha_dot / alpha
        double b;  // sigma^2 alpha_dot / alpha - sigma_dot sigma
    };
    /// Coefficients of u_t(x) = a_t x + b_t grad log p_t(x).
    VelocityCoeffs velocity_coeffs(double t) const;

    /// Earlier time t' with SNR(t') = lambda * SNR(t); lambda > 1 adds noise.
    double snr_shift_time(double t, double lambda) const;

  private:
    ScheduleKind kind_;
    double t_min_;
    double t_max_;
};

}  // namespace diamond
