#include "diamond/sched.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace diamond {

ScheduleKind parse_schedule_kind(std::string_view name) {
    if (name == "linear") return ScheduleKind::Linear;
    if (name == "vp") return ScheduleKind::VariancePreserving;
    if (name == "ve") return ScheduleKind::VarianceExploding;
    throw std::invalid_argument("unknown schedule kind: " + std::string(name));
}

std::string schedule_kind_name(ScheduleKind kind) {
    switch (kind) {
        case ScheduleKind::Linear: return "linear";
        case ScheduleKind::VariancePreserving: return "vp";
        case ScheduleKind::VarianceExploding: return "ve";
    }
    return "?";
}

Scheduler::Scheduler(ScheduleKind kind, double t_min, double t_max)
    : kind_(kind), t_min_(t_min), t_max_(t_max) {
    if (!(0.0 < t_min && t_min < t_max && t_max < 1.0))
        throw std::invalid_argument("scheduler clamp bounds must satisfy 0 < t_min < t_max < 1");
}

double Scheduler::clamp(double t) const { return std::clamp(t, t_min_, t_max_); }

double Scheduler::alpha(double t) const {
    switch (kind_) {
        case ScheduleKind::Linear: return t;
        case ScheduleKind::VariancePreserving: return std::sqrt(t);
        case ScheduleKind::VarianceExploding: return 1.0;
    }
    return 0.0;
}

double Scheduler::sigma(double t) const {
    switch (kind_) {
        case ScheduleKind::Linear: return 1.0 - t;
        case ScheduleKind::VariancePreserving: return std::sqrt(1.0 - t);
        case ScheduleKind::VarianceExploding: return std::sqrt(t);
    }
    return 0.0;
}

double Scheduler::alpha_dot(double t) const {
    switch (kind_) {
        case ScheduleKind::Linear: return 1.0;
        case ScheduleKind::VariancePreserving: return 0.5 / std::sqrt(t);
        case ScheduleKind::VarianceExploding: return 0.0;
    }
    return 0.0;
}

double Scheduler::sigma_dot(double t) const {
    switch (kind_) {
        case ScheduleKind::Linear: return -1.0;
        case ScheduleKind::VariancePreserving: return -0.5 / std::sqrt(1.0 - t);
        case ScheduleKind::VarianceExploding: return 0.5 / std::sqrt(t);
    }
    return 0.0;
}

double Scheduler::g(double t) const {
    switch (kind_) {
        case ScheduleKind::Linear: {
            if (t <= 0.0) throw std::domain_error("g: alpha(t) = 0 at t = 0 for the linear schedule");
            double r = (1.0 - t) / t;
            return r * r;
        }
        case ScheduleKind::VariancePreserving:
            if (t <= 0.0) throw std::domain_error("g: alpha(t) = 0 at t = 0 for the vp schedule");
            return (1.0 - t) / t;
        case ScheduleKind::VarianceExploding:
            return t;
    }
    return 0.0;
}

double Scheduler::g_inv(double y) const {
    if (y < 0.0) throw std::domain_error("g_inv: y must be nonnegative");
    switch (kind_) {
        case ScheduleKind::Linear: return 1.0 / (1.0 + std::sqrt(y));
        case ScheduleKind::VariancePreserving: return 1.0 / (1.0 + y);
        // g(t) = t, so the inverse is the identity.
        case ScheduleKind::VarianceExploding: return y;
    }
    return 0.0;
}

double Scheduler::t_star(double s, double t) const {
    double as = alpha(s), at = alpha(t);
    double ss = sigma(s), st = sigma(t);
    // A clean observation (sigma = 0) dominates any fusion.
    if (ss == 0.0 || st == 0.0) return 1.0;
    // Pure noise carries no information.
    if (as == 0.0) return t;
    if (at == 0.0) return s;
    double denom = st * st * as * as + at * at * ss * ss;
    if (denom <= 0.0) throw std::domain_error("t_star: zero denominator");
    return g_inv(st * st * ss * ss / denom);
}

double Scheduler::r_star(double t, double t_prime) const {
    if (!(t_prime > t)) throw std::domain_error("r_star: requires t_prime > t");
    if (sigma(t_prime) == 0.0) return 1.0;  // full denoising needs the full inner flow
    double gt = g(t), gp = g(t_prime);
    double diff = gt - gp;
    if (diff <= 0.0) throw std::domain_error("r_star: g(t) - g(t_prime) must be positive");
    return g_inv(gt * gp / diff);
}

Scheduler::VelocityCoeffs Scheduler::velocity_coeffs(double t) const {
    double a = alpha(t);
    if (a == 0.0) throw std::domain_error("velocity_coeffs: alpha(t) = 0");
    double s = sigma(t);
    double ad = alpha_dot(t), sd = sigma_dot(t);
    return {ad / a, s * s * ad / a - sd * s};
}

double Scheduler::snr_shift_time(double t, double lambda) const {
    if (lambda <= 0.0) throw std::domain_error("snr_shift_time: lambda must be positive");
    return g_inv(lambda * g(t));
}

}  // namespace diamond
