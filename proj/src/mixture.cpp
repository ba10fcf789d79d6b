#include "diamond/mixture.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace diamond {

namespace {

constexpr double kDegenerateTol = 1e-12;
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

double gaussian_log_pdf(const Vec& x, const Vec& mean, const Eigen::LLT<Mat>& llt) {
    Vec d = x - mean;
    Vec w = llt.matrixL().solve(d);
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) log_det += std::log(llt.matrixL()(i, i));
    return -0.5 * x.size() * kLog2Pi - log_det - 0.5 * w.squaredNorm();
}

}  // namespace

GaussianMixture::GaussianMixture(std::vector<MixtureComponent> components)
    : comps_(std::move(components)) {
    if (comps_.empty()) throw std::invalid_argument("GaussianMixture: no components");
    dim_ = comps_[0].mean.size();
    double total = 0.0;
    for (auto& c : comps_) {
        if (c.mean.size() != dim_ || c.cov.rows() != dim_ || c.cov.cols() != dim_)
            throw std::invalid_argument("GaussianMixture: dimension mismatch");
        if (!(c.weight >= 0.0)) throw std::invalid_argument("GaussianMixture: negative weight");
        if (!c.cov.isApprox(c.cov.transpose(), 1e-9))
            throw std::invalid_argument("GaussianMixture: covariance must be symmetric");
        c.cov = 0.5 * (c.cov + c.cov.transpose());
        total += c.weight;
    }
    if (total <= 0.0) throw std::invalid_argument("GaussianMixture: weights sum to zero");
    for (auto& c : comps_) c.weight /= total;

    sqrt_cov_.reserve(comps_.size());
    degenerate_.reserve(comps_.size());
    log_norm_.reserve(comps_.size());
    cov_inv_.reserve(comps_.size());
    for (const auto& c : comps_) {
        Eigen::SelfAdjointEigenSolver<Mat> eig(c.cov);
        Vec evals = eig.eigenvalues();
        double scale = std::max(1.0, evals.cwiseAbs().maxCoeff());
        if (evals.minCoeff() < -1e-10 * scale)
            throw std::invalid_argument("GaussianMixture: covariance not PSD");
        bool degen = false;
        Vec s(dim_);
        double log_det = 0.0;
        for (Eigen::Index i = 0; i < dim_; ++i) {
            double e = std::max(evals[i], 0.0);
            s[i] = std::sqrt(e);
            if (e <= kDegenerateTol) degen = true;
            else log_det += std::log(e);
        }
        sqrt_cov_.push_back(eig.eigenvectors() * s.asDiagonal());
        degenerate_.push_back(degen);
        if (degen) {
            log_norm_.push_back(0.0);
            cov_inv_.push_back(Mat::Zero(dim_, dim_));
        } else {
            log_norm_.push_back(-0.5 * dim_ * kLog2Pi - 0.5 * log_det);
            cov_inv_.push_back(eig.eigenvectors() * evals.cwiseInverse().asDiagonal() *
                               eig.eigenvectors().transpose());
        }
    }
}

GaussianMixture GaussianMixture::single(Vec mean, Mat cov) {
    return GaussianMixture({{1.0, std::move(mean), std::move(cov)}});
}

GaussianMixture GaussianMixture::isotropic(Vec mean, double var) {
    Mat cov = var * Mat::Identity(mean.size(), mean.size());
    return GaussianMixture({{1.0, std::move(mean), std::move(cov)}});
}

double GaussianMixture::log_pdf(const Vec& x) const {
    std::vector<double> terms(comps_.size());
    for (std::size_t k = 0; k < comps_.size(); ++k) {
        if (degenerate_[k]) {
            terms[k] = -std::numeric_limits<double>::infinity();
            continue;
        }
        Vec d = x - comps_[k].mean;
        terms[k] = std::log(comps_[k].weight) + log_norm_[k] - 0.5 * d.dot(cov_inv_[k] * d);
    }
    return log_sum_exp(terms);
}

Vec GaussianMixture::score(const Vec& x) const {
    std::vector<double> terms(comps_.size());
    std::vector<Vec> comp_score(comps_.size());
    for (std::size_t k = 0; k < comps_.size(); ++k) {
        if (degenerate_[k]) throw std::domain_error("GaussianMixture::score: degenerate component");
        Vec d = x - comps_[k].mean;
        comp_score[k] = -(cov_inv_[k] * d);
        terms[k] = std::log(comps_[k].weight) + log_norm_[k] + 0.5 * d.dot(comp_score[k]);
    }
    auto w = softmax(terms);
    Vec s = Vec::Zero(dim_);
    for (std::size_t k = 0; k < comps_.size(); ++k) s += w[k] * comp_score[k];
    return s;
}

Vec GaussianMixture::sample(Rng& rng) const {
    Vec w(comps_.size());
    for (std::size_t k = 0; k < comps_.size(); ++k) w[static_cast<Eigen::Index>(k)] = comps_[k].weight;
    int k = rng.categorical(w);
    return comps_[k].mean + sqrt_cov_[k] * rng.normal_vec(dim_);
}

Mat GaussianMixture::sample_matrix(std::size_t n, std::uint64_t seed) const {
    Mat out(n, dim_);
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) out.row(i) = sample(rng).transpose();
    return out;
}

Vec GaussianMixture::mean() const {
    Vec m = Vec::Zero(dim_);
    for (const auto& c : comps_) m += c.weight * c.mean;
    return m;
}

Mat GaussianMixture::covariance() const {
    Vec m = mean();
    Mat cov = Mat::Zero(dim_, dim_);
    for (const auto& c : comps_) {
        Vec d = c.mean - m;
        cov += c.weight * (c.cov + d * d.transpose());
    }
    return cov;
}

GaussianMixture GaussianMixture::tilt_linear(const Vec& c) const {
    if (c.size() != dim_) throw std::invalid_argument("tilt_linear: dimension mismatch");
    std::vector<double> log_w(comps_.size());
    std::vector<MixtureComponent> tilted(comps_.size());
    for (std::size_t k = 0; k < comps_.size(); ++k) {
        const auto& comp = comps_[k];
        log_w[k] = std::log(comp.weight) + c.dot(comp.mean) + 0.5 * c.dot(comp.cov * c);
        tilted[k] = {0.0, comp.mean + comp.cov * c, comp.cov};
    }
    auto w = softmax(log_w);
    for (std::size_t k = 0; k < comps_.size(); ++k) tilted[k].weight = w[k];
    return GaussianMixture(std::move(tilted));
}

// ---------------------------------------------------------------------------

namespace {

// Stack-allocated responsibility/posterior kernel for small dimensions; the
// generic Eigen path allocates enough to dominate RK4 inner loops.
template <int D>
struct FixedStats {
    static constexpr std::size_t kMaxComp = 16;
    using VecD = Eigen::Matrix<double, D, 1>;
    using MatD = Eigen::Matrix<double, D, D>;

    std::size_t n = 0;
    double alpha = 0.0, sigma2 = 0.0;
    std::array<double, kMaxComp> resp{};
    std::array<VecD, kMaxComp> post_mean{};
    std::array<VecD, kMaxComp> comp_score{};
    std::array<MatD, kMaxComp> m_inv{};

    static bool compute(const std::vector<MixtureComponent>& comps, const Vec& x, double a,
                        double s2, FixedStats& out) {
        if (comps.size() > kMaxComp) return false;
        out.n = comps.size();
        out.alpha = a;
        out.sigma2 = s2;
        const double tau2 = s2 / (a * a);
        const VecD xf = x;
        std::array<double, kMaxComp> log_num;
        double max_log = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < comps.size(); ++k) {
            const VecD mu = comps[k].mean;
            const MatD cov = comps[k].cov;
            MatD m = a * a * cov + s2 * MatD::Identity();
            MatD minv = m.inverse();
            VecD diff = xf - a * mu;
            out.m_inv[k] = minv;
            out.comp_score[k] = -(minv * diff);
            out.post_mean[k] = mu + cov * ((cov + tau2 * MatD::Identity()).inverse() *
                                           (xf / a - mu));
            log_num[k] = std::log(comps[k].weight) - 0.5 * std::log(m.determinant()) +
                         0.5 * diff.dot(out.comp_score[k]);
            max_log = std::max(max_log, log_num[k]);
        }
        double total = 0.0;
        for (std::size_t k = 0; k < comps.size(); ++k) {
            out.resp[k] = std::exp(log_num[k] - max_log);
            total += out.resp[k];
        }
        for (std::size_t k = 0; k < comps.size(); ++k) out.resp[k] /= total;
        return true;
    }

    VecD denoiser() const {
        VecD d = VecD::Zero();
        for (std::size_t k = 0; k < n; ++k) d += resp[k] * post_mean[k];
        return d;
    }
    VecD score() const {
        VecD s = VecD::Zero();
        for (std::size_t k = 0; k < n; ++k) s += resp[k] * comp_score[k];
        return s;
    }
    MatD hessian() const {
        VecD s = score();
        MatD h = -s * s.transpose();
        for (std::size_t k = 0; k < n; ++k)
            h += resp[k] * (comp_score[k] * comp_score[k].transpose() - m_inv[k]);
        return h;
    }
};

enum class FixedOp { Denoiser, Score, Hessian, DenoiserJacobian };

template <int D>
bool fixed_eval(const std::vector<MixtureComponent>& comps, const Vec& x, double a, double s2,
                FixedOp op, Vec* vec_out, Mat* mat_out) {
    FixedStats<D> st;
    if (!FixedStats<D>::compute(comps, x, a, s2, st)) return false;
    switch (op) {
        case FixedOp::Denoiser: *vec_out = st.denoiser(); break;
        case FixedOp::Score: *vec_out = st.score(); break;
        case FixedOp::Hessian: *mat_out = st.hessian(); break;
        case FixedOp::DenoiserJacobian:
            *mat_out = (Eigen::Matrix<double, D, D>::Identity() + s2 * st.hessian()) / a;
            break;
    }
    return true;
}

bool fixed_dispatch(const std::vector<MixtureComponent>& comps, const Vec& x, double a, double s2,
                    FixedOp op, Vec* vec_out, Mat* mat_out) {
    switch (x.size()) {
        case 1: return fixed_eval<1>(comps, x, a, s2, op, vec_out, mat_out);
        case 2: return fixed_eval<2>(comps, x, a, s2, op, vec_out, mat_out);
        case 3: return fixed_eval<3>(comps, x, a, s2, op, vec_out, mat_out);
        case 4: return fixed_eval<4>(comps, x, a, s2, op, vec_out, mat_out);
        default: return false;
    }
}

}  // namespace

struct MixtureOracle::PosteriorStats {
    double alpha, sigma;
    std::vector<double> log_num;     // log pi_k + log N(x; alpha mu_k, M_k)
    std::vector<double> resp;        // normalized responsibilities
    std::vector<Vec> comp_score;     // -M_k^{-1} (x - alpha mu_k)
    std::vector<Mat> m_inv;          // M_k^{-1}
    std::vector<Vec> post_mean;      // m_k
    std::vector<Mat> post_cov;       // C_k
    double log_marginal;
};

MixtureOracle::MixtureOracle(GaussianMixture data, Scheduler sched)
    : data_(std::move(data)), sched_(sched) {}

void MixtureOracle::check_time(double t) const {
    if (t < sched_.t_min() - 1e-12 || t > sched_.t_max() + 1e-12)
        throw std::domain_error("MixtureOracle: t outside the clamped time range");
}

MixtureOracle::PosteriorStats MixtureOracle::posterior_stats(const Vec& x, double t) const {
    check_time(t);
    const double a = sched_.alpha(t);
    const double s = sched_.sigma(t);
    const double s2 = s * s;
    const double tau2 = s2 / (a * a);
    const Eigen::Index d = dim();
    const auto& comps = data_.components();

    PosteriorStats st;
    st.alpha = a;
    st.sigma = s;
    st.log_num.resize(comps.size());
    st.comp_score.resize(comps.size());
    st.m_inv.resize(comps.size());
    st.post_mean.resize(comps.size());
    st.post_cov.resize(comps.size());

    const Mat id = Mat::Identity(d, d);
    for (std::size_t k = 0; k < comps.size(); ++k) {
        const auto& c = comps[k];
        Mat M = a * a * c.cov + s2 * id;
        Eigen::LLT<Mat> llt(M);
        if (llt.info() != Eigen::Success)
            throw std::runtime_error("MixtureOracle: marginal covariance not PD");
        Vec diff = x - a * c.mean;
        st.log_num[k] = std::log(c.weight) + gaussian_log_pdf(x, a * c.mean, llt);
        st.m_inv[k] = llt.solve(id);
        st.comp_score[k] = -(st.m_inv[k] * diff);
        // Conjugate update in the inverse-free form, valid for singular Sigma_k:
        //   K = (Sigma + tau^2 I)^{-1},  m = mu + Sigma K (x/a - mu),
        //   C = Sigma - Sigma K Sigma.
        Eigen::LLT<Mat> kll(c.cov + tau2 * id);
        Mat SK = c.cov * kll.solve(id);
        st.post_mean[k] = c.mean + SK * (x / a - c.mean);
        Mat C = c.cov - SK * c.cov;
        st.post_cov[k] = 0.5 * (C + C.transpose());
    }
    st.log_marginal = log_sum_exp(st.log_num);
    st.resp = softmax(st.log_num);
    return st;
}

GaussianMixture MixtureOracle::marginal_at(double t) const {
    check_time(t);
    const double a = sched_.alpha(t);
    const double s2 = sched_.sigma(t) * sched_.sigma(t);
    std::vector<MixtureComponent> comps;
    comps.reserve(data_.n_components());
    for (const auto& c : data_.components())
        comps.push_back({c.weight, a * c.mean, a * a * c.cov + s2 * Mat::Identity(dim(), dim())});
    return GaussianMixture(std::move(comps));
}

double MixtureOracle::log_marginal(const Vec& x, double t) const {
    check_time(t);
    const double a = sched_.alpha(t);
    const double s2 = sched_.sigma(t) * sched_.sigma(t);
    const auto& comps = data_.components();
    std::vector<double> terms(comps.size());
    const Mat id = Mat::Identity(dim(), dim());
    for (std::size_t k = 0; k < comps.size(); ++k) {
        Eigen::LLT<Mat> llt(a * a * comps[k].cov + s2 * id);
        terms[k] = std::log(comps[k].weight) + gaussian_log_pdf(x, a * comps[k].mean, llt);
    }
    return log_sum_exp(terms);
}

Vec MixtureOracle::score(const Vec& x, double t) const {
    check_time(t);
    const double a = sched_.alpha(t), s = sched_.sigma(t);
    Vec out;
    if (fixed_dispatch(data_.components(), x, a, s * s, FixedOp::Score, &out, nullptr)) return out;
    auto st = posterior_stats(x, t);
    Vec acc = Vec::Zero(dim());
    for (std::size_t k = 0; k < st.resp.size(); ++k) acc += st.resp[k] * st.comp_score[k];
    return acc;
}

Vec MixtureOracle::denoiser(const Vec& x, double t) const {
    check_time(t);
    const double a = sched_.alpha(t), s = sched_.sigma(t);
    Vec out;
    if (fixed_dispatch(data_.components(), x, a, s * s, FixedOp::Denoiser, &out, nullptr))
        return out;
    auto st = posterior_stats(x, t);
    Vec acc = Vec::Zero(dim());
    for (std::size_t k = 0; k < st.resp.size(); ++k) acc += st.resp[k] * st.post_mean[k];
    return acc;
}

Vec MixtureOracle::velocity(const Vec& x, double t) const {
    check_time(t);
    const double s = sched_.sigma(t);
    if (s == 0.0) throw std::domain_error("velocity: sigma(t) = 0");
    const double rs = sched_.sigma_dot(t) / s;
    return rs * x + (sched_.alpha_dot(t) - sched_.alpha(t) * rs) * denoiser(x, t);
}

Vec MixtureOracle::conditional_velocity(const Vec& x, const Vec& z, double t) const {
    const double s = sched_.sigma(t);
    if (s == 0.0) throw std::domain_error("conditional_velocity: sigma(t) = 0");
    const double rs = sched_.sigma_dot(t) / s;
    return (sched_.alpha_dot(t) - rs * sched_.alpha(t)) * z + rs * x;
}

GaussianMixture MixtureOracle::posterior(const Vec& x, double t) const {
    auto st = posterior_stats(x, t);
    std::vector<MixtureComponent> comps(st.resp.size());
    for (std::size_t k = 0; k < st.resp.size(); ++k)
        comps[k] = {st.resp[k], st.post_mean[k], st.post_cov[k]};
    return GaussianMixture(std::move(comps));
}

Mat MixtureOracle::score_hessian(const Vec& x, double t) const {
    check_time(t);
    const double a = sched_.alpha(t), sg = sched_.sigma(t);
    Mat out;
    if (fixed_dispatch(data_.components(), x, a, sg * sg, FixedOp::Hessian, nullptr, &out))
        return out;
    auto st = posterior_stats(x, t);
    Vec s = Vec::Zero(dim());
    for (std::size_t k = 0; k < st.resp.size(); ++k) s += st.resp[k] * st.comp_score[k];
    Mat H = -s * s.transpose();
    for (std::size_t k = 0; k < st.resp.size(); ++k)
        H += st.resp[k] * (st.comp_score[k] * st.comp_score[k].transpose() - st.m_inv[k]);
    return H;
}

Mat MixtureOracle::denoiser_jacobian(const Vec& x, double t) const {
    check_time(t);
    const double a = sched_.alpha(t);
    const double s2 = sched_.sigma(t) * sched_.sigma(t);
    Mat out;
    if (fixed_dispatch(data_.components(), x, a, s2, FixedOp::DenoiserJacobian, nullptr, &out))
        return out;
    // D = (x + sigma^2 score) / alpha
    return (Mat::Identity(dim(), dim()) + s2 * score_hessian(x, t)) / a;
}

Mat MixtureOracle::velocity_jacobian(const Vec& x, double t) const {
    auto [a_t, b_t] = sched_.velocity_coeffs(t);
    return a_t * Mat::Identity(dim(), dim()) + b_t * score_hessian(x, t);
}

double MixtureOracle::velocity_divergence(const Vec& x, double t) const {
    return velocity_jacobian(x, t).trace();
}

ValueGrad MixtureOracle::value_exact(const Vec& x, double t, const Reward& reward) const {
    if (!reward.has_quadratic_form())
        throw std::invalid_argument("value_exact: reward has no closed form; use value_mc");
    const Eigen::Index d = dim();
    const Mat A = reward.quad_A(d);
    const Vec b = reward.quad_b(d);
    const double c0 = reward.quad_c();

    auto st = posterior_stats(x, t);
    const double a_over_s2 = st.alpha / (st.sigma * st.sigma);
    const std::size_t K = st.resp.size();
    std::vector<double> log_terms(K);
    std::vector<Vec> grad_terms(K);
    Vec score = Vec::Zero(d);
    for (std::size_t k = 0; k < K; ++k) score += st.resp[k] * st.comp_score[k];

    for (std::size_t k = 0; k < K; ++k) {
        const Vec& m = st.post_mean[k];
        const Mat& C = st.post_cov[k];
        double log_e;
        Vec m_tilt;
        if (C.cwiseAbs().maxCoeff() <= kDegenerateTol) {
            // Point-mass posterior component: E[exp r] = exp r(m).
            log_e = 0.5 * m.dot(A * m) + b.dot(m) + c0;
            m_tilt = m;
        } else {
            Eigen::LLT<Mat> cllt(C);
            if (cllt.info() != Eigen::Success)
                throw std::runtime_error("value_exact: posterior covariance not PD");
            Mat P = cllt.solve(Mat::Identity(d, d));
            Mat Q = P - A;
            Eigen::LLT<Mat> qllt(Q);
            if (qllt.info() != Eigen::Success)
                throw std::domain_error("value_exact: reward curvature makes the tilted Gaussian improper");
            Vec h = P * m + b;
            m_tilt = qllt.solve(h);
            double log_det_c = 0.0, log_det_q = 0.0;
            for (Eigen::Index i = 0; i < d; ++i) {
                log_det_c += std::log(cllt.matrixL()(i, i));
                log_det_q += std::log(qllt.matrixL()(i, i));
            }
            log_e = -(log_det_c + log_det_q) + 0.5 * h.dot(m_tilt) - 0.5 * m.dot(P * m) + c0;
        }
        log_terms[k] = std::log(st.resp[k]) + log_e;
        grad_terms[k] = st.comp_score[k] + a_over_s2 * (m_tilt - st.post_mean[k]);
    }
    double v = log_sum_exp(log_terms);
    auto w = softmax(log_terms);
    Vec g = -score;
    for (std::size_t k = 0; k < K; ++k) g += w[k] * grad_terms[k];
    return {v, g};
}

ValueEstimate MixtureOracle::value_mc(const Vec& x, double t, const Reward& reward, int n_samples,
                                      std::uint64_t seed) const {
    if (n_samples < 1) throw std::invalid_argument("value_mc: n_samples must be >= 1");
    GaussianMixture post = posterior(x, t);
    Rng rng(seed);
    std::vector<double> r(n_samples);
    for (int i = 0; i < n_samples; ++i) r[i] = reward.eval(post.sample(rng));

    double lse = log_sum_exp(r);
    ValueEstimate est;
    est.n_particles = n_samples;
    est.value = lse - std::log(static_cast<double>(n_samples));
    est.ess = ess(r);
    if (n_samples > 1) {
        // Jackknife over leave-one-out log-mean-exp.
        double m = *std::max_element(r.begin(), r.end());
        double total = 0.0;
        for (double ri : r) total += std::exp(ri - m);
        std::vector<double> loo(n_samples);
        double loo_mean = 0.0;
        for (int i = 0; i < n_samples; ++i) {
            loo[i] = m + std::log((total - std::exp(r[i] - m)) / (n_samples - 1));
            loo_mean += loo[i];
        }
        loo_mean /= n_samples;
        double ss = 0.0;
        for (double v : loo) ss += (v - loo_mean) * (v - loo_mean);
        est.std_error = std::sqrt(ss * (n_samples - 1) / static_cast<double>(n_samples));
    }
    return est;
}

}  // namespace diamond
