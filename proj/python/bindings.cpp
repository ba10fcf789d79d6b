#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "diamond/experiment.hpp"

namespace py = pybind11;
using namespace diamond;

namespace {

GaussianMixture mixture_from_lists(const std::vector<double>& weights,
                                   const std::vector<Vec>& means, const std::vector<Mat>& covs) {
    if (weights.size() != means.size() || weights.size() != covs.size())
        throw std::invalid_argument("weights/means/covs lengths differ");
    std::vector<MixtureComponent> comps;
    for (std::size_t k = 0; k < weights.size(); ++k)
        comps.push_back({weights[k], means[k], covs[k]});
    return GaussianMixture(std::move(comps));
}

/// Python-callable reward; grabs the GIL because estimators run particle
/// loops on worker threads.
class PyReward final : public Reward {
  public:
    PyReward(py::function eval, py::object grad) : eval_(std::move(eval)), grad_(std::move(grad)) {}
    double eval(const Vec& z) const override {
        py::gil_scoped_acquire gil;
        return eval_(z).cast<double>();
    }
    Vec grad(const Vec& z) const override {
        py::gil_scoped_acquire gil;
        if (!grad_.is_none()) return grad_.cast<py::function>()(z).cast<Vec>();
        py::gil_scoped_release release;
        return Reward::grad(z);
    }

  private:
    py::function eval_;
    py::object grad_;
};

ScoreFn oracle_score(const MixtureOracle& o) {
    return [&o](const Vec& x, double t) { return o.score(x, t); };
}

py::dict estimate_to_dict(const ValueEstimate& est) {
    py::dict d;
    d["value"] = est.value ? py::cast(*est.value) : py::none();
    d["gradient"] = est.gradient ? py::cast(*est.gradient) : py::none();
    d["ess"] = est.ess;
    d["n_particles"] = est.n_particles;
    d["std_error"] = est.std_error ? py::cast(*est.std_error) : py::none();
    d["gradient_std_error"] =
        est.gradient_std_error ? py::cast(*est.gradient_std_error) : py::none();
    return d;
}

}  // namespace

PYBIND11_MODULE(_diamond, m) {
    m.doc() = "stochastic flow maps over Gaussian-mixture oracles";

    py::enum_<ScheduleKind>(m, "ScheduleKind")
        .value("linear", ScheduleKind::Linear)
        .value("vp", ScheduleKind::VariancePreserving)
        .value("ve", ScheduleKind::VarianceExploding);

    py::class_<Scheduler>(m, "Scheduler")
        .def(py::init([](const std::string& kind, double t_min, double t_max) {
                 return Scheduler(parse_schedule_kind(kind), t_min, t_max);
             }),
             py::arg("kind") = "linear", py::arg("t_min") = 1e-3, py::arg("t_max") = 1.0 - 1e-3)
        .def("alpha", &Scheduler::alpha)
        .def("sigma", &Scheduler::sigma)
        .def("alpha_dot", &Scheduler::alpha_dot)
        .def("sigma_dot", &Scheduler::sigma_dot)
        .def("g", &Scheduler::g)
        .def("g_inv", &Scheduler::g_inv)
        .def("t_star", &Scheduler::t_star)
        .def("r_star", &Scheduler::r_star)
        .def("snr_shift_time", &Scheduler::snr_shift_time)
        .def("clamp", &Scheduler::clamp)
        .def("velocity_coeffs",
             [](const Scheduler& s, double t) {
                 auto [a, b] = s.velocity_coeffs(t);
                 return py::make_tuple(a, b);
             })
        .def_property_readonly("t_min", &Scheduler::t_min)
        .def_property_readonly("t_max", &Scheduler::t_max)
        .def_property_readonly("kind",
                               [](const Scheduler& s) { return schedule_kind_name(s.kind()); });

    py::class_<Reward, std::shared_ptr<Reward>>(m, "Reward")
        .def("eval", &Reward::eval)
        .def("grad", &Reward::grad);
    py::class_<ZeroReward, Reward, std::shared_ptr<ZeroReward>>(m, "ZeroReward").def(py::init<>());
    py::class_<LinearReward, Reward, std::shared_ptr<LinearReward>>(m, "LinearReward")
        .def(py::init<Vec>(), py::arg("c"));
    py::class_<QuadraticReward, Reward, std::shared_ptr<QuadraticReward>>(m, "QuadraticReward")
        .def(py::init<Mat, Vec, double>(), py::arg("A"), py::arg("b"), py::arg("c") = 0.0);
    py::class_<RadialReward, Reward, std::shared_ptr<RadialReward>>(m, "RadialReward")
        .def(py::init<Vec, double>(), py::arg("target"), py::arg("scale"));
    py::class_<PyReward, Reward, std::shared_ptr<PyReward>>(m, "CustomReward")
        .def(py::init<py::function, py::object>(), py::arg("eval"), py::arg("grad") = py::none());

    py::class_<GaussianMixture>(m, "GaussianMixture")
        .def(py::init(&mixture_from_lists), py::arg("weights"), py::arg("means"), py::arg("covs"))
        .def_property_readonly("dim", &GaussianMixture::dim)
        .def_property_readonly("n_components", &GaussianMixture::n_components)
        .def("log_pdf", &GaussianMixture::log_pdf)
        .def("score", &GaussianMixture::score)
        .def("mean", &GaussianMixture::mean)
        .def("covariance", &GaussianMixture::covariance)
        .def("tilt_linear", &GaussianMixture::tilt_linear)
        .def("sample", &GaussianMixture::sample_matrix, py::arg("n"), py::arg("seed"))
        .def("weights",
             [](const GaussianMixture& g) {
                 std::vector<double> w;
                 for (const auto& c : g.components()) w.push_back(c.weight);
                 return w;
             })
        .def("means",
             [](const GaussianMixture& g) {
                 std::vector<Vec> ms;
                 for (const auto& c : g.components()) ms.push_back(c.mean);
                 return ms;
             })
        .def("covs", [](const GaussianMixture& g) {
            std::vector<Mat> cs;
            for (const auto& c : g.components()) cs.push_back(c.cov);
            return cs;
        });

    py::class_<MixtureOracle>(m, "MixtureOracle")
        .def(py::init<GaussianMixture, Scheduler>(), py::arg("mixture"), py::arg("scheduler"))
        .def_property_readonly("dim", &MixtureOracle::dim)
        .def_property_readonly("scheduler", &MixtureOracle::sched)
        .def_property_readonly("mixture", &MixtureOracle::data)
        .def("marginal_at", &MixtureOracle::marginal_at)
        .def("log_marginal", &MixtureOracle::log_marginal)
        .def("score", &MixtureOracle::score)
        .def("denoiser", &MixtureOracle::denoiser)
        .def("velocity", &MixtureOracle::velocity)
        .def("conditional_velocity", &MixtureOracle::conditional_velocity)
        .def("posterior", &MixtureOracle::posterior)
        .def("score_hessian", &MixtureOracle::score_hessian)
        .def("denoiser_jacobian", &MixtureOracle::denoiser_jacobian)
        .def("velocity_jacobian", &MixtureOracle::velocity_jacobian)
        .def("velocity_divergence", &MixtureOracle::velocity_divergence)
        .def("value_exact",
             [](const MixtureOracle& o, const Vec& x, double t, const Reward& r) {
                 auto vg = o.value_exact(x, t, r);
                 return py::make_tuple(vg.value, vg.gradient);
             })
        .def("value_mc",
             [](const MixtureOracle& o, const Vec& x, double t, const Reward& r, int n,
                std::uint64_t seed) { return estimate_to_dict(o.value_mc(x, t, r, n, seed)); },
             py::arg("x"), py::arg("t"), py::arg("reward"), py::arg("n_samples"),
             py::arg("seed") = 0);

    py::class_<GlassField>(m, "GlassField")
        .def(py::init<const MixtureOracle&>(), py::keep_alive<1, 2>())
        .def("velocity", &GlassField::velocity)
        .def("sample_posterior_ode", &GlassField::sample_posterior_ode, py::arg("x_t"),
             py::arg("t"), py::arg("n_steps") = 96, py::arg("seed") = 0,
             py::call_guard<py::gil_scoped_release>())
        .def("integrate", &GlassField::integrate);

    m.def("sufficient_statistic", &sufficient_statistic);

    py::class_<FlowMap>(m, "FlowMap")
        .def("apply", &FlowMap::apply, py::call_guard<py::gil_scoped_release>())
        .def("input_jacobian", &FlowMap::input_jacobian);
    py::class_<OracleFlowMap, FlowMap>(m, "OracleFlowMap")
        .def(py::init<const MixtureOracle&, int>(), py::arg("oracle"), py::arg("n_steps") = 64,
             py::keep_alive<1, 2>());
    py::class_<DistilledFlowMap, FlowMap>(m, "DistilledFlowMap");

    py::class_<PosteriorDiamondMap>(m, "PosteriorDiamondMap")
        .def("apply", &PosteriorDiamondMap::apply, py::call_guard<py::gil_scoped_release>())
        .def("cond_jacobian", &PosteriorDiamondMap::cond_jacobian);
    py::class_<OracleDiamondMap, PosteriorDiamondMap>(m, "OracleDiamondMap")
        .def(py::init<const GlassField&, int>(), py::arg("field"), py::arg("n_steps") = 64,
             py::keep_alive<1, 2>());
    py::class_<DistilledDiamondMap, PosteriorDiamondMap>(m, "DistilledDiamondMap")
        .def("flow_map", [](const DistilledDiamondMap& d) {
            return DistilledFlowMap(d.net_ptr(), d.sched());
        });

    m.def("renoise", &renoise);
    m.def("diamond_ddpm_step",
          py::overload_cast<const PosteriorDiamondMap&, const Vec&, double, double, std::uint64_t>(
              &diamond_ddpm_step),
          py::call_guard<py::gil_scoped_release>());
    m.def("naive_renoise_step", &naive_renoise_step, py::call_guard<py::gil_scoped_release>());
    m.def("ddpm_reference_sample",
          py::overload_cast<const MixtureOracle&, const Vec&, double, double, std::uint64_t>(
              &ddpm_reference_sample));
    m.def("r_star_surface", &r_star_surface);

    py::enum_<SensitivityMode>(m, "SensitivityMode")
        .value("tangent_ode", SensitivityMode::TangentOde)
        .value("finite_difference", SensitivityMode::FiniteDifference);

    m.def("ess", &ess);
    m.def(
        "posterior_value",
        [](const PosteriorDiamondMap& map, const Vec& x, double t, const Reward& r, int k,
           std::uint64_t seed) { return estimate_to_dict(posterior_value(map, x, t, r, k, seed)); },
        py::arg("map"), py::arg("x_t"), py::arg("t"), py::arg("reward"), py::arg("n_particles"),
        py::arg("seed") = 0);
    m.def(
        "posterior_value_gradient",
        [](const PosteriorDiamondMap& map, const Vec& x, double t, const Reward& r, int k,
           std::uint64_t seed, SensitivityMode mode) {
            return estimate_to_dict(posterior_value_gradient(map, x, t, r, k, seed, mode));
        },
        py::arg("map"), py::arg("x_t"), py::arg("t"), py::arg("reward"), py::arg("n_particles"),
        py::arg("seed") = 0, py::arg("mode") = SensitivityMode::TangentOde);
    m.def(
        "denoiser_value",
        [](const MixtureOracle& o, const Vec& x, double t, const Reward& r) {
            return estimate_to_dict(denoiser_value(o, x, t, r));
        },
        py::arg("oracle"), py::arg("x_t"), py::arg("t"), py::arg("reward"));
    m.def(
        "weighted_diamond_gradient",
        [](const FlowMap& flow, const MixtureOracle& o, const Vec& x, double t, double lambda,
           const Reward& r, int n, std::uint64_t seed, SensitivityMode mode) {
            return estimate_to_dict(
                weighted_diamond_gradient(flow, oracle_score(o), x, t, lambda, r, n, seed, mode));
        },
        py::arg("flow"), py::arg("oracle"), py::arg("x_t"), py::arg("t"), py::arg("lambda_"),
        py::arg("reward"), py::arg("n_particles"), py::arg("seed") = 0,
        py::arg("mode") = SensitivityMode::TangentOde);
    m.def(
        "weighted_diamond_value",
        [](const FlowMap& flow, const MixtureOracle& o, const Vec& x, double t, double lambda,
           const Reward& r, int n, int n_hutchinson, std::uint64_t seed) {
            return estimate_to_dict(weighted_diamond_value(
                flow, oracle_score(o), [&o](const Vec& y, double tt) { return o.velocity(y, tt); },
                x, t, lambda, r, n, n_hutchinson, seed,
                [&o](const Vec& y, double tt) { return o.velocity_jacobian(y, tt); }));
        },
        py::arg("flow"), py::arg("oracle"), py::arg("x_t"), py::arg("t"), py::arg("lambda_"),
        py::arg("reward"), py::arg("n_particles"), py::arg("n_hutchinson") = 16,
        py::arg("seed") = 0);

    py::enum_<GradientMode>(m, "GradientMode")
        .value("exact", GradientMode::Exact)
        .value("estimator", GradientMode::Estimator);

    py::class_<GuidanceConfig>(m, "GuidanceConfig")
        .def(py::init<>())
        .def_readwrite("n_steps", &GuidanceConfig::n_steps)
        .def_readwrite("particles", &GuidanceConfig::particles)
        .def_readwrite("lambda_", &GuidanceConfig::lambda)
        .def_readwrite("t_lo", &GuidanceConfig::t_lo)
        .def_readwrite("t_hi", &GuidanceConfig::t_hi)
        .def_readwrite("reward_scale", &GuidanceConfig::reward_scale)
        .def_readwrite("gradient_mode", &GuidanceConfig::gradient_mode)
        .def_readwrite("sensitivity", &GuidanceConfig::sensitivity);

    m.def(
        "guide_posterior",
        [](const MixtureOracle& o, const PosteriorDiamondMap* map, const Reward& r,
           const GuidanceConfig& cfg, std::uint64_t seed) {
            py::gil_scoped_release release;
            return guide_posterior(o, map, r, cfg, seed);
        },
        py::arg("oracle"), py::arg("map"), py::arg("reward"), py::arg("config"),
        py::arg("seed") = 0);
    m.def(
        "guide_weighted",
        [](const MixtureOracle& o, const FlowMap& flow, const Reward& r, const GuidanceConfig& cfg,
           std::uint64_t seed) {
            py::gil_scoped_release release;
            return guide_weighted(o, flow, r, cfg, seed);
        },
        py::arg("oracle"), py::arg("flow"), py::arg("reward"), py::arg("config"),
        py::arg("seed") = 0);

    py::enum_<ResampleMode>(m, "ResampleMode")
        .value("per_step_reset", ResampleMode::PerStepReset)
        .value("literal_carry", ResampleMode::LiteralCarry);

    m.def(
        "smc",
        [](const MixtureOracle& o, const PosteriorDiamondMap& map, const Reward& r, int m_particles,
           int n_steps, int k_inner, ResampleMode mode, std::uint64_t seed) {
            SmcOptions opts;
            opts.mode = mode;
            ParticleEnsemble ens = [&] {
                py::gil_scoped_release release;
                return smc(o, map, r, m_particles, n_steps, k_inner, opts, seed);
            }();
            py::list hist;
            for (const auto& rec : ens.history) {
                py::dict d;
                d["t"] = rec.t;
                d["ess"] = rec.ess;
                d["resampled"] = rec.resampled;
                d["degenerate"] = rec.degenerate;
                d["mean_value"] = rec.mean_value;
                hist.append(d);
            }
            return py::make_tuple(ens.states, hist);
        },
        py::arg("oracle"), py::arg("map"), py::arg("reward"), py::arg("n_particles"),
        py::arg("n_steps"), py::arg("n_inner"), py::arg("mode") = ResampleMode::PerStepReset,
        py::arg("seed") = 0);
    m.def(
        "search",
        [](const MixtureOracle& o, const PosteriorDiamondMap& map, const Reward& r, int m_particles,
           int n_steps, int k_inner, std::uint64_t seed) {
            py::gil_scoped_release release;
            return search(o, map, r, m_particles, n_steps, k_inner, seed);
        },
        py::arg("oracle"), py::arg("map"), py::arg("reward"), py::arg("n_particles"),
        py::arg("n_steps"), py::arg("n_inner"), py::arg("seed") = 0);
    m.def(
        "best_of_n",
        [](py::function sampler, const Reward& r, int n, std::uint64_t seed) {
            SamplerFn fn = [&sampler](std::uint64_t s) {
                py::gil_scoped_acquire gil;
                return sampler(s).cast<Vec>();
            };
            return best_of_n(fn, r, n, seed);
        },
        py::arg("sampler"), py::arg("reward"), py::arg("n"), py::arg("seed") = 0);

    m.def(
        "train_diamond_map",
        [](const MixtureOracle& oracle, int n_iters, int batch, double lr, int teacher_steps,
           std::vector<int> hidden, std::uint64_t seed) {
            py::gil_scoped_release release;
            GlassField field(oracle);
            TrainConfig cfg;
            cfg.net.dim = oracle.dim();
            cfg.net.hidden = std::move(hidden);
            cfg.n_iters = n_iters;
            cfg.batch = batch;
            cfg.lr = lr;
            cfg.teacher_steps = teacher_steps;
            cfg.seed = seed;
            auto result = rollout_regression_train(field, cfg);
            return std::make_pair(DistilledDiamondMap(result.net, oracle.sched()),
                                  result.loss_history);
        },
        py::arg("oracle"), py::arg("n_iters") = 4000, py::arg("batch") = 256,
        py::arg("lr") = 1e-3, py::arg("teacher_steps") = 16,
        py::arg("hidden") = std::vector<int>{128, 128, 128}, py::arg("seed") = 0);
    m.def("save_checkpoint", &save_checkpoint);
    m.def("load_checkpoint", &load_checkpoint);

    m.def("w1_1d", [](const Mat& a, const Mat& b) {
        return w1_1d(make_sample_set(a, "a"), make_sample_set(b, "b"));
    });
    m.def(
        "sliced_w2",
        [](const Mat& a, const Mat& b, int n_projections, std::uint64_t seed) {
            return sliced_w2(make_sample_set(a, "a"), make_sample_set(b, "b"), n_projections, seed);
        },
        py::arg("a"), py::arg("b"), py::arg("n_projections") = 64, py::arg("seed") = 0);
    m.def("rbf_mmd", [](const Mat& a, const Mat& b, double bandwidth) {
        auto res = rbf_mmd(make_sample_set(a, "a"), make_sample_set(b, "b"), bandwidth);
        return py::make_tuple(res.mmd2, res.std_error);
    });
    m.def("ks_test_1d", [](const Mat& a, const Mat& b) {
        auto res = ks_test_1d(make_sample_set(a, "a"), make_sample_set(b, "b"));
        return py::make_tuple(res.statistic, res.p_value);
    });

    m.def(
        "run_experiment",
        [](const std::string& config_json) {
            auto cfg = parse_experiment_config(json::parse(config_json));
            return run_experiment(cfg).string();
        },
        py::arg("config_json"));
}
