#include "diamond/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "diamond/parallel.hpp"

namespace diamond {

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, _] : obj.items())
        if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

Vec vec_from_json(const json& arr, const std::string& where) {
    if (!arr.is_array()) throw ConfigError(where + ": expected an array");
    Vec v(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) v[i] = arr[i].get<double>();
    return v;
}

Mat mat_from_json(const json& arr, const std::string& where) {
    if (!arr.is_array() || arr.empty()) throw ConfigError(where + ": expected a matrix");
    Mat m(arr.size(), arr[0].size());
    for (std::size_t i = 0; i < arr.size(); ++i) {
        if (arr[i].size() != arr[0].size()) throw ConfigError(where + ": ragged matrix");
        for (std::size_t j = 0; j < arr[i].size(); ++j) m(i, j) = arr[i][j].get<double>();
    }
    return m;
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
    if (obj.contains(key)) return obj.at(key).get<T>();
    return fallback;
}

// --- SVG helpers ------------------------------------------------------------

struct Rgb {
    int r, g, b;
};

Rgb ramp(double u) {
    // compact viridis-like ramp
    static const Rgb anchors[] = {{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98},
                                  {253, 231, 37}};
    u = std::clamp(u, 0.0, 1.0) * 3.999;
    int i = static_cast<int>(u);
    double f = u - i;
    return {static_cast<int>(anchors[i].r + f * (anchors[i + 1].r - anchors[i].r)),
            static_cast<int>(anchors[i].g + f * (anchors[i + 1].g - anchors[i].g)),
            static_cast<int>(anchors[i].b + f * (anchors[i + 1].b - anchors[i].b))};
}

struct View {
    double x0, x1, y0, y1;
    double width = 640, height = 640, margin = 40;
    double px(double x) const { return margin + (x - x0) / (x1 - x0) * (width - 2 * margin); }
    double py(double y) const { return height - margin - (y - y0) / (y1 - y0) * (height - 2 * margin); }
};

void marching_squares(std::ostringstream& svg, const View& vw,
                      const std::function<double(double, double)>& f, double level,
                      const std::string& color, int grid = 64) {
    const double dx = (vw.x1 - vw.x0) / grid;
    const double dy = (vw.y1 - vw.y0) / grid;
    std::vector<std::vector<double>> vals(grid + 1, std::vector<double>(grid + 1));
    for (int i = 0; i <= grid; ++i)
        for (int j = 0; j <= grid; ++j) vals[i][j] = f(vw.x0 + i * dx, vw.y0 + j * dy);
    auto interp = [level](double xa, double va, double xb, double vb) {
        return xa + (level - va) / (vb - va) * (xb - xa);
    };
    for (int i = 0; i < grid; ++i) {
        for (int j = 0; j < grid; ++j) {
            double xa = vw.x0 + i * dx, xb = xa + dx;
            double ya = vw.y0 + j * dy, yb = ya + dy;
            double v00 = vals[i][j], v10 = vals[i + 1][j], v01 = vals[i][j + 1],
                   v11 = vals[i + 1][j + 1];
            std::vector<std::pair<double, double>> pts;
            if ((v00 < level) != (v10 < level)) pts.push_back({interp(xa, v00, xb, v10), ya});
            if ((v10 < level) != (v11 < level)) pts.push_back({xb, interp(ya, v10, yb, v11)});
            if ((v01 < level) != (v11 < level)) pts.push_back({interp(xa, v01, xb, v11), yb});
            if ((v00 < level) != (v01 < level)) pts.push_back({xa, interp(ya, v00, yb, v01)});
            if (pts.size() >= 2)
                svg << "<line x1='" << vw.px(pts[0].first) << "' y1='" << vw.py(pts[0].second)
                    << "' x2='" << vw.px(pts[1].first) << "' y2='" << vw.py(pts[1].second)
                    << "' stroke='" << color << "' stroke-width='1'/>\n";
        }
    }
}

std::string svg_scatter(const Mat& pts, const GaussianMixture* contour_target,
                        const std::string& title) {
    std::ostringstream svg;
    if (pts.cols() != 2) {
        svg << "<svg xmlns='http://www.w3.org/2000/svg' width='400' height='60'>"
            << "<text x='10' y='30'>" << title << " (scatter omitted: d != 2)</text></svg>\n";
        return svg.str();
    }
    View vw{pts.col(0).minCoeff(), pts.col(0).maxCoeff(), pts.col(1).minCoeff(),
            pts.col(1).maxCoeff()};
    if (contour_target) {
        for (const auto& c : contour_target->components()) {
            double spread = 3.0 * std::sqrt(std::max(c.cov(0, 0), c.cov(1, 1)));
            vw.x0 = std::min(vw.x0, c.mean[0] - spread);
            vw.x1 = std::max(vw.x1, c.mean[0] + spread);
            vw.y0 = std::min(vw.y0, c.mean[1] - spread);
            vw.y1 = std::max(vw.y1, c.mean[1] + spread);
        }
    }
    double padx = 0.05 * (vw.x1 - vw.x0 + 1e-9), pady = 0.05 * (vw.y1 - vw.y0 + 1e-9);
    vw.x0 -= padx;
    vw.x1 += padx;
    vw.y0 -= pady;
    vw.y1 += pady;
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << vw.width << "' height='"
        << vw.height << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
    svg << "<text x='" << vw.margin << "' y='20' font-size='14'>" << title << "</text>\n";
    const Eigen::Index max_draw = std::min<Eigen::Index>(pts.rows(), 4000);
    const Eigen::Index stride = std::max<Eigen::Index>(1, pts.rows() / max_draw);
    for (Eigen::Index i = 0; i < pts.rows(); i += stride)
        svg << "<circle cx='" << vw.px(pts(i, 0)) << "' cy='" << vw.py(pts(i, 1))
            << "' r='1.5' fill='steelblue' fill-opacity='0.5'/>\n";
    if (contour_target) {
        double peak = 0.0;
        for (const auto& c : contour_target->components())
            peak = std::max(peak, std::exp(contour_target->log_pdf(c.mean)));
        auto dens = [&](double x, double y) {
            Vec v(2);
            v << x, y;
            return std::exp(contour_target->log_pdf(v));
        };
        for (double frac : {0.08, 0.3, 0.6, 0.9})
            marching_squares(svg, vw, dens, frac * peak, "crimson");
    }
    svg << "</svg>\n";
    return svg.str();
}

std::string svg_heatmap(const Mat& vals, const std::vector<double>& xs,
                        const std::vector<double>& ys, const std::string& title,
                        const std::string& xlabel, const std::string& ylabel) {
    View vw{xs.front(), xs.back(), ys.front(), ys.back()};
    std::ostringstream svg;
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << vw.width << "' height='"
        << vw.height << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
    svg << "<text x='" << vw.margin << "' y='20' font-size='14'>" << title << "</text>\n";
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (Eigen::Index i = 0; i < vals.rows(); ++i)
        for (Eigen::Index j = 0; j < vals.cols(); ++j)
            if (std::isfinite(vals(i, j))) {
                lo = std::min(lo, vals(i, j));
                hi = std::max(hi, vals(i, j));
            }
    for (Eigen::Index i = 0; i < vals.rows(); ++i) {
        for (Eigen::Index j = 0; j < vals.cols(); ++j) {
            if (!std::isfinite(vals(i, j))) continue;
            Rgb c = ramp((vals(i, j) - lo) / std::max(hi - lo, 1e-12));
            double x = vw.px(xs[i]);
            double y = vw.py(ys[j]);
            double w = (vw.width - 2 * vw.margin) / vals.rows() + 1;
            double h = (vw.height - 2 * vw.margin) / vals.cols() + 1;
            svg << "<rect x='" << x - w / 2 << "' y='" << y - h / 2 << "' width='" << w
                << "' height='" << h << "' fill='rgb(" << c.r << "," << c.g << "," << c.b
                << ")'/>\n";
        }
    }
    svg << "<text x='" << vw.width / 2 << "' y='" << vw.height - 8 << "' font-size='12'>" << xlabel
        << "</text>\n";
    svg << "<text x='8' y='" << vw.height / 2 << "' font-size='12' transform='rotate(-90 8 "
        << vw.height / 2 << ")'>" << ylabel << "</text>\n";
    svg << "</svg>\n";
    return svg.str();
}

json moments_json(const Mat& samples) {
    Vec mean = samples.colwise().mean();
    Mat centered = samples.rowwise() - mean.transpose();
    Mat cov = centered.transpose() * centered / (samples.rows() - 1.0);
    json j;
    j["mean"] = std::vector<double>(mean.data(), mean.data() + mean.size());
    json cv = json::array();
    for (Eigen::Index i = 0; i < cov.rows(); ++i) {
        Vec row = cov.row(i).transpose();
        cv.push_back(std::vector<double>(row.data(), row.data() + row.size()));
    }
    j["cov"] = cv;
    return j;
}

}  // namespace

// --- config -----------------------------------------------------------------

json default_config_json() {
    return json{
        {"scheduler", {{"kind", "linear"}}},
        {"mixture",
         {{"weights", {1.0}}, {"means", {{0.0, 0.0}}}, {"covs", {{{1.0, 0.0}, {0.0, 1.0}}}}}},
        {"reward", {{"kind", "zero"}}},
        {"algorithm", {{"name", "sample"}, {"n_samples", 512}, {"n_steps", 96}}},
        {"seed", 0},
        {"out_dir", "out"},
    };
}

Scheduler scheduler_from_json(const json& spec) {
    check_keys(spec, {"kind", "t_min", "t_max"}, "scheduler");
    double t_min = get_or(spec, "t_min", 1e-3);
    double t_max = get_or(spec, "t_max", 1.0 - 1e-3);
    return Scheduler(parse_schedule_kind(get_or<std::string>(spec, "kind", "linear")), t_min, t_max);
}

GaussianMixture mixture_from_json(const json& spec) {
    check_keys(spec, {"weights", "means", "covs"}, "mixture");
    if (!spec.contains("weights") || !spec.contains("means") || !spec.contains("covs"))
        throw ConfigError("mixture: weights, means and covs are all required");
    const auto& ws = spec.at("weights");
    const auto& ms = spec.at("means");
    const auto& cs = spec.at("covs");
    if (ws.size() != ms.size() || ws.size() != cs.size())
        throw ConfigError("mixture: weights/means/covs lengths differ");
    std::vector<MixtureComponent> comps;
    for (std::size_t k = 0; k < ws.size(); ++k)
        comps.push_back({ws[k].get<double>(), vec_from_json(ms[k], "mixture.means"),
                         mat_from_json(cs[k], "mixture.covs")});
    try {
        return GaussianMixture(std::move(comps));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("mixture: ") + e.what());
    }
}

std::shared_ptr<Reward> reward_from_json(const json& spec, Eigen::Index dim) {
    check_keys(spec, {"kind", "c", "A", "b", "offset", "target", "scale"}, "reward");
    std::string kind = get_or<std::string>(spec, "kind", "zero");
    if (kind == "zero") return std::make_shared<ZeroReward>();
    if (kind == "linear") {
        Vec c = spec.contains("c") ? vec_from_json(spec.at("c"), "reward.c") : Vec::Ones(dim);
        if (c.size() != dim) throw ConfigError("reward.c: dimension mismatch");
        return std::make_shared<LinearReward>(std::move(c));
    }
    if (kind == "quadratic") {
        if (!spec.contains("A") || !spec.contains("b"))
            throw ConfigError("reward: quadratic needs A and b");
        return std::make_shared<QuadraticReward>(mat_from_json(spec.at("A"), "reward.A"),
                                                 vec_from_json(spec.at("b"), "reward.b"),
                                                 get_or(spec, "offset", 0.0));
    }
    if (kind == "radial") {
        if (!spec.contains("target")) throw ConfigError("reward: radial needs a target");
        return std::make_shared<RadialReward>(vec_from_json(spec.at("target"), "reward.target"),
                                              get_or(spec, "scale", 1.0));
    }
    throw ConfigError("reward: unknown kind '" + kind + "'");
}

ExperimentConfig parse_experiment_config(const json& root) {
    check_keys(root, {"scheduler", "mixture", "reward", "algorithm", "seed", "out_dir"}, "config");
    ExperimentConfig cfg;
    cfg.echo = root;
    try {
        if (root.contains("scheduler")) cfg.scheduler = scheduler_from_json(root.at("scheduler"));
        if (root.contains("mixture")) cfg.mixture = mixture_from_json(root.at("mixture"));
        if (root.contains("reward"))
            cfg.reward = reward_from_json(root.at("reward"), cfg.mixture.dim());
        else
            cfg.reward = std::make_shared<ZeroReward>();
        cfg.algorithm = root.contains("algorithm") ? root.at("algorithm")
                                                   : default_config_json().at("algorithm");
        if (!cfg.algorithm.contains("name")) throw ConfigError("algorithm: missing name");
        cfg.seed = get_or<std::uint64_t>(root, "seed", 0);
        cfg.out_dir = get_or<std::string>(root, "out_dir", "out");
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    json root;
    try {
        in >> root;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse: ") + e.what());
    }
    return parse_experiment_config(root);
}

// --- output helpers ----------------------------------------------------------

void write_text_atomic(const std::filesystem::path& path, const std::string& content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << content;
    }
    std::filesystem::rename(tmp, path);
}

std::string csv_from_matrix(const Mat& samples) {
    std::ostringstream out;
    for (Eigen::Index j = 0; j < samples.cols(); ++j) out << (j ? "," : "") << "x" << j;
    out << "\n";
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
        for (Eigen::Index j = 0; j < samples.cols(); ++j)
            out << (j ? "," : "") << fmt_double(samples(i, j));
        out << "\n";
    }
    return out.str();
}

// --- algorithm runners -------------------------------------------------------

namespace {

struct RunOutput {
    Mat samples;
    std::vector<json> metrics;
    std::string svg;
    std::vector<std::pair<std::string, std::string>> extra_files;
};

std::unique_ptr<PosteriorDiamondMap> make_diamond_map(const std::string& spec,
                                                      const GlassField& field, int inner_steps) {
    if (spec == "oracle") return std::make_unique<OracleDiamondMap>(field, inner_steps);
    return std::make_unique<DistilledDiamondMap>(load_checkpoint(spec));
}

std::unique_ptr<FlowMap> make_flow_map(const std::string& spec, const MixtureOracle& oracle,
                                       int inner_steps) {
    if (spec == "oracle") return std::make_unique<OracleFlowMap>(oracle, inner_steps);
    auto ckpt = load_checkpoint(spec);
    return std::make_unique<DistilledFlowMap>(ckpt.net_ptr(), ckpt.sched());
}

Vec require_vec(const json& alg, const std::string& key, Eigen::Index dim) {
    if (!alg.contains(key)) throw ConfigError("algorithm: missing '" + key + "'");
    Vec v = vec_from_json(alg.at(key), "algorithm." + key);
    if (v.size() != dim) throw ConfigError("algorithm." + key + ": dimension mismatch");
    return v;
}

RunOutput run_sample(const ExperimentConfig& cfg, const MixtureOracle& oracle) {
    check_keys(cfg.algorithm, {"name", "n_samples", "n_steps"}, "algorithm(sample)");
    const int n = get_or(cfg.algorithm, "n_samples", 512);
    const int steps = get_or(cfg.algorithm, "n_steps", 96);
    OracleFlowMap flow(oracle, steps);
    const auto& sc = oracle.sched();
    RunOutput out;
    out.samples.resize(n, oracle.dim());
    parallel_for(n, [&](std::size_t i) {
        Rng rng(derive_seed(cfg.seed, i));
        out.samples.row(i) = flow.apply(rng.normal_vec(oracle.dim()), sc.t_min(), sc.t_max())
                                  .transpose();
    });
    json row = moments_json(out.samples);
    row["n"] = n;
    Mat ref = cfg.mixture.sample_matrix(n, derive_seed(cfg.seed, 0x7265666bULL));
    row["sliced_w2_vs_data"] = sliced_w2(make_sample_set(out.samples, "ode"),
                                         make_sample_set(ref, "data"), 64, 7);
    out.metrics.push_back(row);
    out.svg = svg_scatter(out.samples, &cfg.mixture, "unguided ODE samples vs data contours");
    return out;
}

RunOutput run_oracle(const ExperimentConfig& cfg, const MixtureOracle& oracle) {
    check_keys(cfg.algorithm, {"name", "points", "t_values"}, "algorithm(oracle)");
    std::vector<double> ts = get_or(cfg.algorithm, "t_values", std::vector<double>{0.25, 0.5, 0.75});
    Mat pts;
    if (cfg.algorithm.contains("points")) {
        pts = mat_from_json(cfg.algorithm.at("points"), "algorithm.points");
    } else {
        pts = cfg.mixture.sample_matrix(8, derive_seed(cfg.seed, 1));
    }
    RunOutput out;
    out.samples = pts;
    for (double t : ts) {
        for (Eigen::Index i = 0; i < pts.rows(); ++i) {
            Vec x = pts.row(i).transpose();
            json row;
            row["t"] = t;
            row["x"] = std::vector<double>(x.data(), x.data() + x.size());
            row["log_marginal"] = oracle.log_marginal(x, t);
            Vec sc = oracle.score(x, t), dn = oracle.denoiser(x, t), ve = oracle.velocity(x, t);
            row["score"] = std::vector<double>(sc.data(), sc.data() + sc.size());
            row["denoiser"] = std::vector<double>(dn.data(), dn.data() + dn.size());
            row["velocity"] = std::vector<double>(ve.data(), ve.data() + ve.size());
            if (cfg.reward->has_quadratic_form()) {
                auto vg = oracle.value_exact(x, t, *cfg.reward);
                row["value"] = vg.value;
                row["value_grad"] =
                    std::vector<double>(vg.gradient.data(), vg.gradient.data() + vg.gradient.size());
            }
            out.metrics.push_back(row);
        }
    }
    out.svg = svg_scatter(pts, &cfg.mixture, "oracle evaluation points");
    return out;
}

RunOutput run_posterior(const ExperimentConfig& cfg, const MixtureOracle& oracle) {
    check_keys(cfg.algorithm, {"name", "x_t", "t", "n_samples", "inner_steps"},
               "algorithm(posterior)");
    Vec x_t = require_vec(cfg.algorithm, "x_t", oracle.dim());
    const double t = get_or(cfg.algorithm, "t", 0.5);
    const int n = get_or(cfg.algorithm, "n_samples", 2000);
    const int steps = get_or(cfg.algorithm, "inner_steps", 96);
    GlassField field(oracle);
    RunOutput out;
    out.samples.resize(n, oracle.dim());
    parallel_for(n, [&](std::size_t i) {
        out.samples.row(i) =
            field.sample_posterior_ode(x_t, t, steps, derive_seed(cfg.seed, i)).transpose();
    });
    GaussianMixture post = oracle.posterior(x_t, t);
    json row = moments_json(out.samples);
    Vec em = post.mean();
    row["exact_mean"] = std::vector<double>(em.data(), em.data() + em.size());
    Mat ref = post.sample_matrix(n, derive_seed(cfg.seed, 0x7265666bULL));
    row["sliced_w2_vs_posterior"] = sliced_w2(make_sample_set(out.samples, "ode"),
                                              make_sample_set(ref, "exact"), 64, 7);
    out.metrics.push_back(row);
    out.svg = svg_scatter(out.samples, &post, "GLASS posterior samples vs exact contours");
    return out;
}

RunOutput run_ddpm_step(const ExperimentConfig& cfg, const MixtureOracle& oracle) {
    check_keys(cfg.algorithm, {"name", "x_t", "t", "t_prime", "n_samples", "inner_steps", "map"},
               "algorithm(ddpm-step)");
    Vec x_t = require_vec(cfg.algorithm, "x_t", oracle.dim());
    const double t = get_or(cfg.algorithm, "t", 0.3);
    const double tp = get_or(cfg.algorithm, "t_prime", 0.5);
    const int n = get_or(cfg.algorithm, "n_samples", 5000);
    const int steps = get_or(cfg.algorithm, "inner_steps", 48);
    GlassField field(oracle);
    auto map = make_diamond_map(get_or<std::string>(cfg.algorithm, "map", "oracle"), field, steps);

    Mat diamond(n, oracle.dim()), naive(n, oracle.dim()), reference(n, oracle.dim());
    parallel_for(n, [&](std::size_t i) {
        diamond.row(i) = diamond_ddpm_step(*map, x_t, t, tp, derive_seed(cfg.seed, 1, i)).transpose();
        naive.row(i) =
            naive_renoise_step(*map, x_t, t, tp, derive_seed(cfg.seed, 2, i)).transpose();
        reference.row(i) =
            ddpm_reference_sample(oracle, x_t, t, tp, derive_seed(cfg.seed, 3, i)).transpose();
    });
    RunOutput out;
    out.samples = diamond;
    out.extra_files.push_back({"samples_naive.csv", csv_from_matrix(naive)});
    out.extra_files.push_back({"samples_reference.csv", csv_from_matrix(reference)});
    for (auto& [label, mat] : std::vector<std::pair<std::string, Mat*>>{
             {"diamond_early_stop", &diamond}, {"naive_renoise", &naive}, {"reference", &reference}}) {
        json row = moments_json(*mat);
        row["kernel"] = label;
        row["t"] = t;
        row["t_prime"] = tp;
        json ks = json::array();
        for (Eigen::Index j = 0; j < oracle.dim(); ++j) {
            auto res = ks_test_1d(make_sample_set(mat->col(j), label),
                                  make_sample_set(reference.col(j), "reference"));
            ks.push_back({{"coord", j}, {"statistic", res.statistic}, {"p", res.p_value}});
        }
        row["ks_vs_reference"] = ks;
        out.metrics.push_back(row);
    }
    out.svg = svg_scatter(diamond, nullptr, "diamond early-stop DDPM samples");
    return out;
}

RunOutput run_value(const ExperimentConfig& cfg, const MixtureOracle& oracle) {
    check_keys(cfg.algorithm,
               {"name", "x_t", "t", "estimator", "particles", "lambda", "seeds", "inner_steps",
                "map", "sensitivity", "n_hutchinson"},
               "algorithm(value)");
    Vec x_t = require_vec(cfg.algorithm, "x_t", oracle.dim());
    const double t = get_or(cfg.algorithm, "t", 0.5);
    const std::string estimator = get_or<std::string>(cfg.algorithm, "estimator", "posterior");
    const int particles = get_or(cfg.algorithm, "particles", 1024);
    const double lambda = get_or(cfg.algorithm, "lambda", 20.0);
    const int n_seeds = get_or(cfg.algorithm, "seeds", 4);
    const int steps = get_or(cfg.algorithm, "inner_steps", 48);
    const std::string map_spec = get_or<std::string>(cfg.algorithm, "map", "oracle");
    auto sens = parse_sensitivity_mode(
        get_or<std::string>(cfg.algorithm, "sensitivity", "tangent-ode"));
    GlassField field(oracle);
    RunOutput out;
    out.samples = x_t.transpose();

    auto emit = [&](const ValueEstimate& est, std::uint64_t seed) {
        json row;
        row["estimator"] = estimator;
        row["K"] = est.n_particles;
        row["seed"] = seed;
        if (est.value) row["value"] = *est.value;
        if (est.gradient)
            row["grad"] = std::vector<double>(est.gradient->data(),
                                              est.gradient->data() + est.gradient->size());
        row["ess"] = est.ess;
        if (est.std_error) row["stderr"] = *est.std_error;
        out.metrics.push_back(row);
    };

    if (estimator == "exact") {
        auto vg = oracle.value_exact(x_t, t, *cfg.reward);
        json row;
        row["estimator"] = estimator;
        row["K"] = 0;
        row["value"] = vg.value;
        row["grad"] =
            std::vector<double>(vg.gradient.data(), vg.gradient.data() + vg.gradient.size());
        row["ess"] = 1.0;
        out.metrics.push_back(row);
    } else if (estimator == "denoiser") {
        emit(denoiser_value(oracle, x_t, t, *cfg.reward), cfg.seed);
    } else if (estimator == "posterior") {
        auto map = make_diamond_map(map_spec, field, steps);
        for (int s = 0; s < n_seeds; ++s) {
            std::uint64_t seed = derive_seed(cfg.seed, s);
            auto est = posterior_value(*map, x_t, t, *cfg.reward, particles, seed);
            auto grad = posterior_value_gradient(*map, x_t, t, *cfg.reward, particles, seed, sens);
            est.gradient = grad.gradient;
            est.gradient_std_error = grad.gradient_std_error;
            emit(est, seed);
        }
    } else if (estimator == "weighted") {
        auto flow = make_flow_map(map_spec, oracle, steps);
        ScoreFn score = [&](const Vec& y, double tt) { return oracle.score(y, tt); };
        VelocityFn vel = [&](const Vec& y, double tt) { return oracle.velocity(y, tt); };
        JacobianFn jac = [&](const Vec& y, double tt) { return oracle.velocity_jacobian(y, tt); };
        const int n_hutch = get_or(cfg.algorithm, "n_hutchinson", 16);
        for (int s = 0; s < n_seeds; ++s) {
            std::uint64_t seed = derive_seed(cfg.seed, s);
            auto est = weighted_diamond_value(*flow, score, vel, x_t, t, lambda, *cfg.reward,
                                              particles, n_hutch, seed, jac);
            auto grad = weighted_diamond_gradient(*flow, score, x_t, t, lambda, *cfg.reward,
                                                  particles, seed, sens);
            est.gradient = grad.gradient;
            est.gradient_std_error = grad.gradient_std_error;
            emit(est, seed);
        }
    } else {
        throw ConfigError("value: unknown estimator '" + estimator + "'");
    }
    out.svg = svg_scatter(out.samples, &cfg.mixture, "value evaluation point");
    return out;
}

GuidanceConfig guidance_from_json(const json& alg) {
    GuidanceConfig g;
    g.n_steps = get_or(alg, "n_steps", g.n_steps);
    g.particles = get_or(alg, "particles", g.particles);
    g.lambda = get_or(alg, "lambda", g.lambda);
    g.t_lo = get_or(alg, "t_lo", g.t_lo);
    g.t_hi = get_or(alg, "t_hi", g.t_hi);
    g.reward_scale = get_or(alg, "reward_scale", g.reward_scale);
    std::string mode = get_or<std::string>(alg, "gradient_mode", "estimator");
    if (mode == "exact")
        g.gradient_mode = GradientMode::Exact;
    else if (mode == "estimator")
        g.gradient_mode = GradientMode::Estimator;
    else
        throw ConfigError("guide: unknown gradient_mode '" + mode + "'");
    g.sensitivity =
        parse_sensitivity_mode(get_or<std::string>(alg, "sensitivity", "tangent-ode"));
    return g;
}

RunOutput run_guide(const ExperimentConfig& cfg, const MixtureOracle& oracle) {
    check_keys(cfg.algorithm,
               {"name", "mode", "n_samples", "n_steps", "particles", "lambda", "t_lo", "t_hi",
                "reward_scale", "gradient_mode", "sensitivity", "inner_steps", "map"},
               "algorithm(guide)");
    const std::string mode = get_or<std::string>(cfg.algorithm, "mode", "posterior");
    const int n = get_or(cfg.algorithm, "n_samples", 256);
    const int steps = get_or(cfg.algorithm, "inner_steps", 32);
    const std::string map_spec = get_or<std::string>(cfg.algorithm, "map", "oracle");
    GuidanceConfig g = guidance_from_json(cfg.algorithm);
    GlassField field(oracle);

    RunOutput out;
    out.samples.resize(n, oracle.dim());
    std::vector<std::vector<GuideStepRecord>> traces(n);
    if (mode == "posterior") {
        auto map = make_diamond_map(map_spec, field, steps);
        parallel_for(n, [&](std::size_t i) {
            out.samples.row(i) = guide_posterior(oracle, map.get(), *cfg.reward, g,
                                                 derive_seed(cfg.seed, i), &traces[i])
                                     .transpose();
        });
    } else if (mode == "weighted") {
        auto flow = make_flow_map(map_spec, oracle, steps);
        parallel_for(n, [&](std::size_t i) {
            out.samples.row(i) = guide_weighted(oracle, *flow, *cfg.reward, g,
                                                derive_seed(cfg.seed, i), &traces[i])
                                     .transpose();
        });
    } else {
        throw ConfigError("guide: unknown mode '" + mode + "'");
    }

    for (std::size_t k = 0; k < traces[0].size(); ++k) {
        double mr = 0.0, me = 0.0;
        for (int i = 0; i < n; ++i) {
            mr += traces[i][k].proxy_reward;
            me += traces[i][k].ess;
        }
        out.metrics.push_back({{"t", traces[0][k].t},
                               {"mean_reward", mr / n},
                               {"mean_ess", me / n}});
    }
    double terminal = 0.0;
    for (Eigen::Index i = 0; i < out.samples.rows(); ++i)
        terminal += cfg.reward->eval(out.samples.row(i).transpose());
    out.metrics.push_back({{"terminal_mean_reward", terminal / n}, {"n", n}, {"mode", mode}});

    const GaussianMixture* contours = &cfg.mixture;
    GaussianMixture tilted = cfg.mixture;
    if (auto* lin = dynamic_cast<const LinearReward*>(cfg.reward.get())) {
        tilted = cfg.mixture.tilt_linear(lin->direction());
        contours = &tilted;
        Mat ref = tilted.sample_matrix(out.samples.rows(), derive_seed(cfg.seed, 0x7265666bULL));
        out.metrics.push_back(
            {{"sliced_w2_vs_tilted", sliced_w2(make_sample_set(out.samples, "guided"),
                                               make_sample_set(ref, "tilted"), 64, 7)}});
    }
    out.svg = svg_scatter(out.samples, contours, "guided terminals vs target contours");
    return out;
}

RunOutput run_smc_like(const ExperimentConfig& cfg, const MixtureOracle& oracle, bool is_search) {
    check_keys(cfg.algorithm,
               {"name", "particles", "n_steps", "inner_particles", "inner_steps", "resample_mode",
                "resample_scheme", "map"},
               "algorithm(smc/search)");
    const int m = get_or(cfg.algorithm, "particles", 256);
    const int n_steps = get_or(cfg.algorithm, "n_steps", 16);
    const int k = get_or(cfg.algorithm, "inner_particles", 16);
    const int steps = get_or(cfg.algorithm, "inner_steps", 32);
    GlassField field(oracle);
    auto map = make_diamond_map(get_or<std::string>(cfg.algorithm, "map", "oracle"), field, steps);
    RunOutput out;
    if (is_search) {
        Vec best = search(oracle, *map, *cfg.reward, m, n_steps, k, cfg.seed);
        out.samples = best.transpose();
        out.metrics.push_back({{"reward", cfg.reward->eval(best)}, {"particles", m}});
    } else {
        SmcOptions opts;
        std::string rmode = get_or<std::string>(cfg.algorithm, "resample_mode", "per-step-reset");
        if (rmode == "per-step-reset")
            opts.mode = ResampleMode::PerStepReset;
        else if (rmode == "literal-carry")
            opts.mode = ResampleMode::LiteralCarry;
        else
            throw ConfigError("smc: unknown resample_mode '" + rmode + "'");
        std::string rscheme = get_or<std::string>(cfg.algorithm, "resample_scheme", "multinomial");
        if (rscheme == "multinomial")
            opts.scheme = ResampleScheme::Multinomial;
        else if (rscheme == "systematic")
            opts.scheme = ResampleScheme::Systematic;
        else
            throw ConfigError("smc: unknown resample_scheme '" + rscheme + "'");
        auto ens = smc(oracle, *map, *cfg.reward, m, n_steps, k, opts, cfg.seed);
        out.samples = ens.states;
        for (const auto& rec : ens.history)
            out.metrics.push_back({{"t", rec.t},
                                   {"ess", rec.ess},
                                   {"resampled", rec.resampled},
                                   {"degenerate", rec.degenerate},
                                   {"mean_value", rec.mean_value}});
    }
    const GaussianMixture* contours = &cfg.mixture;
    GaussianMixture tilted = cfg.mixture;
    if (auto* lin = dynamic_cast<const LinearReward*>(cfg.reward.get())) {
        tilted = cfg.mixture.tilt_linear(lin->direction());
        contours = &tilted;
    }
    out.svg = svg_scatter(out.samples, contours, is_search ? "search result" : "smc terminals");
    return out;
}

RunOutput run_bon(const ExperimentConfig& cfg, const MixtureOracle& oracle) {
    check_keys(cfg.algorithm,
               {"name", "budgets", "repeats", "particles", "inner_steps", "map", "t_lo", "t_hi"},
               "algorithm(bon)");
    std::vector<int> budgets = get_or(cfg.algorithm, "budgets", std::vector<int>{8, 16, 32, 64});
    const int repeats = get_or(cfg.algorithm, "repeats", 20);
    const int k = get_or(cfg.algorithm, "particles", 4);
    const int steps = get_or(cfg.algorithm, "inner_steps", 32);
    GlassField field(oracle);
    auto map = make_diamond_map(get_or<std::string>(cfg.algorithm, "map", "oracle"), field, steps);
    const auto& sc = oracle.sched();

    SamplerFn one_step = [&](std::uint64_t seed) {
        Rng rng(seed);
        Vec x0 = oracle.marginal_at(sc.t_min()).sample(rng);
        return map->apply(rng.normal_vec(oracle.dim()), 0.0, 1.0, x0, sc.t_min());
    };

    RunOutput out;
    Mat winners(repeats, oracle.dim());
    for (int budget : budgets) {
        std::vector<double> bon_r(repeats), guided_r(repeats);
        parallel_for(repeats, [&](std::size_t rep) {
            Vec w = best_of_n(one_step, *cfg.reward, budget, derive_seed(cfg.seed, budget, rep));
            bon_r[rep] = cfg.reward->eval(w);
            if (budget == budgets.back()) winners.row(rep) = w.transpose();
        });
        json row;
        row["budget"] = budget;
        double mb = 0.0;
        for (double v : bon_r) mb += v;
        row["bon_mean_reward"] = mb / repeats;
        GuidanceConfig g;
        g.particles = k;
        g.n_steps = std::max(1, budget / k);
        g.t_lo = get_or(cfg.algorithm, "t_lo", 0.0);
        g.t_hi = get_or(cfg.algorithm, "t_hi", 1.0);
        parallel_for(repeats, [&](std::size_t rep) {
            Vec w = guide_posterior(oracle, map.get(), *cfg.reward, g,
                                    derive_seed(cfg.seed, 1000 + budget, rep));
            guided_r[rep] = cfg.reward->eval(w);
        });
        double mg = 0.0;
        for (double v : guided_r) mg += v;
        row["guided_mean_reward"] = mg / repeats;
        row["guided_steps"] = g.n_steps;
        row["guided_particles"] = k;
        out.metrics.push_back(row);
    }
    out.samples = winners;
    out.svg = svg_scatter(winners, &cfg.mixture, "best-of-n winners (largest budget)");
    return out;
}

RunOutput run_distill(const ExperimentConfig& cfg, const MixtureOracle& oracle) {
    check_keys(cfg.algorithm,
               {"name", "iters", "batch", "lr", "teacher_steps", "hidden", "n_freqs", "checkpoint",
                "eval_samples"},
               "algorithm(distill)");
    GlassField field(oracle);
    TrainConfig tc;
    tc.net.dim = oracle.dim();
    tc.n_iters = get_or(cfg.algorithm, "iters", 4000);
    tc.batch = get_or(cfg.algorithm, "batch", 256);
    tc.lr = get_or(cfg.algorithm, "lr", 1e-3);
    tc.teacher_steps = get_or(cfg.algorithm, "teacher_steps", 16);
    tc.net.hidden = get_or(cfg.algorithm, "hidden", std::vector<int>{128, 128, 128});
    tc.net.n_freqs = get_or(cfg.algorithm, "n_freqs", 4);
    tc.seed = cfg.seed;
    auto result = rollout_regression_train(field, tc);
    DistilledDiamondMap trained(result.net, oracle.sched());
    std::string ckpt = get_or<std::string>(cfg.algorithm, "checkpoint", "map.bin");
    save_checkpoint(trained, (cfg.out_dir / ckpt).string());

    RunOutput out;
    for (std::size_t i = 0; i < result.loss_history.size(); i += 100)
        out.metrics.push_back({{"iter", i}, {"loss", result.loss_history[i]}});
    DistillBatch eval = sample_distill_batch(field, 256, derive_seed(cfg.seed, 0xe7a1ULL));
    out.metrics.push_back({{"lagrangian_loss", lagrangian_loss_eval(trained, field, eval)},
                           {"eulerian_loss", eulerian_loss_eval(trained, field, eval)},
                           {"final_train_loss", result.loss_history.back()},
                           {"checkpoint", ckpt}});

    // one-step posterior samples at a held-out conditioning point
    const int n_eval = get_or(cfg.algorithm, "eval_samples", 2000);
    Rng rng(derive_seed(cfg.seed, 0xe7a2ULL));
    double t_eval = 0.5;
    Vec x_t = oracle.marginal_at(t_eval).sample(rng);
    out.samples.resize(n_eval, oracle.dim());
    parallel_for(n_eval, [&](std::size_t i) {
        Rng r2(derive_seed(cfg.seed, 0xe7a3ULL, i));
        out.samples.row(i) =
            trained.apply(r2.normal_vec(oracle.dim()), 0.0, 1.0, x_t, t_eval).transpose();
    });
    GaussianMixture post = oracle.posterior(x_t, t_eval);
    Mat ref = post.sample_matrix(n_eval, derive_seed(cfg.seed, 0xe7a4ULL));
    out.metrics.push_back(
        {{"one_step_sliced_w2", sliced_w2(make_sample_set(out.samples, "student"),
                                          make_sample_set(ref, "posterior"), 64, 7)},
         {"t", t_eval}});
    out.svg = svg_scatter(out.samples, &post, "one-step student samples vs exact posterior");
    return out;
}

RunOutput run_report(const ExperimentConfig& cfg, const MixtureOracle& oracle) {
    check_keys(cfg.algorithm, {"name", "kind", "grid"}, "algorithm(report)");
    const std::string kind = get_or<std::string>(cfg.algorithm, "kind", "fig-rstar");
    if (kind != "fig-rstar" && kind != "fig2")
        throw ConfigError("report: unknown kind '" + kind + "'");
    const int n = get_or(cfg.algorithm, "grid", 64);
    const auto& sc = oracle.sched();
    std::vector<double> ts(n), tps(n);
    for (int i = 0; i < n; ++i) {
        double u = static_cast<double>(i) / (n - 1);
        ts[i] = sc.t_min() + u * (sc.t_max() - sc.t_min());
        tps[i] = ts[i];
    }
    Mat surface = r_star_surface(sc, ts, tps);
    RunOutput out;
    out.samples.resize(n * n, 3);
    Eigen::Index row = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) out.samples.row(row++) << ts[i], tps[j], surface(i, j);
    out.metrics.push_back({{"grid", n},
                           {"kind", kind},
                           {"r_star_at_tprime_1", sc.r_star(0.5, 1.0)},
                           {"schedule", schedule_kind_name(sc.kind())}});
    out.svg = svg_heatmap(surface, ts, tps, "r* over (t, t')", "t", "t'");
    return out;
}

}  // namespace

std::filesystem::path run_experiment(const ExperimentConfig& cfg) {
    std::filesystem::create_directories(cfg.out_dir);
    MixtureOracle oracle(cfg.mixture, cfg.scheduler);
    const std::string name = cfg.algorithm.at("name").get<std::string>();

    RunOutput out;
    if (name == "sample")
        out = run_sample(cfg, oracle);
    else if (name == "oracle")
        out = run_oracle(cfg, oracle);
    else if (name == "posterior")
        out = run_posterior(cfg, oracle);
    else if (name == "ddpm-step")
        out = run_ddpm_step(cfg, oracle);
    else if (name == "value")
        out = run_value(cfg, oracle);
    else if (name == "guide")
        out = run_guide(cfg, oracle);
    else if (name == "smc")
        out = run_smc_like(cfg, oracle, false);
    else if (name == "search")
        out = run_smc_like(cfg, oracle, true);
    else if (name == "bon")
        out = run_bon(cfg, oracle);
    else if (name == "distill")
        out = run_distill(cfg, oracle);
    else if (name == "report")
        out = run_report(cfg, oracle);
    else
        throw ConfigError("algorithm: unknown name '" + name + "'");

    write_text_atomic(cfg.out_dir / "samples.csv", csv_from_matrix(out.samples));
    std::ostringstream metrics;
    for (const auto& row : out.metrics) metrics << row.dump() << "\n";
    write_text_atomic(cfg.out_dir / "metrics.jsonl", metrics.str());
    write_text_atomic(cfg.out_dir / "config-echo.json", cfg.echo.dump(2) + "\n");
    write_text_atomic(cfg.out_dir / "report.svg", out.svg);
    for (const auto& [fname, content] : out.extra_files)
        write_text_atomic(cfg.out_dir / fname, content);
    return cfg.out_dir;
}

}  // namespace diamond
