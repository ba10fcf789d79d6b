#include "diamond/distill.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "diamond/parallel.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace diamond {

namespace {
constexpr char kMagic[8] = {'D', 'M', 'N', 'D', 'M', 'A', 'P', '\0'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

DiamondNet::DiamondNet(NetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    const Eigen::Index embed_dim = 1 + 2 * cfg_.n_freqs;
    input_dim_ = 2 * cfg_.dim + 3 * embed_dim;

    Eigen::Index offset = 0;
    Eigen::Index in = input_dim_;
    for (std::size_t l = 0; l <= cfg_.hidden.size(); ++l) {
        Eigen::Index out = l < cfg_.hidden.size() ? cfg_.hidden[l] : cfg_.dim;
        layers_.push_back({offset, offset + in * out, in, out});
        offset += in * out + out;
        in = out;
    }
    params_ = Vec::Zero(offset);
    Rng rng(seed);
    for (const auto& layer : layers_) {
        double scale = 1.0 / std::sqrt(static_cast<double>(layer.in));
        if (&layer == &layers_.back()) scale *= 0.1;
        for (Eigen::Index i = 0; i < layer.in * layer.out; ++i)
            params_[layer.w_off + i] = scale * rng.normal();
    }
}

DiamondNet::DiamondNet(NetConfig cfg, Vec params) : DiamondNet(cfg, std::uint64_t{0}) {
    set_params(std::move(params));
}

void DiamondNet::set_params(Vec p) {
    if (p.size() != params_.size()) throw std::invalid_argument("DiamondNet: parameter size mismatch");
    params_ = std::move(p);
}

Vec DiamondNet::embed(double tau) const {
    Vec e(1 + 2 * cfg_.n_freqs);
    e[0] = tau;
    double freq = std::numbers::pi;
    for (int j = 0; j < cfg_.n_freqs; ++j) {
        e[1 + 2 * j] = std::sin(freq * tau);
        e[2 + 2 * j] = std::cos(freq * tau);
        freq *= 2.0;
    }
    return e;
}

Vec DiamondNet::embed_dot(double tau) const {
    Vec e(1 + 2 * cfg_.n_freqs);
    e[0] = 1.0;
    double freq = std::numbers::pi;
    for (int j = 0; j < cfg_.n_freqs; ++j) {
        e[1 + 2 * j] = freq * std::cos(freq * tau);
        e[2 + 2 * j] = -freq * std::sin(freq * tau);
        freq *= 2.0;
    }
    return e;
}

Vec DiamondNet::features(const Vec& x_bar, const Vec& x_t, double s, double r, double t) const {
    Vec f(input_dim_);
    const Eigen::Index d = cfg_.dim;
    const Eigen::Index e = 1 + 2 * cfg_.n_freqs;
    f.segment(0, d) = x_bar;
    f.segment(d, d) = x_t;
    f.segment(2 * d, e) = embed(s);
    f.segment(2 * d + e, e) = embed(r - s);
    f.segment(2 * d + 2 * e, e) = embed(t);
    return f;
}

Vec DiamondNet::mlp_forward(const Vec& input) const {
    Vec a = input;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& ly = layers_[l];
        Eigen::Map<const Mat> w(params_.data() + ly.w_off, ly.out, ly.in);
        Eigen::Map<const Vec> b(params_.data() + ly.b_off, ly.out);
        a = (w * a + b).eval();
        if (l + 1 < layers_.size()) a = a.array().tanh();
    }
    return a;
}

Vec DiamondNet::mlp_jvp(const Vec& input, const Vec& din) const {
    Vec a = input, da = din;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& ly = layers_[l];
        Eigen::Map<const Mat> w(params_.data() + ly.w_off, ly.out, ly.in);
        Eigen::Map<const Vec> b(params_.data() + ly.b_off, ly.out);
        Vec z = w * a + b;
        da = (w * da).eval();
        if (l + 1 < layers_.size()) {
            a = z.array().tanh();
            da = da.cwiseProduct(Vec::Ones(ly.out) - a.cwiseProduct(a));
        } else {
            a = std::move(z);
        }
    }
    return da;
}

Mat DiamondNet::mlp_forward_batch(const Mat& inputs, std::vector<Mat>* cache) const {
    if (cache) cache->clear();
    Mat a = inputs;  // rows are samples
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& ly = layers_[l];
        Eigen::Map<const Mat> w(params_.data() + ly.w_off, ly.out, ly.in);
        Eigen::Map<const Vec> b(params_.data() + ly.b_off, ly.out);
        a = ((a * w.transpose()).rowwise() + b.transpose()).eval();
        if (l + 1 < layers_.size()) {
            a = a.array().tanh();
            if (cache) cache->push_back(a);
        }
    }
    return a;
}

Vec DiamondNet::mlp_backward_batch(const Mat& inputs, const std::vector<Mat>& cache,
                                   const Mat& dout) const {
    Vec grad = Vec::Zero(params_.size());
    Mat delta = dout;
    for (std::size_t li = layers_.size(); li-- > 0;) {
        const auto& ly = layers_[li];
        const Mat& a_in = li == 0 ? inputs : cache[li - 1];
        Eigen::Map<Mat> dw(grad.data() + ly.w_off, ly.out, ly.in);
        Eigen::Map<Vec> db(grad.data() + ly.b_off, ly.out);
        dw = delta.transpose() * a_in;
        db = delta.colwise().sum().transpose();
        if (li > 0) {
            Eigen::Map<const Mat> w(params_.data() + ly.w_off, ly.out, ly.in);
            delta = (delta * w).eval();
            delta = delta.cwiseProduct(Mat::Ones(cache[li - 1].rows(), cache[li - 1].cols()) -
                                       cache[li - 1].cwiseProduct(cache[li - 1]));
        }
    }
    return grad;
}

Vec DiamondNet::avg_velocity(const Vec& x_bar, const Vec& x_t, double s, double r, double t) const {
    return mlp_forward(features(x_bar, x_t, s, r, t));
}

Vec DiamondNet::map(const Vec& x_bar, double s, double r, const Vec& x_t, double t) const {
    if (r == s) return x_bar;  // identity by construction, kept exact
    return x_bar + (r - s) * avg_velocity(x_bar, x_t, s, r, t);
}

Vec DiamondNet::map_dr(const Vec& x_bar, double s, double r, const Vec& x_t, double t) const {
    Vec f = features(x_bar, x_t, s, r, t);
    Vec df = Vec::Zero(input_dim_);
    const Eigen::Index e = 1 + 2 * cfg_.n_freqs;
    df.segment(2 * cfg_.dim + e, e) = embed_dot(r - s);
    return mlp_forward(f) + (r - s) * mlp_jvp(f, df);
}

Vec DiamondNet::map_ds(const Vec& x_bar, double s, double r, const Vec& x_t, double t) const {
    Vec f = features(x_bar, x_t, s, r, t);
    Vec df = Vec::Zero(input_dim_);
    const Eigen::Index e = 1 + 2 * cfg_.n_freqs;
    df.segment(2 * cfg_.dim, e) = embed_dot(s);
    df.segment(2 * cfg_.dim + e, e) = -embed_dot(r - s);
    return -mlp_forward(f) + (r - s) * mlp_jvp(f, df);
}

Vec DiamondNet::map_jvp_xbar(const Vec& x_bar, double s, double r, const Vec& x_t, double t,
                             const Vec& tangent) const {
    Vec f = features(x_bar, x_t, s, r, t);
    Vec df = Vec::Zero(input_dim_);
    df.segment(0, cfg_.dim) = tangent;
    return tangent + (r - s) * mlp_jvp(f, df);
}

Vec DiamondNet::map_jvp_xt(const Vec& x_bar, double s, double r, const Vec& x_t, double t,
                           const Vec& tangent) const {
    Vec f = features(x_bar, x_t, s, r, t);
    Vec df = Vec::Zero(input_dim_);
    df.segment(cfg_.dim, cfg_.dim) = tangent;
    return (r - s) * mlp_jvp(f, df);
}

// ---------------------------------------------------------------------------

DistilledDiamondMap::DistilledDiamondMap(std::shared_ptr<const DiamondNet> net, Scheduler sched)
    : net_(std::move(net)), sched_(sched) {}

Vec DistilledDiamondMap::apply(const Vec& x_bar, double s, double r, const Vec& x_t,
                               double t) const {
    if (r < s) throw std::domain_error("DistilledDiamondMap: requires s <= r");
    return net_->map(x_bar, s, r, x_t, t);
}

Mat DistilledDiamondMap::cond_jacobian(const Vec& x_bar, double s, double r, const Vec& x_t,
                                       double t) const {
    const Eigen::Index d = dim();
    Mat jac(d, d);
    for (Eigen::Index j = 0; j < d; ++j)
        jac.col(j) = net_->map_jvp_xt(x_bar, s, r, x_t, t, Vec::Unit(d, j));
    return jac;
}

Vec DistilledDiamondMap::dr_apply(const Vec& x_bar, double s, double r, const Vec& x_t,
                                  double t) const {
    return net_->map_dr(x_bar, s, r, x_t, t);
}

Vec DistilledDiamondMap::ds_apply(const Vec& x_bar, double s, double r, const Vec& x_t,
                                  double t) const {
    return net_->map_ds(x_bar, s, r, x_t, t);
}

Vec DistilledDiamondMap::xbar_jvp(const Vec& x_bar, double s, double r, const Vec& x_t, double t,
                                  const Vec& tangent) const {
    return net_->map_jvp_xbar(x_bar, s, r, x_t, t, tangent);
}

DistilledFlowMap::DistilledFlowMap(std::shared_ptr<const DiamondNet> net, Scheduler sched)
    : net_(std::move(net)), sched_(sched), zero_cond_(Vec::Zero(net_->config().dim)) {}

Vec DistilledFlowMap::apply(const Vec& x, double t, double r) const {
    if (r < t) throw std::domain_error("DistilledFlowMap: requires t <= r");
    return net_->map(x, t, r, zero_cond_, sched_.t_min());
}

Mat DistilledFlowMap::input_jacobian(const Vec& x, double t, double r) const {
    const Eigen::Index d = dim();
    Mat jac(d, d);
    for (Eigen::Index j = 0; j < d; ++j)
        jac.col(j) = net_->map_jvp_xbar(x, t, r, zero_cond_, sched_.t_min(), Vec::Unit(d, j));
    return jac;
}

// ---------------------------------------------------------------------------

DistillBatch sample_distill_batch(const GlassField& teacher, int n, std::uint64_t seed) {
    const auto& sc = teacher.sched();
    const Eigen::Index d = teacher.dim();
    DistillBatch batch;
    batch.x_bar.resize(n);
    batch.x_t.resize(n);
    batch.s.resize(n);
    batch.r.resize(n);
    batch.t.resize(n);
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        Vec z = teacher.oracle().data().sample(rng);
        double u1 = rng.uniform(sc.t_min(), sc.t_max());
        double u2 = rng.uniform(sc.t_min(), sc.t_max());
        batch.s[i] = std::min(u1, u2);
        batch.r[i] = std::max(u1, u2);
        batch.t[i] = rng.uniform(sc.t_min(), sc.t_max());
        batch.x_bar[i] = sc.alpha(batch.s[i]) * z + sc.sigma(batch.s[i]) * rng.normal_vec(d);
        batch.x_t[i] = sc.alpha(batch.t[i]) * z + sc.sigma(batch.t[i]) * rng.normal_vec(d);
    }
    return batch;
}

TrainResult rollout_regression_train(const GlassField& teacher, const TrainConfig& cfg) {
    if (cfg.n_iters < 1 || cfg.batch < 1)
        throw std::invalid_argument("rollout_regression_train: bad iteration/batch counts");
    auto net = std::make_shared<DiamondNet>(cfg.net, derive_seed(cfg.seed, 0x696e6974ULL));
    const Eigen::Index d = cfg.net.dim;
    const Eigen::Index n_params = net->n_params();

    Vec m = Vec::Zero(n_params), v = Vec::Zero(n_params);
    const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    const double lr_min = cfg.lr * cfg.lr_min_frac;

    std::vector<double> history;
    history.reserve(cfg.n_iters);
    double initial_loss = 0.0;
    double smoothed = 0.0;

    Mat inputs(cfg.batch, net->input_dim());
    Mat targets(cfg.batch, d);
    Mat xbars(cfg.batch, d);
    Vec spans(cfg.batch);

    for (int iter = 0; iter < cfg.n_iters; ++iter) {
        DistillBatch batch = sample_distill_batch(teacher, cfg.batch, derive_seed(cfg.seed, iter));
        parallel_for(cfg.batch, [&](std::size_t i) {
            targets.row(i) = teacher
                                 .integrate(batch.x_bar[i], batch.s[i], batch.r[i], batch.x_t[i],
                                            batch.t[i], cfg.teacher_steps)
                                 .transpose();
            inputs.row(i) =
                net->features(batch.x_bar[i], batch.x_t[i], batch.s[i], batch.r[i], batch.t[i])
                    .transpose();
            xbars.row(i) = batch.x_bar[i].transpose();
            spans[i] = batch.r[i] - batch.s[i];
        });

        std::vector<Mat> cache;
        Mat vel = net->mlp_forward_batch(inputs, &cache);
        Mat residual = (xbars + spans.asDiagonal() * vel - targets).eval();
        double loss = residual.rowwise().squaredNorm().mean();
        Mat dout = (2.0 / cfg.batch) * (spans.asDiagonal() * residual);
        Vec grad = net->mlp_backward_batch(inputs, cache, dout);

        double lr = lr_min + 0.5 * (cfg.lr - lr_min) *
                                 (1.0 + std::cos(std::numbers::pi * iter / cfg.n_iters));
        m = beta1 * m + (1.0 - beta1) * grad;
        v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
        double bc1 = 1.0 - std::pow(beta1, iter + 1);
        double bc2 = 1.0 - std::pow(beta2, iter + 1);
        Vec step = (m / bc1).cwiseQuotient(((v / bc2).cwiseSqrt().array() + adam_eps).matrix());
        net->set_params(net->params() - lr * step);

        history.push_back(loss);
        smoothed = iter == 0 ? loss : 0.98 * smoothed + 0.02 * loss;
        if (iter == 0) initial_loss = loss;
        if (iter > 100 && smoothed > 10.0 * initial_loss)
            throw std::runtime_error("rollout_regression_train: loss diverged; lower the step size");
    }
    return {std::move(net), std::move(history)};
}

double lagrangian_loss_eval(const PosteriorDiamondMap& student, const GlassField& teacher,
                            const DistillBatch& batch) {
    const std::size_t n = batch.size();
    std::vector<double> sq(n);
    parallel_for(n, [&](std::size_t i) {
        Vec x = student.apply(batch.x_bar[i], batch.s[i], batch.r[i], batch.x_t[i], batch.t[i]);
        Vec dr = student.dr_apply(batch.x_bar[i], batch.s[i], batch.r[i], batch.x_t[i], batch.t[i]);
        sq[i] = (dr - teacher.velocity(x, batch.x_t[i], batch.r[i], batch.t[i])).squaredNorm();
    });
    double acc = 0.0;
    for (double x : sq) acc += x;
    return acc / static_cast<double>(n);
}

double eulerian_loss_eval(const PosteriorDiamondMap& student, const GlassField& teacher,
                          const DistillBatch& batch, int /*n_jvp_probes*/) {
    const std::size_t n = batch.size();
    std::vector<double> sq(n);
    parallel_for(n, [&](std::size_t i) {
        Vec v_target = teacher.velocity(batch.x_bar[i], batch.x_t[i], batch.s[i], batch.t[i]);
        Vec ds = student.ds_apply(batch.x_bar[i], batch.s[i], batch.r[i], batch.x_t[i], batch.t[i]);
        Vec jvp = student.xbar_jvp(batch.x_bar[i], batch.s[i], batch.r[i], batch.x_t[i], batch.t[i],
                                   v_target);
        sq[i] = (ds + jvp).squaredNorm();
    });
    double acc = 0.0;
    for (double x : sq) acc += x;
    return acc / static_cast<double>(n);
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
void write_pod(std::ofstream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T value;
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return value;
}

}  // namespace

void save_checkpoint(const DistilledDiamondMap& map, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path);
    out.write(kMagic, sizeof(kMagic));
    write_pod(out, kVersion);
    write_pod(out, std::uint32_t{0});  // reserved; prefix is 16 bytes total
    const auto& net = map.net();
    const auto& cfg = net.config();
    write_pod(out, static_cast<std::uint32_t>(map.sched().kind()));
    write_pod(out, map.sched().t_min());
    write_pod(out, map.sched().t_max());
    write_pod(out, static_cast<std::uint32_t>(cfg.dim));
    write_pod(out, static_cast<std::uint32_t>(cfg.n_freqs));
    write_pod(out, static_cast<std::uint32_t>(cfg.hidden.size()));
    for (int w : cfg.hidden) write_pod(out, static_cast<std::uint32_t>(w));
    write_pod(out, static_cast<std::uint64_t>(net.n_params()));
    out.write(reinterpret_cast<const char*>(net.params().data()),
              static_cast<std::streamsize>(net.n_params() * sizeof(double)));
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

DistilledDiamondMap load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[sizeof(kMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    if (read_pod<std::uint32_t>(in) != kVersion)
        throw std::runtime_error("checkpoint: unsupported version in " + path);
    read_pod<std::uint32_t>(in);  // reserved

    auto kind = static_cast<ScheduleKind>(read_pod<std::uint32_t>(in));
    double t_min = read_pod<double>(in);
    double t_max = read_pod<double>(in);
    NetConfig cfg;
    cfg.dim = read_pod<std::uint32_t>(in);
    cfg.n_freqs = static_cast<int>(read_pod<std::uint32_t>(in));
    std::uint32_t n_hidden = read_pod<std::uint32_t>(in);
    cfg.hidden.clear();
    for (std::uint32_t i = 0; i < n_hidden; ++i)
        cfg.hidden.push_back(static_cast<int>(read_pod<std::uint32_t>(in)));
    std::uint64_t n_params = read_pod<std::uint64_t>(in);
    Vec params(n_params);
    in.read(reinterpret_cast<char*>(params.data()),
            static_cast<std::streamsize>(n_params * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated parameters in " + path);
    auto net = std::make_shared<DiamondNet>(cfg, std::move(params));
    return DistilledDiamondMap(std::move(net), Scheduler(kind, t_min, t_max));
}

}  // namespace diamond
