#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "diamond/rng.hpp"

namespace diamond {

/// Labeled n x d sample matrix with seed provenance.
struct SampleSet {
    Mat samples;
    std::string label;
    std::uint64_t seed = 0;

    Eigen::Index n() const { return samples.rows(); }
    Eigen::Index dim() const { return samples.cols(); }
};

SampleSet make_sample_set(Mat samples, std::string label, std::uint64_t seed = 0);

/// Exact empirical 1-Wasserstein distance (quantile coupling, handles n != m).
double w1_1d(const SampleSet& a, const SampleSet& b);

/// Squared empirical 2-Wasserstein distance between 1-D sample vectors.
double w2_sq_1d(Vec a, Vec b);

/// Root mean over random unit projections of the squared 1-D W2 distance.
double sliced_w2(const SampleSet& a, const SampleSet& b, int n_projections, std::uint64_t seed);

struct MmdEstimate {
    double mmd2;
    double std_error;  // jackknife over sample deletions
};

/// Unbiased MMD^2 with the RBF kernel exp(-|x-y|^2 / (2 bandwidth^2)).
MmdEstimate rbf_mmd(const SampleSet& a, const SampleSet& b, double bandwidth);

struct KsResult {
    double statistic;
    double p_value;
};

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
KsResult ks_test_1d(const SampleSet& a, const SampleSet& b);

/// Max relative error between an analytic gradient and central differences.
double fd_grad_check(const std::function<double(const Vec&)>& f,
                     const std::function<Vec(const Vec&)>& grad, const Vec& x, double h);

}  // namespace diamond
