#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "scialloc/core_model.hpp"

namespace scialloc {

/// Common parameters: omega, psi and the intercept/slope pairs mapping the
/// researcher type T into sigma, eta, xi and zeta.
struct DeepParams {
    double income_weight = 1.0;  // omega
    double effort_weight = 1.0;  // psi
    double sigma0 = 0.0, sigma1 = 0.0;
    double eta0 = 0.0, eta1 = 0.0;
    double xi0 = 0.0, xi1 = 0.0;
    double zeta0 = 0.0, zeta1 = 0.0;

    static constexpr std::size_t kSize = 10;
    std::array<double, kSize> to_array() const;
    static DeepParams from_array(const std::array<double, kSize>& v);
};

/// sigma = exp(s0 + T s1), eta = logistic(e0 + T e1), xi = exp(x0 + T x1), zeta = exp(z0 + T z1).
PreferenceParams preference_params_from_type(double type_index, const DeepParams& d);

struct TypeModel {
    std::vector<double> feature_means;
    std::vector<double> feature_sds;  // 0 marks a constant column, ignored
    Eigen::MatrixXd centroids;        // 2 x K, standardized units
    int reference_centroid = 0;
    double log_distance_mean = 0.0;
    double log_distance_sd = 0.0;
    bool degenerate = false;

    /// T for one raw feature row under this model.
    double transform(const std::vector<double>& features) const;
};

struct TypeFit {
    TypeModel model;
    std::vector<double> type_index;  // per input row
    double objective = 0.0;          // within-cluster sum of squares
    std::vector<int> assignment;     // cluster per input row
};

struct KMeansOptions {
    int restarts = 50;
    int max_iterations = 1000;
};

/// Two-cluster k-means on standardized features; T is the standardized log
/// Euclidean distance to the reference centroid (the one with the smaller
/// first standardized coordinate).
TypeFit fit_type_index(const Eigen::MatrixXd& features, std::uint64_t seed,
                       const KMeansOptions& opt = {});

struct LloydResult {
    Eigen::MatrixXd centroids;
    std::vector<int> assignment;
    std::vector<double> objective_trace;  // after each assignment step
};

/// Lloyd iterations from given initial centroids (rows are points).
LloydResult lloyd_kmeans(const Eigen::MatrixXd& points, Eigen::MatrixXd centroids,
                         int max_iterations = 1000);

}  // namespace scialloc
