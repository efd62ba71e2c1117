#include "scialloc/type_index.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "scialloc/errors.hpp"

namespace scialloc {

std::array<double, DeepParams::kSize> DeepParams::to_array() const {
    return {income_weight, effort_weight, sigma0, sigma1, eta0, eta1, xi0, xi1, zeta0, zeta1};
}

DeepParams DeepParams::from_array(const std::array<double, kSize>& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]};
}

PreferenceParams preference_params_from_type(double t, const DeepParams& d) {
    PreferenceParams p;
    p.income_weight = d.income_weight;
    p.effort_weight = d.effort_weight;
    p.income_curvature = std::exp(d.sigma0 + t * d.sigma1);
    p.output_curvature = 1.0 / (1.0 + std::exp(-(d.eta0 + t * d.eta1)));
    p.duty_penalty_exponent = std::exp(d.xi0 + t * d.xi1);
    p.effort_curvature = std::exp(d.zeta0 + t * d.zeta1);
    return p;
}

namespace {

constexpr double kMinDistance = 1e-12;

int nearest(const Eigen::RowVectorXd& x, const Eigen::MatrixXd& centroids, double* dist2) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < centroids.rows(); ++k) {
        const double d = (x - centroids.row(k)).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    if (dist2) *dist2 = best_d;
    return best;
}

Eigen::MatrixXd kmeanspp_init(const Eigen::MatrixXd& pts, std::mt19937_64& rng) {
    const auto n = pts.rows();
    Eigen::MatrixXd c(2, pts.cols());
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    c.row(0) = pts.row(pick(rng));
    std::vector<double> w(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) w[i] = (pts.row(i) - c.row(0)).squaredNorm();
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    if (total > 0.0) {
        std::discrete_distribution<Eigen::Index> second(w.begin(), w.end());
        c.row(1) = pts.row(second(rng));
    } else {
        c.row(1) = c.row(0);
    }
    return c;
}

}  // namespace

LloydResult lloyd_kmeans(const Eigen::MatrixXd& points, Eigen::MatrixXd centroids,
                         int max_iterations) {
    LloydResult res;
    const auto n = points.rows();
    const auto k = centroids.rows();
    res.assignment.assign(static_cast<std::size_t>(n), -1);
    for (int it = 0; it < max_iterations; ++it) {
        bool changed = false;
        double obj = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            double d2 = 0.0;
            const int a = nearest(points.row(i), centroids, &d2);
            obj += d2;
            if (a != res.assignment[i]) {
                res.assignment[i] = a;
                changed = true;
            }
        }
        res.objective_trace.push_back(obj);
        if (!changed && it > 0) break;
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(res.assignment[i]) += points.row(i);
            ++counts[res.assignment[i]];
        }
        for (Eigen::Index c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                centroids.row(c) = sums.row(c) / counts[c];
            } else {
                // Empty cluster: move it to the point farthest from its centroid.
                Eigen::Index far = 0;
                double far_d = -1.0;
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double d = (points.row(i) - centroids.row(res.assignment[i])).squaredNorm();
                    if (d > far_d) {
                        far_d = d;
                        far = i;
                    }
                }
                centroids.row(c) = points.row(far);
            }
        }
    }
    res.centroids = std::move(centroids);
    return res;
}

double TypeModel::transform(const std::vector<double>& features) const {
    if (degenerate) return 0.0;
    if (features.size() != feature_means.size()) {
        throw DomainError("feature vector length does not match the type model");
    }
    Eigen::RowVectorXd z(static_cast<Eigen::Index>(features.size()));
    for (std::size_t j = 0; j < features.size(); ++j) {
        z[j] = feature_sds[j] > 0.0 ? (features[j] - feature_means[j]) / feature_sds[j] : 0.0;
    }
    const double dist = (z - centroids.row(reference_centroid)).norm();
    const double ld = std::log(std::max(dist, kMinDistance));
    if (!(log_distance_sd > 0.0)) return 0.0;
    return (ld - log_distance_mean) / log_distance_sd;
}

TypeFit fit_type_index(const Eigen::MatrixXd& features, std::uint64_t seed,
                       const KMeansOptions& opt) {
    const auto n = features.rows();
    const auto dim = features.cols();
    if (n < 2 || dim < 1) throw DomainError("type index needs at least 2 rows and 1 feature");

    TypeFit fit;
    TypeModel& m = fit.model;
    m.feature_means.resize(static_cast<std::size_t>(dim));
    m.feature_sds.resize(static_cast<std::size_t>(dim));
    Eigen::MatrixXd z(n, dim);
    for (Eigen::Index j = 0; j < dim; ++j) {
        const double mean = features.col(j).mean();
        const double var = (features.col(j).array() - mean).square().sum() / double(n - 1);
        const double sd = std::sqrt(var);
        // Relative threshold: a column constant up to rounding counts as constant.
        const bool constant = !(sd > 1e-12 * std::max(1.0, std::abs(mean)));
        m.feature_means[j] = mean;
        m.feature_sds[j] = constant ? 0.0 : sd;
        z.col(j) = constant ? Eigen::VectorXd::Zero(n)
                            : Eigen::VectorXd((features.col(j).array() - mean) / sd);
    }

    fit.type_index.assign(static_cast<std::size_t>(n), 0.0);
    fit.assignment.assign(static_cast<std::size_t>(n), 0);

    // Canonical row order so results do not depend on input order.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        for (Eigen::Index j = 0; j < dim; ++j) {
            if (z(a, j) != z(b, j)) return z(a, j) < z(b, j);
        }
        return false;
    });
    Eigen::MatrixXd pts(n, dim);
    for (Eigen::Index i = 0; i < n; ++i) pts.row(i) = z.row(order[i]);

    bool all_same = true;
    for (Eigen::Index i = 1; i < n && all_same; ++i) all_same = pts.row(i) == pts.row(0);
    if (all_same) {
        m.degenerate = true;
        m.centroids = Eigen::MatrixXd::Zero(2, dim);
        return fit;
    }

    std::mt19937_64 rng(seed);
    LloydResult best;
    double best_obj = std::numeric_limits<double>::infinity();
    for (int r = 0; r < std::max(1, opt.restarts); ++r) {
        auto res = lloyd_kmeans(pts, kmeanspp_init(pts, rng), opt.max_iterations);
        const double obj = res.objective_trace.back();
        if (obj < best_obj) {
            best_obj = obj;
            best = std::move(res);
        }
    }
    fit.objective = best_obj;
    m.centroids = best.centroids;
    m.reference_centroid = m.centroids(1, 0) < m.centroids(0, 0) ? 1 : 0;

    std::vector<double> ld(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const double dist = (z.row(i) - m.centroids.row(m.reference_centroid)).norm();
        ld[i] = std::log(std::max(dist, kMinDistance));
    }
    const double mean = std::accumulate(ld.begin(), ld.end(), 0.0) / double(n);
    double ss = 0.0;
    for (double v : ld) ss += (v - mean) * (v - mean);
    m.log_distance_mean = mean;
    m.log_distance_sd = std::sqrt(ss / double(n - 1));
    for (Eigen::Index i = 0; i < n; ++i) {
        fit.type_index[i] =
            m.log_distance_sd > 0.0 ? (ld[i] - mean) / m.log_distance_sd : 0.0;
    }
    for (Eigen::Index i = 0; i < n; ++i) fit.assignment[order[i]] = best.assignment[i];
    return fit;
}

}  // namespace scialloc
