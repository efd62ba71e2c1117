#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "scialloc/core_model.hpp"
#include "scialloc/identification.hpp"
#include "scialloc/type_index.hpp"

namespace scialloc {

/// Loss added for each researcher whose attributes or predictions cannot be
/// computed under a candidate parameter vector.
inline constexpr double kFailurePenalty = 1e12;

using ExperimentValues = std::array<std::optional<double>, kNumExperiments>;

/// Everything the loss needs that does not depend on the deep parameters.
struct GmmProblem {
    std::span<const ResearcherRecord> dataset;
    Calibration calibration;
    ZeroFundraiserModels models;
    std::vector<std::size_t> order;  // summation order: rows sorted by id
};

GmmProblem make_gmm_problem(std::span<const ResearcherRecord> dataset, const Calibration& cal);

struct LossEvaluation {
    double loss = 0.0;
    int penalized = 0;
    std::vector<IdentificationFailure> failures;
    std::vector<ExperimentValues> predicted;  // per dataset row, only when requested
};

LossEvaluation evaluate_loss(const DeepParams& deep, const GmmProblem& problem,
                             bool keep_predictions = false);

/// Sum over researchers and answered experiments of (M~obs - M~model)^2.
double gmm_loss(const DeepParams& deep, std::span<const ResearcherRecord> dataset,
                const Calibration& cal);

/// Cartesian product of the starting values, 216 candidates.
std::vector<DeepParams> initial_grid();

/// Search coordinates: (log omega, log psi, then the eight deltas).
std::vector<double> to_search_space(const DeepParams& d);
DeepParams from_search_space(std::span<const double> x);

struct SimplexOptions {
    double loss_tolerance = 1e-8;       // spread of losses across vertices
    double parameter_tolerance = 1e-6;  // max coordinate distance to the best vertex
    int max_evaluations = 20000;
    double reflection = 1.0;
    double expansion = 2.0;
    double contraction = 0.5;
    double shrink = 0.5;
    std::vector<double> initial_steps;  // empty: 5% of |x0_i|, at least 0.05
};

struct SimplexResult {
    std::vector<double> x;
    double fx = 0.0;
    int evaluations = 0;
    int iterations = 0;
    bool converged = false;
};

SimplexResult simplex_minimize(const std::function<double(std::span<const double>)>& f,
                               std::vector<double> x0, const SimplexOptions& opt = {});

struct EstimationConfig {
    std::vector<DeepParams> grid = initial_grid();
    double grid_keep = 0.005;    // stage 0 survivors within this fraction of the best loss
    double stage1_keep = 0.01;   // stage 1 survivors
    std::array<double, 3> loss_tolerance = {1e-2, 1e-4, 1e-6};  // relative to the best grid loss
    double parameter_tolerance = 1e-6;
    int max_evaluations = 6000;  // per simplex run
    int refinements = 2;         // final runs from the single best
    bool grid_only = false;
    unsigned threads = 0;  // 0 keeps the current setting
};

struct StageRecord {
    int stage = 0;
    std::vector<DeepParams> candidates;
    std::vector<double> losses;
    std::vector<int> evaluations;
};

struct EstimationResult {
    DeepParams params;
    double loss = 0.0;
    std::vector<StageRecord> trace;
    std::vector<ExperimentValues> residuals;  // M~obs - M~model, dataset order
    int penalized = 0;
    std::vector<IdentificationFailure> failures;
    bool converged = false;
    int evaluations = 0;
};

class EstimationFailure : public std::runtime_error {
public:
    EstimationFailure(const std::string& what, EstimationResult partial)
        : std::runtime_error(what), result(std::move(partial)) {}
    EstimationResult result;
};

EstimationResult estimate(std::span<const ResearcherRecord> dataset, const EstimationConfig& cfg,
                          const Calibration& cal);

}  // namespace scialloc
