#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scialloc/core_model.hpp"

namespace scialloc {

/// Linear-interpolation sample quantile (type 7). Throws on empty input.
double quantile(std::vector<double> values, double q);

struct OlsFit {
    double intercept = 0.0;
    std::vector<double> slopes;     // one per design column, NaN when dropped
    std::vector<int> dropped;       // collinear columns left out
    std::vector<double> residuals;
    double r_squared = 0.0;
};

/// OLS with an intercept, solved by column-pivoted QR. Collinear columns are
/// dropped greedily from the right.
OlsFit ols(std::span<const double> y, const Eigen::MatrixXd& design);

/// One dummy column per distinct label except the first in sorted order.
Eigen::MatrixXd label_dummies(std::span<const std::string> labels);

/// q90/q10 of alpha levels.
double tfp_ratio_90_10(std::span<const double> tfp);

/// exp(q90 - q10) of the residuals from regressing log alpha on the design.
double tfp_ratio_90_10(std::span<const double> tfp, const Eigen::MatrixXd& design);

struct VarianceDecomposition {
    double var_log_output = 0.0;
    double var_log_tfp = 0.0;
    double cov_tfp_budget = 0.0;    // Cov(log alpha, gamma log B)
    double cov_tfp_research = 0.0;  // Cov(log alpha, (1-gamma) log R)
    double var_budget = 0.0, var_research = 0.0, cov_budget_research = 0.0;
    double tfp_share = 0.0;  // (Var + 2 Cov + 2 Cov) / Var(log Y)
    double raw_share = 0.0;  // Var(log alpha) / Var(log Y)
    double residual = 0.0;   // Var(log Y) minus the sum of all terms
};

struct ProductionSample {
    std::vector<double> tfp, intensity, budget, research, output;
};

/// Throws DomainError on nonpositive values or Var(log Y) = 0.
VarianceDecomposition variance_decomposition(const ProductionSample& s);

struct PowerLawFit {
    double exponent = 0.0;
    double std_error = 0.0;
    std::size_t n = 0;  // size of the top subsample
};

/// Rank-1/2 regression of log rank on log value over the top fraction.
PowerLawFit power_law_fit(std::span<const double> values, double top_fraction);

struct CompositionInput {
    std::vector<double> guaranteed, budget, intensity, output;
};

struct CompositionReport {
    std::vector<double> s, t, z;  // G/B, B/sum B, Y/sum Y
    double approx_dlog_budget = 0.0, approx_dlog_output = 0.0;
    double exact_dlog_budget = 0.0, exact_dlog_output = 0.0;
};

/// Effect of raising every G by the factor (1 + d) with R and F held fixed.
CompositionReport composition_effect(const CompositionInput& in, double d);

enum class GrowthMode { Mechanical, Behavioral };

struct GrowthResearcher {
    ContractState contract;
    Attributes attributes;
    PreferenceParams prefs;
    TimeAllocation allocation;  // held fixed in the mechanical mode
};

struct FundingGrowth {
    double g_growth = 0.0;       // x
    double budget_growth = 0.0;  // sum B after / sum B before - 1
    double output_growth = 0.0;
    int iterations = 0;
};

/// Smallest uniform G growth x with sum Y_i(G_i (1 + x)) = target. The
/// behavioral mode re-solves every policy (pi = 1). Throws DomainError if the
/// target is below current output or unreachable.
FundingGrowth funding_growth_equivalence(std::span<const GrowthResearcher> rs, double target_output,
                                         GrowthMode mode, const Calibration& cal);

struct Lorenz {
    std::vector<double> population_share, value_share;  // from (0, 0) to (1, 1)
    double gini = 0.0;
};

Lorenz lorenz_gini(std::span<const double> values);

struct WedgeRow {
    std::string id;
    double actual = 0.0;
    double optimal = 0.0;
    double wedge = 0.0;  // actual - optimal; positive means over-resourced
};

std::vector<WedgeRow> wedge_rows(std::span<const std::string> ids, std::span<const double> actual,
                                 std::span<const double> optimal);

struct WedgeFit {
    double intercept = 0.0;
    double beta = 0.0;
    std::vector<double> delta;  // per covariate, NaN when dropped
    std::vector<int> dropped;   // covariate indices dropped as collinear
    double r_squared = 0.0;
};

/// actual = a + beta * optimal + delta' Z.
WedgeFit wedge_regression(std::span<const WedgeRow> rows, const Eigen::MatrixXd& covariates);

struct FieldOutputInput {
    std::string field;
    std::vector<Attributes> attributes;
    std::vector<double> budget, research;  // actual inputs
    std::vector<double> optimized_output;  // per researcher, from the planner
};

struct FieldOutputRow {
    std::string field;
    double actual = 0.0;  // percent of the benchmark field, per capita
    double equalized_inputs = 0.0;
    double equalized_tfp = 0.0;
    double optimized = 0.0;
};

struct FieldOutputDecomposition {
    std::string benchmark;
    std::vector<FieldOutputRow> rows;
};

/// Per-capita output by field relative to the field with the highest actual
/// per-capita output. Equalized inputs scale every researcher's B and R so the
/// field means match the benchmark's; equalized TFP scales alpha the same way.
/// Both hold behavior fixed.
FieldOutputDecomposition field_output_decomposition(std::span<const FieldOutputInput> fields);

struct OutcomeRow {
    double research = 0.0;
    double budget = 0.0;
    double output = 0.0;
    double utility = 0.0;
    double social_value = 0.0;
};

struct SummaryLine {
    std::string label;
    double actual = 0.0;
    double counterfactual = 0.0;
    std::optional<double> change;  // (new - old) / |old|; absent when old = 0
};

/// Mean and sd of R, B, Y, V and social value, per-hour and per-dollar ratios
/// of means, and reallocation magnitudes of R and B.
std::vector<SummaryLine> counterfactual_summary(std::span<const OutcomeRow> actual,
                                                std::span<const OutcomeRow> counterfactual);

}  // namespace scialloc
