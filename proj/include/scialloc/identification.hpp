#pragma once

#include <array>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "scialloc/core_model.hpp"
#include "scialloc/type_index.hpp"

namespace scialloc {

/// phi = max(EG / F, 1); requires F > 0.
double infer_phi(double expected_extra_funding, double fundraising);

/// gamma = B / (B + phi R) with B = B_min + G + phi F.
double infer_gamma(const ContractState& c, double phi, double fundraising, double research,
                   const Calibration& cal);

struct AlphaEstimate {
    double tfp = 0.0;
    /// Observed H at the cap: the hours condition only bounds alpha from below,
    /// and `tfp` is that lower bound.
    bool set_identified = false;
};

/// The alpha that makes the observed hours satisfy the hours condition of the
/// active branch (no-fundraising if F = 0, fundraising otherwise). Uses the
/// same residual terms as the policy solver.
AlphaEstimate infer_alpha(const ContractState& c, const TimeAllocation& alloc, double gamma,
                          double phi, const PreferenceParams& p, const Calibration& cal);

/// Generalized linear model fitted by iteratively reweighted least squares.
struct GlmFit {
    enum class Link { Log, Logit };
    Link link = Link::Log;
    std::vector<double> coefficients;  // one per design column; dropped columns are 0
    std::vector<bool> active;
    std::vector<std::string> dropped;
    int iterations = 0;
    double score_norm = 0.0;  // ||X'(y - mu)|| / sum|y|
    bool converged = false;

    double predict_linear(std::span<const double> design_row) const;
};

/// Cubic polynomials in standardized (G, D, M): log link for phi, logit link
/// for gamma, fitted on researchers with positive fundraising.
struct ZeroFundraiserModels {
    double mean_g = 0.0, sd_g = 1.0;
    double mean_d = 0.0, sd_d = 1.0;
    double mean_m = 0.0, sd_m = 1.0;
    GlmFit phi_model;
    GlmFit gamma_model;
    // phi predictions are clamped to the range seen in the fitting sample;
    // the cubic terms otherwise explode outside it.
    double phi_min = 1.0, phi_max = std::numeric_limits<double>::infinity();

    static constexpr std::size_t kColumns = 10;
    static const std::array<const char*, kColumns>& column_names();
    std::array<double, kColumns> design_row(const ContractState& c) const;
    /// Raw fitted phi, floored at 1 and clamped to the sample range.
    double predict_phi(const ContractState& c) const;
    double predict_gamma(const ContractState& c) const;
};

inline constexpr std::size_t kMinFundraisersForRegression = 30;

ZeroFundraiserModels fit_zero_fundraiser_models(std::span<const ContractState> states,
                                                std::span<const double> phi,
                                                std::span<const double> gamma);

/// Fits a GLM with the given design (rows = observations). Columns that are
/// collinear with earlier ones are dropped, so order columns by priority.
GlmFit fit_glm(const Eigen::MatrixXd& design, const Eigen::VectorXd& response, GlmFit::Link link,
               const std::vector<std::string>& names, double score_tolerance = 1e-8,
               int max_iterations = 100);

struct ZeroFundraiserAttributes {
    Attributes attributes;
    double raw_phi = 0.0;
    double phi_bound = 0.0;  // largest phi with F* = 0 at the observed state
    bool rescaled = false;
    bool gamma_capped = false;  // phi = 1 still fundraised; gamma lowered instead
    bool set_identified = false;
};

inline constexpr double kPhiRescaleFactor = 0.999;

/// Attributes for a researcher observed with F = 0: predicted (phi, gamma),
/// alpha from the no-fundraising hours condition, and phi pushed below the
/// bound at which the solver would start fundraising.
ZeroFundraiserAttributes predict_and_rescale(const ZeroFundraiserModels& models,
                                             const ContractState& c, const TimeAllocation& alloc,
                                             const PreferenceParams& p, const Calibration& cal);

struct IdentifiedResearcher {
    std::string id;
    Attributes attributes;
    bool zero_fundraiser = false;
    bool rescaled = false;
    bool gamma_capped = false;  // phi = 1 still fundraised; gamma lowered instead
    bool set_identified = false;
};

struct IdentificationFailure {
    std::string id;
    std::string reason;
};

struct IdentificationResult {
    std::vector<IdentifiedResearcher> researchers;  // same order as the input
    std::vector<IdentificationFailure> failures;
};

/// Fits the zero-fundraiser models on the F > 0 subsample. Returns
/// default-constructed models when nobody has F = 0.
ZeroFundraiserModels fit_zero_fundraiser_models(std::span<const ResearcherRecord> dataset,
                                                const Calibration& cal);

IdentifiedResearcher identify_researcher(const ResearcherRecord& r, const PreferenceParams& p,
                                         const ZeroFundraiserModels& models,
                                         const Calibration& cal);

/// Attributes for every researcher given deep parameters; per-researcher
/// failures are collected rather than thrown.
IdentificationResult identify_population(std::span<const ResearcherRecord> dataset,
                                         const DeepParams& deep, const Calibration& cal);

IdentificationResult identify_population(std::span<const ResearcherRecord> dataset,
                                         const DeepParams& deep,
                                         const ZeroFundraiserModels& models,
                                         const Calibration& cal);

}  // namespace scialloc
