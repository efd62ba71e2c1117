#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scialloc/core_model.hpp"
#include "scialloc/type_index.hpp"

namespace scialloc {

struct FieldSpec {
    std::string name;
    double share = 0.2;
    double gamma_mean = 0.4;     // mean of the Beta draw for funding intensity
    double g_median_scale = 1.0;  // multiplies the guaranteed-funding median
};

/// How funding intensity is drawn. Beta: field-specific Beta draws.
/// StateLogistic: gamma = logistic(c0 + cG G/1e5 + cD D/10 + cM M/1e5), an
/// exact function of the contract state, so the zero-fundraiser regression can
/// recover it without error.
enum class GammaLaw { Beta, StateLogistic };

struct PopulationConfig {
    int n = 500;
    std::uint64_t seed = 1;
    std::vector<FieldSpec> fields;
    // Salary: lognormal.
    double salary_median = 110000.0, salary_log_sd = 0.35;
    // Guaranteed funding: zero with probability g_zero_share, else lognormal.
    double g_zero_share = 0.25, g_median = 40000.0, g_log_sd = 1.0;
    // Duties: normal censored at 0, capped below H_max.
    double duties_mean = 12.0, duties_sd = 8.0, duties_max = 40.0;
    // Funding intensity.
    GammaLaw gamma_law = GammaLaw::Beta;
    double gamma_concentration = 14.0;
    double gamma_c0 = -0.9, gamma_cg = 0.35, gamma_cd = -0.15, gamma_cm = 0.1;
    // Fundraising ability: two lognormal components.
    double phi_low_share = 0.3, phi_low_median = 1500.0, phi_high_median = 9000.0,
           phi_log_sd = 0.8;
    // Research hours: lognormal target; alpha is backed out so the policy hits it.
    double research_mean = 18.5, research_sd = 9.6;
    // Extra lognormal dispersion in alpha applied after targeting (0 disables).
    double tfp_log_noise = 0.0;
    // Features: k columns, two latent groups.
    int features = 4;
    double answer_noise_sd = 0.0;  // dollars, added to each indifference salary
    DeepParams deep;
    Calibration calibration;
};

struct SyntheticPopulation {
    std::vector<ResearcherRecord> records;
    std::vector<Attributes> truth;  // per record
    DeepParams deep;
    TypeModel type_model;
    int resampled = 0;
};

/// Defaults anchored to published moments; deep parameters are the homogeneous
/// preference row with omega rescaled to these units.
PopulationConfig calibrated_defaults();

/// Five field labels used by calibrated_defaults.
std::vector<FieldSpec> default_fields();

SyntheticPopulation generate_population(const PopulationConfig& cfg);

}  // namespace scialloc
