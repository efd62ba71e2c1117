#pragma once

#include <optional>
#include <vector>

#include "scialloc/core_model.hpp"
#include "scialloc/policy_solver.hpp"

namespace scialloc {

struct Offer {
    double guaranteed_funding = 0.0;  // G~
    double duties = 0.0;              // D~
    int label = 0;                    // experiment 1..4, 0 for custom
};

struct WtpReport {
    Offer offer;
    double indifference_salary = 0.0;  // M~
    double wtp = 0.0;                  // M - M~
    std::optional<double> per_dollar;  // wtp per dollar/year of extra funding
    std::optional<double> per_hour;    // wtp per hour/week of duty relief
};

inline constexpr double kExperimentFundingSmall = 250000.0;
inline constexpr double kExperimentFundingLarge = 1000000.0;
/// 20 hours/month expressed in hours/week.
inline constexpr double kExperimentExtraDutyHours = 20.0 * 12.0 / 52.0;

/// The four survey offers for a contract; experiment 3 is omitted when D = 0.
std::vector<Offer> thought_experiment_offers(const ContractState& c);

/// Indirect utility from time use only, max over (H, F) of u2(Y) - u3; salary does not enter.
double time_value(const PolicySolution& s, const ContractState& c, const PreferenceParams& p);

/// Salary M~ at which the researcher is indifferent between the current
/// contract and the offer, re-optimizing time under the offer.
/// Throws UnboundedCompensation when no positive salary achieves indifference.
double indifference_salary(const ContractState& c, const Attributes& a, const PreferenceParams& p,
                           const Calibration& cal, const Offer& offer);

/// Same, with the baseline policy already solved (avoids re-solving per offer).
double indifference_salary(const ContractState& c, const Attributes& a, const PreferenceParams& p,
                           const Calibration& cal, const Offer& offer,
                           const PolicySolution& baseline);

WtpReport make_report(const ContractState& c, const Offer& offer, double indifference_salary);

std::vector<WtpReport> run_thought_experiments(const ContractState& c, const Attributes& a,
                                               const PreferenceParams& p,
                                               const Calibration& cal);

}  // namespace scialloc
