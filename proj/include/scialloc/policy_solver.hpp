#pragma once

#include "scialloc/core_model.hpp"

namespace scialloc {

/// Which piece of the hours first-order condition applies: below the
/// fundraising threshold the researcher does not fundraise (F = 0); above it
/// fundraising is interior.
enum class HoursBranch { NoFundraising, Fundraising };

struct PolicySolution {
    double total_hours = 0.0;  // H
    double fundraising = 0.0;  // F
    double research = 0.0;     // R
    double budget = 0.0;       // B
    double output = 0.0;       // Y
    double utility = 0.0;      // V
    bool fundraising_corner = false;  // F == 0
    bool hours_corner = false;        // H == H_max
    double fundraising_multiplier = 0.0;  // lambda_F
    double hours_multiplier = 0.0;        // lambda_H
    double foc_residual = 0.0;  // marginal benefit / marginal cost - 1 at H (0 at interior optimum)
    int iterations = 0;
};

struct SolverOptions {
    double lower_offset = 1e-6;         // epsilon_H: left bracket starts at D + lower_offset
    double hours_tolerance = 1e-11;     // bracket width, hours
    double residual_tolerance = 1e-14;  // |log(benefit/cost)|
    int max_iterations = 200;           // per branch
};

/// H_{F>0} = D + (1-gamma)(B_min+G)/(gamma*phi).
double fundraising_threshold(const ContractState& c, const Attributes& a, const Calibration& cal);

/// F = gamma(H-D) - (1-gamma)(B_min+G)/phi; requires H above the threshold.
double interior_fundraising(double total_hours, const ContractState& c, const Attributes& a,
                            const Calibration& cal);

/// Logs of the two sides of the hours condition: marginal utility of an extra
/// hour through output, and marginal effort cost psi*(H-D+D^xi)^zeta. The
/// benefit is linear in log(alpha) with slope (1 - eta) on both branches.
struct HoursFocTerms {
    double log_benefit = 0.0;
    double log_cost = 0.0;
};

HoursFocTerms hours_foc_terms(double total_hours, HoursBranch branch, const ContractState& c,
                              const Attributes& a, const PreferenceParams& p,
                              const Calibration& cal);

/// Raw residual benefit - cost of the hours condition on the given branch.
/// Throws DomainError when H lies on the wrong side of the threshold.
double hours_residual(double total_hours, HoursBranch branch, const ContractState& c,
                      const Attributes& a, const PreferenceParams& p, const Calibration& cal);

/// Optimal (H, F, R) with corner handling at F = 0 and H = H_max.
/// Throws NumericalFailure with diagnostics when no bracket or no convergence.
PolicySolution solve_policy(const ContractState& c, const Attributes& a,
                            const PreferenceParams& p, const Calibration& cal,
                            const SolverOptions& opt = {});

/// Evaluates a given (H, F) choice: R, B, Y and V. Used by oracles and checks.
PolicySolution evaluate_choice(double total_hours, double fundraising, const ContractState& c,
                               const Attributes& a, const PreferenceParams& p,
                               const Calibration& cal);

}  // namespace scialloc
