#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scialloc/core_model.hpp"
#include "scialloc/policy_solver.hpp"

namespace scialloc {

enum class PlannerObjective { Utility, Output };

struct PlannerLevers {
    bool funding = true;  // G
    bool duties = true;   // D
};

struct PlannerResearcher {
    std::string id;
    std::string field;
    ContractState contract;  // actual (M, G, D)
    Attributes attributes;   // identified (alpha, gamma, phi)
    PreferenceParams prefs;
    double expected_extra_funding = 0.0;  // EG
};

struct PlannerOptions {
    int max_rounds = 200;              // outer rounds (lever solves + pi fixed point)
    double tolerance = 1e-6;           // joint convergence: pi, allocation and KKT residuals
    double pi_tolerance = 1e-6;        // relative, feasibility fixed point
    double pi_damping = 0.5;
    int max_pi_iterations = 2000;
    double conservation_tolerance = 1e-10;  // relative, lever totals
};

struct PlannerProblem {
    std::vector<PlannerResearcher> researchers;
    PlannerObjective objective = PlannerObjective::Utility;
    PlannerLevers levers;
    double kappa = 1.0;          // weight on u2 in the utility objective
    double total_funding = 0.0;  // sum of actual G
    double total_duties = 0.0;   // sum of actual D
    bool unconstrained_budget = false;  // drop the fundraising constraint, pi = 1
    Calibration calibration;
};

/// Builds a problem with totals taken from the actual allocation.
PlannerProblem make_planner_problem(std::vector<PlannerResearcher> researchers,
                                    PlannerObjective objective, PlannerLevers levers, double kappa,
                                    const Calibration& cal, bool unconstrained_budget = false);

/// Attributes with phi scaled by the feasibility factor.
Attributes effective_attributes(const PlannerResearcher& r, double pi);

/// Policy response of a researcher to (G, D) at feasibility factor pi.
PolicySolution planner_response(const PlannerResearcher& r, double g, double d, double pi,
                                const Calibration& cal);

/// Planner's per-researcher value: kappa*u2(Y) - u3 for the utility objective.
double planner_value(const PolicySolution& s, double duties, const PreferenceParams& p,
                     double kappa);

struct MarginalValues {
    double value_g = 0.0;   // dV/dG, total derivative through the re-solved policy
    double value_d = 0.0;   // dV/dD
    double output_g = 0.0;  // dY/dG
    double output_d = 0.0;  // dY/dD
    bool one_sided_g = false;
    bool one_sided_d = false;
};

/// Central differences on the re-solved policy with h_G = max(1, 1e-4*(B_min+G))
/// and h_D = 1e-4; one-sided when the stencil crosses a kink or a bound.
MarginalValues marginal_values(const PlannerResearcher& r, double g, double d, double pi,
                               double kappa, const Calibration& cal);

/// pi with sum EG = pi * sum phi*F(pi), by damped iteration from `start`.
/// Returns 1 when nobody fundraises and sum EG = 0; throws DomainError when
/// nobody fundraises but sum EG > 0.
double feasibility_fixed_point(std::span<const PlannerResearcher> researchers,
                               std::span<const ContractState> allocation, const Calibration& cal,
                               const PlannerOptions& opt = {}, double start = 1.0);

struct CounterfactualAllocation {
    std::vector<ContractState> contracts;  // (M, G~, D~)
    std::vector<PolicySolution> responses;
    double pi = 1.0;
    double lambda_g = 0.0, lambda_d = 0.0;
    // Largest KKT violation relative to max(|lambda|, mean |marginal value|).
    double kkt_residual_g = 0.0, kkt_residual_d = 0.0;
    std::vector<MarginalValues> marginals;  // at the counterfactual
    double objective = 0.0;

    std::vector<PolicySolution> actual_responses;
    double actual_pi = 1.0;
    double actual_objective = 0.0;

    int rounds = 0;
    bool converged = false;
    bool returned_actual = false;  // no iterate beat the actual allocation
};

/// Maximizes the aggregate objective over the active levers. Multipliers are
/// found by bisection on the lever totals, each researcher solving
/// dV/dx = lambda within its bounds, alternating with the pi fixed point.
CounterfactualAllocation optimize_allocation(const PlannerProblem& problem,
                                             const PlannerOptions& opt = {});

/// Aggregate objective at a given allocation and pi.
double aggregate_objective(const PlannerProblem& problem, std::span<const ContractState> allocation,
                           double pi, std::vector<PolicySolution>* responses = nullptr);

/// Share of the input moved between researchers: sum max(0, opt - act) / sum act.
std::optional<double> reallocation_magnitude(std::span<const double> actual,
                                             std::span<const double> optimal);

struct ReallocationOptions {
    PlannerObjective objective = PlannerObjective::Output;
    PlannerLevers levers;
    double kappa = 1.0;
    bool unconstrained_budget = false;
    bool across_fields = false;  // one pooled problem instead of one per field
    PlannerOptions solver;
};

struct FieldCounterfactual {
    std::string field;  // empty when pooled
    std::vector<std::size_t> members;  // indices into the input population
    CounterfactualAllocation allocation;
};

/// Solves one planner problem per field (sorted by field name), or one pooled problem.
std::vector<FieldCounterfactual> reallocate(std::span<const PlannerResearcher> population,
                                            const ReallocationOptions& options,
                                            const Calibration& cal);

}  // namespace scialloc
