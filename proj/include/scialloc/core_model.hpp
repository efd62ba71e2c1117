#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace scialloc {

// Units throughout: money in dollars/year, time in hours/week, fundraising
// ability in (dollars/year) per (hour/week).

struct ContractState {
    double salary = 0.0;              // M
    double guaranteed_funding = 0.0;  // G
    double duties = 0.0;              // D
};

struct Attributes {
    double tfp = 1.0;                  // alpha
    double funding_intensity = 0.5;    // gamma, in (0,1)
    double fundraising_ability = 1.0;  // phi, >= 1
};

struct PreferenceParams {
    double income_weight = 1.0;          // omega
    double income_curvature = 2.0;       // sigma
    double output_curvature = 0.5;       // eta, in (0,1)
    double effort_weight = 1.0;          // psi
    double duty_penalty_exponent = 1.0;  // xi
    double effort_curvature = 1.0;       // zeta
};

struct TimeAllocation {
    double research = 0.0;     // R
    double fundraising = 0.0;  // F
    double total_hours = 0.0;  // H
};

struct Calibration {
    double min_funding = 5000.0;  // B_min
    double max_hours = 62.0;      // H_max
    double externality = 10.0;    // kappa
};

inline constexpr int kNumExperiments = 4;

struct ResearcherRecord {
    std::string id;
    std::string field;
    ContractState contract;
    TimeAllocation allocation;
    double expected_extra_funding = 0.0;  // EG
    std::array<std::optional<double>, kNumExperiments> wtp_answers{};
    std::vector<double> features;
    double type_index = 0.0;  // T
};

void validate(const ContractState& c, const Calibration& cal);
void validate(const Attributes& a);
void validate(const PreferenceParams& p);
void validate(const Calibration& cal);
void validate(const ResearcherRecord& r, const Calibration& cal);

/// B = B_min + G + phi * F.
double total_budget(const ContractState& c, double fundraising, double fundraising_ability,
                    const Calibration& cal);

/// Y = alpha * B^gamma * R^(1-gamma). Throws DomainError unless B > 0 and R > 0.
double production_output(const Attributes& a, double budget, double research);

/// Effort index R + F + D^xi entering the disutility term.
double effort_index(double research, double fundraising, double duties, const PreferenceParams& p);

double income_utility(double salary, const PreferenceParams& p);
double output_utility(double output, const PreferenceParams& p);
double effort_disutility(double research, double fundraising, double duties,
                         const PreferenceParams& p);

/// u1(M) + u2(Y) - u3(R, F, D).
double utility(double salary, double output, double research, double fundraising, double duties,
               const PreferenceParams& p);

/// u1(M) + kappa * u2(Y) - u3(R, F, D); kappa >= 1.
double social_value(double salary, double output, double research, double fundraising,
                    double duties, const PreferenceParams& p, double kappa);

}  // namespace scialloc
