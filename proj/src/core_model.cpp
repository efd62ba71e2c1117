#include "scialloc/core_model.hpp"

#include <cmath>
#include <sstream>

#include "scialloc/errors.hpp"

namespace scialloc {

namespace {

void require(bool ok, const char* what) {
    if (!ok) throw DomainError(what);
}

}  // namespace

void validate(const ContractState& c, const Calibration& cal) {
    require(std::isfinite(c.salary) && c.salary > 0.0, "salary must be > 0");
    require(std::isfinite(c.guaranteed_funding) && c.guaranteed_funding >= 0.0,
            "guaranteed funding must be >= 0");
    require(std::isfinite(c.duties) && c.duties >= 0.0, "duties must be >= 0");
    require(c.duties < cal.max_hours, "duties must be below max hours");
}

void validate(const Attributes& a) {
    require(std::isfinite(a.tfp) && a.tfp > 0.0, "tfp must be > 0");
    require(a.funding_intensity > 0.0 && a.funding_intensity < 1.0,
            "funding intensity must lie in (0,1)");
    require(std::isfinite(a.fundraising_ability) && a.fundraising_ability >= 1.0,
            "fundraising ability must be >= 1");
}

void validate(const PreferenceParams& p) {
    require(std::isfinite(p.income_weight) && p.income_weight > 0.0, "omega must be > 0");
    require(std::isfinite(p.income_curvature) && p.income_curvature > 0.0, "sigma must be > 0");
    require(p.output_curvature > 0.0 && p.output_curvature < 1.0, "eta must lie in (0,1)");
    require(std::isfinite(p.effort_weight) && p.effort_weight > 0.0, "psi must be > 0");
    require(std::isfinite(p.duty_penalty_exponent) && p.duty_penalty_exponent > 0.0,
            "xi must be > 0");
    require(std::isfinite(p.effort_curvature) && p.effort_curvature > 0.0, "zeta must be > 0");
}

void validate(const Calibration& cal) {
    require(cal.min_funding > 0.0, "B_min must be > 0");
    require(cal.max_hours > 0.0, "H_max must be > 0");
    require(cal.externality >= 1.0, "kappa must be >= 1");
}

void validate(const ResearcherRecord& r, const Calibration& cal) {
    validate(r.contract, cal);
    const auto& al = r.allocation;
    auto fail = [&](const std::string& msg) {
        std::ostringstream os;
        os << "researcher " << r.id << ": " << msg;
        throw DomainError(os.str());
    };
    if (!(al.research > 0.0)) fail("research hours must be > 0");
    if (!(al.fundraising >= 0.0)) fail("fundraising hours must be >= 0");
    if (std::abs(al.research + al.fundraising + r.contract.duties - al.total_hours) >
        1e-6 * std::max(1.0, al.total_hours)) {
        fail("R + F + D must equal H");
    }
    if (al.total_hours > cal.max_hours * (1.0 + 1e-12)) fail("H exceeds max hours");
    if (!(r.expected_extra_funding >= 0.0)) fail("expected extra funding must be >= 0");
    if (r.expected_extra_funding > 0.0 && al.fundraising == 0.0) {
        fail("positive expected extra funding requires fundraising time");
    }
    for (const auto& ans : r.wtp_answers) {
        if (ans && !(*ans > 0.0)) fail("indifference salaries must be > 0");
    }
}

double total_budget(const ContractState& c, double fundraising, double fundraising_ability,
                    const Calibration& cal) {
    return cal.min_funding + c.guaranteed_funding + fundraising_ability * fundraising;
}

double production_output(const Attributes& a, double budget, double research) {
    if (!(budget > 0.0)) throw DomainError("production requires a positive budget");
    if (!(research > 0.0)) throw DomainError("production requires positive research time");
    const double g = a.funding_intensity;
    return a.tfp * std::exp(g * std::log(budget) + (1.0 - g) * std::log(research));
}

double effort_index(double research, double fundraising, double duties,
                    const PreferenceParams& p) {
    const double duty_term = duties > 0.0 ? std::pow(duties, p.duty_penalty_exponent) : 0.0;
    return research + fundraising + duty_term;
}

double income_utility(double salary, const PreferenceParams& p) {
    if (!(salary > 0.0)) throw DomainError("salary must be > 0");
    const double s = p.income_curvature;
    // sigma == 1 is the log limit; only differences in u1 matter for indifference.
    if (s == 1.0) return p.income_weight * std::log(salary);
    return p.income_weight * std::pow(salary, 1.0 - s) / (1.0 - s);
}

double output_utility(double output, const PreferenceParams& p) {
    if (!(output > 0.0)) throw DomainError("output must be > 0");
    const double e = p.output_curvature;
    return std::pow(output, 1.0 - e) / (1.0 - e);
}

double effort_disutility(double research, double fundraising, double duties,
                         const PreferenceParams& p) {
    if (research < 0.0 || fundraising < 0.0 || duties < 0.0) {
        throw DomainError("time inputs must be >= 0");
    }
    const double z = p.effort_curvature;
    return p.effort_weight * std::pow(effort_index(research, fundraising, duties, p), 1.0 + z) /
           (1.0 + z);
}

double utility(double salary, double output, double research, double fundraising, double duties,
               const PreferenceParams& p) {
    return income_utility(salary, p) + output_utility(output, p) -
           effort_disutility(research, fundraising, duties, p);
}

double social_value(double salary, double output, double research, double fundraising,
                    double duties, const PreferenceParams& p, double kappa) {
    if (!(kappa >= 1.0)) throw DomainError("kappa must be >= 1");
    return income_utility(salary, p) + kappa * output_utility(output, p) -
           effort_disutility(research, fundraising, duties, p);
}

}  // namespace scialloc
