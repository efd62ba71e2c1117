#include "scialloc/wtp_engine.hpp"

#include <cmath>
#include <sstream>

#include "scialloc/errors.hpp"
#include "scialloc/numerics.hpp"

namespace scialloc {

namespace {

// u1(to) - u1(from), continuous through sigma = 1.
double income_utility_change(double from, double to, const PreferenceParams& p) {
    const double s = p.income_curvature;
    const double log_ratio = std::log(to / from);
    if (s == 1.0) return p.income_weight * log_ratio;
    const double k = 1.0 - s;
    return p.income_weight * std::pow(from, k) * std::expm1(k * log_ratio) / k;
}

constexpr double kSalaryFloor = 1.0;  // epsilon_M, dollars/year
constexpr int kMaxDoublings = 64;

}  // namespace

std::vector<Offer> thought_experiment_offers(const ContractState& c) {
    std::vector<Offer> offers;
    offers.push_back({c.guaranteed_funding + kExperimentFundingSmall, c.duties, 1});
    offers.push_back({c.guaranteed_funding + kExperimentFundingLarge, c.duties, 2});
    if (c.duties > 0.0) offers.push_back({c.guaranteed_funding, 0.0, 3});
    offers.push_back({c.guaranteed_funding, c.duties + kExperimentExtraDutyHours, 4});
    return offers;
}

double time_value(const PolicySolution& s, const ContractState& c, const PreferenceParams& p) {
    return output_utility(s.output, p) -
           effort_disutility(s.research, s.fundraising, c.duties, p);
}

double indifference_salary(const ContractState& c, const Attributes& a, const PreferenceParams& p,
                           const Calibration& cal, const Offer& offer) {
    return indifference_salary(c, a, p, cal, offer, solve_policy(c, a, p, cal));
}

double indifference_salary(const ContractState& c, const Attributes& a, const PreferenceParams& p,
                           const Calibration& cal, const Offer& offer,
                           const PolicySolution& baseline) {
    if (offer.duties >= cal.max_hours) throw DomainError("offered duties must be below max hours");
    if (offer.guaranteed_funding == c.guaranteed_funding && offer.duties == c.duties) {
        return c.salary;
    }
    const ContractState offered{c.salary, offer.guaranteed_funding, offer.duties};
    const PolicySolution under_offer = solve_policy(offered, a, p, cal);
    // Utility the salary change has to absorb: W(current) - W(offer).
    const double gap = time_value(baseline, c, p) - time_value(under_offer, offered, p);
    if (gap == 0.0) return c.salary;

    auto residual = [&](double m) { return income_utility_change(c.salary, m, p) - gap; };

    const double lo = kSalaryFloor;
    const double f_lo = residual(lo);
    if (f_lo > 0.0) {
        std::ostringstream os;
        os << "offer " << offer.label << " is preferred even at a salary of $" << lo;
        throw UnboundedCompensation(os.str());
    }
    double hi = 10.0 * c.salary;
    double f_hi = residual(hi);
    for (int k = 0; k < kMaxDoublings && f_hi < 0.0; ++k) {
        hi *= 2.0;
        f_hi = residual(hi);
    }
    if (!(f_hi >= 0.0)) {
        std::ostringstream os;
        os << "no finite salary compensates offer " << offer.label;
        throw UnboundedCompensation(os.str());
    }
    RootOptions opt;
    opt.x_tolerance = 1e-12 * c.salary;
    opt.max_iterations = 400;
    const auto r = bracketed_root(residual, lo, hi, f_lo, f_hi, opt);
    if (!r.converged) throw NumericalFailure("indifference salary search did not converge");
    return r.x;
}

WtpReport make_report(const ContractState& c, const Offer& offer, double salary) {
    WtpReport rep;
    rep.offer = offer;
    rep.indifference_salary = salary;
    rep.wtp = c.salary - salary;
    const double extra_funding = offer.guaranteed_funding - c.guaranteed_funding;
    const double relief = c.duties - offer.duties;
    if (extra_funding != 0.0) rep.per_dollar = rep.wtp / extra_funding;
    if (relief != 0.0) rep.per_hour = rep.wtp / relief;
    return rep;
}

std::vector<WtpReport> run_thought_experiments(const ContractState& c, const Attributes& a,
                                               const PreferenceParams& p,
                                               const Calibration& cal) {
    const PolicySolution baseline = solve_policy(c, a, p, cal);
    std::vector<WtpReport> out;
    for (const auto& offer : thought_experiment_offers(c)) {
        out.push_back(make_report(c, offer, indifference_salary(c, a, p, cal, offer, baseline)));
    }
    return out;
}

}  // namespace scialloc
