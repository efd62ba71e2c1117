#include "scialloc/policy_solver.hpp"

#include <cmath>
#include <sstream>

#include "scialloc/errors.hpp"
#include "scialloc/numerics.hpp"

namespace scialloc {

namespace {

void validate_solver_inputs(const ContractState& c, const Attributes& a,
                            const PreferenceParams& p, const Calibration& cal) {
    validate(cal);
    validate(c, cal);
    validate(p);
    if (!(a.tfp > 0.0) || !std::isfinite(a.tfp)) throw DomainError("tfp must be > 0");
    if (!(a.funding_intensity > 0.0 && a.funding_intensity < 1.0)) {
        throw DomainError("funding intensity must lie in (0,1)");
    }
    // The planner scales phi by the feasibility factor, so only positivity is required here.
    if (!(a.fundraising_ability > 0.0) || !std::isfinite(a.fundraising_ability)) {
        throw DomainError("fundraising ability must be > 0");
    }
}

double base_funding(const ContractState& c, const Calibration& cal) {
    return cal.min_funding + c.guaranteed_funding;
}

double duty_term(double duties, const PreferenceParams& p) {
    return duties > 0.0 ? std::pow(duties, p.duty_penalty_exponent) : 0.0;
}

// log benefit - log cost as a function of work beyond duties x = H - D.
struct LogResidual {
    const ContractState& c;
    const Attributes& a;
    const PreferenceParams& p;
    const Calibration& cal;
    HoursBranch branch;

    HoursFocTerms terms_at(double x) const {
        const double g = a.funding_intensity;
        const double e = p.output_curvature;
        const double b0 = base_funding(c, cal);
        HoursFocTerms t;
        if (branch == HoursBranch::NoFundraising) {
            t.log_benefit = std::log1p(-g) + (1.0 - e) * (std::log(a.tfp) + g * std::log(b0)) +
                            ((1.0 - g) * (1.0 - e) - 1.0) * std::log(x);
        } else {
            const double phi = a.fundraising_ability;
            t.log_benefit =
                (1.0 - e) * (std::log(a.tfp) + g * std::log(g * phi) + (1.0 - g) * std::log1p(-g)) -
                e * std::log(x + b0 / phi);
        }
        t.log_cost = std::log(p.effort_weight) +
                     p.effort_curvature * std::log(x + duty_term(c.duties, p));
        return t;
    }

    double operator()(double x) const {
        const auto t = terms_at(x);
        return t.log_benefit - t.log_cost;
    }
};

}  // namespace

double fundraising_threshold(const ContractState& c, const Attributes& a,
                             const Calibration& cal) {
    const double g = a.funding_intensity;
    return c.duties + (1.0 - g) * base_funding(c, cal) / (g * a.fundraising_ability);
}

double interior_fundraising(double total_hours, const ContractState& c, const Attributes& a,
                            const Calibration& cal) {
    const double thr = fundraising_threshold(c, a, cal);
    if (!(total_hours > thr)) {
        throw DomainError("hours at or below the fundraising threshold: use the F = 0 branch");
    }
    const double g = a.funding_intensity;
    return g * (total_hours - c.duties) - (1.0 - g) * base_funding(c, cal) / a.fundraising_ability;
}

HoursFocTerms hours_foc_terms(double total_hours, HoursBranch branch, const ContractState& c,
                              const Attributes& a, const PreferenceParams& p,
                              const Calibration& cal) {
    const double x = total_hours - c.duties;
    if (!(x > 0.0)) throw DomainError("hours must exceed duties");
    return LogResidual{c, a, p, cal, branch}.terms_at(x);
}

double hours_residual(double total_hours, HoursBranch branch, const ContractState& c,
                      const Attributes& a, const PreferenceParams& p, const Calibration& cal) {
    const double thr = fundraising_threshold(c, a, cal);
    if (branch == HoursBranch::NoFundraising && total_hours > thr) {
        throw DomainError("no-fundraising branch evaluated above the fundraising threshold");
    }
    if (branch == HoursBranch::Fundraising && total_hours < thr) {
        throw DomainError("fundraising branch evaluated below the fundraising threshold");
    }
    const auto t = hours_foc_terms(total_hours, branch, c, a, p, cal);
    return std::exp(t.log_benefit) - std::exp(t.log_cost);
}

PolicySolution evaluate_choice(double total_hours, double fundraising, const ContractState& c,
                               const Attributes& a, const PreferenceParams& p,
                               const Calibration& cal) {
    PolicySolution s;
    s.total_hours = total_hours;
    s.fundraising = fundraising;
    s.research = total_hours - c.duties - fundraising;
    s.budget = total_budget(c, fundraising, a.fundraising_ability, cal);
    s.output = production_output(a, s.budget, s.research);
    s.utility = utility(c.salary, s.output, s.research, s.fundraising, c.duties, p);
    s.fundraising_corner = fundraising == 0.0;
    s.hours_corner = total_hours >= cal.max_hours;
    return s;
}

PolicySolution solve_policy(const ContractState& c, const Attributes& a,
                            const PreferenceParams& p, const Calibration& cal,
                            const SolverOptions& opt) {
    validate_solver_inputs(c, a, p, cal);
    const double d = c.duties;
    const double x_max = cal.max_hours - d;
    const double x_thr = fundraising_threshold(c, a, cal) - d;
    const LogResidual left{c, a, p, cal, HoursBranch::NoFundraising};
    const LogResidual right{c, a, p, cal, HoursBranch::Fundraising};

    auto fail = [&](const std::string& why) {
        std::ostringstream os;
        os.precision(17);
        os << "policy solver: " << why << " (M=" << c.salary << ", G=" << c.guaranteed_funding
           << ", D=" << d << ", alpha=" << a.tfp << ", gamma=" << a.funding_intensity
           << ", phi=" << a.fundraising_ability << ")";
        throw NumericalFailure(os.str());
    };

    RootOptions ropt;
    ropt.x_tolerance = opt.hours_tolerance;
    ropt.f_tolerance = opt.residual_tolerance;
    ropt.max_iterations = opt.max_iterations;

    double x_star = 0.0;
    HoursBranch branch = HoursBranch::NoFundraising;
    bool at_cap = false;
    int iterations = 0;

    auto solve_left = [&](double hi) {
        double lo = std::min(opt.lower_offset, 0.5 * hi);
        double g_lo = left(lo);
        // The left residual diverges to +inf as H -> D+; walk down if needed.
        for (int k = 0; k < 12 && !(g_lo > 0.0); ++k) {
            lo *= 0.01;
            g_lo = left(lo);
        }
        if (!(g_lo > 0.0)) fail("hours residual not positive near duties");
        const double g_hi = left(hi);
        if (g_hi >= 0.0) return false;
        const auto r = bracketed_root(left, lo, hi, g_lo, g_hi, ropt);
        if (!r.converged) fail("hours root did not converge on the no-fundraising branch");
        x_star = r.x;
        iterations += r.iterations;
        return true;
    };

    if (x_thr >= x_max) {
        branch = HoursBranch::NoFundraising;
        if (!solve_left(x_max)) {
            x_star = x_max;
            at_cap = true;
        }
    } else {
        const double g_thr = left(x_thr);
        if (g_thr <= 0.0) {
            branch = HoursBranch::NoFundraising;
            if (!solve_left(x_thr)) x_star = x_thr;
        } else {
            branch = HoursBranch::Fundraising;
            const double g_max = right(x_max);
            if (g_max >= 0.0) {
                x_star = x_max;
                at_cap = true;
            } else {
                const double g_thr_right = right(x_thr);
                const auto r = bracketed_root(right, x_thr, x_max, g_thr_right, g_max, ropt);
                if (!r.converged) fail("hours root did not converge on the fundraising branch");
                x_star = r.x;
                iterations += r.iterations;
            }
        }
    }

    const double h = at_cap ? cal.max_hours : d + x_star;
    double f = 0.0;
    if (branch == HoursBranch::Fundraising) {
        const double g = a.funding_intensity;
        f = std::max(0.0, g * x_star - (1.0 - g) * base_funding(c, cal) / a.fundraising_ability);
    }
    PolicySolution s = evaluate_choice(h, f, c, a, p, cal);
    s.fundraising_corner = (f == 0.0);
    if (s.fundraising_corner) branch = HoursBranch::NoFundraising;
    s.hours_corner = at_cap;
    s.iterations = iterations;

    const auto terms = (branch == HoursBranch::NoFundraising ? left : right).terms_at(x_star);
    const double log_gap = terms.log_benefit - terms.log_cost;
    s.foc_residual = std::expm1(log_gap);
    s.hours_multiplier = at_cap ? std::exp(terms.log_benefit) - std::exp(terms.log_cost) : 0.0;
    if (s.fundraising_corner) {
        // lambda_F = Y^(1-eta) [(1-gamma)/R - gamma*phi/B] >= 0 below the threshold.
        const double g = a.funding_intensity;
        const double y_pow = std::pow(s.output, 1.0 - p.output_curvature);
        s.fundraising_multiplier =
            std::max(0.0, y_pow * ((1.0 - g) / s.research - g * a.fundraising_ability / s.budget));
    }
    return s;
}

}  // namespace scialloc
