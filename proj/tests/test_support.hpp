#pragma once

#include <cmath>
#include <random>

#include "scialloc/core_model.hpp"

namespace scialloc::testing {

/// Homogeneous-row utility parameters reported for the researcher survey.
inline PreferenceParams homogeneous_params() {
    PreferenceParams p;
    p.income_weight = 2.7e-4;
    p.income_curvature = 1.736;
    p.output_curvature = 0.1878;
    p.effort_weight = 1.0e-14;
    p.duty_penalty_exponent = 1.469;
    p.effort_curvature = 5.2e-12;
    return p;
}

/// Parameters with visible effort curvature, for tests that need well-scaled hours.
inline PreferenceParams curved_params() {
    PreferenceParams p;
    p.income_weight = 1e-3;
    p.income_curvature = 1.5;
    p.output_curvature = 0.3;
    p.effort_weight = 1e-4;
    p.duty_penalty_exponent = 1.3;
    p.effort_curvature = 1.2;
    return p;
}

struct RandomResearcher {
    ContractState contract;
    Attributes attributes;
    PreferenceParams prefs;
};

inline void retarget_tfp(RandomResearcher& r, double target_x, const Calibration& cal);

/// Draws a researcher whose hours may land on either branch or at the cap.
inline RandomResearcher draw_researcher(std::mt19937_64& rng, const Calibration& cal) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    RandomResearcher r;
    r.contract.salary = 60000.0 + 140000.0 * u(rng);
    r.contract.guaranteed_funding = u(rng) < 0.2 ? 0.0 : 150000.0 * u(rng);
    r.contract.duties = u(rng) < 0.15 ? 0.0 : 25.0 * u(rng);
    r.attributes.funding_intensity = 0.15 + 0.7 * u(rng);
    r.attributes.fundraising_ability = 1.0 + 20000.0 * u(rng);
    r.prefs = curved_params();
    r.prefs.output_curvature = 0.1 + 0.6 * u(rng);
    r.prefs.effort_curvature = 0.2 + 2.0 * u(rng);
    r.prefs.duty_penalty_exponent = 1.0 + 0.8 * u(rng);
    // Scale alpha so the no-fundraising optimum sits around 5-60 hours beyond duties.
    retarget_tfp(r, 5.0 + 55.0 * u(rng), cal);
    return r;
}

/// Sets alpha so that the no-fundraising hours condition holds at H - D = target_x.
inline void retarget_tfp(RandomResearcher& r, double target_x, const Calibration& cal) {
    const double g = r.attributes.funding_intensity;
    const double e = r.prefs.output_curvature;
    const double b0 = cal.min_funding + r.contract.guaranteed_funding;
    const double log_cost = std::log(r.prefs.effort_weight) +
                            r.prefs.effort_curvature *
                                std::log(target_x + (r.contract.duties > 0.0
                                                         ? std::pow(r.contract.duties, r.prefs.duty_penalty_exponent)
                                                         : 0.0));
    const double log_benefit_unit =
        std::log1p(-g) + (1.0 - e) * g * std::log(b0) + ((1.0 - g) * (1.0 - e) - 1.0) * std::log(target_x);
    r.attributes.tfp = std::exp((log_cost - log_benefit_unit) / (1.0 - e));
}

}  // namespace scialloc::testing

#include <cmath>

namespace scialloc::testing {

/// Brute-force policy oracle: grid over H in (D, H_max] with the given step and,
/// for each H, the output-maximizing F found by ternary search on [0, H - D).
struct GridPolicy {
    double total_hours = 0.0;
    double fundraising = 0.0;
    double utility = -INFINITY;
};

inline double oracle_output(const ContractState& c, const Attributes& a, const Calibration& cal,
                            double h, double f) {
    const double r = h - c.duties - f;
    const double b = cal.min_funding + c.guaranteed_funding + a.fundraising_ability * f;
    return a.tfp * std::pow(b, a.funding_intensity) * std::pow(r, 1.0 - a.funding_intensity);
}

inline double oracle_best_fundraising(const ContractState& c, const Attributes& a,
                                      const Calibration& cal, double h) {
    double lo = 0.0, hi = h - c.duties;
    auto y = [&](double f) { return oracle_output(c, a, cal, h, f); };
    // Output is concave in F; the F = 0 corner is checked explicitly.
    for (int k = 0; k < 200 && hi - lo > 1e-13 * (1.0 + hi); ++k) {
        const double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
        if (y(m1) < y(m2)) lo = m1; else hi = m2;
    }
    const double f = 0.5 * (lo + hi);
    return y(0.0) >= y(f) ? 0.0 : f;
}

inline double oracle_utility(const ContractState& c, const Attributes& a,
                             const PreferenceParams& p, const Calibration& cal, double h,
                             double f) {
    const double y = oracle_output(c, a, cal, h, f);
    const double r = h - c.duties - f;
    const double u1 = p.income_curvature == 1.0
                          ? p.income_weight * std::log(c.salary)
                          : p.income_weight * std::pow(c.salary, 1.0 - p.income_curvature) /
                                (1.0 - p.income_curvature);
    const double u2 = std::pow(y, 1.0 - p.output_curvature) / (1.0 - p.output_curvature);
    const double dt = c.duties > 0.0 ? std::pow(c.duties, p.duty_penalty_exponent) : 0.0;
    const double u3 = p.effort_weight * std::pow(r + f + dt, 1.0 + p.effort_curvature) /
                      (1.0 + p.effort_curvature);
    return u1 + u2 - u3;
}

inline GridPolicy grid_policy(const ContractState& c, const Attributes& a,
                              const PreferenceParams& p, const Calibration& cal,
                              double step = 1e-3) {
    GridPolicy best;
    const int n = static_cast<int>(std::floor((cal.max_hours - c.duties) / step + 1e-9));
    for (int k = 0; k <= n; ++k) {
        double h = cal.max_hours - k * step;
        if (!(h > c.duties)) break;
        const double f = oracle_best_fundraising(c, a, cal, h);
        const double v = oracle_utility(c, a, p, cal, h, f);
        if (v > best.utility) best = {h, f, v};
    }
    return best;
}

}  // namespace scialloc::testing
