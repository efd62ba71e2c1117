#include <cmath>
#include <random>

#include "doctest.h"
#include "scialloc/errors.hpp"
#include "scialloc/identification.hpp"
#include "scialloc/policy_solver.hpp"
#include "test_support.hpp"

using namespace scialloc;

TEST_CASE("infer_phi") {
    CHECK(infer_phi(50000, 5) == 10000);
    CHECK(infer_phi(0.5, 5) == 1);
    CHECK(infer_phi(26000, 4) == 6500);
    CHECK_THROWS_AS(infer_phi(1000, 0), DomainError);
}

TEST_CASE("infer_gamma") {
    Calibration cal;
    // phi F = 50000, phi R = 100000 with phi = 10000.
    CHECK(infer_gamma({1, 20000, 0}, 10000, 5, 10, cal) == doctest::Approx(3.0 / 7.0).epsilon(1e-15));
    CHECK(infer_gamma({1, 20000, 0}, 1e12, 0, 1e6, cal) < 1e-12);
}

TEST_CASE("simulate then identify recovers attributes") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Calibration cal;
    int interior = 0, fundraisers = 0;
    for (int k = 0; k < 500; ++k) {
        auto r = testing::draw_researcher(rng, cal);
        if (k % 2 == 0) {
            // Push some researchers into the fundraising region.
            r.attributes.fundraising_ability = 2e4 + 2e5 * u(rng);
            r.attributes.tfp *= 1.0 + 0.5 * u(rng);
        }
        const auto s = solve_policy(r.contract, r.attributes, r.prefs, cal);
        if (s.hours_corner) {
            const TimeAllocation alloc{s.research, s.fundraising, s.total_hours};
            const auto est = infer_alpha(r.contract, alloc, r.attributes.funding_intensity,
                                         r.attributes.fundraising_ability, r.prefs, cal);
            CHECK(est.set_identified);
            CHECK(est.tfp <= r.attributes.tfp * (1 + 1e-9));
            continue;
        }
        ++interior;
        const TimeAllocation alloc{s.research, s.fundraising, s.total_hours};
        double gamma = r.attributes.funding_intensity, phi = r.attributes.fundraising_ability;
        if (s.fundraising > 0.0) {
            ++fundraisers;
            const double eg = phi * s.fundraising;
            phi = infer_phi(eg, s.fundraising);
            gamma = infer_gamma(r.contract, phi, s.fundraising, s.research, cal);
            CHECK(std::abs(phi / r.attributes.fundraising_ability - 1) <= 1e-12);
            CHECK(std::abs(gamma - r.attributes.funding_intensity) <= 1e-8);
        }
        const auto est = infer_alpha(r.contract, alloc, gamma, phi, r.prefs, cal);
        CHECK_FALSE(est.set_identified);
        CHECK(std::abs(est.tfp / r.attributes.tfp - 1.0) <= 1e-6);
    }
    CHECK(interior > 100);
    CHECK(fundraisers > 50);
}

TEST_CASE("alpha scaling and monotonicity") {
    std::mt19937_64 rng(32);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Calibration cal;
    for (int k = 0; k < 100; ++k) {
        auto r = testing::draw_researcher(rng, cal);
        const double d = r.contract.duties;
        const double rr = 2.0 + 30.0 * u(rng);
        const TimeAllocation alloc{rr, 0.0, d + rr};
        const double g = r.attributes.funding_intensity;
        const double phi = 1.0;  // keeps the observation on the no-fundraising side
        const auto a1 = infer_alpha(r.contract, alloc, g, phi, r.prefs, cal);
        auto p2 = r.prefs;
        p2.effort_weight *= 2.0;
        const auto a2 = infer_alpha(r.contract, alloc, g, phi, p2, cal);
        CHECK(a2.tfp / a1.tfp ==
              doctest::Approx(std::pow(2.0, 1.0 / (1.0 - r.prefs.output_curvature))).epsilon(1e-12));
        const double h = 1e-5;
        const auto up = infer_alpha(r.contract, {rr + h, 0.0, d + rr + h}, g, phi, r.prefs, cal);
        CHECK(up.tfp > a1.tfp);
    }
}

TEST_CASE("GLM recovers log-link coefficients from noiseless data") {
    std::mt19937_64 rng(33);
    std::normal_distribution<double> z(0.0, 1.0);
    const int n = 2000;
    Eigen::MatrixXd x(n, 4);
    Eigen::VectorXd y(n);
    const double beta[4] = {8.0, 0.4, -0.2, 0.05};
    for (int i = 0; i < n; ++i) {
        const double a = z(rng), b = z(rng);
        x(i, 0) = 1.0;
        x(i, 1) = a;
        x(i, 2) = b;
        x(i, 3) = a * a * a;
        y[i] = std::exp(beta[0] + beta[1] * a + beta[2] * b + beta[3] * a * a * a);
    }
    const auto fit = fit_glm(x, y, GlmFit::Link::Log, {"1", "a", "b", "a3"});
    CHECK(fit.converged);
    for (int j = 0; j < 4; ++j) CHECK(std::abs(fit.coefficients[j] - beta[j]) <= 1e-4);
}

TEST_CASE("fractional logit GLM and collinear columns") {
    std::mt19937_64 rng(34);
    std::normal_distribution<double> z(0.0, 1.0);
    const int n = 500;
    Eigen::MatrixXd x(n, 4);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        const double a = z(rng);
        x(i, 0) = 1.0;
        x(i, 1) = a;
        x(i, 2) = 2.0 * a;  // collinear with column 1
        x(i, 3) = z(rng);
        y[i] = 1.0 / (1.0 + std::exp(-(0.3 - 0.8 * a + 0.2 * x(i, 3))));
    }
    const auto fit = fit_glm(x, y, GlmFit::Link::Logit, {"1", "a", "2a", "c"});
    CHECK(fit.converged);
    REQUIRE(fit.dropped.size() == 1);
    CHECK(fit.dropped[0] == "2a");
    CHECK(fit.coefficients[0] == doctest::Approx(0.3).epsilon(1e-6));
    CHECK(fit.coefficients[1] == doctest::Approx(-0.8).epsilon(1e-6));
    CHECK(fit.coefficients[2] == 0.0);
    CHECK(fit.coefficients[3] == doctest::Approx(0.2).epsilon(1e-6));
}

TEST_CASE("zero-fundraiser models") {
    std::mt19937_64 rng(35);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<ContractState> states;
    std::vector<double> phi, gamma;
    for (int i = 0; i < 200; ++i) {
        states.push_back({5e4 + 1e5 * u(rng), 1e5 * u(rng), 20 * u(rng)});
        phi.push_back(7000.0);
        gamma.push_back(0.35);
    }
    const auto m = fit_zero_fundraiser_models(states, phi, gamma);
    CHECK(m.predict_phi(states[3]) == doctest::Approx(7000.0).epsilon(1e-8));
    CHECK(m.predict_gamma(states[5]) == doctest::Approx(0.35).epsilon(1e-8));
    for (std::size_t j = 1; j < m.phi_model.coefficients.size(); ++j) {
        CHECK(std::abs(m.phi_model.coefficients[j]) <= 1e-8);
    }
    // Predictions stay in range far outside the sample.
    for (int i = 0; i < 50; ++i) {
        const ContractState far{1e6 * u(rng), 1e7 * u(rng), 60 * u(rng)};
        CHECK(m.predict_phi(far) >= 1.0);
        const double g = m.predict_gamma(far);
        CHECK((g > 0.0 && g < 1.0));
    }
    CHECK_THROWS_AS(fit_zero_fundraiser_models(std::span(states).first(10),
                                               std::span(phi).first(10),
                                               std::span(gamma).first(10)),
                    DomainError);
}

TEST_CASE("rescaled zero fundraisers do not fundraise") {
    std::mt19937_64 rng(36);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Calibration cal;
    std::vector<ContractState> states;
    std::vector<double> phi, gamma;
    for (int i = 0; i < 100; ++i) {
        states.push_back({5e4 + 1e5 * u(rng), 1e5 * u(rng), 20 * u(rng)});
        phi.push_back(5e4 * (1.0 + u(rng)));
        gamma.push_back(0.3 + 0.3 * u(rng));
    }
    const auto m = fit_zero_fundraiser_models(states, phi, gamma);
    int rescaled = 0, unchanged = 0;
    for (int k = 0; k < 100; ++k) {
        auto r = testing::draw_researcher(rng, cal);
        if (k % 2) r.contract.duties = 0.0;
        const double rr = 2.0 + 40.0 * u(rng);
        if (r.contract.duties + rr > cal.max_hours - 1e-3) continue;
        const TimeAllocation alloc{rr, 0.0, r.contract.duties + rr};
        const auto z = predict_and_rescale(m, r.contract, alloc, r.prefs, cal);
        CHECK(z.attributes.fundraising_ability <= z.raw_phi);
        const auto s = solve_policy(r.contract, z.attributes, r.prefs, cal);
        CHECK(s.fundraising == 0.0);
        if (!z.set_identified) CHECK(std::abs(s.total_hours - alloc.total_hours) <= 1e-6);
        if (z.rescaled) ++rescaled; else ++unchanged;
        if (!z.rescaled) CHECK(z.attributes.fundraising_ability == z.raw_phi);
    }
    CHECK(rescaled > 0);
}

TEST_CASE("population identification") {
    Calibration cal;
    DeepParams deep;
    const auto empty = identify_population(std::span<const ResearcherRecord>{}, deep, cal);
    CHECK(empty.researchers.empty());
    CHECK(empty.failures.empty());
}
