#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "scialloc/errors.hpp"
#include "scialloc/wtp_engine.hpp"
#include "test_support.hpp"

using namespace scialloc;

namespace {

double offer_utility(const ContractState& c, const Attributes& a, const PreferenceParams& p,
                     const Calibration& cal, const Offer& o, double salary) {
    const ContractState oc{salary, o.guaranteed_funding, o.duties};
    return solve_policy(oc, a, p, cal).utility;
}

// Golden-section search on |V(offer, m) - V*| using the grid policy oracle.
double nested_oracle_salary(const ContractState& c, const Attributes& a, const PreferenceParams& p,
                            const Calibration& cal, const Offer& o) {
    const auto base = testing::grid_policy(c, a, p, cal);
    const ContractState oc{c.salary, o.guaranteed_funding, o.duties};
    const auto off = testing::grid_policy(oc, a, p, cal);
    auto gap = [&](double m) {
        ContractState cm = oc;
        cm.salary = m;
        return std::abs(testing::oracle_utility(cm, a, p, cal, off.total_hours, off.fundraising) -
                        base.utility);
    };
    const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = 1.0, hi = 2.0 * c.salary;
    double x1 = hi - invphi * (hi - lo), x2 = lo + invphi * (hi - lo);
    double f1 = gap(x1), f2 = gap(x2);
    while (hi - lo > 1e-4) {
        if (f1 < f2) {
            hi = x2; x2 = x1; f2 = f1;
            x1 = hi - invphi * (hi - lo); f1 = gap(x1);
        } else {
            lo = x1; x1 = x2; f1 = f2;
            x2 = lo + invphi * (hi - lo); f2 = gap(x2);
        }
    }
    return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("thought experiment offers") {
    const ContractState c{100000, 50000, 10};
    const auto offers = thought_experiment_offers(c);
    REQUIRE(offers.size() == 4);
    CHECK(offers[0].guaranteed_funding == 300000);
    CHECK(offers[1].guaranteed_funding == 1050000);
    CHECK(offers[2].duties == 0.0);
    CHECK(offers[3].duties == doctest::Approx(10 + 4.6153846153846).epsilon(1e-12));
    CHECK(kExperimentExtraDutyHours == doctest::Approx(4.6154).epsilon(1e-4));
    const auto no_duty = thought_experiment_offers({100000, 50000, 0});
    REQUIRE(no_duty.size() == 3);
    for (const auto& o : no_duty) CHECK(o.label != 3);
}

TEST_CASE("identity and zero-delta offers") {
    Calibration cal;
    const auto p = testing::homogeneous_params();
    const ContractState c{100000, 50000, 10};
    const Attributes a{1.0, 0.4, 5000};
    CHECK(indifference_salary(c, a, p, cal, {c.guaranteed_funding, c.duties, 0}) == c.salary);
    const auto rep = make_report(c, {c.guaranteed_funding, c.duties, 0}, c.salary);
    CHECK(rep.wtp == 0.0);
}

TEST_CASE("per-unit conversions") {
    const ContractState c{100000, 50000, 10};
    const auto r1 = make_report(c, {300000, 10, 1}, 75000);
    CHECK(r1.per_dollar.value() == doctest::Approx(0.10).epsilon(1e-15));
    CHECK_FALSE(r1.per_hour.has_value());
    const auto r3 = make_report(c, {50000, 0, 3}, 90000);
    CHECK(r3.per_hour.value() == doctest::Approx(1000.0).epsilon(1e-15));
}

TEST_CASE("E1 indifference salary matches the nested grid oracle") {
    Calibration cal;
    const auto p = testing::homogeneous_params();
    const ContractState c{100000, 50000, 10};
    const Attributes a{1.0, 0.4, 5000};
    const Offer o{c.guaranteed_funding + 250000, c.duties, 1};
    // With the literal row, output utility dwarfs the salary term: no salary
    // above $1 offsets the offer, and the engine must say so.
    CHECK_THROWS_AS(indifference_salary(c, a, p, cal, o), UnboundedCompensation);
    auto pw = p;
    pw.income_weight = 1e3;
    const double m = indifference_salary(c, a, pw, cal, o);
    CHECK(m < c.salary);
    CHECK(m > 1.0);
    CHECK(std::abs(m - nested_oracle_salary(c, a, pw, cal, o)) <= 1.0);
}

TEST_CASE("indifference salary matches the nested oracle with interior hours") {
    std::mt19937_64 rng(12);
    Calibration cal;
    int checked = 0;
    for (int k = 0; k < 6; ++k) {
        auto r = testing::draw_researcher(rng, cal);
        r.prefs.income_weight = 1e3;
        const Offer o{r.contract.guaranteed_funding + 250000, r.contract.duties, 1};
        double m;
        try {
            m = indifference_salary(r.contract, r.attributes, r.prefs, cal, o);
        } catch (const UnboundedCompensation&) {
            continue;
        }
        const double ref = nested_oracle_salary(r.contract, r.attributes, r.prefs, cal, o);
        CHECK(std::abs(m - ref) <= 1.0);
        ++checked;
    }
    CHECK(checked >= 3);
}

TEST_CASE("indifference exactness and WTP properties over a population") {
    std::mt19937_64 rng(500);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Calibration cal;
    int reports = 0;
    for (int k = 0; k < 500; ++k) {
        auto r = testing::draw_researcher(rng, cal);
        r.prefs.income_weight = 1e3;
        const auto& c = r.contract;
        const auto base = solve_policy(c, r.attributes, r.prefs, cal);
        std::vector<WtpReport> reps;
        try {
            reps = run_thought_experiments(c, r.attributes, r.prefs, cal);
        } catch (const UnboundedCompensation&) {
            continue;
        }
        for (const auto& rep : reps) {
            const double v = offer_utility(c, r.attributes, r.prefs, cal, rep.offer,
                                           rep.indifference_salary);
            CHECK(std::abs(v - base.utility) <= 1e-10 * std::abs(base.utility));
            if (rep.offer.label == 1 || rep.offer.label == 2) CHECK(rep.wtp >= 0.0);
            if (rep.offer.label == 4) CHECK(rep.wtp <= 0.0);
            ++reports;
        }
        const auto& w1 = reps[0];
        const auto& w2 = reps[1];
        CHECK(w2.wtp >= w1.wtp);
        CHECK(w2.wtp <= 4.0 * w1.wtp + 1e-9 * std::abs(c.salary));
    }
    CHECK(reports > 1000);
}

TEST_CASE("offers that no salary can compensate") {
    Calibration cal;
    PreferenceParams p = testing::curved_params();
    p.income_weight = 1e-30;  // money is nearly worthless
    const ContractState c{100000, 50000, 10};
    const Attributes a{0.05, 0.4, 5000};
    CHECK_THROWS_AS(indifference_salary(c, a, p, cal, {c.guaranteed_funding, 50.0, 4}),
                    UnboundedCompensation);
    CHECK_THROWS_AS(indifference_salary(c, a, p, cal, {c.guaranteed_funding + 1e6, 10.0, 2}),
                    UnboundedCompensation);
    CHECK_THROWS_AS(indifference_salary(c, a, p, cal, {c.guaranteed_funding, 62.0, 4}), DomainError);
}
