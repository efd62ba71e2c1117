#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "scialloc/errors.hpp"
#include "scialloc/identification.hpp"
#include "scialloc/policy_solver.hpp"
#include "scialloc/synth_data.hpp"
#include "scialloc/wtp_engine.hpp"

using namespace scialloc;

namespace {

double quantile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double h = double(v.size() - 1) * p;
    const auto lo = static_cast<std::size_t>(h);
    if (lo + 1 >= v.size()) return v.back();
    return v[lo] + (h - double(lo)) * (v[lo + 1] - v[lo]);
}

}  // namespace

TEST_CASE("generation is deterministic per seed") {
    auto cfg = calibrated_defaults();
    cfg.n = 50;
    cfg.seed = 77;
    const auto a = generate_population(cfg);
    const auto b = generate_population(cfg);
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].id == b.records[i].id);
        CHECK(a.records[i].contract.salary == b.records[i].contract.salary);
        CHECK(a.records[i].allocation.total_hours == b.records[i].allocation.total_hours);
        CHECK(a.records[i].wtp_answers == b.records[i].wtp_answers);
    }
    cfg.n = 0;
    CHECK_THROWS_AS(generate_population(cfg), DomainError);
}

TEST_CASE("generated researchers are model consistent") {
    auto cfg = calibrated_defaults();
    cfg.n = 300;
    const auto pop = generate_population(cfg);
    const auto& cal = cfg.calibration;
    for (std::size_t i = 0; i < pop.records.size(); ++i) {
        const auto& r = pop.records[i];
        const auto p = preference_params_from_type(r.type_index, pop.deep);
        const auto s = solve_policy(r.contract, pop.truth[i], p, cal);
        CHECK(s.total_hours == r.allocation.total_hours);
        if (!s.hours_corner) CHECK(std::abs(s.foc_residual) <= 1e-8);
        CHECK(r.expected_extra_funding == pop.truth[i].fundraising_ability * r.allocation.fundraising);
        CHECK(r.wtp_answers[2].has_value() == (r.contract.duties > 0.0));
    }
}

TEST_CASE("calibration targets hold across seeds") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto cfg = calibrated_defaults();
        cfg.n = 500;
        cfg.seed = seed;
        const auto pop = generate_population(cfg);
        double sr = 0, sb = 0;
        int zero_f = 0;
        std::vector<double> alpha, per_dollar;
        for (std::size_t i = 0; i < pop.records.size(); ++i) {
            const auto& r = pop.records[i];
            sr += r.allocation.research;
            sb += cfg.calibration.min_funding + r.contract.guaranteed_funding + r.expected_extra_funding;
            zero_f += r.allocation.fundraising == 0.0;
            alpha.push_back(pop.truth[i].tfp);
            per_dollar.push_back((r.contract.salary - *r.wtp_answers[0]) / kExperimentFundingSmall);
        }
        const double n = double(pop.records.size());
        CHECK(std::abs(sr / n - 18.5) <= 2.0);
        CHECK(std::abs(sb / n / 147100.0 - 1.0) <= 0.2);
        CHECK(zero_f / n > 0.05);
        const double ratio = quantile(alpha, 0.9) / quantile(alpha, 0.1);
        CHECK(ratio >= 20.0);
        CHECK(ratio <= 45.0);
        const double med = quantile(per_dollar, 0.5);
        CHECK(med >= 0.05);
        CHECK(med <= 0.25);
    }
}

TEST_CASE("noiseless generation is recovered by identification") {
    auto cfg = calibrated_defaults();
    cfg.n = 500;
    cfg.seed = 4;
    const auto pop = generate_population(cfg);
    const auto& cal = cfg.calibration;
    const auto id = identify_population(pop.records, pop.deep, cal);
    CHECK(id.failures.empty());
    int zero = 0;
    for (std::size_t i = 0; i < pop.records.size(); ++i) {
        const auto& r = pop.records[i];
        const auto& got = id.researchers[i].attributes;
        const auto p = preference_params_from_type(r.type_index, pop.deep);
        if (r.allocation.fundraising > 0.0) {
            if (r.allocation.total_hours < cal.max_hours) {
                CHECK(std::abs(got.tfp / pop.truth[i].tfp - 1) <= 1e-6);
            }
            CHECK(std::abs(got.funding_intensity / pop.truth[i].funding_intensity - 1) <= 1e-6);
            CHECK(std::abs(got.fundraising_ability / pop.truth[i].fundraising_ability - 1) <= 1e-6);
        } else {
            ++zero;
            const auto s = solve_policy(r.contract, got, p, cal);
            CHECK(s.fundraising == 0.0);
            CHECK(std::abs(s.total_hours - r.allocation.total_hours) <= 1e-6);
        }
    }
    CHECK(zero > 0);
}

TEST_CASE("duty-relief WTP rises with the hourly wage") {
    auto cfg = calibrated_defaults();
    cfg.n = 500;
    cfg.seed = 9;
    const auto pop = generate_population(cfg);
    std::vector<double> wage, relief;
    for (const auto& r : pop.records) {
        if (!r.wtp_answers[2]) continue;
        wage.push_back(r.contract.salary / r.allocation.total_hours);
        relief.push_back(r.contract.salary - *r.wtp_answers[2]);
    }
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < idx.size(); ++i) r[idx[i]] = double(i);
        return r;
    };
    const auto rw = ranks(wage), rr = ranks(relief);
    const double mid = 0.5 * double(wage.size() - 1);
    double cov = 0;
    for (std::size_t i = 0; i < wage.size(); ++i) cov += (rw[i] - mid) * (rr[i] - mid);
    CHECK(cov > 0.0);
}
