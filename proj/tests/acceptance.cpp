// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
// With an argument N only criterion N runs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "cli.hpp"
#include "json.hpp"
#include "scialloc/analysis.hpp"
#include "scialloc/gmm_estimator.hpp"
#include "scialloc/identification.hpp"
#include "scialloc/oracle_examples.hpp"
#include "scialloc/planner.hpp"
#include "scialloc/policy_solver.hpp"
#include "scialloc/synth_data.hpp"
#include "scialloc/type_index.hpp"
#include "test_support.hpp"

using namespace scialloc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

// 1. Generic numeric WTP against the linear-production closed form.
Outcome closed_form_oracle() {
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
        const double w = 0.1 + 5 * u(rng), c = 0.1 + 3 * u(rng), psi = 1.2 + 2 * u(rng);
        const double l = 0.2 + 10 * u(rng), delta = 0.01 + 3 * u(rng);
        const double numeric = oracle::generic_wtp(oracle::app1_producer(w, c, psi, l), delta);
        const double exact = oracle::app1_wtp_closed_form(w, c, psi, l, delta);
        worst = std::max(worst, std::abs(numeric / exact - 1.0));
    }
    return {worst <= 1e-8, "max rel. error " + fmt("%.2e", worst) + " over 100 draws"};
}

// 2. Decreasing returns with linear costs: WTP does not move with alpha.
Outcome non_identification() {
    struct Instance {
        double w, beta, delta;
    };
    double worst = 0.0;
    for (const auto& in : {Instance{3.0, 0.5, 0.02}, Instance{1.5, 0.3, 0.05}, Instance{0.8, 0.7, 0.1}}) {
        // Smallest alpha must still satisfy l* >= delta.
        const double a0 = in.w / in.beta * std::pow(1.5 * in.delta, 1.0 - in.beta);
        double lo = INFINITY, hi = -INFINITY;
        for (int k = 0; k <= 40; ++k) {
            const double alpha = a0 * (1.0 + 4.0 * k / 40.0);
            const double v = oracle::generic_wtp(oracle::app2_producer(in.w, in.beta, alpha), in.delta);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        worst = std::max(worst, (hi - lo) / (in.w * in.delta));
    }
    return {worst < 1e-7, "max WTP spread " + fmt("%.2e", worst) + " x w*Delta over a 5x alpha span"};
}

// 3. Policy solver optimality, FOC residuals and kink continuity.
Outcome policy_optimality() {
    std::mt19937_64 rng(303);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Calibration cal;
    int beaten = 0;
    double foc = 0.0, jump = 0.0;
    for (int k = 0; k < 1000; ++k) {
        const auto r = testing::draw_researcher(rng, cal);
        const auto& c = r.contract;
        const auto s = solve_policy(c, r.attributes, r.prefs, cal);
        const double tol = 1e-12 * std::abs(s.utility);
        for (int j = 0; j < 1000; ++j) {
            const double h = c.duties + (cal.max_hours - c.duties) * std::max(1e-9, u(rng));
            const double f = (h - c.duties) * u(rng) * 0.999;
            if (evaluate_choice(h, f, c, r.attributes, r.prefs, cal).utility > s.utility + tol) ++beaten;
        }
        if (!s.hours_corner) foc = std::max(foc, std::abs(s.foc_residual));
        const double thr = fundraising_threshold(c, r.attributes, cal);
        const double left = hours_residual(thr, HoursBranch::NoFundraising, c, r.attributes, r.prefs, cal);
        const double right = hours_residual(thr, HoursBranch::Fundraising, c, r.attributes, r.prefs, cal);
        const double scale =
            std::max({1.0, std::abs(left), r.prefs.effort_weight * std::pow(thr, r.prefs.effort_curvature)});
        jump = std::max(jump, std::abs(left - right) / scale);
    }
    std::ostringstream os;
    os << beaten << " of 1e6 perturbations beat the solution; max FOC residual " << fmt("%.2e", foc)
       << "; max kink jump " << fmt("%.2e", jump);
    return {beaten == 0 && foc <= 1e-8 && jump <= 1e-9, os.str()};
}

// 4. Simulate, identify, compare with the truth.
Outcome identification_roundtrip() {
    auto cfg = calibrated_defaults();
    cfg.n = 500;
    cfg.seed = 4;
    const auto pop = generate_population(cfg);
    const auto& cal = cfg.calibration;
    const auto id = identify_population(pop.records, pop.deep, cal);
    double worst = 0.0;
    int interior = 0, zero = 0, zero_ok = 0;
    for (std::size_t i = 0; i < pop.records.size(); ++i) {
        const auto& r = pop.records[i];
        const auto& got = id.researchers[i].attributes;
        const auto& truth = pop.truth[i];
        if (r.allocation.fundraising > 0.0) {
            if (r.allocation.total_hours >= cal.max_hours) continue;
            ++interior;
            worst = std::max({worst, std::abs(got.tfp / truth.tfp - 1.0),
                              std::abs(got.funding_intensity / truth.funding_intensity - 1.0),
                              std::abs(got.fundraising_ability / truth.fundraising_ability - 1.0)});
        } else {
            ++zero;
            const auto s = solve_policy(r.contract, got, preference_params_from_type(r.type_index, pop.deep), cal);
            zero_ok += s.fundraising == 0.0;
        }
    }
    std::ostringstream os;
    os << "max rel. error " << fmt("%.2e", worst) << " over " << interior << " interior researchers; F* = 0 for "
       << zero_ok << "/" << zero << " zero fundraisers; " << id.failures.size() << " failures";
    return {worst <= 1e-6 && zero_ok == zero && zero > 0 && id.failures.empty(), os.str()};
}

// 5. Method-of-moments fit from the full starting grid.
Outcome gmm_recovery() {
    auto cfg = calibrated_defaults();
    cfg.n = 500;
    cfg.seed = 1;
    cfg.gamma_law = GammaLaw::StateLogistic;
    const auto pop = generate_population(cfg);
    const EstimationConfig ec;
    const auto a = estimate(pop.records, ec, cfg.calibration);
    const auto b = estimate(pop.records, ec, cfg.calibration);
    double worst = 0.0;
    for (const auto& row : a.residuals)
        for (const auto& v : row)
            if (v) worst = std::max(worst, std::abs(*v));
    const bool same = a.params.to_array() == b.params.to_array() && a.loss == b.loss;
    std::ostringstream os;
    os << "max |residual| $" << fmt("%.3g", worst) << " after " << a.evaluations << " evaluations from "
       << ec.grid.size() << " grid points; rerun " << (same ? "identical" : "DIFFERS");
    return {worst <= 10.0 && same && ec.grid.size() == 216, os.str()};
}

// 6. Planner correctness.
std::vector<PlannerResearcher> field_population(int n, std::uint64_t seed, Calibration& cal) {
    auto cfg = calibrated_defaults();
    cfg.n = n;
    cfg.seed = seed;
    cfg.fields = {cfg.fields[3]};
    cfg.fields[0].share = 1.0;
    const auto pop = generate_population(cfg);
    cal = cfg.calibration;
    std::vector<PlannerResearcher> out;
    for (std::size_t i = 0; i < pop.records.size(); ++i) {
        const auto& r = pop.records[i];
        out.push_back({r.id, r.field, r.contract, pop.truth[i], preference_params_from_type(r.type_index, pop.deep),
                       r.expected_extra_funding});
    }
    return out;
}

Outcome planner_correctness() {
    Calibration cal;
    // Two non-fundraisers with a 1.2x productivity gap, against a 1e4-step grid.
    // The optimum is interior; at larger gaps it is the corner.
    auto base = field_population(10, 4, cal)[1];
    base.attributes.fundraising_ability = 1.0;
    base.expected_extra_funding = 0.0;
    const double g_tot = 120000.0;
    std::vector<PlannerResearcher> two{base, base};
    two[1].id = "b";
    two[0].contract.guaranteed_funding = 0.7 * g_tot;
    two[1].contract.guaranteed_funding = 0.3 * g_tot;
    two[1].attributes.tfp *= 1.2;
    const auto p2 = make_planner_problem(two, PlannerObjective::Output, {true, false}, 1.0, cal);
    const auto r2 = optimize_allocation(p2);
    constexpr int kSteps = 10000;
    std::vector<double> values(kSteps + 1);
    for (int k = 0; k <= kSteps; ++k) {
        std::vector<ContractState> alloc{two[0].contract, two[1].contract};
        alloc[0].guaranteed_funding = g_tot * k / kSteps;
        alloc[1].guaranteed_funding = g_tot - alloc[0].guaranteed_funding;
        values[k] = aggregate_objective(p2, alloc, 1.0);
    }
    const auto best = std::max_element(values.begin(), values.end());
    const auto kb = best - values.begin();
    double step = 0.0;
    if (kb > 0) step = std::max(step, *best - values[kb - 1]);
    if (kb < kSteps) step = std::max(step, *best - values[kb + 1]);
    const double g_err = std::abs(r2.contracts[0].guaranteed_funding - g_tot * double(kb) / kSteps);
    const bool interior = kb > 0 && kb < kSteps;
    const bool brute = interior && std::abs(r2.objective - *best) <= step && g_err <= g_tot / kSteps;

    double worst_sd = 0.0, worst_cons = 0.0;
    int improved = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto rs = field_population(200, seed, cal);
        const auto p = make_planner_problem(rs, PlannerObjective::Output, {true, true}, 1.0, cal);
        const auto res = optimize_allocation(p);
        improved += res.objective >= res.actual_objective;
        double g = 0.0, d = 0.0;
        for (const auto& c : res.contracts) {
            g += c.guaranteed_funding;
            d += c.duties;
        }
        worst_cons = std::max({worst_cons, std::abs(g / p.total_funding - 1.0), std::abs(d / p.total_duties - 1.0)});
        std::vector<double> mv;
        for (std::size_t i = 0; i < rs.size(); ++i) {
            const auto& m = res.marginals[i];
            if (!m.one_sided_g && res.contracts[i].guaranteed_funding > 0.0) mv.push_back(m.output_g);
        }
        const double mean = std::accumulate(mv.begin(), mv.end(), 0.0) / double(mv.size());
        double ss = 0.0;
        for (double x : mv) ss += (x - mean) * (x - mean);
        worst_sd = std::max(worst_sd, std::sqrt(ss / double(mv.size())) / std::abs(mean));
    }
    std::ostringstream os;
    os << "2-researcher objective gap " << fmt("%.2e", std::abs(r2.objective - *best) / step)
       << " grid steps, G off by " << fmt("%.2f", g_err) << " of step " << fmt("%.0f", g_tot / kSteps)
       << "; max sd/|mean| of dY/dG " << fmt("%.2e", worst_sd) << "; max conservation error "
       << fmt("%.2e", worst_cons) << "; objective >= actual in " << improved << "/10";
    return {brute && worst_sd <= 1e-4 && worst_cons <= 1e-8 && improved == 10, os.str()};
}

// 7. Composition-effect algebra.
Outcome composition_algebra() {
    const CompositionInput in{{2e4, 1e5, 0.0, 5e4}, {1e5, 1.2e5, 4e4, 3e5}, {0.3, 0.7, 0.5, 0.4}, {1.0, 4.0, 0.5, 2.0}};
    std::vector<double> err;
    for (double d : {1e-2, 1e-3, 1e-4}) {
        const auto r = composition_effect(in, d);
        err.push_back(std::max(std::abs(r.approx_dlog_budget - r.exact_dlog_budget),
                               std::abs(r.approx_dlog_output - r.exact_dlog_output)) /
                      d);
    }
    // Relative error falls with d at rate one.
    bool order_one = true;
    for (std::size_t k = 0; k < err.size(); ++k) order_one = order_one && err[k] <= 1e-2 * std::pow(10.0, -double(k));
    for (std::size_t k = 1; k < err.size(); ++k) order_one = order_one && err[k] <= 0.2 * err[k - 1];

    const CompositionInput pos{{1e5, 9e4, 1e3}, {1e5, 1e5, 2e5}, {0.9, 0.85, 0.1}, {10.0, 8.0, 1.0}};
    const auto rp = composition_effect(pos, 0.05);
    const bool faster = rp.exact_dlog_output > rp.exact_dlog_budget;

    std::mt19937_64 rng(707);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int violations = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        CompositionInput x;
        for (int i = 0; i < 8; ++i) {
            const double b = 1e4 + 3e5 * u(rng);
            x.budget.push_back(b);
            x.guaranteed.push_back(b * u(rng));
            x.intensity.push_back(0.05 + 0.9 * u(rng));
            x.output.push_back(0.1 + u(rng));
        }
        const double d = 0.5 * u(rng);
        const auto r = composition_effect(x, d);
        violations += r.exact_dlog_budget > std::log1p(d) + 1e-15 || r.approx_dlog_budget > d + 1e-15;
    }
    std::ostringstream os;
    os << "rel. error at d = 1e-2, 1e-3, 1e-4: " << fmt("%.2e", err[0]) << ", " << fmt("%.2e", err[1]) << ", "
       << fmt("%.2e", err[2]) << "; positive-covariance dlnY - dlnB = "
       << fmt("%.2e", rp.exact_dlog_output - rp.exact_dlog_budget) << "; dlnB > dlnG in " << violations
       << "/1000 random instances";
    return {order_one && faster && violations == 0, os.str()};
}

// 8. Funding-growth equivalence.
Outcome funding_growth() {
    auto cfg = calibrated_defaults();
    cfg.n = 200;
    cfg.seed = 4;
    const auto pop = generate_population(cfg);
    const auto& cal = cfg.calibration;
    GrowthResearcher one{pop.records[0].contract, pop.truth[0],
                         preference_params_from_type(pop.records[0].type_index, pop.deep), pop.records[0].allocation};
    one.contract.guaranteed_funding = 60000.0;
    one.allocation.fundraising = 0.0;
    const std::vector<GrowthResearcher> same(25, one);
    const double b = total_budget(one.contract, 0.0, 1.0, cal);
    const double y = production_output(one.attributes, b, one.allocation.research);
    double worst = 0.0;
    for (double t : {1.2, 2.0, 2.6, 3.5}) {
        const auto g = funding_growth_equivalence(same, t * 25.0 * y, GrowthMode::Mechanical, cal);
        const double expected = (std::pow(t, 1.0 / one.attributes.funding_intensity) - 1.0) * b / 60000.0;
        worst = std::max(worst, std::abs(g.g_growth / expected - 1.0));
    }

    // Output target +160%, each mode from its own baseline.
    int below = 0;
    std::ostringstream seeds;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto c = calibrated_defaults();
        c.n = 500;
        c.seed = seed;
        const auto p = generate_population(c);
        std::vector<GrowthResearcher> rs;
        double y_mech = 0.0, y_beh = 0.0;
        for (std::size_t i = 0; i < p.records.size(); ++i) {
            const auto& r = p.records[i];
            rs.push_back({r.contract, p.truth[i], preference_params_from_type(r.type_index, p.deep), r.allocation});
            const double bb = total_budget(r.contract, r.allocation.fundraising, p.truth[i].fundraising_ability, cal);
            y_mech += production_output(p.truth[i], bb, r.allocation.research);
            y_beh += solve_policy(r.contract, p.truth[i], rs.back().prefs, cal).output;
        }
        const auto mech = funding_growth_equivalence(rs, 2.6 * y_mech, GrowthMode::Mechanical, cal);
        const auto beh = funding_growth_equivalence(rs, 2.6 * y_beh, GrowthMode::Behavioral, cal);
        below += beh.budget_growth < mech.budget_growth;
        if (seed == 1) {
            seeds << "seed 1 B growth behavioral " << fmt("%.0f", 100 * beh.budget_growth) << "% vs mechanical "
                  << fmt("%.0f", 100 * mech.budget_growth) << "%";
        }
    }
    std::ostringstream os;
    os << "closed-form max rel. error " << fmt("%.2e", worst) << "; behavioral < mechanical in " << below
       << "/10 seeds (" << seeds.str() << ")";
    return {worst <= 1e-6 && below == 10, os.str()};
}

// 9. Diagnostics.
Outcome diagnostics() {
    int covered = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        std::mt19937_64 rng(900 + seed);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::vector<double> v(100000);
        for (auto& x : v) x = std::pow(1.0 - u(rng), -1.0 / 2.0);
        const auto f = power_law_fit(v, 0.2);
        covered += std::abs(f.exponent - 2.0) <= 1.959963984540054 * f.std_error;
    }

    auto cfg = calibrated_defaults();
    cfg.n = 500;
    cfg.seed = 1;
    const auto pop = generate_population(cfg);
    ProductionSample s;
    std::vector<double> alpha;
    for (std::size_t i = 0; i < pop.records.size(); ++i) {
        const auto& a = pop.truth[i];
        const auto& r = pop.records[i];
        const double b = total_budget(r.contract, r.allocation.fundraising, a.fundraising_ability, cfg.calibration);
        s.tfp.push_back(a.tfp);
        s.intensity.push_back(a.funding_intensity);
        s.budget.push_back(b);
        s.research.push_back(r.allocation.research);
        s.output.push_back(production_output(a, b, r.allocation.research));
        alpha.push_back(a.tfp);
    }
    const auto d = variance_decomposition(s);
    const double ratio = tfp_ratio_90_10(alpha);
    std::ostringstream os;
    os << "power-law 95% CI covers 2.0 in " << covered << "/20 seeds; variance identity residual "
       << fmt("%.2e", std::abs(d.residual)) << "; 90-10 alpha ratio " << fmt("%.1f", ratio);
    return {covered >= 19 && std::abs(d.residual) <= 1e-10 && ratio >= 20.0 && ratio <= 45.0, os.str()};
}

// 10. simulate -> estimate -> reallocate through the command line.
Outcome end_to_end() {
    const auto dir = fs::temp_directory_path() / "scialloc_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto data = (dir / "data.csv").string(), results = (dir / "results.json").string();
    const auto cf = (dir / "counterfactual.csv").string(), summary = (dir / "summary.json").string();
    std::ostringstream out, err;
    auto step = [&](std::vector<std::string> args) { return cli::run(args, out, err); };
    if (step({"simulate", "--n", "500", "--seed", "1", "--out", data}) != 0) return {false, "simulate failed: " + err.str()};
    if (step({"estimate", "--data", data, "--out", results}) != 0) return {false, "estimate failed: " + err.str()};
    if (step({"reallocate", "--data", data, "--results", results, "--out", cf, "--summary", summary, "--objective",
              "output", "--levers", "G,D"}) != 0) {
        return {false, "reallocate failed: " + err.str()};
    }
    std::ifstream in(summary);
    const auto j = nlohmann::json::parse(in);
    double output = NAN, budget = NAN;
    for (const auto& l : j["summary"]) {
        if (l["label"] == "output_mean") output = l["change"].get<double>();
        if (l["label"] == "budget_mean") budget = l["change"].get<double>();
    }
    const double beta_b = j["wedges"]["budget"]["no_covariates"]["beta"].get<double>();
    const double beta_r = j["wedges"]["research"]["no_covariates"]["beta"].get<double>();
    std::ifstream rin(results);
    const auto est = nlohmann::json::parse(rin);
    std::ostringstream os;
    os << "output " << fmt("%+.1f", 100 * output) << "%, budget " << fmt("%+.2e", 100 * budget)
       << "%, wedge beta B " << fmt("%.3f", beta_b) << ", R " << fmt("%.3f", beta_r) << " (estimate max |residual| $"
       << fmt("%.3g", est["max_abs_residual"].get<double>()) << ")";
    const bool pass = output > 0.5 && std::abs(budget) <= 1e-6 && beta_b > 0.0 && beta_b < 1.0 && beta_r > 0.0 &&
                      beta_r < 1.0;
    fs::remove_all(dir);
    return {pass, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
    const int only = argc > 1 ? std::atoi(argv[1]) : 0;
    struct Criterion {
        int id;
        double budget_seconds;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, 5, closed_form_oracle},      {2, 5, non_identification}, {3, 60, policy_optimality},
        {4, 120, identification_roundtrip}, {5, 1800, gmm_recovery},  {6, 600, planner_correctness},
        {7, 60, composition_algebra},    {8, 600, funding_growth},   {9, 600, diagnostics},
        {10, 3600, end_to_end},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        if (only != 0 && c.id != only) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs <= c.budget_seconds;
        const bool pass = o.pass && in_time;
        failed += !pass;
        std::cout << "criterion " << c.id << ": " << (pass ? "PASS" : "FAIL") << " | " << o.detail << " | "
                  << fmt("%.1f", secs) << " s of " << fmt("%.0f", c.budget_seconds) << " s" << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
