#include "scialloc/gmm_estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "scialloc/errors.hpp"
#include "scialloc/numerics.hpp"
#include "scialloc/parallel.hpp"
#include "scialloc/policy_solver.hpp"
#include "scialloc/wtp_engine.hpp"

namespace scialloc {

namespace {

struct ResearcherLoss {
    double sum = 0.0;
    bool failed = false;
    std::string reason;
    ExperimentValues predicted{};
};

ResearcherLoss researcher_loss(const ResearcherRecord& r, const DeepParams& deep,
                               const GmmProblem& problem) {
    ResearcherLoss out;
    try {
        const auto p = preference_params_from_type(r.type_index, deep);
        validate(p);
        const auto id = identify_researcher(r, p, problem.models, problem.calibration);
        const auto& cal = problem.calibration;
        const auto baseline = solve_policy(r.contract, id.attributes, p, cal);
        double terms[kNumExperiments];
        int n = 0;
        for (const auto& offer : thought_experiment_offers(r.contract)) {
            const auto& obs = r.wtp_answers[static_cast<std::size_t>(offer.label - 1)];
            if (!obs) continue;
            const double m = indifference_salary(r.contract, id.attributes, p, cal, offer, baseline);
            out.predicted[static_cast<std::size_t>(offer.label - 1)] = m;
            const double e = *obs - m;
            terms[n++] = e * e;
        }
        out.sum = compensated_sum(std::span<const double>(terms, static_cast<std::size_t>(n)));
        if (!std::isfinite(out.sum)) throw NumericalFailure("non-finite loss contribution");
    } catch (const std::exception& e) {
        out.failed = true;
        out.reason = e.what();
        out.sum = kFailurePenalty;
        out.predicted = {};
    }
    return out;
}

double simplex_diameter(const std::vector<std::vector<double>>& pts, std::size_t best) {
    double d = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        for (std::size_t j = 0; j < pts[i].size(); ++j) {
            d = std::max(d, std::abs(pts[i][j] - pts[best][j]));
        }
    }
    return d;
}

}  // namespace

GmmProblem make_gmm_problem(std::span<const ResearcherRecord> dataset, const Calibration& cal) {
    GmmProblem g;
    g.dataset = dataset;
    g.calibration = cal;
    g.models = fit_zero_fundraiser_models(dataset, cal);
    g.order.resize(dataset.size());
    std::iota(g.order.begin(), g.order.end(), std::size_t{0});
    std::stable_sort(g.order.begin(), g.order.end(),
                     [&](std::size_t a, std::size_t b) { return dataset[a].id < dataset[b].id; });
    return g;
}

LossEvaluation evaluate_loss(const DeepParams& deep, const GmmProblem& problem,
                             bool keep_predictions) {
    const auto& data = problem.dataset;
    std::vector<ResearcherLoss> parts(data.size());
    parallel_for(data.size(), [&](std::size_t i) { parts[i] = researcher_loss(data[i], deep, problem); });

    LossEvaluation ev;
    std::vector<double> sums;
    sums.reserve(data.size());
    for (std::size_t i : problem.order) {
        sums.push_back(parts[i].sum);
        if (parts[i].failed) {
            ++ev.penalized;
            ev.failures.push_back({data[i].id, parts[i].reason});
        }
    }
    ev.loss = compensated_sum(sums);
    if (keep_predictions) {
        ev.predicted.reserve(data.size());
        for (auto& p : parts) ev.predicted.push_back(p.predicted);
    }
    return ev;
}

double gmm_loss(const DeepParams& deep, std::span<const ResearcherRecord> dataset,
                const Calibration& cal) {
    return evaluate_loss(deep, make_gmm_problem(dataset, cal)).loss;
}

std::vector<DeepParams> initial_grid() {
    const double omegas[] = {0.1, 1.0, 10.0};
    const double psis[] = {1e-5, 1.0, 10.0};
    const double sigma0s[] = {-100.0, 0.0};
    const double eta0s[] = {std::log(0.8) - std::log(0.2), 0.0, std::log(0.2) - std::log(0.8)};
    const double xi0s[] = {-11.5, std::log(2.0)};
    const double zeta0s[] = {-11.5, 0.0};
    std::vector<DeepParams> grid;
    for (double om : omegas)
        for (double ps : psis)
            for (double s0 : sigma0s)
                for (double e0 : eta0s)
                    for (double x0 : xi0s)
                        for (double z0 : zeta0s) {
                            DeepParams d;
                            d.income_weight = om;
                            d.effort_weight = ps;
                            d.sigma0 = s0;
                            d.eta0 = e0;
                            d.xi0 = x0;
                            d.zeta0 = z0;
                            grid.push_back(d);
                        }
    return grid;
}

std::vector<double> to_search_space(const DeepParams& d) {
    auto a = d.to_array();
    a[0] = std::log(a[0]);
    a[1] = std::log(a[1]);
    return {a.begin(), a.end()};
}

DeepParams from_search_space(std::span<const double> x) {
    if (x.size() != DeepParams::kSize) throw DomainError("search vector has the wrong length");
    std::array<double, DeepParams::kSize> a;
    std::copy(x.begin(), x.end(), a.begin());
    a[0] = std::exp(a[0]);
    a[1] = std::exp(a[1]);
    return DeepParams::from_array(a);
}

SimplexResult simplex_minimize(const std::function<double(std::span<const double>)>& f,
                               std::vector<double> x0, const SimplexOptions& opt) {
    const std::size_t n = x0.size();
    SimplexResult res;
    if (n == 0) throw DomainError("simplex needs at least one coordinate");
    auto eval = [&](const std::vector<double>& x) {
        ++res.evaluations;
        const double v = f(x);
        return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
    };

    std::vector<std::vector<double>> pts(n + 1, x0);
    for (std::size_t j = 0; j < n; ++j) {
        double step = opt.initial_steps.empty() ? std::max(0.05 * std::abs(x0[j]), 0.05)
                                                : opt.initial_steps[j];
        pts[j + 1][j] += step;
    }
    std::vector<double> fv(n + 1);
    for (std::size_t i = 0; i <= n; ++i) fv[i] = eval(pts[i]);
    if (!std::isfinite(fv[0])) throw DomainError("simplex start point is not finite");

    std::vector<std::size_t> idx(n + 1);
    auto sort_vertices = [&] {
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return fv[a] < fv[b]; });
        std::vector<std::vector<double>> p2(n + 1);
        std::vector<double> f2(n + 1);
        for (std::size_t i = 0; i <= n; ++i) {
            p2[i] = std::move(pts[idx[i]]);
            f2[i] = fv[idx[i]];
        }
        pts = std::move(p2);
        fv = std::move(f2);
    };
    auto converged = [&] {
        return fv[n] - fv[0] <= opt.loss_tolerance &&
               simplex_diameter(pts, 0) <= opt.parameter_tolerance;
    };

    sort_vertices();
    std::vector<double> centroid(n), xr(n), xe(n), xc(n);
    while (true) {
        if (converged()) {
            res.converged = true;
            break;
        }
        if (res.evaluations >= opt.max_evaluations) break;
        ++res.iterations;
        std::fill(centroid.begin(), centroid.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) centroid[j] += pts[i][j];
        for (auto& c : centroid) c /= double(n);

        for (std::size_t j = 0; j < n; ++j)
            xr[j] = centroid[j] + opt.reflection * (centroid[j] - pts[n][j]);
        const double fr = eval(xr);
        if (fr < fv[0]) {
            for (std::size_t j = 0; j < n; ++j)
                xe[j] = centroid[j] + opt.expansion * (xr[j] - centroid[j]);
            const double fe = eval(xe);
            if (fe < fr) {
                pts[n] = xe;
                fv[n] = fe;
            } else {
                pts[n] = xr;
                fv[n] = fr;
            }
        } else if (fr < fv[n - 1]) {
            pts[n] = xr;
            fv[n] = fr;
        } else {
            const bool outside = fr < fv[n];
            for (std::size_t j = 0; j < n; ++j) {
                xc[j] = outside ? centroid[j] + opt.contraction * (xr[j] - centroid[j])
                                : centroid[j] + opt.contraction * (pts[n][j] - centroid[j]);
            }
            const double fc = eval(xc);
            if (fc < (outside ? fr : fv[n])) {
                pts[n] = xc;
                fv[n] = fc;
            } else {
                for (std::size_t i = 1; i <= n; ++i) {
                    for (std::size_t j = 0; j < n; ++j)
                        pts[i][j] = pts[0][j] + opt.shrink * (pts[i][j] - pts[0][j]);
                    fv[i] = eval(pts[i]);
                }
            }
        }
        sort_vertices();
    }
    res.x = pts[0];
    res.fx = fv[0];
    return res;
}

EstimationResult estimate(std::span<const ResearcherRecord> dataset, const EstimationConfig& cfg,
                          const Calibration& cal) {
    if (dataset.empty()) throw DomainError("estimation needs a nonempty dataset");
    if (cfg.grid.empty()) throw DomainError("estimation grid is empty");
    if (!(cfg.grid_keep > 0.0) || !(cfg.stage1_keep > 0.0)) {
        throw DomainError("survivor thresholds must be positive");
    }
    if (cfg.threads) set_thread_count(cfg.threads);
    const GmmProblem problem = make_gmm_problem(dataset, cal);
    EstimationResult result;

    auto loss_at = [&](std::span<const double> x) {
        return evaluate_loss(from_search_space(x), problem).loss;
    };

    // Stage 0: the grid.
    StageRecord s0;
    s0.stage = 0;
    for (const auto& d : cfg.grid) {
        s0.candidates.push_back(d);
        s0.losses.push_back(evaluate_loss(d, problem).loss);
        s0.evaluations.push_back(1);
        ++result.evaluations;
    }
    const double grid_best = *std::min_element(s0.losses.begin(), s0.losses.end());
    result.trace.push_back(s0);

    auto survivors_of = [](const StageRecord& st, double keep) {
        const double best = *std::min_element(st.losses.begin(), st.losses.end());
        std::vector<DeepParams> out;
        for (std::size_t i = 0; i < st.candidates.size(); ++i) {
            if (st.losses[i] <= best + keep * std::abs(best)) out.push_back(st.candidates[i]);
        }
        return out;
    };
    auto best_of = [](const StageRecord& st) {
        const auto it = std::min_element(st.losses.begin(), st.losses.end());
        return std::pair{st.candidates[std::size_t(it - st.losses.begin())], *it};
    };
    auto finish = [&](const DeepParams& d) {
        const auto ev = evaluate_loss(d, problem, true);
        result.params = d;
        result.loss = ev.loss;
        result.penalized = ev.penalized;
        result.failures = ev.failures;
        result.residuals.resize(dataset.size());
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            for (std::size_t j = 0; j < kNumExperiments; ++j) {
                const auto& obs = dataset[i].wtp_answers[j];
                const auto& pred = ev.predicted[i][j];
                if (obs && pred) result.residuals[i][j] = *obs - *pred;
            }
        }
        if (static_cast<std::size_t>(ev.penalized) == dataset.size()) {
            throw EstimationFailure("every researcher is penalized at the best candidate", result);
        }
    };

    if (static_cast<double>(dataset.size()) * kFailurePenalty <= grid_best) {
        result.params = best_of(s0).first;
        result.loss = grid_best;
        throw EstimationFailure("every grid candidate penalizes every researcher", result);
    }
    if (cfg.grid_only) {
        finish(best_of(s0).first);
        return result;
    }

    const double scale = std::max(grid_best, std::numeric_limits<double>::min());
    auto run_stage = [&](int stage, const std::vector<DeepParams>& starts, double rel_tol) {
        StageRecord st;
        st.stage = stage;
        SimplexOptions so;
        so.loss_tolerance = rel_tol * scale;
        so.parameter_tolerance = cfg.parameter_tolerance;
        so.max_evaluations = cfg.max_evaluations;
        bool all_converged = true;
        for (const auto& d : starts) {
            const auto r = simplex_minimize(loss_at, to_search_space(d), so);
            st.candidates.push_back(from_search_space(r.x));
            st.losses.push_back(r.fx);
            st.evaluations.push_back(r.evaluations);
            result.evaluations += r.evaluations;
            all_converged = all_converged && r.converged;
        }
        result.trace.push_back(st);
        return all_converged;
    };

    run_stage(1, survivors_of(s0, cfg.grid_keep), cfg.loss_tolerance[0]);
    run_stage(2, survivors_of(result.trace.back(), cfg.stage1_keep), cfg.loss_tolerance[1]);
    DeepParams best = best_of(result.trace.back()).first;
    bool converged = true;
    for (int k = 0; k < cfg.refinements; ++k) {
        converged = run_stage(3, {best}, cfg.loss_tolerance[2]);
        const auto cand = best_of(result.trace.back());
        if (cand.second <= evaluate_loss(best, problem).loss) best = cand.first;
    }
    result.converged = converged;
    finish(best);
    return result;
}

}  // namespace scialloc
