#include "scialloc/planner.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "scialloc/errors.hpp"
#include "scialloc/numerics.hpp"
#include "scialloc/parallel.hpp"

namespace scialloc {

namespace {

enum class Lever { Funding, Duties };

struct Point {
    double value = 0.0;
    double output = 0.0;
    bool fundraising_corner = false;
    bool hours_corner = false;
};

Point evaluate_point(const PlannerResearcher& r, double g, double d, double pi, double kappa,
                     const Calibration& cal) {
    const auto s = planner_response(r, g, d, pi, cal);
    return {planner_value(s, d, r.prefs, kappa), s.output, s.fundraising_corner, s.hours_corner};
}

bool same_branch(const Point& a, const Point& b) {
    return a.fundraising_corner == b.fundraising_corner && a.hours_corner == b.hours_corner;
}

double step_for(Lever lever, double g, const Calibration& cal) {
    return lever == Lever::Funding ? std::max(1.0, 1e-4 * (cal.min_funding + g)) : 1e-4;
}

struct Derivative {
    double value = 0.0;
    double output = 0.0;
    bool one_sided = false;
    // One-sided slopes when the stencil crosses a kink (both equal the
    // estimate otherwise).
    double value_lo = 0.0, value_hi = 0.0;
    double output_lo = 0.0, output_hi = 0.0;
};

Derivative lever_derivative(const PlannerResearcher& r, double g, double d, double pi,
                            double kappa, const Calibration& cal, Lever lever,
                            const Point& center) {
    const double h = step_for(lever, g, cal);
    auto at = [&](double delta) {
        return lever == Lever::Funding ? evaluate_point(r, g + delta, d, pi, kappa, cal)
                                       : evaluate_point(r, g, d + delta, pi, kappa, cal);
    };
    auto make = [](double v, double o, bool one_sided) {
        return Derivative{v, o, one_sided, v, v, o, o};
    };
    const double x = lever == Lever::Funding ? g : d;
    const Point plus = at(h);
    if (x - h < 0.0) {
        return make((plus.value - center.value) / h, (plus.output - center.output) / h, true);
    }
    const Point minus = at(-h);
    const bool up = same_branch(center, plus), down = same_branch(center, minus);
    if (up && down) {
        return make((plus.value - minus.value) / (2.0 * h),
                    (plus.output - minus.output) / (2.0 * h), false);
    }
    const double fv = (plus.value - center.value) / h, fo = (plus.output - center.output) / h;
    const double bv = (center.value - minus.value) / h, bo = (center.output - minus.output) / h;
    Derivative out = (up || !down) ? make(fv, fo, true) : make(bv, bo, true);
    out.value_lo = std::min(fv, bv);
    out.value_hi = std::max(fv, bv);
    out.output_lo = std::min(fo, bo);
    out.output_hi = std::max(fo, bo);
    return out;
}

double objective_term(const PlannerProblem& p, const PolicySolution& s, double duties,
                      const PreferenceParams& prefs) {
    return p.objective == PlannerObjective::Output ? s.output
                                                   : planner_value(s, duties, prefs, p.kappa);
}

// Marginal objective along one lever for the solver.
double marginal_objective(const PlannerProblem& p, const PlannerResearcher& r, double g, double d,
                          double pi, Lever lever) {
    const Point center = evaluate_point(r, g, d, pi, p.kappa, p.calibration);
    const auto der = lever_derivative(r, g, d, pi, p.kappa, p.calibration, lever, center);
    return p.objective == PlannerObjective::Output ? der.output : der.value;
}

double& lever_slot(ContractState& c, Lever lever) {
    return lever == Lever::Funding ? c.guaranteed_funding : c.duties;
}

double lever_total(const PlannerProblem& p, Lever lever) {
    return lever == Lever::Funding ? p.total_funding : p.total_duties;
}

double upper_bound(const PlannerProblem& p, Lever lever) {
    if (lever == Lever::Funding) return p.total_funding;
    return std::min(p.total_duties, p.calibration.max_hours - 1.0);
}

ContractState with_lever(ContractState c, Lever lever, double x) {
    lever_slot(c, lever) = x;
    return c;
}

struct LeverContext {
    const PlannerProblem& p;
    double pi;
    Lever lever;
    double hi;
};

double objective_at(const LeverContext& ctx, const PlannerResearcher& r, const ContractState& c,
                    double x) {
    const auto t = with_lever(c, ctx.lever, x);
    const auto s = planner_response(r, t.guaranteed_funding, t.duties, ctx.pi, ctx.p.calibration);
    return objective_term(ctx.p, s, t.duties, r.prefs);
}

double mv_at(const LeverContext& ctx, const PlannerResearcher& r, const ContractState& c,
             double x) {
    const auto t = with_lever(c, ctx.lever, x);
    return marginal_objective(ctx.p, r, t.guaranteed_funding, t.duties, ctx.pi, ctx.lever);
}

int branch_at(const LeverContext& ctx, const PlannerResearcher& r, const ContractState& c,
              double x) {
    const auto t = with_lever(c, ctx.lever, x);
    const auto s = planner_response(r, t.guaranteed_funding, t.duties, ctx.pi, ctx.p.calibration);
    return (s.fundraising_corner ? 1 : 0) + (s.hours_corner ? 2 : 0);
}

// A stretch of the lever over which the branch (fundraising corner, hours
// corner) does not change. The objective is taken to be concave on each piece
// but not across them: fundraisers' extra funding is crowded out until they
// stop fundraising.
struct Piece {
    double a = 0.0, ma = 0.0;  // inner end points and marginal values there
    double b = 0.0, mb = 0.0;
    double xl = 0.0, ml = 0.0;  // response bracket within the piece
    double xh = 0.0, mh = 0.0;
    void reset() {
        xl = a;
        ml = ma;
        xh = b;
        mh = mb;
    }
};

std::vector<Piece> find_pieces(const LeverContext& ctx, const PlannerResearcher& r,
                               const ContractState& c) {
    constexpr int kGrid = 16;
    const double tol = 1e-10 * std::max(ctx.hi, 1.0);
    std::vector<double> cuts{0.0};
    if (ctx.hi > 0.0) {
        // Each grid interval may hold several switches: after locating the
        // first one, keep going from just past it.
        auto add_cuts = [&](double lo, int b_lo, double hi, int b_hi) {
            for (int guard = 0; b_lo != b_hi && guard < 8; ++guard) {
                double l = lo, h = hi;
                for (int it = 0; it < 200 && h - l > tol; ++it) {
                    const double m = 0.5 * (l + h);
                    (branch_at(ctx, r, c, m) == b_lo ? l : h) = m;
                }
                if (h - cuts.back() > 10.0 * tol && ctx.hi - h > 10.0 * tol) cuts.push_back(h);
                lo = h;
                b_lo = branch_at(ctx, r, c, h);
            }
        };
        double prev_x = 0.0;
        int prev_b = branch_at(ctx, r, c, 0.0);
        for (int j = 1; j <= kGrid; ++j) {
            const double x = ctx.hi * j / kGrid;
            const int b = branch_at(ctx, r, c, x);
            add_cuts(prev_x, prev_b, x, b);
            prev_x = x;
            prev_b = b;
        }
    }
    cuts.push_back(ctx.hi);
    std::vector<Piece> pieces;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        Piece pc;
        const double inset = std::min(tol, 0.25 * (cuts[k + 1] - cuts[k]));
        pc.a = k == 0 ? cuts[k] : cuts[k] + inset;
        pc.b = k + 2 == cuts.size() ? cuts[k + 1] : cuts[k + 1] - inset;
        pc.ma = mv_at(ctx, r, c, pc.a);
        pc.mb = pc.b > pc.a ? mv_at(ctx, r, c, pc.b) : pc.ma;
        pc.reset();
        pieces.push_back(pc);
    }
    return pieces;
}

struct Response {
    double x = 0.0;
    double mv = 0.0;
};

// Maximizer of V(x) - lambda x within the piece's current bracket.
Response piece_response(const LeverContext& ctx, const PlannerResearcher& r,
                        const ContractState& c, const Piece& pc, double lambda) {
    if (pc.ml <= lambda) return {pc.xl, pc.ml};
    if (pc.mh >= lambda) return {pc.xh, pc.mh};
    RootOptions opt;
    opt.x_tolerance = 1e-11 * std::max(1.0, ctx.hi);
    opt.f_tolerance = 1e-10 * std::abs(lambda);
    opt.max_iterations = 200;
    const auto root = bracketed_root([&](double x) { return mv_at(ctx, r, c, x) - lambda; }, pc.xl,
                                     pc.xh, pc.ml - lambda, pc.mh - lambda, opt);
    return {root.x, root.fx + lambda};
}

struct Choice {
    std::size_t piece = 0;
    double x = 0.0;
};

// Global maximizer over the pieces; narrows every piece's bracket toward the
// side the multiplier search is heading (gap > 0: lambda will rise).
Choice respond(const LeverContext& ctx, const PlannerResearcher& r, const ContractState& c,
               std::vector<Piece>& pieces, double lambda, std::vector<Response>& per_piece) {
    per_piece.resize(pieces.size());
    Choice best;
    double best_l = -INFINITY;
    for (std::size_t k = 0; k < pieces.size(); ++k) {
        per_piece[k] = piece_response(ctx, r, c, pieces[k], lambda);
        const double l = pieces.size() == 1
                             ? 0.0
                             : objective_at(ctx, r, c, per_piece[k].x) - lambda * per_piece[k].x;
        if (l > best_l) {
            best_l = l;
            best = {k, per_piece[k].x};
        }
    }
    return best;
}

void narrow(std::vector<Piece>& pieces, const std::vector<Response>& per_piece, bool raise) {
    for (std::size_t k = 0; k < pieces.size(); ++k) {
        if (raise) {
            pieces[k].xh = per_piece[k].x;
            pieces[k].mh = per_piece[k].mv;
        } else {
            pieces[k].xl = per_piece[k].x;
            pieces[k].ml = per_piece[k].mv;
        }
    }
}

// Moves the allocation so the lever total is met exactly, touching interior
// researchers first.
void project_total(std::vector<ContractState>& alloc, Lever lever, double total, double hi) {
    std::vector<double> xs;
    for (auto& c : alloc) xs.push_back(lever_slot(c, lever));
    for (int pass = 0; pass < 4; ++pass) {
        const double gap = total - compensated_sum(xs);
        if (gap == 0.0 || std::abs(gap) <= 1e-15 * std::max(total, 1.0)) break;
        std::vector<double> room(xs.size(), 0.0);
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const bool interior = xs[i] > 0.0 && xs[i] < hi;
            if (pass == 0 && !interior) continue;
            room[i] = gap > 0.0 ? hi - xs[i] : xs[i];
        }
        const double total_room = compensated_sum(room);
        if (!(total_room > 0.0)) continue;
        const double share = std::min(1.0, std::abs(gap) / total_room);
        for (std::size_t i = 0; i < xs.size(); ++i) {
            xs[i] = std::clamp(xs[i] + (gap > 0.0 ? 1.0 : -1.0) * share * room[i], 0.0, hi);
        }
    }
    for (std::size_t i = 0; i < alloc.size(); ++i) lever_slot(alloc[i], lever) = xs[i];
}

// Finds lambda with supply(lambda) = target for a nonincreasing supply,
// expanding the initial bracket if needed. Returns the multiplier and whether
// the target was hit within tolerance.
template <class Supply, class OnEval>
std::pair<double, bool> multiplier_root(Supply&& supply, OnEval&& on_eval, double top,
                                        double bottom, double target) {
    auto gap_at = [&](double lam) {
        const double g = supply(lam) - target;
        on_eval(lam, g);
        return g;
    };
    double g_top = gap_at(top);
    for (int k = 0; k < 200 && g_top > 0.0; ++k) {
        top += std::max(std::abs(top), 1e-300);
        g_top = gap_at(top);
    }
    double g_bottom = gap_at(bottom);
    for (int k = 0; k < 200 && g_bottom < 0.0; ++k) {
        bottom -= std::max(std::abs(bottom), 1e-300);
        g_bottom = gap_at(bottom);
    }
    if (g_top > 0.0) return {top, false};
    if (g_bottom < 0.0) return {bottom, false};
    RootOptions opt;
    opt.x_tolerance = 1e-15 * std::max(std::abs(top), std::abs(bottom));
    opt.f_tolerance = 1e-13 * std::max(std::abs(target), 1e-300);
    opt.max_iterations = 400;
    const auto root = bracketed_root(gap_at, bottom, top, g_bottom, g_top, opt);
    return {root.x, std::abs(root.fx) <= opt.f_tolerance};
}

// Solves for the lever multiplier with the other lever and pi held fixed.
double solve_lever(const PlannerProblem& p, std::vector<ContractState>& alloc, double pi,
                   Lever lever) {
    const auto& rs = p.researchers;
    const std::size_t n = rs.size();
    const double total = lever_total(p, lever);
    const LeverContext ctx{p, pi, lever, upper_bound(p, lever)};
    const auto base = alloc;

    std::vector<std::vector<Piece>> pieces(n);
    parallel_for(n, [&](std::size_t i) { pieces[i] = find_pieces(ctx, rs[i], base[i]); });
    double top = -INFINITY, bottom = INFINITY;
    for (const auto& ps : pieces) {
        for (const auto& pc : ps) {
            top = std::max({top, pc.ma, pc.mb});
            bottom = std::min({bottom, pc.ma, pc.mb});
        }
    }

    // Full search over pieces.
    std::vector<Choice> cur(n), above(n), below(n);
    std::vector<std::vector<Response>> per_piece(n);
    double lam_above = INFINITY, lam_below = -INFINITY;  // supply <= / >= target
    auto supply = [&](double lam) {
        parallel_for(n, [&](std::size_t i) {
            cur[i] = respond(ctx, rs[i], base[i], pieces[i], lam, per_piece[i]);
        });
        std::vector<double> xs(n);
        for (std::size_t i = 0; i < n; ++i) xs[i] = cur[i].x;
        return compensated_sum(xs);
    };
    auto on_eval = [&](double lam, double gap) {
        const bool raise = gap > 0.0;
        for (std::size_t i = 0; i < n; ++i) narrow(pieces[i], per_piece[i], raise);
        if (raise && lam > lam_below) {
            lam_below = lam;
            below = cur;
        } else if (!raise && lam < lam_above) {
            lam_above = lam;
            above = cur;
        }
    };
    const auto [lambda, hit] = multiplier_root(supply, on_eval, top, bottom, total);
    if (hit || !std::isfinite(lam_above) || !std::isfinite(lam_below)) {
        for (std::size_t i = 0; i < n; ++i) lever_slot(alloc[i], lever) = cur[i].x;
        project_total(alloc, lever, total, ctx.hi);
        return lambda;
    }

    // Supply jumps across the final bracket: researchers whose best piece
    // differs on the two sides are settled greedily, the rest share what is
    // left with each held to its piece.
    std::vector<double> xs(n);
    std::vector<bool> fixed(n, false);
    double gap = total;
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = above[i].x;
        fixed[i] = above[i].piece != below[i].piece;
    }
    {
        std::vector<double> tmp = xs;
        gap = total - compensated_sum(tmp);
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!fixed[i]) continue;
        const double step = below[i].x - above[i].x;
        if (step > 0.0 && step <= gap) {
            xs[i] = below[i].x;
            gap -= step;
        }
    }
    std::vector<double> fixed_x;
    for (std::size_t i = 0; i < n; ++i) {
        if (fixed[i]) fixed_x.push_back(xs[i]);
    }
    const double target = total - compensated_sum(fixed_x);
    double r_top = -INFINITY, r_bottom = INFINITY;
    bool any_free = false;
    for (std::size_t i = 0; i < n; ++i) {
        if (fixed[i]) continue;
        any_free = true;
        auto& pc = pieces[i][above[i].piece];
        pc.reset();
        r_top = std::max({r_top, pc.ma, pc.mb});
        r_bottom = std::min({r_bottom, pc.ma, pc.mb});
    }
    double lam_final = lambda;
    if (any_free) {
        std::vector<Response> resp(n);
        auto restricted = [&](double lam) {
            parallel_for(n, [&](std::size_t i) {
                if (!fixed[i]) resp[i] = piece_response(ctx, rs[i], base[i], pieces[i][above[i].piece], lam);
            });
            std::vector<double> free_x;
            for (std::size_t i = 0; i < n; ++i) {
                if (!fixed[i]) free_x.push_back(resp[i].x);
            }
            return compensated_sum(free_x);
        };
        auto on_restricted = [&](double, double g) {
            for (std::size_t i = 0; i < n; ++i) {
                if (fixed[i]) continue;
                auto& pc = pieces[i][above[i].piece];
                if (g > 0.0) {
                    pc.xh = resp[i].x;
                    pc.mh = resp[i].mv;
                } else {
                    pc.xl = resp[i].x;
                    pc.ml = resp[i].mv;
                }
            }
        };
        auto rr = multiplier_root(restricted, on_restricted, r_top, r_bottom, target);
        lam_final = rr.first;
        restricted(lam_final);
        for (std::size_t i = 0; i < n; ++i) {
            if (!fixed[i]) xs[i] = resp[i].x;
        }
    }
    for (std::size_t i = 0; i < n; ++i) lever_slot(alloc[i], lever) = xs[i];
    project_total(alloc, lever, total, ctx.hi);
    return lam_final;
}

// Largest KKT violation for one lever, relative to the scale of the marginal
// values. At a kink the multiplier only has to lie between the one-sided slopes.
double kkt_residual(const PlannerProblem& p, const std::vector<ContractState>& alloc, double pi,
                    Lever lever, double lambda) {
    const double hi = upper_bound(p, lever);
    const std::size_t n = alloc.size();
    std::vector<double> viol(n, 0.0), mags(n, 0.0);
    const bool output = p.objective == PlannerObjective::Output;
    parallel_for(n, [&](std::size_t i) {
        const auto& c = alloc[i];
        const auto& r = p.researchers[i];
        const double x = lever == Lever::Funding ? c.guaranteed_funding : c.duties;
        const Point center =
            evaluate_point(r, c.guaranteed_funding, c.duties, pi, p.kappa, p.calibration);
        const auto der = lever_derivative(r, c.guaranteed_funding, c.duties, pi, p.kappa,
                                          p.calibration, lever, center);
        const double mv = output ? der.output : der.value;
        const double lo = output ? der.output_lo : der.value_lo;
        const double up = output ? der.output_hi : der.value_hi;
        mags[i] = std::abs(mv);
        if (x <= 0.0) {
            viol[i] = std::max(0.0, mv - lambda);
        } else if (x >= hi) {
            viol[i] = std::max(0.0, lambda - mv);
        } else {
            viol[i] = std::max({0.0, lo - lambda, lambda - up});
        }
    });
    const double worst = *std::max_element(viol.begin(), viol.end());
    const double scale = std::max(std::abs(lambda), compensated_sum(mags) / n);
    return worst / std::max(scale, std::numeric_limits<double>::min());
}

}  // namespace

PlannerProblem make_planner_problem(std::vector<PlannerResearcher> researchers,
                                    PlannerObjective objective, PlannerLevers levers, double kappa,
                                    const Calibration& cal, bool unconstrained_budget) {
    if (researchers.empty()) throw DomainError("planner needs at least one researcher");
    if (!levers.funding && !levers.duties) throw DomainError("planner needs at least one lever");
    if (!(kappa > 0.0)) throw DomainError("kappa must be > 0");
    validate(cal);
    PlannerProblem p;
    p.objective = objective;
    p.levers = levers;
    p.kappa = kappa;
    p.calibration = cal;
    p.unconstrained_budget = unconstrained_budget;
    std::vector<double> g, d;
    for (const auto& r : researchers) {
        validate(r.contract, cal);
        validate(r.attributes);
        validate(r.prefs);
        if (!(r.expected_extra_funding >= 0.0)) throw DomainError("EG must be >= 0");
        g.push_back(r.contract.guaranteed_funding);
        d.push_back(r.contract.duties);
    }
    p.total_funding = compensated_sum(g);
    p.total_duties = compensated_sum(d);
    p.researchers = std::move(researchers);
    return p;
}

Attributes effective_attributes(const PlannerResearcher& r, double pi) {
    Attributes a = r.attributes;
    a.fundraising_ability *= pi;
    return a;
}

PolicySolution planner_response(const PlannerResearcher& r, double g, double d, double pi,
                                const Calibration& cal) {
    return solve_policy({r.contract.salary, g, d}, effective_attributes(r, pi), r.prefs, cal);
}

double planner_value(const PolicySolution& s, double duties, const PreferenceParams& p,
                     double kappa) {
    return kappa * output_utility(s.output, p) -
           effort_disutility(s.research, s.fundraising, duties, p);
}

MarginalValues marginal_values(const PlannerResearcher& r, double g, double d, double pi,
                               double kappa, const Calibration& cal) {
    const Point center = evaluate_point(r, g, d, pi, kappa, cal);
    const auto dg = lever_derivative(r, g, d, pi, kappa, cal, Lever::Funding, center);
    const auto dd = lever_derivative(r, g, d, pi, kappa, cal, Lever::Duties, center);
    return {dg.value, dd.value, dg.output, dd.output, dg.one_sided, dd.one_sided};
}

double feasibility_fixed_point(std::span<const PlannerResearcher> researchers,
                               std::span<const ContractState> allocation, const Calibration& cal,
                               const PlannerOptions& opt, double start) {
    if (researchers.size() != allocation.size()) throw DomainError("allocation size mismatch");
    std::vector<double> eg_terms;
    for (const auto& r : researchers) eg_terms.push_back(r.expected_extra_funding);
    const double eg = compensated_sum(eg_terms);
    if (!(eg >= 0.0)) throw DomainError("sum of EG must be >= 0");

    std::vector<double> raised_terms(researchers.size());
    auto raised = [&](double pi) {
        parallel_for(researchers.size(), [&](std::size_t i) {
            const auto& c = allocation[i];
            const auto s = planner_response(researchers[i], c.guaranteed_funding, c.duties, pi, cal);
            raised_terms[i] = researchers[i].attributes.fundraising_ability * s.fundraising;
        });
        return compensated_sum(raised_terms);
    };

    double pi = start;
    double s = raised(pi);
    if (eg == 0.0) {
        if (s == 0.0) return start == 1.0 ? 1.0 : pi;
        // Shrink until nobody fundraises.
        for (int k = 0; k < 2000 && s > 0.0; ++k) {
            pi *= 0.5;
            s = raised(pi);
        }
        if (s > 0.0) throw NumericalFailure("feasibility factor did not reach zero fundraising");
        return pi;
    }
    for (int k = 0; k < 200 && s == 0.0; ++k) {
        pi *= 2.0;
        s = raised(pi);
    }
    if (s == 0.0) throw DomainError("infeasible allocation: nobody fundraises but sum EG > 0");

    auto rel_gap = [&](double pi_v, double s_v) { return (pi_v * s_v - eg) / eg; };
    double gap = rel_gap(pi, s);
    for (int k = 0; k < opt.max_pi_iterations && std::abs(gap) > opt.pi_tolerance; ++k) {
        const double target = eg / s;
        double next = (1.0 - opt.pi_damping) * pi + opt.pi_damping * target;
        double s_next = raised(next);
        double gap_next = rel_gap(next, s_next);
        if (!(std::abs(gap_next) < std::abs(gap))) {
            // The damped step overshoots; pi*S(pi) is increasing in pi, so
            // bracket the root between the two iterates and solve directly.
            double lo = std::min(pi, next), hi = std::max(pi, next);
            while (rel_gap(lo, raised(lo)) > 0.0) lo *= 0.5;
            while (rel_gap(hi, raised(hi)) < 0.0) hi *= 2.0;
            RootOptions ro;
            ro.f_tolerance = 0.5 * opt.pi_tolerance;
            ro.x_tolerance = 0.0;
            ro.max_iterations = 400;
            const auto root = bracketed_root(
                [&](double lp) {
                    const double v = std::exp(lp);
                    return rel_gap(v, raised(v));
                },
                std::log(lo), std::log(hi), ro);
            next = std::exp(root.x);
            s_next = raised(next);
            gap_next = rel_gap(next, s_next);
        }
        pi = next;
        s = s_next;
        gap = gap_next;
    }
    if (std::abs(gap) > opt.pi_tolerance) {
        throw NumericalFailure("feasibility factor did not converge");
    }
    return pi;
}

double aggregate_objective(const PlannerProblem& problem, std::span<const ContractState> allocation,
                           double pi, std::vector<PolicySolution>* responses) {
    const auto& rs = problem.researchers;
    std::vector<PolicySolution> sols(rs.size());
    std::vector<double> terms(rs.size());
    parallel_for(rs.size(), [&](std::size_t i) {
        const auto& c = allocation[i];
        sols[i] = planner_response(rs[i], c.guaranteed_funding, c.duties, pi, problem.calibration);
        terms[i] = objective_term(problem, sols[i], c.duties, rs[i].prefs);
    });
    if (responses) *responses = std::move(sols);
    return compensated_sum(terms);
}

CounterfactualAllocation optimize_allocation(const PlannerProblem& problem,
                                             const PlannerOptions& opt) {
    const auto& rs = problem.researchers;
    const auto& cal = problem.calibration;
    if (rs.empty()) throw DomainError("planner needs at least one researcher");
    if (!problem.levers.funding && !problem.levers.duties) {
        throw DomainError("planner needs at least one lever");
    }
    std::vector<ContractState> actual;
    for (const auto& r : rs) actual.push_back(r.contract);

    CounterfactualAllocation out;
    auto pi_of = [&](const std::vector<ContractState>& alloc, double start) {
        return problem.unconstrained_budget ? 1.0
                                            : feasibility_fixed_point(rs, alloc, cal, opt, start);
    };
    out.actual_pi = pi_of(actual, 1.0);
    out.actual_objective = aggregate_objective(problem, actual, out.actual_pi, &out.actual_responses);

    std::vector<Lever> levers;
    if (problem.levers.funding) levers.push_back(Lever::Funding);
    if (problem.levers.duties) levers.push_back(Lever::Duties);

    std::vector<ContractState> alloc = actual;
    double pi = out.actual_pi;
    double lambda_g = 0.0, lambda_d = 0.0;

    struct Iterate {
        std::vector<ContractState> alloc;
        double pi, objective, lambda_g, lambda_d;
    };
    Iterate best{actual, out.actual_pi, out.actual_objective, 0.0, 0.0};
    bool have_iterate = false;

    const double g_scale = std::max(problem.total_funding / rs.size(), 1.0);
    const double d_scale = std::max(problem.total_duties / rs.size(), 1e-3);

    if (rs.size() > 1) {
        for (int round = 1; round <= opt.max_rounds; ++round) {
            const auto before = alloc;
            for (Lever lv : levers) {
                // A lever move that does not raise the objective at fixed pi is
                // dropped. Under near-linear effort costs the duties lever is
                // flat for most researchers and would otherwise wander.
                const auto prior = alloc;
                const double obj_before = aggregate_objective(problem, alloc, pi);
                const double lam = solve_lever(problem, alloc, pi, lv);
                (lv == Lever::Funding ? lambda_g : lambda_d) = lam;
                const double obj_after = aggregate_objective(problem, alloc, pi);
                if (!(obj_after > obj_before + 1e-12 * std::abs(obj_before))) alloc = prior;
            }
            const double next_pi = pi_of(alloc, pi);
            const double obj = aggregate_objective(problem, alloc, next_pi);
            double moved = std::abs(next_pi - pi) / pi;
            for (std::size_t i = 0; i < alloc.size(); ++i) {
                moved = std::max(moved, std::abs(alloc[i].guaranteed_funding -
                                                 before[i].guaranteed_funding) / g_scale);
                moved = std::max(moved, std::abs(alloc[i].duties - before[i].duties) / d_scale);
            }
            pi = next_pi;
            out.rounds = round;
            if (!have_iterate || obj > best.objective) {
                best = {alloc, pi, obj, lambda_g, lambda_d};
                have_iterate = true;
            }
            if (moved <= opt.tolerance) {
                out.converged = true;
                break;
            }
        }
    } else {
        out.converged = true;
    }

    if (out.converged) {
        // Keep the converged point so the KKT conditions hold there.
        best = {alloc, pi, aggregate_objective(problem, alloc, pi), lambda_g, lambda_d};
    }
    if (best.objective < out.actual_objective) {
        best = {actual, out.actual_pi, out.actual_objective, 0.0, 0.0};
        out.returned_actual = true;
    }
    out.contracts = best.alloc;
    out.pi = best.pi;
    out.objective = aggregate_objective(problem, out.contracts, out.pi, &out.responses);
    out.lambda_g = best.lambda_g;
    out.lambda_d = best.lambda_d;
    out.marginals.resize(rs.size());
    parallel_for(rs.size(), [&](std::size_t i) {
        const auto& c = out.contracts[i];
        out.marginals[i] =
            marginal_values(rs[i], c.guaranteed_funding, c.duties, out.pi, problem.kappa, cal);
    });
    if (rs.size() > 1 && !out.returned_actual) {
        if (problem.levers.funding) {
            out.kkt_residual_g = kkt_residual(problem, out.contracts, out.pi, Lever::Funding, out.lambda_g);
        }
        if (problem.levers.duties) {
            out.kkt_residual_d = kkt_residual(problem, out.contracts, out.pi, Lever::Duties, out.lambda_d);
        }
    }
    return out;
}

std::optional<double> reallocation_magnitude(std::span<const double> actual,
                                             std::span<const double> optimal) {
    if (actual.size() != optimal.size()) throw DomainError("allocations differ in size");
    std::vector<double> moved, base;
    for (std::size_t i = 0; i < actual.size(); ++i) {
        moved.push_back(std::max(0.0, optimal[i] - actual[i]));
        base.push_back(actual[i]);
    }
    const double total = compensated_sum(base);
    if (!(total != 0.0)) return std::nullopt;
    return compensated_sum(moved) / total;
}

std::vector<FieldCounterfactual> reallocate(std::span<const PlannerResearcher> population,
                                            const ReallocationOptions& options,
                                            const Calibration& cal) {
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < population.size(); ++i) {
        groups[options.across_fields ? std::string() : population[i].field].push_back(i);
    }
    std::vector<FieldCounterfactual> out;
    for (auto& [field, members] : groups) {
        std::vector<PlannerResearcher> rs;
        for (auto i : members) rs.push_back(population[i]);
        const auto problem = make_planner_problem(std::move(rs), options.objective, options.levers,
                                                  options.kappa, cal, options.unconstrained_budget);
        out.push_back({field, members, optimize_allocation(problem, options.solver)});
    }
    return out;
}

}  // namespace scialloc
