#include "scialloc/oracle_examples.hpp"

#include <cmath>
#include <limits>

#include "scialloc/errors.hpp"
#include "scialloc/numerics.hpp"

namespace scialloc::oracle {

namespace {

double payoff(const GenericProducer& prod, double input, double extra, double wtp) {
    const double q = prod.tfp * prod.production(input, extra);
    return prod.benefit(prod.endowment - wtp, q) - prod.cost(input);
}

}  // namespace

GenericChoice solve_generic(const GenericProducer& prod, double extra, double wtp) {
    const auto best = golden_section_maximize(
        [&](double x) { return payoff(prod, x, extra, wtp); }, prod.input_lower, prod.input_upper,
        1e-13 * std::max(1.0, prod.input_upper - prod.input_lower));
    return {best.x, best.fx};
}

double generic_wtp(const GenericProducer& prod, double delta) {
    if (delta < 0.0) throw DomainError("offered quantity must be >= 0");
    if (delta == 0.0) return 0.0;
    const double base = solve_generic(prod, 0.0, 0.0).payoff;
    auto gap = [&](double wtp) {
        const double v = solve_generic(prod, delta, wtp).payoff - base;
        return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
    };
    const double f_lo = gap(0.0);
    if (f_lo <= 0.0) return 0.0;
    double hi = 1.0;
    double f_hi = gap(hi);
    for (int k = 0; k < 200 && f_hi > 0.0; ++k) {
        hi *= 2.0;
        f_hi = gap(hi);
    }
    if (f_hi > 0.0) throw NumericalFailure("generic WTP: no upper bracket");
    RootOptions opt;
    opt.x_tolerance = 1e-15 * hi;
    opt.max_iterations = 400;
    const auto r = bracketed_root(gap, 0.0, hi, f_lo, f_hi, opt);
    if (!r.converged) throw NumericalFailure("generic WTP did not converge");
    return r.x;
}

double app1_alpha(double observed_input, double w, double c, double psi) {
    return w + c * psi * std::pow(observed_input, psi - 1.0);
}

double app1_optimal_input(double alpha, double w, double c, double psi) {
    return std::pow((alpha - w) / (psi * c), 1.0 / (psi - 1.0));
}

double app1_wtp_closed_form(double w, double c, double psi, double observed_input, double delta) {
    if (!(c > 0.0) || !(psi > 1.0) || !(observed_input > 0.0)) {
        throw DomainError("application 1 requires c > 0, psi > 1, l > 0");
    }
    return app1_alpha(observed_input, w, c, psi) * delta;
}

GenericProducer app1_producer(double w, double c, double psi, double observed_input) {
    GenericProducer p;
    p.benefit = [](double m, double q) { return q + m; };
    p.production = [](double l, double extra) { return l + extra; };
    p.cost = [w, c, psi](double l) { return w * l + c * std::pow(l, psi); };
    p.endowment = 0.0;
    p.tfp = app1_alpha(observed_input, w, c, psi);
    p.input_lower = 0.0;
    p.input_upper = 4.0 * observed_input + 1.0;
    return p;
}

double app2_optimal_input(double alpha, double beta, double w) {
    return std::pow(beta * alpha / w, 1.0 / (1.0 - beta));
}

double app2_wtp(double w, double beta, double alpha, double delta) {
    if (app2_optimal_input(alpha, beta, w) < delta) {
        throw DomainError("application 2 closed form requires l* >= delta");
    }
    return w * delta;
}

GenericProducer app2_producer(double w, double beta, double alpha) {
    GenericProducer p;
    p.benefit = [](double m, double q) { return q + m; };
    p.production = [beta](double l, double extra) { return std::pow(l + extra, beta); };
    p.cost = [w](double l) { return w * l; };
    p.endowment = 0.0;
    p.tfp = alpha;
    p.input_lower = 0.0;
    p.input_upper = 4.0 * app2_optimal_input(alpha, beta, w) + 1.0;
    return p;
}

double app3_optimal_labor(double alpha, double beta, double eta, double phi, double psi,
                          double fixed_input) {
    const double k = psi - eta * (1.0 - beta);
    return std::pow(eta * (1.0 - beta) * std::pow(alpha, eta) *
                        std::pow(fixed_input, eta * beta) / (phi * psi),
                    1.0 / k);
}

GenericProducer app3_producer(double alpha, double beta, double eta, double phi, double psi,
                              double income, double fixed_input) {
    GenericProducer p;
    p.benefit = [eta](double m, double q) {
        if (!(m > 0.0)) return -std::numeric_limits<double>::infinity();
        return std::log(m) + std::pow(q, eta);
    };
    p.production = [beta, fixed_input](double l, double extra) {
        return std::pow(fixed_input + extra, beta) * std::pow(l, 1.0 - beta);
    };
    p.cost = [phi, psi](double l) { return phi * std::pow(l, psi); };
    p.endowment = income;
    p.tfp = alpha;
    p.input_lower = 0.0;
    p.input_upper = 4.0 * app3_optimal_labor(alpha, beta, eta, phi, psi, fixed_input) + 1.0;
    return p;
}

}  // namespace scialloc::oracle
