#pragma once

#include <functional>

namespace scialloc::oracle {

/// A single-input producer: max_X b(M, alpha * f(X, extra)) - c(X), with the
/// output price normalized to 1. `extra` is the quantity offered outside the
/// market; how it enters f is up to the producer (added to X, or to a fixed input).
struct GenericProducer {
    std::function<double(double endowment, double output)> benefit;
    std::function<double(double input, double extra)> production;
    std::function<double(double input)> cost;
    double endowment = 0.0;  // M
    double tfp = 1.0;        // alpha
    double input_lower = 0.0;
    double input_upper = 1.0;
};

struct GenericChoice {
    double input = 0.0;
    double payoff = 0.0;
};

/// Optimal market input given the offered extra and a payment `wtp` out of the endowment.
GenericChoice solve_generic(const GenericProducer& prod, double extra, double wtp);

/// Payment that equates payoffs with and without the offer of `delta` extra units.
double generic_wtp(const GenericProducer& prod, double delta);

// Linear production, convex costs: max alpha*l - w*l - c*l^psi.
double app1_alpha(double observed_input, double w, double c, double psi);
double app1_optimal_input(double alpha, double w, double c, double psi);
double app1_wtp_closed_form(double w, double c, double psi, double observed_input, double delta);
GenericProducer app1_producer(double w, double c, double psi, double observed_input);

// Decreasing returns, linear costs: max alpha*l^beta - w*l.
double app2_optimal_input(double alpha, double beta, double w);
/// w * delta; throws DomainError when l* < delta (crowd-out infeasible).
double app2_wtp(double w, double beta, double alpha, double delta);
GenericProducer app2_producer(double w, double beta, double alpha);

// Utility-maximizing individual: max ln m + (alpha d^beta l^(1-beta))^eta - phi l^psi,
// offered extra units of the fixed input d.
double app3_optimal_labor(double alpha, double beta, double eta, double phi, double psi,
                          double fixed_input);
GenericProducer app3_producer(double alpha, double beta, double eta, double phi, double psi,
                              double income, double fixed_input);

}  // namespace scialloc::oracle
