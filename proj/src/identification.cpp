#include "scialloc/identification.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "scialloc/errors.hpp"
#include "scialloc/numerics.hpp"
#include "scialloc/policy_solver.hpp"

namespace scialloc {

double infer_phi(double expected_extra_funding, double fundraising) {
    if (!(fundraising > 0.0)) {
        throw DomainError("phi is only identified from researchers with F > 0");
    }
    return std::max(expected_extra_funding / fundraising, 1.0);
}

double infer_gamma(const ContractState& c, double phi, double fundraising, double research,
                   const Calibration& cal) {
    if (!(research > 0.0)) throw DomainError("gamma requires R > 0");
    const double budget = total_budget(c, fundraising, phi, cal);
    return budget / (budget + phi * research);
}

AlphaEstimate infer_alpha(const ContractState& c, const TimeAllocation& alloc, double gamma,
                          double phi, const PreferenceParams& p, const Calibration& cal) {
    if (!(alloc.research > 0.0)) throw DomainError("alpha requires R > 0");
    if (!(alloc.total_hours > c.duties)) throw DomainError("alpha requires H > D");
    const auto branch =
        alloc.fundraising > 0.0 ? HoursBranch::Fundraising : HoursBranch::NoFundraising;
    // Benefit is (1 - eta) * log(alpha) + terms(alpha = 1).
    const Attributes unit{1.0, gamma, phi};
    const auto t = hours_foc_terms(alloc.total_hours, branch, c, unit, p, cal);
    AlphaEstimate est;
    est.tfp = std::exp((t.log_cost - t.log_benefit) / (1.0 - p.output_curvature));
    est.set_identified = alloc.total_hours >= cal.max_hours;
    if (!std::isfinite(est.tfp) || !(est.tfp > 0.0)) {
        throw NumericalFailure("alpha is not finite at the observed allocation");
    }
    return est;
}

double GlmFit::predict_linear(std::span<const double> row) const {
    double eta = 0.0;
    for (std::size_t j = 0; j < coefficients.size(); ++j) eta += coefficients[j] * row[j];
    return eta;
}

GlmFit fit_glm(const Eigen::MatrixXd& design, const Eigen::VectorXd& y, GlmFit::Link link,
               const std::vector<std::string>& names, double score_tolerance,
               int max_iterations) {
    const auto n = design.rows();
    const auto k = design.cols();
    GlmFit fit;
    fit.link = link;
    fit.coefficients.assign(static_cast<std::size_t>(k), 0.0);
    fit.active.assign(static_cast<std::size_t>(k), false);

    // Greedy rank selection in column order: later (higher-order) columns are
    // dropped first when collinear.
    std::vector<Eigen::Index> cols;
    for (Eigen::Index j = 0; j < k; ++j) {
        Eigen::MatrixXd trial(n, static_cast<Eigen::Index>(cols.size()) + 1);
        for (std::size_t c = 0; c < cols.size(); ++c) trial.col(c) = design.col(cols[c]);
        trial.col(trial.cols() - 1) = design.col(j);
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(trial);
        qr.setThreshold(1e-10);
        if (qr.rank() == trial.cols()) {
            cols.push_back(j);
            fit.active[j] = true;
        } else {
            fit.dropped.push_back(j < static_cast<Eigen::Index>(names.size()) ? names[j]
                                                                               : std::to_string(j));
        }
    }
    const auto p = static_cast<Eigen::Index>(cols.size());
    Eigen::MatrixXd x(n, p);
    for (Eigen::Index c = 0; c < p; ++c) x.col(c) = design.col(cols[c]);

    auto mean_of = [&](const Eigen::VectorXd& eta) {
        Eigen::VectorXd mu(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            mu[i] = link == GlmFit::Link::Log ? std::exp(eta[i]) : 1.0 / (1.0 + std::exp(-eta[i]));
        }
        return mu;
    };
    auto quasi_deviance = [&](const Eigen::VectorXd& mu) {
        double dev = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (link == GlmFit::Link::Log) {
                dev += (y[i] > 0.0 ? y[i] * std::log(y[i] / mu[i]) : 0.0) - (y[i] - mu[i]);
            } else {
                const double a = y[i] > 0.0 ? y[i] * std::log(y[i] / mu[i]) : 0.0;
                const double b = y[i] < 1.0 ? (1.0 - y[i]) * std::log((1.0 - y[i]) / (1.0 - mu[i])) : 0.0;
                dev += a + b;
            }
        }
        return 2.0 * dev;
    };

    const double scale = std::max(y.cwiseAbs().sum(), 1e-300);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    const double ybar = std::clamp(y.mean(), 1e-12, link == GlmFit::Link::Log ? 1e300 : 1.0 - 1e-12);
    if (p > 0 && fit.active[0]) {
        beta[0] = link == GlmFit::Link::Log ? std::log(ybar) : std::log(ybar / (1.0 - ybar));
    }
    Eigen::VectorXd eta = x * beta;
    Eigen::VectorXd mu = mean_of(eta);
    double dev = quasi_deviance(mu);
    for (int it = 0; it < max_iterations; ++it) {
        const Eigen::VectorXd score = x.transpose() * (y - mu);
        fit.score_norm = score.norm() / scale;
        fit.iterations = it;
        if (fit.score_norm <= score_tolerance) {
            fit.converged = true;
            break;
        }
        Eigen::VectorXd w(n), z(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            w[i] = link == GlmFit::Link::Log ? mu[i] : mu[i] * (1.0 - mu[i]);
            w[i] = std::max(w[i], 1e-300);
            z[i] = eta[i] + (y[i] - mu[i]) / w[i];
        }
        const Eigen::VectorXd sw = w.cwiseSqrt();
        const Eigen::MatrixXd wx = sw.asDiagonal() * x;
        const Eigen::VectorXd wz = sw.cwiseProduct(z);
        Eigen::VectorXd next = wx.colPivHouseholderQr().solve(wz);
        // Step halving keeps the quasi-deviance from increasing.
        double step = 1.0;
        Eigen::VectorXd cand = next;
        for (int h = 0; h < 30; ++h) {
            cand = beta + step * (next - beta);
            const Eigen::VectorXd mu_c = mean_of(x * cand);
            const double dev_c = quasi_deviance(mu_c);
            if (std::isfinite(dev_c) && dev_c <= dev * (1.0 + 1e-12) + 1e-300) {
                dev = dev_c;
                break;
            }
            step *= 0.5;
        }
        beta = cand;
        eta = x * beta;
        mu = mean_of(eta);
        dev = quasi_deviance(mu);
    }
    if (!fit.converged) {
        const Eigen::VectorXd score = x.transpose() * (y - mu);
        fit.score_norm = score.norm() / scale;
        fit.converged = fit.score_norm <= score_tolerance;
    }
    for (Eigen::Index c = 0; c < p; ++c) fit.coefficients[cols[c]] = beta[c];
    return fit;
}

const std::array<const char*, ZeroFundraiserModels::kColumns>&
ZeroFundraiserModels::column_names() {
    static const std::array<const char*, kColumns> names{
        "intercept", "G", "D", "M", "G^2", "D^2", "M^2", "G^3", "D^3", "M^3"};
    return names;
}

std::array<double, ZeroFundraiserModels::kColumns> ZeroFundraiserModels::design_row(
    const ContractState& c) const {
    const double g = (c.guaranteed_funding - mean_g) / sd_g;
    const double d = (c.duties - mean_d) / sd_d;
    const double m = (c.salary - mean_m) / sd_m;
    return {1.0, g, d, m, g * g, d * d, m * m, g * g * g, d * d * d, m * m * m};
}

double ZeroFundraiserModels::predict_phi(const ContractState& c) const {
    const auto row = design_row(c);
    const double phi = std::exp(phi_model.predict_linear(row));
    return std::max(1.0, std::clamp(phi, phi_min, phi_max));
}

double ZeroFundraiserModels::predict_gamma(const ContractState& c) const {
    const auto row = design_row(c);
    const double g = 1.0 / (1.0 + std::exp(-gamma_model.predict_linear(row)));
    return std::clamp(g, 1e-12, 1.0 - 1e-12);
}

ZeroFundraiserModels fit_zero_fundraiser_models(std::span<const ContractState> states,
                                                std::span<const double> phi,
                                                std::span<const double> gamma) {
    const std::size_t n = states.size();
    if (phi.size() != n || gamma.size() != n) {
        throw DomainError("zero-fundraiser regression inputs differ in length");
    }
    if (n < kMinFundraisersForRegression) {
        std::ostringstream os;
        os << "zero-fundraiser regressions need at least " << kMinFundraisersForRegression
           << " researchers with F > 0, got " << n;
        throw DomainError(os.str());
    }
    ZeroFundraiserModels m;
    auto standardize = [&](auto get, double& mean, double& sd) {
        double s = 0.0;
        for (const auto& c : states) s += get(c);
        mean = s / double(n);
        double ss = 0.0;
        for (const auto& c : states) ss += (get(c) - mean) * (get(c) - mean);
        sd = std::sqrt(ss / double(n - 1));
        if (!(sd > 0.0)) sd = 1.0;  // constant column becomes all-zero and is dropped
    };
    standardize([](const ContractState& c) { return c.guaranteed_funding; }, m.mean_g, m.sd_g);
    standardize([](const ContractState& c) { return c.duties; }, m.mean_d, m.sd_d);
    standardize([](const ContractState& c) { return c.salary; }, m.mean_m, m.sd_m);

    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(ZeroFundraiserModels::kColumns));
    Eigen::VectorXd y_phi(static_cast<Eigen::Index>(n)), y_gamma(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = m.design_row(states[i]);
        for (std::size_t j = 0; j < ZeroFundraiserModels::kColumns; ++j) x(i, j) = row[j];
        y_phi[i] = phi[i];
        y_gamma[i] = gamma[i];
    }
    const auto& cn = ZeroFundraiserModels::column_names();
    const std::vector<std::string> names(cn.begin(), cn.end());
    m.phi_min = *std::min_element(phi.begin(), phi.end());
    m.phi_max = *std::max_element(phi.begin(), phi.end());
    m.phi_model = fit_glm(x, y_phi, GlmFit::Link::Log, names);
    m.gamma_model = fit_glm(x, y_gamma, GlmFit::Link::Logit, names);
    return m;
}

ZeroFundraiserModels fit_zero_fundraiser_models(std::span<const ResearcherRecord> dataset,
                                                const Calibration& cal) {
    std::vector<ContractState> states;
    std::vector<double> phi, gamma;
    bool any_zero = false;
    // Fit in id order so the result does not depend on row order.
    std::vector<const ResearcherRecord*> sorted;
    for (const auto& r : dataset) sorted.push_back(&r);
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const auto* a, const auto* b) { return a->id < b->id; });
    for (const auto* rp : sorted) {
        const auto& r = *rp;
        if (r.allocation.fundraising > 0.0) {
            const double ph = infer_phi(r.expected_extra_funding, r.allocation.fundraising);
            states.push_back(r.contract);
            phi.push_back(ph);
            gamma.push_back(
                infer_gamma(r.contract, ph, r.allocation.fundraising, r.allocation.research, cal));
        } else {
            any_zero = true;
        }
    }
    if (!any_zero) return {};
    return fit_zero_fundraiser_models(states, phi, gamma);
}

ZeroFundraiserAttributes predict_and_rescale(const ZeroFundraiserModels& models,
                                             const ContractState& c, const TimeAllocation& alloc,
                                             const PreferenceParams& p, const Calibration& cal) {
    if (alloc.fundraising != 0.0) throw DomainError("rescaling applies to F = 0 researchers");
    ZeroFundraiserAttributes out;
    const double gamma = models.predict_gamma(c);
    out.raw_phi = models.predict_phi(c);
    // On the no-fundraising branch alpha does not depend on phi.
    const auto alpha = infer_alpha(c, alloc, gamma, out.raw_phi, p, cal);
    out.set_identified = alpha.set_identified;
    out.attributes = {alpha.tfp, gamma, out.raw_phi};

    auto fundraises = [&](double phi) {
        return solve_policy(c, {alpha.tfp, gamma, phi}, p, cal).fundraising > 0.0;
    };
    if (!fundraises(out.raw_phi)) {
        out.phi_bound = out.raw_phi;
        return out;
    }
    out.rescaled = true;
    // F* = 0 exactly when the fundraising threshold lies at or above the hours
    // the researcher would choose without fundraising, which the hours
    // condition pins at the observed H (or H_max at the cap).
    const double x = std::min(alloc.total_hours, cal.max_hours) - c.duties;
    const double b0 = cal.min_funding + c.guaranteed_funding;
    if (fundraises(1.0)) {
        // Even the floor fundraises: take gamma down to where phi = 1 sits
        // at the rescaled bound.
        const double capped = kPhiRescaleFactor * b0 / (kPhiRescaleFactor * b0 + x);
        const auto a2 = infer_alpha(c, alloc, capped, 1.0, p, cal);
        out.gamma_capped = true;
        out.set_identified = a2.set_identified;
        out.attributes = {a2.tfp, capped, 1.0};
        out.phi_bound = 1.0 / kPhiRescaleFactor;
        return out;
    }
    out.phi_bound = (1.0 - gamma) * b0 / (gamma * x);
    if (!(out.phi_bound > 1.0) || fundraises(std::max(1.0, kPhiRescaleFactor * out.phi_bound))) {
        const double log_bound = bisect_predicate(
            [&](double lp) { return fundraises(std::exp(lp)); }, 0.0, std::log(out.raw_phi), 200,
            1e-12);
        out.phi_bound = std::exp(log_bound);
    }
    out.attributes.fundraising_ability = std::max(1.0, kPhiRescaleFactor * out.phi_bound);
    return out;
}

IdentifiedResearcher identify_researcher(const ResearcherRecord& r, const PreferenceParams& p,
                                         const ZeroFundraiserModels& models,
                                         const Calibration& cal) {
    IdentifiedResearcher out;
    out.id = r.id;
    const auto& al = r.allocation;
    if (al.fundraising > 0.0) {
        const double phi = infer_phi(r.expected_extra_funding, al.fundraising);
        const double gamma = infer_gamma(r.contract, phi, al.fundraising, al.research, cal);
        const auto alpha = infer_alpha(r.contract, al, gamma, phi, p, cal);
        out.attributes = {alpha.tfp, gamma, phi};
        out.set_identified = alpha.set_identified;
    } else {
        if (!models.phi_model.converged && models.phi_model.coefficients.empty()) {
            throw DomainError("zero-fundraiser models were not fitted");
        }
        const auto z = predict_and_rescale(models, r.contract, al, p, cal);
        out.attributes = z.attributes;
        out.zero_fundraiser = true;
        out.rescaled = z.rescaled;
        out.gamma_capped = z.gamma_capped;
        out.set_identified = z.set_identified;
    }
    return out;
}

IdentificationResult identify_population(std::span<const ResearcherRecord> dataset,
                                         const DeepParams& deep, const Calibration& cal) {
    if (dataset.empty()) return {};
    return identify_population(dataset, deep, fit_zero_fundraiser_models(dataset, cal), cal);
}

IdentificationResult identify_population(std::span<const ResearcherRecord> dataset,
                                         const DeepParams& deep,
                                         const ZeroFundraiserModels& models,
                                         const Calibration& cal) {
    IdentificationResult res;
    res.researchers.reserve(dataset.size());
    for (const auto& r : dataset) {
        try {
            const auto p = preference_params_from_type(r.type_index, deep);
            validate(p);
            res.researchers.push_back(identify_researcher(r, p, models, cal));
        } catch (const std::exception& e) {
            res.failures.push_back({r.id, e.what()});
            IdentifiedResearcher bad;
            bad.id = r.id;
            bad.attributes = {0.0, 0.0, 0.0};
            res.researchers.push_back(bad);
        }
    }
    return res;
}

}  // namespace scialloc
