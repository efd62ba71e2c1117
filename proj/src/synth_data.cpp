#include "scialloc/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "scialloc/errors.hpp"
#include "scialloc/identification.hpp"
#include "scialloc/parallel.hpp"
#include "scialloc/policy_solver.hpp"
#include "scialloc/wtp_engine.hpp"

namespace scialloc {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t index, std::uint64_t purpose) {
    return std::mt19937_64(splitmix64(splitmix64(splitmix64(seed) ^ index) ^ purpose));
}

double draw_beta(std::mt19937_64& rng, double mean, double concentration) {
    std::gamma_distribution<double> ga(mean * concentration, 1.0);
    std::gamma_distribution<double> gb((1.0 - mean) * concentration, 1.0);
    const double x = ga(rng), y = gb(rng);
    return x / (x + y);
}

struct Draw {
    ContractState contract;
    Attributes attributes;
    double research = 0.0;
};

// States, gamma, phi and a research-hours target; alpha is set afterwards.
Draw draw_state(std::mt19937_64& rng, const PopulationConfig& cfg, const FieldSpec& field) {
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Draw d;
    d.contract.salary = cfg.salary_median * std::exp(cfg.salary_log_sd * z(rng));
    d.contract.guaranteed_funding =
        u(rng) < cfg.g_zero_share
            ? 0.0
            : cfg.g_median * field.g_median_scale * std::exp(cfg.g_log_sd * z(rng));
    d.contract.duties = std::clamp(cfg.duties_mean + cfg.duties_sd * z(rng), 0.0, cfg.duties_max);
    const double beta_draw = draw_beta(rng, field.gamma_mean, cfg.gamma_concentration);
    if (cfg.gamma_law == GammaLaw::Beta) {
        d.attributes.funding_intensity = beta_draw;
    } else {
        const double lin = cfg.gamma_c0 + cfg.gamma_cg * d.contract.guaranteed_funding / 1e5 +
                           cfg.gamma_cd * d.contract.duties / 10.0 +
                           cfg.gamma_cm * d.contract.salary / 1e5;
        d.attributes.funding_intensity = 1.0 / (1.0 + std::exp(-lin));
    }
    const double phi_median = u(rng) < cfg.phi_low_share ? cfg.phi_low_median : cfg.phi_high_median;
    d.attributes.fundraising_ability = std::max(1.0, phi_median * std::exp(cfg.phi_log_sd * z(rng)));
    const double v = std::log1p((cfg.research_sd * cfg.research_sd) /
                                (cfg.research_mean * cfg.research_mean));
    const double mu = std::log(cfg.research_mean) - 0.5 * v;
    d.research = std::exp(mu + std::sqrt(v) * z(rng));
    return d;
}

}  // namespace

std::vector<FieldSpec> default_fields() {
    return {{"Humanities", 0.2, 0.22, 0.4},
            {"Social Sciences", 0.2, 0.30, 0.7},
            {"Medicine & Health", 0.2, 0.42, 1.3},
            {"Natural Sciences", 0.2, 0.48, 1.4},
            {"Engineering & Math", 0.2, 0.52, 1.5}};
}

PopulationConfig calibrated_defaults() {
    PopulationConfig cfg;
    cfg.fields = default_fields();
    cfg.phi_low_share = 0.2;
    cfg.phi_high_median = 10000.0;
    cfg.research_mean = 20.0;
    cfg.research_sd = 10.0;
    DeepParams d;
    d.income_weight = 4e-9;
    d.effort_weight = 1e-14;
    d.sigma0 = std::log(1.736);
    d.eta0 = std::log(0.1878 / (1.0 - 0.1878));
    d.xi0 = std::log(1.469);
    d.zeta0 = std::log(5.2e-12);
    cfg.deep = d;
    return cfg;
}

SyntheticPopulation generate_population(const PopulationConfig& cfg) {
    if (cfg.n < 1) throw DomainError("population size must be >= 1");
    if (cfg.fields.empty()) throw DomainError("at least one field is required");
    if (cfg.features < 1) throw DomainError("at least one feature column is required");
    validate(cfg.calibration);
    double share_total = 0.0;
    for (const auto& f : cfg.fields) {
        if (!(f.share > 0.0) || !(f.gamma_mean > 0.0 && f.gamma_mean < 1.0)) {
            throw DomainError("field shares must be positive and gamma means in (0,1)");
        }
        share_total += f.share;
    }
    const auto& cal = cfg.calibration;
    const std::size_t n = static_cast<std::size_t>(cfg.n);

    // Features and field labels first: T is fitted on the whole sample.
    Eigen::MatrixXd features(cfg.n, cfg.features);
    std::vector<std::size_t> field_of(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto rng = stream(cfg.seed, i, 1);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::normal_distribution<double> z(0.0, 1.0);
        double pick = u(rng) * share_total;
        std::size_t f = 0;
        while (f + 1 < cfg.fields.size() && pick >= cfg.fields[f].share) {
            pick -= cfg.fields[f].share;
            ++f;
        }
        field_of[i] = f;
        const bool group = u(rng) < 0.4;
        for (int k = 0; k < cfg.features; ++k) {
            features(static_cast<Eigen::Index>(i), k) = (group ? 1.5 : -1.0) * (1.0 + 0.3 * k) + z(rng);
        }
    }
    const auto type_fit = fit_type_index(features, cfg.seed);

    SyntheticPopulation pop;
    pop.deep = cfg.deep;
    pop.type_model = type_fit.model;
    pop.records.resize(n);
    pop.truth.resize(n);
    std::vector<int> retries(n, 0);
    const int width = std::max(5, static_cast<int>(std::to_string(cfg.n).size()));

    parallel_for(n, [&](std::size_t i) {
        auto rng = stream(cfg.seed, i, 2);
        std::normal_distribution<double> z(0.0, 1.0);
        const auto p = preference_params_from_type(type_fit.type_index[i], cfg.deep);
        validate(p);
        ResearcherRecord r;
        char id[32];
        std::snprintf(id, sizeof id, "r%0*zu", width, i + 1);
        r.id = id;
        r.field = cfg.fields[field_of[i]].name;
        r.type_index = type_fit.type_index[i];
        r.features.resize(static_cast<std::size_t>(cfg.features));
        for (int k = 0; k < cfg.features; ++k) {
            r.features[static_cast<std::size_t>(k)] = features(static_cast<Eigen::Index>(i), k);
        }
        for (int attempt = 0;; ++attempt) {
            if (attempt >= 100) {
                throw NumericalFailure("researcher " + r.id + ": no valid draw after 100 retries");
            }
            try {
                Draw d = draw_state(rng, cfg, cfg.fields[field_of[i]]);
                auto& c = d.contract;
                auto& a = d.attributes;
                validate(c, cal);
                const double g = a.funding_intensity, phi = a.fundraising_ability;
                const double b0 = cal.min_funding + c.guaranteed_funding;
                const double x_thr = (1.0 - g) * b0 / (g * phi);
                TimeAllocation target;
                target.research = d.research;
                if (d.research > x_thr) {
                    target.fundraising = d.research * g / (1.0 - g) - b0 / phi;
                }
                target.total_hours = c.duties + target.research + target.fundraising;
                if (!(target.total_hours < cal.max_hours)) throw DomainError("hours above the cap");
                a.tfp = infer_alpha(c, target, g, phi, p, cal).tfp;
                if (cfg.tfp_log_noise > 0.0) a.tfp *= std::exp(cfg.tfp_log_noise * z(rng));
                const auto s = solve_policy(c, a, p, cal);
                r.contract = c;
                r.allocation = {s.research, s.fundraising, s.total_hours};
                r.expected_extra_funding = phi * s.fundraising;
                r.wtp_answers = {};
                const auto reps = run_thought_experiments(c, a, p, cal);
                for (const auto& rep : reps) {
                    double m = rep.indifference_salary;
                    if (cfg.answer_noise_sd > 0.0) m = std::max(1.0, m + cfg.answer_noise_sd * z(rng));
                    r.wtp_answers[static_cast<std::size_t>(rep.offer.label - 1)] = m;
                }
                validate(r, cal);
                pop.truth[i] = a;
                break;
            } catch (const DomainError&) {
                ++retries[i];
            } catch (const UnboundedCompensation&) {
                ++retries[i];
            }
        }
        pop.records[i] = std::move(r);
    });
    for (int k : retries) pop.resampled += k;
    return pop;
}

}  // namespace scialloc
