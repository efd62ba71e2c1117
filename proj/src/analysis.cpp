#include "scialloc/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "scialloc/errors.hpp"
#include "scialloc/numerics.hpp"
#include "scialloc/parallel.hpp"
#include "scialloc/planner.hpp"
#include "scialloc/policy_solver.hpp"

namespace scialloc {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double mean(std::span<const double> x) { return compensated_sum(x) / double(x.size()); }

// Population covariance.
double cov(std::span<const double> x, std::span<const double> y) {
    const double mx = mean(x), my = mean(y);
    std::vector<double> t(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) t[i] = (x[i] - mx) * (y[i] - my);
    return compensated_sum(t) / double(x.size());
}

double sd(std::span<const double> x) { return std::sqrt(cov(x, x)); }

void require_positive(std::span<const double> x, const char* what) {
    for (double v : x) {
        if (!(v > 0.0) || !std::isfinite(v)) {
            throw DomainError(std::string(what) + " must be positive and finite");
        }
    }
}

std::vector<double> logs(std::span<const double> x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::log(x[i]);
    return out;
}

}  // namespace

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw DomainError("quantile of an empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw DomainError("quantile level outside [0, 1]");
    std::sort(values.begin(), values.end());
    const double h = (values.size() - 1) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - lo) * (values[hi] - values[lo]);
}

OlsFit ols(std::span<const double> y, const Eigen::MatrixXd& design) {
    const auto n = static_cast<Eigen::Index>(y.size());
    if (design.rows() != n) throw DomainError("design rows differ from the response length");
    const Eigen::Index k = design.cols();

    std::vector<Eigen::Index> keep;
    OlsFit fit;
    Eigen::MatrixXd x(n, 1);
    x.col(0).setOnes();
    for (Eigen::Index j = 0; j < k; ++j) {
        Eigen::MatrixXd trial(n, x.cols() + 1);
        trial << x, design.col(j);
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(trial);
        qr.setThreshold(1e-10);
        if (qr.rank() == trial.cols()) {
            x = std::move(trial);
            keep.push_back(j);
        } else {
            fit.dropped.push_back(static_cast<int>(j));
        }
    }
    if (n <= x.cols()) throw DomainError("regression needs more observations than regressors");

    const Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);
    const Eigen::VectorXd b = x.colPivHouseholderQr().solve(yv);
    const Eigen::VectorXd e = yv - x * b;

    fit.intercept = b(0);
    fit.slopes.assign(static_cast<std::size_t>(k), kNaN);
    for (std::size_t c = 0; c < keep.size(); ++c) fit.slopes[keep[c]] = b(c + 1);
    fit.residuals.assign(e.data(), e.data() + n);
    const double tss = (yv.array() - yv.mean()).square().sum();
    fit.r_squared = tss > 0.0 ? 1.0 - e.squaredNorm() / tss : 1.0;
    return fit;
}

Eigen::MatrixXd label_dummies(std::span<const std::string> labels) {
    const std::set<std::string> distinct(labels.begin(), labels.end());
    std::vector<std::string> levels(distinct.begin(), distinct.end());
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()),
                                              std::max<Eigen::Index>(0, levels.size() - 1));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto it = std::lower_bound(levels.begin(), levels.end(), labels[i]);
        const auto j = it - levels.begin();
        if (j > 0) d(static_cast<Eigen::Index>(i), j - 1) = 1.0;
    }
    return d;
}

double tfp_ratio_90_10(std::span<const double> tfp) {
    if (tfp.size() < 10) throw DomainError("90-10 ratio needs at least 10 values");
    require_positive(tfp, "TFP");
    const std::vector<double> v(tfp.begin(), tfp.end());
    return quantile(v, 0.9) / quantile(v, 0.1);
}

double tfp_ratio_90_10(std::span<const double> tfp, const Eigen::MatrixXd& design) {
    if (tfp.size() < 10) throw DomainError("90-10 ratio needs at least 10 values");
    require_positive(tfp, "TFP");
    const auto fit = ols(logs(tfp), design);
    return std::exp(quantile(fit.residuals, 0.9) - quantile(fit.residuals, 0.1));
}

VarianceDecomposition variance_decomposition(const ProductionSample& s) {
    const auto n = s.tfp.size();
    if (s.intensity.size() != n || s.budget.size() != n || s.research.size() != n ||
        s.output.size() != n) {
        throw DomainError("production sample columns differ in length");
    }
    if (n < 2) throw DomainError("variance decomposition needs at least two researchers");
    require_positive(s.tfp, "TFP");
    require_positive(s.budget, "budget");
    require_positive(s.research, "research hours");
    require_positive(s.output, "output");

    const auto la = logs(s.tfp);
    const auto ly = logs(s.output);
    std::vector<double> lb(n), lr(n);
    for (std::size_t i = 0; i < n; ++i) {
        lb[i] = s.intensity[i] * std::log(s.budget[i]);
        lr[i] = (1.0 - s.intensity[i]) * std::log(s.research[i]);
    }
    VarianceDecomposition d;
    d.var_log_output = cov(ly, ly);
    if (!(d.var_log_output > 0.0)) throw DomainError("Var(log Y) is zero");
    d.var_log_tfp = cov(la, la);
    d.cov_tfp_budget = cov(la, lb);
    d.cov_tfp_research = cov(la, lr);
    d.var_budget = cov(lb, lb);
    d.var_research = cov(lr, lr);
    d.cov_budget_research = cov(lb, lr);
    d.tfp_share = (d.var_log_tfp + 2.0 * d.cov_tfp_budget + 2.0 * d.cov_tfp_research) / d.var_log_output;
    d.raw_share = d.var_log_tfp / d.var_log_output;
    d.residual = d.var_log_output - (d.var_log_tfp + d.var_budget + d.var_research +
                                     2.0 * (d.cov_tfp_budget + d.cov_tfp_research + d.cov_budget_research));
    return d;
}

PowerLawFit power_law_fit(std::span<const double> values, double top_fraction) {
    if (!(top_fraction > 0.0 && top_fraction <= 1.0)) throw DomainError("top fraction outside (0, 1]");
    require_positive(values, "power-law values");
    std::vector<double> v(values.begin(), values.end());
    std::stable_sort(v.begin(), v.end(), std::greater<>());
    const auto n = static_cast<std::size_t>(std::floor(top_fraction * v.size()));
    if (n < 20) throw DomainError("power-law fit needs at least 20 values in the top subsample");

    std::vector<double> y(n);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), 1);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = std::log(double(i + 1) - 0.5);
        x(static_cast<Eigen::Index>(i), 0) = std::log(v[i]);
    }
    const auto fit = ols(y, x);
    if (!fit.dropped.empty()) throw DomainError("power-law values in the top subsample are all equal");
    PowerLawFit out;
    out.exponent = -fit.slopes[0];
    out.n = n;
    out.std_error = out.exponent * std::sqrt(2.0 / double(n));
    return out;
}

CompositionReport composition_effect(const CompositionInput& in, double d) {
    const auto n = in.guaranteed.size();
    if (in.budget.size() != n || in.intensity.size() != n || in.output.size() != n) {
        throw DomainError("composition inputs differ in length");
    }
    if (n == 0) throw DomainError("composition effect needs at least one researcher");
    require_positive(in.budget, "budget");
    const double sb = compensated_sum(in.budget);
    const double sy = compensated_sum(in.output);

    CompositionReport r;
    r.s.resize(n);
    r.t.resize(n);
    r.z.resize(n);
    std::vector<double> ab(n), ay(n), nb(n), ny(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (in.guaranteed[i] < 0.0 || in.guaranteed[i] > in.budget[i]) {
            throw DomainError("guaranteed funding must lie in [0, B]");
        }
        r.s[i] = in.guaranteed[i] / in.budget[i];
        r.t[i] = in.budget[i] / sb;
        r.z[i] = in.output[i] / sy;
        ab[i] = r.t[i] * r.s[i] * d;
        ay[i] = r.z[i] * in.intensity[i] * r.s[i] * d;
        nb[i] = in.budget[i] + d * in.guaranteed[i];
        ny[i] = in.output[i] * std::pow(nb[i] / in.budget[i], in.intensity[i]);
    }
    r.approx_dlog_budget = compensated_sum(ab);
    r.approx_dlog_output = compensated_sum(ay);
    r.exact_dlog_budget = std::log(compensated_sum(nb) / sb);
    r.exact_dlog_output = std::log(compensated_sum(ny) / sy);
    return r;
}

FundingGrowth funding_growth_equivalence(std::span<const GrowthResearcher> rs, double target_output,
                                         GrowthMode mode, const Calibration& cal) {
    const auto n = rs.size();
    if (n == 0) throw DomainError("funding growth needs at least one researcher");

    // Budgets and outputs at growth x.
    auto evaluate = [&](double x, std::vector<double>& b, std::vector<double>& y) {
        b.assign(n, 0.0);
        y.assign(n, 0.0);
        parallel_for(n, [&](std::size_t i) {
            const auto& r = rs[i];
            auto c = r.contract;
            c.guaranteed_funding *= 1.0 + x;
            if (mode == GrowthMode::Mechanical) {
                b[i] = total_budget(c, r.allocation.fundraising, r.attributes.fundraising_ability, cal);
                y[i] = production_output(r.attributes, b[i], r.allocation.research);
            } else {
                const auto s = solve_policy(c, r.attributes, r.prefs, cal);
                b[i] = s.budget;
                y[i] = s.output;
            }
        });
    };

    std::vector<double> b0, y0, b, y;
    evaluate(0.0, b0, y0);
    const double base_y = compensated_sum(y0);
    const double base_b = compensated_sum(b0);
    if (target_output < base_y * (1.0 - 1e-12)) {
        throw DomainError("target output is below current output");
    }
    auto total_output = [&](double x) {
        evaluate(x, b, y);
        return compensated_sum(y);
    };

    FundingGrowth out;
    double lo = 0.0, hi = 1.0;
    if (target_output > base_y * (1.0 + 1e-8)) {
        while (total_output(hi) < target_output) {
            lo = hi;
            hi *= 2.0;
            if (hi > 1e9) {
                std::ostringstream os;
                os << "target output " << target_output << " unreachable by raising G (current "
                   << base_y << ")";
                throw DomainError(os.str());
            }
        }
        // Output is increasing in x; bisect to relative 1e-8 in Y.
        for (int it = 0; it < 500; ++it) {
            out.iterations = it + 1;
            const double mid = 0.5 * (lo + hi);
            const double ym = total_output(mid);
            if (std::abs(ym - target_output) <= 1e-8 * target_output) {
                lo = hi = mid;
                break;
            }
            (ym < target_output ? lo : hi) = mid;
            if (hi - lo <= 1e-15 * hi) break;
        }
        out.g_growth = 0.5 * (lo + hi);
    }
    const double final_y = total_output(out.g_growth);
    out.output_growth = final_y / base_y - 1.0;
    out.budget_growth = compensated_sum(b) / base_b - 1.0;
    return out;
}

Lorenz lorenz_gini(std::span<const double> values) {
    if (values.empty()) throw DomainError("Lorenz curve of an empty sample");
    for (double v : values) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError("Lorenz values must be nonnegative");
    }
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    const double total = compensated_sum(v);
    if (!(total > 0.0)) throw DomainError("Lorenz values are all zero");
    const auto n = v.size();
    Lorenz l;
    l.population_share.push_back(0.0);
    l.value_share.push_back(0.0);
    std::vector<double> weighted(n);
    double cum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        cum += v[i];
        l.population_share.push_back(double(i + 1) / n);
        l.value_share.push_back(cum / total);
        weighted[i] = double(i + 1) * v[i];
    }
    l.value_share.back() = 1.0;
    l.gini = 2.0 * compensated_sum(weighted) / (n * total) - (n + 1.0) / n;
    return l;
}

std::vector<WedgeRow> wedge_rows(std::span<const std::string> ids, std::span<const double> actual,
                                 std::span<const double> optimal) {
    if (ids.size() != actual.size() || actual.size() != optimal.size()) {
        throw DomainError("wedge inputs differ in length");
    }
    std::vector<WedgeRow> rows;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        rows.push_back({ids[i], actual[i], optimal[i], actual[i] - optimal[i]});
    }
    return rows;
}

WedgeFit wedge_regression(std::span<const WedgeRow> rows, const Eigen::MatrixXd& covariates) {
    const auto n = static_cast<Eigen::Index>(rows.size());
    if (covariates.rows() != n && covariates.size() != 0) {
        throw DomainError("covariate rows differ from the wedge rows");
    }
    const Eigen::Index k = covariates.size() == 0 ? 0 : covariates.cols();
    Eigen::MatrixXd x(n, k + 1);
    std::vector<double> y(rows.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        x(i, 0) = rows[i].optimal;
        y[i] = rows[i].actual;
    }
    if (k > 0) x.rightCols(k) = covariates;
    const auto fit = ols(y, x);

    WedgeFit w;
    w.intercept = fit.intercept;
    w.beta = fit.slopes[0];
    w.delta.assign(fit.slopes.begin() + 1, fit.slopes.end());
    for (int j : fit.dropped) {
        if (j == 0) throw DomainError("optimal levels are collinear with the intercept");
        w.dropped.push_back(j - 1);
    }
    w.r_squared = fit.r_squared;
    return w;
}

FieldOutputDecomposition field_output_decomposition(std::span<const FieldOutputInput> fields) {
    if (fields.empty()) throw DomainError("field decomposition needs at least one field");
    struct Stats {
        double mean_b, mean_r, mean_a, actual, optimized;
    };
    std::vector<Stats> st;
    for (const auto& f : fields) {
        const auto n = f.attributes.size();
        if (n == 0) throw DomainError("field " + f.field + " is empty");
        if (f.budget.size() != n || f.research.size() != n || f.optimized_output.size() != n) {
            throw DomainError("field " + f.field + " inputs differ in length");
        }
        std::vector<double> a(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = f.attributes[i].tfp;
            y[i] = production_output(f.attributes[i], f.budget[i], f.research[i]);
        }
        st.push_back({mean(f.budget), mean(f.research), mean(a), mean(y), mean(f.optimized_output)});
    }
    std::size_t bench = 0;
    for (std::size_t k = 1; k < st.size(); ++k) {
        if (st[k].actual > st[bench].actual) bench = k;
    }
    const auto& sb = st[bench];

    FieldOutputDecomposition out;
    out.benchmark = fields[bench].field;
    for (std::size_t k = 0; k < fields.size(); ++k) {
        const auto& f = fields[k];
        const double cb = sb.mean_b / st[k].mean_b;
        const double cr = sb.mean_r / st[k].mean_r;
        const double ca = sb.mean_a / st[k].mean_a;
        std::vector<double> eq_in(f.attributes.size()), eq_a(f.attributes.size());
        for (std::size_t i = 0; i < f.attributes.size(); ++i) {
            eq_in[i] = production_output(f.attributes[i], cb * f.budget[i], cr * f.research[i]);
            auto a = f.attributes[i];
            a.tfp *= ca;
            eq_a[i] = production_output(a, f.budget[i], f.research[i]);
        }
        // The benchmark is unchanged by equalization toward itself.
        out.rows.push_back({f.field, 100.0 * st[k].actual / sb.actual, 100.0 * mean(eq_in) / sb.actual,
                            100.0 * mean(eq_a) / sb.actual, 100.0 * st[k].optimized / sb.optimized});
    }
    return out;
}

std::vector<SummaryLine> counterfactual_summary(std::span<const OutcomeRow> actual,
                                                std::span<const OutcomeRow> counterfactual) {
    if (actual.size() != counterfactual.size()) throw DomainError("populations are not matched");
    if (actual.empty()) throw DomainError("summary of an empty population");
    auto column = [](std::span<const OutcomeRow> rows, double OutcomeRow::*m) {
        std::vector<double> v;
        for (const auto& r : rows) v.push_back(r.*m);
        return v;
    };
    std::vector<SummaryLine> out;
    auto line = [&](std::string label, double a, double c) {
        SummaryLine l{std::move(label), a, c, std::nullopt};
        if (a != 0.0) l.change = (c - a) / std::abs(a);
        out.push_back(std::move(l));
    };
    struct Col {
        const char* name;
        double OutcomeRow::*m;
    };
    const Col cols[] = {{"research", &OutcomeRow::research},
                        {"budget", &OutcomeRow::budget},
                        {"output", &OutcomeRow::output},
                        {"utility", &OutcomeRow::utility},
                        {"social_value", &OutcomeRow::social_value}};
    const auto ra = column(actual, &OutcomeRow::research), rc = column(counterfactual, &OutcomeRow::research);
    const auto ba = column(actual, &OutcomeRow::budget), bc = column(counterfactual, &OutcomeRow::budget);
    for (const auto& c : cols) {
        const auto a = column(actual, c.m), b = column(counterfactual, c.m);
        line(std::string(c.name) + "_mean", mean(a), mean(b));
        line(std::string(c.name) + "_sd", sd(a), sd(b));
        if (c.m == &OutcomeRow::output || c.m == &OutcomeRow::utility ||
            c.m == &OutcomeRow::social_value) {
            line(std::string(c.name) + "_per_hour", mean(a) / mean(ra), mean(b) / mean(rc));
            line(std::string(c.name) + "_per_dollar", mean(a) / mean(ba), mean(b) / mean(bc));
        }
    }
    // Share of each input moved between researchers; reported in both value and change.
    for (const auto& [name, a, c] : {std::tuple{"research_reallocated", &ra, &rc},
                                     std::tuple{"budget_reallocated", &ba, &bc}}) {
        SummaryLine l{name, 0.0, 0.0, std::nullopt};
        if (const auto m = reallocation_magnitude(*a, *c)) {
            l.counterfactual = *m;
            l.change = *m;
        }
        out.push_back(l);
    }
    return out;
}

}  // namespace scialloc
