#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "dataset_io.hpp"
#include "json.hpp"
#include "scialloc/analysis.hpp"
#include "scialloc/errors.hpp"
#include "scialloc/gmm_estimator.hpp"
#include "scialloc/identification.hpp"
#include "scialloc/parallel.hpp"
#include "scialloc/planner.hpp"
#include "scialloc/policy_solver.hpp"
#include "scialloc/synth_data.hpp"
#include "scialloc/type_index.hpp"

namespace scialloc::cli {

namespace {

using nlohmann::json;

// Thrown for bad flags or inconsistent inputs found after parsing.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Globals {
    unsigned threads = 0;
    double min_funding = Calibration{}.min_funding;
    double max_hours = Calibration{}.max_hours;
    double externality = Calibration{}.externality;

    Calibration calibration() const {
        Calibration c{min_funding, max_hours, externality};
        validate(c);
        return c;
    }
};

bool verbose() {
    const char* v = std::getenv("SCIALLOC_LOG");
    return v && *v && std::string(v) != "0";
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open '" + path + "' for reading");
    return in;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot open '" + path + "' for writing");
    return out;
}

void save_json(const std::string& path, const json& j) {
    auto out = open_out(path);
    write_json(out, j);
}

constexpr const char* kParamNames[DeepParams::kSize] = {"omega", "psi",  "sigma0", "sigma1", "eta0",
                                                        "eta1",  "xi0",  "xi1",    "zeta0",  "zeta1"};

json params_json(const DeepParams& d) {
    json j = json::object();
    const auto a = d.to_array();
    for (std::size_t k = 0; k < a.size(); ++k) j[kParamNames[k]] = a[k];
    return j;
}

DeepParams params_from_json(const json& j) {
    std::array<double, DeepParams::kSize> a{};
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (!j.contains(kParamNames[k])) {
            throw SchemaError(std::string("results: missing parameter '") + kParamNames[k] + "'");
        }
        a[k] = j.at(kParamNames[k]).get<double>();
    }
    return DeepParams::from_array(a);
}

std::vector<ResearcherRecord> load_dataset(const std::string& path, const Calibration& cal) {
    auto in = open_in(path);
    auto records = read_dataset(in);
    if (records.empty()) throw ValidationError("dataset '" + path + "' has no rows");
    std::set<std::string> ids;
    for (const auto& r : records) {
        validate(r, cal);
        if (!ids.insert(r.id).second) throw ValidationError("duplicate id '" + r.id + "'");
    }
    return records;
}

// T from the features, as the generator does.
void attach_type_index(std::vector<ResearcherRecord>& records, std::uint64_t seed) {
    const std::size_t k = records.front().features.size();
    if (k == 0) {
        for (auto& r : records) r.type_index = 0.0;
        return;
    }
    Eigen::MatrixXd x(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].features.size() != k) throw SchemaError("feature rows differ in length");
        for (std::size_t j = 0; j < k; ++j) x(i, j) = records[i].features[j];
    }
    const auto fit = fit_type_index(x, seed);
    for (std::size_t i = 0; i < records.size(); ++i) records[i].type_index = fit.type_index[i];
}

json answers_json(const std::array<std::optional<double>, kNumExperiments>& a) {
    json j = json::array();
    for (const auto& v : a) j.push_back(v ? json(*v) : json(nullptr));
    return j;
}

// Per-researcher identification block shared by estimate and simulate --truth.
json researchers_json(const std::vector<ResearcherRecord>& records,
                      const IdentificationResult& ident,
                      const std::vector<ExperimentValues>* residuals) {
    std::map<std::string, std::string> failed;
    for (const auto& f : ident.failures) failed[f.id] = f.reason;
    json rows = json::array();
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        const auto& id = ident.researchers[i];
        json row{{"id", r.id}, {"field", r.field}, {"T", r.type_index}};
        if (const auto it = failed.find(r.id); it != failed.end()) {
            row["failure"] = it->second;
        } else {
            row["alpha"] = id.attributes.tfp;
            row["gamma"] = id.attributes.funding_intensity;
            row["phi"] = id.attributes.fundraising_ability;
            row["zero_fundraiser"] = id.zero_fundraiser;
            row["rescaled"] = id.rescaled;
            row["gamma_capped"] = id.gamma_capped;
            row["set_identified"] = id.set_identified;
        }
        if (residuals) row["residuals"] = answers_json((*residuals)[i]);
        rows.push_back(std::move(row));
    }
    return rows;
}

json trace_json(const std::vector<StageRecord>& trace) {
    json j = json::array();
    for (const auto& s : trace) {
        json cands = json::array();
        for (const auto& c : s.candidates) {
            const auto a = c.to_array();
            cands.push_back(std::vector<double>(a.begin(), a.end()));
        }
        j.push_back({{"stage", s.stage}, {"candidates", cands}, {"losses", s.losses},
                     {"evaluations", s.evaluations}});
    }
    return j;
}

double max_abs_residual(const std::vector<ExperimentValues>& res) {
    double m = 0.0;
    for (const auto& row : res)
        for (const auto& v : row)
            if (v) m = std::max(m, std::abs(*v));
    return m;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
    int n = 500;
    std::uint64_t seed = 1;
    std::string out, truth;
    double noise = 0.0;
    std::string gamma_law = "beta";
};

int cmd_simulate(const SimulateArgs& a, const Globals& g, std::ostream& err) {
    if (a.n < 1) throw ValidationError("--n must be at least 1");
    auto cfg = calibrated_defaults();
    cfg.n = a.n;
    cfg.seed = a.seed;
    cfg.answer_noise_sd = a.noise;
    cfg.calibration = g.calibration();
    cfg.gamma_law = a.gamma_law == "logistic" ? GammaLaw::StateLogistic : GammaLaw::Beta;
    const auto pop = generate_population(cfg);
    {
        auto out = open_out(a.out);
        write_dataset(out, pop.records);
    }
    if (!a.truth.empty()) {
        IdentificationResult ident;
        for (std::size_t i = 0; i < pop.records.size(); ++i) {
            ident.researchers.push_back({pop.records[i].id, pop.truth[i], false, false, false, false});
        }
        json j{{"schema_version", kSchemaVersion},
               {"kind", "truth"},
               {"seed", a.seed},
               {"params", params_json(pop.deep)},
               {"researchers", researchers_json(pop.records, ident, nullptr)}};
        save_json(a.truth, j);
    }
    if (verbose()) err << "simulate: wrote " << pop.records.size() << " researchers to " << a.out << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------- estimate

struct EstimateArgs {
    std::string data, out;
    std::uint64_t seed = 1;
    bool grid_only = false;
    int max_evaluations = EstimationConfig{}.max_evaluations;
    int refinements = EstimationConfig{}.refinements;
};

json estimation_json(const EstimationResult& r, const std::vector<ResearcherRecord>& records,
                     const Calibration& cal, const EstimateArgs& a, const std::string& status) {
    json j{{"schema_version", kSchemaVersion},
           {"kind", "estimate"},
           {"status", status},
           {"seed", a.seed},
           {"grid_only", a.grid_only},
           {"params", params_json(r.params)},
           {"loss", r.loss},
           {"converged", r.converged},
           {"evaluations", r.evaluations},
           {"penalized", r.penalized},
           {"max_abs_residual", max_abs_residual(r.residuals)},
           {"trace", trace_json(r.trace)}};
    const auto ident = identify_population(records, r.params, cal);
    const bool have_residuals = r.residuals.size() == records.size();
    j["researchers"] = researchers_json(records, ident, have_residuals ? &r.residuals : nullptr);
    json failures = json::array();
    for (const auto& f : r.failures) failures.push_back({{"id", f.id}, {"reason", f.reason}});
    j["failures"] = failures;
    return j;
}

int cmd_estimate(const EstimateArgs& a, const Globals& g, std::ostream& err) {
    const auto cal = g.calibration();
    auto records = load_dataset(a.data, cal);
    attach_type_index(records, a.seed);
    EstimationConfig cfg;
    cfg.grid_only = a.grid_only;
    cfg.max_evaluations = a.max_evaluations;
    cfg.refinements = a.refinements;
    try {
        const auto r = estimate(records, cfg, cal);
        save_json(a.out, estimation_json(r, records, cal, a, "ok"));
        if (verbose()) {
            err << "estimate: loss " << r.loss << ", max |residual| " << max_abs_residual(r.residuals)
                << ", " << r.evaluations << " evaluations\n";
        }
        return kExitOk;
    } catch (const EstimationFailure& e) {
        save_json(a.out, estimation_json(e.result, records, cal, a, "failed"));
        err << "estimate: " << e.what() << " (trace written to " << a.out << ")\n";
        return kExitNumerical;
    }
}

// ---------------------------------------------------------------- shared by reallocate and report

struct Results {
    DeepParams params;
    std::map<std::string, json> rows;  // by id
};

Results load_results(const std::string& path) {
    auto in = open_in(path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError("results '" + path + "': " + e.what());
    }
    if (!j.contains("schema_version") || j["schema_version"] != kSchemaVersion) {
        throw SchemaError("results '" + path + "': unsupported schema_version");
    }
    if (!j.contains("params") || !j.contains("researchers")) {
        throw SchemaError("results '" + path + "': missing params or researchers");
    }
    Results r;
    r.params = params_from_json(j["params"]);
    for (const auto& row : j["researchers"]) r.rows[row.at("id").get<std::string>()] = row;
    return r;
}

struct Joined {
    std::vector<ResearcherRecord> records;  // identified researchers only
    std::vector<PlannerResearcher> researchers;
    std::vector<std::string> excluded;
};

Joined join(const std::vector<ResearcherRecord>& records, const Results& res) {
    Joined out;
    for (const auto& r : records) {
        const auto it = res.rows.find(r.id);
        if (it == res.rows.end()) throw ValidationError("results have no row for id '" + r.id + "'");
        const auto& row = it->second;
        if (!row.contains("alpha")) {
            out.excluded.push_back(r.id);
            continue;
        }
        auto rec = r;
        rec.type_index = row.at("T").get<double>();
        const Attributes attr{row.at("alpha").get<double>(), row.at("gamma").get<double>(),
                              row.at("phi").get<double>()};
        out.researchers.push_back({r.id, r.field, r.contract, attr,
                                   preference_params_from_type(rec.type_index, res.params),
                                   r.expected_extra_funding});
        out.records.push_back(std::move(rec));
    }
    if (out.researchers.empty()) throw ValidationError("no identified researchers to work with");
    return out;
}

json lorenz_json(std::span<const double> v) {
    const auto l = lorenz_gini(v);
    return {{"gini", l.gini}, {"population_share", l.population_share}, {"value_share", l.value_share}};
}

json table(std::vector<std::string> columns, const std::vector<std::vector<double>>& rows) {
    return {{"columns", std::move(columns)}, {"rows", rows}};
}

// ---------------------------------------------------------------- reallocate

struct ReallocateArgs {
    std::string data, results, out, summary;
    std::string objective = "output";
    std::string levers = "G,D";
    bool across_fields = false;
    bool unconstrained_budget = false;
    bool freeze = false;
    double planner_kappa = 1.0;
    int max_rounds = PlannerOptions{}.max_rounds;
};

PlannerLevers parse_levers(const std::string& s) {
    PlannerLevers l{false, false};
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok == "G") {
            l.funding = true;
        } else if (tok == "D") {
            l.duties = true;
        } else {
            throw ValidationError("--levers: unknown lever '" + tok + "' (expected G, D or G,D)");
        }
    }
    if (!l.funding && !l.duties) throw ValidationError("--levers needs at least one lever");
    return l;
}

struct Outcome {
    ContractState contract;
    PolicySolution solution;
    double social = 0.0;
};

int cmd_reallocate(const ReallocateArgs& a, const Globals& g, std::ostream& err) {
    const auto cal = g.calibration();
    const auto levers = parse_levers(a.levers);
    if (a.objective != "output" && a.objective != "utility") {
        throw ValidationError("--objective must be output or utility");
    }
    const auto records = load_dataset(a.data, cal);
    const auto res = load_results(a.results);
    const auto joined = join(records, res);
    const auto& rs = joined.researchers;
    const std::size_t n = rs.size();

    ReallocationOptions opt;
    opt.objective = a.objective == "output" ? PlannerObjective::Output : PlannerObjective::Utility;
    opt.levers = levers;
    opt.kappa = a.planner_kappa;
    opt.unconstrained_budget = a.unconstrained_budget;
    opt.across_fields = a.across_fields;
    opt.solver.max_rounds = a.max_rounds;

    // Groups as the planner forms them; with --freeze the actual allocation is
    // carried through at its own pi.
    std::vector<FieldCounterfactual> groups;
    if (a.freeze) {
        std::map<std::string, std::vector<std::size_t>> by;
        for (std::size_t i = 0; i < n; ++i) by[a.across_fields ? std::string() : rs[i].field].push_back(i);
        for (auto& [field, members] : by) {
            std::vector<PlannerResearcher> sub;
            for (auto i : members) sub.push_back(rs[i]);
            const auto p = make_planner_problem(sub, opt.objective, levers, opt.kappa, cal,
                                                opt.unconstrained_budget);
            CounterfactualAllocation c;
            std::vector<ContractState> actual;
            for (const auto& r : sub) actual.push_back(r.contract);
            c.actual_pi = a.unconstrained_budget ? 1.0 : feasibility_fixed_point(sub, actual, cal);
            c.actual_objective = aggregate_objective(p, actual, c.actual_pi, &c.actual_responses);
            c.contracts = actual;
            c.pi = c.actual_pi;
            c.responses = c.actual_responses;
            c.objective = c.actual_objective;
            c.converged = true;
            c.returned_actual = true;
            groups.push_back({field, members, std::move(c)});
        }
    } else {
        groups = reallocate(rs, opt, cal);
    }

    std::vector<Outcome> before(n), after(n);
    json field_rows = json::array();
    std::ostringstream violations;
    for (const auto& grp : groups) {
        const auto& c = grp.allocation;
        double g_act = 0.0, g_cf = 0.0, d_act = 0.0, d_cf = 0.0, eg = 0.0, raised = 0.0;
        for (std::size_t k = 0; k < grp.members.size(); ++k) {
            const auto i = grp.members[k];
            before[i] = {rs[i].contract, c.actual_responses[k], 0.0};
            after[i] = {c.contracts[k], c.responses[k], 0.0};
            g_act += rs[i].contract.guaranteed_funding;
            g_cf += c.contracts[k].guaranteed_funding;
            d_act += rs[i].contract.duties;
            d_cf += c.contracts[k].duties;
            eg += rs[i].expected_extra_funding;
            raised += c.pi * rs[i].attributes.fundraising_ability * c.responses[k].fundraising;
        }
        const double cons_g = g_act > 0.0 ? std::abs(g_cf / g_act - 1.0) : std::abs(g_cf);
        const double cons_d = d_act > 0.0 ? std::abs(d_cf / d_act - 1.0) : std::abs(d_cf);
        const double feas = eg > 0.0 ? std::abs(raised / eg - 1.0) : std::abs(raised);
        const std::string label = grp.field.empty() ? "(pooled)" : grp.field;
        if (cons_g > 1e-8 || cons_d > 1e-8 || (!a.unconstrained_budget && feas > 1e-6)) {
            violations << "field " << label << ": conservation G " << cons_g << ", D " << cons_d
                       << ", feasibility " << feas << ", KKT G " << c.kkt_residual_g << ", KKT D "
                       << c.kkt_residual_d << ", lambda G " << c.lambda_g << ", lambda D "
                       << c.lambda_d << ", pi " << c.pi << '\n';
        }
        field_rows.push_back({{"field", grp.field},
                              {"n", grp.members.size()},
                              {"pi_actual", c.actual_pi},
                              {"pi", c.pi},
                              {"lambda_g", c.lambda_g},
                              {"lambda_d", c.lambda_d},
                              {"kkt_residual_g", c.kkt_residual_g},
                              {"kkt_residual_d", c.kkt_residual_d},
                              {"objective_actual", c.actual_objective},
                              {"objective", c.objective},
                              {"rounds", c.rounds},
                              {"converged", c.converged},
                              {"returned_actual", c.returned_actual},
                              {"conservation_g", cons_g},
                              {"conservation_d", cons_d},
                              {"feasibility", feas}});
    }
    if (!violations.str().empty()) {
        err << "reallocate: constraint violation\n" << violations.str();
        return kExitNumerical;
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (auto* o : {&before[i], &after[i]}) {
            const auto& s = o->solution;
            o->social = social_value(o->contract.salary, s.output, s.research, s.fundraising,
                                     o->contract.duties, rs[i].prefs, cal.externality);
        }
    }

    {
        auto out = open_out(a.out);
        out << csv_line({"id", "field", "M", "G", "D", "H", "F", "R", "B", "Y", "V", "S", "G_opt",
                         "D_opt", "H_opt", "F_opt", "R_opt", "B_opt", "Y_opt", "V_opt", "S_opt",
                         "wedge_R", "wedge_B"})
            << '\n';
        for (std::size_t i = 0; i < n; ++i) {
            const auto& b = before[i];
            const auto& c = after[i];
            std::vector<std::string> cells{rs[i].id, rs[i].field};
            for (double v : {b.contract.salary, b.contract.guaranteed_funding, b.contract.duties,
                             b.solution.total_hours, b.solution.fundraising, b.solution.research,
                             b.solution.budget, b.solution.output, b.solution.utility, b.social,
                             c.contract.guaranteed_funding, c.contract.duties, c.solution.total_hours,
                             c.solution.fundraising, c.solution.research, c.solution.budget,
                             c.solution.output, c.solution.utility, c.social,
                             b.solution.research - c.solution.research,
                             b.solution.budget - c.solution.budget}) {
                cells.push_back(format_number(v));
            }
            out << csv_line(cells) << '\n';
        }
    }

    std::vector<OutcomeRow> rows_a(n), rows_c(n);
    std::vector<double> ra(n), rc(n), ba(n), bc(n), ga(n), gc(n), da(n), dc(n);
    std::vector<std::string> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& b = before[i];
        const auto& c = after[i];
        rows_a[i] = {b.solution.research, b.solution.budget, b.solution.output, b.solution.utility, b.social};
        rows_c[i] = {c.solution.research, c.solution.budget, c.solution.output, c.solution.utility, c.social};
        ra[i] = b.solution.research;
        rc[i] = c.solution.research;
        ba[i] = b.solution.budget;
        bc[i] = c.solution.budget;
        ga[i] = b.contract.guaranteed_funding;
        gc[i] = c.contract.guaranteed_funding;
        da[i] = b.contract.duties;
        dc[i] = c.contract.duties;
        ids[i] = rs[i].id;
    }

    json summary = json::array();
    for (const auto& l : counterfactual_summary(rows_a, rows_c)) {
        summary.push_back({{"label", l.label}, {"actual", l.actual}, {"counterfactual", l.counterfactual},
                           {"change", l.change ? json(*l.change) : json(nullptr)}});
    }

    // Uniform G growth that reproduces the counterfactual output growth.
    double y_act = 0.0, y_cf = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        y_act += before[i].solution.output;
        y_cf += after[i].solution.output;
    }
    const double growth = y_cf / y_act;
    std::vector<GrowthResearcher> grs;
    for (std::size_t i = 0; i < n; ++i) {
        grs.push_back({rs[i].contract, rs[i].attributes, rs[i].prefs, joined.records[i].allocation});
    }
    json equivalence{{"output_growth_target", growth - 1.0}};
    for (const auto mode : {GrowthMode::Mechanical, GrowthMode::Behavioral}) {
        const char* name = mode == GrowthMode::Mechanical ? "mechanical" : "behavioral";
        std::vector<double> y(n);
        parallel_for(n, [&](std::size_t i) {
            const auto& r = grs[i];
            if (mode == GrowthMode::Mechanical) {
                const double b = total_budget(r.contract, r.allocation.fundraising,
                                              r.attributes.fundraising_ability, cal);
                y[i] = production_output(r.attributes, b, r.allocation.research);
            } else {
                y[i] = solve_policy(r.contract, r.attributes, r.prefs, cal).output;
            }
        });
        double base = 0.0;
        for (double v : y) base += v;
        try {
            const auto fg = funding_growth_equivalence(grs, base * growth, mode, cal);
            equivalence[name] = {{"g_growth", fg.g_growth}, {"budget_growth", fg.budget_growth},
                                 {"output_growth", fg.output_growth}};
        } catch (const DomainError& e) {
            equivalence[name] = {{"error", e.what()}};
        }
    }

    json wedges = json::object();
    const std::size_t k = joined.records.front().features.size();
    Eigen::MatrixXd z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) z(i, j) = joined.records[i].features[j];
    for (const auto& [name, act, opt_v] : {std::tuple{"research", &ra, &rc}, std::tuple{"budget", &ba, &bc}}) {
        const auto rows = wedge_rows(ids, *act, *opt_v);
        json entry = json::object();
        for (const auto& [label, cov] : {std::pair{"no_covariates", Eigen::MatrixXd()}, std::pair{"features", z}}) {
            try {
                const auto f = wedge_regression(rows, cov);
                entry[label] = {{"intercept", f.intercept}, {"beta", f.beta}, {"delta", f.delta},
                                {"dropped", f.dropped}, {"r_squared", f.r_squared}};
            } catch (const DomainError& e) {
                entry[label] = {{"error", e.what()}};
            }
        }
        double mad = 0.0;
        for (const auto& r : rows) mad += std::abs(r.wedge) / double(n);
        entry["mean_abs_wedge"] = mad;
        wedges[name] = entry;
    }

    json lorenz = json::object();
    for (const auto& [name, act, cf] : {std::tuple{"G", &ga, &gc}, std::tuple{"D", &da, &dc},
                                        std::tuple{"R", &ra, &rc}, std::tuple{"B", &ba, &bc}}) {
        json entry = json::object();
        for (const auto& [label, v] : {std::pair{"actual", act}, std::pair{"optimal", cf}}) {
            try {
                entry[label] = lorenz_json(*v);
            } catch (const DomainError& e) {
                entry[label] = {{"error", e.what()}};
            }
        }
        lorenz[name] = entry;
    }

    json decomposition = nullptr;
    if (!a.across_fields) {
        std::vector<FieldOutputInput> fin;
        for (const auto& grp : groups) {
            FieldOutputInput f;
            f.field = grp.field;
            for (auto i : grp.members) {
                f.attributes.push_back(rs[i].attributes);
                f.budget.push_back(before[i].solution.budget);
                f.research.push_back(before[i].solution.research);
                f.optimized_output.push_back(after[i].solution.output);
            }
            fin.push_back(std::move(f));
        }
        const auto d = field_output_decomposition(fin);
        json rows = json::array();
        for (const auto& r : d.rows) {
            rows.push_back({{"field", r.field}, {"actual", r.actual}, {"equalized_inputs", r.equalized_inputs},
                            {"equalized_tfp", r.equalized_tfp}, {"optimized", r.optimized}});
        }
        decomposition = {{"benchmark", d.benchmark}, {"rows", rows}};
    }

    json j{{"schema_version", kSchemaVersion},
           {"kind", "reallocate"},
           {"options",
            {{"objective", a.objective},
             {"levers", a.levers},
             {"across_fields", a.across_fields},
             {"unconstrained_budget", a.unconstrained_budget},
             {"freeze", a.freeze},
             {"planner_kappa", a.planner_kappa},
             {"externality", cal.externality}}},
           {"excluded", joined.excluded},
           {"fields", field_rows},
           {"summary", summary},
           {"funding_equivalence", equivalence},
           {"wedges", wedges},
           {"lorenz", lorenz},
           {"field_decomposition", decomposition}};
    save_json(a.summary, j);
    if (verbose()) err << "reallocate: output change " << 100.0 * (growth - 1.0) << "%\n";
    return kExitOk;
}

// ---------------------------------------------------------------- report

struct ReportArgs {
    std::string data, results, out;
    double top_fraction = 0.2;
    int bins = 20;
};

json histogram(std::span<const double> v, int bins) {
    std::vector<double> clean;
    for (double x : v)
        if (std::isfinite(x)) clean.push_back(x);
    if (clean.empty()) return table({"lo", "hi", "count"}, {});
    const auto [mn, mx] = std::minmax_element(clean.begin(), clean.end());
    const double lo = *mn, hi = *mx, w = (hi - lo) / bins;
    std::vector<double> counts(static_cast<std::size_t>(bins), 0.0);
    for (double x : clean) {
        auto b = w > 0.0 ? static_cast<std::size_t>((x - lo) / w) : 0;
        counts[std::min(b, counts.size() - 1)] += 1.0;
    }
    std::vector<std::vector<double>> rows;
    for (int b = 0; b < bins; ++b) {
        rows.push_back({lo + b * w, b + 1 == bins ? hi : lo + (b + 1) * w, counts[b]});
    }
    return table({"lo", "hi", "count"}, rows);
}

int cmd_report(const ReportArgs& a, const Globals& g, std::ostream&) {
    if (!(a.top_fraction > 0.0 && a.top_fraction <= 1.0)) throw ValidationError("--top-fraction must lie in (0, 1]");
    if (a.bins < 1) throw ValidationError("--bins must be at least 1");
    const auto cal = g.calibration();
    const auto records = load_dataset(a.data, cal);
    const auto res = load_results(a.results);
    const auto joined = join(records, res);
    const auto& rs = joined.researchers;
    const std::size_t n = rs.size();

    std::vector<double> alpha(n), gamma(n), phi(n), t(n);
    std::vector<std::string> fields(n);
    ProductionSample ps;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& at = rs[i].attributes;
        const auto& rec = joined.records[i];
        alpha[i] = at.tfp;
        gamma[i] = at.funding_intensity;
        phi[i] = at.fundraising_ability;
        t[i] = rec.type_index;
        fields[i] = rs[i].field;
        const double b = total_budget(rec.contract, rec.allocation.fundraising, at.fundraising_ability, cal);
        ps.tfp.push_back(at.tfp);
        ps.intensity.push_back(at.funding_intensity);
        ps.budget.push_back(b);
        ps.research.push_back(rec.allocation.research);
        ps.output.push_back(production_output(at, b, rec.allocation.research));
    }

    auto guarded = [](auto&& f) -> json {
        try {
            return f();
        } catch (const DomainError& e) {
            return {{"error", e.what()}};
        }
    };

    const auto field_fe = label_dummies(fields);
    const std::size_t k = joined.records.front().features.size();
    Eigen::MatrixXd full(static_cast<Eigen::Index>(n), field_fe.cols() + static_cast<Eigen::Index>(k));
    full.leftCols(field_fe.cols()) = field_fe;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) full(i, field_fe.cols() + j) = joined.records[i].features[j];
    json ratios = table({"raw", "field_effects", "field_effects_and_covariates"},
                        {{tfp_ratio_90_10(alpha), tfp_ratio_90_10(alpha, field_fe), tfp_ratio_90_10(alpha, full)}});

    json power = guarded([&]() -> json {
        const auto f = power_law_fit(alpha, a.top_fraction);
        std::vector<double> sorted(alpha);
        std::sort(sorted.begin(), sorted.end(), std::greater<>());
        std::vector<std::vector<double>> pts;
        for (std::size_t i = 0; i < f.n; ++i) pts.push_back({std::log(i + 0.5), std::log(sorted[i])});
        return {{"fit", table({"top_fraction", "n", "exponent", "se"},
                              {{a.top_fraction, double(f.n), f.exponent, f.std_error}})},
                {"points", table({"log_rank_minus_half", "log_value"}, pts)}};
    });

    json variance = guarded([&]() -> json {
        const auto d = variance_decomposition(ps);
        return table({"var_log_output", "var_log_tfp", "cov_tfp_budget", "cov_tfp_research", "tfp_share",
                      "raw_share", "residual"},
                     {{d.var_log_output, d.var_log_tfp, d.cov_tfp_budget, d.cov_tfp_research, d.tfp_share,
                       d.raw_share, d.residual}});
    });

    json hist = json::object();
    hist["alpha"] = histogram(alpha, a.bins);
    hist["gamma"] = histogram(gamma, a.bins);
    hist["phi"] = histogram(phi, a.bins);
    hist["T"] = histogram(t, a.bins);
    for (int e = 0; e < kNumExperiments; ++e) {
        std::vector<double> wtp;
        for (const auto& r : joined.records)
            if (r.wtp_answers[e]) wtp.push_back(r.contract.salary - *r.wtp_answers[e]);
        hist["wtp_" + std::to_string(e + 1)] = histogram(wtp, a.bins);
    }

    json j{{"schema_version", kSchemaVersion},
           {"kind", "report"},
           {"n", n},
           {"excluded", joined.excluded},
           {"tfp_ratio_90_10", ratios},
           {"power_law", power},
           {"variance_decomposition", variance},
           {"histograms", hist}};
    save_json(a.out, j);
    return kExitOk;
}

// Splices the keys of a subcommand's --config file into the argument list as
// flags, after the subcommand name. Keys already given as flags are skipped,
// so the command line wins. CLI11 only reads config into the root app, which
// would need [section] headers for subcommand options.
std::vector<std::string> expand_config(CLI::App& app, const std::vector<std::string>& args) {
    std::size_t cmd = args.size();
    for (std::size_t i = 0; i < args.size() && cmd == args.size(); ++i) {
        for (const auto* sub : app.get_subcommands({}))
            if (args[i] == sub->get_name()) cmd = i;
    }
    if (cmd == args.size()) return args;
    CLI::App* sub = app.get_subcommand(args[cmd]);

    std::string path;
    std::set<std::string> given;
    for (std::size_t i = cmd + 1; i < args.size(); ++i) {
        const auto& a = args[i];
        if (a.rfind("--", 0) != 0) continue;
        const auto eq = a.find('=');
        const auto name = a.substr(2, eq == std::string::npos ? std::string::npos : eq - 2);
        given.insert(name);
        if (name == "config") {
            if (eq != std::string::npos) {
                path = a.substr(eq + 1);
            } else if (i + 1 < args.size()) {
                path = args[i + 1];
            }
        }
    }
    for (std::size_t i = 0; i < cmd; ++i) {
        if (args[i].rfind("--", 0) == 0) given.insert(args[i].substr(2, args[i].find('=') - 2));
    }
    if (path.empty()) return args;

    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigTOML().from_file(path);
    } catch (const CLI::FileError&) {
        throw ValidationError("cannot read config file '" + path + "'");
    }
    std::vector<std::string> extra;
    for (const auto& item : items) {
        if (item.name == "++" || item.name == "--") continue;  // section markers
        auto key = item.name;
        std::replace(key.begin(), key.end(), '_', '-');
        if (!item.parents.empty() || key == "config") {
            throw ValidationError("config file '" + path + "': unsupported key '" + item.fullname() + "'");
        }
        const auto* opt = sub->get_option_no_throw("--" + key);
        if (opt == nullptr) {
            throw ValidationError("config file '" + path + "': unknown key '" + item.name + "' for " +
                                  sub->get_name());
        }
        if (given.count(key)) continue;
        if (opt->get_expected_min() == 0) {
            const auto v = item.inputs.empty() ? std::string("true") : item.inputs.front();
            if (v == "true" || v == "1") {
                extra.push_back("--" + key);
            } else if (v != "false" && v != "0") {
                throw ValidationError("config file '" + path + "': '" + item.name + "' expects true or false");
            }
            continue;
        }
        if (item.inputs.size() != 1) {
            throw ValidationError("config file '" + path + "': '" + item.name + "' expects one value");
        }
        extra.push_back("--" + key);
        extra.push_back(item.inputs.front());
    }
    auto out = args;
    out.insert(out.begin() + static_cast<std::ptrdiff_t>(cmd) + 1, extra.begin(), extra.end());
    return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Structural estimation and reallocation of research inputs"};
    app.require_subcommand(1);
    Globals g;
    // Shared options are accepted before or after the subcommand, and in its config file.
    auto add_globals = [&g](CLI::App* a) {
        a->add_option("--threads", g.threads, "worker threads (0: all logical cores)");
        a->add_option("--b-min", g.min_funding, "minimum funding B_min, dollars");
        a->add_option("--h-max", g.max_hours, "hours cap H_max, hours/week");
        a->add_option("--kappa", g.externality, "weight on output in social value");
    };
    add_globals(&app);
    auto add_command = [&](const char* name, const char* about) {
        auto* sub = app.add_subcommand(name, about);
        sub->add_option("--config", "flat key = value file; command-line flags win");
        add_globals(sub);
        return sub;
    };

    SimulateArgs sim;
    auto* s = add_command("simulate", "generate a synthetic dataset");
    s->add_option("--n", sim.n, "researchers")->capture_default_str();
    s->add_option("--seed", sim.seed, "random seed")->capture_default_str();
    s->add_option("--out", sim.out, "dataset CSV")->required();
    s->add_option("--truth", sim.truth, "also write true parameters and attributes as results JSON");
    s->add_option("--noise", sim.noise, "sd of noise added to indifference salaries, dollars");
    s->add_option("--gamma-law", sim.gamma_law, "funding-intensity law")
        ->check(CLI::IsMember({"beta", "logistic"}))
        ->capture_default_str();

    EstimateArgs est;
    auto* e = add_command("estimate", "fit the deep parameters by simulated method of moments");
    e->add_option("--data", est.data, "dataset CSV")->required();
    e->add_option("--out", est.out, "results JSON")->required();
    e->add_option("--seed", est.seed, "seed for the type-index clustering")->capture_default_str();
    e->add_flag("--grid-only", est.grid_only, "stop after the starting grid");
    e->add_option("--max-evals", est.max_evaluations, "loss evaluations per simplex run")->capture_default_str();
    e->add_option("--refinements", est.refinements, "final simplex restarts")->capture_default_str();

    ReallocateArgs re;
    auto* r = add_command("reallocate", "optimal within-field reallocation of G and D");
    r->add_option("--data", re.data, "dataset CSV")->required();
    r->add_option("--results", re.results, "results JSON from estimate or simulate --truth")->required();
    r->add_option("--out", re.out, "per-researcher before/after CSV")->required();
    r->add_option("--summary", re.summary, "summary JSON")->required();
    r->add_option("--objective", re.objective, "output or utility")
        ->check(CLI::IsMember({"output", "utility"}))
        ->capture_default_str();
    r->add_option("--levers", re.levers, "G, D or G,D")->capture_default_str();
    r->add_flag("--across-fields", re.across_fields, "pool all fields into one problem");
    r->add_flag("--unconstrained-budget", re.unconstrained_budget, "drop the fundraising constraint (pi = 1)");
    r->add_flag("--freeze", re.freeze, "carry the actual allocation through unchanged");
    r->add_option("--planner-kappa", re.planner_kappa, "weight on u2 in the utility objective")->capture_default_str();
    r->add_option("--max-rounds", re.max_rounds, "planner rounds")->capture_default_str();

    ReportArgs rep;
    auto* p = add_command("report", "diagnostic tables");
    p->add_option("--data", rep.data, "dataset CSV")->required();
    p->add_option("--results", rep.results, "results JSON")->required();
    p->add_option("--out", rep.out, "report JSON")->required();
    p->add_option("--top-fraction", rep.top_fraction, "tail share for the power-law fit")->capture_default_str();
    p->add_option("--bins", rep.bins, "histogram bins")->capture_default_str();

    try {
        const auto expanded = expand_config(app, args);
        std::vector<std::string> reversed(expanded.rbegin(), expanded.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitValidation;
    } catch (const ValidationError& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitValidation;
    }

    try {
        set_thread_count(g.threads);
        if (*s) return cmd_simulate(sim, g, err);
        if (*e) return cmd_estimate(est, g, err);
        if (*r) return cmd_reallocate(re, g, err);
        return cmd_report(rep, g, err);
    } catch (const ValidationError& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitValidation;
    } catch (const SchemaError& ex) {
        err << "schema error: " << ex.what() << '\n';
        return kExitValidation;
    } catch (const DomainError& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitValidation;
    } catch (const json::exception& ex) {
        err << "schema error: " << ex.what() << '\n';
        return kExitValidation;
    } catch (const NumericalFailure& ex) {
        err << "numerical failure: " << ex.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& ex) {
        err << "numerical failure: " << ex.what() << '\n';
        return kExitNumerical;
    }
}

}  // namespace scialloc::cli
