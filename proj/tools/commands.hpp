#pragma once

#include "kcheck/kcheck.hpp"

#include "json.hpp"

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

// Command implementations behind the kcheck executable.
//
// Exit codes: 0 success (check: nothing flagged), 1 check flagged a term,
// 2 malformed input or arguments, 3 fitting or simulation failure.

namespace kcheck::cli {

enum Exit : int { ok = 0, flagged = 1, input_error = 2, runtime_error = 3 };

struct RunConfig {
    std::string input;
    std::string output;
    std::string response = "y";
    std::vector<std::string> terms;
    std::vector<std::string> methods;
    std::string criterion = "gcv";
    double alpha = 0.05;
    int perms = 199;
    std::size_t neighbours = 3;
    std::uint64_t seed = 1;
    int replicates = 50;
    std::string scenario;
    int n = 0;
    double sigma = 0.2;
    double threshold = 0.5;
    unsigned threads = 1;
};

struct InputError : Error {
    using Error::Error;
};

/// "x:10" (univariate), "x1*x2:15" (tensor, total k) or "x1*x2:5:6" (tensor, marginals).
inline BasisSpec parse_term(const std::string& text) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : text) {
        if (c == ':') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    if (fields.size() < 2 || fields.size() > 3 || fields[0].empty()) {
        throw InputError("term '" + text + "' must look like name:k, a*b:k or a*b:k1:k2");
    }
    auto to_int = [&](const std::string& s) {
        auto v = csv::parse_double(s);
        if (!v || *v != static_cast<int>(*v) || *v < 1) {
            throw InputError("term '" + text + "' has a bad basis dimension '" + s + "'");
        }
        return static_cast<int>(*v);
    };
    auto star = fields[0].find('*');
    if (star == std::string::npos) {
        if (fields.size() != 2) {
            throw InputError("univariate term '" + text + "' takes a single k");
        }
        return BasisSpec::univariate(fields[0], to_int(fields[1]));
    }
    std::string a = fields[0].substr(0, star);
    std::string b = fields[0].substr(star + 1);
    if (a.empty() || b.empty() || b.find('*') != std::string::npos) {
        throw InputError("tensor term '" + text + "' needs exactly two covariates");
    }
    if (fields.size() == 2) {
        return BasisSpec::tensor(a, b, to_int(fields[1]));
    }
    const int k1 = to_int(fields[1]);
    const int k2 = to_int(fields[2]);
    BasisSpec spec = BasisSpec::tensor(a, b, k1 * k2);
    spec.marginal_k = std::pair{k1, k2};
    return spec;
}

inline Criterion parse_criterion(const std::string& s) {
    if (s == "gcv") {
        return Criterion::gcv;
    }
    if (s == "reml") {
        return Criterion::reml;
    }
    throw InputError("criterion must be gcv or reml");
}

inline KMethod parse_method(const std::string& s) {
    if (s == "kappa") {
        return KMethod::kappa;
    }
    if (s == "resmooth") {
        return KMethod::resmooth;
    }
    if (s == "gcv") {
        return KMethod::gcv_grid;
    }
    if (s == "reml") {
        return KMethod::reml_grid;
    }
    throw InputError("method must be one of kappa, resmooth, gcv, reml");
}

namespace detail {

inline Table load_table(const std::string& path) {
    if (path.empty()) {
        throw InputError("--input is required");
    }
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open '" + path + "'");
    }
    try {
        return read_csv(in);
    } catch (const Error& e) {
        throw InputError(path + ": " + e.what());
    }
}

/// Model spec from the flags, checked against the columns of `data`.
inline ModelSpec model_from(const RunConfig& cfg, const Table& data) {
    if (cfg.terms.empty()) {
        throw InputError("at least one --term is required");
    }
    ModelSpec spec;
    spec.response = cfg.response;
    spec.criterion = parse_criterion(cfg.criterion);
    for (const auto& t : cfg.terms) {
        spec.terms.push_back(parse_term(t));
    }
    if (!data.has(spec.response)) {
        throw InputError("response column '" + spec.response + "' not found");
    }
    for (const auto& t : spec.terms) {
        for (const auto& c : t.covariates) {
            if (!data.has(c)) {
                throw InputError("covariate column '" + c + "' not found");
            }
        }
    }
    try {
        spec.validate();
    } catch (const Error& e) {
        throw InputError(e.what());
    }
    return spec;
}

template <class Write>
void with_output(const std::string& path, Write&& write) {
    if (path.empty()) {
        throw InputError("--output is required");
    }
    if (path == "-") {
        write(std::cout);
        std::cout.flush();
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw InputError("cannot write '" + path + "'");
    }
    write(out);
}

inline nlohmann::ordered_json fit_report(const FittedModel& m) {
    nlohmann::ordered_json j;
    j["response"] = m.spec.response;
    j["n"] = m.n();
    j["criterion"] = to_string(m.spec.criterion);
    j["criterion_value"] = m.criterion_value;
    j["phi_hat"] = m.phi_hat;
    j["trace_A"] = m.trace_A;
    j["lambda_sweeps"] = m.lambda_sweeps;
    j["lambda_converged"] = m.lambda_converged;
    auto terms = nlohmann::ordered_json::array();
    for (std::size_t t = 0; t < m.terms(); ++t) {
        const auto& spec = m.spec.terms[t];
        nlohmann::ordered_json term;
        term["label"] = spec.label();
        term["covariates"] = spec.covariates;
        term["k"] = spec.realized_k();
        term["null_dim"] = m.blocks[t].null_dim;
        term["lambda"] = m.lambda[t];
        term["edf"] = m.edf_per_term[t];
        Vector b = m.term_coefficients(t);
        term["coefficients"] = std::vector<double>(b.data(), b.data() + b.size());
        terms.push_back(term);
    }
    j["terms"] = terms;
    j["lambda"] = m.lambda;
    j["edf_per_term"] = m.edf_per_term;
    j["intercept"] = m.beta(0);
    j["coefficients"] = std::vector<double>(m.beta.data(), m.beta.data() + m.beta.size());
    return j;
}

template <class Body>
int guarded(std::ostream& err, Body&& body) {
    try {
        return body();
    } catch (const InputError& e) {
        err << "error: " << e.what() << '\n';
        return input_error;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return runtime_error;
    }
}

} // namespace detail

/// Fits the model and writes a JSON report.
inline int cmd_fit(const RunConfig& cfg, std::ostream& err = std::cerr) {
    return detail::guarded(err, [&] {
        Table data = detail::load_table(cfg.input);
        ModelSpec spec = detail::model_from(cfg, data);
        if (cfg.output.empty()) {
            throw InputError("--output is required");
        }
        FittedModel m = fit(spec, data);
        std::string text = detail::fit_report(m).dump(2) + "\n";
        detail::with_output(cfg.output, [&](std::ostream& out) { out << text; });
        return static_cast<int>(ok);
    });
}

/**
 * Fits the model, runs the κ test on every term (plus the re-smoothing check
 * with --method resmooth) and writes one CSV row per term. Returns `flagged`
 * when any term fails its check.
 */
inline int cmd_check(const RunConfig& cfg, std::ostream& err = std::cerr) {
    return detail::guarded(err, [&] {
        Table data = detail::load_table(cfg.input);
        ModelSpec spec = detail::model_from(cfg, data);
        const std::string method = cfg.methods.empty() ? "kappa" : cfg.methods.front();
        if (cfg.methods.size() > 1 || (method != "kappa" && method != "resmooth")) {
            throw InputError("check takes --method kappa or --method resmooth");
        }
        if (cfg.perms < 99) {
            throw InputError("--perms must be at least 99");
        }
        if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) {
            throw InputError("--alpha must lie in (0, 1)");
        }
        if (cfg.output.empty()) {
            throw InputError("--output is required");
        }
        FittedModel m = fit(spec, data);

        std::ostringstream table;
        table << "term,k,edf,kappa,phi_delta,phi_hat,p_value,n_perm,neighbours,seed,edf_star,edf_min,flagged\n";
        bool any = false;
        for (std::size_t t = 0; t < m.terms(); ++t) {
            KappaResult kr = kappa_test(m, t, KappaOptions{cfg.perms, cfg.neighbours, cfg.seed});
            std::optional<ResmoothResult> rr;
            bool flag = kr.p_value < cfg.alpha;
            if (method == "resmooth") {
                rr = resmooth_check(m, t, cfg.threshold);
                flag = rr->flagged;
            }
            any = any || flag;
            table << spec.terms[t].label() << ',' << spec.terms[t].realized_k() << ','
                  << csv::format(m.edf_per_term[t]) << ',' << csv::format(kr.kappa) << ','
                  << csv::format(kr.phi_delta) << ',' << csv::format(kr.phi_hat) << ','
                  << csv::format(kr.p_value) << ',' << kr.n_perm << ',' << kr.M << ',' << kr.seed << ','
                  << (rr ? csv::format(rr->edf_star) : "NA") << ',' << (rr ? csv::format(rr->edf_min) : "NA")
                  << ',' << (flag ? 1 : 0) << '\n';
        }
        detail::with_output(cfg.output, [&](std::ostream& out) { out << table.str(); });
        return static_cast<int>(any ? flagged : ok);
    });
}

/// Scenario described by the simulate flags.
inline Scenario scenario_from(const RunConfig& cfg) {
    auto id = parse_scenario(cfg.scenario);
    if (!id) {
        throw InputError("unknown scenario '" + cfg.scenario + "'");
    }
    int n = cfg.n;
    if (n == 0) {
        n = *id == ScenarioId::bivariate ? 400 : *id == ScenarioId::additive ? 200 : 100;
    }
    Scenario s = Scenario::make(*id, n, cfg.replicates, cfg.seed);
    s.sigma = cfg.sigma;
    if (!cfg.methods.empty()) {
        s.methods.clear();
        for (const auto& m : cfg.methods) {
            s.methods.push_back(parse_method(m));
        }
    }
    s.policy.criterion = parse_criterion(cfg.criterion);
    s.policy.doubling.alpha = cfg.alpha;
    s.policy.doubling.permutations = cfg.perms;
    s.policy.doubling.neighbours = cfg.neighbours;
    s.policy.doubling.resmooth_threshold = cfg.threshold;
    try {
        s.validate();
    } catch (const Error& e) {
        throw InputError(e.what());
    }
    return s;
}

/// Runs a simulation scenario and writes one CSV row per (replicate, method, term).
inline int cmd_simulate(const RunConfig& cfg, std::ostream& err = std::cerr) {
    return detail::guarded(err, [&] {
        Scenario s = scenario_from(cfg);
        if (cfg.output.empty()) {
            throw InputError("--output is required");
        }
        ScenarioResult result = run_experiment(s, cfg.threads);
        for (const auto& row : result.rows) {
            if (row.error) {
                err << "warning: replicate " << row.replicate << " (" << to_string(row.method)
                    << ") failed: " << *row.error << '\n';
            }
        }
        auto records = to_records(result, s.id);
        detail::with_output(cfg.output, [&](std::ostream& out) { write_records(out, records); });
        return static_cast<int>(ok);
    });
}

} // namespace kcheck::cli
