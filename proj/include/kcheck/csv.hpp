#pragma once

#include "error.hpp"
#include "kselect.hpp"
#include "simulation.hpp"
#include "table.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

/**
 * @file csv.hpp
 *
 * @brief Headered numeric CSV input and the simulation results file.
 */

namespace kcheck {

namespace csv {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

inline std::vector<std::string> split(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        auto comma = line.find(',', start);
        auto field = trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (field.size() >= 2 && field.front() == '"' && field.back() == '"') {
            field = field.substr(1, field.size() - 2);
        }
        out.emplace_back(field);
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    return out;
}

inline std::optional<double> parse_double(std::string_view s) {
    double v = 0.0;
    if (!s.empty() && s.front() == '+') {
        s.remove_prefix(1);
    }
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
        return std::nullopt;
    }
    return v;
}

/// Shortest decimal form that parses back to the same double.
inline std::string format(double v) {
    std::array<char, 32> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

inline std::string format(const std::optional<double>& v) { return v ? format(*v) : "NA"; }

} // namespace csv

/// Reads a headered CSV of finite numbers. Empty fields are errors.
inline Table read_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) {
        throw Error("input is empty");
    }
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
        line.erase(0, 3);
    }
    auto header = csv::split(line);
    for (const auto& h : header) {
        if (h.empty()) {
            throw Error("empty column name in header");
        }
    }
    std::vector<std::vector<double>> cols(header.size());
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (csv::trim(line).empty()) {
            continue;
        }
        auto fields = csv::split(line);
        if (fields.size() != header.size()) {
            throw Error("line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) + " fields");
        }
        for (std::size_t c = 0; c < fields.size(); ++c) {
            auto v = csv::parse_double(fields[c]);
            if (!v || !std::isfinite(*v)) {
                throw Error("line " + std::to_string(lineno) + ": '" + fields[c] + "' is not a finite number");
            }
            cols[c].push_back(*v);
        }
    }
    Table t;
    for (std::size_t c = 0; c < header.size(); ++c) {
        t.add(header[c], std::move(cols[c]));
    }
    return t;
}

/// One line of the simulation results file: a (replicate, method, term) triple.
struct SimulationRecord {
    std::string scenario;
    int replicate = 0;
    std::string method;
    std::string term;
    std::optional<int> k_selected;
    std::optional<double> mse;
    std::optional<double> p_value;
    std::optional<double> edf_star;
    int refits = 0;
    std::uint64_t seed = 0;
    double ms_elapsed = 0.0;

    friend bool operator==(const SimulationRecord&, const SimulationRecord&) = default;
};

inline constexpr std::string_view simulation_header =
    "scenario,replicate,method,term,k_selected,mse,p_value,edf_star,refits,seed,ms_elapsed";

inline std::vector<SimulationRecord> to_records(const ScenarioResult& result, ScenarioId id) {
    std::vector<SimulationRecord> out;
    const ModelSpec shape = scenario_model(id, std::vector<int>(scenario_terms(id), 10));
    for (const auto& row : result.rows) {
        for (std::size_t j = 0; j < shape.terms.size(); ++j) {
            SimulationRecord r;
            r.scenario = row.scenario;
            r.replicate = row.replicate;
            r.method = to_string(row.method);
            r.term = shape.terms[j].label();
            if (!row.error) {
                r.k_selected = row.k_selected.at(j);
                r.mse = row.mse;
                r.p_value = row.p_value.at(j);
                r.edf_star = row.edf_star.at(j);
            }
            r.refits = row.refits;
            r.seed = row.seed;
            r.ms_elapsed = row.ms_elapsed;
            out.push_back(std::move(r));
        }
    }
    return out;
}

inline void write_records(std::ostream& out, const std::vector<SimulationRecord>& records) {
    out << simulation_header << '\n';
    for (const auto& r : records) {
        out << r.scenario << ',' << r.replicate << ',' << r.method << ',' << r.term << ','
            << (r.k_selected ? std::to_string(*r.k_selected) : "NA") << ',' << csv::format(r.mse) << ','
            << csv::format(r.p_value) << ',' << csv::format(r.edf_star) << ',' << r.refits << ',' << r.seed << ','
            << csv::format(r.ms_elapsed) << '\n';
    }
}

inline std::vector<SimulationRecord> read_records(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || csv::trim(line) != simulation_header) {
        throw Error("simulation file header does not match");
    }
    auto opt_double = [](const std::string& s) -> std::optional<double> {
        if (s == "NA") {
            return std::nullopt;
        }
        auto v = csv::parse_double(s);
        if (!v) {
            throw Error("bad number '" + s + "' in simulation file");
        }
        return v;
    };
    std::vector<SimulationRecord> out;
    while (std::getline(in, line)) {
        if (csv::trim(line).empty()) {
            continue;
        }
        auto f = csv::split(line);
        if (f.size() != 11) {
            throw Error("simulation file row has " + std::to_string(f.size()) + " fields");
        }
        SimulationRecord r;
        r.scenario = f[0];
        r.replicate = std::stoi(f[1]);
        r.method = f[2];
        r.term = f[3];
        if (f[4] != "NA") {
            r.k_selected = std::stoi(f[4]);
        }
        r.mse = opt_double(f[5]);
        r.p_value = opt_double(f[6]);
        r.edf_star = opt_double(f[7]);
        r.refits = std::stoi(f[8]);
        r.seed = std::stoull(f[9]);
        r.ms_elapsed = opt_double(f[10]).value_or(0.0);
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace kcheck
