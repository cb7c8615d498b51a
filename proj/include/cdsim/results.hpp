#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdsim/config.hpp"
#include "cdsim/detail/format.hpp"
#include "cdsim/error.hpp"
#include "cdsim/units.hpp"

#ifndef CDSIM_VERSION
#define CDSIM_VERSION "unknown"
#endif

namespace cdsim {

struct Column {
    std::string name;
    /// One of the units:: strings.
    std::string unit;
    std::vector<double> values;
};

/// Named table of equally long numeric columns.
struct Table {
    std::string name;
    std::string description;
    std::vector<Column> columns;

    std::size_t rows() const { return columns.empty() ? 0 : columns.front().values.size(); }

    Column& add(std::string column, std::string unit)
    {
        columns.push_back({std::move(column), std::move(unit), {}});
        return columns.back();
    }

    const Column& column(const std::string& column_name) const
    {
        for (const auto& c : columns) {
            if (c.name == column_name) {
                return c;
            }
        }
        throw InvalidArgument("table '" + name + "' has no column '" + column_name + "'");
    }

    bool has(const std::string& column_name) const
    {
        for (const auto& c : columns) {
            if (c.name == column_name) {
                return true;
            }
        }
        return false;
    }

    void validate() const
    {
        for (const auto& c : columns) {
            if (c.values.size() != rows()) {
                throw InvalidArgument("table '" + name + "': column '" + c.name + "' has "
                                      + std::to_string(c.values.size()) + " rows, expected "
                                      + std::to_string(rows()));
            }
            if (c.unit.empty()) {
                throw InvalidArgument("table '" + name + "': column '" + c.name + "' has no unit");
            }
        }
    }
};

/// Comma-separated table. Leading '#' lines carry the description and a
/// "# units:" line with one unit per column; then the header row and data.
inline void write_csv(std::ostream& out, const Table& t)
{
    t.validate();
    if (!t.description.empty()) {
        std::istringstream lines(t.description);
        for (std::string line; std::getline(lines, line);) {
            out << "# " << line << '\n';
        }
    }
    out << "# units:";
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
        out << (c ? "," : " ") << t.columns[c].unit;
    }
    out << '\n';
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
        out << (c ? "," : "") << t.columns[c].name;
    }
    out << '\n';
    for (std::size_t r = 0; r < t.rows(); ++r) {
        for (std::size_t c = 0; c < t.columns.size(); ++c) {
            out << (c ? "," : "") << detail::format_double(t.columns[c].values[r]);
        }
        out << '\n';
    }
}

inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream s(line);
    while (std::getline(s, cell, ',')) {
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') {
        out.emplace_back();
    }
    return out;
}

inline Table read_csv(std::istream& in, std::string name = {})
{
    Table t;
    t.name = std::move(name);
    std::vector<std::string> units_row;
    std::string line;
    std::string description;
    bool header = false;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        if (line.front() == '#') {
            std::string body = line.substr(line.size() > 1 && line[1] == ' ' ? 2 : 1);
            if (body.rfind("units:", 0) == 0) {
                body = body.substr(6);
                if (!body.empty() && body.front() == ' ') {
                    body.erase(0, 1);
                }
                units_row = split_csv_line(body);
            } else {
                description += (description.empty() ? "" : "\n") + body;
            }
            continue;
        }
        const auto cells = split_csv_line(line);
        if (!header) {
            for (std::size_t c = 0; c < cells.size(); ++c) {
                t.add(cells[c], c < units_row.size() ? units_row[c] : "");
            }
            header = true;
            continue;
        }
        if (cells.size() != t.columns.size()) {
            throw InvalidArgument("csv line " + std::to_string(line_no) + ": expected "
                                  + std::to_string(t.columns.size()) + " fields");
        }
        for (std::size_t c = 0; c < cells.size(); ++c) {
            t.columns[c].values.push_back(detail::parse_double(cells[c]));
        }
    }
    t.description = description;
    return t;
}

enum class RunStatus { Ok, Partial, Failed };

inline std::string_view to_string(RunStatus s)
{
    switch (s) {
    case RunStatus::Ok: return "ok";
    case RunStatus::Partial: return "partial";
    case RunStatus::Failed: return "failed";
    }
    return "unknown";
}

/// Process exit code for a run status: 0 ok, 1 partial, 2 failed.
inline int exit_code(RunStatus s)
{
    switch (s) {
    case RunStatus::Ok: return 0;
    case RunStatus::Partial: return 1;
    case RunStatus::Failed: return 2;
    }
    return 2;
}

/// A configuration that could not be evaluated, or a series that aborted.
struct FailureRecord {
    std::size_t series = 0;
    /// Configuration index; -1 for a whole-series failure.
    std::int64_t index = -1;
    std::uint64_t seed = 0;
    std::string message;
};

/// Extra file written next to the tables (binary matrix dumps).
struct Attachment {
    std::string filename;
    std::string bytes;
};

struct ResultBundle {
    RunConfig config;
    std::vector<Table> tables;
    RunStatus status = RunStatus::Ok;
    std::vector<FailureRecord> failures;
    double wall_seconds = 0.0;
    /// Experiment-specific summary values.
    nlohmann::json summary = nlohmann::json::object();
    std::vector<Attachment> attachments;

    const Table* find(const std::string& name) const
    {
        for (const auto& t : tables) {
            if (t.name == name) {
                return &t;
            }
        }
        return nullptr;
    }
};

inline nlohmann::json units_convention()
{
    return {
        {"length", units::length},
        {"area", units::area},
        {"differential_cross_section", units::area_per_sr},
        {"detuning", units::rate},
        {"density", units::density},
        {"angle", units::angle},
        {"wave_number", units::wave_number},
        {"decay_rate", units::decay_rate},
        {"hbar", 1.0},
        {"note", "lengths in lambdabar = 1/k, rates and detunings in gamma, hbar = 1"},
    };
}

inline nlohmann::json metadata(const ResultBundle& b)
{
    nlohmann::json failures = nlohmann::json::array();
    for (const auto& f : b.failures) {
        failures.push_back({{"series", f.series},
                            {"index", f.index},
                            {"seed", f.seed},
                            {"message", f.message}});
    }
    nlohmann::json tables = nlohmann::json::array();
    for (const auto& t : b.tables) {
        nlohmann::json cols = nlohmann::json::array();
        for (const auto& c : t.columns) {
            cols.push_back({{"name", c.name}, {"unit", c.unit}});
        }
        tables.push_back({{"name", t.name}, {"file", t.name + ".csv"}, {"rows", t.rows()},
                          {"columns", cols}});
    }
    return {
        {"program", "cdsim"},
        {"version", CDSIM_VERSION},
        {"experiment", std::string(to_string(b.config.experiment))},
        {"status", std::string(to_string(b.status))},
        {"wall_seconds", b.wall_seconds},
        {"units", units_convention()},
        {"config", serialize_config(b.config)},
        {"min_separation", b.config.cloud.min_separation},
        {"failures", failures},
        {"tables", tables},
        {"summary", b.summary},
    };
}

/// Writes <dir>/<table>.csv for every table, the attachments, and
/// <dir>/metadata.json.
inline void write_bundle(const ResultBundle& b, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    for (const auto& t : b.tables) {
        std::ofstream out(dir / (t.name + ".csv"));
        write_csv(out, t);
        if (!out) {
            throw Error("cannot write " + (dir / (t.name + ".csv")).string());
        }
    }
    for (const auto& a : b.attachments) {
        std::ofstream out(dir / a.filename, std::ios::binary);
        out.write(a.bytes.data(), static_cast<std::streamsize>(a.bytes.size()));
        if (!out) {
            throw Error("cannot write " + (dir / a.filename).string());
        }
    }
    std::ofstream meta(dir / "metadata.json");
    meta << metadata(b).dump(2) << '\n';
    if (!meta) {
        throw Error("cannot write " + (dir / "metadata.json").string());
    }
}

/// Reads a run configuration from a YAML file, or from the config echo of a
/// metadata.json written by write_bundle.
inline RunConfig load_config_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    std::stringstream text;
    text << in.rdbuf();
    if (path.extension() == ".json") {
        try {
            const auto j = nlohmann::json::parse(text.str());
            return parse_config(j.at("config").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path.string() + ": not a result metadata file: " + e.what());
        }
    }
    return parse_config(text.str());
}

/// Reads back a directory written by write_bundle (tables, config echo,
/// status and failures; attachments are not loaded).
inline ResultBundle load_bundle(const std::filesystem::path& dir)
{
    std::ifstream in(dir / "metadata.json");
    if (!in) {
        throw Error("no metadata.json in " + dir.string());
    }
    ResultBundle b;
    try {
        const auto meta = nlohmann::json::parse(in);
        b.config = parse_config(meta.at("config").get<std::string>());
        const auto status = meta.at("status").get<std::string>();
        b.status = status == "ok" ? RunStatus::Ok
                 : status == "partial" ? RunStatus::Partial
                                       : RunStatus::Failed;
        b.wall_seconds = meta.value("wall_seconds", 0.0);
        b.summary = meta.value("summary", nlohmann::json::object());
        for (const auto& f : meta.at("failures")) {
            b.failures.push_back({f.at("series").get<std::size_t>(), f.at("index").get<std::int64_t>(),
                                  f.at("seed").get<std::uint64_t>(), f.at("message").get<std::string>()});
        }
        for (const auto& t : meta.at("tables")) {
            const auto name = t.at("name").get<std::string>();
            std::ifstream csv(dir / t.at("file").get<std::string>());
            if (!csv) {
                throw Error("missing table file for '" + name + "' in " + dir.string());
            }
            b.tables.push_back(read_csv(csv, name));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error((dir / "metadata.json").string() + ": " + e.what());
    }
    return b;
}

} // namespace cdsim
