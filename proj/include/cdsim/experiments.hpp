#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cdsim/config.hpp"
#include "cdsim/geometry.hpp"
#include "cdsim/montecarlo.hpp"
#include "cdsim/observables.hpp"
#include "cdsim/results.hpp"
#include "cdsim/rng.hpp"
#include "cdsim/solver.hpp"

namespace cdsim {

struct RunOptions {
    /// Checkpoint file; runs with several series use "<path>.<series>".
    /// An existing file is resumed.
    std::optional<std::filesystem::path> checkpoint;
    /// (series, configurations done, target).
    std::function<void(std::size_t, std::uint64_t, std::uint64_t)> progress;
};

namespace detail {

inline std::string_view vary_unit(VaryParameter p)
{
    return p == VaryParameter::Density ? units::density : units::length;
}

/// Short curve label of one series, e.g. "n=0.01", "R=10", "L=20".
inline std::string series_label(const RunConfig& c, std::size_t s, VaryParameter fallback)
{
    const CloudSpec cloud = c.cloud_for(s);
    const VaryParameter p = c.vary.parameter == VaryParameter::None ? fallback : c.vary.parameter;
    switch (p) {
    case VaryParameter::Radius: return "R=" + format_double(cloud.radius);
    case VaryParameter::Length: return "L=" + format_double(cloud.length);
    case VaryParameter::Density:
    case VaryParameter::None: break;
    }
    return "n=" + format_double(cloud.density);
}

/// Builds a table whose first column (when a parameter is varied) holds the
/// series value; rows are appended series by series.
class SeriesTable {
public:
    SeriesTable(const RunConfig& c, std::string name, std::string description,
                std::vector<std::pair<std::string, std::string>> columns)
        : config_(c)
    {
        table_.name = std::move(name);
        table_.description = std::move(description);
        if (c.vary.parameter != VaryParameter::None) {
            table_.add(std::string(to_string(c.vary.parameter)),
                       std::string(vary_unit(c.vary.parameter)));
            offset_ = 1;
        }
        for (auto& [n, u] : columns) {
            table_.add(std::move(n), std::move(u));
        }
    }

    void row(std::size_t series, const std::vector<double>& values)
    {
        if (values.size() + offset_ != table_.columns.size()) {
            throw InvalidArgument("table '" + table_.name + "': wrong row length");
        }
        if (offset_) {
            table_.columns[0].values.push_back(config_.vary.values.at(series));
        }
        for (std::size_t k = 0; k < values.size(); ++k) {
            table_.columns[offset_ + k].values.push_back(values[k]);
        }
    }

    Table take() { return std::move(table_); }

private:
    const RunConfig& config_;
    Table table_;
    std::size_t offset_ = 0;
};

inline EnsembleSettings settings_of(const RunConfig& c)
{
    EnsembleSettings s;
    s.n_configs = c.ensemble.configs;
    s.master_seed = c.ensemble.seed;
    s.workers = c.ensemble.workers;
    return s;
}

inline Vec3 direction_of(const RunConfig& c)
{
    return Vec3(c.incident.direction[0], c.incident.direction[1], c.incident.direction[2]).normalized();
}

/// Runs one ensemble job with optional checkpointing. Returns nothing when
/// the series failed; failures are recorded in the bundle either way.
inline std::optional<Statistics> run_series(EnsembleJob job, const RunConfig& c, std::size_t series,
                                            const RunOptions& options, ResultBundle& bundle)
{
    if (options.progress) {
        job.progress = [&options, series](std::uint64_t done, std::uint64_t target) {
            options.progress(series, done, target);
        };
    }
    std::optional<std::filesystem::path> path;
    if (options.checkpoint) {
        path = *options.checkpoint;
        if (c.series_count() > 1) {
            path = path->string() + "." + std::to_string(series);
        }
    }
    const std::uint64_t target = job.n_configs;
    EnsembleRunner runner = path && std::filesystem::exists(*path)
                              ? EnsembleRunner::load_checkpoint(job, *path)
                              : EnsembleRunner(job);
    const std::uint64_t step =
        c.ensemble.checkpoint_every > 0 && path ? c.ensemble.checkpoint_every : target;
    while (runner.done() < target) {
        runner.advance(std::min(target, runner.done() + step));
        if (path) {
            runner.save_checkpoint(*path);
        }
    }
    Statistics st = runner.statistics();
    for (const auto& f : st.failures) {
        bundle.failures.push_back({series, static_cast<std::int64_t>(f.index), f.seed, f.message});
    }
    if (runner.failed()) {
        bundle.failures.push_back({series, -1, 0,
                                   std::to_string(st.failures.size()) + " of "
                                       + std::to_string(st.n_configs)
                                       + " configurations failed; series discarded"});
        return std::nullopt;
    }
    return st;
}

inline void add_atoms_rows(SeriesTable& t, std::size_t series, std::size_t index,
                           const AtomConfiguration& config)
{
    for (std::size_t a = 0; a < config.size(); ++a) {
        const Vec3& p = config.positions[a];
        t.row(series, {static_cast<double>(index), static_cast<double>(a), p.x(), p.y(), p.z()});
    }
}

inline SeriesTable atoms_table(const RunConfig& c)
{
    return SeriesTable(c, "atoms", "atom positions of the sampled configurations",
                       {{"config", units::dimensionless},
                        {"atom", units::dimensionless},
                        {"x", units::length},
                        {"y", units::length},
                        {"z", units::length}});
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

inline void run_spectrum(const RunConfig& c, const RunOptions& options, ResultBundle& b)
{
    SpectrumOptions so;
    so.detunings = c.spectrum.detunings;
    so.observable = c.spectrum.observable;
    for (const double a : c.spectrum.angles_deg) {
        so.angles.push_back(degrees_to_radians(a));
    }
    so.n_azimuth = c.spectrum.n_azimuth;
    so.views = c.spectrum.views;
    so.direction = direction_of(c);
    so.helicity = c.incident.helicity;
    so.sweep = {c.solver.sweep, c.solver.max_lu_points};

    std::vector<std::string> names;
    std::string unit = units::area_per_sr;
    switch (so.observable) {
    case SpectrumObservable::TotalCrossSection:
        names = {"sigma"};
        unit = units::area;
        break;
    case SpectrumObservable::Differential:
        for (const double a : c.spectrum.angles_deg) {
            names.push_back("dsigma(theta=" + format_double(a) + "deg)");
        }
        break;
    case SpectrumObservable::PolarizationResolved:
        for (const double a : c.spectrum.angles_deg) {
            names.push_back("hh(theta=" + format_double(a) + "deg)");
        }
        for (const double a : c.spectrum.angles_deg) {
            names.push_back("hperp(theta=" + format_double(a) + "deg)");
        }
        break;
    }
    std::vector<std::pair<std::string, std::string>> cols{{"delta", units::rate}};
    for (const auto& n : names) {
        cols.emplace_back(n, unit);
        cols.emplace_back(n + "_sem", unit);
    }
    cols.emplace_back("n_configs", units::dimensionless);
    SeriesTable table(c, "spectrum",
                      "configuration-averaged " + std::string(to_string(so.observable))
                          + " cross section vs detuning",
                      cols);

    nlohmann::json series = nlohmann::json::array();
    for (std::size_t s = 0; s < c.series_count(); ++s) {
        const CloudSpec cloud = c.cloud_for(s);
        const auto st = run_series(make_spectrum_job(cloud, so, settings_of(c)), c, s, options, b);
        if (!st) {
            continue;
        }
        const SpectrumResult r = assemble_spectrum(so, *st);
        for (std::size_t d = 0; d < r.detunings.size(); ++d) {
            std::vector<double> row{r.detunings[d]};
            for (std::size_t k = 0; k < names.size(); ++k) {
                row.push_back(r.mean[d][k]);
                row.push_back(r.sem[d][k]);
            }
            row.push_back(static_cast<double>(st->n_succeeded()));
            table.row(s, row);
        }
        nlohmann::json entry = {{"series", s}, {"label", series_label(c, s, VaryParameter::Density)}};
        if (so.observable == SpectrumObservable::TotalCrossSection) {
            std::vector<double> maxima;
            for (const auto i : significant_maxima(r.column(0), r.column_sem(0))) {
                maxima.push_back(r.detunings[i]);
            }
            entry["significant_maxima_delta"] = maxima;
        }
        series.push_back(entry);
    }
    b.tables.push_back(table.take());
    b.summary["series"] = series;
}

inline AngularScanOptions angular_options(const RunConfig& c)
{
    AngularScanOptions o;
    o.theta = c.angular.theta_radians();
    o.n_azimuth = c.angular.n_azimuth;
    o.views = c.angular.views;
    o.direction = direction_of(c);
    o.helicity = c.incident.helicity;
    o.detuning = c.incident.detuning;
    return o;
}

inline SeriesTable angular_table(const RunConfig& c, std::string name)
{
    return SeriesTable(c, std::move(name),
                       "configuration-averaged differential cross section per helicity channel",
                       {{"theta", units::angle},
                        {"hh", units::area_per_sr},
                        {"hh_sem", units::area_per_sr},
                        {"hperp", units::area_per_sr},
                        {"hperp_sem", units::area_per_sr},
                        {"n_configs", units::dimensionless}});
}

inline void add_angular_rows(SeriesTable& t, std::size_t s, const AngularDistribution& d,
                             std::uint64_t n_ok)
{
    for (std::size_t i = 0; i < d.theta.size(); ++i) {
        t.row(s, {d.theta[i], d.hh_mean[i], d.hh_sem[i], d.hperp_mean[i], d.hperp_sem[i],
                  static_cast<double>(n_ok)});
    }
}

inline void run_angular(const RunConfig& c, const RunOptions& options, ResultBundle& b)
{
    const AngularScanOptions o = angular_options(c);
    SeriesTable table = angular_table(c, "angular");
    for (std::size_t s = 0; s < c.series_count(); ++s) {
        const auto st = run_series(make_angular_job(c.cloud_for(s), o, settings_of(c)), c, s, options, b);
        if (st) {
            add_angular_rows(table, s, assemble_angular(o.theta, *st), st->n_succeeded());
        }
    }
    b.tables.push_back(table.take());
}

inline void run_cbs(const RunConfig& c, const RunOptions& options, ResultBundle& b)
{
    CbsOptions o;
    o.scan = angular_options(c);
    o.background_min = degrees_to_radians(c.angular.background_min_deg);
    o.background_max = degrees_to_radians(c.angular.background_max_deg);
    SeriesTable profile = angular_table(c, "cbs_profile");
    std::vector<std::pair<std::string, std::string>> cols;
    for (const char* ch : {"hh", "hperp"}) {
        for (const char* q : {"peak", "background"}) {
            cols.emplace_back(std::string(q) + "_" + ch, units::area_per_sr);
            cols.emplace_back(std::string(q) + "_" + ch + "_sem", units::area_per_sr);
        }
        cols.emplace_back(std::string("enhancement_") + ch, units::dimensionless);
        cols.emplace_back(std::string("enhancement_") + ch + "_sem", units::dimensionless);
    }
    cols.emplace_back("n_configs", units::dimensionless);
    SeriesTable cone(c, "cbs_enhancement",
                     "backscattering peak at theta = pi over the background window mean", cols);
    for (std::size_t s = 0; s < c.series_count(); ++s) {
        const auto st = run_series(make_cbs_job(c.cloud_for(s), o, settings_of(c)), c, s, options, b);
        if (!st) {
            continue;
        }
        const CbsConeResult r = assemble_cbs(o, *st);
        add_angular_rows(profile, s, r.distribution, st->n_succeeded());
        std::vector<double> row;
        for (const ChannelCone* ch : {&r.hh, &r.hperp}) {
            row.insert(row.end(), {ch->peak.value, ch->peak.sem, ch->background.value,
                                   ch->background.sem, ch->enhancement.value, ch->enhancement.sem});
        }
        row.push_back(static_cast<double>(st->n_succeeded()));
        cone.row(s, row);
    }
    b.tables.push_back(profile.take());
    b.tables.push_back(cone.take());
    b.summary["background_window_deg"] = {c.angular.background_min_deg, c.angular.background_max_deg};
}

inline FieldPlane fresnel_plane(const RunConfig& c, const CloudSpec& cloud)
{
    const double w = c.fresnel.half_width > 0.0 ? c.fresnel.half_width : 1.5 * cloud.radius;
    FieldPlane plane;
    plane.z = 0.5 * cloud.length + c.fresnel.z_offset;
    plane.x_min = plane.y_min = -w;
    plane.x_max = plane.y_max = w;
    plane.nx = plane.ny = c.fresnel.points;
    return plane;
}

inline void run_fresnel(const RunConfig& c, const RunOptions& options, ResultBundle& b)
{
    const IncidentWave wave = c.incident.wave();
    SeriesTable profile(c, "fresnel_profile",
                        "field behind the cylinder along y = 0; intensities relative to the incident wave",
                        {{"x", units::length},
                         {"I_coh", units::dimensionless},
                         {"I_coh_raw", units::dimensionless},
                         {"I_total", units::dimensionless},
                         {"I_cross", units::dimensionless},
                         {"n_samples", units::dimensionless}});
    SeriesTable map(c, "fresnel_map", "coherent intensity on the observation plane",
                    {{"x", units::length}, {"y", units::length}, {"I_coh", units::dimensionless}});
    SeriesTable trans(c, "transmission",
                      "coherent transmission averaged over the shadow disk; b = -ln T",
                      {{"length", units::length},
                       {"density", units::density},
                       {"T", units::dimensionless},
                       {"T_sem", units::dimensionless},
                       {"b", units::dimensionless},
                       {"b_sem", units::dimensionless},
                       {"b_dilute", units::dimensionless},
                       {"n_points", units::dimensionless},
                       {"n_configs", units::dimensionless}});
    for (std::size_t s = 0; s < c.series_count(); ++s) {
        const CloudSpec cloud = c.cloud_for(s);
        const FieldPlane plane = fresnel_plane(c, cloud);
        const auto st = run_series(make_field_map_job(cloud, wave, plane, settings_of(c)), c, s, options, b);
        if (!st) {
            continue;
        }
        const FieldMap m = assemble_field_map(plane, st->accumulator);
        const std::size_t mid = plane.ny / 2;
        for (std::size_t i = 0; i < plane.nx; ++i) {
            const std::size_t p = mid * plane.nx + i;
            profile.row(s, {m.points[p].x(), m.coherent_intensity_unbiased[p], m.coherent_intensity[p],
                            m.mean_intensity[p], m.cross_intensity[p], static_cast<double>(m.counts[p])});
        }
        for (std::size_t p = 0; p < m.points.size(); ++p) {
            map.row(s, {m.points[p].x(), m.points[p].y(), m.coherent_intensity_unbiased[p]});
        }
        const TransmissionResult t =
            transmission_coefficient(m, ShadowRegion{0.0, 0.0, c.fresnel.shadow_fraction * cloud.radius});
        const double bval = t.value > 0.0 ? -std::log(t.value) : std::nan("");
        trans.row(s, {cloud.length, cloud.density, t.value, t.sem, bval, t.sem / t.value,
                      cloud.density * units::resonant_cross_section * cloud.length,
                      static_cast<double>(t.n_points), static_cast<double>(st->n_succeeded())});
    }
    b.tables.push_back(profile.take());
    b.tables.push_back(map.take());
    b.tables.push_back(trans.take());
    b.summary["observation_plane"] = "z = length/2 + z_offset behind the cylinder";
}

inline void run_eigenmodes(const RunConfig& c, ResultBundle& b)
{
    SeriesTable modes(c, "eigenmodes",
                      "eigenvalues of the effective Hamiltonian; shift = Re, width = -2 Im",
                      {{"config", units::dimensionless},
                       {"mode", units::dimensionless},
                       {"re", units::rate},
                       {"im", units::rate},
                       {"shift", units::rate},
                       {"width", units::rate}});
    SeriesTable atoms = atoms_table(c);
    for (std::size_t s = 0; s < c.series_count(); ++s) {
        const CloudSpec cloud = c.cloud_for(s);
        for (std::uint64_t i = 0; i < c.ensemble.configs; ++i) {
            const std::uint64_t seed = derive_seed(c.ensemble.seed, i);
            try {
                const AtomConfiguration config = sample_configuration(cloud, seed);
                const EffectiveHamiltonian h = build_hamiltonian(config);
                const ModeSpectrum spec = mode_spectrum(h);
                for (Eigen::Index k = 0; k < spec.eigenvalues.size(); ++k) {
                    const complex z = spec.eigenvalues(k);
                    modes.row(s, {static_cast<double>(i), static_cast<double>(k), z.real(), z.imag(),
                                  z.real(), -2.0 * z.imag()});
                }
                add_atoms_rows(atoms, s, i, config);
                if (c.eigenmodes.dump_matrix) {
                    std::ostringstream out(std::ios::binary);
                    dump_hamiltonian(out, h, &spec);
                    b.attachments.push_back({"hamiltonian_s" + std::to_string(s) + "_c"
                                                 + std::to_string(i) + ".bin",
                                             out.str()});
                }
            } catch (const Error& e) {
                b.failures.push_back({s, static_cast<std::int64_t>(i), seed, e.what()});
            }
        }
    }
    b.tables.push_back(modes.take());
    b.tables.push_back(atoms.take());
}

inline void run_single_shot(const RunConfig& c, ResultBundle& b)
{
    const IncidentWave wave = c.incident.wave();
    SeriesTable shot(c, "single_shot",
                     "one configuration: total cross section from the forward amplitude and by quadrature",
                     {{"n_atoms", units::dimensionless},
                      {"delta", units::rate},
                      {"sigma_optical_theorem", units::area},
                      {"sigma_quadrature", units::area},
                      {"quadrature_error", units::area},
                      {"residual", units::dimensionless},
                      {"condition", units::dimensionless}});
    SeriesTable atoms = atoms_table(c);
    QuadratureOptions q;
    q.n_theta = c.quadrature.n_theta;
    q.n_phi = c.quadrature.n_phi;
    q.tolerance = c.quadrature.tolerance;
    q.throw_on_failure = false;
    for (std::size_t s = 0; s < c.series_count(); ++s) {
        const std::uint64_t seed = derive_seed(c.ensemble.seed, 0);
        try {
            const AtomConfiguration config = sample_configuration(c.cloud_for(s), seed);
            SteadyStateAmplitudes amp;
            amp.detuning = wave.detuning;
            double sigma_ot = 0.0;
            QuadratureResult quad;
            if (!config.empty()) {
                amp = solve_resolvent(build_hamiltonian(config), wave.detuning,
                                      incident_vector(config, wave));
                sigma_ot = total_cross_section_optical_theorem(amp, config, wave);
                quad = total_cross_section_quadrature(amp, config, q);
                if (!quad.converged) {
                    b.failures.push_back({s, 0, seed, "quadrature did not reach the tolerance"});
                }
            }
            shot.row(s, {static_cast<double>(config.size()), wave.detuning, sigma_ot, quad.value,
                         quad.error_estimate, amp.residual, amp.condition});
            add_atoms_rows(atoms, s, 0, config);
        } catch (const Error& e) {
            b.failures.push_back({s, 0, seed, e.what()});
        }
    }
    b.tables.push_back(shot.take());
    b.tables.push_back(atoms.take());
}

} // namespace detail

/// Runs the configured experiment for every series. Failures of single
/// configurations or whole series are recorded and the remaining results
/// kept; the status is ok only when nothing failed.
inline ResultBundle run_experiment(const RunConfig& config, const RunOptions& options = {})
{
    const auto start = std::chrono::steady_clock::now();
    ResultBundle b;
    b.config = config;
    try {
        switch (config.experiment) {
        case Experiment::Spectrum: detail::run_spectrum(config, options, b); break;
        case Experiment::Angular: detail::run_angular(config, options, b); break;
        case Experiment::Cbs: detail::run_cbs(config, options, b); break;
        case Experiment::Fresnel: detail::run_fresnel(config, options, b); break;
        case Experiment::Eigenmodes: detail::run_eigenmodes(config, b); break;
        case Experiment::SingleShot: detail::run_single_shot(config, b); break;
        }
    } catch (const Error& e) {
        b.failures.push_back({0, -1, 0, e.what()});
        b.status = RunStatus::Failed;
    }
    if (b.status != RunStatus::Failed && !b.failures.empty()) {
        std::size_t rows = 0;
        for (const auto& t : b.tables) {
            rows += t.rows();
        }
        b.status = rows > 0 ? RunStatus::Partial : RunStatus::Failed;
    }
    b.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return b;
}

// ---------------------------------------------------------------------------
// Plot data
// ---------------------------------------------------------------------------

enum class FigureId { F1, F2, F4, F5, F6, F7, F8, F9 };

inline std::string_view to_string(FigureId f)
{
    switch (f) {
    case FigureId::F1: return "f1";
    case FigureId::F2: return "f2";
    case FigureId::F4: return "f4";
    case FigureId::F5: return "f5";
    case FigureId::F6: return "f6";
    case FigureId::F7: return "f7";
    case FigureId::F8: return "f8";
    case FigureId::F9: return "f9";
    }
    return "unknown";
}

inline std::optional<FigureId> parse_figure(std::string_view name)
{
    for (FigureId f : {FigureId::F1, FigureId::F2, FigureId::F4, FigureId::F5, FigureId::F6,
                       FigureId::F7, FigureId::F8, FigureId::F9}) {
        if (name == to_string(f)) {
            return f;
        }
    }
    return std::nullopt;
}

namespace detail {

[[noreturn]] inline void missing(FigureId f, const std::string& what, const ResultBundle& b)
{
    const std::string have = b.tables.empty() ? std::string("no results")
                                              : "a " + std::string(to_string(b.config.experiment))
                                                    + " experiment";
    throw InvalidArgument("figure " + std::string(to_string(f)) + " needs " + what
                          + ", but the bundle contains " + have);
}

inline const Table& need(const ResultBundle& b, FigureId f, const std::string& table,
                         const std::string& what)
{
    const Table* t = b.find(table);
    if (!t || t->rows() == 0) {
        missing(f, what, b);
    }
    return *t;
}

/// Row indices of one series of a table, in order.
inline std::vector<std::size_t> series_rows(const ResultBundle& b, const Table& t, std::size_t s)
{
    std::vector<std::size_t> rows;
    if (b.config.vary.parameter == VaryParameter::None) {
        for (std::size_t r = 0; r < t.rows(); ++r) {
            rows.push_back(r);
        }
        return rows;
    }
    const auto& key = t.column(std::string(to_string(b.config.vary.parameter))).values;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        if (key[r] == b.config.vary.values.at(s)) {
            rows.push_back(r);
        }
    }
    return rows;
}

/// Series that produced rows.
inline std::vector<std::size_t> present_series(const ResultBundle& b, const Table& t)
{
    std::vector<std::size_t> out;
    for (std::size_t s = 0; s < b.config.series_count(); ++s) {
        if (!series_rows(b, t, s).empty()) {
            out.push_back(s);
        }
    }
    return out;
}

/// One x column shared by all series plus one y column per (series, source
/// column). All series must share the x grid.
inline Table curves(const ResultBundle& b, const Table& t, const std::string& x_name,
                    const std::string& x_label,
                    const std::vector<std::pair<std::string, std::string>>& sources,
                    VaryParameter label_parameter, bool always_label)
{
    Table out;
    const auto series = present_series(b, t);
    const auto first = series_rows(b, t, series.front());
    Column& x = out.add(x_label, t.column(x_name).unit);
    for (const auto r : first) {
        x.values.push_back(t.column(x_name).values[r]);
    }
    const bool label = always_label || series.size() > 1;
    for (const auto s : series) {
        const auto rows = series_rows(b, t, s);
        if (rows.size() != first.size()) {
            throw InvalidArgument("series do not share a common grid");
        }
        for (const auto& [src, name] : sources) {
            const std::string suffix = series_label(b.config, s, label_parameter);
            const std::string header =
                !label ? name
                       : (name.back() == ')' && sources.size() == 1
                              ? name.substr(0, name.size() - 1) + ", " + suffix + ")"
                              : name + "(" + suffix + ")");
            Column& col = out.add(header, t.column(src).unit);
            for (const auto r : rows) {
                col.values.push_back(t.column(src).values[r]);
            }
        }
    }
    return out;
}

} // namespace detail

/// Lays out the data of one figure as a CSV table: one x column and one
/// y column per curve, headers naming the curve parameter.
inline Table plot_table(const ResultBundle& b, FigureId f)
{
    using detail::curves;
    using detail::need;
    Table out;
    switch (f) {
    case FigureId::F1: {
        const Table& t = need(b, f, "fresnel_profile", "a fresnel experiment");
        const Table& tr = need(b, f, "transmission", "a fresnel experiment");
        out.add("x", units::length);
        const auto series = detail::present_series(b, t);
        for (const auto r : detail::series_rows(b, t, series.front())) {
            out.columns.front().values.push_back(t.column("x").values[r]);
        }
        for (const auto s : series) {
            const auto trow = detail::series_rows(b, tr, s).front();
            Column& col = out.add("I_coh(b=" + detail::format_double(tr.column("b_dilute").values[trow]) + ")",
                                  units::dimensionless);
            for (const auto r : detail::series_rows(b, t, s)) {
                col.values.push_back(t.column("I_coh").values[r]);
            }
        }
        break;
    }
    case FigureId::F2: {
        const Table& t = need(b, f, "transmission", "a fresnel experiment");
        out.add("n", units::density).values = t.column("density").values;
        out.add("T_coh", units::dimensionless).values = t.column("T").values;
        Column& bl = out.add("T_bouguer_lambert", units::dimensionless);
        for (const double bd : t.column("b_dilute").values) {
            bl.values.push_back(std::exp(-bd));
        }
        break;
    }
    case FigureId::F4: {
        const Table* t = b.find("angular");
        if (!t || t->rows() == 0) {
            t = &need(b, f, "cbs_profile", "an angular or cbs experiment");
        }
        out = curves(b, *t, "theta", "theta", {{"hh", "I(H∥H)"}, {"hperp", "I(H⊥H)"}},
                     VaryParameter::Density, false);
        break;
    }
    case FigureId::F5: {
        const Table& t = need(b, f, "cbs_profile", "a cbs experiment");
        out = curves(b, t, "theta", "theta", {{"hh", "I(H∥H)"}}, VaryParameter::Density, true);
        break;
    }
    case FigureId::F6:
    case FigureId::F7: {
        const Table& t = need(b, f, "spectrum", "a spectrum experiment");
        if (!t.has("sigma")) {
            detail::missing(f, "a total cross section spectrum", b);
        }
        out = curves(b, t, "delta", "delta", {{"sigma", "sigma"}},
                     f == FigureId::F6 ? VaryParameter::Density : VaryParameter::Radius, true);
        break;
    }
    case FigureId::F8: {
        const Table& t = need(b, f, "spectrum", "a spectrum experiment");
        std::vector<std::pair<std::string, std::string>> src;
        for (const double a : b.config.spectrum.angles_deg) {
            const std::string name = "dsigma(theta=" + detail::format_double(a) + "deg)";
            if (t.has(name)) {
                src.emplace_back(name, "I(theta=" + detail::format_double(a) + "deg)");
            }
        }
        if (src.empty()) {
            detail::missing(f, "a differential spectrum", b);
        }
        out = curves(b, t, "delta", "delta", src, VaryParameter::Density, false);
        break;
    }
    case FigureId::F9: {
        const Table& t = need(b, f, "spectrum", "a spectrum experiment");
        if (b.config.spectrum.angles_deg.empty()
            || !t.has("hh(theta=" + detail::format_double(b.config.spectrum.angles_deg.front()) + "deg)")) {
            detail::missing(f, "a polarization-resolved spectrum", b);
        }
        const std::string a = detail::format_double(b.config.spectrum.angles_deg.front());
        out = curves(b, t, "delta", "delta",
                     {{"hh(theta=" + a + "deg)", "I(H∥H)"}, {"hperp(theta=" + a + "deg)", "I(H⊥H)"}},
                     VaryParameter::Density, false);
        break;
    }
    }
    out.name = std::string(to_string(f));
    out.description = "plot data for figure " + out.name;
    return out;
}

/// Writes <dir>/<figure>.csv and returns its path.
inline std::filesystem::path emit_plot_data(const ResultBundle& b, FigureId f,
                                            const std::filesystem::path& dir)
{
    const Table t = plot_table(b, f);
    std::filesystem::create_directories(dir);
    const auto path = dir / (t.name + ".csv");
    std::ofstream out(path);
    write_csv(out, t);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    return path;
}

} // namespace cdsim
