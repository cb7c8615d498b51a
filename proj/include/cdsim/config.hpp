#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "cdsim/detail/format.hpp"
#include "cdsim/error.hpp"
#include "cdsim/geometry.hpp"
#include "cdsim/kernel.hpp"
#include "cdsim/observables.hpp"
#include "cdsim/solver.hpp"

namespace cdsim {

enum class Experiment { Spectrum, Angular, Cbs, Fresnel, Eigenmodes, SingleShot };

inline std::string_view to_string(Experiment e)
{
    switch (e) {
    case Experiment::Spectrum: return "spectrum";
    case Experiment::Angular: return "angular";
    case Experiment::Cbs: return "cbs";
    case Experiment::Fresnel: return "fresnel";
    case Experiment::Eigenmodes: return "eigenmodes";
    case Experiment::SingleShot: return "single-shot";
    }
    return "unknown";
}

inline std::optional<Experiment> parse_experiment(std::string_view name)
{
    for (Experiment e : {Experiment::Spectrum, Experiment::Angular, Experiment::Cbs,
                         Experiment::Fresnel, Experiment::Eigenmodes, Experiment::SingleShot}) {
        if (name == to_string(e)) {
            return e;
        }
    }
    return std::nullopt;
}

/// Cloud parameter repeated over a list of values (one result series each).
enum class VaryParameter { None, Density, Radius, Length };

inline std::string_view to_string(VaryParameter v)
{
    switch (v) {
    case VaryParameter::None: return "none";
    case VaryParameter::Density: return "density";
    case VaryParameter::Radius: return "radius";
    case VaryParameter::Length: return "length";
    }
    return "unknown";
}

inline std::string_view to_string(SweepStrategy s)
{
    switch (s) {
    case SweepStrategy::Auto: return "auto";
    case SweepStrategy::PerPointLU: return "lu";
    case SweepStrategy::Spectral: return "spectral";
    case SweepStrategy::Hessenberg: return "hessenberg";
    }
    return "unknown";
}

/// Degrees to radians, with 180 mapped exactly onto pi.
inline double degrees_to_radians(double deg)
{
    return deg == 180.0 ? pi : deg * (pi / 180.0);
}

struct IncidentConfig {
    std::array<double, 3> direction{0.0, 0.0, 1.0};
    /// "circular" or "linear".
    std::string polarization = "circular";
    int helicity = 1;
    std::array<double, 3> linear_axis{1.0, 0.0, 0.0};
    double detuning = 0.0;

    IncidentWave wave() const
    {
        const Vec3 k(direction[0], direction[1], direction[2]);
        if (polarization == "circular") {
            return IncidentWave::circular(k, helicity, detuning);
        }
        return IncidentWave::linear(k, Vec3(linear_axis[0], linear_axis[1], linear_axis[2]),
                                    detuning);
    }

    friend bool operator==(const IncidentConfig&, const IncidentConfig&) = default;
};

struct EnsembleConfig {
    std::uint64_t configs = 1;
    std::uint64_t seed = 0;
    unsigned workers = 1;
    /// Write a checkpoint every this many configurations (0: never).
    std::uint64_t checkpoint_every = 0;

    friend bool operator==(const EnsembleConfig&, const EnsembleConfig&) = default;
};

struct VaryConfig {
    VaryParameter parameter = VaryParameter::None;
    std::vector<double> values;

    friend bool operator==(const VaryConfig&, const VaryConfig&) = default;
};

struct SpectrumConfig {
    std::vector<double> detunings;
    SpectrumObservable observable = SpectrumObservable::TotalCrossSection;
    std::vector<double> angles_deg;
    std::size_t n_azimuth = 1;
    std::size_t views = 1;

    friend bool operator==(const SpectrumConfig&, const SpectrumConfig&) = default;
};

struct AngularConfig {
    /// Scattering angles in degrees; empty selects the default backscattering grid.
    std::vector<double> theta_deg;
    std::size_t n_azimuth = 16;
    std::size_t views = 1;
    double background_min_deg = 150.0;
    double background_max_deg = 175.0;

    std::vector<double> theta_radians() const
    {
        if (theta_deg.empty()) {
            return default_cbs_grid();
        }
        std::vector<double> out;
        for (const double d : theta_deg) {
            out.push_back(degrees_to_radians(d));
        }
        return out;
    }

    friend bool operator==(const AngularConfig&, const AngularConfig&) = default;
};

struct FresnelConfig {
    /// Distance of the observation plane behind the rear face of the cloud.
    double z_offset = 4.0;
    /// Half-width of the square grid; 0 selects 1.5 R.
    double half_width = 0.0;
    /// Grid points per axis (odd, so that the axis y = 0 is sampled).
    std::size_t points = 41;
    /// Radius of the shadow disk as a fraction of the cloud radius.
    double shadow_fraction = 0.7;

    friend bool operator==(const FresnelConfig&, const FresnelConfig&) = default;
};

struct EigenmodesConfig {
    bool dump_matrix = false;

    friend bool operator==(const EigenmodesConfig&, const EigenmodesConfig&) = default;
};

struct QuadratureConfig {
    std::size_t n_theta = 64;
    std::size_t n_phi = 128;
    double tolerance = 1e-6;

    friend bool operator==(const QuadratureConfig&, const QuadratureConfig&) = default;
};

struct SolverConfig {
    SweepStrategy sweep = SweepStrategy::Auto;
    std::size_t max_lu_points = 2;

    friend bool operator==(const SolverConfig&, const SolverConfig&) = default;
};

struct OutputConfig {
    std::string dir = "results";
    /// Figure ids to emit after the run (f1, f2, f4 ... f9).
    std::vector<std::string> figures;

    friend bool operator==(const OutputConfig&, const OutputConfig&) = default;
};

struct RunConfig {
    Experiment experiment = Experiment::Spectrum;
    CloudSpec cloud;
    VaryConfig vary;
    IncidentConfig incident;
    EnsembleConfig ensemble;
    SpectrumConfig spectrum;
    AngularConfig angular;
    FresnelConfig fresnel;
    EigenmodesConfig eigenmodes;
    QuadratureConfig quadrature;
    SolverConfig solver;
    OutputConfig output;

    /// Cloud of series `i` of the vary list.
    CloudSpec cloud_for(std::size_t i) const
    {
        CloudSpec c = cloud;
        if (vary.parameter == VaryParameter::None) {
            return c;
        }
        const double v = vary.values.at(i);
        switch (vary.parameter) {
        case VaryParameter::Density: c.density = v; break;
        case VaryParameter::Radius: c.radius = v; break;
        case VaryParameter::Length: c.length = v; break;
        case VaryParameter::None: break;
        }
        return c;
    }

    std::size_t series_count() const
    {
        return vary.parameter == VaryParameter::None ? 1 : vary.values.size();
    }

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace detail {

inline int line_of(const YAML::Node& n)
{
    return n.Mark().is_null() ? 0 : n.Mark().line + 1;
}

/// Mapping node that remembers which keys were read, so that leftovers can
/// be reported as unknown.
class Section {
public:
    Section(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path))
    {
        if (node_ && !node_.IsNull() && !node_.IsMap()) {
            fail("must be a mapping", node_);
        }
    }

    std::string key(const std::string& name) const
    {
        return path_.empty() ? name : path_ + "." + name;
    }

    YAML::Node get(const std::string& name)
    {
        seen_.insert(name);
        if (!node_ || !node_.IsMap()) {
            return YAML::Node(YAML::NodeType::Undefined);
        }
        return node_[name];
    }

    bool has(const std::string& name) const
    {
        return node_ && node_.IsMap() && node_[name];
    }

    Section section(const std::string& name) { return Section(get(name), key(name)); }

    [[noreturn]] void fail(const std::string& what, const YAML::Node& at) const
    {
        throw ConfigError(path_ + ": " + what, path_, line_of(at));
    }

    [[noreturn]] void fail_key(const std::string& name, const std::string& what) const
    {
        const int line = has(name) ? line_of(node_[name]) : line_of(node_);
        throw ConfigError(key(name) + ": " + what, key(name), line);
    }

    template <class T>
    T scalar(const std::string& name, const T& fallback)
    {
        const YAML::Node n = get(name);
        if (!n) {
            return fallback;
        }
        if (!n.IsScalar()) {
            fail_key(name, "expected a scalar value");
        }
        try {
            if constexpr (std::is_same_v<T, bool>) {
                return n.as<bool>();
            } else if constexpr (std::is_floating_point_v<T>) {
                double v = 0.0;
                if (!try_parse_double(n.Scalar(), v)) {
                    fail_key(name, "expected a number, got '" + n.Scalar() + "'");
                }
                return v;
            } else if constexpr (std::is_integral_v<T>) {
                const std::string s = n.Scalar();
                if (std::is_unsigned_v<T> && !s.empty() && s.front() == '-') {
                    fail_key(name, "must be non-negative");
                }
                return n.as<T>();
            } else {
                return n.as<T>();
            }
        } catch (const YAML::Exception&) {
            fail_key(name, "cannot convert '" + n.Scalar() + "'");
        }
    }

    std::array<double, 3> vec3(const std::string& name, const std::array<double, 3>& fallback)
    {
        const YAML::Node n = get(name);
        if (!n) {
            return fallback;
        }
        if (!n.IsSequence() || n.size() != 3) {
            fail_key(name, "expected a list of three numbers");
        }
        std::array<double, 3> out{};
        for (std::size_t i = 0; i < 3; ++i) {
            if (!n[i].IsScalar() || !try_parse_double(n[i].Scalar(), out[i])) {
                fail_key(name, "expected a list of three numbers");
            }
        }
        return out;
    }

    /// A list of numbers, or a range mapping {min, max, step} (inclusive).
    std::vector<double> grid(const std::string& name, const std::vector<double>& fallback)
    {
        const YAML::Node n = get(name);
        if (!n) {
            return fallback;
        }
        std::vector<double> out;
        if (n.IsSequence()) {
            for (const auto& item : n) {
                double v = 0.0;
                if (!item.IsScalar() || !try_parse_double(item.Scalar(), v)) {
                    fail_key(name, "list entries must be numbers");
                }
                out.push_back(v);
            }
            return out;
        }
        if (n.IsMap()) {
            Section range(n, key(name));
            const double lo = range.scalar<double>("min", std::nan(""));
            const double hi = range.scalar<double>("max", std::nan(""));
            const double step = range.scalar<double>("step", std::nan(""));
            range.finish();
            if (!std::isfinite(lo) || !std::isfinite(hi) || !std::isfinite(step)) {
                fail_key(name, "range needs finite min, max and step");
            }
            if (!(step > 0.0) || hi < lo) {
                fail_key(name, "range needs step > 0 and max >= min");
            }
            const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
            if (count > 1000000) {
                fail_key(name, "range has too many points");
            }
            // Rounded to nine decimals below the step so that points such as
            // 0 or 0.3 come out as the doubles a user would have typed.
            const int decimals = std::clamp(9 - static_cast<int>(std::floor(std::log10(step))), 0, 30);
            for (std::size_t i = 0; i < count; ++i) {
                char text[400];
                std::snprintf(text, sizeof text, "%.*f", decimals, lo + step * static_cast<double>(i));
                out.push_back(std::strtod(text, nullptr));
            }
            return out;
        }
        fail_key(name, "expected a list or a {min, max, step} range");
    }

    std::vector<std::string> strings(const std::string& name)
    {
        const YAML::Node n = get(name);
        std::vector<std::string> out;
        if (!n) {
            return out;
        }
        if (!n.IsSequence()) {
            fail_key(name, "expected a list of strings");
        }
        for (const auto& item : n) {
            out.push_back(item.as<std::string>());
        }
        return out;
    }

    /// Rejects keys that were never read.
    void finish() const
    {
        if (!node_ || !node_.IsMap()) {
            return;
        }
        for (const auto& kv : node_) {
            const auto name = kv.first.as<std::string>();
            if (!seen_.count(name)) {
                throw ConfigError("unknown key '" + key(name) + "'", key(name), line_of(kv.first));
            }
        }
    }

private:
    YAML::Node node_;
    std::string path_;
    std::set<std::string> seen_;
};

inline void require(bool ok, Section& s, const std::string& name, const std::string& what)
{
    if (!ok) {
        s.fail_key(name, what);
    }
}

} // namespace detail

/// Parses and validates a YAML run configuration. Omitted entries take the
/// defaults of the RunConfig members. `experiment`, when given, is used if
/// the document names none and must match the one it names.
inline RunConfig parse_config(const std::string& text, std::optional<Experiment> experiment = {})
{
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ConfigError("syntax error at line " + std::to_string(e.mark.line + 1) + ": " + e.msg,
                          "", e.mark.line + 1);
    }
    if (root.IsNull()) {
        root = YAML::Node(YAML::NodeType::Map);
    }
    using detail::require;
    detail::Section top(root, "");
    RunConfig c;

    const auto exp = top.scalar<std::string>(
        "experiment", std::string(to_string(experiment.value_or(c.experiment))));
    const auto parsed = parse_experiment(exp);
    require(parsed.has_value(), top, "experiment",
            "unknown experiment '" + exp
                + "' (expected spectrum, angular, cbs, fresnel, eigenmodes or single-shot)");
    if (experiment && *parsed != *experiment) {
        top.fail_key("experiment", "document describes a '" + exp + "' run, not '"
                                       + std::string(to_string(*experiment)) + "'");
    }
    c.experiment = *parsed;

    {
        auto s = top.section("cloud");
        const auto shape = s.scalar<std::string>("shape", std::string(to_string(c.cloud.shape)));
        try {
            c.cloud.shape = parse_cloud_shape(shape);
        } catch (const InvalidArgument&) {
            s.fail_key("shape", "unknown shape '" + shape
                                    + "' (expected uniform-sphere, gaussian-sphere or cylinder)");
        }
        c.cloud.radius = s.scalar<double>("radius", c.cloud.radius);
        c.cloud.length = s.scalar<double>("length", c.cloud.length);
        c.cloud.density = s.scalar<double>("density", c.cloud.density);
        c.cloud.min_separation = s.scalar<double>("min_separation", c.cloud.min_separation);
        if (s.has("atom_count")) {
            c.cloud.atom_count = s.scalar<std::size_t>("atom_count", 0);
        } else {
            s.get("atom_count");
        }
        require(c.cloud.radius > 0.0 && std::isfinite(c.cloud.radius), s, "radius", "must be positive");
        require(c.cloud.density > 0.0 && std::isfinite(c.cloud.density), s, "density",
                "must be positive");
        require(c.cloud.min_separation >= 0.0, s, "min_separation", "must be non-negative");
        if (c.cloud.shape == CloudShape::Cylinder) {
            require(c.cloud.length > 0.0 && std::isfinite(c.cloud.length), s, "length",
                    "a cylinder needs a positive length");
        } else {
            require(c.cloud.length == 0.0, s, "length", "only a cylinder has a length");
        }
        s.finish();
    }

    {
        auto s = top.section("vary");
        const auto param = s.scalar<std::string>("parameter", "none");
        if (param == "none") c.vary.parameter = VaryParameter::None;
        else if (param == "density") c.vary.parameter = VaryParameter::Density;
        else if (param == "radius") c.vary.parameter = VaryParameter::Radius;
        else if (param == "length") c.vary.parameter = VaryParameter::Length;
        else s.fail_key("parameter", "expected none, density, radius or length");
        c.vary.values = s.grid("values", {});
        if (c.vary.parameter == VaryParameter::None) {
            require(c.vary.values.empty(), s, "values", "values given but parameter is none");
        } else {
            require(!c.vary.values.empty(), s, "values", "needs at least one value");
            for (const double v : c.vary.values) {
                require(v > 0.0 && std::isfinite(v), s, "values", "values must be positive");
            }
            require(c.vary.parameter != VaryParameter::Length || c.cloud.shape == CloudShape::Cylinder,
                    s, "parameter", "length can only be varied for a cylinder");
        }
        s.finish();
    }

    {
        auto s = top.section("incident");
        c.incident.direction = s.vec3("direction", c.incident.direction);
        c.incident.polarization = s.scalar<std::string>("polarization", c.incident.polarization);
        c.incident.helicity = s.scalar<int>("helicity", c.incident.helicity);
        c.incident.linear_axis = s.vec3("linear_axis", c.incident.linear_axis);
        c.incident.detuning = s.scalar<double>("detuning", c.incident.detuning);
        require(c.incident.polarization == "circular" || c.incident.polarization == "linear", s,
                "polarization", "expected circular or linear");
        require(c.incident.helicity == 1 || c.incident.helicity == -1, s, "helicity",
                "must be 1 or -1");
        require(std::isfinite(c.incident.detuning), s, "detuning", "must be finite");
        const Vec3 k(c.incident.direction[0], c.incident.direction[1], c.incident.direction[2]);
        require(k.norm() > 0.0 && std::isfinite(k.norm()), s, "direction", "must be a nonzero vector");
        if (c.incident.polarization == "linear") {
            const Vec3 e(c.incident.linear_axis[0], c.incident.linear_axis[1], c.incident.linear_axis[2]);
            require(e.norm() > 0.0 && std::abs(e.normalized().dot(k.normalized())) < 1e-9, s,
                    "linear_axis", "must be a nonzero vector transverse to the direction");
        }
        if (c.experiment == Experiment::Spectrum || c.experiment == Experiment::Angular
            || c.experiment == Experiment::Cbs) {
            require(c.incident.polarization == "circular", s, "polarization",
                    "this experiment needs circular polarization");
        }
        if (c.experiment == Experiment::Fresnel) {
            require(std::abs(k.normalized().z() - 1.0) < 1e-12, s, "direction",
                    "the fresnel experiment needs incidence along +z (the cylinder axis)");
        }
        s.finish();
    }

    {
        auto s = top.section("ensemble");
        c.ensemble.configs = s.scalar<std::uint64_t>("configs", c.ensemble.configs);
        c.ensemble.seed = s.scalar<std::uint64_t>("seed", c.ensemble.seed);
        c.ensemble.workers = s.scalar<unsigned>("workers", c.ensemble.workers);
        c.ensemble.checkpoint_every = s.scalar<std::uint64_t>("checkpoint_every", c.ensemble.checkpoint_every);
        require(c.ensemble.configs >= 1, s, "configs", "must be at least 1");
        require(c.ensemble.workers >= 1, s, "workers", "must be at least 1");
        s.finish();
    }

    {
        auto s = top.section("spectrum");
        c.spectrum.detunings = s.grid("detunings", c.spectrum.detunings);
        const auto obs = s.scalar<std::string>("observable", std::string(to_string(c.spectrum.observable)));
        if (obs == "total") c.spectrum.observable = SpectrumObservable::TotalCrossSection;
        else if (obs == "differential") c.spectrum.observable = SpectrumObservable::Differential;
        else if (obs == "polarization") c.spectrum.observable = SpectrumObservable::PolarizationResolved;
        else s.fail_key("observable", "expected total, differential or polarization");
        c.spectrum.angles_deg = s.grid("angles_deg", c.spectrum.angles_deg);
        c.spectrum.n_azimuth = s.scalar<std::size_t>("n_azimuth", c.spectrum.n_azimuth);
        c.spectrum.views = s.scalar<std::size_t>("views", c.spectrum.views);
        for (const double d : c.spectrum.detunings) {
            require(std::isfinite(d), s, "detunings", "must be finite");
        }
        for (const double a : c.spectrum.angles_deg) {
            require(a >= 0.0 && a <= 180.0, s, "angles_deg", "angles must lie in [0, 180]");
        }
        require(c.spectrum.n_azimuth >= 1, s, "n_azimuth", "must be at least 1");
        require(c.spectrum.views >= 1, s, "views", "must be at least 1");
        if (c.experiment == Experiment::Spectrum) {
            require(!c.spectrum.detunings.empty(), s, "detunings", "a spectrum needs a detuning grid");
            require(c.spectrum.observable == SpectrumObservable::TotalCrossSection
                        || !c.spectrum.angles_deg.empty(),
                    s, "angles_deg", "angle-resolved spectra need at least one angle");
            require(c.spectrum.views == 1 || c.cloud.shape != CloudShape::Cylinder, s, "views",
                    "random views need a spherically symmetric cloud");
        }
        s.finish();
    }

    {
        auto s = top.section("angular");
        c.angular.theta_deg = s.grid("theta_deg", c.angular.theta_deg);
        c.angular.n_azimuth = s.scalar<std::size_t>("n_azimuth", c.angular.n_azimuth);
        c.angular.views = s.scalar<std::size_t>("views", c.angular.views);
        c.angular.background_min_deg = s.scalar<double>("background_min_deg", c.angular.background_min_deg);
        c.angular.background_max_deg = s.scalar<double>("background_max_deg", c.angular.background_max_deg);
        for (const double a : c.angular.theta_deg) {
            require(a >= 0.0 && a <= 180.0, s, "theta_deg", "angles must lie in [0, 180]");
        }
        require(c.angular.n_azimuth >= 1, s, "n_azimuth", "must be at least 1");
        require(c.angular.views >= 1, s, "views", "must be at least 1");
        require(c.angular.background_max_deg > c.angular.background_min_deg
                    && c.angular.background_min_deg >= 0.0 && c.angular.background_max_deg <= 180.0,
                s, "background_max_deg", "background window must satisfy 0 <= min < max <= 180");
        if (c.experiment == Experiment::Angular || c.experiment == Experiment::Cbs) {
            require(c.angular.views == 1 || c.cloud.shape != CloudShape::Cylinder, s, "views",
                    "random views need a spherically symmetric cloud");
        }
        if (c.experiment == Experiment::Cbs && !c.angular.theta_deg.empty()) {
            bool has_pi = false;
            for (const double a : c.angular.theta_deg) {
                has_pi = has_pi || a == 180.0;
            }
            require(has_pi, s, "theta_deg", "a CBS grid must contain 180 degrees");
        }
        s.finish();
    }

    {
        auto s = top.section("fresnel");
        c.fresnel.z_offset = s.scalar<double>("z_offset", c.fresnel.z_offset);
        c.fresnel.half_width = s.scalar<double>("half_width", c.fresnel.half_width);
        c.fresnel.points = s.scalar<std::size_t>("points", c.fresnel.points);
        c.fresnel.shadow_fraction = s.scalar<double>("shadow_fraction", c.fresnel.shadow_fraction);
        require(c.fresnel.z_offset > 0.0, s, "z_offset", "must be positive");
        require(c.fresnel.half_width >= 0.0, s, "half_width", "must be non-negative");
        require(c.fresnel.points >= 3 && c.fresnel.points % 2 == 1, s, "points",
                "must be an odd number >= 3");
        require(c.fresnel.shadow_fraction > 0.0 && c.fresnel.shadow_fraction <= 1.0, s,
                "shadow_fraction", "must lie in (0, 1]");
        if (c.experiment == Experiment::Fresnel) {
            require(c.cloud.shape == CloudShape::Cylinder, s, "z_offset",
                    "the fresnel experiment needs a cylinder cloud");
        }
        s.finish();
    }

    {
        auto s = top.section("eigenmodes");
        c.eigenmodes.dump_matrix = s.scalar<bool>("dump_matrix", c.eigenmodes.dump_matrix);
        s.finish();
    }

    {
        auto s = top.section("quadrature");
        c.quadrature.n_theta = s.scalar<std::size_t>("n_theta", c.quadrature.n_theta);
        c.quadrature.n_phi = s.scalar<std::size_t>("n_phi", c.quadrature.n_phi);
        c.quadrature.tolerance = s.scalar<double>("tolerance", c.quadrature.tolerance);
        require(c.quadrature.n_theta >= 1, s, "n_theta", "must be at least 1");
        require(c.quadrature.n_phi >= 1, s, "n_phi", "must be at least 1");
        require(c.quadrature.tolerance > 0.0, s, "tolerance", "must be positive");
        s.finish();
    }

    {
        auto s = top.section("solver");
        const auto sweep = s.scalar<std::string>("sweep", std::string(to_string(c.solver.sweep)));
        if (sweep == "auto") c.solver.sweep = SweepStrategy::Auto;
        else if (sweep == "lu") c.solver.sweep = SweepStrategy::PerPointLU;
        else if (sweep == "spectral") c.solver.sweep = SweepStrategy::Spectral;
        else if (sweep == "hessenberg") c.solver.sweep = SweepStrategy::Hessenberg;
        else s.fail_key("sweep", "expected auto, lu, spectral or hessenberg");
        c.solver.max_lu_points = s.scalar<std::size_t>("max_lu_points", c.solver.max_lu_points);
        s.finish();
    }

    {
        auto s = top.section("output");
        c.output.dir = s.scalar<std::string>("dir", c.output.dir);
        c.output.figures = s.strings("figures");
        require(!c.output.dir.empty(), s, "dir", "must not be empty");
        s.finish();
    }

    top.finish();
    return c;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace detail {

inline void emit_number(YAML::Emitter& out, double v) { out << format_double(v); }

inline void emit_list(YAML::Emitter& out, const std::vector<double>& values)
{
    out << YAML::Flow << YAML::BeginSeq;
    for (const double v : values) {
        emit_number(out, v);
    }
    out << YAML::EndSeq;
}

inline void emit_vec3(YAML::Emitter& out, const std::array<double, 3>& v)
{
    out << YAML::Flow << YAML::BeginSeq;
    for (const double x : v) {
        emit_number(out, x);
    }
    out << YAML::EndSeq;
}

} // namespace detail

/// Complete YAML rendering of a configuration (all defaults explicit);
/// parse_config(serialize_config(c)) == c.
inline std::string serialize_config(const RunConfig& c)
{
    using detail::emit_list;
    using detail::emit_number;
    using detail::emit_vec3;
    YAML::Emitter out;
    out << YAML::BeginMap;
    out << YAML::Key << "experiment" << YAML::Value << std::string(to_string(c.experiment));

    out << YAML::Key << "cloud" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "shape" << YAML::Value << std::string(to_string(c.cloud.shape));
    out << YAML::Key << "radius" << YAML::Value;
    emit_number(out, c.cloud.radius);
    out << YAML::Key << "length" << YAML::Value;
    emit_number(out, c.cloud.length);
    out << YAML::Key << "density" << YAML::Value;
    emit_number(out, c.cloud.density);
    out << YAML::Key << "min_separation" << YAML::Value;
    emit_number(out, c.cloud.min_separation);
    if (c.cloud.atom_count) {
        out << YAML::Key << "atom_count" << YAML::Value << *c.cloud.atom_count;
    }
    out << YAML::EndMap;

    out << YAML::Key << "vary" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "parameter" << YAML::Value << std::string(to_string(c.vary.parameter));
    out << YAML::Key << "values" << YAML::Value;
    emit_list(out, c.vary.values);
    out << YAML::EndMap;

    out << YAML::Key << "incident" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "direction" << YAML::Value;
    emit_vec3(out, c.incident.direction);
    out << YAML::Key << "polarization" << YAML::Value << c.incident.polarization;
    out << YAML::Key << "helicity" << YAML::Value << c.incident.helicity;
    out << YAML::Key << "linear_axis" << YAML::Value;
    emit_vec3(out, c.incident.linear_axis);
    out << YAML::Key << "detuning" << YAML::Value;
    emit_number(out, c.incident.detuning);
    out << YAML::EndMap;

    out << YAML::Key << "ensemble" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "configs" << YAML::Value << c.ensemble.configs;
    out << YAML::Key << "seed" << YAML::Value << c.ensemble.seed;
    out << YAML::Key << "workers" << YAML::Value << c.ensemble.workers;
    out << YAML::Key << "checkpoint_every" << YAML::Value << c.ensemble.checkpoint_every;
    out << YAML::EndMap;

    out << YAML::Key << "spectrum" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "detunings" << YAML::Value;
    emit_list(out, c.spectrum.detunings);
    out << YAML::Key << "observable" << YAML::Value << std::string(to_string(c.spectrum.observable));
    out << YAML::Key << "angles_deg" << YAML::Value;
    emit_list(out, c.spectrum.angles_deg);
    out << YAML::Key << "n_azimuth" << YAML::Value << c.spectrum.n_azimuth;
    out << YAML::Key << "views" << YAML::Value << c.spectrum.views;
    out << YAML::EndMap;

    out << YAML::Key << "angular" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "theta_deg" << YAML::Value;
    emit_list(out, c.angular.theta_deg);
    out << YAML::Key << "n_azimuth" << YAML::Value << c.angular.n_azimuth;
    out << YAML::Key << "views" << YAML::Value << c.angular.views;
    out << YAML::Key << "background_min_deg" << YAML::Value;
    emit_number(out, c.angular.background_min_deg);
    out << YAML::Key << "background_max_deg" << YAML::Value;
    emit_number(out, c.angular.background_max_deg);
    out << YAML::EndMap;

    out << YAML::Key << "fresnel" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "z_offset" << YAML::Value;
    emit_number(out, c.fresnel.z_offset);
    out << YAML::Key << "half_width" << YAML::Value;
    emit_number(out, c.fresnel.half_width);
    out << YAML::Key << "points" << YAML::Value << c.fresnel.points;
    out << YAML::Key << "shadow_fraction" << YAML::Value;
    emit_number(out, c.fresnel.shadow_fraction);
    out << YAML::EndMap;

    out << YAML::Key << "eigenmodes" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "dump_matrix" << YAML::Value << c.eigenmodes.dump_matrix;
    out << YAML::EndMap;

    out << YAML::Key << "quadrature" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "n_theta" << YAML::Value << c.quadrature.n_theta;
    out << YAML::Key << "n_phi" << YAML::Value << c.quadrature.n_phi;
    out << YAML::Key << "tolerance" << YAML::Value;
    emit_number(out, c.quadrature.tolerance);
    out << YAML::EndMap;

    out << YAML::Key << "solver" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "sweep" << YAML::Value << std::string(to_string(c.solver.sweep));
    out << YAML::Key << "max_lu_points" << YAML::Value << c.solver.max_lu_points;
    out << YAML::EndMap;

    out << YAML::Key << "output" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "dir" << YAML::Value << c.output.dir;
    out << YAML::Key << "figures" << YAML::Value << YAML::Flow << c.output.figures;
    out << YAML::EndMap;

    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

} // namespace cdsim
