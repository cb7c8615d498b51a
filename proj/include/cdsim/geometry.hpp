#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cdsim/detail/format.hpp"
#include "cdsim/error.hpp"
#include "cdsim/rng.hpp"
#include "cdsim/units.hpp"

namespace cdsim {

enum class CloudShape { UniformSphere, GaussianSphere, Cylinder };

inline std::string_view to_string(CloudShape shape)
{
    switch (shape) {
    case CloudShape::UniformSphere: return "uniform-sphere";
    case CloudShape::GaussianSphere: return "gaussian-sphere";
    case CloudShape::Cylinder: return "cylinder";
    }
    return "unknown";
}

inline CloudShape parse_cloud_shape(std::string_view name)
{
    if (name == "uniform-sphere") return CloudShape::UniformSphere;
    if (name == "gaussian-sphere") return CloudShape::GaussianSphere;
    if (name == "cylinder") return CloudShape::Cylinder;
    throw InvalidArgument("unknown cloud shape '" + std::string(name) + "'");
}

/// Gaussian clouds are truncated at this multiple of the rms radius.
inline constexpr double gaussian_truncation = 4.0;

/// Default exclusion radius between atoms, in lambda-bar.
inline constexpr double default_min_separation = 0.01;

/// Shape and density of a random cloud.
///
/// `radius` is the sphere/cylinder radius, or the rms radius of a Gaussian
/// cloud. `density` is the mean density, or the peak (center) density of a
/// Gaussian cloud. The cylinder axis is z and the cylinder spans
/// z in [-length/2, length/2]. All clouds are centered on the origin.
struct CloudSpec {
    CloudShape shape = CloudShape::UniformSphere;
    double radius = 1.0;
    double length = 0.0;
    double density = 1e-3;
    double min_separation = default_min_separation;
    std::optional<std::size_t> atom_count;

    void validate() const
    {
        if (!(radius > 0.0) || !std::isfinite(radius)) {
            throw InvalidArgument("cloud radius must be positive");
        }
        if (shape == CloudShape::Cylinder && (!(length > 0.0) || !std::isfinite(length))) {
            throw InvalidArgument("cylinder length must be positive");
        }
        if (!(density > 0.0) || !std::isfinite(density)) {
            throw InvalidArgument("cloud density must be positive");
        }
        if (!(min_separation >= 0.0) || !std::isfinite(min_separation)) {
            throw InvalidArgument("minimum separation must be non-negative");
        }
    }

    /// Density times volume; the Gaussian "volume" is (2 pi)^{3/2} R^3.
    double expected_atoms() const
    {
        switch (shape) {
        case CloudShape::UniformSphere:
            return density * 4.0 / 3.0 * pi * radius * radius * radius;
        case CloudShape::GaussianSphere:
            return density * std::pow(2.0 * pi, 1.5) * radius * radius * radius;
        case CloudShape::Cylinder:
            return density * pi * radius * radius * length;
        }
        return 0.0;
    }

    std::size_t resolved_atom_count() const
    {
        if (atom_count) {
            return *atom_count;
        }
        return static_cast<std::size_t>(std::llround(expected_atoms()));
    }

    /// Radius of the sphere (about the origin) that contains every atom.
    double bounding_radius() const
    {
        switch (shape) {
        case CloudShape::UniformSphere: return radius;
        case CloudShape::GaussianSphere: return gaussian_truncation * radius;
        case CloudShape::Cylinder: return std::hypot(radius, 0.5 * length);
        }
        return radius;
    }

    bool contains(const Vec3& p, double slack = 1e-12) const
    {
        switch (shape) {
        case CloudShape::UniformSphere:
            return p.norm() <= radius * (1.0 + slack);
        case CloudShape::GaussianSphere:
            return p.norm() <= gaussian_truncation * radius * (1.0 + slack);
        case CloudShape::Cylinder:
            return std::hypot(p.x(), p.y()) <= radius * (1.0 + slack)
                && std::abs(p.z()) <= 0.5 * length * (1.0 + slack);
        }
        return false;
    }

    friend bool operator==(const CloudSpec&, const CloudSpec&) = default;
};

/// Atom positions of one random realization, in lambda-bar.
struct AtomConfiguration {
    std::vector<Vec3> positions;
    std::uint64_t seed = 0;
    CloudSpec spec;

    std::size_t size() const noexcept { return positions.size(); }
    bool empty() const noexcept { return positions.empty(); }

    /// Wraps explicit positions; `spec` keeps its defaults with
    /// atom_count set.
    static AtomConfiguration from_positions(std::vector<Vec3> positions)
    {
        AtomConfiguration config;
        config.spec.atom_count = positions.size();
        config.spec.min_separation = 0.0;
        config.positions = std::move(positions);
        return config;
    }
};

struct SamplingLimits {
    std::size_t max_attempts_per_atom = 100000;
};

namespace detail {

inline Vec3 draw_in_shape(const CloudSpec& spec, Rng& rng)
{
    switch (spec.shape) {
    case CloudShape::UniformSphere: {
        const double r2 = spec.radius * spec.radius;
        for (;;) {
            Vec3 p(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
            p *= spec.radius;
            if (p.squaredNorm() <= r2) {
                return p;
            }
        }
    }
    case CloudShape::GaussianSphere: {
        const double cutoff = gaussian_truncation * spec.radius;
        for (;;) {
            const double x = rng.normal();
            const double y = rng.normal();
            const double z = rng.normal();
            Vec3 p(x, y, z);
            p *= spec.radius;
            if (p.norm() <= cutoff) {
                return p;
            }
        }
    }
    case CloudShape::Cylinder: {
        for (;;) {
            const double x = rng.uniform(-1.0, 1.0);
            const double y = rng.uniform(-1.0, 1.0);
            if (x * x + y * y <= 1.0) {
                const double z = rng.uniform(-0.5, 0.5) * spec.length;
                return Vec3(x * spec.radius, y * spec.radius, z);
            }
        }
    }
    }
    throw InvalidArgument("unknown cloud shape");
}

} // namespace detail

/// Draws one random configuration of `spec`.
///
/// Atoms are placed one at a time; a candidate closer than `min_separation`
/// to an accepted atom is redrawn. The result is a pure function of
/// (spec, seed). Throws SamplingError when an atom cannot be placed within
/// `limits.max_attempts_per_atom` draws.
inline AtomConfiguration sample_configuration(const CloudSpec& spec, std::uint64_t seed,
                                              const SamplingLimits& limits = {})
{
    spec.validate();
    const std::size_t n = spec.resolved_atom_count();

    AtomConfiguration config;
    config.seed = seed;
    config.spec = spec;
    config.positions.reserve(n);

    Rng rng(seed);
    const double min_sq = spec.min_separation * spec.min_separation;
    for (std::size_t i = 0; i < n; ++i) {
        bool placed = false;
        for (std::size_t attempt = 0; attempt < limits.max_attempts_per_atom; ++attempt) {
            const Vec3 candidate = detail::draw_in_shape(spec, rng);
            bool clear = true;
            if (min_sq > 0.0) {
                for (const Vec3& p : config.positions) {
                    if ((p - candidate).squaredNorm() < min_sq) {
                        clear = false;
                        break;
                    }
                }
            }
            if (clear) {
                config.positions.push_back(candidate);
                placed = true;
                break;
            }
        }
        if (!placed) {
            std::ostringstream msg;
            msg << "could not place atom " << i << " of " << n << " at minimum separation "
                << spec.min_separation << " after " << limits.max_attempts_per_atom
                << " attempts (density too high for the exclusion radius)";
            throw SamplingError(msg.str());
        }
    }
    return config;
}

struct ConfigurationReport {
    std::size_t atom_count = 0;
    /// +infinity when there are fewer than two atoms.
    double min_pair_distance = std::numeric_limits<double>::infinity();
    double bounding_radius = 0.0;
    bool degenerate = false;
    bool inside_shape = true;
    std::vector<std::pair<std::size_t, std::size_t>> coincident_pairs;
};

/// Reports pair-distance and extent statistics; never throws.
inline ConfigurationReport validate_configuration(const AtomConfiguration& config,
                                                  double coincidence_tolerance = 1e-12)
{
    ConfigurationReport report;
    report.atom_count = config.size();
    const auto& pos = config.positions;
    for (std::size_t a = 0; a < pos.size(); ++a) {
        report.bounding_radius = std::max(report.bounding_radius, pos[a].norm());
        if (!config.spec.contains(pos[a])) {
            report.inside_shape = false;
        }
        for (std::size_t b = a + 1; b < pos.size(); ++b) {
            const double d = (pos[a] - pos[b]).norm();
            report.min_pair_distance = std::min(report.min_pair_distance, d);
            if (d <= coincidence_tolerance) {
                report.degenerate = true;
                report.coincident_pairs.emplace_back(a, b);
            }
        }
    }
    return report;
}

/// Writes a configuration as a whitespace-separated x y z table with a
/// '#' header carrying the cloud spec and seed.
inline void write_configuration(std::ostream& out, const AtomConfiguration& config)
{
    using detail::format_double;
    const CloudSpec& s = config.spec;
    out << "# cdsim atom configuration\n";
    out << "# shape=" << to_string(s.shape) << " radius=" << format_double(s.radius)
        << " length=" << format_double(s.length) << " density=" << format_double(s.density)
        << " min_separation=" << format_double(s.min_separation)
        << " atom_count=" << config.size() << " seed=" << config.seed << "\n";
    out << "# columns: x y z [lambdabar]\n";
    for (const Vec3& p : config.positions) {
        out << format_double(p.x()) << ' ' << format_double(p.y()) << ' ' << format_double(p.z())
            << '\n';
    }
}

inline AtomConfiguration read_configuration(std::istream& in)
{
    AtomConfiguration config;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    std::optional<std::size_t> declared;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        if (line[0] == '#') {
            std::istringstream fields(line.substr(1));
            std::string token;
            while (fields >> token) {
                const auto eq = token.find('=');
                if (eq == std::string::npos) {
                    continue;
                }
                const std::string key = token.substr(0, eq);
                const std::string value = token.substr(eq + 1);
                have_header = true;
                if (key == "shape") config.spec.shape = parse_cloud_shape(value);
                else if (key == "radius") config.spec.radius = detail::parse_double(value);
                else if (key == "length") config.spec.length = detail::parse_double(value);
                else if (key == "density") config.spec.density = detail::parse_double(value);
                else if (key == "min_separation") config.spec.min_separation = detail::parse_double(value);
                else if (key == "atom_count") declared = detail::parse_u64(value);
                else if (key == "seed") config.seed = detail::parse_u64(value);
            }
            continue;
        }
        std::istringstream row(line);
        std::string x, y, z, extra;
        if (!(row >> x >> y >> z) || (row >> extra)) {
            throw InvalidArgument("configuration table line " + std::to_string(line_no)
                                  + ": expected three columns");
        }
        config.positions.emplace_back(detail::parse_double(x), detail::parse_double(y),
                                      detail::parse_double(z));
    }
    if (!have_header) {
        throw InvalidArgument("configuration table has no header");
    }
    if (declared && *declared != config.positions.size()) {
        throw InvalidArgument("configuration table declares " + std::to_string(*declared)
                              + " atoms but has " + std::to_string(config.positions.size()));
    }
    config.spec.atom_count = config.positions.size();
    return config;
}

} // namespace cdsim
