#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cdsim/error.hpp"
#include "cdsim/geometry.hpp"
#include "cdsim/kernel.hpp"
#include "cdsim/montecarlo.hpp"
#include "cdsim/rng.hpp"
#include "cdsim/solver.hpp"
#include "cdsim/statistics.hpp"
#include "cdsim/units.hpp"

namespace cdsim {

// ---------------------------------------------------------------------------
// Far-field amplitudes
// ---------------------------------------------------------------------------

/// Detection channel of the differential cross section.
enum class Channel {
    /// Analyzer with the incident helicity about the outgoing direction (H||H).
    HelicityPreserving,
    /// Opposite helicity (H-perp-H).
    HelicityFlipping,
    /// Sum over both transverse analyzer polarizations.
    Total,
};

inline std::string_view to_string(Channel c)
{
    switch (c) {
    case Channel::HelicityPreserving: return "hh";
    case Channel::HelicityFlipping: return "hperp";
    case Channel::Total: return "total";
    }
    return "unknown";
}

/// +1 or -1 when the wave is circularly polarized in the helicity basis of
/// its direction; throws otherwise.
inline int helicity_of(const IncidentWave& wave, double tolerance = 1e-9)
{
    const PolarizationBasis basis = helicity_basis(wave.direction);
    for (int h = 0; h < 2; ++h) {
        if (std::abs(std::abs(basis.vectors[h].dot(wave.polarization)) - 1.0) < tolerance) {
            return h == 0 ? +1 : -1;
        }
    }
    throw InvalidArgument("helicity channels require circularly polarized incident light");
}

/// P(k') = sum_a u_a exp(-i k'.r_a) for every column k' of `directions`
/// (3 x M unit vectors). Result is 3 x M.
inline Eigen::MatrixXcd radiated_moments(const Eigen::Ref<const Eigen::VectorXcd>& u,
                                         const AtomConfiguration& config,
                                         const Eigen::Ref<const Eigen::Matrix3Xd>& directions,
                                         const Vec3& origin = Vec3::Zero())
{
    const auto n = static_cast<Eigen::Index>(config.size());
    if (u.size() != 3 * n) {
        throw InvalidArgument("radiated_moments: amplitude vector has wrong dimension");
    }
    Eigen::MatrixX3d pos(n, 3);
    for (Eigen::Index a = 0; a < n; ++a) {
        pos.row(a) = (config.positions[static_cast<std::size_t>(a)] - origin).transpose();
    }
    const Eigen::MatrixXd dots = pos * directions;
    Eigen::MatrixXcd phases(n, directions.cols());
    for (Eigen::Index j = 0; j < phases.cols(); ++j) {
        for (Eigen::Index a = 0; a < n; ++a) {
            const double d = dots(a, j);
            phases(a, j) = complex(std::cos(d), -std::sin(d));
        }
    }
    const Eigen::Map<const Eigen::Matrix<complex, 3, Eigen::Dynamic>> um(u.data(), 3, n);
    return um * phases;
}

/// Scattering amplitude f(k', e') = -(3/4) e'* . P(k'); |f|^2 is dsigma/dOmega
/// in lambdabar^2/sr.
inline complex scattering_amplitude(const Eigen::Vector3cd& moment, const CVec3& analyzer)
{
    return -units::amplitude_prefactor * analyzer.dot(moment);
}

/// dsigma/dOmega from a radiated moment for one outgoing direction.
inline double channel_cross_section(const Eigen::Vector3cd& moment, const Vec3& outgoing,
                                    Channel channel, int incident_helicity)
{
    constexpr double c2 = units::amplitude_prefactor * units::amplitude_prefactor;
    switch (channel) {
    case Channel::Total: {
        const complex along = moment.cwiseProduct(outgoing.cast<complex>()).sum();
        return c2 * std::max(0.0, moment.squaredNorm() - std::norm(along));
    }
    case Channel::HelicityPreserving:
    case Channel::HelicityFlipping: {
        const PolarizationBasis basis = helicity_basis(outgoing);
        const bool same = channel == Channel::HelicityPreserving;
        const int index = (incident_helicity > 0) == same ? 0 : 1;
        return std::norm(scattering_amplitude(moment, basis.vectors[index]));
    }
    }
    return 0.0;
}

/// Outgoing direction, channel, and (optionally) an explicit analyzer that
/// overrides the channel.
struct ScatteringGeometry {
    IncidentWave incident;
    Vec3 outgoing = Vec3::UnitZ();
    Channel channel = Channel::Total;
    std::optional<CVec3> analyzer;
};

inline double differential_cross_section(const SteadyStateAmplitudes& amplitudes,
                                         const AtomConfiguration& config,
                                         const ScatteringGeometry& geometry)
{
    const Vec3 k_out = checked_unit(geometry.outgoing, "differential_cross_section");
    const Eigen::Vector3cd moment = radiated_moments(amplitudes.u, config, k_out);
    if (geometry.analyzer) {
        const CVec3 e = *geometry.analyzer;
        if (std::abs(e.cwiseProduct(k_out.cast<complex>()).sum()) > 1e-10 * e.norm()) {
            throw InvalidArgument("analyzer polarization is not transverse to the outgoing direction");
        }
        return std::norm(scattering_amplitude(moment, e.normalized()));
    }
    const int h = geometry.channel == Channel::Total ? +1 : helicity_of(geometry.incident);
    return channel_cross_section(moment, k_out, geometry.channel, h);
}

/// Forward elastic amplitude f(k -> k, e -> e) = -(3/4) s^H u.
inline complex forward_amplitude(const SteadyStateAmplitudes& amplitudes,
                                 const AtomConfiguration& config, const IncidentWave& wave)
{
    const Eigen::VectorXcd s = incident_vector(config, wave);
    return -units::amplitude_prefactor * s.dot(amplitudes.u);
}

/// Extinction (total) cross section from the optical theorem,
/// sigma = 4 pi Im f(forward) in lambdabar^2.
inline double total_cross_section_optical_theorem(const SteadyStateAmplitudes& amplitudes,
                                                  const AtomConfiguration& config,
                                                  const IncidentWave& wave)
{
    return 4.0 * pi * forward_amplitude(amplitudes, config, wave).imag();
}

// ---------------------------------------------------------------------------
// Angular quadrature
// ---------------------------------------------------------------------------

struct GaussLegendreRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

/// n-point Gauss-Legendre rule on [-1, 1] by Newton iteration on P_n.
inline GaussLegendreRule gauss_legendre(std::size_t n)
{
    if (n == 0) {
        throw InvalidArgument("gauss_legendre: order must be positive");
    }
    GaussLegendreRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    const double nd = static_cast<double>(n);
    for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
        double x = std::cos(pi * (static_cast<double>(i) + 0.75) / (nd + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0;
            double p1 = x;
            for (std::size_t k = 2; k <= n; ++k) {
                const double kd = static_cast<double>(k);
                const double p2 = ((2.0 * kd - 1.0) * x * p1 - (kd - 1.0) * p0) / kd;
                p0 = p1;
                p1 = p2;
            }
            if (n == 1) {
                p1 = x;
                p0 = 1.0;
            }
            dp = nd * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) {
                break;
            }
        }
        if (n == 1) {
            x = 0.0;
            dp = 1.0;
        }
        rule.nodes[i] = -x;
        rule.nodes[n - 1 - i] = x;
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.weights[i] = w;
        rule.weights[n - 1 - i] = w;
    }
    return rule;
}

struct QuadratureOptions {
    std::size_t n_theta = 64;
    std::size_t n_phi = 128;
    /// Relative difference between the rule and its doubled-order rule
    /// above which the result counts as not converged.
    double tolerance = 1e-6;
    /// Raise the orders to resolve the angular bandwidth of the cloud.
    bool auto_scale = true;
    bool check_convergence = true;
    bool throw_on_failure = true;
};

struct QuadratureResult {
    double value = 0.0;
    /// |sigma(2 n) - sigma(n)| / sigma(2 n); 0 when not checked.
    double error_estimate = 0.0;
    std::size_t n_theta = 0;
    std::size_t n_phi = 0;
    bool converged = true;
};

namespace detail {

inline double integrate_total_channel(const Eigen::VectorXcd& u, const AtomConfiguration& config,
                                      const Vec3& origin, std::size_t n_theta, std::size_t n_phi)
{
    const GaussLegendreRule rule = gauss_legendre(n_theta);
    Eigen::Matrix3Xd dirs(3, static_cast<Eigen::Index>(n_phi));
    double total = 0.0;
    for (std::size_t i = 0; i < n_theta; ++i) {
        const double c = rule.nodes[i];
        const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
        for (std::size_t j = 0; j < n_phi; ++j) {
            const double phi = 2.0 * pi * static_cast<double>(j) / static_cast<double>(n_phi);
            dirs.col(static_cast<Eigen::Index>(j)) = Vec3(s * std::cos(phi), s * std::sin(phi), c);
        }
        const Eigen::MatrixXcd p = radiated_moments(u, config, dirs, origin);
        double ring = 0.0;
        for (Eigen::Index j = 0; j < dirs.cols(); ++j) {
            ring += channel_cross_section(p.col(j), dirs.col(j), Channel::Total, +1);
        }
        total += rule.weights[i] * ring * (2.0 * pi / static_cast<double>(n_phi));
    }
    return total;
}

} // namespace detail

/// Total scattering cross section by integrating dsigma/dOmega (both
/// polarizations) over the sphere: Gauss-Legendre in cos(theta) times the
/// trapezoid rule in phi, with an order-doubling convergence check.
inline QuadratureResult total_cross_section_quadrature(const SteadyStateAmplitudes& amplitudes,
                                                       const AtomConfiguration& config,
                                                       const QuadratureOptions& options = {})
{
    if (options.n_theta == 0 || options.n_phi == 0) {
        throw InvalidArgument("quadrature orders must be positive");
    }
    // |P|^2 is translation invariant; centering minimizes its bandwidth.
    Vec3 origin = Vec3::Zero();
    for (const Vec3& p : config.positions) {
        origin += p;
    }
    if (!config.empty()) {
        origin /= static_cast<double>(config.size());
    }
    QuadratureResult result;
    result.n_theta = options.n_theta;
    result.n_phi = options.n_phi;
    if (options.auto_scale) {
        double extent = 0.0;
        for (const Vec3& p : config.positions) {
            extent = std::max(extent, (p - origin).norm());
        }
        const auto band = static_cast<std::size_t>(std::ceil(extent));
        result.n_theta = std::max(result.n_theta, band + 20);
        result.n_phi = std::max(result.n_phi, 2 * band + 40);
    }
    result.value =
        detail::integrate_total_channel(amplitudes.u, config, origin, result.n_theta, result.n_phi);
    if (options.check_convergence) {
        const double refined = detail::integrate_total_channel(
            amplitudes.u, config, origin, 2 * result.n_theta, 2 * result.n_phi);
        result.error_estimate =
            refined != 0.0 ? std::abs(refined - result.value) / std::abs(refined) : 0.0;
        result.value = refined;
        result.n_theta *= 2;
        result.n_phi *= 2;
        result.converged = result.error_estimate <= options.tolerance;
        if (!result.converged && options.throw_on_failure) {
            throw ConvergenceError("angular quadrature did not converge (relative change "
                                       + detail::format_double(result.error_estimate) + ")",
                                   result.error_estimate);
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Near-zone fields
// ---------------------------------------------------------------------------

enum class FieldComponent { Scattered, Total };

/// Field projected on each analyzer of `basis` at `point`: the incident
/// plane wave (e_alpha* . e) exp(i k.r) plus the radiated field of the
/// dipoles, (3/4) sum_(a,mu) P(alpha; a, mu) u_(a mu). The radiated part keeps
/// the 1/rho term of the propagator only.
inline std::array<complex, 2> field_amplitudes(const Eigen::VectorXcd& u,
                                               const AtomConfiguration& config,
                                               const IncidentWave& wave, const Vec3& point,
                                               const PolarizationBasis& basis,
                                               FieldComponent component = FieldComponent::Total)
{
    std::array<complex, 2> out{};
    std::array<CVec3, 2> analyzers{basis.vectors[0].conjugate(), basis.vectors[1].conjugate()};
    for (std::size_t a = 0; a < config.size(); ++a) {
        const Vec3 d = point - config.positions[a];
        const double rho = d.norm();
        if (!(rho > 1e-12)) {
            throw SingularGeometry("field point coincides with an atom");
        }
        const Vec3 n = d / rho;
        const Eigen::Vector3cd ua = u.segment<3>(3 * static_cast<Eigen::Index>(a));
        const complex un = ua.cwiseProduct(n.cast<complex>()).sum();
        const complex factor = -units::amplitude_prefactor * std::exp(I * rho) / rho;
        for (int alpha = 0; alpha < 2; ++alpha) {
            const complex an = analyzers[alpha].cwiseProduct(n.cast<complex>()).sum();
            out[alpha] += factor * (analyzers[alpha].cwiseProduct(ua).sum() - an * un);
        }
    }
    if (component == FieldComponent::Total) {
        const complex phase = std::exp(I * wave.direction.dot(point));
        for (int alpha = 0; alpha < 2; ++alpha) {
            out[alpha] += analyzers[alpha].cwiseProduct(wave.polarization).sum() * phase;
        }
    }
    return out;
}

/// |E . analyzer*|^2 for one configuration.
inline double speckle_intensity(const SteadyStateAmplitudes& amplitudes,
                                const AtomConfiguration& config, const IncidentWave& wave,
                                const Vec3& point, const CVec3& analyzer,
                                FieldComponent component = FieldComponent::Scattered)
{
    const PolarizationBasis basis{wave.direction, {analyzer.normalized(), CVec3::Zero()}};
    return std::norm(field_amplitudes(amplitudes.u, config, wave, point, basis, component)[0]);
}

/// Rectangular grid in the plane z = const.
struct FieldPlane {
    double z = 0.0;
    double x_min = -1.0;
    double x_max = 1.0;
    std::size_t nx = 3;
    double y_min = 0.0;
    double y_max = 0.0;
    std::size_t ny = 1;

    void validate() const
    {
        if (nx == 0 || ny == 0) {
            throw InvalidArgument("field plane needs at least one point per axis");
        }
        if (!(x_max >= x_min) || !(y_max >= y_min) || !std::isfinite(z)) {
            throw InvalidArgument("field plane extents are invalid");
        }
    }

    std::vector<Vec3> points() const
    {
        validate();
        std::vector<Vec3> out;
        out.reserve(nx * ny);
        auto coord = [](double lo, double hi, std::size_t n, std::size_t i) {
            return n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
        };
        for (std::size_t j = 0; j < ny; ++j) {
            for (std::size_t i = 0; i < nx; ++i) {
                out.emplace_back(coord(x_min, x_max, nx, i), coord(y_min, y_max, ny, j), z);
            }
        }
        return out;
    }
};

/// Values recorded per grid point and configuration.
inline constexpr std::size_t field_map_values_per_point = 4;

/// Per-configuration field-map sample: for every point Re E, Im E, |E|^2
/// along the incident polarization and |E|^2 along the orthogonal analyzer,
/// total field. Points that coincide with an atom give NaN (skipped).
inline std::vector<double> field_map_sample(const SteadyStateAmplitudes& amplitudes,
                                            const AtomConfiguration& config,
                                            const IncidentWave& wave,
                                            std::span<const Vec3> points)
{
    const PolarizationBasis basis = basis_from_polarization(wave.direction, wave.polarization);
    std::vector<double> out;
    out.reserve(field_map_values_per_point * points.size());
    for (const Vec3& p : points) {
        try {
            const auto e = field_amplitudes(amplitudes.u, config, wave, p, basis);
            out.insert(out.end(), {e[0].real(), e[0].imag(), std::norm(e[0]), std::norm(e[1])});
        } catch (const SingularGeometry&) {
            out.insert(out.end(), field_map_values_per_point, std::nan(""));
        }
    }
    return out;
}

/// Configuration-averaged field on a plane.
struct FieldMap {
    FieldPlane plane;
    std::vector<Vec3> points;
    /// <E> along the incident polarization.
    std::vector<complex> coherent_amplitude;
    /// |<E>|^2.
    std::vector<double> coherent_intensity;
    /// |<E>|^2 minus its finite-sample bias var(E)/n.
    std::vector<double> coherent_intensity_unbiased;
    /// <|E|^2> along the incident polarization.
    std::vector<double> mean_intensity;
    /// <|E|^2> along the orthogonal analyzer.
    std::vector<double> cross_intensity;
    /// Configurations contributing to each point.
    std::vector<std::uint64_t> counts;
    /// Points skipped in at least one configuration.
    std::vector<bool> flagged;
    std::uint64_t n_configs = 0;
    Accumulator statistics;
};

inline FieldMap assemble_field_map(const FieldPlane& plane, const Accumulator& acc)
{
    FieldMap map;
    map.plane = plane;
    map.points = plane.points();
    const std::size_t np = map.points.size();
    if (acc.outputs() != field_map_values_per_point * np) {
        throw InvalidArgument("assemble_field_map: statistics do not match the plane");
    }
    map.n_configs = acc.samples();
    map.statistics = acc;
    for (std::size_t p = 0; p < np; ++p) {
        const std::size_t k = field_map_values_per_point * p;
        const complex m(acc.mean(k), acc.mean(k + 1));
        const auto n = acc.count(k);
        map.coherent_amplitude.push_back(m);
        map.coherent_intensity.push_back(std::norm(m));
        const double bias =
            n > 1 ? (acc.variance(k) + acc.variance(k + 1)) / static_cast<double>(n) : 0.0;
        map.coherent_intensity_unbiased.push_back(std::norm(m) - bias);
        map.mean_intensity.push_back(acc.mean(k + 2));
        map.cross_intensity.push_back(acc.mean(k + 3));
        map.counts.push_back(n);
        map.flagged.push_back(n < acc.samples());
    }
    return map;
}

/// Coherent (average-then-square) field map over explicit configurations.
inline FieldMap coherent_field_map(std::span<const AtomConfiguration> configs,
                                   const IncidentWave& wave, const FieldPlane& plane)
{
    wave.validate();
    const std::vector<Vec3> points = plane.points();
    Accumulator acc(field_map_values_per_point * points.size());
    for (const AtomConfiguration& config : configs) {
        SteadyStateAmplitudes amp;
        amp.detuning = wave.detuning;
        if (!config.empty()) {
            amp = solve_resolvent(build_hamiltonian(config), wave.detuning,
                                  incident_vector(config, wave));
        }
        acc.add(field_map_sample(amp, config, wave, points));
    }
    return assemble_field_map(plane, acc);
}

/// Disk in the observation plane.
struct ShadowRegion {
    double center_x = 0.0;
    double center_y = 0.0;
    double radius = 1.0;

    bool contains(const Vec3& p) const
    {
        return std::hypot(p.x() - center_x, p.y() - center_y) <= radius;
    }
};

struct TransmissionResult {
    double value = 0.0;
    /// Batch-means standard error.
    double sem = 0.0;
    std::size_t n_points = 0;
};

/// Mean coherent intensity over the region, relative to the unit incident
/// intensity.
inline TransmissionResult transmission_coefficient(const FieldMap& map, const ShadowRegion& region,
                                                   bool unbiased = true)
{
    std::vector<std::size_t> inside;
    for (std::size_t p = 0; p < map.points.size(); ++p) {
        if (region.contains(map.points[p]) && map.counts[p] > 0) {
            inside.push_back(p);
        }
    }
    if (inside.empty()) {
        throw InvalidArgument("transmission region contains no field-map points");
    }
    TransmissionResult out;
    out.n_points = inside.size();
    const auto& source = unbiased ? map.coherent_intensity_unbiased : map.coherent_intensity;
    for (const std::size_t p : inside) {
        out.value += source[p];
    }
    out.value /= static_cast<double>(inside.size());
    out.sem = batch_sem(map.statistics, [&](const std::vector<double>& m) {
        double t = 0.0;
        for (const std::size_t p : inside) {
            const std::size_t k = field_map_values_per_point * p;
            t += m[k] * m[k] + m[k + 1] * m[k + 1];
        }
        return t / static_cast<double>(inside.size());
    });
    return out;
}

// ---------------------------------------------------------------------------
// Ensemble scans
// ---------------------------------------------------------------------------

struct EnsembleSettings {
    std::uint64_t n_configs = 1;
    std::uint64_t master_seed = 0;
    unsigned workers = 1;
    std::function<void(std::uint64_t, std::uint64_t)> progress;
};

namespace detail {

inline EnsembleJob make_job(const CloudSpec& cloud, std::string task_id, EnsembleTask task,
                            std::size_t n_outputs, const EnsembleSettings& settings)
{
    EnsembleJob job;
    job.cloud = cloud;
    job.task_id = std::move(task_id);
    job.task = std::move(task);
    job.n_outputs = n_outputs;
    job.n_configs = settings.n_configs;
    job.master_seed = settings.master_seed;
    job.workers = settings.workers;
    job.progress = settings.progress;
    return job;
}

inline std::string join_doubles(std::span<const double> values)
{
    std::string s;
    for (const double v : values) {
        s += format_double(v);
        s += ',';
    }
    return s;
}

/// Incident directions of the views of one configuration: +z for a single
/// view, otherwise isotropic random directions seeded by the configuration.
inline std::vector<Vec3> view_directions(const AtomConfiguration& config, std::size_t views,
                                         const Vec3& fixed)
{
    if (views <= 1) {
        return {fixed};
    }
    Rng rng(mix64(config.seed ^ 0x5bd1e9955bd1e995ULL));
    std::vector<Vec3> out;
    for (std::size_t v = 0; v < views; ++v) {
        const double c = rng.uniform(-1.0, 1.0);
        const double phi = rng.uniform(0.0, 2.0 * pi);
        const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
        out.emplace_back(s * std::cos(phi), s * std::sin(phi), c);
    }
    return out;
}

/// Unit vector at polar angle theta and azimuth phi about k, in the
/// spherical frame of k.
inline Vec3 direction_about(const Vec3& k, double theta, double phi)
{
    const auto [e1, e2] = transverse_frame(k);
    return std::sin(theta) * (std::cos(phi) * e1 + std::sin(phi) * e2) + std::cos(theta) * k;
}

} // namespace detail

struct AngularScanOptions {
    /// Scattering angles measured from the incident direction [rad].
    std::vector<double> theta;
    /// Detection azimuths averaged per angle.
    std::size_t n_azimuth = 16;
    /// Incident directions per configuration (isotropic clouds only). A
    /// single view uses `direction`.
    std::size_t views = 1;
    Vec3 direction = Vec3::UnitZ();
    int helicity = +1;
    double detuning = 0.0;

    void validate(const CloudSpec& cloud) const
    {
        if (theta.empty()) {
            throw InvalidArgument("angular grid is empty");
        }
        for (const double t : theta) {
            if (!(t >= 0.0 && t <= pi)) {
                throw InvalidArgument("scattering angles must lie in [0, pi]");
            }
        }
        if (n_azimuth == 0 || views == 0) {
            throw InvalidArgument("n_azimuth and views must be positive");
        }
        if (views > 1 && cloud.shape == CloudShape::Cylinder) {
            throw InvalidArgument("random incident views require a spherically symmetric cloud");
        }
        if (helicity != 1 && helicity != -1) {
            throw InvalidArgument("helicity must be +1 or -1");
        }
        checked_unit(direction, "angular scan direction");
    }
};

/// H||H and H-perp-H differential cross sections at every angle of
/// `options.theta` for one configuration, averaged over azimuths and views.
/// Layout: [hh(theta_0..), hperp(theta_0..)].
inline std::vector<double> angular_sample(const AtomConfiguration& config,
                                          const AngularScanOptions& options)
{
    const std::size_t nt = options.theta.size();
    std::vector<double> out(2 * nt, 0.0);
    const std::vector<Vec3> views =
        detail::view_directions(config, options.views, options.direction.normalized());
    if (config.empty()) {
        return out;
    }
    const EffectiveHamiltonian h = build_hamiltonian(config);
    Eigen::MatrixXcd rhs(h.dimension(), static_cast<Eigen::Index>(views.size()));
    for (std::size_t v = 0; v < views.size(); ++v) {
        rhs.col(static_cast<Eigen::Index>(v)) = incident_vector(
            config, IncidentWave::circular(views[v], options.helicity, options.detuning));
    }
    const ResolventFactorization lu(h, options.detuning);
    const Eigen::MatrixXcd u = lu.solve_many(rhs);

    const std::size_t nphi = options.n_azimuth;
    Eigen::Matrix3Xd dirs(3, static_cast<Eigen::Index>(nt * nphi));
    const double weight = 1.0 / static_cast<double>(nphi * views.size());
    for (std::size_t v = 0; v < views.size(); ++v) {
        for (std::size_t i = 0; i < nt; ++i) {
            for (std::size_t j = 0; j < nphi; ++j) {
                const double phi = 2.0 * pi * static_cast<double>(j) / static_cast<double>(nphi);
                dirs.col(static_cast<Eigen::Index>(i * nphi + j)) =
                    detail::direction_about(views[v], options.theta[i], phi);
            }
        }
        const Eigen::MatrixXcd p = radiated_moments(u.col(static_cast<Eigen::Index>(v)), config, dirs);
        for (std::size_t i = 0; i < nt; ++i) {
            for (std::size_t j = 0; j < nphi; ++j) {
                const auto c = static_cast<Eigen::Index>(i * nphi + j);
                out[i] += weight * channel_cross_section(p.col(c), dirs.col(c),
                                                         Channel::HelicityPreserving,
                                                         options.helicity);
                out[nt + i] += weight * channel_cross_section(p.col(c), dirs.col(c),
                                                              Channel::HelicityFlipping,
                                                              options.helicity);
            }
        }
    }
    return out;
}

struct AngularDistribution {
    std::vector<double> theta;
    std::vector<double> hh_mean, hh_sem;
    std::vector<double> hperp_mean, hperp_sem;
    std::uint64_t n_configs = 0;
    std::vector<ConfigFailure> failures;
    Accumulator statistics;
};

inline EnsembleJob make_angular_job(const CloudSpec& cloud, const AngularScanOptions& options,
                                    const EnsembleSettings& settings)
{
    options.validate(cloud);
    std::string id = "angular|" + detail::join_doubles(options.theta) + '|'
                   + std::to_string(options.n_azimuth) + '|' + std::to_string(options.views) + '|'
                   + std::to_string(options.helicity) + '|' + detail::format_double(options.detuning)
                   + '|' + detail::format_double(options.direction.x()) + ','
                   + detail::format_double(options.direction.y()) + ','
                   + detail::format_double(options.direction.z());
    return detail::make_job(
        cloud, std::move(id),
        [options](const AtomConfiguration& config, std::uint64_t) {
            return angular_sample(config, options);
        },
        2 * options.theta.size(), settings);
}

inline AngularDistribution assemble_angular(const std::vector<double>& theta, const Statistics& st)
{
    AngularDistribution d;
    d.theta = theta;
    const std::size_t nt = theta.size();
    for (std::size_t i = 0; i < nt; ++i) {
        d.hh_mean.push_back(st.mean[i]);
        d.hh_sem.push_back(st.sem[i]);
        d.hperp_mean.push_back(st.mean[nt + i]);
        d.hperp_sem.push_back(st.sem[nt + i]);
    }
    d.n_configs = st.n_configs;
    d.failures = st.failures;
    d.statistics = st.accumulator;
    return d;
}

/// Configuration-averaged angular distribution in both helicity channels.
inline AngularDistribution angular_scan(const CloudSpec& cloud, const AngularScanOptions& options,
                                        const EnsembleSettings& settings)
{
    return assemble_angular(options.theta, run_ensemble(make_angular_job(cloud, options, settings)));
}

inline EnsembleJob make_field_map_job(const CloudSpec& cloud, const IncidentWave& wave,
                                      const FieldPlane& plane, const EnsembleSettings& settings)
{
    wave.validate();
    const std::vector<Vec3> points = plane.points();
    std::string id = "fieldmap|" + detail::format_double(plane.z) + '|'
                   + detail::format_double(plane.x_min) + ',' + detail::format_double(plane.x_max)
                   + ',' + std::to_string(plane.nx) + '|' + detail::format_double(plane.y_min) + ','
                   + detail::format_double(plane.y_max) + ',' + std::to_string(plane.ny) + '|';
    for (int i = 0; i < 3; ++i) {
        id += detail::format_double(wave.direction(i)) + ',' + detail::format_double(wave.polarization(i).real())
            + ',' + detail::format_double(wave.polarization(i).imag()) + ';';
    }
    id += detail::format_double(wave.detuning);
    return detail::make_job(
        cloud, std::move(id),
        [wave, points](const AtomConfiguration& config, std::uint64_t) {
            SteadyStateAmplitudes amp;
            amp.detuning = wave.detuning;
            if (!config.empty()) {
                amp = solve_resolvent(build_hamiltonian(config), wave.detuning,
                                      incident_vector(config, wave));
            }
            return field_map_sample(amp, config, wave, points);
        },
        field_map_values_per_point * points.size(), settings);
}

/// Coherent field map averaged over an ensemble of random configurations.
inline FieldMap ensemble_field_map(const CloudSpec& cloud, const IncidentWave& wave,
                                   const FieldPlane& plane, const EnsembleSettings& settings)
{
    const Statistics st = run_ensemble(make_field_map_job(cloud, wave, plane, settings));
    return assemble_field_map(plane, st.accumulator);
}

/// Default backscattering grid: 1 degree steps from 90 to 170 degrees,
/// 0.25 degree steps to 179 degrees, then 0.25 mrad steps up to pi.
inline std::vector<double> default_cbs_grid()
{
    constexpr double deg = pi / 180.0;
    std::vector<double> grid;
    for (int d = 90; d < 170; ++d) {
        grid.push_back(d * deg);
    }
    for (int q = 0; q < 36; ++q) {
        grid.push_back((170.0 + 0.25 * q) * deg);
    }
    const double start = 179.0 * deg;
    const auto steps = static_cast<int>(std::floor((pi - start) / 2.5e-4));
    for (int k = steps; k >= 1; --k) {
        grid.push_back(pi - 2.5e-4 * k);
    }
    grid.push_back(pi);
    return grid;
}

struct CbsOptions {
    AngularScanOptions scan;
    /// Background estimated as the theta-average of the cone over this window.
    double background_min = 150.0 * pi / 180.0;
    double background_max = 175.0 * pi / 180.0;
};

struct ChannelCone {
    Estimate peak;
    Estimate background;
    Estimate enhancement;
};

struct CbsConeResult {
    AngularDistribution distribution;
    ChannelCone hh;
    ChannelCone hperp;
    double background_min = 0.0;
    double background_max = 0.0;
};

namespace detail {

/// Trapezoid weights of the grid points inside [lo, hi], normalized to 1.
inline std::vector<std::pair<std::size_t, double>> window_weights(const std::vector<double>& theta,
                                                                  double lo, double hi)
{
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        if (theta[i] >= lo - 1e-12 && theta[i] <= hi + 1e-12) {
            idx.push_back(i);
        }
    }
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return theta[a] < theta[b]; });
    if (idx.empty()) {
        throw InvalidArgument("background window contains no grid angles");
    }
    std::vector<std::pair<std::size_t, double>> w;
    if (idx.size() == 1) {
        w.emplace_back(idx[0], 1.0);
        return w;
    }
    double total = 0.0;
    for (std::size_t j = 0; j < idx.size(); ++j) {
        const double left = j > 0 ? theta[idx[j]] - theta[idx[j - 1]] : 0.0;
        const double right = j + 1 < idx.size() ? theta[idx[j + 1]] - theta[idx[j]] : 0.0;
        w.emplace_back(idx[j], 0.5 * (left + right));
        total += 0.5 * (left + right);
    }
    for (auto& [i, x] : w) {
        x /= total;
    }
    return w;
}

inline ChannelCone cone_for_channel(const AngularDistribution& d, std::size_t offset,
                                    std::size_t peak_index,
                                    const std::vector<std::pair<std::size_t, double>>& window)
{
    const auto& mean = offset == 0 ? d.hh_mean : d.hperp_mean;
    const auto& sem = offset == 0 ? d.hh_sem : d.hperp_sem;
    ChannelCone c;
    c.peak = {mean[peak_index], sem[peak_index]};
    auto background_of = [&](const std::vector<double>& m) {
        double b = 0.0;
        for (const auto& [i, w] : window) {
            b += w * m[offset + i];
        }
        return b;
    };
    std::vector<double> full(d.statistics.outputs());
    for (std::size_t k = 0; k < full.size(); ++k) {
        full[k] = d.statistics.mean(k);
    }
    c.background.value = background_of(full);
    c.background.sem = batch_sem(d.statistics, background_of);
    c.enhancement.value = c.peak.value / c.background.value;
    c.enhancement.sem = batch_sem(d.statistics, [&](const std::vector<double>& m) {
        return m[offset + peak_index] / background_of(m);
    });
    return c;
}

} // namespace detail

inline CbsConeResult assemble_cbs(const CbsOptions& options, const Statistics& st)
{
    CbsConeResult r;
    r.distribution = assemble_angular(options.scan.theta, st);
    r.background_min = options.background_min;
    r.background_max = options.background_max;
    const auto& theta = options.scan.theta;
    std::optional<std::size_t> peak;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        if (std::abs(theta[i] - pi) < 1e-12) {
            peak = i;
        }
    }
    if (!peak) {
        throw InvalidArgument("CBS grid must contain the exact backscattering angle pi");
    }
    const auto window =
        detail::window_weights(theta, options.background_min, options.background_max);
    r.hh = detail::cone_for_channel(r.distribution, 0, *peak, window);
    r.hperp = detail::cone_for_channel(r.distribution, theta.size(), *peak, window);
    return r;
}

inline EnsembleJob make_cbs_job(const CloudSpec& cloud, const CbsOptions& options,
                                const EnsembleSettings& settings)
{
    if (!(options.background_max > options.background_min)) {
        throw InvalidArgument("background window is empty");
    }
    return make_angular_job(cloud, options.scan, settings);
}

/// Coherent backscattering cone: averaged H||H and H-perp-H cross sections
/// near theta = pi, background over the configured window, and the
/// enhancement factor peak(pi) / background per channel.
inline CbsConeResult cbs_scan(const CloudSpec& cloud, const CbsOptions& options,
                              const EnsembleSettings& settings)
{
    return assemble_cbs(options, run_ensemble(make_cbs_job(cloud, options, settings)));
}

// ---------------------------------------------------------------------------
// Spectra
// ---------------------------------------------------------------------------

enum class SpectrumObservable {
    /// Extinction cross section from the forward amplitude.
    TotalCrossSection,
    /// dsigma/dOmega summed over polarizations at each angle.
    Differential,
    /// H||H and H-perp-H dsigma/dOmega at each angle.
    PolarizationResolved,
};

inline std::string_view to_string(SpectrumObservable o)
{
    switch (o) {
    case SpectrumObservable::TotalCrossSection: return "total";
    case SpectrumObservable::Differential: return "differential";
    case SpectrumObservable::PolarizationResolved: return "polarization";
    }
    return "unknown";
}

struct SpectrumOptions {
    std::vector<double> detunings;
    SpectrumObservable observable = SpectrumObservable::TotalCrossSection;
    /// Scattering angles for the angle-resolved observables [rad].
    std::vector<double> angles;
    std::size_t n_azimuth = 1;
    std::size_t views = 1;
    Vec3 direction = Vec3::UnitZ();
    int helicity = +1;
    SweepOptions sweep;

    void validate(const CloudSpec& cloud) const
    {
        if (detunings.empty()) {
            throw InvalidArgument("detuning grid is empty");
        }
        if (observable != SpectrumObservable::TotalCrossSection && angles.empty()) {
            throw InvalidArgument("angle-resolved spectra need at least one angle");
        }
        if (n_azimuth == 0 || views == 0) {
            throw InvalidArgument("n_azimuth and views must be positive");
        }
        if (views > 1 && cloud.shape == CloudShape::Cylinder) {
            throw InvalidArgument("random incident views require a spherically symmetric cloud");
        }
        if (helicity != 1 && helicity != -1) {
            throw InvalidArgument("helicity must be +1 or -1");
        }
    }

    std::vector<std::string> column_names() const
    {
        std::vector<std::string> names;
        switch (observable) {
        case SpectrumObservable::TotalCrossSection:
            names.push_back("sigma");
            break;
        case SpectrumObservable::Differential:
            for (const double a : angles) {
                names.push_back("dsigma_theta=" + detail::format_double(a));
            }
            break;
        case SpectrumObservable::PolarizationResolved:
            for (const double a : angles) {
                names.push_back("hh_theta=" + detail::format_double(a));
            }
            for (const double a : angles) {
                names.push_back("hperp_theta=" + detail::format_double(a));
            }
            break;
        }
        return names;
    }
};

/// One configuration's spectrum; row-major [detuning][column].
inline std::vector<double> spectrum_sample(const AtomConfiguration& config,
                                           const SpectrumOptions& options)
{
    const std::size_t nd = options.detunings.size();
    const std::size_t ncol = options.column_names().size();
    std::vector<double> out(nd * ncol, 0.0);
    if (config.empty()) {
        return out;
    }
    const std::vector<Vec3> views =
        detail::view_directions(config, options.views, options.direction.normalized());
    const auto nv = static_cast<Eigen::Index>(views.size());
    const EffectiveHamiltonian h = build_hamiltonian(config);
    const Eigen::Index dim = h.dimension();

    Eigen::MatrixXcd rhs(dim, nv);
    for (Eigen::Index v = 0; v < nv; ++v) {
        const Vec3& k = views[static_cast<std::size_t>(v)];
        rhs.col(v) = incident_vector(config, IncidentWave::circular(k, options.helicity));
    }

    // Probe layout per view: forward probe, then 3 Cartesian probes per
    // (angle, azimuth) direction.
    const std::size_t nangle = options.observable == SpectrumObservable::TotalCrossSection
                                 ? 0
                                 : options.angles.size();
    const std::size_t nphi = options.n_azimuth;
    const auto per_view = static_cast<Eigen::Index>(1 + 3 * nangle * nphi);
    Eigen::MatrixXcd probes = Eigen::MatrixXcd::Zero(dim, per_view * nv);
    std::vector<Vec3> outgoing(static_cast<std::size_t>(nv) * nangle * nphi);
    for (Eigen::Index v = 0; v < nv; ++v) {
        const Eigen::Index base = v * per_view;
        probes.col(base) = rhs.col(v).conjugate();
        for (std::size_t i = 0; i < nangle; ++i) {
            for (std::size_t j = 0; j < nphi; ++j) {
                const double phi = 2.0 * pi * static_cast<double>(j) / static_cast<double>(nphi);
                const Vec3 k_out = detail::direction_about(views[static_cast<std::size_t>(v)],
                                                           options.angles[i], phi);
                outgoing[(static_cast<std::size_t>(v) * nangle + i) * nphi + j] = k_out;
                const auto col = base + 1 + static_cast<Eigen::Index>(3 * (i * nphi + j));
                for (std::size_t a = 0; a < config.size(); ++a) {
                    const double d = k_out.dot(config.positions[a]);
                    const complex phase(std::cos(d), -std::sin(d));
                    for (Eigen::Index mu = 0; mu < 3; ++mu) {
                        probes(3 * static_cast<Eigen::Index>(a) + mu, col + mu) = phase;
                    }
                }
            }
        }
    }

    const SweepProjection proj = sweep_projections(h, options.detunings, rhs, probes, options.sweep);
    const double view_weight = 1.0 / static_cast<double>(nv);
    const double dir_weight = view_weight / static_cast<double>(nphi);
    for (std::size_t d = 0; d < nd; ++d) {
        const Eigen::MatrixXcd& vals = proj.values[d];
        double* row = out.data() + d * ncol;
        for (Eigen::Index v = 0; v < nv; ++v) {
            const Eigen::Index base = v * per_view;
            if (options.observable == SpectrumObservable::TotalCrossSection) {
                // sigma = 4 pi Im f, f = -(3/4) s^H u.
                row[0] += view_weight * (-3.0 * pi) * vals(base, v).imag();
                continue;
            }
            for (std::size_t i = 0; i < nangle; ++i) {
                for (std::size_t j = 0; j < nphi; ++j) {
                    const auto col = base + 1 + static_cast<Eigen::Index>(3 * (i * nphi + j));
                    const Eigen::Vector3cd moment = vals.block<3, 1>(col, v);
                    const Vec3& k_out = outgoing[(static_cast<std::size_t>(v) * nangle + i) * nphi + j];
                    if (options.observable == SpectrumObservable::Differential) {
                        row[i] += dir_weight
                                * channel_cross_section(moment, k_out, Channel::Total, options.helicity);
                    } else {
                        row[i] += dir_weight
                                * channel_cross_section(moment, k_out, Channel::HelicityPreserving,
                                                        options.helicity);
                        row[nangle + i] += dir_weight
                                         * channel_cross_section(moment, k_out,
                                                                 Channel::HelicityFlipping,
                                                                 options.helicity);
                    }
                }
            }
        }
    }
    return out;
}

/// One averaged observable at one detuning.
struct ObservableRecord {
    std::string observable;
    std::string unit;
    double detuning = 0.0;
    double mean = 0.0;
    double sem = 0.0;
    std::uint64_t n_configs = 0;
};

struct SpectrumResult {
    std::vector<double> detunings;
    std::vector<std::string> columns;
    /// mean[d][c], sem[d][c].
    std::vector<std::vector<double>> mean;
    std::vector<std::vector<double>> sem;
    std::uint64_t n_configs = 0;
    std::vector<ConfigFailure> failures;

    std::vector<double> column(std::size_t c) const
    {
        std::vector<double> out;
        for (const auto& row : mean) {
            out.push_back(row.at(c));
        }
        return out;
    }

    std::vector<double> column_sem(std::size_t c) const
    {
        std::vector<double> out;
        for (const auto& row : sem) {
            out.push_back(row.at(c));
        }
        return out;
    }

    std::vector<ObservableRecord> records() const
    {
        std::vector<ObservableRecord> out;
        for (std::size_t d = 0; d < detunings.size(); ++d) {
            for (std::size_t c = 0; c < columns.size(); ++c) {
                const bool total = columns[c] == "sigma";
                out.push_back({columns[c], total ? units::area : units::area_per_sr, detunings[d],
                               mean[d][c], sem[d][c], n_configs});
            }
        }
        return out;
    }
};

inline EnsembleJob make_spectrum_job(const CloudSpec& cloud, const SpectrumOptions& options,
                                     const EnsembleSettings& settings)
{
    options.validate(cloud);
    std::string id = "spectrum|" + std::string(to_string(options.observable)) + '|'
                   + detail::join_doubles(options.detunings) + '|'
                   + detail::join_doubles(options.angles) + '|' + std::to_string(options.n_azimuth)
                   + '|' + std::to_string(options.views) + '|' + std::to_string(options.helicity)
                   + '|' + detail::format_double(options.direction.x()) + ','
                   + detail::format_double(options.direction.y()) + ','
                   + detail::format_double(options.direction.z());
    const std::size_t n = options.detunings.size() * options.column_names().size();
    return detail::make_job(
        cloud, std::move(id),
        [options](const AtomConfiguration& config, std::uint64_t) {
            return spectrum_sample(config, options);
        },
        n, settings);
}

inline SpectrumResult assemble_spectrum(const SpectrumOptions& options, const Statistics& st)
{
    SpectrumResult r;
    r.detunings = options.detunings;
    r.columns = options.column_names();
    const std::size_t nc = r.columns.size();
    for (std::size_t d = 0; d < r.detunings.size(); ++d) {
        r.mean.emplace_back(st.mean.begin() + static_cast<std::ptrdiff_t>(d * nc),
                            st.mean.begin() + static_cast<std::ptrdiff_t>((d + 1) * nc));
        r.sem.emplace_back(st.sem.begin() + static_cast<std::ptrdiff_t>(d * nc),
                           st.sem.begin() + static_cast<std::ptrdiff_t>((d + 1) * nc));
    }
    r.n_configs = st.n_configs;
    r.failures = st.failures;
    return r;
}

/// Configuration-averaged spectrum of the chosen observable.
inline SpectrumResult spectrum_scan(const CloudSpec& cloud, const SpectrumOptions& options,
                                    const EnsembleSettings& settings)
{
    return assemble_spectrum(options, run_ensemble(make_spectrum_job(cloud, options, settings)));
}

/// Local maxima of a sampled curve that stand out from the deeper of their
/// two flanking minima (topographic prominence) by more than `threshold`
/// combined standard errors. Returns their indices.
inline std::vector<std::size_t> significant_maxima(std::span<const double> values,
                                                   std::span<const double> sems,
                                                   double threshold = 3.0)
{
    const std::size_t n = values.size();
    std::vector<std::size_t> peaks;
    for (std::size_t i = 0; i < n; ++i) {
        const bool left_ok = i == 0 || values[i] > values[i - 1];
        const bool right_ok = i + 1 == n || values[i] >= values[i + 1];
        if (!(left_ok && right_ok) || i == 0 || i + 1 == n) {
            continue;
        }
        // Walk outwards until a higher point or the boundary; the saddle on
        // each side is the lowest point passed.
        auto saddle = [&](int step) -> std::optional<std::size_t> {
            std::size_t lowest = i;
            for (std::ptrdiff_t j = static_cast<std::ptrdiff_t>(i) + step;
                 j >= 0 && j < static_cast<std::ptrdiff_t>(n); j += step) {
                const auto ju = static_cast<std::size_t>(j);
                if (values[ju] > values[i]) {
                    return lowest;
                }
                if (values[ju] < values[lowest]) {
                    lowest = ju;
                }
            }
            return lowest;
        };
        const std::size_t left = *saddle(-1);
        const std::size_t right = *saddle(+1);
        const std::size_t key = values[left] > values[right] ? left : right;
        const double prominence = values[i] - values[key];
        const double noise = std::hypot(sems.empty() ? 0.0 : sems[i], sems.empty() ? 0.0 : sems[key]);
        if (prominence > threshold * noise && prominence > 0.0) {
            peaks.push_back(i);
        }
    }
    return peaks;
}

} // namespace cdsim
