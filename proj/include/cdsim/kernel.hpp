#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <utility>

#include <Eigen/Core>

#include "cdsim/error.hpp"
#include "cdsim/geometry.hpp"
#include "cdsim/special_functions.hpp"
#include "cdsim/units.hpp"

namespace cdsim {

/// 3x3 dipole-dipole coupling block over Cartesian indices.
using Tensor3 = Eigen::Matrix3cd;

// ---------------------------------------------------------------------------
// Pair kernels
// ---------------------------------------------------------------------------

/// Resonant (polar-approximation) coupling between two atoms separated by
/// `r` (in lambda-bar), in units of gamma:
///
///   (3/4) e^{ikr}/(kr)^3 [ delta (1 - ikr - (kr)^2) - rr (3 - 3ikr - (kr)^2) ]
///
/// The imaginary part tends to -1/2 on the diagonal as r -> 0, so the
/// symmetric two-atom state is superradiant, and the real part has the sign
/// of the static dipole-dipole energy.
inline Tensor3 green_tensor_polar(const Vec3& r)
{
    const double kr = r.norm();
    if (!(kr > 0.0)) {
        throw SingularGeometry("green_tensor_polar: zero separation");
    }
    const Vec3 n = r / kr;
    const complex phase = std::exp(I * kr) * (0.75 * units::decay_rate / (kr * kr * kr));
    const complex transverse = phase * complex(1.0 - kr * kr, -kr);
    const complex longitudinal = phase * complex(3.0 - kr * kr, -3.0 * kr);
    Tensor3 g = transverse * Tensor3::Identity();
    g -= longitudinal * (n * n.transpose()).cast<complex>();
    return g;
}

namespace detail {

struct AuxiliaryPair {
    complex g; // sin x (-i pi + Ci x) - cos x (pi/2 + Si x)
    complex h; // cos x (-i pi + Ci x) + sin x (pi/2 + Si x)
};

inline AuxiliaryPair kernel_auxiliary(double x)
{
    const complex ci_shifted = cosine_integral(x) - I * pi;
    const double si_shifted = 0.5 * pi + sine_integral(x);
    const double s = std::sin(x);
    const double c = std::cos(x);
    return {s * ci_shifted - c * si_shifted, c * ci_shifted + s * si_shifted};
}

} // namespace detail

/// pi r^3 F1(x), the isotropic part of the retarded exchange kernel at
/// argument x = omega r / c. Negative x gives the nonresonant channel.
inline complex f1_exact(double x)
{
    if (x == 0.0) {
        throw SingularGeometry("f1_exact: zero argument");
    }
    const auto [g, h] = detail::kernel_auxiliary(x);
    return -g + x * h - x + x * x * g;
}

/// pi r^3 F2(x), the coefficient of r_mu r_nu / r^2.
inline complex f2_exact(double x)
{
    if (x == 0.0) {
        throw SingularGeometry("f2_exact: zero argument");
    }
    const auto [g, h] = detail::kernel_auxiliary(x);
    return 3.0 * g - 3.0 * x * h + x - x * x * g;
}

/// Resonant and nonresonant contributions of the frequency-dependent kernel.
struct KernelParts {
    Tensor3 resonant;
    Tensor3 nonresonant;

    Tensor3 total() const { return resonant + nonresonant; }
};

/// Frequency ratio omega/omega_a for a detuning (in gamma) given gamma/omega_a.
inline double frequency_ratio(double detuning, double gamma_over_omega)
{
    return 1.0 + detuning * gamma_over_omega;
}

/// Both exchange channels of the retarded kernel at frequency
/// `omega_ratio` = omega / omega_a, separation `r` in lambda-bar.
inline KernelParts kernel_exact_parts(const Vec3& r, double omega_ratio)
{
    const double dist = r.norm();
    if (!(dist > 0.0)) {
        throw SingularGeometry("kernel_exact: zero separation");
    }
    const Vec3 n = r / dist;
    const Tensor3 nn = (n * n.transpose()).cast<complex>();
    const double scale = units::dipole_squared / (pi * dist * dist * dist);

    auto block = [&](double x) -> Tensor3 {
        return scale * (f1_exact(x) * Tensor3::Identity() + f2_exact(x) * nn);
    };
    return {block(omega_ratio * dist), block((omega_ratio - 2.0) * dist)};
}

/// Full retarded kernel; equals green_tensor_polar at omega_ratio = 1.
inline Tensor3 kernel_exact(const Vec3& r, double omega_ratio)
{
    return kernel_exact_parts(r, omega_ratio).total();
}

// ---------------------------------------------------------------------------
// Polarization and incident wave
// ---------------------------------------------------------------------------

/// Two transverse polarization vectors for propagation along `direction`.
struct PolarizationBasis {
    Vec3 direction;
    std::array<CVec3, 2> vectors;
};

/// Spherical-coordinate transverse frame (theta-hat, phi-hat) of a unit
/// vector; right-handed with the vector, and (x, y) for +z.
inline std::pair<Vec3, Vec3> transverse_frame(const Vec3& k)
{
    const double theta = std::acos(std::clamp(k.z(), -1.0, 1.0));
    const double phi = std::atan2(k.y(), k.x());
    const Vec3 e1(std::cos(theta) * std::cos(phi), std::cos(theta) * std::sin(phi),
                  -std::sin(theta));
    const Vec3 e2(-std::sin(phi), std::cos(phi), 0.0);
    return {e1, e2};
}

inline Vec3 checked_unit(const Vec3& v, const char* what)
{
    const double norm = v.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
        throw InvalidArgument(std::string(what) + ": zero or non-finite direction");
    }
    return v / norm;
}

/// Helicity basis {e_+, e_-} with e_pm = -+(e1 +- i e2)/sqrt(2).
inline PolarizationBasis helicity_basis(const Vec3& direction)
{
    const Vec3 k = checked_unit(direction, "helicity_basis");
    const auto [e1, e2] = transverse_frame(k);
    const double s = 1.0 / std::sqrt(2.0);
    const CVec3 plus = -s * (e1.cast<complex>() + I * e2.cast<complex>());
    const CVec3 minus = s * (e1.cast<complex>() - I * e2.cast<complex>());
    return {k, {plus, minus}};
}

/// Basis whose first vector is `polarization` and second is k x e*.
inline PolarizationBasis basis_from_polarization(const Vec3& direction, const CVec3& polarization)
{
    const Vec3 k = checked_unit(direction, "basis_from_polarization");
    const CVec3 e = polarization.normalized();
    // Written out: Eigen's complex cross() conjugates its result.
    const CVec3 f = e.conjugate();
    const CVec3 second(k.y() * f.z() - k.z() * f.y(), k.z() * f.x() - k.x() * f.z(),
                       k.x() * f.y() - k.y() * f.x());
    return {k, {e, second}};
}

/// Monochromatic plane wave exp(i k.r) with polarization e.
struct IncidentWave {
    Vec3 direction = Vec3::UnitZ();
    CVec3 polarization = CVec3(1.0, 0.0, 0.0);
    double detuning = 0.0;

    /// Circularly polarized wave; helicity is +1 or -1.
    static IncidentWave circular(const Vec3& direction, int helicity, double detuning = 0.0)
    {
        const PolarizationBasis basis = helicity_basis(direction);
        return {basis.direction, basis.vectors[helicity >= 0 ? 0 : 1], detuning};
    }

    static IncidentWave linear(const Vec3& direction, const Vec3& polarization,
                               double detuning = 0.0)
    {
        return {checked_unit(direction, "IncidentWave"),
                checked_unit(polarization, "IncidentWave").cast<complex>(), detuning};
    }

    void validate(double tolerance = 1e-10) const
    {
        if (std::abs(direction.norm() - 1.0) > tolerance) {
            throw InvalidArgument("incident direction is not a unit vector");
        }
        if (std::abs(polarization.norm() - 1.0) > tolerance) {
            throw InvalidArgument("incident polarization is not normalized");
        }
        if (std::abs(polarization.dot(direction.cast<complex>())) > tolerance) {
            throw InvalidArgument("incident polarization is not transverse to the direction");
        }
        if (!std::isfinite(detuning)) {
            throw InvalidArgument("incident detuning is not finite");
        }
    }
};

/// Excitation vector of the resolvent system, s_(a,mu) = e_mu exp(i k.r_a).
///
/// Source-distance factors are normalized out so that cross sections do not
/// depend on the (implicit) source.
inline Eigen::VectorXcd incident_vector(const AtomConfiguration& config, const IncidentWave& wave)
{
    wave.validate();
    const std::size_t n = config.size();
    Eigen::VectorXcd s(3 * n);
    for (std::size_t a = 0; a < n; ++a) {
        const complex phase = std::exp(I * wave.direction.dot(config.positions[a]));
        s.segment<3>(3 * a) = phase * wave.polarization;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Detector propagator
// ---------------------------------------------------------------------------

using PropagatorMatrix = Eigen::Matrix<complex, 2, Eigen::Dynamic>;

/// Field radiated at `r_obs` by a unit dipole of each atom and Cartesian
/// component, projected on the analyzer polarizations of `basis`:
///
///   P(alpha; a, mu) = -(k^2/rho) [e_alpha* . e_mu - (e_alpha* . n)(e_mu . n)] e^{i k rho}
///
/// with rho = |r_obs - r_a| and n the unit vector from the atom to r_obs.
/// Only the radiative (1/rho) part is kept.
inline PropagatorMatrix detector_propagator(const Vec3& r_obs, const AtomConfiguration& config,
                                            const PolarizationBasis& basis)
{
    const std::size_t n_atoms = config.size();
    PropagatorMatrix prop(2, 3 * n_atoms);
    for (std::size_t a = 0; a < n_atoms; ++a) {
        const Vec3 d = r_obs - config.positions[a];
        const double rho = d.norm();
        if (!(rho > 1e-12)) {
            throw SingularGeometry("detector_propagator: observation point coincides with an atom");
        }
        const Vec3 n = d / rho;
        const complex factor = -std::exp(I * rho) / rho;
        for (int alpha = 0; alpha < 2; ++alpha) {
            const CVec3 analyzer = basis.vectors[alpha].conjugate();
            const complex along = analyzer.cwiseProduct(n.cast<complex>()).sum();
            for (int mu = 0; mu < 3; ++mu) {
                prop(alpha, 3 * a + mu) = factor * (analyzer(mu) - along * n(mu));
            }
        }
    }
    return prop;
}

} // namespace cdsim
