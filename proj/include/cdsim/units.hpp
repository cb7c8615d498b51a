#pragma once

#include <complex>
#include <numbers>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace cdsim {

using complex = std::complex<double>;
using Vec3 = Eigen::Vector3d;
using CVec3 = Eigen::Vector3cd;

inline constexpr complex I{0.0, 1.0};
inline constexpr double pi = std::numbers::pi;

/// Natural units used throughout the library.
///
/// Lengths are measured in reduced wavelengths (lambda-bar = 1/k), so the
/// resonant wave number is 1. Rates and detunings are measured in the
/// single-atom decay rate gamma, and hbar = 1. With the transition dipole
/// fixed to d^2 = 3 gamma / (4 k^3) the single-atom self-energy is exactly
/// -i gamma / 2 and the resonant single-atom cross section is 6 pi.
namespace units {

inline constexpr double wave_number = 1.0;
inline constexpr double decay_rate = 1.0;
inline constexpr double dipole_squared = 0.75;

/// Diagonal self-energy of an isolated atom.
inline constexpr complex self_energy{0.0, -0.5 * decay_rate};

/// Resonant total cross section of one J=0 -> J=1 atom, 6 pi lambda-bar^2.
inline constexpr double resonant_cross_section = 6.0 * pi;

/// Prefactor of |sum_a (e'* . u_a) exp(-i k'.r_a)| in the scattering
/// amplitude; its square is k^4 d^4 = 9/16.
inline constexpr double amplitude_prefactor = dipole_squared;

/// Lorentzian total cross section of a lone atom at detuning `delta`.
inline double single_atom_cross_section(double delta)
{
    return resonant_cross_section * 0.25 / (delta * delta + 0.25);
}

inline constexpr const char* length = "lambdabar";
inline constexpr const char* area = "lambdabar^2";
inline constexpr const char* area_per_sr = "lambdabar^2/sr";
inline constexpr const char* rate = "gamma";
inline constexpr const char* density = "lambdabar^-3";
inline constexpr const char* angle = "rad";
inline constexpr const char* dimensionless = "dimensionless";

} // namespace units
} // namespace cdsim
