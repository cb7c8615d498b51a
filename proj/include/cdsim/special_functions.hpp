#pragma once

#include <cmath>
#include <limits>

#include "cdsim/error.hpp"
#include "cdsim/units.hpp"

namespace cdsim {

struct CosineSineIntegrals {
    double ci;
    double si;
};

/// Ci(x) and Si(x) for x > 0.
///
/// Power series up to x = 4, continued fraction for E1(ix) above. Both
/// branches are accurate to a few ulps over the range used by the kernels.
inline CosineSineIntegrals cosine_sine_integrals(double x)
{
    constexpr double euler_gamma = 0.57721566490153286061;
    constexpr double eps = std::numeric_limits<double>::epsilon();
    constexpr int max_terms = 500;

    if (!(x > 0.0)) {
        throw InvalidArgument("cosine_sine_integrals: argument must be positive");
    }

    if (x <= 4.0) {
        // Si = sum (-1)^k x^{2k+1} / ((2k+1)(2k+1)!)
        // Ci = gamma + ln x + sum_{k>=1} (-1)^k x^{2k} / (2k (2k)!)
        const double x2 = x * x;
        double si = 0.0;
        double ci = 0.0;
        double term = x; // x^{2k+1}/(2k+1)!, signed
        for (int k = 0; k < max_terms; ++k) {
            const double add = term / (2 * k + 1);
            si += add;
            if (std::abs(add) < eps * std::abs(si)) {
                break;
            }
            term *= -x2 / ((2.0 * k + 2.0) * (2.0 * k + 3.0));
        }
        term = 1.0; // x^{2k}/(2k)!, signed
        for (int k = 1; k < max_terms; ++k) {
            term *= -x2 / ((2.0 * k - 1.0) * (2.0 * k));
            const double add = term / (2 * k);
            ci += add;
            if (std::abs(add) < eps * std::max(1.0, std::abs(ci))) {
                break;
            }
        }
        return {euler_gamma + std::log(x) + ci, si};
    }

    // E1(ix) = -Ci(x) + i (Si(x) - pi/2), modified Lentz on the even
    // continued fraction of exp(z) E1(z).
    const complex b0(1.0, x);
    constexpr double tiny = 1e-300;
    complex b = b0;
    complex c = 1.0 / tiny;
    complex d = 1.0 / b;
    complex h = d;
    bool converged = false;
    for (int i = 2; i < max_terms; ++i) {
        const double a = -static_cast<double>((i - 1) * (i - 1));
        b += 2.0;
        d = 1.0 / (a * d + b);
        c = b + a / c;
        const complex del = c * d;
        h *= del;
        if (std::abs(del.real() - 1.0) + std::abs(del.imag()) < eps) {
            converged = true;
            break;
        }
    }
    if (!converged) {
        throw ConvergenceError("cosine_sine_integrals: continued fraction did not converge", x);
    }
    h *= complex(std::cos(x), -std::sin(x));
    return {-h.real(), 0.5 * pi + h.imag()};
}

/// Ci continued to negative arguments with Ci(-x) = Ci(x) + i pi, the
/// boundary value from the upper half plane.
inline complex cosine_integral(double x)
{
    if (x > 0.0) {
        return cosine_sine_integrals(x).ci;
    }
    if (x < 0.0) {
        return complex(cosine_sine_integrals(-x).ci, pi);
    }
    throw InvalidArgument("cosine_integral: Ci(0) is singular");
}

/// Si, odd in x.
inline double sine_integral(double x)
{
    if (x == 0.0) {
        return 0.0;
    }
    const double s = cosine_sine_integrals(std::abs(x)).si;
    return x > 0.0 ? s : -s;
}

} // namespace cdsim
