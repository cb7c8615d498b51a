#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "cdsim/kernel.hpp"
#include "support/kernel_oracle.hpp"

using namespace cdsim;
using cdsim::testing::oracle_f1;
using cdsim::testing::oracle_f2;

namespace {

double rel_err(complex a, complex b) { return std::abs(a - b) / std::abs(b); }

double max_rel_err(const Tensor3& a, const Tensor3& b)
{
    return (a - b).cwiseAbs().maxCoeff() / b.cwiseAbs().maxCoeff();
}

Vec3 random_unit(std::mt19937_64& gen)
{
    std::normal_distribution<double> nd;
    Vec3 v(nd(gen), nd(gen), nd(gen));
    return v.normalized();
}

} // namespace

TEST(GreenTensorPolar, HandEvaluatedAxialComponent)
{
    const Tensor3 g = green_tensor_polar(Vec3(0.0, 0.0, 1.0));
    const complex expected = 0.75 * std::exp(I) * complex(-2.0, 2.0);
    EXPECT_LT(rel_err(g(2, 2), expected), 1e-15);
    const complex transverse = 0.75 * std::exp(I) * complex(0.0, -1.0);
    EXPECT_LT(rel_err(g(0, 0), transverse), 1e-15);
    EXPECT_EQ(g(0, 1), complex(0.0));
}

TEST(GreenTensorPolar, SymmetricAndEven)
{
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> dist(0.05, 30.0);
    for (int trial = 0; trial < 100; ++trial) {
        const Vec3 r = dist(gen) * random_unit(gen);
        const Tensor3 g = green_tensor_polar(r);
        EXPECT_EQ((g - g.transpose()).cwiseAbs().maxCoeff(), 0.0);
        EXPECT_EQ((g - green_tensor_polar(-r)).cwiseAbs().maxCoeff(), 0.0);
    }
}

TEST(GreenTensorPolar, FarFieldIsTransverse)
{
    const Vec3 n = Vec3(1.0, 2.0, -0.5).normalized();
    const Vec3 t = n.unitOrthogonal();
    const double kr = 100.0;
    const Tensor3 g = green_tensor_polar(kr * n);
    const complex tt = t.cast<complex>().transpose() * g * t.cast<complex>();
    EXPECT_NEAR(std::abs(tt), 0.75 / kr, 0.02 * std::abs(tt));
    const complex nn = n.cast<complex>().transpose() * g * n.cast<complex>();
    EXPECT_LT(std::abs(nn), 3.0 / kr * std::abs(tt));
}

TEST(GreenTensorPolar, SuperradiantSmallSeparationLimit)
{
    const Tensor3 g = green_tensor_polar(Vec3(1e-3, 0.0, 0.0));
    EXPECT_NEAR(g(1, 1).imag(), -0.5, 1e-5);
    EXPECT_NEAR(g(0, 0).imag(), -0.5, 1e-5);
    // Static dipole energy: side-by-side repulsive, head-to-tail attractive.
    EXPECT_GT(g(1, 1).real(), 0.0);
    EXPECT_LT(g(0, 0).real(), 0.0);
    EXPECT_THROW(green_tensor_polar(Vec3::Zero()), SingularGeometry);
}

TEST(ExactKernel, ChannelSumMatchesPolarClosedForm)
{
    for (const double x : {0.3, 1.0, 5.0, 20.0}) {
        const complex phase = std::exp(I * x);
        const complex closed1 = pi * complex(1.0 - x * x, -x) * phase;
        const complex closed2 = -pi * complex(3.0 - x * x, -3.0 * x) * phase;
        EXPECT_LT(rel_err(f1_exact(x) + f1_exact(-x), closed1), 1e-9) << x;
        EXPECT_LT(rel_err(f2_exact(x) + f2_exact(-x), closed2), 1e-9) << x;
    }
}

TEST(ExactKernel, MatchesQuadratureOracle)
{
    for (double x = 0.1; x <= 50.0; x *= 1.37) {
        EXPECT_LT(rel_err(f1_exact(x), oracle_f1(x)), 1e-7) << x;
        EXPECT_LT(rel_err(f2_exact(x), oracle_f2(x)), 1e-7) << x;
    }
    for (const double x : {0.1, 0.5, 1.0, 3.0, 10.0, 50.0}) {
        EXPECT_LT(rel_err(f1_exact(-x), oracle_f1(-x)), 1e-7) << -x;
        EXPECT_LT(rel_err(f2_exact(-x), oracle_f2(-x)), 1e-7) << -x;
    }
    EXPECT_THROW(f1_exact(0.0), SingularGeometry);
    EXPECT_THROW(f2_exact(0.0), SingularGeometry);
}

TEST(ExactKernel, EqualsPolarOnResonance)
{
    std::mt19937_64 gen(11);
    for (double kr = 0.1; kr <= 20.0; kr *= 1.25) {
        const Vec3 r = kr * random_unit(gen);
        EXPECT_LT(max_rel_err(kernel_exact(r, 1.0), green_tensor_polar(r)), 1e-9) << kr;
    }
}

TEST(ExactKernel, NonresonantChannelComparableAtShortRange)
{
    const KernelParts parts = kernel_exact_parts(Vec3(0.1, 0.0, 0.0), 1.0);
    const double res = parts.resonant.cwiseAbs().maxCoeff();
    const double non = parts.nonresonant.cwiseAbs().maxCoeff();
    EXPECT_GT(non / res, 0.1);
    EXPECT_LT(non / res, 10.0);
    // Far apart the nonresonant exchange is negligible.
    const KernelParts far = kernel_exact_parts(Vec3(20.0, 0.0, 0.0), 1.0);
    EXPECT_LT(far.nonresonant.cwiseAbs().maxCoeff(), 0.05 * far.resonant.cwiseAbs().maxCoeff());
}

TEST(ExactKernel, SymmetricOffResonance)
{
    std::mt19937_64 gen(3);
    for (int trial = 0; trial < 100; ++trial) {
        const Vec3 r = (0.2 + 10.0 * std::generate_canonical<double, 53>(gen)) * random_unit(gen);
        const Tensor3 k = kernel_exact(r, 1.0 + 1e-3);
        EXPECT_LT((k - k.transpose()).cwiseAbs().maxCoeff(), 1e-15 * k.cwiseAbs().maxCoeff());
        EXPECT_EQ((k - kernel_exact(-r, 1.0 + 1e-3)).cwiseAbs().maxCoeff(), 0.0);
    }
}

TEST(HelicityBasis, StandardSphericalVectorsAlongZ)
{
    const auto basis = helicity_basis(Vec3::UnitZ());
    const double s = 1.0 / std::sqrt(2.0);
    EXPECT_LT((basis.vectors[0] - CVec3(-s, -s * I, 0.0)).norm(), 1e-15);
    EXPECT_LT((basis.vectors[1] - CVec3(s, -s * I, 0.0)).norm(), 1e-15);
    EXPECT_THROW(helicity_basis(Vec3::Zero()), InvalidArgument);
}

TEST(HelicityBasis, CompletenessAndOrthonormality)
{
    std::mt19937_64 gen(17);
    for (int trial = 0; trial < 50; ++trial) {
        const Vec3 k = random_unit(gen);
        const auto basis = helicity_basis(k);
        Eigen::Matrix3cd sum = Eigen::Matrix3cd::Zero();
        for (const CVec3& e : basis.vectors) {
            sum += e * e.adjoint();
            EXPECT_LT(std::abs(e.cwiseProduct(k.cast<complex>()).sum()), 1e-15);
        }
        const Eigen::Matrix3d projector = Eigen::Matrix3d::Identity() - k * k.transpose();
        EXPECT_LT((sum - projector.cast<complex>()).cwiseAbs().maxCoeff(), 1e-15);
        EXPECT_LT(std::abs(basis.vectors[0].cwiseProduct(basis.vectors[1].conjugate()).sum()),
                  1e-15);
    }
    // The poles of the spherical frame.
    for (const Vec3& k : {Vec3(Vec3::UnitZ()), Vec3(-Vec3::UnitZ())}) {
        const auto basis = helicity_basis(k);
        EXPECT_NEAR(basis.vectors[0].norm(), 1.0, 1e-15);
        EXPECT_LT(std::abs(basis.vectors[0].cwiseProduct(k.cast<complex>()).sum()), 1e-15);
    }
}

TEST(PolarizationBasis, SecondVectorIsOrthogonalForAnyPolarization)
{
    std::mt19937_64 gen(5);
    for (int trial = 0; trial < 20; ++trial) {
        const Vec3 k = random_unit(gen);
        const auto h = helicity_basis(k);
        const CVec3 e = (0.3 * h.vectors[0] + complex(0.1, 0.9) * h.vectors[1]).normalized();
        for (const CVec3& pol : {e, h.vectors[0], h.vectors[1]}) {
            const auto basis = basis_from_polarization(k, pol);
            EXPECT_LT(std::abs(basis.vectors[1].dot(pol)), 1e-14);
            EXPECT_NEAR(basis.vectors[1].norm(), 1.0, 1e-14);
            EXPECT_LT(std::abs(basis.vectors[1].cwiseProduct(k.cast<complex>()).sum()), 1e-14);
        }
    }
}

TEST(IncidentVector, SingleAtomAtOrigin)
{
    const auto config = AtomConfiguration::from_positions({Vec3::Zero()});
    const auto s = incident_vector(config, IncidentWave::linear(Vec3::UnitZ(), Vec3::UnitX()));
    ASSERT_EQ(s.size(), 3);
    EXPECT_EQ(s(0), complex(1.0));
    EXPECT_EQ(s(1), complex(0.0));
    EXPECT_EQ(s(2), complex(0.0));
}

TEST(IncidentVector, PlaneWavePhases)
{
    const auto config =
        AtomConfiguration::from_positions({Vec3::Zero(), Vec3(0.0, 0.0, pi)});
    const auto s = incident_vector(config, IncidentWave::circular(Vec3::UnitZ(), +1));
    EXPECT_LT(std::abs(s(3) + s(0)), 1e-15);

    const Vec3 shift(0.3, -1.2, 2.0);
    const auto moved = AtomConfiguration::from_positions({shift, Vec3(0.0, 0.0, pi) + shift});
    const auto wave = IncidentWave::circular(Vec3(1.0, 1.0, 1.0).normalized(), -1);
    const auto a = incident_vector(config, wave);
    const auto b = incident_vector(moved, wave);
    const complex phase = std::exp(I * wave.direction.dot(shift));
    EXPECT_LT((b - phase * a).norm(), 1e-14);
}

TEST(IncidentVector, RejectsLongitudinalPolarization)
{
    const auto config = AtomConfiguration::from_positions({Vec3::Zero()});
    IncidentWave wave;
    wave.direction = Vec3::UnitZ();
    wave.polarization = CVec3(0.0, 0.0, 1.0);
    EXPECT_THROW(incident_vector(config, wave), InvalidArgument);
}

TEST(DetectorPropagator, SingleAtomOnAxis)
{
    const auto config = AtomConfiguration::from_positions({Vec3::Zero()});
    PolarizationBasis basis{Vec3::UnitZ(), {CVec3(1.0, 0.0, 0.0), CVec3(0.0, 1.0, 0.0)}};
    const double r = 7.5;
    const auto prop = detector_propagator(Vec3(0.0, 0.0, r), config, basis);
    EXPECT_LT(std::abs(prop(0, 0) + std::exp(I * r) / r), 1e-15);
    EXPECT_EQ(prop(0, 2), complex(0.0));
    EXPECT_EQ(prop(0, 1), complex(0.0));
    EXPECT_THROW(detector_propagator(Vec3::Zero(), config, basis), SingularGeometry);
}

TEST(DetectorPropagator, TransverseToLineOfSight)
{
    std::mt19937_64 gen(23);
    std::vector<Vec3> pos;
    for (int a = 0; a < 10; ++a) {
        pos.push_back(3.0 * random_unit(gen));
    }
    const auto config = AtomConfiguration::from_positions(pos);
    const Vec3 obs(4.0, -20.0, 9.0);
    const auto basis = helicity_basis(obs.normalized());
    const auto prop = detector_propagator(obs, config, basis);
    for (int a = 0; a < 10; ++a) {
        const Vec3 n = (obs - pos[a]).normalized();
        for (int alpha = 0; alpha < 2; ++alpha) {
            const complex c = prop.block<1, 3>(alpha, 3 * a).cwiseProduct(
                                      n.cast<complex>().transpose())
                                  .sum();
            EXPECT_LT(std::abs(c), 1e-16);
        }
    }
}
