#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "cdsim/solver.hpp"

using namespace cdsim;

namespace {

AtomConfiguration random_cloud(std::size_t n, double radius, std::uint64_t seed)
{
    CloudSpec spec;
    spec.radius = radius;
    spec.atom_count = n;
    spec.min_separation = 0.05;
    return sample_configuration(spec, seed);
}

AtomConfiguration pair_along_z(double kr)
{
    return AtomConfiguration::from_positions({Vec3::Zero(), Vec3(0.0, 0.0, kr)});
}

// Every expected value is matched to a distinct computed one.
double match_eigenvalues(std::vector<complex> expected, Eigen::VectorXcd computed)
{
    double worst = 0.0;
    std::vector<bool> used(static_cast<std::size_t>(computed.size()), false);
    for (const complex e : expected) {
        double best = INFINITY;
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < used.size(); ++j) {
            const double d = std::abs(computed(static_cast<Eigen::Index>(j)) - e);
            if (!used[j] && d < best) {
                best = d;
                best_j = j;
            }
        }
        used[best_j] = true;
        worst = std::max(worst, best);
    }
    return worst;
}

double relative_difference(const Eigen::VectorXcd& a, const Eigen::VectorXcd& b)
{
    return (a - b).norm() / b.norm();
}

} // namespace

TEST(Hamiltonian, SingleAtomIsPureDecay)
{
    const auto h = build_hamiltonian(AtomConfiguration::from_positions({Vec3(1.0, 2.0, 3.0)}));
    const Eigen::Matrix3cd expected = complex(0.0, -0.5) * Eigen::Matrix3cd::Identity();
    EXPECT_EQ((h.matrix - expected).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Hamiltonian, TwoAtomBlocksAndSymmetry)
{
    const Vec3 r(0.4, -1.1, 0.7);
    const auto h = build_hamiltonian(AtomConfiguration::from_positions({Vec3::Zero(), r}));
    EXPECT_EQ((h.matrix.block<3, 3>(0, 3) - green_tensor_polar(-r)).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((h.matrix - h.matrix.transpose()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Hamiltonian, CoincidentAtomsRejected)
{
    EXPECT_THROW(build_hamiltonian(AtomConfiguration::from_positions({Vec3::Ones(), Vec3::Ones()})),
                 SingularGeometry);
}

TEST(Hamiltonian, ExactVariantOnResonanceMatchesPolar)
{
    const auto config = random_cloud(8, 2.0, 4);
    const auto polar = build_hamiltonian(config);
    const auto exact = build_hamiltonian(config, KernelVariant::Exact, 1.0);
    EXPECT_LT((polar.matrix - exact.matrix).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Hamiltonian, RandomCloudIsSymmetric)
{
    const auto h = build_hamiltonian(random_cloud(60, 3.0, 9));
    EXPECT_EQ((h.matrix - h.matrix.transpose()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Resolvent, ScalarLorentzian)
{
    const auto h = build_hamiltonian(AtomConfiguration::from_positions({Vec3::Zero()}));
    for (const double delta : {-3.0, 0.0, 0.25, 7.0}) {
        const auto amp = solve_resolvent(h, delta, Eigen::Vector3cd(1.0, 0.0, 0.0));
        EXPECT_LT(std::abs(amp.u(0) - 1.0 / complex(delta, 0.5)), 1e-15);
        EXPECT_EQ(amp.u(1), complex(0.0));
        EXPECT_FALSE(amp.ill_conditioned);
    }
}

TEST(Resolvent, ResidualOnFiftyAtoms)
{
    const auto config = random_cloud(50, 2.5, 21);
    const auto h = build_hamiltonian(config);
    const auto s = incident_vector(config, IncidentWave::circular(Vec3::UnitZ(), +1));
    for (const double delta : {-2.0, 0.0, 1.3}) {
        const auto amp = solve_resolvent(h, delta, s);
        EXPECT_LE(amp.residual, 1e-10);
        const Eigen::VectorXcd r = delta * amp.u - h.matrix * amp.u - s;
        EXPECT_LE(r.norm() / s.norm(), 1e-10);
        EXPECT_TRUE(std::isfinite(amp.condition));
    }
}

TEST(Resolvent, FactorizationReusedAcrossRightHandSides)
{
    const auto config = random_cloud(20, 2.0, 2);
    const auto h = build_hamiltonian(config);
    const ResolventFactorization lu(h, 0.4);
    const auto s1 = incident_vector(config, IncidentWave::circular(Vec3::UnitZ(), +1));
    const auto s2 = incident_vector(config, IncidentWave::circular(Vec3::UnitX(), -1));
    Eigen::MatrixXcd both(s1.size(), 2);
    both << s1, s2;
    const Eigen::MatrixXcd u = lu.solve_many(both);
    EXPECT_LT(relative_difference(u.col(0), lu.solve(s1).u), 1e-14);
    EXPECT_LT(relative_difference(u.col(1), solve_resolvent(h, 0.4, s2).u), 1e-14);
}

TEST(Resolvent, SpectralPathAgreesWithLu)
{
    const auto config = random_cloud(20, 1.5, 6);
    const auto h = build_hamiltonian(config);
    const auto s = incident_vector(config, IncidentWave::linear(Vec3::UnitZ(), Vec3::UnitX()));
    const ModeSpectrum modes = mode_spectrum(h, true);
    for (const double delta : {-1.0, 0.0, 0.7}) {
        EXPECT_LT(relative_difference(modes.apply_resolvent(delta, s),
                                      solve_resolvent(h, delta, s).u),
                  1e-8);
    }
}

TEST(Modes, SingleAtomTripleEigenvalue)
{
    const auto modes =
        mode_spectrum(build_hamiltonian(AtomConfiguration::from_positions({Vec3::Zero()})));
    ASSERT_EQ(modes.eigenvalues.size(), 3);
    for (Eigen::Index j = 0; j < 3; ++j) {
        EXPECT_LT(std::abs(modes.eigenvalues(j) - complex(0.0, -0.5)), 1e-15);
    }
}

TEST(Modes, TwoAtomBlockValues)
{
    for (const double kr : {0.5, 1.0, 3.0}) {
        const Tensor3 g = green_tensor_polar(Vec3(0.0, 0.0, kr));
        const complex d(0.0, -0.5);
        const std::vector<complex> expected{d + g(2, 2), d - g(2, 2), d + g(0, 0),
                                            d - g(0, 0), d + g(1, 1), d - g(1, 1)};
        const auto modes = mode_spectrum(build_hamiltonian(pair_along_z(kr)));
        EXPECT_LT(match_eigenvalues(expected, modes.eigenvalues), 1e-10) << kr;
    }
}

TEST(Modes, CloseTwoAtomPairSplitsIntoSuperAndSubradiant)
{
    const auto modes = mode_spectrum(build_hamiltonian(pair_along_z(0.05)));
    const Eigen::VectorXd widths = modes.widths();
    EXPECT_NEAR(widths.maxCoeff(), 2.0, 1e-3);
    EXPECT_NEAR(widths.minCoeff(), 0.0, 1e-3);
    EXPECT_NEAR(-modes.eigenvalues.imag().sum(), 6.0 * 0.5, 1e-12);
}

TEST(Modes, TraceIdentityAndDecayOnRandomClouds)
{
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto h = build_hamiltonian(random_cloud(100, 3.0, seed));
        const auto modes = mode_spectrum(h);
        const complex trace = modes.eigenvalues.sum();
        const complex expected(0.0, -1.5 * 100);
        EXPECT_LT(std::abs(trace - expected) / std::abs(expected), 1e-10);
        EXPECT_LT(std::abs(h.matrix.trace() - expected), 1e-12);
        EXPECT_GT(modes.widths().minCoeff(), 0.0);
    }
}

TEST(Sweep, OnePointEqualsSolve)
{
    const auto config = random_cloud(10, 1.5, 5);
    const auto h = build_hamiltonian(config);
    const auto s = incident_vector(config, IncidentWave::circular(Vec3::UnitZ(), +1));
    const std::vector<double> grid{0.3};
    const auto swept = sweep_detunings(h, grid, s);
    ASSERT_EQ(swept.size(), 1u);
    EXPECT_EQ((swept[0].u - solve_resolvent(h, 0.3, s).u).norm(), 0.0);
}

TEST(Sweep, AllStrategiesMatchPerPointLu)
{
    const auto config = random_cloud(20, 1.5, 13);
    const auto h = build_hamiltonian(config);
    const auto s = incident_vector(config, IncidentWave::circular(Vec3::UnitZ(), +1));
    std::vector<double> grid;
    for (int i = 0; i < 200; ++i) {
        grid.push_back(-10.0 + 20.0 * i / 199.0);
    }
    std::vector<Eigen::VectorXcd> reference;
    for (const double d : grid) {
        reference.push_back(solve_resolvent(h, d, s).u);
    }
    for (const SweepStrategy strategy : {SweepStrategy::Auto, SweepStrategy::Spectral,
                                         SweepStrategy::Hessenberg, SweepStrategy::PerPointLU}) {
        const auto swept = sweep_detunings(h, grid, s, {.strategy = strategy});
        double worst = 0.0;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            worst = std::max(worst, relative_difference(swept[i].u, reference[i]));
            EXPECT_LE(swept[i].residual, 1e-10);
        }
        EXPECT_LE(worst, 1e-8) << static_cast<int>(strategy);
    }
}

TEST(Sweep, ProjectionsMatchDirectContraction)
{
    const auto config = random_cloud(15, 1.5, 31);
    const auto h = build_hamiltonian(config);
    Eigen::MatrixXcd rhs(3 * config.size(), 2);
    rhs.col(0) = incident_vector(config, IncidentWave::circular(Vec3::UnitZ(), -1));
    rhs.col(1) = incident_vector(config, IncidentWave::circular(Vec3(1.0, -2.0, 0.5), +1));
    const Eigen::MatrixXcd probes = Eigen::MatrixXcd::Random(rhs.rows(), 3);
    const std::vector<double> grid{-2.0, -0.5, 0.0, 0.5, 4.0};
    for (const SweepStrategy strategy :
         {SweepStrategy::PerPointLU, SweepStrategy::Spectral, SweepStrategy::Hessenberg}) {
        const auto proj = sweep_projections(h, grid, rhs, probes, {.strategy = strategy});
        ASSERT_EQ(proj.values.size(), grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const ResolventFactorization lu(h, grid[i]);
            const Eigen::MatrixXcd expected = probes.transpose() * lu.solve_many(rhs);
            EXPECT_LT((proj.values[i] - expected).norm() / expected.norm(), 1e-10);
            EXPECT_LE(proj.residuals[i], 1e-10);
        }
    }
}

TEST(Sweep, SingleAtomLorentzian)
{
    const auto h = build_hamiltonian(AtomConfiguration::from_positions({Vec3::Zero()}));
    std::vector<double> grid;
    for (int i = -10; i <= 10; ++i) {
        grid.push_back(0.5 * i);
    }
    const auto swept =
        sweep_detunings(h, grid, Eigen::Vector3cd(0.0, 1.0, 0.0), {.strategy = SweepStrategy::Hessenberg});
    for (std::size_t i = 0; i < grid.size(); ++i) {
        EXPECT_LT(std::abs(swept[i].u(1) - 1.0 / complex(grid[i], 0.5)), 1e-14);
    }
}

TEST(Sweep, ExactKernelRejected)
{
    const auto config = random_cloud(3, 1.0, 1);
    const auto h = build_hamiltonian(config, KernelVariant::Exact, 1.0);
    const std::vector<double> grid{0.0, 1.0, 2.0};
    EXPECT_THROW(sweep_detunings(h, grid, Eigen::VectorXcd::Ones(9)), InvalidArgument);
}

TEST(BinaryDump, RoundTripAndLayout)
{
    const auto h = build_hamiltonian(random_cloud(4, 1.0, 3));
    const auto modes = mode_spectrum(h);
    std::stringstream buffer;
    dump_hamiltonian(buffer, h, &modes);
    const std::string bytes = buffer.str();
    ASSERT_EQ(bytes.size(), 2 * 24 + 16 * (12 * 12 + 12));
    EXPECT_EQ(bytes.substr(0, 4), "CDSM");
    EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 12);
    EXPECT_EQ(read_matrix_binary(buffer), h.matrix);
    EXPECT_EQ(read_matrix_binary(buffer), Eigen::MatrixXcd(modes.eigenvalues));

    std::stringstream bad("XXXX");
    EXPECT_THROW(read_matrix_binary(bad), InvalidArgument);
}
