#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "cdsim/config.hpp"

using namespace cdsim;

namespace {

ConfigError parse_error(const std::string& text)
{
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e;
    }
    ADD_FAILURE() << "no error for:\n" << text;
    return ConfigError("none");
}

} // namespace

TEST(Config, MinimalSpectrumTakesDefaults)
{
    const RunConfig c = parse_config(R"(
experiment: spectrum
cloud:
  shape: uniform-sphere
  radius: 10
  density: 0.05
spectrum:
  detunings: {min: -2, max: 2, step: 0.5}
)");
    EXPECT_EQ(c.experiment, Experiment::Spectrum);
    EXPECT_EQ(c.cloud.shape, CloudShape::UniformSphere);
    EXPECT_EQ(c.cloud.radius, 10.0);
    EXPECT_EQ(c.cloud.density, 0.05);
    EXPECT_EQ(c.cloud.min_separation, default_min_separation);
    EXPECT_FALSE(c.cloud.atom_count.has_value());
    ASSERT_EQ(c.spectrum.detunings.size(), 9u);
    EXPECT_EQ(c.spectrum.detunings.front(), -2.0);
    EXPECT_EQ(c.spectrum.detunings.back(), 2.0);
    EXPECT_EQ(c.spectrum.detunings[4], 0.0);
    EXPECT_EQ(c.spectrum.observable, SpectrumObservable::TotalCrossSection);
    EXPECT_EQ(c.ensemble.configs, 1u);
    EXPECT_EQ(c.ensemble.seed, 0u);
    EXPECT_EQ(c.incident.polarization, "circular");
    EXPECT_EQ(c.incident.helicity, 1);
    EXPECT_EQ(c.solver.sweep, SweepStrategy::Auto);
    EXPECT_EQ(c.output.dir, "results");
    EXPECT_EQ(c.series_count(), 1u);
}

TEST(Config, EmptyDocumentIsRejectedForSpectrumWithoutGrid)
{
    const auto e = parse_error("");
    EXPECT_EQ(e.key(), "spectrum.detunings");
}

TEST(Config, NegativeDensityNamesTheKey)
{
    const auto e = parse_error(R"(experiment: single-shot
cloud:
  shape: uniform-sphere
  radius: 3
  density: -0.1
)");
    EXPECT_EQ(e.key(), "cloud.density");
    EXPECT_NE(std::string(e.what()).find("density"), std::string::npos);
    EXPECT_EQ(e.line(), 5);
}

TEST(Config, CylinderNeedsLength)
{
    const auto e = parse_error(R"(experiment: single-shot
cloud:
  shape: cylinder
  radius: 3
  density: 0.01
)");
    EXPECT_EQ(e.key(), "cloud.length");
}

TEST(Config, SphereRejectsLength)
{
    const auto e = parse_error(R"(experiment: single-shot
cloud: {shape: uniform-sphere, radius: 3, density: 0.01, length: 4}
)");
    EXPECT_EQ(e.key(), "cloud.length");
}

TEST(Config, UnknownKeysAreRejectedWithLine)
{
    auto e = parse_error(R"(experiment: single-shot
cloud:
  shape: uniform-sphere
  radius: 3
  densty: 0.01
)");
    EXPECT_EQ(e.key(), "cloud.densty");
    EXPECT_EQ(e.line(), 5);

    e = parse_error("experiment: single-shot\nbogus: 1\n");
    EXPECT_EQ(e.key(), "bogus");
    EXPECT_EQ(e.line(), 2);
}

TEST(Config, SyntaxErrorReportsLine)
{
    const auto e = parse_error("experiment: single-shot\ncloud:\n  radius: [1, 2\n  density: 3\n");
    EXPECT_GT(e.line(), 0);
    EXPECT_NE(std::string(e.what()).find("line"), std::string::npos);
}

TEST(Config, TypeErrorsNameTheKey)
{
    EXPECT_EQ(parse_error("experiment: single-shot\ncloud: {radius: abc}\n").key(), "cloud.radius");
    EXPECT_EQ(parse_error("experiment: single-shot\nensemble: {configs: -3}\n").key(), "ensemble.configs");
    EXPECT_EQ(parse_error("experiment: single-shot\nensemble: {configs: 0}\n").key(), "ensemble.configs");
    EXPECT_EQ(parse_error("experiment: single-shot\nincident: {direction: [1, 2]}\n").key(),
              "incident.direction");
    EXPECT_EQ(parse_error("experiment: nonsense\n").key(), "experiment");
    EXPECT_EQ(parse_error("experiment: single-shot\ncloud: {shape: cube}\n").key(), "cloud.shape");
    EXPECT_EQ(parse_error("experiment: single-shot\nincident: {helicity: 2}\n").key(), "incident.helicity");
}

TEST(Config, ExperimentSpecificChecks)
{
    EXPECT_EQ(parse_error("experiment: cbs\nangular: {theta_deg: [170, 175]}\n").key(), "angular.theta_deg");
    EXPECT_EQ(parse_error("experiment: fresnel\n").key(), "fresnel.z_offset");
    EXPECT_EQ(parse_error(R"(experiment: angular
incident: {polarization: linear, linear_axis: [1, 0, 0]}
)")
                  .key(),
              "incident.polarization");
    EXPECT_EQ(parse_error(R"(experiment: single-shot
incident: {polarization: linear, linear_axis: [0, 0, 1]}
)")
                  .key(),
              "incident.linear_axis");
    EXPECT_EQ(parse_error(R"(experiment: spectrum
spectrum: {detunings: [0], observable: differential}
)")
                  .key(),
              "spectrum.angles_deg");
    EXPECT_EQ(parse_error(R"(experiment: single-shot
vary: {parameter: length, values: [1, 2]}
)")
                  .key(),
              "vary.parameter");
    EXPECT_EQ(parse_error("experiment: single-shot\nspectrum: {detunings: {min: 1, max: 0, step: 1}}\n").key(),
              "spectrum.detunings");
}

TEST(Config, ExperimentOverride)
{
    const RunConfig c = parse_config("cloud: {radius: 2}\n", Experiment::SingleShot);
    EXPECT_EQ(c.experiment, Experiment::SingleShot);
    EXPECT_THROW(parse_config("experiment: angular\n", Experiment::SingleShot), ConfigError);
}

TEST(Config, DegreesToRadiansIsExactAtPi)
{
    EXPECT_EQ(degrees_to_radians(180.0), pi);
    EXPECT_NEAR(degrees_to_radians(90.0), pi / 2.0, 1e-15);
    AngularConfig a;
    EXPECT_EQ(a.theta_radians(), default_cbs_grid());
}

TEST(Config, VarySeries)
{
    const RunConfig c = parse_config(R"(
experiment: fresnel
cloud: {shape: cylinder, radius: 10, length: 10, density: 0.005}
vary: {parameter: length, values: [10, 20, 30]}
)");
    ASSERT_EQ(c.series_count(), 3u);
    EXPECT_EQ(c.cloud_for(2).length, 30.0);
    EXPECT_EQ(c.cloud_for(2).density, 0.005);
}

TEST(Config, RoundTripDefaults)
{
    RunConfig c;
    c.spectrum.detunings = {0.0};
    EXPECT_EQ(parse_config(serialize_config(c)), c);
}

TEST(Config, RoundTripFullyPopulated)
{
    RunConfig c;
    c.experiment = Experiment::Cbs;
    c.cloud = {CloudShape::GaussianSphere, 8.0, 0.0, 0.01, 0.02, std::nullopt};
    c.vary = {VaryParameter::Density, {0.01, 0.1, 1.0 / 3.0}};
    c.incident.direction = {0.1, -0.2, 0.9};
    c.incident.helicity = -1;
    c.incident.detuning = 0.123456789012345;
    c.ensemble = {2000, 18446744073709551615ULL, 12, 250};
    c.spectrum.detunings = {-1.0, 0.1, 0.7};
    c.spectrum.observable = SpectrumObservable::PolarizationResolved;
    c.spectrum.angles_deg = {60.0, 120.0};
    c.spectrum.n_azimuth = 4;
    c.spectrum.views = 2;
    c.angular.theta_deg = {90.0, 135.5, 180.0};
    c.angular.n_azimuth = 32;
    c.angular.views = 5;
    c.angular.background_min_deg = 130.0;
    c.angular.background_max_deg = 150.0;
    c.fresnel = {3.5, 12.0, 21, 0.5};
    c.eigenmodes.dump_matrix = true;
    c.quadrature = {32, 48, 1e-8};
    c.solver = {SweepStrategy::Spectral, 7};
    c.output = {"some dir/with: colon", {"f4", "f5"}};
    EXPECT_EQ(parse_config(serialize_config(c)), c);

    c.experiment = Experiment::Eigenmodes;
    c.cloud = {CloudShape::Cylinder, 3.0, 7.5, 0.2, 0.0, 2};
    c.vary = {VaryParameter::Length, {1e-3, 2.5e7}};
    c.incident.polarization = "linear";
    c.incident.linear_axis = {0.0, 1.0, 0.0};
    c.incident.direction = {0.0, 0.0, 1.0};
    EXPECT_EQ(parse_config(serialize_config(c)), c);
}

TEST(Config, SerializationIsStable)
{
    RunConfig c;
    c.spectrum.detunings = {0.0, 1.0};
    const std::string once = serialize_config(c);
    EXPECT_EQ(serialize_config(parse_config(once)), once);
}

TEST(Config, ShippedConfigsParseAndRoundTrip)
{
    std::size_t seen = 0;
    for (const auto& entry : std::filesystem::directory_iterator(CDSIM_CONFIG_DIR)) {
        if (entry.path().extension() != ".yaml") {
            continue;
        }
        SCOPED_TRACE(entry.path().string());
        std::ifstream in(entry.path());
        std::stringstream text;
        text << in.rdbuf();
        const RunConfig c = parse_config(text.str());
        EXPECT_EQ(parse_config(serialize_config(c)), c);
        ++seen;
    }
    EXPECT_GE(seen, 10u);
}

TEST(Config, RangePointsAreDecimal)
{
    const RunConfig c = parse_config("spectrum: {detunings: {min: -8, max: 6, step: 0.1}}\n");
    ASSERT_EQ(c.spectrum.detunings.size(), 141u);
    EXPECT_EQ(c.spectrum.detunings[80], 0.0);
    EXPECT_EQ(c.spectrum.detunings[83], 0.3);
    EXPECT_EQ(c.spectrum.detunings[140], 6.0);
}
