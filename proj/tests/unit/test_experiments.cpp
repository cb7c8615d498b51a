#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cdsim/experiments.hpp"

using namespace cdsim;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("cdsim_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::string> headers(const Table& t)
{
    std::vector<std::string> out;
    for (const auto& c : t.columns) {
        out.push_back(c.name);
    }
    return out;
}

} // namespace

TEST(Results, CsvRoundTripKeepsUnitsAndBits)
{
    Table t;
    t.name = "demo";
    t.description = "two columns\nsecond line";
    t.add("x", units::length).values = {0.1, 1.0 / 3.0, -2e-300};
    t.add("y", units::dimensionless).values = {1.0, std::nan(""), 5.0};
    std::stringstream s;
    write_csv(s, t);
    EXPECT_EQ(s.str().rfind("# two columns\n# second line\n# units: lambdabar,dimensionless\nx,y\n", 0), 0u);
    const Table back = read_csv(s, "demo");
    EXPECT_EQ(back.description, t.description);
    ASSERT_EQ(back.columns.size(), 2u);
    EXPECT_EQ(back.columns[0].unit, units::length);
    EXPECT_EQ(back.columns[0].values, t.columns[0].values);
    EXPECT_TRUE(std::isnan(back.columns[1].values[1]));
}

TEST(Results, RaggedTableIsRejected)
{
    Table t;
    t.name = "bad";
    t.add("x", units::length).values = {1.0, 2.0};
    t.add("y", units::length).values = {1.0};
    std::stringstream s;
    EXPECT_THROW(write_csv(s, t), InvalidArgument);
}

TEST(Experiments, SingleAtomSpectrumIsLorentzian)
{
    const RunConfig c = parse_config(R"(
experiment: spectrum
cloud: {radius: 1, atom_count: 1}
spectrum: {detunings: {min: -5, max: 5, step: 0.5}}
)");
    const ResultBundle b = run_experiment(c);
    ASSERT_EQ(b.status, RunStatus::Ok);
    const Table* t = b.find("spectrum");
    ASSERT_NE(t, nullptr);
    ASSERT_EQ(t->rows(), 21u);
    for (std::size_t r = 0; r < t->rows(); ++r) {
        const double d = t->column("delta").values[r];
        EXPECT_NEAR(t->column("sigma").values[r] / units::single_atom_cross_section(d), 1.0, 1e-12);
    }
    EXPECT_NEAR(t->column("sigma").values[10], 6.0 * pi, 6.0 * pi * 1e-12);
}

TEST(Experiments, TwoAtomEigenmodesMatchClosedForm)
{
    const RunConfig c = parse_config(R"(
experiment: eigenmodes
cloud: {radius: 1.5, atom_count: 2, density: 0.01}
ensemble: {configs: 3, seed: 11}
)");
    const ResultBundle b = run_experiment(c);
    ASSERT_EQ(b.status, RunStatus::Ok);
    const Table& modes = *b.find("eigenmodes");
    const Table& atoms = *b.find("atoms");
    ASSERT_EQ(modes.rows(), 18u);
    for (int cfg = 0; cfg < 3; ++cfg) {
        Vec3 p[2];
        for (std::size_t r = 0; r < atoms.rows(); ++r) {
            if (atoms.column("config").values[r] == cfg) {
                const auto a = static_cast<int>(atoms.column("atom").values[r]);
                p[a] = Vec3(atoms.column("x").values[r], atoms.column("y").values[r],
                            atoms.column("z").values[r]);
            }
        }
        const double x = (p[0] - p[1]).norm();
        const complex e = std::exp(I * x) * 0.75 / (x * x * x);
        const complex axial = e * (-2.0 + 2.0 * I * x);
        const complex transverse = e * (1.0 - I * x - x * x);
        std::vector<complex> expected{-0.5 * I + axial,      -0.5 * I - axial,
                                      -0.5 * I + transverse, -0.5 * I + transverse,
                                      -0.5 * I - transverse, -0.5 * I - transverse};
        std::vector<complex> got;
        for (std::size_t r = 0; r < modes.rows(); ++r) {
            if (modes.column("config").values[r] == cfg) {
                got.emplace_back(modes.column("re").values[r], modes.column("im").values[r]);
                EXPECT_EQ(modes.column("width").values[r], -2.0 * got.back().imag());
            }
        }
        ASSERT_EQ(got.size(), 6u);
        for (const complex z : expected) {
            double best = 1e300;
            for (const complex g : got) {
                best = std::min(best, std::abs(g - z));
            }
            EXPECT_LT(best, 1e-10) << "config " << cfg << " eigenvalue " << z;
        }
    }
}

TEST(Experiments, EigenmodesDumpMatrices)
{
    const RunConfig c = parse_config(R"(
experiment: eigenmodes
cloud: {radius: 2, atom_count: 3}
eigenmodes: {dump_matrix: true}
)");
    const ResultBundle b = run_experiment(c);
    ASSERT_EQ(b.attachments.size(), 1u);
    std::istringstream in(b.attachments[0].bytes);
    const Eigen::MatrixXcd h = read_matrix_binary(in);
    EXPECT_EQ(h.rows(), 9);
    EXPECT_EQ(read_matrix_binary(in).size(), 9);
}

TEST(Experiments, SingleShotCrossSectionsAgree)
{
    const RunConfig c = parse_config(R"(
experiment: single-shot
cloud: {radius: 4, density: 0.1}
incident: {detuning: 0.5}
ensemble: {seed: 5}
)");
    const ResultBundle b = run_experiment(c);
    ASSERT_EQ(b.status, RunStatus::Ok);
    const Table& t = *b.find("single_shot");
    ASSERT_EQ(t.rows(), 1u);
    const double ot = t.column("sigma_optical_theorem").values[0];
    const double quad = t.column("sigma_quadrature").values[0];
    EXPECT_GT(t.column("n_atoms").values[0], 10.0);
    EXPECT_NEAR(quad / ot, 1.0, 1e-3);
    EXPECT_EQ(b.find("atoms")->rows(), static_cast<std::size_t>(t.column("n_atoms").values[0]));
}

TEST(Experiments, CbsTablesAreConsistent)
{
    const RunConfig c = parse_config(R"(
experiment: cbs
cloud: {shape: gaussian-sphere, radius: 2, density: 0.2}
angular: {theta_deg: [150, 160, 170, 175, 180], n_azimuth: 4, background_min_deg: 150, background_max_deg: 170}
ensemble: {configs: 40, seed: 3, workers: 4}
)");
    const ResultBundle b = run_experiment(c);
    ASSERT_EQ(b.status, RunStatus::Ok);
    const Table& profile = *b.find("cbs_profile");
    const Table& cone = *b.find("cbs_enhancement");
    ASSERT_EQ(profile.rows(), 5u);
    ASSERT_EQ(cone.rows(), 1u);
    EXPECT_EQ(profile.column("theta").values.back(), pi);
    const auto& hh = profile.column("hh").values;
    EXPECT_DOUBLE_EQ(cone.column("peak_hh").values[0], hh[4]);
    EXPECT_NEAR(cone.column("background_hh").values[0], (hh[0] / 2.0 + hh[1] + hh[2] / 2.0) / 2.0, 1e-12);
    EXPECT_NEAR(cone.column("enhancement_hh").values[0],
                cone.column("peak_hh").values[0] / cone.column("background_hh").values[0], 1e-12);
    EXPECT_GT(cone.column("enhancement_hh_sem").values[0], 0.0);
    EXPECT_EQ(b.summary["background_window_deg"][0], 150.0);
}

TEST(Experiments, FresnelTablesAndVarySeries)
{
    const RunConfig c = parse_config(R"(
experiment: fresnel
cloud: {shape: cylinder, radius: 3, length: 2, density: 0.01}
vary: {parameter: length, values: [2, 4]}
fresnel: {points: 7, z_offset: 2}
ensemble: {configs: 20, seed: 9}
)");
    const ResultBundle b = run_experiment(c);
    ASSERT_EQ(b.status, RunStatus::Ok);
    const Table& profile = *b.find("fresnel_profile");
    const Table& trans = *b.find("transmission");
    EXPECT_EQ(profile.rows(), 14u);
    EXPECT_EQ(b.find("fresnel_map")->rows(), 98u);
    ASSERT_EQ(trans.rows(), 2u);
    EXPECT_EQ(trans.column("length").values, (std::vector<double>{2.0, 4.0}));
    EXPECT_NEAR(trans.column("b_dilute").values[1], 0.01 * 6.0 * pi * 4.0, 1e-12);
    for (std::size_t r = 0; r < 2; ++r) {
        const double t = trans.column("T").values[r];
        EXPECT_GT(t, 0.3);
        EXPECT_LT(t, 1.3);
        EXPECT_NEAR(trans.column("b").values[r], -std::log(t), 1e-12);
    }
    EXPECT_EQ(profile.column("x").values.front(), -4.5);
}

TEST(Experiments, RerunFromMetadataIsBitIdentical)
{
    const fs::path first = scratch("rerun_a");
    const fs::path second = scratch("rerun_b");
    RunConfig c = parse_config(R"(
experiment: spectrum
cloud: {radius: 3, density: 0.05}
spectrum: {detunings: [-1, 0, 1]}
ensemble: {configs: 12, seed: 77, workers: 3}
)");
    c.output.dir = first.string();
    write_bundle(run_experiment(c), first);
    RunConfig again = load_config_file(first / "metadata.json");
    EXPECT_EQ(again, c);
    again.ensemble.workers = 1;
    write_bundle(run_experiment(again), second);
    EXPECT_EQ(slurp(first / "spectrum.csv"), slurp(second / "spectrum.csv"));
}

TEST(Experiments, CheckpointedRunMatchesStraightRun)
{
    const fs::path dir = scratch("ckpt");
    fs::create_directories(dir);
    RunConfig c = parse_config(R"(
experiment: angular
cloud: {radius: 2.5, density: 0.05}
angular: {theta_deg: [30, 90, 180], n_azimuth: 3}
ensemble: {configs: 50, seed: 4, checkpoint_every: 17}
)");
    const ResultBundle straight = run_experiment(c);
    RunOptions opts;
    opts.checkpoint = dir / "run.ckpt";
    const ResultBundle staged = run_experiment(c, opts);
    EXPECT_TRUE(fs::exists(dir / "run.ckpt"));
    EXPECT_EQ(straight.find("angular")->column("hh").values, staged.find("angular")->column("hh").values);

    // A finished checkpoint resumes to the same result without new work.
    const ResultBundle resumed = run_experiment(c, opts);
    EXPECT_EQ(straight.find("angular")->column("hperp").values,
              resumed.find("angular")->column("hperp").values);

    // A checkpoint of a different job is refused.
    c.ensemble.seed = 5;
    const ResultBundle refused = run_experiment(c, opts);
    EXPECT_EQ(refused.status, RunStatus::Failed);
    EXPECT_EQ(exit_code(refused.status), 2);
}

TEST(Experiments, FailingSeriesGivesPartialStatus)
{
    const RunConfig c = parse_config(R"(
experiment: angular
cloud: {radius: 2, density: 0.01, min_separation: 3}
vary: {parameter: density, values: [0.01, 0.5]}
angular: {theta_deg: [90, 180], n_azimuth: 2}
ensemble: {configs: 4}
)");
    const ResultBundle b = run_experiment(c);
    EXPECT_EQ(b.status, RunStatus::Partial);
    EXPECT_EQ(exit_code(b.status), 1);
    EXPECT_EQ(b.find("angular")->rows(), 2u);
    ASSERT_FALSE(b.failures.empty());
    EXPECT_EQ(b.failures.back().series, 1u);
    EXPECT_EQ(b.failures.back().index, -1);

    const fs::path dir = scratch("partial");
    write_bundle(b, dir);
    const auto meta = nlohmann::json::parse(slurp(dir / "metadata.json"));
    EXPECT_EQ(meta["status"], "partial");
    EXPECT_FALSE(meta["failures"].empty());
    EXPECT_EQ(meta["units"]["length"], units::length);
}

TEST(Experiments, AllSeriesFailingGivesFailedStatus)
{
    const RunConfig c = parse_config(R"(
experiment: angular
cloud: {radius: 2, density: 0.5, min_separation: 3}
angular: {theta_deg: [90], n_azimuth: 1}
ensemble: {configs: 3}
)");
    EXPECT_EQ(run_experiment(c).status, RunStatus::Failed);
}

TEST(Experiments, BundleLoadsBack)
{
    const fs::path dir = scratch("load");
    const RunConfig c = parse_config(R"(
experiment: eigenmodes
cloud: {radius: 2, atom_count: 4}
ensemble: {configs: 2}
)");
    const ResultBundle b = run_experiment(c);
    write_bundle(b, dir);
    const ResultBundle back = load_bundle(dir);
    EXPECT_EQ(back.config, b.config);
    ASSERT_EQ(back.tables.size(), b.tables.size());
    EXPECT_EQ(back.tables[0].columns[2].values, b.tables[0].columns[2].values);
    EXPECT_EQ(back.tables[0].columns[2].unit, units::rate);
}

TEST(PlotData, SpectrumByDensityHeaders)
{
    const RunConfig c = parse_config(R"(
experiment: spectrum
cloud: {radius: 2, density: 0.01}
vary: {parameter: density, values: [0.01, 0.05, 0.2]}
spectrum: {detunings: [-1, 0, 1]}
ensemble: {configs: 3}
)");
    const ResultBundle b = run_experiment(c);
    ASSERT_EQ(b.status, RunStatus::Ok);
    const fs::path dir = scratch("f6");
    const fs::path path = emit_plot_data(b, FigureId::F6, dir);
    EXPECT_EQ(path.filename(), "f6.csv");
    std::ifstream in(path);
    const Table t = read_csv(in);
    EXPECT_EQ(headers(t), (std::vector<std::string>{"delta", "sigma(n=0.01)", "sigma(n=0.05)", "sigma(n=0.2)"}));
    EXPECT_EQ(t.rows(), 3u);
    const Table& s = *b.find("spectrum");
    EXPECT_EQ(t.columns[3].values[1], s.column("sigma").values[7]);
    EXPECT_EQ(plot_table(b, FigureId::F7).columns[1].name, "sigma(n=0.01)");
}

TEST(PlotData, AngularHeaders)
{
    const RunConfig c = parse_config(R"(
experiment: angular
cloud: {radius: 2, density: 0.02}
angular: {theta_deg: [0, 90, 180], n_azimuth: 2}
ensemble: {configs: 2}
)");
    const ResultBundle b = run_experiment(c);
    const Table t = plot_table(b, FigureId::F4);
    EXPECT_EQ(headers(t), (std::vector<std::string>{"theta", "I(H∥H)", "I(H⊥H)"}));
    EXPECT_EQ(t.columns[0].values.back(), pi);
}

TEST(PlotData, PolarizationAndDirectionalSpectra)
{
    RunConfig c = parse_config(R"(
experiment: spectrum
cloud: {radius: 2, density: 0.02}
spectrum: {detunings: [0, 1], observable: polarization, angles_deg: [60]}
)");
    EXPECT_EQ(headers(plot_table(run_experiment(c), FigureId::F9)),
              (std::vector<std::string>{"delta", "I(H∥H)", "I(H⊥H)"}));
    c.spectrum.observable = SpectrumObservable::Differential;
    c.spectrum.angles_deg = {30, 90};
    EXPECT_EQ(headers(plot_table(run_experiment(c), FigureId::F8)),
              (std::vector<std::string>{"delta", "I(theta=30deg)", "I(theta=90deg)"}));
}

TEST(PlotData, FresnelFigures)
{
    const RunConfig c = parse_config(R"(
experiment: fresnel
cloud: {shape: cylinder, radius: 2, length: 1, density: 0.01}
vary: {parameter: density, values: [0.01, 0.02]}
fresnel: {points: 5}
ensemble: {configs: 4}
)");
    const ResultBundle b = run_experiment(c);
    const Table f1 = plot_table(b, FigureId::F1);
    EXPECT_EQ(f1.columns.size(), 3u);
    EXPECT_EQ(f1.columns[0].name, "x");
    EXPECT_EQ(f1.columns[1].name.rfind("I_coh(b=", 0), 0u);
    const Table f2 = plot_table(b, FigureId::F2);
    EXPECT_EQ(headers(f2), (std::vector<std::string>{"n", "T_coh", "T_bouguer_lambert"}));
    EXPECT_NEAR(f2.columns[2].values[1], std::exp(-0.02 * 6.0 * pi), 1e-12);
}

TEST(PlotData, MissingExperimentIsNamed)
{
    ResultBundle empty;
    try {
        plot_table(empty, FigureId::F6);
        FAIL() << "no error";
    } catch (const InvalidArgument& e) {
        EXPECT_NE(std::string(e.what()).find("spectrum"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("no results"), std::string::npos);
    }
    try {
        plot_table(empty, FigureId::F5);
        FAIL() << "no error";
    } catch (const InvalidArgument& e) {
        EXPECT_NE(std::string(e.what()).find("cbs"), std::string::npos);
    }
    EXPECT_FALSE(parse_figure("f3").has_value());
}
