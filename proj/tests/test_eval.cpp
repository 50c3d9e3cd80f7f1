#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "test_support.hpp"
#include "tfm/eval.hpp"

using namespace tfm;
using tfm::testing::random_tensor;

namespace {

std::size_t count_of(const std::string& text, const std::string& needle) {
    std::size_t n = 0;
    for (std::size_t at = text.find(needle); at != std::string::npos; at = text.find(needle, at + 1)) {
        ++n;
    }
    return n;
}

double stddev(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) {
        m += x;
    }
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) {
        s += (x - m) * (x - m);
    }
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

} // namespace

TEST(SlicedW2, IdenticalSetsGiveZero) {
    Rng rng(1);
    const Tensor a = random_tensor({300, 2}, rng);
    EXPECT_EQ(sliced_w2(a, a, 64, rng), 0.0);
}

TEST(SlicedW2, DiracsGiveDistance) {
    Rng rng(2);
    EXPECT_NEAR(sliced_w2(Tensor::matrix(1, 1, {0.5}), Tensor::matrix(1, 1, {-1.25}), 16, rng), 1.75, 1e-12);
}

TEST(SlicedW2, ShiftedGaussiansIn1D) {
    Rng rng(3);
    const std::size_t n = 10000;
    for (double mu : {0.5, 1.0, 2.0}) {
        Tensor a(Shape{n, 1});
        Tensor b(Shape{n, 1});
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = rng.normal();
            b[i] = rng.normal(mu, 1.0);
        }
        EXPECT_NEAR(sliced_w2(a, b, 1, rng), mu, 0.03);
    }
}

TEST(SlicedW2, SymmetricForEqualSeeds) {
    Rng r0(4);
    const Tensor a = random_tensor({200, 2}, r0);
    const Tensor b = random_tensor({150, 2}, r0, 2.0);
    Rng r1(99);
    Rng r2(99);
    EXPECT_EQ(sliced_w2(a, b, 64, r1), sliced_w2(b, a, 64, r2));
}

TEST(SlicedW2, VarianceShrinksWithProjections) {
    Rng r0(5);
    const Tensor a = random_tensor({500, 2}, r0);
    Tensor b = random_tensor({500, 2}, r0);
    for (std::size_t i = 0; i < b.rows(); ++i) {
        b(i, 0) *= 3.0;
    }
    std::vector<double> at64;
    std::vector<double> at256;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng x(seed);
        Rng y(seed + 1000);
        at64.push_back(sliced_w2(a, b, 64, x));
        at256.push_back(sliced_w2(a, b, 256, y));
    }
    EXPECT_LT(stddev(at256), 0.5 * stddev(at64));
}

TEST(SlicedW2, HigherDimensionAndErrors) {
    Rng rng(6);
    const Tensor a = random_tensor({100, 3}, rng);
    EXPECT_GT(sliced_w2(a, random_tensor({100, 3}, rng, 2.0), 32, rng), 0.0);
    EXPECT_THROW(sliced_w2(a, random_tensor({10, 2}, rng), 8, rng), ShapeError);
}

TEST(SlicedW2Report, CarriesSeedAndSize) {
    Rng rng(7);
    const Tensor a = random_tensor({40, 2}, rng);
    const MetricReport r = sliced_w2_report("sw", a, a, 8, 42);
    EXPECT_EQ(r.name, "sw");
    EXPECT_EQ(r.value, 0.0);
    EXPECT_EQ(r.n_samples, 40u);
    EXPECT_EQ(r.seed, 42u);
}

TEST(ResidualSweep, DiagonalGridIsZeroForResidualModel) {
    Rng rng(8);
    ModelConfig cfg;
    cfg.hidden = {16};
    cfg.time.dim = 4;
    const TfmModel m = TfmModel::create(cfg, rng, InitScheme::Random);
    const GaussianPair gp{Tensor::vector({0.0, 0.0}), 1.0};
    const Tensor x0 = random_tensor({50, 2}, rng);
    const Tensor x1 = random_tensor({50, 2}, rng);
    const std::vector<double> g{0.0, 0.3, 0.7};
    // X(x, t, t) = x exactly; the oracles reproduce x_t up to rounding.
    for (double t : g) {
        const ResidualGrid grid = residual_sweep(m, gp, {t}, {t}, x0, x1);
        ASSERT_EQ(grid.cells.size(), 1u);
        EXPECT_LT(grid.cells[0].residual_expectation, 1e-12);
        EXPECT_LT(grid.cells[0].residual_flow_map, 1e-12);
    }
}

TEST(ResidualSweep, UntrainedModelIsPositiveAndCellsSkipReversedPairs) {
    Rng rng(9);
    ModelConfig cfg;
    cfg.hidden = {16};
    cfg.time.dim = 4;
    const TfmModel m = TfmModel::create(cfg, rng, InitScheme::Random);
    const AtomTarget atoms = AtomTarget::uniform(Tensor::matrix(2, 2, {1.0, 1.0, -1.0, 0.0}));
    const Tensor x0 = random_tensor({20, 2}, rng);
    Tensor x1(Shape{20, 2});
    for (std::size_t i = 0; i < 20; ++i) {
        x1(i, 0) = i % 2 ? 1.0 : -1.0;
        x1(i, 1) = i % 2 ? 1.0 : 0.0;
    }
    const ResidualGrid grid = residual_sweep(m, atoms, {0.0, 0.5}, {0.25, 0.75, 0.95}, x0, x1, 32);
    EXPECT_EQ(grid.cells.size(), 5u);
    EXPECT_GT(grid.mean_expectation(), 0.0);
    EXPECT_GT(grid.mean_flow_map(), 0.0);
}

TEST(ResidualSweep, ZeroInitModelVanishesOnlyOnDiagonal) {
    // Zero output layer in RESIDUAL mode: X(x, t, r) = x.
    Rng rng(10);
    ModelConfig cfg;
    cfg.hidden = {8};
    cfg.time.dim = 2;
    const TfmModel m = TfmModel::create(cfg, rng);
    const GaussianPair gp{Tensor::vector({1.0, -1.0}), 0.5};
    const Tensor x0 = random_tensor({30, 2}, rng);
    const Tensor x1 = random_tensor({30, 2}, rng, 0.5);
    const ResidualGrid grid = residual_sweep(m, gp, {0.2, 0.6}, {0.2, 0.6}, x0, x1);
    for (const auto& c : grid.cells) {
        if (c.r == c.t) {
            EXPECT_LT(c.residual_expectation, 1e-12);
        } else {
            EXPECT_GT(c.residual_expectation, 0.0);
            EXPECT_GT(c.residual_flow_map, 0.0);
        }
    }
}

TEST(Svg, EmptyTrajectoryIsMinimalDocument) {
    const std::string svg = trajectory_svg(Trajectory{});
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
    EXPECT_EQ(count_of(svg, "<polyline"), 0u);
}

TEST(Svg, PolylinePerPointWithVertexPerKnot) {
    Rng rng(11);
    Trajectory traj;
    const std::size_t n = 7;
    const std::size_t k = 4;
    for (std::size_t i = 0; i < k; ++i) {
        traj.record(static_cast<double>(i) / (k - 1), random_tensor({n, 2}, rng));
    }
    const std::string svg = trajectory_svg(traj);
    EXPECT_EQ(count_of(svg, "<polyline"), n);
    const std::regex poly("<polyline points=\"([^\"]*)\"");
    for (auto it = std::sregex_iterator(svg.begin(), svg.end(), poly); it != std::sregex_iterator(); ++it) {
        std::istringstream pts((*it)[1].str());
        std::string vertex;
        std::size_t vertices = 0;
        while (pts >> vertex) {
            ++vertices;
        }
        EXPECT_EQ(vertices, k);
    }
    EXPECT_EQ(count_of(svg, "<circle"), 2 * n);
}

TEST(Svg, ByteIdenticalAcrossRunsAndFiles) {
    Rng rng(12);
    const Tensor src = random_tensor({50, 2}, rng);
    const Tensor gen = random_tensor({50, 2}, rng, 2.0);
    const std::string a = scatter_svg({{src, "source"}, {gen, "generated"}});
    const std::string b = scatter_svg({{src, "source"}, {gen, "generated"}});
    EXPECT_EQ(a, b);
    EXPECT_NE(a.find("#1f5fbf"), std::string::npos);
    EXPECT_NE(a.find("#c8302c"), std::string::npos);

    const auto dir = std::filesystem::temp_directory_path() / "tfm_test_eval_svg";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "scatter.svg").string();
    write_scatter_svg({{src, "source"}, {gen, "generated"}}, path);
    std::ifstream f(path);
    std::stringstream ss;
    ss << f.rdbuf();
    EXPECT_EQ(ss.str(), a);
    std::filesystem::remove_all(dir);
}

TEST(Svg, NonPlanarDataUnsupportedAndBadPathIsIoError) {
    Rng rng(13);
    EXPECT_THROW(scatter_svg({{random_tensor({5, 3}, rng), "source"}}), UnsupportedOpError);
    EXPECT_THROW(write_scatter_svg({{random_tensor({5, 2}, rng), "source"}}, "/nonexistent/dir/x.svg"), IoError);
}

TEST(Svg, PanelHasOneFramePerPanel) {
    Rng rng(14);
    std::vector<Panel> panels;
    for (int k : {1, 2, 5}) {
        Trajectory t;
        for (int i = 0; i <= k; ++i) {
            t.record(static_cast<double>(i) / k, random_tensor({10, 2}, rng));
        }
        panels.push_back({"steps=" + std::to_string(k), t});
    }
    const std::string svg = panel_svg(panels);
    EXPECT_EQ(count_of(svg, "<text"), 3u);
    EXPECT_EQ(count_of(svg, "<polyline"), 30u);
    EXPECT_NE(svg.find("steps=5"), std::string::npos);
}
