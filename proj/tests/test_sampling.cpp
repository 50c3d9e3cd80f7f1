#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"
#include "tfm/data.hpp"
#include "tfm/eval.hpp"
#include "tfm/sampling.hpp"

using namespace tfm;
using tfm::testing::random_tensor;

namespace {

ModelConfig small_config(std::size_t n_classes = 0) {
    ModelConfig cfg;
    cfg.hidden = {16, 16};
    cfg.time.dim = 4;
    cfg.n_classes = n_classes;
    return cfg;
}

} // namespace

TEST(TimeGrid, ParseAndValidate) {
    EXPECT_EQ(TimeGrid::parse("0,0.5,1").knots(), (std::vector<double>{0.0, 0.5, 1.0}));
    EXPECT_EQ(TimeGrid::parse("0, 1").intervals(), 1u);
    EXPECT_THROW(TimeGrid::parse("0,0.5"), ValidationError);
    EXPECT_THROW(TimeGrid::parse("0,0.6,0.4,1"), ValidationError);
    EXPECT_THROW(TimeGrid::parse("0,x,1"), ValidationError);
    EXPECT_THROW(TimeGrid({0.0, 0.5, 0.5, 1.0}), ContractError);
    EXPECT_THROW(TimeGrid::uniform(0), ContractError);
    EXPECT_EQ(TimeGrid::uniform(4).knots(), (std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0}));
}

TEST(SampleMultistep, OneIntervalIsOneCallAndEqualsOnestep) {
    Rng rng(1);
    const TfmModel m = TfmModel::create(small_config(), rng, InitScheme::Random);
    const Tensor x0 = random_tensor({32, 2}, rng);
    const SampleResult res = sample_multistep(m, x0, TimeGrid::parse("0,1"));
    EXPECT_EQ(res.model_calls, 1u);
    EXPECT_EQ(res.samples, sample_onestep(m, x0));
    EXPECT_EQ(res.samples.shape(), x0.shape());
}

TEST(SampleMultistep, CallCountMatchesIntervals) {
    Rng rng(2);
    const TfmModel m = TfmModel::create(small_config(3), rng, InitScheme::Random);
    const Tensor x0 = random_tensor({8, 2}, rng);
    const ClassIds classes(8, 2);
    for (std::size_t k : {1u, 2u, 5u, 10u}) {
        EXPECT_EQ(sample_multistep(m, x0, TimeGrid::uniform(k), classes).model_calls, k);
        EXPECT_EQ(sample_multistep(m, x0, TimeGrid::uniform(k), classes, 3.0).model_calls, 2 * k);
    }
}

TEST(SampleMultistep, TrajectoryRecordsEveryKnot) {
    Rng rng(3);
    const TfmModel m = TfmModel::create(small_config(), rng, InitScheme::Random);
    const Tensor x0 = random_tensor({5, 2}, rng);
    const TimeGrid grid = TimeGrid::parse("0,0.1,0.6,1");
    const SampleResult res = sample_multistep(m, x0, grid);
    ASSERT_EQ(res.trajectory.knots(), 4u);
    EXPECT_EQ(res.trajectory.states().front().batch, x0);
    EXPECT_EQ(res.trajectory.states().back().batch, res.samples);
    for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_EQ(res.trajectory.states()[k].time, grid.knots()[k]);
    }
    EXPECT_EQ(res.samples, forward(m, forward(m, forward(m, x0, 0.0, 0.1), 0.1, 0.6), 0.6, 1.0));
}

TEST(SampleMultistep, DeterministicAndRejectsUnbatchedInput) {
    Rng rng(4);
    const TfmModel m = TfmModel::create(small_config(), rng, InitScheme::Random);
    const Tensor x0 = random_tensor({16, 2}, rng);
    EXPECT_EQ(sample_multistep(m, x0, TimeGrid::uniform(3)).samples,
              sample_multistep(m, x0, TimeGrid::uniform(3)).samples);
    EXPECT_THROW(sample_multistep(m, Tensor::vector({1.0, 2.0}), TimeGrid::uniform(1)), ShapeError);
}

TEST(SampleMultistep, NonFiniteStateIsNumericalError) {
    Rng rng(5);
    const TfmModel m = TfmModel::create(small_config(), rng, InitScheme::Random);
    Tensor x0 = random_tensor({2, 2}, rng);
    x0[1] = std::numeric_limits<double>::infinity();
    EXPECT_THROW(sample_multistep(m, x0, TimeGrid::uniform(2)), NumericalError);
}

TEST(CfgForward, ExtremesAreExact) {
    Rng rng(6);
    const TfmModel m = TfmModel::create(small_config(4), rng, InitScheme::Random);
    const Tensor x = random_tensor({6, 2}, rng);
    const ClassIds c{0, 1, 2, 3, 0, 1};
    EXPECT_EQ(cfg_forward(m, x, 0.2, 0.9, c, 1.0), forward(m, x, 0.2, 0.9, c));
    EXPECT_EQ(cfg_forward(m, x, 0.2, 0.9, c, 0.0), forward(m, x, 0.2, 0.9, ClassIds{}));
    EXPECT_EQ(cfg_forward(m, x, 0.2, 0.9, 2, 1.0), forward(m, x, 0.2, 0.9, ClassIds(6, 2)));
}

TEST(CfgForward, AffineInOmega) {
    Rng rng(7);
    const TfmModel m = TfmModel::create(small_config(4), rng, InitScheme::Random);
    const Tensor x = random_tensor({6, 2}, rng);
    const ClassIds c(6, 3);
    const Tensor a = cfg_forward(m, x, 0.1, 0.5, c, 0.5);
    const Tensor b = cfg_forward(m, x, 0.1, 0.5, c, 2.0);
    const Tensor d = cfg_forward(m, x, 0.1, 0.5, c, 3.5);
    // Equal omega spacing: b - a == d - b.
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_NEAR(b[i] - a[i], d[i] - b[i], 1e-10);
    }
}

TEST(CfgForward, UnconditionalModelIsUnsupported) {
    Rng rng(8);
    const TfmModel m = TfmModel::create(small_config(), rng);
    EXPECT_THROW(cfg_forward(m, random_tensor({2, 2}, rng), 0.0, 1.0, ClassIds{}, 3.0), UnsupportedOpError);
}

TEST(EulerOde, ZeroVelocityIsIdentityAndOneStepIsExplicit) {
    Rng rng(9);
    const FmModel zero = FmModel::create(small_config(), rng);
    const Tensor x0 = random_tensor({10, 2}, rng);
    EXPECT_EQ(euler_ode_sample(zero, x0, 7), x0);

    const FmModel m = FmModel::create(small_config(), rng, InitScheme::Random);
    const Tensor one = euler_ode_sample(m, x0, 1);
    const Tensor expect = ad::add(x0, fm_forward(m, x0, 0.0));
    EXPECT_EQ(one, expect);
    EXPECT_EQ(euler_ode_trajectory(m, x0, 4).model_calls, 4u);
    EXPECT_THROW(euler_ode_sample(m, x0, 0), ContractError);
}

TEST(CompositionGap, FiniteAndZeroForIdentityMap) {
    Rng rng(10);
    const TfmModel identity = TfmModel::create(small_config(), rng);
    const Tensor x0 = random_tensor({20, 2}, rng);
    EXPECT_EQ(composition_gap(identity, x0, 0.5), 0.0);
    const TfmModel m = TfmModel::create(small_config(), rng, InitScheme::Random);
    const double gap = composition_gap(m, x0, 0.3);
    EXPECT_TRUE(std::isfinite(gap));
    EXPECT_GT(gap, 0.0);
    EXPECT_THROW(composition_gap(m, x0, 1.0), ContractError);
}

// Gaussian N(0, I) source and target, independent coupling. Solving the
// identity along the marginal flow gives X(x, t, r) = mean over u in [t, r]
// of E[x_r | x_u = phi_u(x)], a contraction: X(x, 0, r) = A(r) x with
// A(r) = (1/r) int_0^r ((1-r)(1-u) + r u) / s(u) du, s(u)^2 = (1-u)^2 + u^2.
// The one-step output is therefore narrower than N(0, I), not normal.
TEST(SampleOnestep, TrainedGaussianMapMatchesIdentityFixedPoint) {
    auto s = [](double u) { return std::sqrt((1 - u) * (1 - u) + u * u); };
    auto coeff = [&](double r) {
        const int n = 20000;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            const double u = r * (i + 0.5) / n;
            acc += ((1 - r) * (1 - u) + r * u) / s(u);
        }
        return acc / n;
    };
    Rng rng(11);
    ModelConfig cfg;
    cfg.hidden = {64, 64};
    cfg.time.dim = 8;
    TfmModel m = TfmModel::create(cfg, rng);
    const SourceSpec src{};
    DatasetSpec ds;
    ds.kind = DatasetKind::GAUSSIAN;
    const TargetSet target = make_target(ds, 20000, rng);
    Adam adam(AdamConfig{3e-4});
    for (int step = 0; step < 4000; ++step) {
        const CouplingBatch batch = sample_coupling_batch(src, target, 256, rng);
        std::vector<TimePair> pairs;
        for (int i = 0; i < 256; ++i) {
            pairs.push_back(sample_time_pair(TimeSamplerConfig{}, rng));
        }
        adam.step(m.params, tfm_loss(m, batch, pairs, LossConfig{}, rng).grads);
    }
    const Tensor x = Tensor::matrix(1, 2, {0.7, 0.0});
    for (double r : {0.2, 0.5}) {
        EXPECT_NEAR(forward(m, x, 0.0, r)(0, 0) / 0.7, coeff(r), 0.06) << "r=" << r;
    }
    const Tensor out = sample_onestep(m, sample_source(src, 10000, rng));
    double var = 0.0;
    for (double v : out.storage()) {
        var += v * v;
    }
    var /= static_cast<double>(out.storage().size());
    EXPECT_LT(var, 0.6);
    EXPECT_GT(sliced_w2(out, sample_source(src, 10000, rng), kDefaultProjections, rng), 0.1);
}
