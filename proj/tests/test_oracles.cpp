#include <gtest/gtest.h>

#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "test_support.hpp"
#include "tfm/oracles.hpp"

using namespace tfm;
using tfm::testing::random_tensor;

namespace {

AtomTarget two_atoms_1d() { return AtomTarget::uniform(Tensor::matrix(2, 1, {-1.0, 1.0})); }

GaussianPair standard_pair(std::size_t d = 1) { return GaussianPair(Tensor(Shape{d}), 1.0); }

double inverse_normal_cdf(double p) { return boost::math::quantile(boost::math::normal(), p); }

VelocityField gaussian_field(const GaussianPair& gp) {
    return [gp](const Tensor& x, double tau) { return gaussian_marginal_velocity(x, tau, gp); };
}

} // namespace

TEST(AtomTarget, Validation) {
    EXPECT_THROW(AtomTarget(Tensor::matrix(2, 1, {0, 1}), {0.5, 0.6}), ContractError);
    EXPECT_THROW(AtomTarget(Tensor::matrix(2, 1, {0, 1}), {1.0}), ShapeError);
    EXPECT_THROW(AtomTarget(Tensor::matrix(2, 1, {0, 1}), {1.5, -0.5}), ContractError);
    EXPECT_THROW(GaussianPair(Tensor::vector({0}), 0.0), ContractError);
}

TEST(AtomOracle, SingleAtomIsConditional) {
    const AtomTarget tgt = AtomTarget::uniform(Tensor::matrix(1, 2, {1.5, -0.5}));
    const Tensor a = Tensor::vector({1.5, -0.5});
    const Tensor x = Tensor::vector({0.2, 0.7});
    const double t = 0.4;
    const double r = 0.7;
    const Tensor x0 = ad::scale(ad::sub(x, ad::scale(a, t)), 1.0 / (1.0 - t));
    const Tensor v = marginal_velocity_atoms(x, t, tgt);
    const Tensor tr = marginal_transition_atoms(x, t, r, tgt);
    for (std::size_t c = 0; c < 2; ++c) {
        EXPECT_NEAR(v[c], a[c] - x0[c], 1e-14);
        EXPECT_NEAR(tr[c], (1 - r) * x0[c] + r * a[c], 1e-14);
    }
}

TEST(AtomOracle, PriorAtTimeZero) {
    const AtomTarget tgt = two_atoms_1d();
    EXPECT_NEAR(marginal_velocity_atoms(Tensor::vector({0.5}), 0.0, tgt)[0], -0.5, 1e-15);
    for (double x : {-2.0, 0.3, 1.7}) {
        EXPECT_NEAR(marginal_transition_atoms(Tensor::vector({x}), 0.0, 1.0, tgt)[0], 0.0, 1e-15);
    }
}

TEST(AtomOracle, SymmetryAndDiagonal) {
    const AtomTarget tgt = AtomTarget::uniform(Tensor::matrix(2, 2, {1.0, 2.0, -1.0, -2.0}));
    for (double t : {0.0, 0.3, 0.9, 0.999}) {
        const Tensor v = marginal_velocity_atoms(Tensor::vector({0, 0}), t, tgt);
        EXPECT_NEAR(v[0], 0.0, 1e-12);
        EXPECT_NEAR(v[1], 0.0, 1e-12);
    }
    Rng rng(1);
    for (int i = 0; i < 20; ++i) {
        const Tensor x = random_tensor({2}, rng);
        const double t = 0.95 * rng.uniform();
        const Tensor tr = marginal_transition_atoms(x, t, t, tgt);
        EXPECT_NEAR(tr[0], x[0], 1e-12);
        EXPECT_NEAR(tr[1], x[1], 1e-12);
    }
}

TEST(AtomOracle, PosteriorNormalisedEvenNearOne) {
    const AtomTarget tgt(Tensor::matrix(3, 1, {-3.0, 0.5, 4.0}), {0.2, 0.3, 0.5});
    Rng rng(2);
    for (int i = 0; i < 200; ++i) {
        const double t = i < 100 ? rng.uniform() * 0.999 : 1.0 - 1e-9 * rng.uniform() - 1e-12;
        const auto w = posterior_weights(Tensor::vector({rng.normal(0, 3)}), t, tgt);
        EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-12);
        for (double v : w) {
            EXPECT_TRUE(std::isfinite(v));
        }
    }
}

TEST(AtomOracle, RejectsTimeOne) {
    const AtomTarget tgt = two_atoms_1d();
    EXPECT_THROW(marginal_velocity_atoms(Tensor::vector({0.1}), 1.0, tgt), ContractError);
    EXPECT_THROW(marginal_transition_atoms(Tensor::vector({0.1}), 1.0, 1.0, tgt), ContractError);
    EXPECT_THROW(marginal_transition_atoms(Tensor::vector({0.1}), 0.5, 0.4, tgt), ContractError);
    EXPECT_THROW(marginal_velocity_atoms(Tensor::vector({0.1, 0.2}), 0.5, tgt), ShapeError);
}

TEST(AtomOracle, MatchesLocalMonteCarloAverage) {
    const AtomTarget tgt(Tensor::matrix(2, 1, {-1.0, 1.5}), {0.4, 0.6});
    Rng rng(3);
    const double t = 0.5;
    const double radius = 0.05;
    for (double probe : {-0.4, 0.1, 0.6}) {
        double sum = 0.0;
        std::size_t count = 0;
        for (int i = 0; i < 2000000; ++i) {
            const double x0 = rng.normal();
            const double x1 = rng.uniform() < 0.4 ? -1.0 : 1.5;
            const double xt = (1 - t) * x0 + t * x1;
            if (std::abs(xt - probe) < radius) {
                sum += x1 - x0;
                ++count;
            }
        }
        const double oracle = marginal_velocity_atoms(Tensor::vector({probe}), t, tgt)[0];
        EXPECT_NEAR(sum / static_cast<double>(count), oracle, 5e-2) << "probe " << probe;
    }
}

TEST(GaussianOracle, ClosedFormExamples) {
    const GaussianPair gp = standard_pair();
    for (double x : {-1.0, 0.4, 3.0}) {
        EXPECT_NEAR(gaussian_marginal_velocity(Tensor::vector({x}), 0.5, gp)[0], 0.0, 1e-15);
    }
    EXPECT_NEAR(gaussian_marginal_velocity(Tensor::vector({1.0}), 0.0, gp)[0], -1.0, 1e-15);
    const double t = 0.3;
    EXPECT_NEAR(gaussian_marginal_velocity(Tensor::vector({2.0}), t, gp)[0],
                (2 * t - 1) * 2.0 / ((1 - t) * (1 - t) + t * t), 1e-15);
    EXPECT_NEAR(gaussian_marginal_transition(Tensor::vector({1.0}), 0.0, 0.5, gp)[0], 0.5, 1e-15);
    EXPECT_NEAR(gaussian_flow_map(Tensor::vector({1.0}), 0.0, 0.5, gp)[0], std::sqrt(0.5), 1e-15);
}

TEST(GaussianOracle, AgreesWithAtomDiscretisation) {
    const double s = 1.3;
    const GaussianPair gp(Tensor::vector({0.0}), s);
    Rng rng(4);
    // Stratified draws: one uniform point inside each of the 10^4 quantile cells.
    Tensor atoms(Shape{10000, 1});
    for (std::size_t i = 0; i < 10000; ++i) {
        atoms[i] = s * inverse_normal_cdf((static_cast<double>(i) + rng.uniform()) / 10000.0);
    }
    const AtomTarget tgt = AtomTarget::uniform(atoms);
    for (double t : {0.1, 0.3, 0.5, 0.7}) {
        for (double x : {-1.0, -0.3, 0.0, 0.5, 1.2}) {
            const Tensor xv = Tensor::vector({x});
            EXPECT_NEAR(marginal_velocity_atoms(xv, t, tgt)[0], gaussian_marginal_velocity(xv, t, gp)[0], 2e-2)
                << "t=" << t << " x=" << x;
            EXPECT_NEAR(marginal_transition_atoms(xv, t, 0.9, tgt)[0],
                        gaussian_marginal_transition(xv, t, 0.9, gp)[0], 2e-2);
        }
    }
}

TEST(GaussianOracle, NonzeroMeanFlowMapSolvesOde) {
    const GaussianPair gp(Tensor::vector({1.0, -2.0}), 0.6);
    const Tensor x = Tensor::vector({0.3, 0.8});
    const Tensor exact = gaussian_flow_map(x, 0.1, 0.8, gp);
    const Tensor num = integrate_flow_map(gaussian_field(gp), x, 0.1, 0.8, 200);
    EXPECT_NEAR(num[0], exact[0], 1e-9);
    EXPECT_NEAR(num[1], exact[1], 1e-9);
}

TEST(FlowMap, TrivialCases) {
    const Tensor x = Tensor::vector({0.5, -1.0});
    VelocityField zero = [](const Tensor& y, double) { return Tensor(y.shape()); };
    EXPECT_EQ(integrate_flow_map(zero, x, 0.0, 1.0, 10), x);
    EXPECT_EQ(integrate_flow_map(gaussian_field(standard_pair(2)), x, 0.3, 0.3, 10), x);
    EXPECT_THROW(integrate_flow_map(zero, x, 0.0, 1.0, 0), ContractError);
    VelocityField blowup = [](const Tensor& y, double) { return ad::scale(y, 1e300); };
    EXPECT_THROW(integrate_flow_map(blowup, x, 0.0, 1.0, 4), NumericalError);
}

TEST(FlowMap, GaussianHalfwayValue) {
    const Tensor out = integrate_flow_map(gaussian_field(standard_pair()), Tensor::vector({1.0}), 0.0, 0.5, 100);
    EXPECT_NEAR(out[0], 0.70711, 1e-5);
}

TEST(FlowMap, FourthOrderConvergence) {
    const GaussianPair gp = standard_pair();
    const Tensor x = Tensor::vector({1.0});
    const double exact = gaussian_flow_map(x, 0.0, 0.5, gp)[0];
    const double e1 = std::abs(integrate_flow_map(gaussian_field(gp), x, 0.0, 0.5, 16)[0] - exact);
    const double e2 = std::abs(integrate_flow_map(gaussian_field(gp), x, 0.0, 0.5, 32)[0] - exact);
    EXPECT_GT(e1 / e2, 14.0);
    EXPECT_LT(e1 / e2, 18.0);
}

TEST(FlowMap, Composition) {
    const auto v = gaussian_field(GaussianPair(Tensor::vector({0.5}), 2.0));
    const Tensor x = Tensor::vector({-0.7});
    const Tensor mid = integrate_flow_map(v, x, 0.0, 0.4, 400);
    const Tensor two = integrate_flow_map(v, mid, 0.4, 1.0, 600);
    const Tensor one = integrate_flow_map(v, x, 0.0, 1.0, 1000);
    EXPECT_NEAR(two[0], one[0], 1e-10);
}

TEST(GradEquivalence, SingleAtomIsExact) {
    ModelConfig cfg;
    cfg.hidden = {16, 16};
    cfg.time.dim = 4;
    Rng rng(5);
    const TfmModel m = TfmModel::create(cfg, rng, InitScheme::Random);
    const AtomTarget tgt = AtomTarget::uniform(Tensor::matrix(1, 2, {1.0, -0.5}));
    const double c = grad_equivalence_check(m, tgt, 2000, TimeSamplerConfig{}, rng);
    EXPECT_NEAR(c, 1.0, 1e-12);
}

TEST(GradEquivalence, TwoAtomsAgreeApproximately) {
    ModelConfig cfg;
    cfg.hidden = {16, 16};
    cfg.time.dim = 4;
    Rng rng(6);
    const TfmModel m = TfmModel::create(cfg, rng, InitScheme::Random);
    const AtomTarget tgt = AtomTarget::uniform(Tensor::matrix(2, 2, {1.0, 1.0, -1.0, 0.5}));
    const auto rep = grad_equivalence_report(m, tgt, 20000, TimeSamplerConfig{}, rng);
    EXPECT_GT(rep.cosine, 0.95);
    EXPECT_GT(rep.norm_conditional, 0.0);
}

TEST(GradEquivalence, RejectsConditionalModel) {
    ModelConfig cfg;
    cfg.hidden = {4};
    cfg.time.dim = 2;
    cfg.data_dim = 1;
    cfg.n_classes = 2;
    Rng rng(7);
    const TfmModel m = TfmModel::create(cfg, rng);
    EXPECT_THROW(grad_equivalence_check(m, two_atoms_1d(), 10, TimeSamplerConfig{}, rng), UnsupportedOpError);
}
