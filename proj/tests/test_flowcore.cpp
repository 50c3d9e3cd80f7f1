#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "test_support.hpp"
#include "tfm/flowcore.hpp"
#include "tfm/nets.hpp"

using namespace tfm;
using tfm::testing::random_tensor;

TEST(Interpolate, Midpoint) {
    const Tensor out = interpolate(Tensor::vector({0, 0}), Tensor::vector({2, 4}), 0.5);
    EXPECT_EQ(out, Tensor::vector({1, 2}));
}

TEST(Interpolate, Endpoints) {
    const Tensor a = Tensor::vector({1.5, -2});
    const Tensor b = Tensor::vector({3, 7});
    EXPECT_EQ(interpolate(a, b, 0.0), a);
    EXPECT_EQ(interpolate(a, b, 1.0), b);
    EXPECT_EQ(interpolate(Tensor::vector({4}), Tensor::vector({0}), 0.25), Tensor::vector({3}));
}

TEST(Interpolate, ShapeMismatch) {
    EXPECT_THROW(interpolate(Tensor::vector({1}), Tensor::vector({1, 2}), 0.5), ShapeError);
    EXPECT_THROW(conditional_velocity(Tensor::vector({1}), Tensor::vector({1, 2}), 0.5), ShapeError);
}

TEST(Schedule, BoundariesChecked) {
    for (const Schedule& s : {Schedule::linear(), Schedule::cosine()}) {
        EXPECT_NEAR(s.alpha(0), 1.0, 1e-12);
        EXPECT_NEAR(s.beta(0), 0.0, 1e-12);
        EXPECT_NEAR(s.alpha(1), 0.0, 1e-12);
        EXPECT_NEAR(s.beta(1), 1.0, 1e-12);
    }
    EXPECT_THROW(Schedule("bad", [](double) { return 1.0; }, [](double t) { return t; }, [](double) { return 0.0; },
                          [](double) { return 1.0; }),
                 ContractError);
}

TEST(ConditionalVelocity, LinearIsDifference) {
    const Tensor x0 = Tensor::vector({0, 0});
    const Tensor x1 = Tensor::vector({2, 4});
    for (double t : {0.0, 0.3, 1.0}) {
        EXPECT_EQ(conditional_velocity(x0, x1, t), Tensor::vector({2, 4}));
    }
    EXPECT_EQ(conditional_velocity(x1, x1, 0.4), Tensor::vector({0, 0}));
}

TEST(ConditionalVelocity, CosineAtZero) {
    const Tensor x1 = Tensor::vector({1.0, -2.0});
    const Tensor v = conditional_velocity(Tensor::vector({5, 6}), x1, 0.0, Schedule::cosine());
    EXPECT_NEAR(v[0], std::numbers::pi / 2, 1e-15);
    EXPECT_NEAR(v[1], -std::numbers::pi, 1e-15);
}

TEST(ConditionalTransition, Examples) {
    EXPECT_NEAR(conditional_transition(Tensor::vector({0}), Tensor::vector({10}), 0.3)[0], 3.0, 1e-15);
    const Tensor x1 = Tensor::vector({2, 9});
    EXPECT_EQ(conditional_transition(Tensor::vector({1, 1}), x1, 1.0), x1);
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        const Tensor a = random_tensor({3}, rng);
        const Tensor b = random_tensor({3}, rng);
        const double r = rng.uniform();
        EXPECT_EQ(conditional_transition(a, b, r), interpolate(a, b, r));
    }
}

TEST(TimePairs, ForcedDraws) {
    EXPECT_EQ(time_pair_from(0.3, 0.0).r, 0.3);
    EXPECT_EQ(time_pair_from(0.5, 0.5).r, 0.75);
    EXPECT_THROW(TimePair(0.6, 0.5), ContractError);
}

TEST(TimePairs, DefaultsAndInvariant) {
    const TimeSamplerConfig def;
    EXPECT_EQ(def.kind, TimeSamplerKind::LOGNORM);
    EXPECT_EQ(def.mu, -0.4);
    EXPECT_EQ(def.sigma, 1.0);
    for (const TimeSamplerConfig& cfg : {TimeSamplerConfig{}, TimeSamplerConfig{TimeSamplerKind::UNIFORM, 0, 1, {}, {}},
                                         TimeSamplerConfig{TimeSamplerKind::LOGNORM, 2.0, 3.0, {}, {}}}) {
        Rng rng(7);
        int violations = 0;
        for (int i = 0; i < 100000; ++i) {
            const TimePair p = sample_time_pair(cfg, rng);
            violations += !(0.0 <= p.t && p.t <= p.r && p.r <= 1.0);
        }
        EXPECT_EQ(violations, 0);
    }
}

TEST(TimePairs, RejectsBadSigma) {
    Rng rng(0);
    EXPECT_THROW(sample_time_pair(TimeSamplerConfig{TimeSamplerKind::LOGNORM, 0, 0, {}, {}}, rng), ContractError);
}

TEST(TimePairs, LogitNormalMarginalKs) {
    const TimeSamplerConfig cfg;
    Rng rng(2024);
    std::vector<double> ts(100000);
    for (double& t : ts) {
        t = sample_time_pair(cfg, rng).t;
    }
    std::sort(ts.begin(), ts.end());
    double ks = 0.0;
    const double n = static_cast<double>(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const double z = (std::log(ts[i] / (1.0 - ts[i])) - cfg.mu) / cfg.sigma;
        const double f = 0.5 * std::erfc(-z / std::sqrt(2.0));
        ks = std::max({ks, std::abs(f - static_cast<double>(i) / n), std::abs(f - static_cast<double>(i + 1) / n)});
    }
    EXPECT_LT(ks, 0.01);
}

TEST(UFromX, Basics) {
    const Tensor xt = Tensor::vector({1, 2});
    EXPECT_EQ(u_from_X(xt, xt, TimePair(0.2, 0.6)), Tensor::vector({0, 0}));
    const Tensor v = Tensor::vector({0.5, -1.5});
    const TimePair p(0.25, 0.75);
    const Tensor out = u_from_X(ad::add(xt, ad::scale(v, p.r - p.t)), xt, p);
    EXPECT_NEAR(out[0], 0.5, 1e-15);
    EXPECT_NEAR(out[1], -1.5, 1e-15);
    EXPECT_THROW(u_from_X(xt, xt, TimePair(0.5, 0.5)), ContractError);
}

TEST(UFromX, RoundTrip) {
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        const Tensor x = random_tensor({3}, rng);
        const Tensor xt = random_tensor({3}, rng);
        const TimePair p = time_pair_from(rng.uniform() * 0.9, 0.05 + 0.9 * rng.uniform());
        const Tensor back = ad::add(xt, ad::scale(u_from_X(x, xt, p), p.r - p.t));
        for (std::size_t k = 0; k < 3; ++k) {
            EXPECT_NEAR(back[k], x[k], 1e-12);
        }
    }
}

TEST(UFromX, ResidualModelRecoversNetOutput) {
    Rng rng(4);
    ModelConfig cfg;
    cfg.hidden = {16, 16};
    cfg.time.dim = 8;
    const TfmModel m = TfmModel::create(cfg, rng, InitScheme::Random);
    for (int i = 0; i < 100; ++i) {
        const Tensor x = random_tensor({1, 2}, rng);
        const TimePair p = time_pair_from(rng.uniform() * 0.9, 0.05 + 0.95 * rng.uniform());
        const Tensor X = forward(m, x, p.t, p.r);
        const Tensor u = u_from_X(X, x, p);
        const Tensor net = net_output(m, x, column(1, p.t), column(1, p.r));
        for (std::size_t k = 0; k < 2; ++k) {
            EXPECT_NEAR(u[k], net[k], 1e-10 * std::max(1.0, std::abs(net[k])) / (p.r - p.t));
        }
    }
}
