#include <gtest/gtest.h>

#include <cmath>

#include "tfm/data.hpp"

using namespace tfm;

namespace {

double column_mean(const Tensor& pts, std::size_t c) {
    double s = 0.0;
    for (std::size_t i = 0; i < pts.rows(); ++i) {
        s += pts(i, c);
    }
    return s / static_cast<double>(pts.rows());
}

double max_abs(const Tensor& pts) {
    double m = 0.0;
    for (double v : pts.storage()) {
        m = std::max(m, std::abs(v));
    }
    return m;
}

DatasetSpec spec_of(DatasetKind kind) {
    DatasetSpec s;
    s.kind = kind;
    return s;
}

} // namespace

TEST(MakeTarget, GaussianMeanWithinClt) {
    Rng rng(1);
    const std::size_t n = 10000;
    const TargetSet t = make_target(spec_of(DatasetKind::GAUSSIAN), n, rng);
    ASSERT_EQ(t.points.shape(), (Shape{n, 2}));
    EXPECT_TRUE(t.labels.empty());
    for (std::size_t c = 0; c < 2; ++c) {
        EXPECT_LT(std::abs(column_mean(t.points, c)), 4.0 / std::sqrt(static_cast<double>(n)));
    }
}

TEST(MakeTarget, GlyphInsideScaledBox) {
    Rng rng(2);
    DatasetSpec s = spec_of(DatasetKind::LETTER_GLYPH);
    const TargetSet t = make_target(s, 5000, rng);
    EXPECT_LE(max_abs(t.points), s.scale + 1e-12);
    EXPECT_NEAR(max_abs(t.points), s.scale, 1e-12);
    EXPECT_NEAR(column_mean(t.points, 0), 0.0, 1e-9);
    EXPECT_NEAR(column_mean(t.points, 1), 0.0, 1e-9);
}

TEST(MakeTarget, GlyphHasTheLetterShape) {
    // "M" is 5 cells wide and 7 tall, so x spans about +-1.43 at scale 2. The
    // two vertical strokes make the outer columns dense; the bottom centre is
    // empty.
    Rng rng(3);
    const TargetSet t = make_target(spec_of(DatasetKind::LETTER_GLYPH), 20000, rng);
    std::size_t left = 0;
    std::size_t right = 0;
    std::size_t bottom_centre = 0;
    for (std::size_t i = 0; i < t.points.rows(); ++i) {
        const double x = t.points(i, 0);
        const double y = t.points(i, 1);
        left += x < -1.0;
        right += x > 1.0;
        bottom_centre += std::abs(x) < 0.3 && y < -1.0;
    }
    EXPECT_GT(left, 2000u);
    EXPECT_GT(right, 2000u);
    EXPECT_EQ(bottom_centre, 0u);
}

TEST(MakeTarget, MixtureCountsWithinFiveSigma) {
    Rng rng(4);
    DatasetSpec s = spec_of(DatasetKind::GAUSSIAN_MIXTURE);
    s.n_classes = 8;
    const std::size_t n = 80000;
    const TargetSet t = make_target(s, n, rng);
    ASSERT_EQ(t.labels.size(), n);
    std::vector<std::size_t> counts(8, 0);
    for (int l : t.labels) {
        ASSERT_GE(l, 0);
        ASSERT_LT(l, 8);
        ++counts[static_cast<std::size_t>(l)];
    }
    const double mean = n / 8.0;
    const double sigma = std::sqrt(n * (1.0 / 8.0) * (7.0 / 8.0));
    for (std::size_t c : counts) {
        EXPECT_LT(std::abs(static_cast<double>(c) - mean), 5.0 * sigma);
    }
}

TEST(MakeTarget, MixtureLabelsMatchNearestCentre) {
    Rng rng(5);
    DatasetSpec s = spec_of(DatasetKind::GAUSSIAN_MIXTURE);
    s.n_classes = 8;
    const TargetSet t = make_target(s, 2000, rng);
    // Component k sits at angle 2 pi k / 8 (before normalization, which
    // preserves angles up to a shift of the centroid near 0).
    std::size_t agree = 0;
    for (std::size_t i = 0; i < t.points.rows(); ++i) {
        double a = std::atan2(t.points(i, 1), t.points(i, 0));
        if (a < 0) {
            a += 2 * M_PI;
        }
        const int k = static_cast<int>(std::lround(a / (2 * M_PI / 8))) % 8;
        agree += k == t.labels[i];
    }
    EXPECT_GT(agree, 1990u);
}

TEST(MakeTarget, MoonsAndCheckerboardNormalized) {
    for (DatasetKind k : {DatasetKind::MOONS, DatasetKind::CHECKERBOARD}) {
        Rng rng(6);
        const TargetSet t = make_target(spec_of(k), 3000, rng);
        EXPECT_NEAR(max_abs(t.points), 2.0, 1e-12);
        EXPECT_NEAR(column_mean(t.points, 0), 0.0, 1e-9);
    }
}

TEST(MakeTarget, SameSeedSameData) {
    Rng a(7);
    Rng b(7);
    const TargetSet x = make_target(spec_of(DatasetKind::LETTER_GLYPH), 500, a);
    const TargetSet y = make_target(spec_of(DatasetKind::LETTER_GLYPH), 500, b);
    EXPECT_EQ(x.points, y.points);
    EXPECT_EQ(x.labels, y.labels);
}

TEST(DatasetSpec, ValidationNamesKey) {
    DatasetSpec s = spec_of(DatasetKind::CHECKERBOARD);
    s.n_classes = 2;
    try {
        s.validate();
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.key(), "dataset.n_classes");
    }
    DatasetSpec g;
    g.glyph = "#";
    EXPECT_THROW(g.validate(), ValidationError);
}

TEST(SampleCoupling, IndependentPairs) {
    Rng rng(8);
    const TargetSet t = make_target(spec_of(DatasetKind::GAUSSIAN_MIXTURE), 20000, rng);
    const std::size_t n = 100000;
    const CouplingBatch b = sample_coupling_batch(SourceSpec{}, t, n, rng);
    for (std::size_t c0 = 0; c0 < 2; ++c0) {
        for (std::size_t c1 = 0; c1 < 2; ++c1) {
            const double m0 = column_mean(b.x0, c0);
            const double m1 = column_mean(b.x1, c1);
            double s01 = 0.0;
            double s00 = 0.0;
            double s11 = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double a = b.x0(i, c0) - m0;
                const double d = b.x1(i, c1) - m1;
                s01 += a * d;
                s00 += a * a;
                s11 += d * d;
            }
            EXPECT_LT(std::abs(s01 / std::sqrt(s00 * s11)), 0.02);
        }
    }
}

TEST(SampleCoupling, RingWithZeroWidthHasUnitNorms) {
    Rng rng(9);
    SourceSpec ring;
    ring.kind = SourceKind::RING;
    ring.radius = 1.0;
    ring.width = 0.0;
    const auto samples = sample_coupling(ring, make_target(spec_of(DatasetKind::MOONS), 100, rng), 37, rng);
    ASSERT_EQ(samples.size(), 37u);
    for (const auto& s : samples) {
        EXPECT_NEAR(std::hypot(s.x0[0], s.x0[1]), 1.0, 1e-12);
    }
}

TEST(SampleCoupling, LabelsFollowTarget) {
    Rng rng(10);
    DatasetSpec s = spec_of(DatasetKind::GAUSSIAN_MIXTURE);
    s.n_classes = 8;
    const TargetSet t = make_target(s, 64, rng);
    const CouplingBatch b = sample_coupling_batch(SourceSpec{}, t, 200, rng);
    ASSERT_EQ(b.labels.size(), 200u);
    for (std::size_t i = 0; i < 200; ++i) {
        bool found = false;
        for (std::size_t j = 0; j < t.points.rows() && !found; ++j) {
            found = t.points(j, 0) == b.x1(i, 0) && t.points(j, 1) == b.x1(i, 1) && t.labels[j] == b.labels[i];
        }
        EXPECT_TRUE(found);
    }
}

TEST(SampleCoupling, DimensionMismatchIsShapeError) {
    Rng rng(11);
    SourceSpec src;
    src.dim = 3;
    EXPECT_THROW(sample_coupling_batch(src, make_target(spec_of(DatasetKind::MOONS), 10, rng), 4, rng), ShapeError);
}
