#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "mrp/error.hpp"
#include "mrp/kernels.hpp"

using namespace mrp::kernels;

namespace {

// Midpoint rule with `points` cells.
template <class F>
double riemann(F f, double lo, double hi, int points) {
    const double h = (hi - lo) / points;
    double total = 0.0;
    for (int i = 0; i < points; ++i) total += f(lo + (i + 0.5) * h);
    return total * h;
}

}  // namespace

TEST(Kernels, NormalizingConstants) {
    EXPECT_DOUBLE_EQ(normalizing_constant(1), 6.0);
    EXPECT_DOUBLE_EQ(normalizing_constant(2), 30.0);
    EXPECT_DOUBLE_EQ(normalizing_constant(3), 140.0);
}

TEST(Kernels, TabulatedInteriorValues) {
    EXPECT_NEAR(kernel_pq(0.0, 1.0, 1.0, 1), 0.75, 1e-15);
    EXPECT_NEAR(kernel_pq(0.0, 1.0, 1.0, 2), 0.9375, 1e-15);
    // (3/4)(1 - r^2) and (15/16)(1 - r^2)^2 at a few points.
    for (double r : {-0.9, -0.3, 0.2, 0.77}) {
        EXPECT_NEAR(kernel_central(r, 1), 0.75 * (1 - r * r), 1e-14);
        EXPECT_NEAR(kernel_central(r, 2), 15.0 / 16.0 * std::pow(1 - r * r, 2), 1e-14);
        EXPECT_NEAR(kernel_central(r, 3), 35.0 / 32.0 * std::pow(1 - r * r, 3), 1e-14);
    }
}

TEST(Kernels, LeftBoundaryHandValue) {
    EXPECT_NEAR(kernel_pq(0.5, 1.0, 0.5, 1), 4.0 / 3.0, 1e-14);
    EXPECT_NEAR(kernel_left(0.5, 1.0, 0.5, 1), 4.0 / 3.0, 1e-14);
}

TEST(Kernels, ZeroOutsideSupport) {
    EXPECT_EQ(kernel_pq(1.01, 1.0, 1.0, 2), 0.0);
    EXPECT_EQ(kernel_pq(-0.6, 0.5, 1.0, 2), 0.0);
    EXPECT_EQ(kernel_pq(0.31, 1.0, 0.3, 1), 0.0);
}

TEST(Kernels, RejectsBadShapeParameters) {
    EXPECT_THROW(kernel_pq(0.0, 0.0, 1.0, 1), mrp::DomainError);
    EXPECT_THROW(kernel_pq(0.0, 1.0, 1.2, 1), mrp::DomainError);
    EXPECT_THROW(normalizing_constant(4), mrp::DomainError);
}

TEST(Kernels, MatchesIndependentFormula) {
    for (int mu = 1; mu <= 3; ++mu) {
        for (double p : {0.1, 0.35, 0.8, 1.0}) {
            for (double q : {0.1, 0.5, 1.0}) {
                for (int i = 0; i <= 40; ++i) {
                    const double r = -p + (p + q) * i / 40.0;
                    EXPECT_NEAR(kernel_pq(r, p, q, mu), fixtures::ref_kernel(r, p, q, mu), 1e-10)
                        << "mu=" << mu << " p=" << p << " q=" << q << " r=" << r;
                }
            }
        }
    }
}

TEST(Kernels, MomentsOnGrid) {
    for (int mu = 1; mu <= 3; ++mu) {
        for (int i = 1; i <= 10; ++i) {
            for (int j = 1; j <= 10; ++j) {
                const double p = i / 10.0, q = j / 10.0;
                EXPECT_NEAR(kernel_moment(p, q, mu, 0), 1.0, 1e-9) << mu << ' ' << p << ' ' << q;
                EXPECT_NEAR(kernel_moment(p, q, mu, 1), 0.0, 1e-9) << mu << ' ' << p << ' ' << q;
            }
        }
    }
}

TEST(Kernels, MomentExamples) {
    EXPECT_NEAR(kernel_moment(1.0, 1.0, 2, 0), 1.0, 1e-12);
    EXPECT_NEAR(kernel_moment(1.0, 0.5, 1, 1), 0.0, 1e-12);
    EXPECT_NEAR(kernel_moment(1.0, 1.0, 1, 2), 0.2, 1e-12);
    EXPECT_THROW(kernel_moment(1.0, 1.0, 1, 3), mrp::DomainError);
}

TEST(Kernels, L2Norms) {
    EXPECT_NEAR(kernel_l2(1.0, 1.0, 1), 0.6, 1e-12);
    EXPECT_NEAR(kernel_l2(1.0, 1.0, 2), 5.0 / 7.0, 1e-12);
    const double riem = riemann([](double r) { return std::pow(kernel_central(r, 1), 2); }, -1.0, 1.0, 1'000'000);
    EXPECT_NEAR(kernel_l2(1.0, 1.0, 1), riem, 1e-9);
}

TEST(Kernels, QuadratureAgreesWithRiemannAtBoundary) {
    for (int mu = 1; mu <= 3; ++mu) {
        const double p = 1.0, q = 0.37;
        const double l2 = riemann([&](double r) { return std::pow(kernel_pq(r, p, q, mu), 2); }, -p, q, 200'000);
        EXPECT_NEAR(kernel_l2(p, q, mu), l2, 1e-7 * l2);
        const double m2 = riemann([&](double r) { return r * r * kernel_pq(r, p, q, mu); }, -p, q, 200'000);
        EXPECT_NEAR(kernel_moment(p, q, mu, 2), m2, 1e-8);
    }
}

TEST(Kernels, BoundaryFormulasReduceToCentral) {
    for (int mu = 1; mu <= 3; ++mu) {
        for (int i = 0; i <= 1000; ++i) {
            const double r = -1.0 + 2.0 * i / 1000.0;
            EXPECT_NEAR(kernel_left(r, 1.0, 1.0, mu), kernel_central(r, mu), 1e-12);
            EXPECT_NEAR(kernel_right(r, 1.0, 1.0, mu), kernel_central(r, mu), 1e-12);
        }
    }
}

TEST(Kernels, CentralIsEven) {
    for (int mu = 1; mu <= 3; ++mu) {
        for (int i = 0; i <= 100; ++i) {
            const double r = i / 100.0;
            EXPECT_NEAR(kernel_central(r, mu), kernel_central(-r, mu), 1e-12);
        }
    }
}

TEST(Kernels, RightIsMirrorOfLeft) {
    // K_{pq}(r) with p < q equals the left kernel with roles swapped, mirrored.
    for (int mu = 1; mu <= 3; ++mu) {
        for (double q : {0.2, 0.6}) {
            for (int i = 0; i <= 50; ++i) {
                const double r = -q + (1.0 + q) * i / 50.0;
                EXPECT_NEAR(kernel_pq(-r, 1.0, q, mu), kernel_pq(r, q, 1.0, mu), 1e-12);
            }
        }
    }
}

TEST(Kernels, ClassifyRegion) {
    const KernelSpec spec{2, 0.1, 1.0};
    auto mid = classify_region(0.5, spec);
    EXPECT_EQ(mid.tag, Region::Interior);
    EXPECT_EQ(mid.p, 1.0);
    EXPECT_EQ(mid.q, 1.0);
    auto left = classify_region(0.05, spec);
    EXPECT_EQ(left.tag, Region::Left);
    EXPECT_NEAR(left.q, 0.5, 1e-15);
    EXPECT_EQ(left.p, 1.0);
    auto right = classify_region(0.95, spec);
    EXPECT_EQ(right.tag, Region::Right);
    EXPECT_NEAR(right.p, 0.5, 1e-12);
    EXPECT_EQ(right.q, 1.0);
    EXPECT_EQ(classify_region(0.1, spec).tag, Region::Left);
    EXPECT_EQ(classify_region(0.9, spec).tag, Region::Right);
    EXPECT_THROW(classify_region(1.0, spec), mrp::DomainError);
    EXPECT_THROW(classify_region(0.0, spec), mrp::DomainError);
    EXPECT_THROW(classify_region(1.2, spec), mrp::DomainError);
    EXPECT_THROW(classify_region(-0.1, spec), mrp::DomainError);
}

TEST(Kernels, SpecValidation) {
    EXPECT_NO_THROW((KernelSpec{2, 0.2, 1.0}.validate()));
    EXPECT_THROW((KernelSpec{2, 0.5, 1.0}.validate()), mrp::DomainError);
    EXPECT_THROW((KernelSpec{2, 0.0, 1.0}.validate()), mrp::DomainError);
    EXPECT_THROW((KernelSpec{4, 0.1, 1.0}.validate()), mrp::DomainError);
    EXPECT_THROW((KernelSpec{0, 0.1, 1.0}.validate()), mrp::DomainError);
}

TEST(Kernels, WeightExamples) {
    const KernelSpec spec{1, 0.1, 1.0};
    EXPECT_NEAR(kernel_weight(0.5, 0.5, spec), 0.75, 1e-15);
    EXPECT_EQ(kernel_weight(0.5, 0.7, spec), 0.0);
    EXPECT_NEAR(kernel_weight(0.05, 0.0, spec), 4.0 / 3.0, 1e-14);
    EXPECT_THROW(kernel_weight(0.5, 1.1, spec), mrp::DomainError);
    EXPECT_THROW(kernel_weight(-0.5, 0.1, spec), mrp::DomainError);
}

TEST(Kernels, WeightMatchesIndependentFormula) {
    for (int mu = 1; mu <= 3; ++mu) {
        const KernelSpec spec{mu, 0.2, 1.3};
        for (double x : {0.01, 0.1, 0.2, 0.5, 1.1, 1.2, 1.29}) {
            for (int i = 0; i <= 130; ++i) {
                const double w = 1.3 * i / 130.0;
                EXPECT_NEAR(kernel_weight(x, w, spec), fixtures::ref_weight(x, w, 0.2, 1.3, mu), 1e-10);
            }
        }
    }
}

TEST(Kernels, WeightIntegratesToBandwidth) {
    for (int mu = 1; mu <= 3; ++mu) {
        const KernelSpec spec{mu, 0.15, 1.0};
        for (double x : {0.03, 0.15, 0.4, 0.5, 0.85, 0.97}) {
            const auto s = kernel_support(x, spec);
            const double mass = riemann([&](double w) { return kernel_weight(x, w, spec); }, s.lo, s.hi, 400'000);
            EXPECT_NEAR(mass, spec.bandwidth, 1e-9 * spec.bandwidth) << "mu=" << mu << " x=" << x;
        }
    }
}

TEST(Kernels, SupportIntervals) {
    const KernelSpec spec{2, 0.1, 1.0};
    auto s = kernel_support(0.5, spec);
    EXPECT_NEAR(s.lo, 0.4, 1e-15);
    EXPECT_NEAR(s.hi, 0.6, 1e-15);
    s = kernel_support(0.05, spec);
    EXPECT_EQ(s.lo, 0.0);
    EXPECT_NEAR(s.hi, 0.15, 1e-15);
    s = kernel_support(0.95, spec);
    EXPECT_NEAR(s.lo, 0.85, 1e-15);
    EXPECT_EQ(s.hi, 1.0);
}
