#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "mrp/error.hpp"
#include "mrp/estimate.hpp"

using namespace mrp;
using namespace mrp::estimate;
using fixtures::Micro;

namespace {

void expect_close(const Matrix& got, const Matrix& want, double tol, const std::string& what) {
    ASSERT_EQ(got.rows(), want.rows()) << what;
    ASSERT_EQ(got.cols(), want.cols()) << what;
    for (Eigen::Index i = 0; i < got.rows(); ++i) {
        for (Eigen::Index j = 0; j < got.cols(); ++j) {
            EXPECT_NEAR(got(i, j), want(i, j), tol * std::max(1.0, std::abs(want(i, j)))) << what << " (" << i << "," << j << ")";
        }
    }
}

// Two subjects, one spell each, both with mark x.
DurationDataset two_subjects(double x, double gap1, double gap2, bool event1 = true, bool event2 = true) {
    DurationDataset d;
    d.states = {"S"};
    d.subject_ids = {"1", "2"};
    d.dim = 1;
    for (int i = 0; i < 2; ++i) {
        EpochRecord r;
        r.subject = i;
        r.gap = i == 0 ? gap1 : gap2;
        r.to_state = (i == 0 ? event1 : event2) ? 0 : kCensored;
        r.z = Vector::Zero(1);
        r.x = x;
        d.records.push_back(r);
    }
    d.reindex();
    return d;
}

DurationDataset simulated(const model::ModelSpec& spec, int n, std::uint64_t seed) {
    return to_duration(model::simulate_cohort(spec, n, seed), spec.graph, spec.tau0);
}

}  // namespace

TEST(Estimate, ParseEstimator) {
    EXPECT_EQ(parse_estimator("m"), EstimatorKind::MEstimator);
    EXPECT_EQ(parse_estimator("pl"), EstimatorKind::PartialLikelihood);
    EXPECT_EQ(parse_estimator("naive"), EstimatorKind::NaiveCox);
    EXPECT_THROW(parse_estimator("cox"), ConfigError);
    EXPECT_EQ(to_string(EstimatorKind::MEstimator), "m");
}

TEST(Estimate, RiskEvalSingleTerm) {
    const double a = 0.1;
    const auto d = two_subjects(0.5, 1.0, 2.0);
    const TransitionFit fit{{0, 0}, {1, a, 1.0}, {}};
    const auto s = risk_eval(d, 0, fit, 1.5, Vector::Zero(1), 0.5);
    EXPECT_NEAR(s.s0, 0.75 / a, 1e-12);
    EXPECT_EQ(s.s1[0], 0.0);
    const auto empty = risk_eval(d, std::nullopt, fit, 2.5, Vector::Zero(1), 0.5);
    EXPECT_EQ(empty.s0, 0.0);
    EXPECT_TRUE(empty.s1.isZero(0.0));
    EXPECT_TRUE(empty.s2.isZero(0.0));
}

TEST(Estimate, RiskEvalBetaZeroIgnoresZ) {
    Micro m = fixtures::random_micro(5);
    Micro shifted = m;
    for (auto& r : shifted.data.records) r.z = r.z * 3.0 + Vector::Constant(2, 1.7);
    for (const auto& fit : m.fits) {
        const double x = 0.5 * fit.kernel.tau;
        EXPECT_NEAR(risk_eval(m.data, 0, fit, 0.4, Vector::Zero(2), x).s0,
                    risk_eval(shifted.data, 0, fit, 0.4, Vector::Zero(2), x).s0, 1e-12);
    }
}

TEST(Estimate, RiskEvalMatchesOracle) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        Micro m = fixtures::random_micro(seed);
        for (const auto& fit : m.fits) {
            for (double frac : {0.05, 0.3, 0.5, 0.93}) {
                const double x = frac * fit.kernel.tau;
                for (double u : {0.0, 0.5, 1.1}) {
                    for (std::optional<int> ex : {std::optional<int>{}, std::optional<int>{0}}) {
                        const auto got = risk_eval(m.data, ex, fit, u, m.beta, x);
                        const auto want = fixtures::ref_risk(m.data, ex, fit, u, m.beta, x);
                        EXPECT_NEAR(got.s0, want.s0, 1e-12 * std::max(1.0, std::abs(want.s0)));
                        expect_close(got.s1, want.s1, 1e-12, "s1");
                        expect_close(got.s2, want.s2, 1e-12, "s2");
                        EXPECT_TRUE(got.s2.isApprox(got.s2.transpose()));
                    }
                }
            }
        }
    }
}

TEST(Estimate, AalenNelsonHandCalculation) {
    const double a = 0.1;
    const auto d = two_subjects(0.5, 1.0, 0.5);
    const TransitionFit fit{{0, 0}, {1, a, 1.0}, {}};
    const auto curve = aalen_nelson(d, fit, Vector::Zero(1), 0.5);
    EXPECT_NEAR(curve.value(0.5), 0.5, 1e-14);
    EXPECT_NEAR(curve.value(10.0), 0.5, 1e-14);
    EXPECT_EQ(curve.value(0.49), 0.0);
    EXPECT_EQ(curve.skipped, 1);
    EXPECT_EQ(curve.events_in_support, 2);
    EXPECT_NEAR(curve.d_pq, 0.6, 1e-12);
    // variance: d/(na) * jump / S0 = 0.6/(0.2) * 0.5 / 7.5
    EXPECT_NEAR(curve.variance(1.0), 0.6 / 0.2 * 0.5 / 7.5, 1e-14);
}

TEST(Estimate, AalenNelsonNoEvents) {
    const auto d = two_subjects(0.5, 1.0, 2.0, false, false);
    const TransitionFit fit{{0, 0}, {2, 0.2, 1.0}, {}};
    const auto curve = aalen_nelson(d, fit, Vector::Zero(1), 0.5);
    EXPECT_EQ(curve.value(5.0), 0.0);
    EXPECT_EQ(hazard_stderr(curve, {1.0, 2.0}), (std::vector<double>{0.0, 0.0}));
}

TEST(Estimate, AalenNelsonTooManySkips) {
    const auto d = two_subjects(0.5, 1.0, 1.0);  // each event's leave-one-out set is the other subject
    const TransitionFit fit{{0, 0}, {1, 0.1, 1.0}, {}};
    EXPECT_NO_THROW(aalen_nelson(d, fit, Vector::Zero(1), 0.5));
    const auto late = two_subjects(0.5, 1.0, 0.4, true, false);  // lone event, empty risk set
    EXPECT_THROW(aalen_nelson(late, fit, Vector::Zero(1), 0.5), BandwidthError);
}

TEST(Estimate, OracleEquivalence) {
    int pl_checked = 0;
    for (std::uint64_t seed = 100; seed < 200; ++seed) {
        Micro m = fixtures::random_micro(seed, seed % 3 != 0);
        const auto ref_m = fixtures::ref_score(m.data, m.fits, m.beta, true);
        expect_close(score_m(m.data, m.beta, m.fits), ref_m.score, 1e-12, "score_m");
        expect_close(info_m(m.data, m.beta, m.fits), ref_m.info, 1e-12, "info_m");

        const auto ref_pl = fixtures::ref_score(m.data, m.fits, m.beta, false);
        bool too_many = false;
        for (std::size_t t = 0; t < ref_pl.events_per_fit.size(); ++t) {
            too_many |= 2 * ref_pl.skipped_per_fit[t] > ref_pl.events_per_fit[t];
        }
        if (too_many) {
            EXPECT_THROW(score_pl(m.data, m.beta, m.fits), BandwidthError);
        } else {
            ++pl_checked;
            expect_close(score_pl(m.data, m.beta, m.fits), ref_pl.score, 1e-12, "score_pl");
            expect_close(info_pl(m.data, m.beta, m.fits), ref_pl.info, 1e-12, "info_pl");
        }

        for (const auto& fit : m.fits) {
            const HazardEstimator est(m.data, fit, m.beta);
            for (double frac : {0.03, 0.2, 0.5, 0.8, 0.99}) {
                const double x = frac * fit.kernel.tau;
                const auto curve = est.curve(x, fit.kernel, true);
                for (double v : {0.3, 0.6, 1.1, 2.5}) {
                    const auto [want, skipped] = fixtures::ref_aalen(m.data, fit, m.beta, x, v);
                    EXPECT_NEAR(curve.value(v), want, 1e-12 * std::max(1.0, std::abs(want)));
                    EXPECT_EQ(curve.skipped, skipped);
                }
            }
        }
    }
    EXPECT_GT(pl_checked, 40);
}

TEST(Estimate, InfoMatchesFiniteDifferences) {
    const double h = 1e-5;
    for (std::uint64_t seed = 300; seed < 320; ++seed) {
        Micro m = fixtures::random_micro(seed);
        for (auto kind : {EstimatorKind::MEstimator, EstimatorKind::PartialLikelihood}) {
            ScoreEval at;
            SmoothedScore score(m.data, m.fits, kind, 2);
            try {
                at = score.evaluate(m.beta);
            } catch (const BandwidthError&) {
                continue;
            }
            Matrix fd(2, 2);
            for (int k = 0; k < 2; ++k) {
                Vector up = m.beta, down = m.beta;
                up[k] += h;
                down[k] -= h;
                fd.col(k) = -(score.evaluate(up, false).score - score.evaluate(down, false).score) / (2 * h);
            }
            const double scale = std::max(at.info.norm(), 1e-4);
            EXPECT_LT((fd - at.info).norm() / scale, 1e-6) << "seed " << seed << " kind " << to_string(kind);
        }
    }
}

TEST(Estimate, ZeroCovariatesGiveZeroScores) {
    Micro m = fixtures::random_micro(8);
    for (auto& r : m.data.records) r.z.setZero();
    EXPECT_TRUE(score_m(m.data, m.beta, m.fits).isZero(0.0));
    EXPECT_TRUE(info_m(m.data, m.beta, m.fits).isZero(0.0));
    EXPECT_TRUE(naive_cox_score(m.data, m.beta, m.fits).isZero(0.0));
}

TEST(Estimate, IdenticalCovariatesGiveZeroPlScore) {
    Micro m = fixtures::random_micro(12, false);
    for (auto& r : m.data.records) r.z = Vector::Constant(2, 0.7);
    m.fits[0].kernel.bandwidth = 0.45 * m.fits[0].kernel.tau;
    try {
        EXPECT_LT(score_pl(m.data, m.beta, m.fits).norm(), 1e-14);
        EXPECT_LT(info_pl(m.data, m.beta, m.fits).norm(), 1e-14);
    } catch (const BandwidthError&) {
        GTEST_SKIP() << "dataset too sparse";
    }
}

TEST(Estimate, LocationInvariance) {
    // The partial-likelihood score and information are invariant under
    // Z -> Z + c; the M-estimator score is multiplied by exp(beta'c), so it
    // is invariant at beta = 0 and its root does not move.
    for (std::uint64_t seed = 400; seed < 420; ++seed) {
        Micro m = fixtures::random_micro(seed, false);
        Micro s = m;
        const Vector c = (Vector(2) << 0.8, -1.3).finished();
        for (auto& r : s.data.records) r.z += c;
        const double factor = std::exp(m.beta.dot(c));
        expect_close(score_m(s.data, m.beta, m.fits), factor * score_m(m.data, m.beta, m.fits), 1e-10, "m shift");
        expect_close(score_m(s.data, Vector::Zero(2), m.fits), score_m(m.data, Vector::Zero(2), m.fits), 1e-10, "m0");
        try {
            expect_close(score_pl(s.data, m.beta, m.fits), score_pl(m.data, m.beta, m.fits), 1e-10, "pl shift");
            expect_close(info_pl(s.data, m.beta, m.fits), info_pl(m.data, m.beta, m.fits), 1e-10, "info_pl shift");
        } catch (const BandwidthError&) {
        }
    }
}

TEST(Estimate, FittedBetaInvariantUnderShift) {
    const auto spec = fixtures::renewal_model(0.5, 1.0, 1.0, 1.0, 4.0);
    const auto d = simulated(spec, 300, 77);
    auto s = d;
    for (auto& r : s.records) r.z[0] += 2.5;
    for (auto kind : {EstimatorKind::PartialLikelihood, EstimatorKind::MEstimator}) {
        const double a = rule_bandwidth(d, {0, 0}, kind, 1.0);
        const std::vector<TransitionFit> fits{{{0, 0}, {2, a, 1.0}, {}}};
        const auto f1 = solve(d, kind, fits, Vector::Zero(1));
        const auto f2 = solve(s, kind, fits, Vector::Zero(1));
        EXPECT_NEAR(f1.beta_hat[0], f2.beta_hat[0], 1e-8);
    }
}

TEST(Estimate, AalenNelsonScaleEquivariance) {
    const auto spec = fixtures::renewal_model(0.5, 1.0, 1.3, 1.0, 4.0);
    const auto d = simulated(spec, 200, 31);
    auto scaled = d;
    const double c = 2.5;
    for (auto& r : scaled.records) r.gap *= c;
    scaled.tau0 = d.tau0 * c;
    const TransitionFit fit{{0, 0}, {2, 0.2, 1.0}, {}};
    const Vector beta = Vector::Constant(1, 0.5);
    for (double x : {0.1, 0.5, 0.9}) {
        const auto a = aalen_nelson(d, fit, beta, x);
        const auto b = aalen_nelson(scaled, fit, beta, x);
        for (double v : {0.2, 0.7, 1.5, 3.0}) EXPECT_NEAR(b.value(c * v), a.value(v), 1e-12);
    }
}

TEST(Estimate, HazardSurfaceShape) {
    const auto spec = fixtures::renewal_model(0.5, 1.0, 1.0, 1.0, 4.0);
    const auto d = simulated(spec, 300, 5);
    const TransitionFit fit{{0, 0}, {2, 0.15, 1.0}, {}};
    const std::vector<double> gv{0.0, 0.25, 0.5, 1.0, 2.0};
    const std::vector<double> gx{0.05, 0.3, 0.5, 0.7, 0.95};
    const auto s = hazard_surface(d, fit, spec.beta, gv, gx);
    ASSERT_EQ(s.values.rows(), 5);
    ASSERT_EQ(s.values.cols(), 5);
    for (int j = 0; j < 5; ++j) EXPECT_EQ(s.values(0, j), 0.0);
    // Interior kernels are nonnegative, so A_hat is monotone there.
    for (int j = 1; j <= 3; ++j) {
        for (int i = 1; i < 5; ++i) EXPECT_GE(s.values(i, j), s.values(i - 1, j));
        EXPECT_NEAR(s.d_pq[static_cast<std::size_t>(j)], 5.0 / 7.0, 1e-12);
    }
    EXPECT_NE(s.d_pq[0], s.d_pq[2]);
    EXPECT_THROW(hazard_surface(d, fit, spec.beta, {5.0}, gx), DomainError);
    EXPECT_THROW(hazard_surface(d, fit, spec.beta, gv, {1.5}), DomainError);
}

TEST(Estimate, FlatTruthSurface) {
    auto spec = fixtures::renewal_model(0.0, 0.8, 1.0, 0.0, 8.0);
    spec.covariates.z = {model::ScalarLaw::constant(0.0)};
    const auto d = simulated(spec, 1500, 8);
    const TransitionFit fit{{0, 0}, {2, 0.2, 1.0}, {}};
    const auto s = hazard_surface(d, fit, Vector::Zero(1), {0.5, 1.0}, {0.5});
    EXPECT_NEAR(s.values(0, 0), 0.4, 4 * s.stderr_(0, 0));
    EXPECT_NEAR(s.values(1, 0), 0.8, 4 * s.stderr_(1, 0));
}

TEST(Estimate, ContributionsSumToScore) {
    for (std::uint64_t seed = 500; seed < 520; ++seed) {
        Micro m = fixtures::random_micro(seed);
        const SmoothedScore sm(m.data, m.fits, EstimatorKind::MEstimator, 2);
        const auto em = sm.evaluate(m.beta, true, true);
        expect_close(em.contributions.colwise().sum().transpose(), 2.0 * m.data.n() * em.score, 1e-12, "m sum");
        try {
            const SmoothedScore sp(m.data, m.fits, EstimatorKind::PartialLikelihood, 2);
            const auto ep = sp.evaluate(m.beta, true, true);
            expect_close(ep.contributions.colwise().sum().transpose(), m.data.n() * ep.score, 1e-12, "pl sum");
        } catch (const BandwidthError&) {
        }
    }
}

TEST(Estimate, NoCovariateContrast) {
    auto spec = fixtures::renewal_model(0.0, 1.0, 1.0, 1.0, 4.0);
    spec.covariates.z = {model::ScalarLaw::constant(0.0)};
    const auto d = simulated(spec, 100, 3);
    const std::vector<TransitionFit> fits{{{0, 0}, {2, 0.3, 1.0}, {}}};
    for (auto kind : {EstimatorKind::MEstimator, EstimatorKind::PartialLikelihood, EstimatorKind::NaiveCox}) {
        try {
            solve(d, kind, fits, Vector::Zero(1));
            FAIL() << "expected an error";
        } catch (const NoCovariateContrast& e) {
            EXPECT_NE(std::string(e.what()).find("no covariate contrast"), std::string::npos);
        }
    }
}

TEST(Estimate, SolveRecoversBetaAndRestartsAtRoot) {
    const auto spec = fixtures::renewal_model(0.5, 1.0, 1.0, 1.0, 4.0);
    const auto d = simulated(spec, 400, 2718);
    for (auto kind : {EstimatorKind::PartialLikelihood, EstimatorKind::MEstimator}) {
        const double a = rule_bandwidth(d, {0, 0}, kind, 1.0);
        const std::vector<TransitionFit> fits{{{0, 0}, {2, a, 1.0}, {}}};
        const auto fit = solve(d, kind, fits, Vector::Zero(1));
        EXPECT_TRUE(fit.converged);
        EXPECT_LT(fit.final_score_norm, 1e-8);
        const double se = fit.standard_errors()[0];
        EXPECT_GT(se, 0.0);
        EXPECT_NEAR(fit.beta_hat[0], 0.5, 4 * se) << to_string(kind);
        EXPECT_TRUE(fit.covariance.isApprox(fit.covariance.transpose()));
        EXPECT_EQ(fit.per_subject_scores.rows(), d.n());
        const auto again = solve(d, kind, fits, fit.beta_hat);
        EXPECT_LE(again.iterations, 1);
        EXPECT_NEAR(again.beta_hat[0], fit.beta_hat[0], 1e-9);
    }
}

TEST(Estimate, CovarianceHelpers) {
    Matrix info(2, 2);
    info << 2.0, 0.3, 0.1, 1.0;
    Matrix contrib(4, 2);
    contrib << 1, 0, -1, 2, 0.5, -1, -0.5, -1;
    const Matrix cov = covariance_m(info, contrib, 4);
    EXPECT_TRUE(cov.isApprox(cov.transpose()));
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-15);
    std::vector<std::string> warnings;
    const Matrix zero = covariance_m(Matrix::Identity(1, 1), Matrix::Zero(3, 1), 3, &warnings);
    EXPECT_EQ(zero(0, 0), 0.0);
    EXPECT_EQ(warnings.size(), 1u);
    EXPECT_NEAR(covariance_pl(Matrix::Identity(1, 1) * 4.0, 10)(0, 0), 1.0 / 40.0, 1e-15);
    EXPECT_THROW(covariance_pl(Matrix::Zero(2, 2), 10), NoCovariateContrast);
}

TEST(Estimate, NaiveCoxMatchesTextbookCox) {
    // One spell per subject starting at time 0: the calendar and duration
    // scales coincide and the naive score is the ordinary Cox score.
    const auto spec = fixtures::renewal_model(0.5, 1.0, 1.0, 1.0, 4.0);
    const DurationDataset d = to_duration(model::simulate_cohort(spec, 80, 9), spec.graph);
    DurationDataset first;
    first.states = d.states;
    first.subject_ids = d.subject_ids;
    first.dim = d.dim;
    for (const auto& r : d.records) {
        if (r.epoch == 0) first.records.push_back(r);
    }
    first.reindex();
    const std::vector<TransitionFit> fits{{{0, 0}, {2, 0.2, 1.0}, {}}};
    for (double b : {-0.3, 0.0, 0.6}) {
        const Vector beta = Vector::Constant(1, b);
        double ref = 0.0;
        for (const auto& e : first.records) {
            if (!e.is_event()) continue;
            double s0 = 0.0, s1 = 0.0;
            for (const auto& r : first.records) {
                if (r.gap >= e.gap) {
                    const double w = std::exp(b * r.z[0]);
                    s0 += w;
                    s1 += w * r.z[0];
                }
            }
            ref += e.z[0] - s1 / s0;
        }
        ref /= first.n();
        EXPECT_NEAR(naive_cox_score(first, beta, fits)[0], ref, 1e-12);
    }
}

TEST(Estimate, RuleBandwidth) {
    const auto spec = fixtures::renewal_model(0.5, 1.0, 1.0, 1.0, 4.0);
    const auto d = simulated(spec, 500, 4);
    std::vector<double> xs;
    for (const auto& r : d.records) xs.push_back(r.x);
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    EXPECT_NEAR(rule_bandwidth(d, {0, 0}, EstimatorKind::PartialLikelihood, 1.0), sd * std::pow(500.0, -1.0 / 3.0), 1e-14);
    EXPECT_NEAR(rule_bandwidth(d, {0, 0}, EstimatorKind::MEstimator, 1.0, 2.0), 2.0 * sd * std::pow(500.0, -2.0 / 3.0),
                1e-14);
    EXPECT_NEAR(rule_bandwidth(d, {0, 0}, EstimatorKind::PartialLikelihood, 1.0, 100.0), 0.49, 1e-15);
}
