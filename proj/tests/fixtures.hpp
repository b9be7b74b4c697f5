#pragma once

// Shared builders and brute-force reference implementations for the tests.
// The oracles deliberately re-derive everything from the defining sums with
// plain loops and their own kernel formulas.

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mrp/duration.hpp"
#include "mrp/estimate.hpp"
#include "mrp/model.hpp"

namespace fixtures {

using mrp::Matrix;
using mrp::Vector;

// Single-type renewal model: alpha(u, x) = rate * shape * u^(shape-1) * exp(slope x),
// scalar Z ~ N(0, 1), X ~ U[0, tau], one calendar horizon per subject.
inline mrp::model::ModelSpec renewal_model(double beta, double rate, double shape, double slope, double horizon,
                                           double tau0 = 4.0) {
    using namespace mrp::model;
    ModelSpec spec;
    spec.graph = StateGraph({"S"}, {{0, 0}});
    spec.beta = Vector::Constant(1, beta);
    spec.z_dim = 1;
    WeibullLogLinearHazard w{rate, shape, slope};
    TransitionModel tm;
    tm.baseline = w;
    double sup = 0.0;
    for (int i = 0; i <= 400; ++i) {
        for (int j = 0; j <= 20; ++j) sup = std::max(sup, tm.baseline(tau0 * i / 400.0, j / 20.0));
    }
    tm.bound = sup * 1.05;
    spec.transitions = {tm};
    spec.covariates.z = {ScalarLaw::normal(0.0, 1.0)};
    spec.censoring.mode = CensoringLaw::Mode::Subject;
    spec.censoring.dist = ScalarLaw::constant(horizon);
    spec.tau0 = tau0;
    spec.tau = 1.0;
    return spec;
}

// Illness-death graph 0 -> {1, 2}, 1 -> 2 with constant hazards.
inline mrp::model::ModelSpec illness_death(double beta, double horizon) {
    using namespace mrp::model;
    ModelSpec spec;
    spec.graph = StateGraph({"healthy", "ill", "dead"}, {{0, 1}, {0, 2}, {1, 2}}, true);
    spec.beta = Vector::Constant(1, beta);
    spec.z_dim = 1;
    spec.transitions = {TransitionModel{BaselineHazard(ConstantHazard{0.6}), 0.6, {}}, TransitionModel{BaselineHazard(ConstantHazard{0.3}), 0.3, {}},
                        TransitionModel{BaselineHazard(ConstantHazard{0.8}), 0.8, {}}};
    spec.covariates.z = {ScalarLaw::normal(0.0, 1.0)};
    spec.censoring.mode = CensoringLaw::Mode::Subject;
    spec.censoring.dist = ScalarLaw::constant(horizon);
    spec.tau0 = 6.0;
    spec.tau = 1.0;
    return spec;
}

// ---------------------------------------------------------------------------
// Independent kernel formulas

inline double binom(int n, int k) {
    return std::round(std::tgamma(n + 1.0) / (std::tgamma(k + 1.0) * std::tgamma(n - k + 1.0)));
}

inline double ref_kernel(double r, double p, double q, int mu) {
    if (r < -p || r > q) return 0.0;
    const double c = 2.0 * (2 * mu + 1) * binom(2 * mu - 1, mu);
    const double norm = c * std::pow(p + q, -2.0 * mu - 2.0);
    const double d = p - q;
    if (p >= q) {
        return norm * std::pow(p + r, mu) * std::pow(q - r, mu - 1) *
               (2.0 * r * (d * mu - q) + mu * d * d + 2.0 * q * q);
    }
    return norm * std::pow(p + r, mu - 1) * std::pow(q - r, mu) * (2.0 * r * (d * mu + p) + mu * d * d + 2.0 * p * p);
}

inline double ref_weight(double x, double w, double a, double tau, int mu) {
    if (x > a && x < tau - a) return std::abs(x - w) <= a ? ref_kernel((x - w) / a, 1.0, 1.0, mu) : 0.0;
    if (x <= a) {
        const double q = x / a;
        return w <= x + a ? ref_kernel(q - w / a, 1.0, q, mu) : 0.0;
    }
    const double p = (tau - x) / a;
    return w >= x - a ? ref_kernel((tau - w) / a - p, p, 1.0, mu) : 0.0;
}

// ---------------------------------------------------------------------------
// Random micro datasets

struct Micro {
    mrp::DurationDataset data;
    std::vector<mrp::estimate::TransitionFit> fits;
    Vector beta;
};

// Two states {A, B}, transitions A->B, A->A, B->A; n <= 6 subjects with at
// most 12 spells, tied gaps on purpose, d = 2 covariates, random bandwidth
// (boundary regions included) and random mu.
inline Micro random_micro(std::uint64_t seed, bool multi = true) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Micro m;
    auto& d = m.data;
    d.states = {"A", "B"};
    d.dim = 2;
    const int n = 2 + static_cast<int>(rng() % 5);
    const double tau = 1.0 + unit(rng);
    const std::vector<double> pool = {0.3, 0.5, 0.5, 0.8, 1.1, 1.1, 1.7, 2.0};
    int total = 0;
    for (int i = 0; i < n; ++i) {
        d.subject_ids.push_back("s" + std::to_string(i));
        const int spells = 1 + static_cast<int>(rng() % 2);
        int state = 0;
        double entry = 0.0;
        for (int e = 0; e < spells && total < 12; ++e, ++total) {
            mrp::EpochRecord r;
            r.subject = i;
            r.epoch = e;
            r.from_state = multi ? state : 0;
            r.entry = entry;
            r.gap = unit(rng) < 0.5 ? pool[rng() % pool.size()] : 0.1 + 2.0 * unit(rng);
            r.z = Vector(2);
            r.z << std::round(4.0 * unit(rng) - 2.0) * 0.5, unit(rng) - 0.5;
            r.x = tau * (0.02 + 0.96 * unit(rng));
            const double kind = unit(rng);
            if (kind < 0.2) {
                r.to_state = mrp::kCensored;
            } else if (!multi) {
                r.to_state = 0;
            } else if (state == 0) {
                r.to_state = kind < 0.6 ? 1 : 0;
            } else {
                r.to_state = 0;
            }
            entry += r.gap;
            const bool stop = r.to_state == mrp::kCensored;
            if (r.to_state != mrp::kCensored) state = r.to_state;
            d.records.push_back(r);
            if (stop) break;
        }
    }
    d.reindex();
    const int mu = 1 + static_cast<int>(rng() % 3);
    auto spec = [&] { return mrp::kernels::KernelSpec{mu, tau * (0.15 + 0.3 * unit(rng)), tau}; };
    if (multi) {
        m.fits.push_back({{0, 1}, spec(), mrp::CovariateMap::identity()});
        m.fits.push_back({{0, 0}, spec(), mrp::CovariateMap({{0, 0}})});
        m.fits.push_back({{1, 0}, spec(), mrp::CovariateMap({{1, 1}, {0, 1}})});
    } else {
        m.fits.push_back({{0, 0}, spec(), mrp::CovariateMap::identity()});
    }
    m.beta = Vector(2);
    m.beta << unit(rng) - 0.5, 2.0 * unit(rng) - 1.0;
    return m;
}

// ---------------------------------------------------------------------------
// Brute-force estimators

struct RefRisk {
    double s0 = 0;
    double mass = 0;      // sum of kernel weights
    double abs_mass = 0;  // sum of their absolute values
    Vector s1;
    Matrix s2;
};

inline Vector ref_embed(const mrp::CovariateMap& map, const Vector& z, int p) {
    Vector out = Vector::Zero(p);
    if (map.is_identity()) {
        for (int k = 0; k < p && k < z.size(); ++k) out[k] = z[k];
    } else {
        for (const auto& [c, j] : map.entries()) out[j] += z[c];
    }
    return out;
}

// Leave-one-out (or full-sample) risk sums by direct loops.
inline RefRisk ref_risk(const mrp::DurationDataset& data, std::optional<int> exclude,
                        const mrp::estimate::TransitionFit& fit, double u, const Vector& beta, double x,
                        double weight_scale = 1.0) {
    const int p = static_cast<int>(beta.size());
    RefRisk out{0.0, 0.0, 0.0, Vector::Zero(p), Matrix::Zero(p, p)};
    const double a = fit.kernel.bandwidth;
    for (int j = 0; j < data.n(); ++j) {
        if (exclude && j == *exclude) continue;
        for (const auto& r : data.records) {
            if (r.subject != j || r.from_state != fit.transition.from || r.gap < u) continue;
            const Vector z = ref_embed(fit.covariates, r.z, p);
            const double k = weight_scale * ref_weight(x, r.x, a, fit.kernel.tau, fit.kernel.mu);
            const double w = k * std::exp(beta.dot(z));
            out.mass += k;
            out.abs_mass += std::abs(k);
            out.s0 += w;
            out.s1 += w * z;
            out.s2 += w * z * z.transpose();
        }
    }
    const double norm = (exclude ? data.n() - 1.0 : data.n()) * a;
    out.s0 /= norm;
    out.s1 /= norm;
    out.s2 /= norm;
    return out;
}

struct RefScore {
    Vector score;
    Matrix info;
    int skipped = 0;
    int events = 0;
    std::vector<int> skipped_per_fit;
    std::vector<int> events_per_fit;
};

inline RefScore ref_score(const mrp::DurationDataset& data, const std::vector<mrp::estimate::TransitionFit>& fits,
                          const Vector& beta, bool m_kind, double weight_scale = 1.0, bool loo = true) {
    const int p = static_cast<int>(beta.size());
    RefScore out{Vector::Zero(p), Matrix::Zero(p, p)};
    for (const auto& fit : fits) {
        int skipped = 0, events = 0;
        for (const auto& r : data.records) {
            if (!r.is_event(fit.transition)) continue;
            ++events;
            const auto s = ref_risk(data, loo ? std::optional<int>(r.subject) : std::nullopt, fit, r.gap, beta, r.x,
                                    weight_scale);
            const Vector z = ref_embed(fit.covariates, r.z, p);
            if (m_kind) {
                out.score += z * s.s0 - s.s1;
                out.info += s.s2 - z * s.s1.transpose();
            } else {
                if (!(s.s0 > 1e-10) || s.mass < 0.5 * s.abs_mass) {
                    ++skipped;
                    continue;
                }
                const Vector ratio = s.s1 / s.s0;
                out.score += z - ratio;
                out.info += s.s2 / s.s0 - ratio * ratio.transpose();
            }
        }
        out.skipped += skipped;
        out.events += events;
        out.skipped_per_fit.push_back(skipped);
        out.events_per_fit.push_back(events);
    }
    out.score /= data.n();
    out.info /= data.n();
    return out;
}

// A_hat(v; x) by direct loops; returns {value, skipped}.
inline std::pair<double, int> ref_aalen(const mrp::DurationDataset& data, const mrp::estimate::TransitionFit& fit,
                                        const Vector& beta, double x, double v) {
    const double a = fit.kernel.bandwidth;
    double total = 0.0;
    int skipped = 0;
    for (const auto& r : data.records) {
        if (!r.is_event(fit.transition)) continue;
        const double k = ref_weight(x, r.x, a, fit.kernel.tau, fit.kernel.mu);
        if (k == 0.0) continue;
        const auto s = ref_risk(data, r.subject, fit, r.gap, beta, x);
        if (!(s.s0 > 1e-10) || s.mass < 0.5 * s.abs_mass) {
            ++skipped;
            continue;
        }
        if (r.gap <= v) total += k / (data.n() * a * s.s0);
    }
    return {total, skipped};
}

}  // namespace fixtures
