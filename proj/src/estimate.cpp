#include "mrp/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mrp/error.hpp"

namespace mrp::estimate {

namespace {

void check_fit(const DurationDataset& data, const TransitionFit& fit, int p) {
    fit.kernel.validate();
    const int nstates = static_cast<int>(data.states.size());
    const auto& h = fit.transition;
    if (h.from < 0 || h.from >= nstates || h.to < 0 || h.to >= nstates) {
        throw ConfigError("transition outside the dataset's state set");
    }
    if (fit.covariates.is_identity()) {
        if (data.dim != p) {
            std::ostringstream os;
            os << "identity covariate map needs " << p << " covariates, data has " << data.dim;
            throw ConfigError(os.str());
        }
    } else {
        for (const auto& [column, index] : fit.covariates.entries()) {
            if (column < 0 || column >= data.dim || index < 0 || index >= p) {
                throw ConfigError("covariate map entry out of range for transition " + data.states[static_cast<std::size_t>(h.from)] +
                                  "->" + data.states[static_cast<std::size_t>(h.to)]);
            }
        }
    }
}

std::string transition_label(const DurationDataset& data, Transition h) {
    return data.states.at(static_cast<std::size_t>(h.from)) + "->" + data.states.at(static_cast<std::size_t>(h.to));
}

}  // namespace

std::string to_string(EstimatorKind kind) {
    switch (kind) {
        case EstimatorKind::MEstimator: return "m";
        case EstimatorKind::PartialLikelihood: return "pl";
        case EstimatorKind::NaiveCox: return "naive";
    }
    return "pl";
}

EstimatorKind parse_estimator(const std::string& text) {
    if (text == "m" || text == "m-estimator" || text == "MEstimator") return EstimatorKind::MEstimator;
    if (text == "pl" || text == "partial-likelihood" || text == "PartialLikelihood") return EstimatorKind::PartialLikelihood;
    if (text == "naive" || text == "naive-cox" || text == "NaiveCox") return EstimatorKind::NaiveCox;
    throw ConfigError("unknown estimator '" + text + "' (expected m, pl or naive)");
}

// ---------------------------------------------------------------------------
// Risk sums

RiskEval risk_eval(const DurationDataset& data, std::optional<int> exclude_subject, const TransitionFit& fit, double u,
                   const Vector& beta, double x) {
    const int p = static_cast<int>(beta.size());
    check_fit(data, fit, p);
    RiskEval out{0.0, Vector::Zero(p), Matrix::Zero(p, p)};
    for (const auto& r : data.records) {
        if (r.from_state != fit.transition.from) continue;
        if (exclude_subject && r.subject == *exclude_subject) continue;
        if (!r.at_risk(u)) continue;
        const double k = kernels::kernel_weight(x, r.x, fit.kernel);
        if (k == 0.0) continue;
        const Vector z = fit.covariates.embed(r.z, p);
        const double w = k * std::exp(beta.dot(z));
        out.s0 += w;
        out.s1 += w * z;
        out.s2 += w * z * z.transpose();
    }
    const double n = data.n();
    const double norm = (exclude_subject ? n - 1.0 : n) * fit.kernel.bandwidth;
    out.s0 /= norm;
    out.s1 /= norm;
    out.s2 /= norm;
    return out;
}

RiskView::RiskView(const DurationDataset& data, const TransitionFit& fit, int p) : fit_(fit), n_(data.n()), p_(p) {
    check_fit(data, fit, p);
    std::vector<int> order;
    for (int i = 0; i < static_cast<int>(data.records.size()); ++i) {
        const auto& r = data.records[static_cast<std::size_t>(i)];
        if (r.from_state != fit.transition.from) continue;
        if (!(r.x >= 0.0 && r.x <= fit.kernel.tau)) {
            std::ostringstream os;
            os << "mark " << r.x << " of subject " << data.subject_ids[static_cast<std::size_t>(r.subject)]
               << " outside [0, " << fit.kernel.tau << "]";
            throw DataError(os.str());
        }
        order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return data.records[static_cast<std::size_t>(a)].x < data.records[static_cast<std::size_t>(b)].x;
    });
    const auto m = order.size();
    x_.resize(m);
    gap_.resize(m);
    subject_.resize(m);
    event_.resize(m);
    z_.resize(p, static_cast<Eigen::Index>(m));
    for (std::size_t k = 0; k < m; ++k) {
        const auto& r = data.records[static_cast<std::size_t>(order[k])];
        x_[k] = r.x;
        gap_[k] = r.gap;
        subject_[k] = r.subject;
        event_[k] = r.is_event(fit.transition) ? 1 : 0;
        z_.col(static_cast<Eigen::Index>(k)) = fit.covariates.embed(r.z, p);
        if (event_[k]) events_.push_back(static_cast<int>(k));
    }
}

std::pair<int, int> RiskView::mark_range(double lo, double hi) const {
    const auto first = std::lower_bound(x_.begin(), x_.end(), lo);
    const auto last = std::upper_bound(x_.begin(), x_.end(), hi);
    return {static_cast<int>(first - x_.begin()), static_cast<int>(last - x_.begin())};
}

std::vector<double> RiskView::relative_risk(const Vector& beta) const {
    std::vector<double> out(x_.size());
    const Eigen::RowVectorXd eta = beta.transpose() * z_;
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::exp(eta[static_cast<Eigen::Index>(k)]);
    return out;
}

// ---------------------------------------------------------------------------
// Conditional Aalen-Nelson estimator

double AalenNelsonCurve::value(double v) const {
    const auto end = std::upper_bound(times.begin(), times.end(), v) - times.begin();
    return std::accumulate(increments.begin(), increments.begin() + end, 0.0);
}

double AalenNelsonCurve::variance(double v) const {
    const auto end = std::upper_bound(times.begin(), times.end(), v) - times.begin();
    return std::accumulate(variance_increments.begin(), variance_increments.begin() + end, 0.0);
}

HazardEstimator::HazardEstimator(const DurationDataset& data, const TransitionFit& fit, const Vector& beta)
    : view_(data, fit, static_cast<int>(beta.size())), risk_(view_.relative_risk(beta)) {}

AalenNelsonCurve HazardEstimator::curve(double x, const kernels::KernelSpec& kernel, bool allow_skips) const {
    kernel.validate();
    AalenNelsonCurve out;
    out.x = x;
    out.region = kernels::classify_region(x, kernel);
    out.d_pq = kernels::kernel_l2(out.region.p, out.region.q, kernel.mu);

    const auto support = kernels::kernel_support(x, kernel);
    const auto [first, last] = view_.mark_range(support.lo, support.hi);
    struct Entry {
        int pos;
        double k;  // kernel weight
        double w;  // kernel weight times relative risk
    };
    std::vector<Entry> nbr;
    nbr.reserve(static_cast<std::size_t>(last - first));
    for (int pos = first; pos < last; ++pos) {
        const double k = kernels::kernel_weight(x, view_.x(pos), kernel);
        if (k != 0.0) nbr.push_back({pos, k, k * risk_[static_cast<std::size_t>(pos)]});
    }
    // Ascending gap; ties by view position so the order is fixed.
    std::sort(nbr.begin(), nbr.end(), [&](const Entry& a, const Entry& b) {
        const double ga = view_.gap(a.pos), gb = view_.gap(b.pos);
        return ga < gb || (ga == gb && a.pos < b.pos);
    });
    const auto m = nbr.size();
    // Leave-one-out sums are suffix sums minus the subject's own terms; the
    // subtraction can cancel badly, so the sums are carried in long double.
    std::vector<double> gaps(m);
    std::vector<long double> suffix(m + 1, 0.0L), suffix_k(m + 1, 0.0L), suffix_abs(m + 1, 0.0L);
    for (std::size_t j = 0; j < m; ++j) gaps[j] = view_.gap(nbr[j].pos);
    for (std::size_t j = m; j-- > 0;) {
        suffix[j] = suffix[j + 1] + nbr[j].w;
        suffix_k[j] = suffix_k[j + 1] + nbr[j].k;
        suffix_abs[j] = suffix_abs[j + 1] + std::abs(nbr[j].k);
    }

    // Neighbors grouped by subject, for the leave-one-out correction.
    std::vector<std::size_t> by_subject(m);
    std::iota(by_subject.begin(), by_subject.end(), 0);
    std::stable_sort(by_subject.begin(), by_subject.end(),
                     [&](std::size_t a, std::size_t b) { return view_.subject(nbr[a].pos) < view_.subject(nbr[b].pos); });

    const double n = view_.n_subjects();
    const double a = kernel.bandwidth;
    const double loo_norm = (n - 1.0) * a;
    for (std::size_t j = 0; j < m; ++j) {
        const int pos = nbr[j].pos;
        if (!view_.is_event(pos)) continue;
        ++out.events_in_support;
        const double g = gaps[j];
        const auto start = static_cast<std::size_t>(std::lower_bound(gaps.begin(), gaps.end(), g) - gaps.begin());
        long double own = 0.0L, own_k = 0.0L, own_abs = 0.0L;
        const int subject = view_.subject(pos);
        auto it = std::lower_bound(by_subject.begin(), by_subject.end(), subject,
                                   [&](std::size_t idx, int s) { return view_.subject(nbr[idx].pos) < s; });
        for (; it != by_subject.end() && view_.subject(nbr[*it].pos) == subject; ++it) {
            if (gaps[*it] < g) continue;
            own += nbr[*it].w;
            own_k += nbr[*it].k;
            own_abs += std::abs(nbr[*it].k);
        }
        const double s0 = static_cast<double>((suffix[start] - own) / loo_norm);
        const double mass = static_cast<double>(suffix_k[start] - own_k);
        const double abs_mass = static_cast<double>(suffix_abs[start] - own_abs);
        if (!(s0 > kRiskEpsilon) || mass < kKernelMassFloor * abs_mass) {
            ++out.skipped;
            continue;
        }
        const double jump = nbr[j].k / (n * a * s0);
        out.times.push_back(g);
        out.increments.push_back(jump);
        out.variance_increments.push_back(out.d_pq / (n * a) * jump / s0);
    }
    if (!allow_skips && out.skipped * 2 > out.events_in_support) {
        std::ostringstream os;
        os << "bandwidth too small at x=" << x << ": " << out.skipped << " of " << out.events_in_support
           << " increments had an empty leave-one-out risk set";
        throw BandwidthError(os.str());
    }
    return out;
}

AalenNelsonCurve aalen_nelson(const DurationDataset& data, const TransitionFit& fit, const Vector& beta, double x) {
    return HazardEstimator(data, fit, beta).curve(x);
}

std::vector<double> hazard_stderr(const AalenNelsonCurve& curve, const std::vector<double>& grid_v) {
    std::vector<double> out;
    out.reserve(grid_v.size());
    for (double v : grid_v) out.push_back(std::sqrt(std::max(0.0, curve.variance(v))));
    return out;
}

HazardSurface hazard_surface(const DurationDataset& data, const TransitionFit& fit, const Vector& beta,
                             const std::vector<double>& grid_v, const std::vector<double>& grid_x) {
    for (double v : grid_v) {
        if (!(v >= 0.0 && v <= data.tau0)) {
            std::ostringstream os;
            os << "grid duration " << v << " outside [0, " << data.tau0 << "]";
            throw DomainError(os.str());
        }
    }
    for (double x : grid_x) {
        if (!(x >= 0.0 && x <= fit.kernel.tau)) {
            std::ostringstream os;
            os << "grid mark " << x << " outside [0, " << fit.kernel.tau << "]";
            throw DomainError(os.str());
        }
    }
    HazardSurface out;
    out.transition = fit.transition;
    out.grid_v = grid_v;
    out.grid_x = grid_x;
    const auto nv = static_cast<Eigen::Index>(grid_v.size());
    const auto nx = static_cast<Eigen::Index>(grid_x.size());
    out.values = Matrix::Zero(nv, nx);
    out.stderr_ = Matrix::Zero(nv, nx);
    out.d_pq.assign(grid_x.size(), 0.0);
    out.skipped.assign(grid_x.size(), 0);
    const HazardEstimator estimator(data, fit, beta);
    if (!data.event_times.contains(fit.transition)) {
        out.warnings.push_back("transition " + transition_label(data, fit.transition) + " has no events; zero surface");
        for (std::size_t j = 0; j < grid_x.size(); ++j) {
            const auto region = kernels::classify_region(grid_x[j], fit.kernel);
            out.d_pq[j] = kernels::kernel_l2(region.p, region.q, fit.kernel.mu);
        }
        return out;
    }
    for (std::size_t j = 0; j < grid_x.size(); ++j) {
        const auto curve = estimator.curve(grid_x[j]);
        out.d_pq[j] = curve.d_pq;
        out.skipped[j] = curve.skipped;
        const auto se = hazard_stderr(curve, grid_v);
        for (std::size_t i = 0; i < grid_v.size(); ++i) {
            out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = curve.value(grid_v[i]);
            out.stderr_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = se[i];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Smoothed scores

SmoothedScore::SmoothedScore(const DurationDataset& data, std::vector<TransitionFit> fits, EstimatorKind kind, int p)
    : fits_(std::move(fits)), kind_(kind), p_(p), n_(data.n()) {
    if (kind == EstimatorKind::NaiveCox) throw ConfigError("SmoothedScore does not implement the naive Cox score");
    if (n_ < 2) throw DataError("at least two subjects are required");
    views_.reserve(fits_.size());
    pairs_.reserve(fits_.size());
    for (const auto& fit : fits_) {
        const auto& view = views_.emplace_back(data, fit, p);
        Pairs pr;
        pr.offsets.reserve(view.events().size() + 1);
        pr.offsets.push_back(0);
        for (int e : view.events()) {
            const double xe = view.x(e);
            const double ge = view.gap(e);
            const auto support = kernels::kernel_support(xe, fit.kernel);
            const auto [first, last] = view.mark_range(support.lo, support.hi);
            double mass = 0.0, abs_mass = 0.0;
            for (int k = first; k < last; ++k) {
                if (view.subject(k) == view.subject(e) || view.gap(k) < ge) continue;
                const double w = kernels::kernel_weight(xe, view.x(k), fit.kernel);
                if (w == 0.0) continue;
                pr.neighbor.push_back(k);
                pr.weight.push_back(w);
                mass += w;
                abs_mass += std::abs(w);
            }
            pr.offsets.push_back(static_cast<int>(pr.neighbor.size()));
            pr.cancelled.push_back(mass < kKernelMassFloor * abs_mass ? 1 : 0);
        }
        pairs_.push_back(std::move(pr));
    }
}

ScoreEval SmoothedScore::evaluate(const Vector& beta, bool with_info, bool with_contributions) const {
    if (beta.size() != p_) throw DomainError("coefficient vector has the wrong dimension");
    const bool m_kind = kind_ == EstimatorKind::MEstimator;
    ScoreEval out;
    out.score = Vector::Zero(p_);
    if (with_info) out.info = Matrix::Zero(p_, p_);
    Vector s1(p_), ratio(p_), ze(p_);
    Matrix s2(p_, p_);
    for (std::size_t t = 0; t < views_.size(); ++t) {
        const auto& view = views_[t];
        const auto& pr = pairs_[t];
        const auto rr = view.relative_risk(beta);
        const double norm = (n_ - 1.0) * fits_[t].kernel.bandwidth;
        Matrix contrib;
        if (with_contributions) contrib = Matrix::Zero(n_, p_);
        int skipped = 0;
        const auto& events = view.events();
        for (std::size_t i = 0; i < events.size(); ++i) {
            const int e = events[i];
            if (!m_kind && pr.cancelled[i]) {
                ++skipped;
                continue;
            }
            double s0 = 0.0;
            s1.setZero();
            if (with_info) s2.setZero();
            for (int j = pr.offsets[i]; j < pr.offsets[i + 1]; ++j) {
                const int k = pr.neighbor[static_cast<std::size_t>(j)];
                const double w = pr.weight[static_cast<std::size_t>(j)] * rr[static_cast<std::size_t>(k)];
                s0 += w;
                s1.noalias() += w * view.z(k);
                if (with_info) s2.noalias() += w * view.z(k) * view.z(k).transpose();
            }
            s0 /= norm;
            s1 /= norm;
            if (with_info) s2 /= norm;
            ze = view.z(e);
            if (m_kind) {
                out.score.noalias() += ze * s0 - s1;
                if (with_info) out.info.noalias() += s2 - ze * s1.transpose();
                if (with_contributions) {
                    contrib.row(view.subject(e)) += (ze * s0 - s1).transpose();
                    for (int j = pr.offsets[i]; j < pr.offsets[i + 1]; ++j) {
                        const int k = pr.neighbor[static_cast<std::size_t>(j)];
                        const double w = pr.weight[static_cast<std::size_t>(j)] * rr[static_cast<std::size_t>(k)] / norm;
                        contrib.row(view.subject(k)) += w * (ze - view.z(k)).transpose();
                    }
                }
            } else {
                if (!(s0 > kRiskEpsilon)) {
                    ++skipped;
                    continue;
                }
                ratio = s1 / s0;
                out.score.noalias() += ze - ratio;
                if (with_info) out.info.noalias() += s2 / s0 - ratio * ratio.transpose();
                if (with_contributions) {
                    contrib.row(view.subject(e)) += (ze - ratio).transpose();
                    for (int j = pr.offsets[i]; j < pr.offsets[i + 1]; ++j) {
                        const int k = pr.neighbor[static_cast<std::size_t>(j)];
                        const double w =
                            pr.weight[static_cast<std::size_t>(j)] * rr[static_cast<std::size_t>(k)] / (norm * s0);
                        contrib.row(view.subject(k)) -= w * (view.z(k) - ratio).transpose();
                    }
                }
            }
        }
        const int nevents = static_cast<int>(events.size());
        if (skipped * 2 > nevents) {
            std::ostringstream os;
            os << "bandwidth too small: " << skipped << " of " << nevents
               << " events had an empty leave-one-out risk set";
            throw BandwidthError(os.str());
        }
        out.events.push_back(nevents);
        out.skipped.push_back(skipped);
        if (with_contributions) out.per_transition.push_back(std::move(contrib));
    }
    out.score /= n_;
    if (with_info) out.info /= n_;
    if (with_contributions) {
        out.contributions = Matrix::Zero(n_, p_);
        for (const auto& c : out.per_transition) out.contributions += c;
    }
    return out;
}

Vector score_m(const DurationDataset& data, const Vector& beta, const std::vector<TransitionFit>& fits) {
    return SmoothedScore(data, fits, EstimatorKind::MEstimator, static_cast<int>(beta.size())).evaluate(beta, false).score;
}

Vector score_pl(const DurationDataset& data, const Vector& beta, const std::vector<TransitionFit>& fits) {
    return SmoothedScore(data, fits, EstimatorKind::PartialLikelihood, static_cast<int>(beta.size()))
        .evaluate(beta, false)
        .score;
}

Matrix info_m(const DurationDataset& data, const Vector& beta, const std::vector<TransitionFit>& fits) {
    return SmoothedScore(data, fits, EstimatorKind::MEstimator, static_cast<int>(beta.size())).evaluate(beta).info;
}

Matrix info_pl(const DurationDataset& data, const Vector& beta, const std::vector<TransitionFit>& fits) {
    return SmoothedScore(data, fits, EstimatorKind::PartialLikelihood, static_cast<int>(beta.size())).evaluate(beta).info;
}

// ---------------------------------------------------------------------------
// Naive calendar-time Cox score

NaiveCoxScore::NaiveCoxScore(const DurationDataset& data, std::vector<TransitionFit> fits, int p) : p_(p), n_(data.n()) {
    for (const auto& fit : fits) {
        const auto& h = fit.transition;
        const int nstates = static_cast<int>(data.states.size());
        if (h.from < 0 || h.from >= nstates || h.to < 0 || h.to >= nstates) {
            throw ConfigError("transition outside the dataset's state set");
        }
        Block b;
        std::vector<const EpochRecord*> rows;
        for (const auto& r : data.records) {
            if (r.from_state == h.from) rows.push_back(&r);
        }
        const auto m = rows.size();
        b.z.resize(p, static_cast<Eigen::Index>(m));
        for (std::size_t k = 0; k < m; ++k) {
            const auto& r = *rows[k];
            b.entry.push_back(r.entry);
            b.exit.push_back(r.entry + r.gap);
            b.z.col(static_cast<Eigen::Index>(k)) = fit.covariates.embed(r.z, p);
        }
        b.by_exit.resize(m);
        b.by_entry.resize(m);
        std::iota(b.by_exit.begin(), b.by_exit.end(), 0);
        std::iota(b.by_entry.begin(), b.by_entry.end(), 0);
        std::stable_sort(b.by_exit.begin(), b.by_exit.end(), [&](int a, int c) { return b.exit[a] < b.exit[c]; });
        std::stable_sort(b.by_entry.begin(), b.by_entry.end(), [&](int a, int c) { return b.entry[a] < b.entry[c]; });
        for (int k : b.by_exit) {
            if (rows[static_cast<std::size_t>(k)]->is_event(h)) b.events.push_back(k);
        }
        blocks_.push_back(std::move(b));
    }
}

ScoreEval NaiveCoxScore::evaluate(const Vector& beta, bool with_info) const {
    ScoreEval out;
    out.score = Vector::Zero(p_);
    if (with_info) out.info = Matrix::Zero(p_, p_);
    for (const auto& b : blocks_) {
        const auto m = b.entry.size();
        const Eigen::RowVectorXd eta = beta.transpose() * b.z;
        // Suffix sums of w, wZ, wZZ' along the exit and entry orders; the
        // risk set at t is {exit >= t} minus {entry >= t}.
        auto suffix = [&](const std::vector<int>& order, std::vector<double>& c0, Matrix& c1, std::vector<Matrix>& c2) {
            c0.assign(m + 1, 0.0);
            c1 = Matrix::Zero(p_, static_cast<Eigen::Index>(m + 1));
            if (with_info) c2.assign(m + 1, Matrix::Zero(p_, p_));
            for (std::size_t j = m; j-- > 0;) {
                const int k = order[j];
                const double w = std::exp(eta[k]);
                c0[j] = c0[j + 1] + w;
                c1.col(static_cast<Eigen::Index>(j)) = c1.col(static_cast<Eigen::Index>(j + 1)) + w * b.z.col(k);
                if (with_info) c2[j] = c2[j + 1] + w * b.z.col(k) * b.z.col(k).transpose();
            }
        };
        std::vector<double> x0, n0;
        Matrix x1, n1;
        std::vector<Matrix> x2, n2;
        suffix(b.by_exit, x0, x1, x2);
        suffix(b.by_entry, n0, n1, n2);
        std::vector<double> exits(m), entries(m);
        for (std::size_t j = 0; j < m; ++j) {
            exits[j] = b.exit[static_cast<std::size_t>(b.by_exit[j])];
            entries[j] = b.entry[static_cast<std::size_t>(b.by_entry[j])];
        }
        for (int e : b.events) {
            const double t = b.exit[static_cast<std::size_t>(e)];
            const auto ix = static_cast<std::size_t>(std::lower_bound(exits.begin(), exits.end(), t) - exits.begin());
            const auto in = static_cast<std::size_t>(std::lower_bound(entries.begin(), entries.end(), t) - entries.begin());
            const double s0 = x0[ix] - n0[in];
            const Vector s1 = x1.col(static_cast<Eigen::Index>(ix)) - n1.col(static_cast<Eigen::Index>(in));
            const Vector ratio = s1 / s0;
            out.score += b.z.col(e) - ratio;
            if (with_info) out.info += (x2[ix] - n2[in]) / s0 - ratio * ratio.transpose();
        }
        out.events.push_back(static_cast<int>(b.events.size()));
        out.skipped.push_back(0);
    }
    out.score /= n_;
    if (with_info) out.info /= n_;
    return out;
}

Vector naive_cox_score(const DurationDataset& data, const Vector& beta, const std::vector<TransitionFit>& fits) {
    return NaiveCoxScore(data, fits, static_cast<int>(beta.size())).evaluate(beta, false).score;
}

// ---------------------------------------------------------------------------
// Solver and covariances

Matrix covariance_pl(const Matrix& info, int n) {
    Eigen::FullPivLU<Matrix> lu(info);
    if (!lu.isInvertible()) throw NoCovariateContrast();
    Matrix cov = lu.inverse() / static_cast<double>(n);
    return 0.5 * (cov + cov.transpose());
}

Matrix covariance_m(const Matrix& info, const Matrix& contributions, int n, std::vector<std::string>* warnings) {
    Eigen::FullPivLU<Matrix> lu(info);
    if (!lu.isInvertible()) throw NoCovariateContrast();
    const Vector mean = contributions.colwise().mean();
    const Matrix centered = contributions.rowwise() - mean.transpose();
    const Matrix sigma2 = centered.transpose() * centered / static_cast<double>(n);
    if (warnings && sigma2.isZero(0.0)) warnings->emplace_back("score variance is zero; covariance is degenerate");
    const Matrix inv = lu.inverse();
    Matrix cov = inv * sigma2 * inv.transpose() / static_cast<double>(n);
    return 0.5 * (cov + cov.transpose());
}

FitResult solve(const DurationDataset& data, EstimatorKind kind, const std::vector<TransitionFit>& fits,
                const Vector& beta_init, const SolverOptions& options) {
    const int p = static_cast<int>(beta_init.size());
    if (p < 1) throw ConfigError("at least one regression coefficient is required");
    if (fits.empty()) throw ConfigError("no transitions to fit");
    int total_events = 0;
    for (const auto& fit : fits) {
        const auto it = data.event_times.find(fit.transition);
        if (it == data.event_times.end()) continue;
        for (const auto& r : data.records) total_events += r.is_event(fit.transition) ? 1 : 0;
    }
    if (total_events == 0) throw EstimationError("no events for the requested transitions");

    std::optional<SmoothedScore> smoothed;
    std::optional<NaiveCoxScore> naive;
    if (kind == EstimatorKind::NaiveCox) naive.emplace(data, fits, p);
    else smoothed.emplace(data, fits, kind, p);
    auto evaluate = [&](const Vector& beta, bool info, bool contrib) {
        return naive ? naive->evaluate(beta, info) : smoothed->evaluate(beta, info, contrib);
    };

    // The M-estimator score scales by exp(beta'c) under Z -> Z + c, which can
    // put spurious minima of ||score|| along the Newton path. The iteration
    // therefore works on exp(-beta'c) score with c the mean covariate; the
    // root is the same and convergence is still judged on the raw score.
    Vector centre = Vector::Zero(p);
    if (kind == EstimatorKind::MEstimator) {
        double count = 0.0;
        for (const auto& fit : fits) {
            for (const auto& r : data.records) {
                if (r.from_state != fit.transition.from) continue;
                centre += fit.covariates.embed(r.z, p);
                count += 1.0;
            }
        }
        if (count > 0.0) centre /= count;
    }
    auto merit = [&](const Vector& beta, const Vector& score) { return std::exp(-beta.dot(centre)) * score.norm(); };

    FitResult result;
    result.kind = kind;
    result.n_subjects = data.n();
    Vector beta = beta_init;
    ScoreEval current = evaluate(beta, true, false);
    while (true) {
        if (!current.score.allFinite() || !current.info.allFinite()) {
            throw EstimationError("score is not finite at the current iterate");
        }
        Eigen::FullPivLU<Matrix> lu(current.info);
        if (!lu.isInvertible()) throw NoCovariateContrast();
        const double sup = current.score.lpNorm<Eigen::Infinity>();
        result.trace.push_back(sup);
        if (sup < options.tol) break;
        if (result.iterations >= options.max_iter) {
            std::ostringstream os;
            os << "Newton iteration did not converge in " << options.max_iter << " iterations; score sup-norm trace:";
            for (double s : result.trace) os << ' ' << s;
            throw EstimationError(os.str());
        }
        const Matrix jacobian = current.info + current.score * centre.transpose();
        Eigen::FullPivLU<Matrix> step_lu(jacobian);
        const Vector direction = step_lu.isInvertible() ? Vector(step_lu.solve(current.score)) : Vector(lu.solve(current.score));
        const double base = merit(beta, current.score);
        double step = 1.0;
        bool accepted = false;
        for (int h = 0; h <= options.max_halvings; ++h, step *= 0.5) {
            const Vector candidate = beta + step * direction;
            ScoreEval trial;
            try {
                trial = evaluate(candidate, true, false);
            } catch (const BandwidthError&) {
                continue;
            }
            if (trial.score.allFinite() && merit(candidate, trial.score) < base) {
                beta = candidate;
                current = std::move(trial);
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            std::ostringstream os;
            os << "line search failed after " << options.max_halvings << " halvings; score sup-norm trace:";
            for (double s : result.trace) os << ' ' << s;
            throw EstimationError(os.str());
        }
        ++result.iterations;
    }

    result.converged = true;
    result.beta_hat = beta;
    result.final_score_norm = result.trace.back();
    const ScoreEval final_eval = evaluate(beta, true, kind != EstimatorKind::NaiveCox);
    result.information = final_eval.info;
    for (std::size_t t = 0; t < fits.size(); ++t) {
        TransitionDiagnostics d;
        d.transition = fits[t].transition;
        d.bandwidth = kind == EstimatorKind::NaiveCox ? 0.0 : fits[t].kernel.bandwidth;
        d.events = final_eval.events[t];
        d.skipped = final_eval.skipped[t];
        result.transitions.push_back(d);
    }
    switch (kind) {
        case EstimatorKind::MEstimator:
            result.per_subject_scores = final_eval.contributions;
            result.per_transition_scores = final_eval.per_transition;
            result.covariance = covariance_m(final_eval.info, final_eval.contributions, data.n(), &result.warnings);
            break;
        case EstimatorKind::PartialLikelihood:
            result.per_subject_scores = final_eval.contributions;
            result.per_transition_scores = final_eval.per_transition;
            result.covariance = covariance_pl(final_eval.info, data.n());
            break;
        case EstimatorKind::NaiveCox:
            result.covariance = covariance_pl(final_eval.info, data.n());
            result.warnings.emplace_back("naive calendar-time Cox score: comparator only, not a consistent estimator");
            break;
    }
    return result;
}

double rule_bandwidth(const DurationDataset& data, Transition h, EstimatorKind kind, double tau, double scale) {
    std::vector<double> xs;
    std::vector<char> seen(static_cast<std::size_t>(data.n()), 0);
    int subjects = 0;
    for (const auto& r : data.records) {
        if (r.from_state != h.from) continue;
        xs.push_back(r.x);
        if (!seen[static_cast<std::size_t>(r.subject)]) {
            seen[static_cast<std::size_t>(r.subject)] = 1;
            ++subjects;
        }
    }
    if (xs.size() < 2) throw DataError("too few records at risk to choose a bandwidth");
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    if (!(sd > 0.0)) throw DataError("marks have zero spread; cannot choose a bandwidth");
    const double rate = kind == EstimatorKind::MEstimator ? -2.0 / 3.0 : -1.0 / 3.0;
    const double a = scale * sd * std::pow(static_cast<double>(subjects), rate);
    return std::min(a, 0.49 * tau);
}

}  // namespace mrp::estimate
