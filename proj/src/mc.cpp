#include "mrp/mc.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <sstream>

#include "mrp/duration.hpp"
#include "mrp/error.hpp"
#include "mrp/io.hpp"
#include "mrp/multistate.hpp"
#include "mrp/parallel.hpp"
#include "mrp/random.hpp"

namespace mrp::mc {

using estimate::EstimatorKind;

namespace {

constexpr double kWaldZ = 1.959963984540054;
const double kNaN = std::numeric_limits<double>::quiet_NaN();

// Stream tags under the master seed.
constexpr std::uint64_t kFitStream = 1;
constexpr std::uint64_t kMartingaleStream = 2;
constexpr std::uint64_t kBiasStream = 3;
constexpr std::uint64_t kBandStream = 4;

std::uint64_t replicate_seed(std::uint64_t master, std::uint64_t stream, int n, int r) {
    return derive_seed(derive_seed(derive_seed(master, stream), static_cast<std::uint64_t>(n)),
                       static_cast<std::uint64_t>(r));
}

struct Data {
    DurationDataset full;
    DurationDataset windowed;
};

Data simulate(const ExperimentSpec& spec, int n, std::uint64_t seed) {
    const auto cohort = model::simulate_cohort(spec.model, n, seed);
    Data d;
    d.full = to_duration(cohort, spec.model.graph);
    d.windowed = apply_window(d.full, spec.window());
    return d;
}

multistate::MultiFitConfig fit_config(const ExperimentSpec& spec, EstimatorKind kind, const BandwidthChoice& bw) {
    multistate::MultiFitConfig c;
    c.kind = kind;
    c.dimension = static_cast<int>(spec.model.beta.size());
    c.mu = spec.mu;
    c.tau = spec.model.tau;
    c.solver = spec.solver;
    if (bw.rule) c.bandwidth_scale = bw.value;
    const auto& hs = spec.model.graph.transitions();
    for (std::size_t t = 0; t < hs.size(); ++t) {
        multistate::TransitionConfig tc;
        tc.transition = hs[t];
        tc.covariates = spec.model.transitions[t].covariates;
        if (!bw.rule) tc.bandwidth = bw.value;
        c.transitions.push_back(tc);
    }
    return c;
}

estimate::TransitionFit hazard_fit(const ExperimentSpec& spec, double bandwidth) {
    const auto t = static_cast<std::size_t>(spec.hazard_transition);
    estimate::TransitionFit fit;
    fit.transition = spec.model.graph.transitions()[t];
    fit.covariates = spec.model.transitions[t].covariates;
    fit.kernel = {spec.mu, bandwidth, spec.model.tau};
    return fit;
}

std::string clean(std::string s) {
    for (auto& c : s) {
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    }
    return s;
}

ReplicateRow fit_one(const ExperimentSpec& spec, const Data& data, EstimatorKind kind, const BandwidthChoice& bw,
                     int n, int r) {
    ReplicateRow row;
    row.estimator = kind;
    row.n = n;
    row.bandwidth = bw;
    row.replicate = r;
    const int p = static_cast<int>(spec.model.beta.size());
    row.beta = Vector::Constant(p, kNaN);
    row.se = Vector::Constant(p, kNaN);
    try {
        const auto& d = kind == EstimatorKind::NaiveCox ? data.full : data.windowed;
        const auto fit = multistate::fit_multistate(d, fit_config(spec, kind, bw), Vector::Zero(p));
        row.ok = true;
        row.converged = fit.converged;
        row.iterations = fit.iterations;
        row.beta = fit.beta_hat;
        row.se = fit.standard_errors();
        int events = 0, skipped = 0;
        for (const auto& t : fit.transitions) {
            events += t.events;
            skipped += t.skipped;
        }
        row.skip_fraction = events ? static_cast<double>(skipped) / events : 0.0;
        if (!fit.transitions.empty()) row.used_bandwidth = fit.transitions.front().bandwidth;
    } catch (const Error& e) {
        row.error = clean(e.what());
    }
    return row;
}

CellSummary summarize(const std::vector<const ReplicateRow*>& rows, const Vector& beta0) {
    CellSummary c;
    const auto p = beta0.size();
    c.estimator = rows.front()->estimator;
    c.n = rows.front()->n;
    c.bandwidth = rows.front()->bandwidth;
    c.replicates = static_cast<int>(rows.size());
    c.bias = c.sd = c.mc_se = c.mean_se = c.coverage = c.coverage_se = Vector::Constant(p, kNaN);
    std::vector<const ReplicateRow*> ok;
    for (const auto* r : rows) {
        if (r->ok) {
            ok.push_back(r);
            if (!r->converged) ++c.not_converged;
        } else {
            ++c.failed;
        }
    }
    c.succeeded = static_cast<int>(ok.size());
    c.valid = c.succeeded >= 2;
    if (ok.empty()) return c;
    const double k = static_cast<double>(ok.size());
    Vector mean = Vector::Zero(p), se = Vector::Zero(p), cover = Vector::Zero(p);
    double skip = 0.0, bw = 0.0;
    for (const auto* r : ok) {
        mean += r->beta;
        se += r->se;
        for (Eigen::Index j = 0; j < p; ++j) {
            if (std::abs(r->beta[j] - beta0[j]) <= kWaldZ * r->se[j]) cover[j] += 1.0;
        }
        skip += r->skip_fraction;
        c.max_skip = std::max(c.max_skip, r->skip_fraction);
        bw += r->used_bandwidth;
    }
    mean /= k;
    c.bias = mean - beta0;
    c.mean_se = se / k;
    c.coverage = cover / k;
    c.coverage_se = (c.coverage.array() * (1.0 - c.coverage.array()) / k).sqrt();
    c.mean_skip = skip / k;
    c.mean_bandwidth = bw / k;
    if (ok.size() >= 2) {
        Vector ss = Vector::Zero(p);
        for (const auto* r : ok) ss += (r->beta - mean).array().square().matrix();
        c.sd = (ss / (k - 1.0)).cwiseSqrt();
        c.mc_se = c.sd / std::sqrt(k);
    }
    return c;
}

struct MeanSe {
    double mean = kNaN;
    double sd = kNaN;
    double se = kNaN;
    int count = 0;
};

MeanSe mean_se(const std::vector<double>& xs) {
    MeanSe out;
    double sum = 0.0;
    for (double x : xs) {
        if (std::isfinite(x)) {
            sum += x;
            ++out.count;
        }
    }
    if (out.count == 0) return out;
    out.mean = sum / out.count;
    if (out.count < 2) return out;
    double ss = 0.0;
    for (double x : xs) {
        if (std::isfinite(x)) ss += (x - out.mean) * (x - out.mean);
    }
    out.sd = std::sqrt(ss / (out.count - 1));
    out.se = out.sd / std::sqrt(static_cast<double>(out.count));
    return out;
}

std::string fmt(double v, int digits = 4) {
    std::ostringstream os;
    os.precision(digits);
    os << v;
    return os.str();
}

std::string vec_text(const Vector& v) {
    std::string out;
    for (Eigen::Index j = 0; j < v.size(); ++j) out += (j ? " " : "") + fmt(v[j]);
    return out;
}

void add_check(ExperimentReport& report, std::string name, double value, std::string requirement, bool pass) {
    report.checks.push_back({std::move(name), value, std::move(requirement), pass});
}

std::string cell_key(const CellSummary& c) {
    return to_string(c.estimator) + " n=" + std::to_string(c.n) + " " + c.bandwidth.describe();
}

void fit_checks(const ExperimentSpec& spec, ExperimentReport& report) {
    const auto& th = spec.thresholds;
    const int n_min = *std::min_element(spec.n_grid.begin(), spec.n_grid.end());
    const int n_max = *std::max_element(spec.n_grid.begin(), spec.n_grid.end());
    const auto find = [&](EstimatorKind kind, int n, const BandwidthChoice& bw) -> const CellSummary* {
        for (const auto& c : report.cells) {
            if (c.estimator == kind && c.n == n && c.bandwidth.rule == bw.rule && c.bandwidth.value == bw.value) {
                return &c;
            }
        }
        return nullptr;
    };
    const auto p = spec.model.beta.size();
    const auto coef = [](Eigen::Index j) { return " beta" + std::to_string(j + 1); };
    const std::string at_max = " n=" + std::to_string(n_max);
    const CellSummary* naive = nullptr;
    for (auto kind : spec.estimators) {
        if (kind == EstimatorKind::NaiveCox) naive = find(kind, n_max, spec.bandwidths(kind).front());
    }
    for (auto kind : spec.estimators) {
        if (kind == EstimatorKind::NaiveCox) continue;
        for (const auto& bw : spec.bandwidths(kind)) {
            const auto* hi = find(kind, n_max, bw);
            const auto* lo = find(kind, n_min, bw);
            const std::string tag = to_string(kind) + " " + bw.describe();
            for (Eigen::Index j = 0; j < p; ++j) {
                if (spec.has(Target::Coverage)) {
                    const double cov = hi && hi->valid ? hi->coverage[j] : kNaN;
                    add_check(report, "coverage " + tag + at_max + coef(j), cov,
                              "in [" + fmt(th.coverage_lo) + ", " + fmt(th.coverage_hi) + "]",
                              std::isfinite(cov) && cov >= th.coverage_lo && cov <= th.coverage_hi);
                    if (n_min != n_max) {
                        const double shrink = lo && hi && lo->valid && hi->valid
                                                  ? std::abs(lo->bias[j]) / std::abs(hi->bias[j])
                                                  : kNaN;
                        add_check(report,
                                  "bias shrink " + tag + " n=" + std::to_string(n_min) + "->" + std::to_string(n_max) +
                                      coef(j),
                                  shrink, ">= " + fmt(th.bias_shrink), std::isfinite(shrink) && shrink >= th.bias_shrink);
                    }
                }
                if (spec.has(Target::Multistate)) {
                    const double z = hi && hi->valid ? std::abs(hi->bias[j]) / hi->mc_se[j] : kNaN;
                    add_check(report, "shared beta " + tag + at_max + coef(j), z,
                              "|bias| / MC SE <= " + fmt(th.multistate_z), std::isfinite(z) && z <= th.multistate_z);
                }
                if (spec.has(Target::Inconsistency)) {
                    const bool ok = naive && hi && naive->valid && hi->valid;
                    const double ratio = ok ? std::abs(naive->bias[j]) / std::abs(hi->bias[j]) : kNaN;
                    add_check(report, "naive / " + tag + " |bias|" + at_max + coef(j), ratio,
                              ">= " + fmt(th.naive_ratio), std::isfinite(ratio) && ratio >= th.naive_ratio);
                }
            }
        }
    }
    if (spec.has(Target::Inconsistency)) {
        for (Eigen::Index j = 0; j < p; ++j) {
            const double z = naive && naive->valid ? std::abs(naive->bias[j]) / naive->mc_se[j] : kNaN;
            add_check(report, "naive |bias| in MC SEs" + at_max + coef(j), z, ">= " + fmt(th.naive_bias_se),
                      std::isfinite(z) && z >= th.naive_bias_se);
        }
    }
}

}  // namespace

std::string to_string(Target target) {
    switch (target) {
        case Target::Coverage: return "coverage";
        case Target::Inconsistency: return "inconsistency";
        case Target::BiasRate: return "bias-rate";
        case Target::Martingale: return "martingale";
        case Target::HazardBand: return "hazard-band";
        case Target::Multistate: return "multistate";
    }
    return "?";
}

Target parse_target(const std::string& text) {
    for (auto t : {Target::Coverage, Target::Inconsistency, Target::BiasRate, Target::Martingale, Target::HazardBand,
                   Target::Multistate}) {
        if (text == to_string(t)) return t;
    }
    if (text == "bias_rate") return Target::BiasRate;
    if (text == "hazard_band") return Target::HazardBand;
    throw ConfigError("unknown target '" + text + "'");
}

std::string BandwidthChoice::describe() const {
    return rule ? (value == 1.0 ? std::string("a=rule") : "a=rule*" + fmt(value, 6)) : "a=" + fmt(value, 6);
}

std::vector<BandwidthChoice> ExperimentSpec::bandwidths() const {
    return bandwidth_grid.empty() ? std::vector<BandwidthChoice>{BandwidthChoice{}} : bandwidth_grid;
}

std::vector<BandwidthChoice> ExperimentSpec::bandwidths(EstimatorKind kind) const {
    const auto it = estimator_bandwidths.find(kind);
    return it == estimator_bandwidths.end() || it->second.empty() ? bandwidths() : it->second;
}

bool ExperimentSpec::has(Target t) const { return std::find(targets.begin(), targets.end(), t) != targets.end(); }

void ExperimentSpec::validate() const {
    model::validate_or_throw(model);
    if (replicates < 2) throw ConfigError("replicates must be >= 2");
    if (n_grid.empty()) throw ConfigError("n_grid must not be empty");
    for (int n : n_grid) {
        if (n < 2) throw ConfigError("every n in n_grid must be >= 2");
    }
    if (targets.empty()) throw ConfigError("no targets");
    if (estimators.empty()) throw ConfigError("no estimators");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (!(window() > 0.0)) throw ConfigError("tau0 must be > 0");
    std::vector<BandwidthChoice> all = bandwidth_grid;
    for (const auto& [kind, list] : estimator_bandwidths) all.insert(all.end(), list.begin(), list.end());
    for (const auto& b : all) {
        if (!(b.value > 0.0) || !std::isfinite(b.value)) throw ConfigError("bandwidths must be positive and finite");
        if (!b.rule && !(2.0 * b.value < model.tau)) throw ConfigError("bandwidth must satisfy 2a < tau");
    }
    const int nh = static_cast<int>(model.graph.transitions().size());
    if (hazard_transition < 0 || hazard_transition >= nh) throw ConfigError("hazard_transition out of range");
    const bool hazard = has(Target::BiasRate) || has(Target::HazardBand);
    if (hazard) {
        if (grid_v.empty() || grid_x.empty()) throw ConfigError("hazard targets need grid_v and grid_x");
        for (double v : grid_v) {
            if (!(v >= 0.0 && v <= window())) throw ConfigError("grid_v outside [0, tau0]");
        }
        for (double x : grid_x) {
            if (!(x > 0.0 && x < model.tau)) throw ConfigError("grid_x outside (0, tau)");
        }
    }
    if (has(Target::BiasRate)) {
        if (bandwidth_grid.size() < 3) throw ConfigError("bias-rate target needs at least 3 bandwidths");
        for (const auto& b : bandwidth_grid) {
            if (b.rule) throw ConfigError("bias-rate bandwidths must be fixed values");
        }
    }
    if (has(Target::Inconsistency) &&
        std::find(estimators.begin(), estimators.end(), EstimatorKind::NaiveCox) == estimators.end()) {
        throw ConfigError("inconsistency target needs the naive estimator");
    }
    if (has(Target::Martingale) && martingale_epochs < 1) throw ConfigError("martingale_epochs must be >= 1");
}

bool ExperimentReport::all_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

const CellSummary* ExperimentReport::cell(EstimatorKind kind, int n) const {
    for (const auto& c : cells) {
        if (c.estimator == kind && c.n == n) return &c;
    }
    return nullptr;
}

BiasRateResult bias_rate_sweep(const ExperimentSpec& spec) {
    if (spec.bandwidth_grid.size() < 3) throw ConfigError("bias-rate sweep needs at least 3 bandwidths");
    for (const auto& b : spec.bandwidth_grid) {
        if (b.rule) throw ConfigError("bias-rate bandwidths must be fixed values");
    }
    const int n = *std::max_element(spec.n_grid.begin(), spec.n_grid.end());
    const auto na = spec.bandwidth_grid.size();
    const auto nx = spec.grid_x.size();
    const auto nv = spec.grid_v.size();
    const auto per_rep = na * nx * nv;
    const auto R = static_cast<std::size_t>(spec.replicates);
    std::vector<double> values(R * per_rep, kNaN);
    const auto fit = hazard_fit(spec, spec.bandwidth_grid.front().value);

    parallel_for(spec.replicates, spec.threads, [&](int r) {
        const auto cohort = model::simulate_cohort(spec.model, n, replicate_seed(spec.master_seed, kBiasStream, n, r));
        const auto data = to_duration(cohort, spec.model.graph, spec.window());
        const estimate::HazardEstimator est(data, fit, spec.model.beta);
        double* out = values.data() + static_cast<std::size_t>(r) * per_rep;
        for (std::size_t ia = 0; ia < na; ++ia) {
            const kernels::KernelSpec kernel{spec.mu, spec.bandwidth_grid[ia].value, spec.model.tau};
            for (std::size_t ix = 0; ix < nx; ++ix) {
                try {
                    const auto curve = est.curve(spec.grid_x[ix], kernel);
                    for (std::size_t iv = 0; iv < nv; ++iv) out[(ia * nx + ix) * nv + iv] = curve.value(spec.grid_v[iv]);
                } catch (const Error&) {
                    // left as NaN: excluded from the replicate mean
                }
            }
        }
    });

    const auto& baseline = spec.model.transitions[static_cast<std::size_t>(spec.hazard_transition)].baseline;
    BiasRateResult res;
    bool any_signal = false;
    std::vector<double> column(R);
    for (std::size_t ia = 0; ia < na; ++ia) {
        const double a = spec.bandwidth_grid[ia].value;
        double sup = -1.0, sup_se = kNaN;
        for (std::size_t ix = 0; ix < nx; ++ix) {
            for (std::size_t iv = 0; iv < nv; ++iv) {
                const auto k = (ia * nx + ix) * nv + iv;
                for (std::size_t r = 0; r < R; ++r) column[r] = values[r * per_rep + k];
                const auto ms = mean_se(column);
                BiasPoint pt;
                pt.bandwidth = a;
                pt.v = spec.grid_v[iv];
                pt.x = spec.grid_x[ix];
                pt.truth = baseline.cumulative(pt.v, pt.x);
                pt.mean = ms.mean;
                pt.bias = ms.mean - pt.truth;
                pt.se = ms.se;
                pt.replicates = ms.count;
                res.points.push_back(pt);
                if (std::isfinite(pt.bias) && std::abs(pt.bias) > sup) {
                    sup = std::abs(pt.bias);
                    sup_se = pt.se;
                }
                if (std::isfinite(pt.bias) && std::abs(pt.bias) > 3.0 * pt.se) any_signal = true;
            }
        }
        res.bandwidths.push_back(a);
        res.sup_bias.push_back(sup < 0.0 ? kNaN : sup);
        res.sup_se.push_back(sup_se);
        res.used.push_back(sup > 0.0 && std::isfinite(sup_se) && sup_se < spec.thresholds.gate * sup);
    }
    if (!any_signal) {
        res.flat = true;
        res.slope = res.slope_se = kNaN;
        res.note = "no bias distinguishable from zero at any bandwidth; slope test skipped";
        return res;
    }
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < na; ++i) {
        if (res.used[i]) {
            lx.push_back(std::log(res.bandwidths[i]));
            ly.push_back(std::log(res.sup_bias[i]));
        }
    }
    if (lx.size() < 3) {
        res.slope = res.slope_se = kNaN;
        res.note = "fewer than 3 bandwidths passed the replicate-SE gate";
        return res;
    }
    const double k = static_cast<double>(lx.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        mx += lx[i];
        my += ly[i];
    }
    mx /= k;
    my /= k;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    res.slope = sxy / sxx;
    double rss = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        const double e = ly[i] - my - res.slope * (lx[i] - mx);
        rss += e * e;
    }
    res.slope_se = std::sqrt(rss / (k - 2.0) / sxx);
    res.valid = true;
    return res;
}

std::vector<BandPoint> hazard_band(const ExperimentSpec& spec) {
    const int n = *std::max_element(spec.n_grid.begin(), spec.n_grid.end());
    const auto nx = spec.grid_x.size();
    const auto nv = spec.grid_v.size();
    const auto per_rep = nx * nv;
    const auto R = static_cast<std::size_t>(spec.replicates);
    std::vector<double> value(R * per_rep, kNaN), stderr_(R * per_rep, kNaN);
    const auto bw = spec.bandwidths().front();
    const auto h = spec.model.graph.transitions()[static_cast<std::size_t>(spec.hazard_transition)];

    parallel_for(spec.replicates, spec.threads, [&](int r) {
        const auto data = simulate(spec, n, replicate_seed(spec.master_seed, kBandStream, n, r)).windowed;
        try {
            const double a = bw.rule ? estimate::rule_bandwidth(data, h, EstimatorKind::PartialLikelihood,
                                                                 spec.model.tau, bw.value)
                                     : bw.value;
            Vector beta = spec.model.beta;
            if (!spec.hazard_at_truth) {
                auto config = fit_config(spec, EstimatorKind::PartialLikelihood, BandwidthChoice::fixed(a));
                beta = multistate::fit_multistate(data, config, Vector::Zero(beta.size())).beta_hat;
            }
            const estimate::HazardEstimator est(data, hazard_fit(spec, a), beta);
            for (std::size_t ix = 0; ix < nx; ++ix) {
                const auto curve = est.curve(spec.grid_x[ix]);
                const auto se = estimate::hazard_stderr(curve, spec.grid_v);
                for (std::size_t iv = 0; iv < nv; ++iv) {
                    const auto k = static_cast<std::size_t>(r) * per_rep + ix * nv + iv;
                    value[k] = curve.value(spec.grid_v[iv]);
                    stderr_[k] = se[iv];
                }
            }
        } catch (const Error&) {
            // replicate excluded
        }
    });

    std::vector<BandPoint> out;
    std::vector<double> cv(R), cs(R);
    for (std::size_t ix = 0; ix < nx; ++ix) {
        for (std::size_t iv = 0; iv < nv; ++iv) {
            for (std::size_t r = 0; r < R; ++r) {
                cv[r] = value[r * per_rep + ix * nv + iv];
                cs[r] = stderr_[r * per_rep + ix * nv + iv];
            }
            const auto mv = mean_se(cv);
            const auto ms = mean_se(cs);
            BandPoint pt;
            pt.v = spec.grid_v[iv];
            pt.x = spec.grid_x[ix];
            pt.sd = mv.sd;
            pt.mean_se = ms.mean;
            pt.ratio = mv.sd / ms.mean;
            pt.replicates = mv.count;
            out.push_back(pt);
        }
    }
    return out;
}

std::vector<MartingaleRow> martingale_identities(const ExperimentSpec& spec, long long* epochs) {
    const auto& graph = spec.model.graph;
    const auto& hs = graph.transitions();
    const double window = spec.window();
    const double tau = spec.model.tau;
    struct TestFunction {
        std::string name;
        double v;
    };
    const std::vector<TestFunction> fns{{"1", window},
                                        {spec.model.z_dim > 0 ? "1+[z1>0]" : "1+[x>tau/2]", window},
                                        {"x/tau on [0,tau0/2]", window / 2.0}};
    const auto phi = [&](std::size_t f, const EpochRecord& rec) {
        if (f == 0) return 1.0;
        if (f == 1) return 1.0 + ((spec.model.z_dim > 0 ? rec.z[0] : rec.x - tau / 2.0) > 0.0 ? 1.0 : 0.0);
        return rec.x / tau;
    };
    const auto nh = hs.size();
    const auto nf = fns.size();
    // Per subject: S[t][f] and V[t][f].
    std::vector<std::vector<double>> S, V;
    const std::uint64_t seed = derive_seed(spec.master_seed, kMartingaleStream);
    constexpr int kChunk = 2000;
    long long records = 0;
    int next = 0;
    while (records < spec.martingale_epochs) {
        std::vector<model::SubjectHistory> chunk(kChunk);
        parallel_for(kChunk, spec.threads, [&](int i) {
            chunk[static_cast<std::size_t>(i)] =
                model::simulate_subject(spec.model, derive_seed(seed, static_cast<std::uint64_t>(next + i)));
        });
        next += kChunk;
        const auto data = to_duration(chunk, graph, window);
        records += static_cast<long long>(data.records.size());
        const auto base = S.size();
        S.resize(base + kChunk, std::vector<double>(nh * nf, 0.0));
        V.resize(base + kChunk, std::vector<double>(nh * nf, 0.0));
        for (const auto& rec : data.records) {
            auto& s = S[base + static_cast<std::size_t>(rec.subject)];
            auto& v = V[base + static_cast<std::size_t>(rec.subject)];
            for (std::size_t t = 0; t < nh; ++t) {
                if (rec.from_state != hs[t].from) continue;
                const auto& tm = spec.model.transitions[t];
                for (std::size_t f = 0; f < nf; ++f) {
                    const double m = martingale_residual(rec, hs[t], spec.model.beta, tm.covariates, tm.baseline, fns[f].v);
                    const double comp = rec.counting(hs[t], fns[f].v) - m;
                    const double w = phi(f, rec);
                    s[t * nf + f] += w * m;
                    v[t * nf + f] += w * w * comp;
                }
            }
        }
    }
    if (epochs) *epochs = records;

    std::vector<MartingaleRow> rows;
    std::vector<double> col(S.size());
    const auto push = [&](std::string identity, std::string transition, std::string fn) {
        const auto ms = mean_se(col);
        rows.push_back({std::move(identity), std::move(transition), std::move(fn), ms.mean, ms.se, ms.mean / ms.se});
    };
    for (std::size_t t = 0; t < nh; ++t) {
        for (std::size_t f = 0; f < nf; ++f) {
            const auto k = t * nf + f;
            for (std::size_t i = 0; i < S.size(); ++i) col[i] = S[i][k];
            push("first", graph.label(hs[t]), fns[f].name);
            for (std::size_t i = 0; i < S.size(); ++i) col[i] = S[i][k] * S[i][k] - V[i][k];
            push("second", graph.label(hs[t]), fns[f].name);
        }
    }
    for (std::size_t t = 0; t < nh; ++t) {
        for (std::size_t u = t + 1; u < nh; ++u) {
            for (std::size_t i = 0; i < S.size(); ++i) col[i] = S[i][t * nf] * S[i][u * nf];
            push("cross", graph.label(hs[t]) + " x " + graph.label(hs[u]), fns[0].name);
        }
    }
    return rows;
}

ExperimentReport run_experiment(const ExperimentSpec& spec) {
    spec.validate();
    ExperimentReport report;
    report.name = spec.name;
    report.master_seed = spec.master_seed;
    const auto& th = spec.thresholds;

    const bool fits = spec.has(Target::Coverage) || spec.has(Target::Inconsistency) || spec.has(Target::Multistate);
    if (fits) {
        std::vector<std::pair<EstimatorKind, BandwidthChoice>> combos;
        for (auto kind : spec.estimators) {
            for (const auto& bw : spec.bandwidths(kind)) combos.emplace_back(kind, bw);
        }
        const auto per_rep = combos.size();
        for (int n : spec.n_grid) {
            std::vector<ReplicateRow> rows(static_cast<std::size_t>(spec.replicates) * per_rep);
            parallel_for(spec.replicates, spec.threads, [&](int r) {
                const auto data = simulate(spec, n, replicate_seed(spec.master_seed, kFitStream, n, r));
                std::size_t k = static_cast<std::size_t>(r) * per_rep;
                for (const auto& [kind, bw] : combos) rows[k++] = fit_one(spec, data, kind, bw, n, r);
            });
            for (std::size_t c = 0; c < per_rep; ++c) {
                std::vector<const ReplicateRow*> cell;
                for (int r = 0; r < spec.replicates; ++r) cell.push_back(&rows[static_cast<std::size_t>(r) * per_rep + c]);
                report.cells.push_back(summarize(cell, spec.model.beta));
            }
            // Rows ordered by cell, then replicate.
            for (std::size_t c = 0; c < per_rep; ++c) {
                for (int r = 0; r < spec.replicates; ++r) {
                    report.rows.push_back(rows[static_cast<std::size_t>(r) * per_rep + c]);
                }
            }
        }
        for (const auto& c : report.cells) {
            if (!c.valid) add_check(report, "cell valid " + cell_key(c), c.succeeded, ">= 2 successful replicates", false);
        }
        fit_checks(spec, report);
    }

    if (spec.has(Target::BiasRate)) {
        report.bias_rate = bias_rate_sweep(spec);
        const auto& br = *report.bias_rate;
        const std::string req = "in [" + fmt(th.slope_lo) + ", " + fmt(th.slope_hi) + "]";
        if (br.flat) {
            add_check(report, "bias-rate slope (flat truth, skipped)", kNaN, req, true);
        } else {
            add_check(report, "bias-rate slope", br.slope, req,
                      br.valid && br.slope >= th.slope_lo && br.slope <= th.slope_hi);
        }
    }

    if (spec.has(Target::HazardBand)) {
        report.band = hazard_band(spec);
        for (const auto& pt : report.band) {
            add_check(report, "hazard band v=" + fmt(pt.v) + " x=" + fmt(pt.x), pt.ratio,
                      "|SD / stderr - 1| <= " + fmt(th.band_tolerance),
                      std::isfinite(pt.ratio) && std::abs(pt.ratio - 1.0) <= th.band_tolerance);
        }
    }

    if (spec.has(Target::Martingale)) {
        report.martingale = martingale_identities(spec, &report.martingale_epochs);
        for (const auto& row : report.martingale) {
            add_check(report, "martingale " + row.identity + " " + row.transition + " phi=" + row.test_function, row.z,
                      "|z| <= " + fmt(th.martingale_z), std::isfinite(row.z) && std::abs(row.z) <= th.martingale_z);
        }
    }
    return report;
}

std::string summary_text(const ExperimentReport& report) {
    std::ostringstream os;
    os << "experiment " << report.name << "  seed " << report.master_seed << "\n";
    if (!report.cells.empty()) {
        os << "\nfit cells (bias, sd, mean se, coverage per coefficient)\n";
        for (const auto& c : report.cells) {
            os << "  " << cell_key(c) << ": ok " << c.succeeded << "/" << c.replicates;
            if (c.not_converged) os << " (" << c.not_converged << " not converged)";
            os << "  bias [" << vec_text(c.bias) << "]  sd [" << vec_text(c.sd) << "]  se [" << vec_text(c.mean_se)
               << "]  cover [" << vec_text(c.coverage) << "]  skip " << fmt(c.mean_skip) << "\n";
        }
    }
    if (report.bias_rate) {
        const auto& br = *report.bias_rate;
        os << "\nbias rate\n";
        for (std::size_t i = 0; i < br.bandwidths.size(); ++i) {
            os << "  a=" << fmt(br.bandwidths[i]) << "  sup|bias| " << fmt(br.sup_bias[i]) << "  se "
               << fmt(br.sup_se[i]) << (br.used[i] ? "" : "  (gated out)") << "\n";
        }
        if (br.valid) os << "  slope " << fmt(br.slope) << " (se " << fmt(br.slope_se) << ")\n";
        if (!br.note.empty()) os << "  " << br.note << "\n";
    }
    if (!report.band.empty()) {
        os << "\nhazard band (SD across replicates vs mean plug-in stderr)\n";
        for (const auto& pt : report.band) {
            os << "  v=" << fmt(pt.v) << " x=" << fmt(pt.x) << "  sd " << fmt(pt.sd) << "  se " << fmt(pt.mean_se)
               << "  ratio " << fmt(pt.ratio) << "\n";
        }
    }
    if (!report.martingale.empty()) {
        os << "\nmartingale identities on " << report.martingale_epochs << " epochs\n";
        for (const auto& row : report.martingale) {
            os << "  " << row.identity << " " << row.transition << " phi=" << row.test_function << "  mean "
               << fmt(row.mean) << "  se " << fmt(row.se) << "  z " << fmt(row.z, 3) << "\n";
        }
    }
    os << "\nchecks\n";
    for (const auto& c : report.checks) {
        os << "  " << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << fmt(c.value) << " (" << c.requirement << ")\n";
    }
    return os.str();
}

void write_report(const ExperimentReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    using io::format_real;
    const auto p = report.cells.empty() ? Eigen::Index{0} : report.cells.front().bias.size();

    std::vector<std::string> head{"estimator", "n", "bandwidth", "replicates", "succeeded", "failed", "not_converged"};
    for (Eigen::Index j = 1; j <= p; ++j) {
        const auto s = std::to_string(j);
        for (const char* f : {"bias", "sd", "mc_se", "mean_se", "coverage", "coverage_se"}) head.push_back(f + s);
    }
    for (const char* f : {"mean_skip", "max_skip", "mean_bandwidth", "valid"}) head.emplace_back(f);
    io::CsvWriter cells(head);
    for (const auto& c : report.cells) {
        std::vector<std::string> row{to_string(c.estimator), std::to_string(c.n), c.bandwidth.describe(),
                                     std::to_string(c.replicates), std::to_string(c.succeeded), std::to_string(c.failed),
                                     std::to_string(c.not_converged)};
        for (Eigen::Index j = 0; j < p; ++j) {
            for (const Vector* v : {&c.bias, &c.sd, &c.mc_se, &c.mean_se, &c.coverage, &c.coverage_se}) {
                row.push_back(format_real((*v)[j]));
            }
        }
        row.push_back(format_real(c.mean_skip));
        row.push_back(format_real(c.max_skip));
        row.push_back(format_real(c.mean_bandwidth));
        row.push_back(c.valid ? "1" : "0");
        cells.row(row);
    }
    io::write_atomic(dir / "cells.csv", cells.str());

    head = {"estimator", "n", "bandwidth", "replicate", "ok", "converged", "iterations", "used_bandwidth"};
    for (Eigen::Index j = 1; j <= p; ++j) head.push_back("beta" + std::to_string(j));
    for (Eigen::Index j = 1; j <= p; ++j) head.push_back("se" + std::to_string(j));
    head.emplace_back("skip_fraction");
    head.emplace_back("error");
    io::CsvWriter reps(head);
    for (const auto& r : report.rows) {
        std::vector<std::string> row{to_string(r.estimator), std::to_string(r.n), r.bandwidth.describe(),
                                     std::to_string(r.replicate), r.ok ? "1" : "0", r.converged ? "1" : "0",
                                     std::to_string(r.iterations), format_real(r.used_bandwidth)};
        for (Eigen::Index j = 0; j < p; ++j) row.push_back(format_real(r.beta[j]));
        for (Eigen::Index j = 0; j < p; ++j) row.push_back(format_real(r.se[j]));
        row.push_back(format_real(r.skip_fraction));
        row.push_back(r.error);
        reps.row(row);
    }
    io::write_atomic(dir / "replicates.csv", reps.str());

    io::CsvWriter bias({"bandwidth", "v", "x", "truth", "mean", "bias", "se", "replicates"});
    if (report.bias_rate) {
        for (const auto& pt : report.bias_rate->points) {
            bias.row({format_real(pt.bandwidth), format_real(pt.v), format_real(pt.x), format_real(pt.truth),
                      format_real(pt.mean), format_real(pt.bias), format_real(pt.se), std::to_string(pt.replicates)});
        }
    }
    io::write_atomic(dir / "bias_rate.csv", bias.str());

    io::CsvWriter band({"v", "x", "sd", "mean_stderr", "ratio", "replicates"});
    for (const auto& pt : report.band) {
        band.row({format_real(pt.v), format_real(pt.x), format_real(pt.sd), format_real(pt.mean_se),
                  format_real(pt.ratio), std::to_string(pt.replicates)});
    }
    io::write_atomic(dir / "hazard_band.csv", band.str());

    io::CsvWriter martingale({"identity", "transition", "test_function", "mean", "se", "z"});
    for (const auto& r : report.martingale) {
        martingale.row({r.identity, r.transition, r.test_function, format_real(r.mean), format_real(r.se), format_real(r.z)});
    }
    io::write_atomic(dir / "martingale.csv", martingale.str());

    io::CsvWriter checks({"check", "value", "requirement", "pass"});
    for (const auto& c : report.checks) {
        checks.row({clean(c.name), format_real(c.value), clean(c.requirement), c.pass ? "PASS" : "FAIL"});
    }
    io::write_atomic(dir / "checks.csv", checks.str());
    io::write_atomic(dir / "summary.txt", summary_text(report));
}

}  // namespace mrp::mc
