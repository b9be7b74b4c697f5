#include "mrp/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/tools/roots.hpp>

#include "mrp/error.hpp"
#include "mrp/parallel.hpp"

namespace mrp::model {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double interpolate(const std::vector<double>& knots, const std::vector<double>& values, double x) {
    if (knots.size() == 1 || x <= knots.front()) return values.front();
    if (x >= knots.back()) return values.back();
    const auto it = std::upper_bound(knots.begin(), knots.end(), x);
    const auto k = static_cast<std::size_t>(it - knots.begin());
    const double t = (x - knots[k - 1]) / (knots[k] - knots[k - 1]);
    return values[k - 1] + t * (values[k] - values[k - 1]);
}

std::size_t cell_of(const std::vector<double>& breaks, double v, std::size_t cells) {
    const auto it = std::upper_bound(breaks.begin(), breaks.end(), v);
    const auto k = static_cast<std::ptrdiff_t>(it - breaks.begin()) - 1;
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(k, 0, static_cast<std::ptrdiff_t>(cells) - 1));
}

bool strictly_increasing(const std::vector<double>& v) {
    return std::adjacent_find(v.begin(), v.end(), [](double a, double b) { return !(a < b); }) == v.end();
}

}  // namespace

// ---------------------------------------------------------------------------
// StateGraph

StateGraph::StateGraph(std::vector<std::string> states, std::vector<Transition> transitions, bool progressive)
    : states_(std::move(states)), transitions_(std::move(transitions)), progressive_(progressive) {
    outgoing_.assign(states_.size(), {});
    for (int k = 0; k < static_cast<int>(transitions_.size()); ++k) {
        const auto& h = transitions_[k];
        if (h.from >= 0 && h.from < state_count()) outgoing_[h.from].push_back(k);
    }
}

std::optional<int> StateGraph::find_state(std::string_view label) const {
    const auto it = std::find(states_.begin(), states_.end(), label);
    if (it == states_.end()) return std::nullopt;
    return static_cast<int>(it - states_.begin());
}

int StateGraph::state_index(std::string_view label) const {
    if (auto s = find_state(label)) return *s;
    throw ConfigError("unknown state '" + std::string(label) + "'");
}

int StateGraph::transition_index(Transition h) const {
    const auto it = std::find(transitions_.begin(), transitions_.end(), h);
    return it == transitions_.end() ? -1 : static_cast<int>(it - transitions_.begin());
}

std::vector<std::string> StateGraph::violations() const {
    std::vector<std::string> out;
    if (states_.empty()) out.emplace_back("no states");
    for (std::size_t i = 0; i < states_.size(); ++i) {
        if (states_[i].empty()) out.emplace_back("empty state label");
        if (states_[i] == "CENSORED") out.emplace_back("state label 'CENSORED' is reserved");
        for (std::size_t j = i + 1; j < states_.size(); ++j) {
            if (states_[i] == states_[j]) out.push_back("duplicate state '" + states_[i] + "'");
        }
    }
    if (transitions_.empty()) out.emplace_back("no transitions");
    for (std::size_t k = 0; k < transitions_.size(); ++k) {
        const auto& h = transitions_[k];
        if (h.from < 0 || h.from >= state_count() || h.to < 0 || h.to >= state_count()) {
            out.push_back("transition " + std::to_string(k) + " has an endpoint outside the state set");
            continue;
        }
        for (std::size_t j = k + 1; j < transitions_.size(); ++j) {
            if (transitions_[j] == h) out.push_back("duplicate transition " + label(h));
        }
    }
    if (progressive_ && out.empty()) {
        // Depth-first search for a directed cycle (self-loops included).
        std::vector<int> colour(states_.size(), 0);
        bool cyclic = false;
        auto visit = [&](auto&& self, int s) -> void {
            colour[s] = 1;
            for (int k : outgoing_[s]) {
                const int t = transitions_[k].to;
                if (colour[t] == 1) cyclic = true;
                else if (colour[t] == 0) self(self, t);
            }
            colour[s] = 2;
        };
        for (int s = 0; s < state_count(); ++s) {
            if (colour[s] == 0) visit(visit, s);
        }
        if (cyclic) out.emplace_back("progressive graph contains a directed cycle");
    }
    return out;
}

// ---------------------------------------------------------------------------
// BaselineHazard

double BaselineHazard::rate(double u, double x) const {
    return std::visit(
        Overloaded{
            [](const ConstantHazard& h) { return h.rate; },
            [&](const PiecewiseConstantHazard& h) {
                const auto i = cell_of(h.u_breaks, u, static_cast<std::size_t>(h.rates.rows()));
                const auto j = cell_of(h.x_breaks, x, static_cast<std::size_t>(h.rates.cols()));
                return h.rates(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            },
            [&](const WeibullLogLinearHazard& h) {
                return h.rate * h.shape * std::pow(u, h.shape - 1.0) * std::exp(h.slope * x);
            },
            [&](const WeibullPiecewiseLinearHazard& h) {
                return h.rate * h.shape * std::pow(u, h.shape - 1.0) * interpolate(h.x_knots, h.x_values, x);
            },
        },
        kind_);
}

double BaselineHazard::cumulative(double v, double x) const {
    if (v <= 0.0) return 0.0;
    return std::visit(
        Overloaded{
            [&](const ConstantHazard& h) { return h.rate * v; },
            [&](const PiecewiseConstantHazard& h) {
                const auto j = static_cast<Eigen::Index>(cell_of(h.x_breaks, x, static_cast<std::size_t>(h.rates.cols())));
                double total = 0.0;
                for (Eigen::Index i = 0; i < h.rates.rows(); ++i) {
                    const double lo = h.u_breaks[static_cast<std::size_t>(i)];
                    if (v <= lo) break;
                    const double hi = i + 1 < h.rates.rows() ? h.u_breaks[static_cast<std::size_t>(i + 1)] : kInf;
                    total += h.rates(i, j) * (std::min(v, hi) - lo);
                }
                return total;
            },
            [&](const WeibullLogLinearHazard& h) { return h.rate * std::pow(v, h.shape) * std::exp(h.slope * x); },
            [&](const WeibullPiecewiseLinearHazard& h) {
                return h.rate * std::pow(v, h.shape) * interpolate(h.x_knots, h.x_values, x);
            },
        },
        kind_);
}

std::string BaselineHazard::kind_name() const {
    return std::visit(Overloaded{
                          [](const ConstantHazard&) { return std::string("constant"); },
                          [](const PiecewiseConstantHazard&) { return std::string("piecewise"); },
                          [](const WeibullLogLinearHazard&) { return std::string("weibull"); },
                          [](const WeibullPiecewiseLinearHazard&) { return std::string("weibull_pl"); },
                      },
                      kind_);
}

std::vector<std::string> BaselineHazard::violations(double tau) const {
    std::vector<std::string> out;
    std::visit(Overloaded{
                   [&](const ConstantHazard& h) {
                       if (!(h.rate >= 0.0) || !std::isfinite(h.rate)) out.emplace_back("rate must be finite and >= 0");
                   },
                   [&](const PiecewiseConstantHazard& h) {
                       if (h.u_breaks.empty() || h.u_breaks.front() != 0.0 || !strictly_increasing(h.u_breaks)) {
                           out.emplace_back("u_breaks must start at 0 and increase strictly");
                       }
                       if (h.x_breaks.size() < 2 || !strictly_increasing(h.x_breaks) || h.x_breaks.front() > 0.0 ||
                           h.x_breaks.back() < tau) {
                           out.emplace_back("x_breaks must increase strictly and span [0, tau]");
                       }
                       if (h.rates.rows() != static_cast<Eigen::Index>(h.u_breaks.size()) ||
                           h.rates.cols() + 1 != static_cast<Eigen::Index>(h.x_breaks.size())) {
                           out.emplace_back("rates must have one row per u cell and one column per x cell");
                       } else if (!(h.rates.array() >= 0.0).all() || !h.rates.allFinite()) {
                           out.emplace_back("rates must be finite and >= 0");
                       }
                   },
                   [&](const WeibullLogLinearHazard& h) {
                       if (!(h.rate >= 0.0) || !std::isfinite(h.rate)) out.emplace_back("rate must be finite and >= 0");
                       if (!(h.shape > 0.0)) out.emplace_back("shape must be > 0");
                       if (!std::isfinite(h.slope)) out.emplace_back("slope must be finite");
                   },
                   [&](const WeibullPiecewiseLinearHazard& h) {
                       if (!(h.rate >= 0.0) || !std::isfinite(h.rate)) out.emplace_back("rate must be finite and >= 0");
                       if (!(h.shape > 0.0)) out.emplace_back("shape must be > 0");
                       if (h.x_knots.empty() || h.x_knots.size() != h.x_values.size() || !strictly_increasing(h.x_knots)) {
                           out.emplace_back("x_knots must increase strictly and match x_values in length");
                       }
                       for (double v : h.x_values) {
                           if (!(v >= 0.0) || !std::isfinite(v)) out.emplace_back("x_values must be finite and >= 0");
                       }
                   },
               },
               kind_);
    return out;
}

// ---------------------------------------------------------------------------
// ScalarLaw / CovariateLaw

double ScalarLaw::sample(Rng& rng) const {
    switch (kind) {
        case Kind::Constant: return a;
        case Kind::Normal: return std::normal_distribution<double>(a, b)(rng);
        case Kind::Uniform: return std::uniform_real_distribution<double>(a, b)(rng);
        case Kind::Bernoulli: return std::bernoulli_distribution(a)(rng) ? 1.0 : 0.0;
        case Kind::Exponential: return std::exponential_distribution<double>(a)(rng);
    }
    return a;
}

double ScalarLaw::support_min() const {
    switch (kind) {
        case Kind::Constant: return a;
        case Kind::Normal: return -kInf;
        case Kind::Uniform: return a;
        case Kind::Bernoulli: return a < 1.0 ? 0.0 : 1.0;
        case Kind::Exponential: return 0.0;
    }
    return a;
}

double ScalarLaw::support_max() const {
    switch (kind) {
        case Kind::Constant: return a;
        case Kind::Normal: return kInf;
        case Kind::Uniform: return b;
        case Kind::Bernoulli: return a > 0.0 ? 1.0 : 0.0;
        case Kind::Exponential: return kInf;
    }
    return a;
}

std::string ScalarLaw::describe() const {
    std::ostringstream os;
    os.precision(17);
    switch (kind) {
        case Kind::Constant: os << "constant " << a; break;
        case Kind::Normal: os << "normal " << a << ' ' << b; break;
        case Kind::Uniform: os << "uniform " << a << ' ' << b; break;
        case Kind::Bernoulli: os << "bernoulli " << a; break;
        case Kind::Exponential: os << "exponential " << a; break;
    }
    return os.str();
}

std::vector<std::string> ScalarLaw::violations() const {
    std::vector<std::string> out;
    if (!std::isfinite(a) || !std::isfinite(b)) out.emplace_back("parameters must be finite");
    switch (kind) {
        case Kind::Constant: break;
        case Kind::Normal:
            if (!(b >= 0.0)) out.emplace_back("normal sd must be >= 0");
            break;
        case Kind::Uniform:
            if (!(a < b)) out.emplace_back("uniform requires lower < upper");
            break;
        case Kind::Bernoulli:
            if (!(a >= 0.0 && a <= 1.0)) out.emplace_back("bernoulli probability must lie in [0, 1]");
            break;
        case Kind::Exponential:
            if (!(a > 0.0)) out.emplace_back("exponential rate must be > 0");
            break;
    }
    return out;
}

const std::vector<ScalarLaw>& CovariateLaw::z_law(int state) const {
    for (const auto& [s, law] : z_by_state) {
        if (s == state) return law;
    }
    return z;
}

const TransitionModel& ModelSpec::transition_model(Transition h) const {
    const int k = graph.transition_index(h);
    if (k < 0) throw ConfigError("transition " + graph.label(h) + " is not part of the model");
    return transitions.at(static_cast<std::size_t>(k));
}

// ---------------------------------------------------------------------------
// Validation

std::vector<Violation> validate(const ModelSpec& spec) {
    std::vector<Violation> out;
    for (auto& msg : spec.graph.violations()) out.push_back({"graph", std::move(msg)});
    if (!(spec.tau > 0.0) || !std::isfinite(spec.tau)) out.push_back({"model.tau", "must be positive and finite"});
    if (!(spec.tau0 > 0.0) || !std::isfinite(spec.tau0)) out.push_back({"model.tau0", "must be positive and finite"});
    const int p = static_cast<int>(spec.beta.size());
    if (!spec.beta.allFinite()) out.push_back({"model.beta", "must be finite"});
    if (spec.z_dim != static_cast<int>(spec.covariates.z.size())) {
        out.push_back({"covariates", "expected " + std::to_string(spec.z_dim) + " covariate laws, got " +
                                         std::to_string(spec.covariates.z.size())});
    }
    for (std::size_t k = 0; k < spec.covariates.z.size(); ++k) {
        for (auto& msg : spec.covariates.z[k].violations()) out.push_back({"covariates.z" + std::to_string(k + 1), msg});
    }
    for (const auto& [state, laws] : spec.covariates.z_by_state) {
        if (state < 0 || state >= spec.graph.state_count()) out.push_back({"covariates", "override for unknown state"});
        if (static_cast<int>(laws.size()) != spec.z_dim) {
            out.push_back({"covariates", "per-state override has the wrong dimension"});
        }
    }
    if (spec.covariates.x) {
        const auto& x = *spec.covariates.x;
        for (auto& msg : x.violations()) out.push_back({"covariates.x", msg});
        if (x.support_min() < 0.0 || x.support_max() > spec.tau) {
            out.push_back({"covariates.x", "mark law must be supported on [0, tau]"});
        }
    }
    if (spec.censoring.mode != CensoringLaw::Mode::None) {
        for (auto& msg : spec.censoring.dist.violations()) out.push_back({"censoring.dist", msg});
        if (spec.censoring.dist.support_min() < 0.0) out.push_back({"censoring.dist", "must be nonnegative"});
    }
    if (!spec.initial_probs.empty()) {
        if (static_cast<int>(spec.initial_probs.size()) != spec.graph.state_count()) {
            out.push_back({"model.initial", "needs one probability per state"});
        } else {
            const double total = std::accumulate(spec.initial_probs.begin(), spec.initial_probs.end(), 0.0);
            const bool nonneg = std::all_of(spec.initial_probs.begin(), spec.initial_probs.end(),
                                            [](double v) { return v >= 0.0; });
            if (!nonneg || std::abs(total - 1.0) > 1e-9) out.push_back({"model.initial", "probabilities must sum to 1"});
        }
    }
    const auto& transitions = spec.graph.transitions();
    if (spec.transitions.size() != transitions.size()) {
        out.push_back({"transitions", "one transition model per graph transition required"});
        return out;
    }
    for (std::size_t k = 0; k < transitions.size(); ++k) {
        const auto& h = transitions[k];
        const auto& tm = spec.transitions[k];
        const bool labelled = h.from >= 0 && h.from < spec.graph.state_count() && h.to >= 0 &&
                              h.to < spec.graph.state_count();
        const std::string where = "transition " + (labelled ? spec.graph.label(h) : std::to_string(k));
        auto problems = tm.baseline.violations(spec.tau);
        for (auto& msg : problems) out.push_back({where, msg});
        if (!(tm.bound >= 0.0) || !std::isfinite(tm.bound)) out.push_back({where, "hazard bound must be finite and >= 0"});
        if (tm.covariates.is_identity()) {
            if (spec.z_dim != p) {
                out.push_back({where, "identity covariate map needs as many covariates as coefficients"});
            }
        } else {
            for (const auto& [column, index] : tm.covariates.entries()) {
                if (column < 0 || column >= spec.z_dim || index < 0 || index >= p) {
                    out.push_back({where, "covariate map entry out of range"});
                }
            }
        }
        if (!problems.empty() || spec.tau0 <= 0.0 || spec.tau <= 0.0) continue;
        constexpr int kGrid = 100;
        bool reported = false;
        for (int i = 0; i <= kGrid && !reported; ++i) {
            const double u = spec.tau0 * i / kGrid;
            for (int j = 0; j <= kGrid && !reported; ++j) {
                const double x = spec.tau * j / kGrid;
                const double alpha = tm.baseline(u, x);
                std::ostringstream os;
                os.precision(6);
                if (!(alpha >= 0.0)) {
                    os << "hazard negative or undefined at (u=" << u << ", x=" << x << ")";
                } else if (alpha > tm.bound * (1.0 + 1e-12)) {
                    os << "hazard " << alpha << " exceeds bound " << tm.bound << " at (u=" << u << ", x=" << x << ")";
                } else {
                    continue;
                }
                out.push_back({where, os.str()});
                reported = true;
            }
        }
    }
    return out;
}

void validate_or_throw(const ModelSpec& spec) {
    const auto problems = validate(spec);
    if (problems.empty()) return;
    std::ostringstream os;
    os << "invalid model:";
    for (const auto& v : problems) os << "\n  " << v.where << ": " << v.message;
    throw ConfigError(os.str());
}

// ---------------------------------------------------------------------------
// Simulation

namespace {

struct Competing {
    std::vector<double> scale;  // exp(beta' Z_h) per outgoing transition
    std::vector<const TransitionModel*> models;
    double x = 0;

    double hazard(double u) const {
        double total = 0.0;
        for (std::size_t j = 0; j < scale.size(); ++j) total += scale[j] * models[j]->baseline(u, x);
        return total;
    }
    double cumulative(double u) const {
        double total = 0.0;
        for (std::size_t j = 0; j < scale.size(); ++j) total += scale[j] * models[j]->baseline.cumulative(u, x);
        return total;
    }
};

// Smallest u with cumulative(u) = target, searching from `lo`.
double invert_cumulative(const Competing& c, double lo, double target) {
    double hi = std::max(1.0, 2.0 * lo);
    while (c.cumulative(hi) < target) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e15) return kInf;
    }
    std::uintmax_t iterations = 200;
    const auto [a, b] = boost::math::tools::toms748_solve([&](double u) { return c.cumulative(u) - target; }, lo, hi,
                                                          boost::math::tools::eps_tolerance<double>(50), iterations);
    return 0.5 * (a + b);
}

int choose_destination(const Competing& c, double u, Rng& rng) {
    std::vector<double> w(c.scale.size());
    for (std::size_t j = 0; j < w.size(); ++j) w[j] = c.scale[j] * c.models[j]->baseline(u, c.x);
    double total = std::accumulate(w.begin(), w.end(), 0.0);
    if (!(total > 0.0)) {
        // Event on a hazard discontinuity: fall back to the local increments.
        const double du = u * 1e-9 + 1e-12;
        for (std::size_t j = 0; j < w.size(); ++j) {
            w[j] = c.scale[j] * (c.models[j]->baseline.cumulative(u + du, c.x) - c.models[j]->baseline.cumulative(u, c.x));
        }
        total = std::accumulate(w.begin(), w.end(), 0.0);
    }
    if (w.size() == 1) return 0;
    const double target = std::uniform_real_distribution<double>(0.0, total)(rng);
    double acc = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        acc += w[j];
        if (target < acc) return static_cast<int>(j);
    }
    return static_cast<int>(w.size()) - 1;
}

}  // namespace

Sojourn sample_sojourn(const ModelSpec& spec, int state, const Vector& z, double x, Rng& rng) {
    const auto& out = spec.graph.outgoing(state);
    Competing c;
    c.x = x;
    for (int k : out) {
        const auto& tm = spec.transitions[static_cast<std::size_t>(k)];
        c.scale.push_back(std::exp(tm.covariates.linear_predictor(spec.beta, z)));
        c.models.push_back(&tm);
    }
    double gap = kInf;
    if (spec.sampler == Sampler::Inversion) {
        const double target = std::exponential_distribution<double>(1.0)(rng);
        gap = invert_cumulative(c, 0.0, target);
    } else {
        double bound = 0.0;
        for (std::size_t j = 0; j < c.scale.size(); ++j) bound += c.scale[j] * c.models[j]->bound;
        double u = 0.0;
        bool accepted = false;
        if (bound > 0.0) {
            std::exponential_distribution<double> proposal(bound);
            std::uniform_real_distribution<double> unit(0.0, 1.0);
            while (true) {
                u += proposal(rng);
                if (u > spec.tau0) break;
                const double lambda = c.hazard(u);
                if (lambda > bound * (1.0 + 1e-9)) {
                    std::ostringstream os;
                    os << "hazard bound violated at duration " << u << ", mark " << x;
                    throw DomainError(os.str());
                }
                if (unit(rng) * bound <= lambda) {
                    accepted = true;
                    break;
                }
            }
        }
        if (accepted) {
            gap = u;
        } else {
            // The bound only covers [0, tau0]; draw the tail past tau0 exactly.
            const double target = c.cumulative(spec.tau0) + std::exponential_distribution<double>(1.0)(rng);
            gap = invert_cumulative(c, spec.tau0, target);
        }
    }
    if (!std::isfinite(gap)) return {kInf, -1};
    return {gap, choose_destination(c, gap, rng)};
}

SubjectHistory simulate_subject(const ModelSpec& spec, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    int state = 0;
    if (!spec.initial_probs.empty()) {
        std::discrete_distribution<int> initial(spec.initial_probs.begin(), spec.initial_probs.end());
        state = initial(rng);
    }
    const auto& cens = spec.censoring;
    double horizon = kInf;
    if (cens.mode == CensoringLaw::Mode::Subject) horizon = cens.dist.sample(rng);

    SubjectHistory history;
    double t = 0.0;
    while (true) {
        if (history.epochs.size() >= kMaxEpochs) {
            throw DomainError("history exceeded " + std::to_string(kMaxEpochs) + " epochs; the model does not terminate");
        }
        Epoch epoch;
        epoch.time = t;
        epoch.state = state;
        const auto& laws = spec.covariates.z_law(state);
        epoch.z.resize(static_cast<Eigen::Index>(laws.size()));
        for (std::size_t k = 0; k < laws.size(); ++k) epoch.z[static_cast<Eigen::Index>(k)] = laws[k].sample(rng);
        epoch.x = spec.covariates.x ? spec.covariates.x->sample(rng)
                                    : std::uniform_real_distribution<double>(0.0, spec.tau)(rng);
        history.epochs.push_back(epoch);

        if (spec.graph.is_absorbing(state)) {
            history.terminal = Terminal::Absorbed;
            history.end_time = t;
            return history;
        }
        double censor_at = horizon;
        if (cens.mode == CensoringLaw::Mode::Epoch) censor_at = t + cens.dist.sample(rng);

        const auto sojourn = sample_sojourn(spec, state, history.epochs.back().z, history.epochs.back().x, rng);
        const double next = t + sojourn.gap;
        if (censor_at < next) {
            history.terminal = Terminal::Censored;
            history.end_time = std::max(censor_at, t);
            return history;
        }
        if (!std::isfinite(next)) {
            throw DomainError("uncensored epoch with zero total hazard; the model does not terminate");
        }
        t = next;
        state = spec.graph.transitions()[static_cast<std::size_t>(spec.graph.outgoing(state)[static_cast<std::size_t>(
                                              sojourn.destination)])]
                    .to;
    }
}

std::vector<SubjectHistory> simulate_cohort(const ModelSpec& spec, int n, std::uint64_t master_seed, int threads) {
    if (n < 1) throw DomainError("cohort size must be >= 1");
    std::vector<SubjectHistory> cohort(static_cast<std::size_t>(n));
    parallel_for(n, threads, [&](int i) {
        cohort[static_cast<std::size_t>(i)] = simulate_subject(spec, derive_seed(master_seed, static_cast<std::uint64_t>(i)));
    });
    return cohort;
}

}  // namespace mrp::model
