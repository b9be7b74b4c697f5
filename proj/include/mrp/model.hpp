#pragma once

// Modulated renewal process model: state graph, two-parameter baseline
// hazards alpha_h(u, x) on the duration scale, covariate / mark / censoring
// laws, and a sequential simulator producing censored subject histories.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "mrp/random.hpp"
#include "mrp/types.hpp"

namespace mrp::model {

class StateGraph {
public:
    StateGraph() = default;
    StateGraph(std::vector<std::string> states, std::vector<Transition> transitions, bool progressive = false);

    int state_count() const { return static_cast<int>(states_.size()); }
    const std::vector<std::string>& states() const { return states_; }
    const std::string& state_name(int s) const { return states_.at(s); }
    // Throws ConfigError for an unknown label.
    int state_index(std::string_view label) const;
    std::optional<int> find_state(std::string_view label) const;

    const std::vector<Transition>& transitions() const { return transitions_; }
    // Index into transitions(), or -1.
    int transition_index(Transition h) const;
    // Transition indices leaving `state`, in declaration order.
    const std::vector<int>& outgoing(int state) const { return outgoing_.at(state); }
    bool is_absorbing(int state) const { return outgoing(state).empty(); }
    bool progressive() const { return progressive_; }

    std::string label(Transition h) const { return state_name(h.from) + "->" + state_name(h.to); }

    // Structural problems, empty when the graph is well formed.
    std::vector<std::string> violations() const;

private:
    std::vector<std::string> states_;
    std::vector<Transition> transitions_;
    std::vector<std::vector<int>> outgoing_;
    bool progressive_ = false;
};

// alpha(u, x) = rate
struct ConstantHazard {
    double rate = 1;
};

// Piecewise constant on the cells [u_k, u_{k+1}) x [x_l, x_{l+1}); the last
// duration cell extends to infinity. rates is (u cells) x (x cells).
struct PiecewiseConstantHazard {
    std::vector<double> u_breaks;  // starts at 0
    std::vector<double> x_breaks;  // spans [0, tau]
    Matrix rates;
};

// alpha(u, x) = rate * shape * u^(shape-1) * exp(slope * x)
struct WeibullLogLinearHazard {
    double rate = 1;
    double shape = 1;
    double slope = 0;
};

// alpha(u, x) = rate * shape * u^(shape-1) * g(x), with g the linear
// interpolant of (x_knots, x_values); g is Lipschitz with kinks at the knots.
struct WeibullPiecewiseLinearHazard {
    double rate = 1;
    double shape = 1;
    std::vector<double> x_knots;
    std::vector<double> x_values;
};

class BaselineHazard {
public:
    using Variant =
        std::variant<ConstantHazard, PiecewiseConstantHazard, WeibullLogLinearHazard, WeibullPiecewiseLinearHazard>;

    BaselineHazard() : kind_(ConstantHazard{}) {}
    template <class Kind>
        requires std::is_constructible_v<Variant, Kind>
    BaselineHazard(Kind kind) : kind_(std::move(kind)) {}  // NOLINT(google-explicit-constructor)

    double operator()(double u, double x) const { return rate(u, x); }
    double rate(double u, double x) const;
    // A(v; x) = integral of alpha(u, x) over [0, v], closed form.
    double cumulative(double v, double x) const;

    const Variant& kind() const { return kind_; }
    std::string kind_name() const;
    // Parameter problems (negative rates, malformed breaks, ...).
    std::vector<std::string> violations(double tau) const;

private:
    Variant kind_;
};

// Distribution of a single real covariate.
struct ScalarLaw {
    enum class Kind { Constant, Normal, Uniform, Bernoulli, Exponential };
    Kind kind = Kind::Constant;
    double a = 0;  // value | mean | lower | probability | rate
    double b = 0;  // -     | sd   | upper | -           | -

    static ScalarLaw constant(double v) { return {Kind::Constant, v, 0}; }
    static ScalarLaw normal(double mean, double sd) { return {Kind::Normal, mean, sd}; }
    static ScalarLaw uniform(double lo, double hi) { return {Kind::Uniform, lo, hi}; }
    static ScalarLaw bernoulli(double p) { return {Kind::Bernoulli, p, 0}; }
    static ScalarLaw exponential(double rate) { return {Kind::Exponential, rate, 0}; }

    double sample(Rng& rng) const;
    double support_min() const;
    double support_max() const;
    std::string describe() const;
    std::vector<std::string> violations() const;
};

// Per-epoch law of (Z, X). Z components are independent; the mark defaults
// to Uniform[0, tau]. Optional per-state overrides for Z.
struct CovariateLaw {
    std::vector<ScalarLaw> z;
    std::optional<ScalarLaw> x;
    std::vector<std::pair<int, std::vector<ScalarLaw>>> z_by_state;

    const std::vector<ScalarLaw>& z_law(int state) const;
};

struct CensoringLaw {
    enum class Mode {
        None,     // no censoring
        Subject,  // one calendar horizon C per subject
        Epoch,    // independent margin D_m per epoch, C_m = T_m + D_m
    };
    Mode mode = Mode::None;
    ScalarLaw dist = ScalarLaw::constant(0);
};

struct TransitionModel {
    BaselineHazard baseline;
    double bound = 1;  // upper bound on alpha over [0, tau0] x [0, tau]
    CovariateMap covariates;
};

enum class Sampler { Thinning, Inversion };

struct ModelSpec {
    StateGraph graph;
    Vector beta;
    int z_dim = 0;
    std::vector<TransitionModel> transitions;  // aligned with graph.transitions()
    CovariateLaw covariates;
    CensoringLaw censoring;
    double tau0 = 1;  // duration horizon
    double tau = 1;   // mark endpoint
    std::vector<double> initial_probs;  // law of J_0; empty = first state
    Sampler sampler = Sampler::Thinning;

    const TransitionModel& transition_model(Transition h) const;
};

struct Violation {
    std::string where;
    std::string message;
};

// Every invariant of the spec, with the hazard bound checked on a 101 x 101
// grid over [0, tau0] x [0, tau]. Empty when valid.
std::vector<Violation> validate(const ModelSpec& spec);
// Throws ConfigError listing all violations.
void validate_or_throw(const ModelSpec& spec);

struct Epoch {
    double time = 0;
    int state = 0;
    Vector z;
    double x = 0;
};

enum class Terminal { Absorbed, Censored };

struct SubjectHistory {
    std::vector<Epoch> epochs;
    Terminal terminal = Terminal::Censored;
    double end_time = 0;  // T_M when absorbed, C when censored
};

inline constexpr std::size_t kMaxEpochs = 1'000'000;

SubjectHistory simulate_subject(const ModelSpec& spec, std::uint64_t seed);

// Subject i uses seed derive_seed(master_seed, i); `threads` > 1 splits the
// subjects across workers without changing any history.
std::vector<SubjectHistory> simulate_cohort(const ModelSpec& spec, int n, std::uint64_t master_seed, int threads = 1);

// Draws the sojourn of one epoch. Returns the gap (infinity when no event
// ever happens) and the index into graph.outgoing(state) of the destination.
struct Sojourn {
    double gap;
    int destination;
};
Sojourn sample_sojourn(const ModelSpec& spec, int state, const Vector& z, double x, Rng& rng);

}  // namespace mrp::model
