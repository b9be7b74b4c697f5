#include "mrp/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "mrp/error.hpp"
#include "mrp/io.hpp"

namespace mrp::config {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

double to_real(const std::string& text) {
    try {
        return io::parse_real(trim(text), "value");
    } catch (const DataError&) {
        throw ConfigError("'" + text + "' is not a number");
    }
}

std::string law_text(const model::ScalarLaw& law) {
    using K = model::ScalarLaw::Kind;
    const auto r = io::format_real;
    switch (law.kind) {
        case K::Constant: return "constant(" + r(law.a) + ")";
        case K::Normal: return "normal(" + r(law.a) + ", " + r(law.b) + ")";
        case K::Uniform: return "uniform(" + r(law.a) + ", " + r(law.b) + ")";
        case K::Bernoulli: return "bernoulli(" + r(law.a) + ")";
        case K::Exponential: return "exponential(" + r(law.a) + ")";
    }
    return "";
}

std::string join_reals(const std::vector<double>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? ", " : "") + io::format_real(xs[i]);
    return out;
}

template <class F>
auto guarded(const Section& s, const std::string& key, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const Error& e) {
        s.fail(key, e.what());
    }
}

double auto_bound(const model::BaselineHazard& h, double tau0, double tau) {
    double sup = 0.0;
    constexpr int kU = 400, kX = 100;
    for (int i = 0; i <= kU; ++i) {
        // u = 0 is skipped: Weibull shapes below one are unbounded there.
        const double u = tau0 * std::max(i, 1) / kU;
        for (int j = 0; j <= kX; ++j) sup = std::max(sup, h.rate(u, tau * j / kX));
    }
    return 1.05 * sup;
}

}  // namespace

// ---------------------------------------------------------------------------

Section::Section(std::string name, std::map<std::string, std::string> values)
    : name_(std::move(name)), values_(std::move(values)) {}

void Section::fail(const std::string& key, const std::string& message) const {
    throw ConfigError("[" + name_ + "] " + key + ": " + message);
}

std::optional<std::string> Section::text_opt(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    used_[key] = true;
    return trim(it->second);
}

std::string Section::text(const std::string& key) const {
    auto v = text_opt(key);
    if (!v) fail(key, "missing required key");
    return *v;
}

double Section::real(const std::string& key) const {
    const auto t = text(key);
    return guarded(*this, key, [&] { return to_real(t); });
}

double Section::real(const std::string& key, double fallback) const { return has(key) ? real(key) : fallback; }

long long Section::integer(const std::string& key) const {
    const auto t = text(key);
    try {
        return io::parse_integer(t, key);
    } catch (const DataError&) {
        fail(key, "'" + t + "' is not an integer");
    }
}

long long Section::integer(const std::string& key, long long fallback) const {
    return has(key) ? integer(key) : fallback;
}

bool Section::boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto t = lower(text(key));
    if (t == "true" || t == "yes" || t == "1") return true;
    if (t == "false" || t == "no" || t == "0") return false;
    fail(key, "'" + t + "' is not a boolean");
}

std::vector<double> Section::reals(const std::string& key) const {
    std::vector<double> out;
    for (const auto& item : list(key)) out.push_back(guarded(*this, key, [&] { return to_real(item); }));
    return out;
}

std::vector<std::string> Section::list(const std::string& key) const {
    const auto t = text(key);
    return guarded(*this, key, [&] { return split_list(t); });
}

void Section::reject_unknown() const {
    for (const auto& [key, value] : values_) {
        if (!used_.contains(key)) fail(key, "unknown key");
    }
}

Document Document::parse(const std::string& text, const std::string& source) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(source + ":" + std::to_string(e.line()) + ": " + e.message());
    }
    Document doc;
    doc.source_ = source;
    for (const auto& [name, sub] : tree) {
        if (sub.empty()) throw ConfigError(source + ": key '" + name + "' outside any section");
        std::map<std::string, std::string> values;
        for (const auto& [key, leaf] : sub) values[key] = leaf.data();
        doc.sections_.emplace_back(trim(name), std::move(values));
    }
    return doc;
}

Document Document::load(const std::filesystem::path& path) {
    std::string text;
    try {
        text = io::read_file(path);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    return parse(text, path.string());
}

bool Document::has(const std::string& name) const {
    return std::any_of(sections_.begin(), sections_.end(), [&](const Section& s) { return s.name() == name; });
}

Section* Document::find(const std::string& name) {
    for (auto& s : sections_) {
        if (s.name() == name) return &s;
    }
    return nullptr;
}

Section& Document::section(const std::string& name) {
    auto* s = find(name);
    if (!s) throw ConfigError(source_ + ": missing section [" + name + "]");
    return *s;
}

std::vector<std::pair<std::string, Section*>> Document::prefixed(const std::string& prefix) {
    std::vector<std::pair<std::string, Section*>> out;
    for (auto& s : sections_) {
        if (s.name().size() > prefix.size() + 1 && s.name().compare(0, prefix.size() + 1, prefix + " ") == 0) {
            out.emplace_back(trim(s.name().substr(prefix.size() + 1)), &s);
        }
    }
    return out;
}

void Document::reject_unknown_sections(const std::vector<std::string>& known_prefixes) const {
    for (const auto& s : sections_) {
        const bool known = std::any_of(known_prefixes.begin(), known_prefixes.end(), [&](const std::string& p) {
            return s.name() == p || s.name().compare(0, p.size() + 1, p + " ") == 0;
        });
        if (!known) throw ConfigError(source_ + ": unknown section [" + s.name() + "]");
    }
}

// ---------------------------------------------------------------------------

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    int depth = 0;
    std::string cur;
    for (char c : text) {
        if (c == '(') ++depth;
        if (c == ')') --depth;
        if (depth < 0) throw ConfigError("unbalanced parentheses in '" + text + "'");
        if (c == ',' && depth == 0) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (depth != 0) throw ConfigError("unbalanced parentheses in '" + text + "'");
    cur = trim(cur);
    if (!cur.empty() || !out.empty()) out.push_back(cur);
    for (const auto& item : out) {
        if (item.empty()) throw ConfigError("empty item in list '" + text + "'");
    }
    return out;
}

model::ScalarLaw parse_law(const std::string& text) {
    const auto t = trim(text);
    const auto open = t.find('(');
    if (open == std::string::npos || t.back() != ')') {
        throw ConfigError("'" + t + "' is not a distribution like normal(0, 1)");
    }
    const auto name = lower(trim(t.substr(0, open)));
    std::vector<double> args;
    for (const auto& a : split_list(t.substr(open + 1, t.size() - open - 2))) args.push_back(to_real(a));
    const auto need = [&](std::size_t k) {
        if (args.size() != k) throw ConfigError(name + " takes " + std::to_string(k) + " argument(s)");
    };
    using model::ScalarLaw;
    if (name == "constant") return need(1), ScalarLaw::constant(args[0]);
    if (name == "normal") return need(2), ScalarLaw::normal(args[0], args[1]);
    if (name == "uniform") return need(2), ScalarLaw::uniform(args[0], args[1]);
    if (name == "bernoulli") return need(1), ScalarLaw::bernoulli(args[0]);
    if (name == "exponential") return need(1), ScalarLaw::exponential(args[0]);
    throw ConfigError("unknown distribution '" + name + "'");
}

std::pair<std::string, std::string> parse_transition_label(const std::string& text) {
    const auto arrow = text.find("->");
    if (arrow == std::string::npos) throw ConfigError("'" + text + "' is not a transition like A->B");
    auto from = trim(text.substr(0, arrow));
    auto to = trim(text.substr(arrow + 2));
    if (from.empty() || to.empty()) throw ConfigError("'" + text + "' is not a transition like A->B");
    return {from, to};
}

CovariateMap parse_covariate_map(const std::string& text) {
    const auto t = trim(text);
    if (t.empty() || lower(t) == "identity") return CovariateMap::identity();
    std::vector<std::pair<int, int>> entries;
    for (const auto& item : split_list(t)) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw ConfigError("'" + item + "' is not column:coefficient");
        long long c = 0, k = 0;
        try {
            c = io::parse_integer(trim(item.substr(0, colon)), "column");
            k = io::parse_integer(trim(item.substr(colon + 1)), "coefficient");
        } catch (const DataError&) {
            throw ConfigError("'" + item + "' is not column:coefficient");
        }
        if (c < 1 || k < 1) throw ConfigError("columns and coefficients are numbered from 1");
        entries.emplace_back(static_cast<int>(c - 1), static_cast<int>(k - 1));
    }
    return CovariateMap(std::move(entries));
}

std::vector<mc::BandwidthChoice> parse_bandwidths(const std::string& text) {
    std::vector<mc::BandwidthChoice> out;
    for (const auto& item : split_list(text)) {
        const auto l = lower(item);
        if (l == "rule") {
            out.push_back(mc::BandwidthChoice::scaled_rule(1.0));
        } else if (l.rfind("rule*", 0) == 0) {
            out.push_back(mc::BandwidthChoice::scaled_rule(to_real(l.substr(5))));
        } else {
            out.push_back(mc::BandwidthChoice::fixed(to_real(l)));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

model::ModelSpec parse_model(Document& doc) {
    using namespace model;
    ModelSpec spec;
    auto& m = doc.section("model");
    const auto states = m.list("states");
    std::vector<Transition> transitions;
    const auto index_of = [&](const std::string& label, const std::string& key) {
        const auto it = std::find(states.begin(), states.end(), label);
        if (it == states.end()) m.fail(key, "unknown state '" + label + "'");
        return static_cast<int>(it - states.begin());
    };
    for (const auto& item : m.list("transitions")) {
        const auto [from, to] = guarded(m, "transitions", [&] { return parse_transition_label(item); });
        transitions.push_back({index_of(from, "transitions"), index_of(to, "transitions")});
    }
    spec.graph = guarded(m, "transitions", [&] { return StateGraph(states, transitions, m.boolean("progressive", false)); });
    const auto beta = m.reals("beta");
    spec.beta = Eigen::Map<const Vector>(beta.data(), static_cast<Eigen::Index>(beta.size()));
    spec.tau0 = m.real("tau0", 1.0);
    spec.tau = m.real("tau", 1.0);
    if (m.has("initial")) spec.initial_probs = m.reals("initial");
    const auto sampler = lower(m.text_opt("sampler").value_or("thinning"));
    if (sampler == "thinning") {
        spec.sampler = Sampler::Thinning;
    } else if (sampler == "inversion") {
        spec.sampler = Sampler::Inversion;
    } else {
        m.fail("sampler", "expected thinning or inversion");
    }
    m.reject_unknown();

    if (auto* c = doc.find("covariates")) {
        if (c->has("z")) {
            for (const auto& item : c->list("z")) {
                spec.covariates.z.push_back(guarded(*c, "z", [&] { return parse_law(item); }));
            }
        }
        if (c->has("x")) spec.covariates.x = guarded(*c, "x", [&] { return parse_law(c->text("x")); });
        for (const auto& [key, value] : c->values()) {
            if (key.rfind("z@", 0) != 0) continue;
            const auto state = index_of(key.substr(2), "covariates " + key);
            std::vector<ScalarLaw> laws;
            for (const auto& item : c->list(key)) laws.push_back(guarded(*c, key, [&] { return parse_law(item); }));
            spec.covariates.z_by_state.emplace_back(state, std::move(laws));
        }
        c->reject_unknown();
    }
    spec.z_dim = static_cast<int>(spec.covariates.z.size());

    if (auto* c = doc.find("censoring")) {
        const auto mode = lower(c->text_opt("mode").value_or("none"));
        if (mode == "none") {
            spec.censoring.mode = CensoringLaw::Mode::None;
        } else if (mode == "subject") {
            spec.censoring.mode = CensoringLaw::Mode::Subject;
        } else if (mode == "epoch") {
            spec.censoring.mode = CensoringLaw::Mode::Epoch;
        } else {
            c->fail("mode", "expected none, subject or epoch");
        }
        if (spec.censoring.mode != CensoringLaw::Mode::None) {
            spec.censoring.dist = guarded(*c, "dist", [&] { return parse_law(c->text("dist")); });
        }
        c->reject_unknown();
    }

    const auto sections = doc.prefixed("transition");
    spec.transitions.resize(spec.graph.transitions().size());
    std::vector<char> seen(spec.transitions.size(), 0);
    for (const auto& [label, s] : sections) {
        const auto [from, to] = guarded(*s, "(section name)", [&] { return parse_transition_label(label); });
        const auto check_state = [&](const std::string& st) {
            if (std::find(states.begin(), states.end(), st) == states.end()) {
                s->fail("(section name)", "unknown state '" + st + "'");
            }
            return index_of(st, "transitions");
        };
        const Transition h{check_state(from), check_state(to)};
        const int t = spec.graph.transition_index(h);
        if (t < 0) s->fail("(section name)", "transition not declared in [model] transitions");
        auto& tm = spec.transitions[static_cast<std::size_t>(t)];
        seen[static_cast<std::size_t>(t)] = 1;
        const auto kind = lower(s->text("hazard"));
        if (kind == "constant") {
            tm.baseline = ConstantHazard{s->real("rate")};
        } else if (kind == "weibull") {
            tm.baseline = WeibullLogLinearHazard{s->real("rate"), s->real("shape", 1.0), s->real("slope", 0.0)};
        } else if (kind == "weibull_pl") {
            tm.baseline = WeibullPiecewiseLinearHazard{s->real("rate"), s->real("shape", 1.0), s->reals("x_knots"),
                                                       s->reals("x_values")};
        } else if (kind == "piecewise") {
            PiecewiseConstantHazard p;
            p.u_breaks = s->reals("u_breaks");
            p.x_breaks = s->reals("x_breaks");
            const auto rows = guarded(*s, "rates", [&] {
                std::vector<std::vector<double>> out;
                std::string row;
                std::istringstream in(s->text("rates"));
                while (std::getline(in, row, '|')) {
                    std::vector<double> r;
                    for (const auto& item : split_list(row)) r.push_back(to_real(item));
                    out.push_back(std::move(r));
                }
                return out;
            });
            const auto nu = p.u_breaks.size();
            const auto nx = p.x_breaks.size() < 2 ? 0 : p.x_breaks.size() - 1;
            if (rows.size() != nu) s->fail("rates", "needs one '|'-separated row per u cell");
            p.rates = Matrix(static_cast<Eigen::Index>(nu), static_cast<Eigen::Index>(nx));
            for (std::size_t i = 0; i < nu; ++i) {
                if (rows[i].size() != nx) s->fail("rates", "needs one value per x cell in every row");
                for (std::size_t j = 0; j < nx; ++j) {
                    p.rates(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
                }
            }
            tm.baseline = std::move(p);
        } else {
            s->fail("hazard", "expected constant, weibull, weibull_pl or piecewise");
        }
        const auto problems = tm.baseline.violations(spec.tau);
        if (!problems.empty()) s->fail("hazard", problems.front());
        const auto bound = lower(s->text_opt("bound").value_or("auto"));
        tm.bound = bound == "auto" ? auto_bound(tm.baseline, spec.tau0, spec.tau) : s->real("bound");
        if (s->has("covariates")) tm.covariates = guarded(*s, "covariates", [&] { return parse_covariate_map(s->text("covariates")); });
        s->reject_unknown();
    }
    for (std::size_t t = 0; t < seen.size(); ++t) {
        if (!seen[t]) {
            throw ConfigError(doc.source() + ": missing section [transition " +
                              spec.graph.label(spec.graph.transitions()[t]) + "]");
        }
    }
    model::validate_or_throw(spec);
    return spec;
}

mc::ExperimentSpec parse_experiment(Document& doc) {
    mc::ExperimentSpec spec;
    spec.model = parse_model(doc);
    auto& e = doc.section("experiment");
    spec.name = e.text_opt("name").value_or("experiment");
    for (double n : e.reals("n")) {
        if (n != std::floor(n) || n < 2) e.fail("n", "sample sizes must be integers >= 2");
        spec.n_grid.push_back(static_cast<int>(n));
    }
    spec.replicates = static_cast<int>(e.integer("replicates"));
    spec.estimators.clear();
    for (const auto& item : e.list("estimators")) {
        spec.estimators.push_back(guarded(e, "estimators", [&] { return estimate::parse_estimator(item); }));
    }
    spec.targets.clear();
    for (const auto& item : e.list("targets")) spec.targets.push_back(guarded(e, "targets", [&] { return mc::parse_target(item); }));
    spec.master_seed = static_cast<std::uint64_t>(e.integer("seed", 1));
    spec.threads = static_cast<int>(e.integer("threads", 1));
    spec.mu = static_cast<int>(e.integer("mu", 2));
    if (e.has("bandwidths")) spec.bandwidth_grid = guarded(e, "bandwidths", [&] { return parse_bandwidths(e.text("bandwidths")); });
    for (auto kind : {estimate::EstimatorKind::MEstimator, estimate::EstimatorKind::PartialLikelihood}) {
        const auto key = "bandwidths_" + estimate::to_string(kind);
        if (e.has(key)) spec.estimator_bandwidths[kind] = guarded(e, key, [&] { return parse_bandwidths(e.text(key)); });
    }
    if (e.has("tau0")) spec.tau0 = e.real("tau0");
    if (e.has("grid_v")) spec.grid_v = e.reals("grid_v");
    if (e.has("grid_x")) spec.grid_x = e.reals("grid_x");
    if (e.has("hazard_transition")) {
        const auto label = e.text("hazard_transition");
        const auto [from, to] = guarded(e, "hazard_transition", [&] { return parse_transition_label(label); });
        const auto f = spec.model.graph.find_state(from);
        const auto t = spec.model.graph.find_state(to);
        const int idx = f && t ? spec.model.graph.transition_index({*f, *t}) : -1;
        if (idx < 0) e.fail("hazard_transition", "not a transition of the model");
        spec.hazard_transition = idx;
    }
    spec.hazard_at_truth = e.boolean("hazard_at_truth", false);
    spec.martingale_epochs = e.integer("martingale_epochs", spec.martingale_epochs);
    spec.solver.tol = e.real("tol", spec.solver.tol);
    spec.solver.max_iter = static_cast<int>(e.integer("max_iter", spec.solver.max_iter));
    e.reject_unknown();

    if (auto* c = doc.find("checks")) {
        auto& th = spec.thresholds;
        th.coverage_lo = c->real("coverage_lo", th.coverage_lo);
        th.coverage_hi = c->real("coverage_hi", th.coverage_hi);
        th.bias_shrink = c->real("bias_shrink", th.bias_shrink);
        th.naive_bias_se = c->real("naive_bias_se", th.naive_bias_se);
        th.naive_ratio = c->real("naive_ratio", th.naive_ratio);
        th.slope_lo = c->real("slope_lo", th.slope_lo);
        th.slope_hi = c->real("slope_hi", th.slope_hi);
        th.band_tolerance = c->real("band_tolerance", th.band_tolerance);
        th.martingale_z = c->real("martingale_z", th.martingale_z);
        th.multistate_z = c->real("multistate_z", th.multistate_z);
        th.gate = c->real("gate", th.gate);
        c->reject_unknown();
    }
    doc.reject_unknown_sections({"model", "covariates", "censoring", "transition", "experiment", "checks"});
    spec.validate();
    return spec;
}

std::string format_model(const model::ModelSpec& spec) {
    using namespace model;
    const auto r = io::format_real;
    const auto& g = spec.graph;
    std::ostringstream os;
    os << "[model]\nstates = ";
    for (int s = 0; s < g.state_count(); ++s) os << (s ? ", " : "") << g.state_name(s);
    os << "\ntransitions = ";
    for (std::size_t t = 0; t < g.transitions().size(); ++t) os << (t ? ", " : "") << g.label(g.transitions()[t]);
    os << "\nprogressive = " << (g.progressive() ? "true" : "false") << "\nbeta = ";
    os << join_reals(std::vector<double>(spec.beta.data(), spec.beta.data() + spec.beta.size()));
    os << "\ntau0 = " << r(spec.tau0) << "\ntau = " << r(spec.tau) << "\n";
    if (!spec.initial_probs.empty()) os << "initial = " << join_reals(spec.initial_probs) << "\n";
    os << "sampler = " << (spec.sampler == Sampler::Thinning ? "thinning" : "inversion") << "\n";

    os << "\n[covariates]\n";
    if (!spec.covariates.z.empty()) {
        os << "z = ";
        for (std::size_t k = 0; k < spec.covariates.z.size(); ++k) os << (k ? ", " : "") << law_text(spec.covariates.z[k]);
        os << "\n";
    }
    if (spec.covariates.x) os << "x = " << law_text(*spec.covariates.x) << "\n";
    for (const auto& [state, laws] : spec.covariates.z_by_state) {
        os << "z@" << g.state_name(state) << " = ";
        for (std::size_t k = 0; k < laws.size(); ++k) os << (k ? ", " : "") << law_text(laws[k]);
        os << "\n";
    }

    os << "\n[censoring]\nmode = ";
    switch (spec.censoring.mode) {
        case CensoringLaw::Mode::None: os << "none\n"; break;
        case CensoringLaw::Mode::Subject: os << "subject\ndist = " << law_text(spec.censoring.dist) << "\n"; break;
        case CensoringLaw::Mode::Epoch: os << "epoch\ndist = " << law_text(spec.censoring.dist) << "\n"; break;
    }

    for (std::size_t t = 0; t < g.transitions().size(); ++t) {
        const auto& tm = spec.transitions[t];
        os << "\n[transition " << g.label(g.transitions()[t]) << "]\n";
        std::visit(
            [&](const auto& h) {
                using T = std::decay_t<decltype(h)>;
                if constexpr (std::is_same_v<T, ConstantHazard>) {
                    os << "hazard = constant\nrate = " << r(h.rate) << "\n";
                } else if constexpr (std::is_same_v<T, WeibullLogLinearHazard>) {
                    os << "hazard = weibull\nrate = " << r(h.rate) << "\nshape = " << r(h.shape)
                       << "\nslope = " << r(h.slope) << "\n";
                } else if constexpr (std::is_same_v<T, WeibullPiecewiseLinearHazard>) {
                    os << "hazard = weibull_pl\nrate = " << r(h.rate) << "\nshape = " << r(h.shape)
                       << "\nx_knots = " << join_reals(h.x_knots) << "\nx_values = " << join_reals(h.x_values) << "\n";
                } else {
                    os << "hazard = piecewise\nu_breaks = " << join_reals(h.u_breaks)
                       << "\nx_breaks = " << join_reals(h.x_breaks) << "\nrates = ";
                    for (Eigen::Index i = 0; i < h.rates.rows(); ++i) {
                        if (i) os << " | ";
                        for (Eigen::Index j = 0; j < h.rates.cols(); ++j) os << (j ? ", " : "") << r(h.rates(i, j));
                    }
                    os << "\n";
                }
            },
            tm.baseline.kind());
        os << "bound = " << r(tm.bound) << "\n";
        if (!tm.covariates.is_identity()) {
            os << "covariates = ";
            bool first = true;
            for (const auto& [c, k] : tm.covariates.entries()) {
                os << (first ? "" : ", ") << c + 1 << ":" << k + 1;
                first = false;
            }
            os << "\n";
        }
    }
    return os.str();
}

FitSpec parse_fit(Document& doc) {
    FitSpec out;
    auto* f = doc.find("fit");
    if (f) {
        if (f->has("estimator")) out.estimator = guarded(*f, "estimator", [&] { return estimate::parse_estimator(f->text("estimator")); });
        if (f->has("dimension")) out.dimension = static_cast<int>(f->integer("dimension"));
        if (f->has("mu")) out.mu = static_cast<int>(f->integer("mu"));
        if (f->has("tau")) out.tau = f->real("tau");
        if (f->has("tau0")) out.tau0 = f->real("tau0");
        if (f->has("bandwidth")) out.bandwidth = f->real("bandwidth");
        if (f->has("bandwidth_scale")) out.bandwidth_scale = f->real("bandwidth_scale");
        if (f->has("transitions")) {
            for (const auto& item : f->list("transitions")) {
                const auto [from, to] = guarded(*f, "transitions", [&] { return parse_transition_label(item); });
                out.transitions.push_back({from, to, std::nullopt, std::nullopt, std::nullopt});
            }
        }
        f->reject_unknown();
    }
    for (const auto& [label, s] : doc.prefixed("fit")) {
        const auto [from, to] = guarded(*s, "(section name)", [&] { return parse_transition_label(label); });
        auto it = std::find_if(out.transitions.begin(), out.transitions.end(),
                               [&](const FitTransition& t) { return t.from == from && t.to == to; });
        if (it == out.transitions.end()) {
            out.transitions.push_back({from, to, std::nullopt, std::nullopt, std::nullopt});
            it = out.transitions.end() - 1;
        }
        if (s->has("covariates")) it->covariates = guarded(*s, "covariates", [&] { return parse_covariate_map(s->text("covariates")); });
        if (s->has("bandwidth")) it->bandwidth = s->real("bandwidth");
        if (s->has("mu")) it->mu = static_cast<int>(s->integer("mu"));
        s->reject_unknown();
    }
    return out;
}

}  // namespace mrp::config
