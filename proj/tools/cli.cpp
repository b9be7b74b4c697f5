#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "mrp/config.hpp"
#include "mrp/dataset_io.hpp"
#include "mrp/error.hpp"
#include "mrp/io.hpp"
#include "mrp/mc.hpp"
#include "mrp/multistate.hpp"

namespace mrp::cli {

namespace fs = std::filesystem;
using estimate::EstimatorKind;

namespace {

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Domain:
        case ErrorKind::Config: return kConfigError;
        case ErrorKind::Data: return kDataError;
        case ErrorKind::Estimation: return kEstimationError;
        case ErrorKind::Check: return kCheckFailure;
    }
    return 1;
}

fs::path sibling(const fs::path& path, const std::string& suffix) {
    auto out = path;
    out.replace_filename(path.stem().string() + suffix);
    return out;
}

DurationDataset load_data(const std::string& path) {
    return io::read_dataset_csv(io::read_file(path), path);
}

// "20" -> count, otherwise a comma separated list.
std::vector<double> parse_grid(const std::string& text, double hi, bool interior, const std::string& flag) {
    const bool count = !text.empty() && std::all_of(text.begin(), text.end(), [](char c) { return c >= '0' && c <= '9'; });
    std::vector<double> out;
    if (count) {
        const auto k = std::stoi(text);
        if (k < 1) throw ConfigError(flag + ": grid size must be >= 1");
        for (int i = 1; i <= k; ++i) out.push_back(interior ? hi * i / (k + 1) : hi * i / k);
        return out;
    }
    for (const auto& item : config::split_list(text)) {
        try {
            out.push_back(io::parse_real(item, flag));
        } catch (const DataError& e) {
            throw ConfigError(e.what());
        }
    }
    return out;
}

std::string label(const DurationDataset& data, Transition h) {
    return data.states.at(static_cast<std::size_t>(h.from)) + "->" + data.states.at(static_cast<std::size_t>(h.to));
}

std::string map_text(const CovariateMap& map) {
    if (map.is_identity()) return "identity";
    std::string out;
    for (const auto& [c, k] : map.entries()) out += (out.empty() ? "" : ", ") + std::to_string(c + 1) + ":" + std::to_string(k + 1);
    return out;
}

// ---------------------------------------------------------------------------

struct SimulateOptions {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> n;
    int threads = 1;
};

int cmd_simulate(const SimulateOptions& o, std::ostream& out) {
    auto doc = config::Document::load(o.config);
    const auto spec = config::parse_model(doc);
    int n = 100;
    std::uint64_t seed = 1;
    if (auto* s = doc.find("simulate")) {
        n = static_cast<int>(s->integer("n", n));
        seed = static_cast<std::uint64_t>(s->integer("seed", static_cast<long long>(seed)));
        s->reject_unknown();
    }
    doc.reject_unknown_sections({"model", "covariates", "censoring", "transition", "simulate"});
    if (o.n) n = *o.n;
    if (o.seed) seed = *o.seed;
    if (n < 1) throw ConfigError("--n must be >= 1");
    if (o.threads < 1) throw ConfigError("--threads must be >= 1");

    const auto cohort = model::simulate_cohort(spec, n, seed, o.threads);
    const auto data = to_duration(cohort, spec.graph);
    const fs::path path(o.out);
    const auto resolved = config::format_model(spec) + "\n[simulate]\nn = " + std::to_string(n) +
                          "\nseed = " + std::to_string(seed) + "\n";
    io::write_atomic(path, io::write_duration_csv(data));
    io::write_atomic(sibling(path, "_calendar.csv"), io::write_calendar_csv(data));
    io::write_atomic(sibling(path, "_model.cfg"), resolved);
    out << resolved;
    out << "\n# " << data.records.size() << " spells from " << n << " subjects written to " << path.string() << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------

struct FitOptions {
    std::string data;
    std::string config;
    std::string out;
    std::optional<std::string> estimator;
    std::optional<double> bandwidth;
    std::optional<int> mu;
    std::optional<double> tau0;
    std::optional<double> tau;
};

double default_tau(const DurationDataset& data) {
    for (const auto& r : data.records) {
        if (!(r.x > 0.0 && r.x < 1.0)) {
            throw ConfigError("marks are not all inside (0, 1): pass --tau (or [fit] tau)");
        }
    }
    return 1.0;
}

int cmd_fit(const FitOptions& o, std::ostream& out) {
    config::FitSpec fs_spec;
    if (!o.config.empty()) {
        auto doc = config::Document::load(o.config);
        fs_spec = config::parse_fit(doc);
        doc.reject_unknown_sections({"fit"});
    }
    const auto full = load_data(o.data);
    const auto kind = o.estimator ? estimate::parse_estimator(*o.estimator)
                                  : fs_spec.estimator.value_or(EstimatorKind::PartialLikelihood);
    const double tau = o.tau ? *o.tau : fs_spec.tau ? *fs_spec.tau : default_tau(full);
    const double tau0 = o.tau0 ? *o.tau0 : fs_spec.tau0 ? *fs_spec.tau0 : default_tau0(full);
    if (!(tau > 0.0)) throw ConfigError("--tau must be > 0");
    if (!(tau0 > 0.0)) throw ConfigError("--tau0 must be > 0");

    multistate::MultiFitConfig c;
    c.kind = kind;
    c.dimension = fs_spec.dimension.value_or(full.dim);
    c.mu = o.mu ? *o.mu : fs_spec.mu.value_or(2);
    c.tau = tau;
    c.bandwidth_scale = fs_spec.bandwidth_scale.value_or(1.0);
    const std::optional<double> bandwidth = o.bandwidth ? o.bandwidth : fs_spec.bandwidth;
    for (const auto& t : fs_spec.transitions) {
        multistate::TransitionConfig tc;
        tc.transition = {full.state_index(t.from), full.state_index(t.to)};
        if (t.covariates) tc.covariates = *t.covariates;
        tc.bandwidth = t.bandwidth ? t.bandwidth : bandwidth;
        tc.mu = t.mu;
        c.transitions.push_back(tc);
    }
    if (c.transitions.empty()) {
        for (const auto& h : full.observed_transitions()) c.transitions.push_back({h, {}, bandwidth, std::nullopt});
    }
    const auto data = kind == EstimatorKind::NaiveCox ? full : apply_window(full, tau0);
    const auto fits = multistate::resolve_fits(data, c);
    const auto fit = multistate::fit_multistate(data, c, Vector::Zero(c.dimension));

    std::ostringstream os;
    const auto r = io::format_real;
    os << "[fit]\nestimator = " << estimate::to_string(kind) << "\n";
    if (kind == EstimatorKind::NaiveCox) {
        os << "comparator_only = true\n"
           << "note = comparator only: calendar-time Cox score without the duration transform or kernel smoothing\n";
    } else {
        os << "comparator_only = false\n";
    }
    os << "data = " << o.data << "\nsubjects = " << data.n() << "\nrecords = " << data.records.size()
       << "\ndimension = " << c.dimension << "\ntau = " << r(tau) << "\ntau0 = " << r(tau0) << "\nmu = " << c.mu
       << "\nconverged = " << (fit.converged ? "true" : "false") << "\niterations = " << fit.iterations
       << "\nscore_norm = " << r(fit.final_score_norm) << "\n";
    const auto se = fit.standard_errors();
    os << "\n[coefficients]\n";
    for (int k = 0; k < c.dimension; ++k) {
        const double z = fit.beta_hat[k] / se[k];
        const auto j = std::to_string(k + 1);
        os << "beta_" << j << " = " << r(fit.beta_hat[k]) << "\nse_" << j << " = " << r(se[k]) << "\nz_" << j << " = "
           << r(z) << "\np_" << j << " = " << r(std::erfc(std::abs(z) / std::sqrt(2.0))) << "\n";
    }
    os << "\n[covariance]\n";
    for (int i = 0; i < c.dimension; ++i) {
        os << "row_" << i + 1 << " = ";
        for (int j = 0; j < c.dimension; ++j) os << (j ? ", " : "") << r(fit.covariance(i, j));
        os << "\n";
    }
    for (const auto& tf : fits) {
        os << "\n[transition " << label(data, tf.transition) << "]\n";
        int events = 0, skipped = 0;
        for (const auto& d : fit.transitions) {
            if (d.transition == tf.transition) {
                events = d.events;
                skipped = d.skipped;
            }
        }
        if (kind != EstimatorKind::NaiveCox) os << "bandwidth = " << r(tf.kernel.bandwidth) << "\nmu = " << tf.kernel.mu << "\n";
        os << "covariates = " << map_text(tf.covariates) << "\nevents = " << events << "\nskipped = " << skipped
           << "\nskip_rate = " << r(events ? static_cast<double>(skipped) / events : 0.0) << "\n";
    }
    if (!fit.warnings.empty()) {
        os << "\n[warnings]\n";
        for (std::size_t i = 0; i < fit.warnings.size(); ++i) os << "warning_" << i + 1 << " = " << fit.warnings[i] << "\n";
    }
    if (o.out.empty()) {
        out << os.str();
    } else {
        io::write_atomic(o.out, os.str());
        out << "fit report written to " << o.out << "\n";
    }
    return kOk;
}

// ---------------------------------------------------------------------------

struct HazardOptions {
    std::string data;
    std::string fit;
    std::string out;
    std::string grid_v = "20";
    std::string grid_x = "20";
};

int cmd_hazard(const HazardOptions& o, std::ostream& out, std::ostream& err) {
    auto report = config::Document::load(o.fit);
    auto& f = report.section("fit");
    const auto kind = estimate::parse_estimator(f.text("estimator"));
    if (kind == EstimatorKind::NaiveCox) throw ConfigError("hazard surfaces need a smoothed fit (m or pl), not naive");
    const double tau = f.real("tau");
    const double tau0 = f.real("tau0");
    const int p = static_cast<int>(f.integer("dimension"));
    auto& coef = report.section("coefficients");
    Vector beta(p);
    for (int k = 0; k < p; ++k) beta[k] = coef.real("beta_" + std::to_string(k + 1));

    const auto data = apply_window(load_data(o.data), tau0);
    const auto grid_v = parse_grid(o.grid_v, tau0, false, "--grid-v");
    const auto grid_x = parse_grid(o.grid_x, tau, true, "--grid-x");
    for (double v : grid_v) {
        if (!(v >= 0.0 && v <= tau0)) throw DomainError("--grid-v value " + io::format_real(v) + " outside [0, tau0]");
    }
    for (double x : grid_x) {
        if (!(x >= 0.0 && x <= tau)) throw DomainError("--grid-x value " + io::format_real(x) + " outside [0, tau]");
    }

    io::CsvWriter csv({"transition", "v", "x", "A_hat", "stderr", "d_pq", "skipped"});
    const auto r = io::format_real;
    for (const auto& [name, s] : report.prefixed("transition")) {
        const auto [from, to] = config::parse_transition_label(name);
        estimate::TransitionFit tf;
        tf.transition = {data.state_index(from), data.state_index(to)};
        tf.covariates = config::parse_covariate_map(s->text("covariates"));
        tf.kernel = {static_cast<int>(s->integer("mu")), s->real("bandwidth"), tau};
        const auto surface = estimate::hazard_surface(data, tf, beta, grid_v, grid_x);
        for (const auto& w : surface.warnings) err << "warning: " << w << "\n";
        for (std::size_t j = 0; j < grid_x.size(); ++j) {
            for (std::size_t i = 0; i < grid_v.size(); ++i) {
                const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
                csv.row({name, r(grid_v[i]), r(grid_x[j]), r(surface.values(ii, jj)), r(surface.stderr_(ii, jj)),
                         r(surface.d_pq[j]), std::to_string(surface.skipped[j])});
            }
        }
    }
    io::write_atomic(o.out, csv.str());
    out << "hazard surface written to " << o.out << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------

struct McOptions {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    bool check = false;
};

int cmd_mc(const McOptions& o, std::ostream& out) {
    auto doc = config::Document::load(o.config);
    auto spec = config::parse_experiment(doc);
    if (o.seed) spec.master_seed = *o.seed;
    if (o.threads) spec.threads = *o.threads;
    spec.validate();
    const auto report = mc::run_experiment(spec);
    mc::write_report(report, o.out);
    out << mc::summary_text(report);
    if (o.check && !report.all_pass()) {
        throw Error(ErrorKind::Check, "one or more checks failed (see " + (fs::path(o.out) / "checks.csv").string() + ")");
    }
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Modulated renewal process estimation"};
    app.require_subcommand(1);

    SimulateOptions sim;
    auto* s = app.add_subcommand("simulate", "simulate a cohort and write duration and calendar CSVs");
    s->add_option("--config", sim.config, "model config")->required();
    s->add_option("--out", sim.out, "duration CSV path")->required();
    s->add_option("--seed", sim.seed, "master seed");
    s->add_option("--n", sim.n, "number of subjects");
    s->add_option("--threads", sim.threads, "worker threads");

    FitOptions fit;
    auto* f = app.add_subcommand("fit", "fit the regression coefficients");
    f->add_option("--data", fit.data, "duration or calendar CSV")->required();
    f->add_option("--config", fit.config, "optional [fit] config");
    f->add_option("--out", fit.out, "report path (stdout when omitted)");
    f->add_option("--estimator", fit.estimator, "m | pl | naive");
    f->add_option("--bandwidth", fit.bandwidth, "bandwidth for every transition");
    f->add_option("--mu", fit.mu, "kernel order 1..3");
    f->add_option("--tau0", fit.tau0, "duration window");
    f->add_option("--tau", fit.tau, "mark endpoint");

    HazardOptions hz;
    auto* h = app.add_subcommand("hazard", "baseline cumulative hazard surfaces");
    h->add_option("--data", hz.data, "duration or calendar CSV")->required();
    h->add_option("--fit", hz.fit, "fit report")->required();
    h->add_option("--out", hz.out, "surface CSV")->required();
    h->add_option("--grid-v", hz.grid_v, "count or comma separated durations");
    h->add_option("--grid-x", hz.grid_x, "count or comma separated marks");

    McOptions mco;
    auto* m = app.add_subcommand("mc", "run a Monte Carlo experiment");
    m->add_option("--config", mco.config, "experiment config")->required();
    m->add_option("--out", mco.out, "report directory")->required();
    m->add_option("--seed", mco.seed, "master seed");
    m->add_option("--threads", mco.threads, "worker threads");
    m->add_flag("--check", mco.check, "exit 5 when a check fails");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kConfigError;
    }
    try {
        if (s->parsed()) return cmd_simulate(sim, out);
        if (f->parsed()) return cmd_fit(fit, out);
        if (h->parsed()) return cmd_hazard(hz, out, err);
        if (m->parsed()) return cmd_mc(mco, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kDataError;
    }
    return kConfigError;
}

}  // namespace mrp::cli
