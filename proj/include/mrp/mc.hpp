#pragma once

// Monte Carlo harness: replicated simulate -> fit pipelines summarized per
// (estimator, n, bandwidth) cell, bias-rate sweeps for A_hat, martingale
// identity checks, hazard band calibration and pass/fail checks.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mrp/estimate.hpp"
#include "mrp/model.hpp"

namespace mrp::mc {

enum class Target { Coverage, Inconsistency, BiasRate, Martingale, HazardBand, Multistate };

std::string to_string(Target target);
Target parse_target(const std::string& text);

// Either a fixed bandwidth or the plug-in rule times a scale.
struct BandwidthChoice {
    bool rule = true;
    double value = 1.0;  // scale when rule, bandwidth otherwise

    static BandwidthChoice fixed(double a) { return {false, a}; }
    static BandwidthChoice scaled_rule(double c) { return {true, c}; }
    std::string describe() const;
};

struct Thresholds {
    double coverage_lo = 0.91;
    double coverage_hi = 0.98;
    double bias_shrink = 1.7;     // |bias(n_min)| / |bias(n_max)|
    double naive_bias_se = 5.0;   // naive |bias| in MC standard errors
    double naive_ratio = 5.0;     // naive |bias| / smoothed |bias|
    double slope_lo = 1.6;
    double slope_hi = 2.4;
    double band_tolerance = 0.15;  // |SD / mean stderr - 1|
    double martingale_z = 4.0;
    double multistate_z = 4.0;
    double gate = 0.2;  // bias-rate point used when replicate SE < gate * |bias|
};

struct ExperimentSpec {
    std::string name = "experiment";
    model::ModelSpec model;
    std::vector<int> n_grid;
    std::vector<BandwidthChoice> bandwidth_grid;  // empty: the rule
    // Per-estimator replacement of bandwidth_grid for the fit targets.
    std::map<estimate::EstimatorKind, std::vector<BandwidthChoice>> estimator_bandwidths;
    int mu = 2;
    int replicates = 100;
    std::vector<estimate::EstimatorKind> estimators{estimate::EstimatorKind::PartialLikelihood};
    std::vector<Target> targets{Target::Coverage};
    std::uint64_t master_seed = 1;
    int threads = 1;
    std::optional<double> tau0;  // analysis window; model.tau0 when unset
    // Hazard targets.
    std::vector<double> grid_v;
    std::vector<double> grid_x;
    int hazard_transition = 0;      // index into model.graph.transitions()
    bool hazard_at_truth = false;   // hazard band at beta_0 instead of the PL fit
    long long martingale_epochs = 100000;
    Thresholds thresholds;
    estimate::SolverOptions solver;

    double window() const { return tau0.value_or(model.tau0); }
    std::vector<BandwidthChoice> bandwidths() const;
    std::vector<BandwidthChoice> bandwidths(estimate::EstimatorKind kind) const;
    bool has(Target t) const;
    // ConfigError on violated invariants.
    void validate() const;
};

struct ReplicateRow {
    estimate::EstimatorKind estimator{};
    int n = 0;
    BandwidthChoice bandwidth;
    int replicate = 0;
    bool ok = false;
    bool converged = false;
    int iterations = 0;
    double used_bandwidth = 0;  // first transition
    Vector beta;
    Vector se;
    double skip_fraction = 0;
    std::string error;
};

struct CellSummary {
    estimate::EstimatorKind estimator{};
    int n = 0;
    BandwidthChoice bandwidth;
    int replicates = 0;
    int succeeded = 0;
    int failed = 0;            // exceptions
    int not_converged = 0;     // among succeeded
    bool valid = false;        // at least two successful replicates
    Vector bias;
    Vector sd;
    Vector mc_se;              // sd / sqrt(succeeded)
    Vector mean_se;
    Vector coverage;           // 95% Wald
    Vector coverage_se;        // binomial
    double mean_skip = 0;
    double max_skip = 0;
    double mean_bandwidth = 0;
};

struct BiasPoint {
    double bandwidth = 0;
    double v = 0;
    double x = 0;
    double truth = 0;
    double mean = 0;
    double bias = 0;
    double se = 0;
    int replicates = 0;
};

struct BiasRateResult {
    std::vector<BiasPoint> points;
    std::vector<double> bandwidths;
    std::vector<double> sup_bias;  // max over the grid of |bias|
    std::vector<double> sup_se;    // replicate SE at the maximizer
    std::vector<char> used;        // passed the SE gate
    double slope = 0;
    double slope_se = 0;
    bool valid = false;            // at least three gated points
    bool flat = false;             // no bias distinguishable from zero
    std::string note;
};

struct BandPoint {
    double v = 0;
    double x = 0;
    double sd = 0;        // across replicates
    double mean_se = 0;   // plug-in
    double ratio = 0;     // sd / mean_se
    int replicates = 0;
};

struct MartingaleRow {
    std::string identity;   // "first", "second" or "cross"
    std::string transition;
    std::string test_function;
    double mean = 0;
    double se = 0;
    double z = 0;
};

struct Check {
    std::string name;
    double value = 0;
    std::string requirement;
    bool pass = false;
};

struct ExperimentReport {
    std::string name;
    std::uint64_t master_seed = 0;
    std::vector<CellSummary> cells;
    std::vector<ReplicateRow> rows;
    std::optional<BiasRateResult> bias_rate;
    std::vector<BandPoint> band;
    std::vector<MartingaleRow> martingale;
    long long martingale_epochs = 0;
    std::vector<Check> checks;

    bool all_pass() const;
    const CellSummary* cell(estimate::EstimatorKind kind, int n) const;
};

ExperimentReport run_experiment(const ExperimentSpec& spec);

// Replicate means of A_hat(v; x) at beta_0 for each fixed bandwidth at the
// largest n, and the log-log slope of the sup-grid |bias| against a.
// ConfigError with fewer than three bandwidths.
BiasRateResult bias_rate_sweep(const ExperimentSpec& spec);

// Martingale identities on at least spec.martingale_epochs records at the true
// parameters. Fills report.martingale and report.martingale_epochs.
std::vector<MartingaleRow> martingale_identities(const ExperimentSpec& spec, long long* epochs = nullptr);

std::vector<BandPoint> hazard_band(const ExperimentSpec& spec);

std::string summary_text(const ExperimentReport& report);
// cells.csv, replicates.csv, bias_rate.csv, hazard_band.csv, martingale.csv,
// checks.csv and summary.txt under `dir`, each written atomically.
void write_report(const ExperimentReport& report, const std::filesystem::path& dir);

}  // namespace mrp::mc
