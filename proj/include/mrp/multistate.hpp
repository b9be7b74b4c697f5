#pragma once

// Shared-coefficient fits over several transition types: the scores and
// information matrices of the individual transitions are summed, each
// transition keeping its own bandwidth and covariate map.

#include <optional>
#include <string>
#include <vector>

#include "mrp/duration.hpp"
#include "mrp/estimate.hpp"

namespace mrp::multistate {

struct TransitionConfig {
    Transition transition;
    CovariateMap covariates;           // identity when empty
    std::optional<double> bandwidth;   // rule bandwidth when unset
    std::optional<int> mu;             // MultiFitConfig::mu when unset
};

struct MultiFitConfig {
    std::vector<TransitionConfig> transitions;  // empty: every observed transition, identity maps
    int dimension = 1;                          // length of beta
    estimate::EstimatorKind kind = estimate::EstimatorKind::PartialLikelihood;
    int mu = 2;
    double tau = 1;
    double bandwidth_scale = 1;
    estimate::SolverOptions solver;

    // Throws ConfigError: transitions outside the state set, duplicate
    // transitions, non-injective maps, coefficients no transition uses.
    void validate(const DurationDataset& data) const;
};

// Per-transition fits with bandwidths resolved (rule or override).
// Transitions without events get the rule bandwidth of their origin state.
std::vector<estimate::TransitionFit> resolve_fits(const DurationDataset& data, const MultiFitConfig& config);

// Solves sum_h score_h(beta) = 0. Transitions without events are dropped
// with a warning.
estimate::FitResult fit_multistate(const DurationDataset& data, const MultiFitConfig& config,
                                   const Vector& beta_init);

// One surface per configured transition, each with its own bandwidth.
std::vector<estimate::HazardSurface> baseline_surfaces(const DurationDataset& data, const MultiFitConfig& config,
                                                       const Vector& beta_hat, const std::vector<double>& grid_v,
                                                       const std::vector<double>& grid_x);

}  // namespace mrp::multistate
