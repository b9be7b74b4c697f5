#include "mrp/multistate.hpp"

#include <algorithm>
#include <set>

#include "mrp/error.hpp"

namespace mrp::multistate {

namespace {

std::string label(const DurationDataset& data, Transition h) {
    return data.states.at(static_cast<std::size_t>(h.from)) + "->" + data.states.at(static_cast<std::size_t>(h.to));
}

std::vector<TransitionConfig> effective(const DurationDataset& data, const MultiFitConfig& config) {
    if (!config.transitions.empty()) return config.transitions;
    std::vector<TransitionConfig> out;
    for (const auto& h : data.observed_transitions()) out.push_back({h, {}, std::nullopt, std::nullopt});
    return out;
}

}  // namespace

void MultiFitConfig::validate(const DurationDataset& data) const {
    if (dimension < 1) throw ConfigError("fit dimension must be >= 1");
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    const auto list = effective(data, *this);
    if (list.empty()) throw ConfigError("no transitions to fit");
    const int nstates = static_cast<int>(data.states.size());
    std::vector<char> used(static_cast<std::size_t>(dimension), 0);
    std::set<Transition> seen;
    for (const auto& t : list) {
        const auto& h = t.transition;
        if (h.from < 0 || h.from >= nstates || h.to < 0 || h.to >= nstates) {
            throw ConfigError("transition outside the data's state set");
        }
        const std::string where = "transition " + label(data, h);
        if (!seen.insert(h).second) throw ConfigError("duplicate " + where);
        if (t.covariates.is_identity()) {
            if (data.dim != dimension) {
                throw ConfigError(where + ": identity covariate map needs " + std::to_string(dimension) +
                                  " covariates, data has " + std::to_string(data.dim));
            }
            std::fill(used.begin(), used.end(), 1);
            continue;
        }
        std::set<int> columns, indices;
        for (const auto& [column, index] : t.covariates.entries()) {
            if (column < 0 || column >= data.dim) throw ConfigError(where + ": covariate column out of range");
            if (index < 0 || index >= dimension) throw ConfigError(where + ": coefficient index out of range");
            if (!columns.insert(column).second || !indices.insert(index).second) {
                throw ConfigError(where + ": covariate map is not injective");
            }
            used[static_cast<std::size_t>(index)] = 1;
        }
        if (t.bandwidth && !(*t.bandwidth > 0.0)) throw ConfigError(where + ": bandwidth must be > 0");
    }
    for (int k = 0; k < dimension; ++k) {
        if (!used[static_cast<std::size_t>(k)]) {
            throw ConfigError("coefficient " + std::to_string(k + 1) + " is not used by any transition");
        }
    }
}

std::vector<estimate::TransitionFit> resolve_fits(const DurationDataset& data, const MultiFitConfig& config) {
    config.validate(data);
    std::vector<estimate::TransitionFit> fits;
    for (const auto& t : effective(data, config)) {
        estimate::TransitionFit fit;
        fit.transition = t.transition;
        fit.covariates = t.covariates;
        fit.kernel.mu = t.mu.value_or(config.mu);
        fit.kernel.tau = config.tau;
        if (config.kind == estimate::EstimatorKind::NaiveCox) {
            // No smoothing; the kernel is unused.
            fit.kernel.bandwidth = t.bandwidth.value_or(0.0);
        } else {
            fit.kernel.bandwidth = t.bandwidth ? *t.bandwidth
                                               : estimate::rule_bandwidth(data, t.transition, config.kind, config.tau,
                                                                          config.bandwidth_scale);
            fit.kernel.validate();
        }
        fits.push_back(fit);
    }
    return fits;
}

estimate::FitResult fit_multistate(const DurationDataset& data, const MultiFitConfig& config,
                                   const Vector& beta_init) {
    if (beta_init.size() != config.dimension) throw ConfigError("initial coefficient vector has the wrong dimension");
    const auto all = resolve_fits(data, config);
    std::vector<estimate::TransitionFit> fits;
    std::vector<std::string> warnings;
    for (const auto& fit : all) {
        if (data.event_times.contains(fit.transition)) {
            fits.push_back(fit);
        } else {
            warnings.push_back("transition " + label(data, fit.transition) + " has no events; excluded from the fit");
        }
    }
    if (fits.empty()) throw EstimationError("no configured transition has events");
    auto result = estimate::solve(data, config.kind, fits, beta_init, config.solver);
    result.warnings.insert(result.warnings.begin(), warnings.begin(), warnings.end());
    return result;
}

std::vector<estimate::HazardSurface> baseline_surfaces(const DurationDataset& data, const MultiFitConfig& config,
                                                       const Vector& beta_hat, const std::vector<double>& grid_v,
                                                       const std::vector<double>& grid_x) {
    std::vector<estimate::HazardSurface> out;
    for (const auto& fit : resolve_fits(data, config)) {
        out.push_back(estimate::hazard_surface(data, fit, beta_hat, grid_v, grid_x));
    }
    return out;
}

}  // namespace mrp::multistate
