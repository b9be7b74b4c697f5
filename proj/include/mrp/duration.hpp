#pragma once

// Duration-scale view of censored histories: every observed sojourn becomes
// one at-risk spell on its own clock, which is what the estimators consume.

#include <limits>
#include <map>
#include <string>
#include <vector>

#include "mrp/model.hpp"
#include "mrp/types.hpp"

namespace mrp {

inline constexpr int kCensored = -1;

struct EpochRecord {
    int subject = 0;
    int epoch = 0;
    int from_state = 0;
    int to_state = kCensored;  // destination, or kCensored
    double entry = 0;          // calendar time T_m at which the spell starts
    double gap = 0;            // observed duration, > 0
    Vector z;
    double x = 0;

    bool is_event() const { return to_state != kCensored; }
    bool is_event(Transition h) const { return from_state == h.from && to_state == h.to; }
    // Y_m(v): at risk at duration v (closed: gap >= v).
    bool at_risk(double v) const { return gap >= v; }
    // N_hm(v)
    double counting(Transition h, double v) const { return is_event(h) && gap <= v ? 1.0 : 0.0; }
};

struct DurationDataset {
    std::vector<std::string> states;
    std::vector<std::string> subject_ids;  // one per subject
    std::vector<EpochRecord> records;      // grouped by subject, epochs ascending
    int dim = 0;                           // covariate dimension
    double tau0 = std::numeric_limits<double>::infinity();
    // Sorted distinct event gaps per transition type.
    std::map<Transition, std::vector<double>> event_times;

    int n() const { return static_cast<int>(subject_ids.size()); }
    // Recomputes event_times and checks every invariant (DataError).
    void reindex();
    // Transitions with at least one event, in (from, to) order.
    std::vector<Transition> observed_transitions() const;
    int state_index(const std::string& label) const;
};

// One record per observed spell. Spells censored at their own start are
// dropped; spells longer than tau0 are censored at tau0. Pass infinity to
// keep the full gaps.
DurationDataset to_duration(const std::vector<model::SubjectHistory>& cohort, const model::StateGraph& graph,
                            double tau0 = std::numeric_limits<double>::infinity());

// Administrative censoring at duration tau0 applied to an existing dataset.
DurationDataset apply_window(const DurationDataset& data, double tau0);

// 95th percentile of the observed gaps (the default analysis window).
double default_tau0(const DurationDataset& data);

// M_hm(v) = N_hm(v) - integral over [0, v] of Y_m(u) exp(beta' Z_h) alpha_h(u, X_m) du,
// with the compensator computed from the closed-form cumulative baseline.
double martingale_residual(const EpochRecord& record, Transition h, const Vector& beta, const CovariateMap& map,
                           const model::BaselineHazard& baseline, double v);

}  // namespace mrp
