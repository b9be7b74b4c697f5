#include "mrp/duration.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mrp/error.hpp"

namespace mrp {

void DurationDataset::reindex() {
    event_times.clear();
    const int nstates = static_cast<int>(states.size());
    int previous_subject = -1;
    int previous_epoch = -1;
    for (const auto& r : records) {
        std::ostringstream where;
        where << "subject " << (r.subject >= 0 && r.subject < n() ? subject_ids[static_cast<std::size_t>(r.subject)]
                                                                   : std::to_string(r.subject))
              << ", epoch " << r.epoch;
        if (r.subject < 0 || r.subject >= n()) throw DataError(where.str() + ": subject index out of range");
        if (r.subject < previous_subject) throw DataError(where.str() + ": records not grouped by subject");
        if (r.subject == previous_subject && r.epoch <= previous_epoch) {
            throw DataError(where.str() + ": epochs not increasing");
        }
        if (!(r.gap > 0.0) || !std::isfinite(r.gap)) throw DataError(where.str() + ": gap must be finite and > 0");
        if (r.from_state < 0 || r.from_state >= nstates) throw DataError(where.str() + ": unknown from_state");
        if (r.to_state != kCensored && (r.to_state < 0 || r.to_state >= nstates)) {
            throw DataError(where.str() + ": unknown to_state");
        }
        if (r.z.size() != dim) throw DataError(where.str() + ": covariate dimension mismatch");
        if (!std::isfinite(r.x)) throw DataError(where.str() + ": mark must be finite");
        if (r.is_event()) event_times[{r.from_state, r.to_state}].push_back(r.gap);
        previous_subject = r.subject;
        previous_epoch = r.epoch;
    }
    for (auto& [h, times] : event_times) {
        std::sort(times.begin(), times.end());
        times.erase(std::unique(times.begin(), times.end()), times.end());
    }
}

std::vector<Transition> DurationDataset::observed_transitions() const {
    std::vector<Transition> out;
    for (const auto& [h, times] : event_times) out.push_back(h);
    return out;
}

int DurationDataset::state_index(const std::string& label) const {
    const auto it = std::find(states.begin(), states.end(), label);
    if (it == states.end()) throw DataError("unknown state '" + label + "'");
    return static_cast<int>(it - states.begin());
}

DurationDataset to_duration(const std::vector<model::SubjectHistory>& cohort, const model::StateGraph& graph,
                            double tau0) {
    if (!(tau0 > 0.0)) throw DomainError("tau0 must be > 0");
    DurationDataset data;
    data.states = graph.states();
    data.tau0 = tau0;
    data.dim = -1;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const auto& h = cohort[i];
        const int subject = static_cast<int>(i);
        data.subject_ids.push_back(std::to_string(i + 1));
        for (std::size_t m = 0; m < h.epochs.size(); ++m) {
            const auto& e = h.epochs[m];
            if (data.dim < 0) data.dim = static_cast<int>(e.z.size());
            if (m + 1 < h.epochs.size() && !(h.epochs[m + 1].time > e.time)) {
                throw DataError("subject " + data.subject_ids.back() + ": non-increasing event times");
            }
            EpochRecord r;
            r.subject = subject;
            r.epoch = static_cast<int>(m);
            r.from_state = e.state;
            r.entry = e.time;
            r.z = e.z;
            r.x = e.x;
            if (m + 1 < h.epochs.size()) {
                r.gap = h.epochs[m + 1].time - e.time;
                r.to_state = h.epochs[m + 1].state;
            } else if (h.terminal == model::Terminal::Censored) {
                r.gap = h.end_time - e.time;
                r.to_state = kCensored;
                if (r.gap < 0.0) throw DataError("subject " + data.subject_ids.back() + ": censored before last epoch");
            } else {
                continue;  // absorbing state: no spell at risk
            }
            if (!(r.gap > 0.0)) continue;
            if (r.gap > tau0) {
                r.gap = tau0;
                r.to_state = kCensored;
            }
            data.records.push_back(std::move(r));
        }
    }
    if (data.dim < 0) data.dim = 0;
    data.reindex();
    return data;
}

DurationDataset apply_window(const DurationDataset& data, double tau0) {
    if (!(tau0 > 0.0)) throw DomainError("tau0 must be > 0");
    DurationDataset out = data;
    out.tau0 = tau0;
    for (auto& r : out.records) {
        if (r.gap > tau0) {
            r.gap = tau0;
            r.to_state = kCensored;
        }
    }
    out.reindex();
    return out;
}

double default_tau0(const DurationDataset& data) {
    if (data.records.empty()) throw DataError("no records");
    std::vector<double> gaps;
    gaps.reserve(data.records.size());
    for (const auto& r : data.records) gaps.push_back(r.gap);
    std::sort(gaps.begin(), gaps.end());
    // Type-7 quantile (linear interpolation between order statistics).
    const double pos = 0.95 * static_cast<double>(gaps.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, gaps.size() - 1);
    return gaps[lo] + (pos - static_cast<double>(lo)) * (gaps[hi] - gaps[lo]);
}

double martingale_residual(const EpochRecord& record, Transition h, const Vector& beta, const CovariateMap& map,
                           const model::BaselineHazard& baseline, double v) {
    if (record.from_state != h.from) return 0.0;
    const double upper = std::min(v, record.gap);
    const double compensator = std::exp(map.linear_predictor(beta, record.z)) * baseline.cumulative(upper, record.x);
    return record.counting(h, v) - compensator;
}

}  // namespace mrp
