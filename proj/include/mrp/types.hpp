#pragma once

#include <algorithm>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace mrp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// A one-step transition between two states (indices into a state list).
// from == to denotes a renewal of the same state.
struct Transition {
    int from = 0;
    int to = 0;

    friend bool operator==(const Transition&, const Transition&) = default;
    friend auto operator<=>(const Transition&, const Transition&) = default;
};

// Which entries of the global coefficient vector a transition uses.
// Each entry maps an epoch covariate column onto a coefficient index, so
// the transition-specific covariate Z_h is the epoch covariate vector
// scattered into a vector of the coefficient dimension. An empty map means
// the identity (column k -> coefficient k).
class CovariateMap {
public:
    CovariateMap() = default;
    explicit CovariateMap(std::vector<std::pair<int, int>> entries) : entries_(std::move(entries)) {}

    static CovariateMap identity() { return {}; }

    bool is_identity() const { return entries_.empty(); }
    const std::vector<std::pair<int, int>>& entries() const { return entries_; }

    // Z_h for epoch covariates z, in a coefficient space of dimension p.
    Vector embed(const Vector& z, int p) const {
        if (is_identity()) {
            Vector out = Vector::Zero(p);
            const auto k = std::min<Eigen::Index>(z.size(), p);
            out.head(k) = z.head(k);
            return out;
        }
        Vector out = Vector::Zero(p);
        for (const auto& [column, index] : entries_) out[index] += z[column];
        return out;
    }

    double linear_predictor(const Vector& beta, const Vector& z) const {
        if (is_identity()) {
            const auto k = std::min(z.size(), beta.size());
            return beta.head(k).dot(z.head(k));
        }
        double eta = 0.0;
        for (const auto& [column, index] : entries_) eta += beta[index] * z[column];
        return eta;
    }

    friend bool operator==(const CovariateMap&, const CovariateMap&) = default;

private:
    std::vector<std::pair<int, int>> entries_;
};

}  // namespace mrp
