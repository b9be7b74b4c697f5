#pragma once

// Kernel-localized estimation on the duration scale:
//   * leave-one-out risk processes S^(k)_{-i}(u, beta, x), k = 0, 1, 2;
//   * the conditional Aalen-Nelson estimator of A_h(v; x) and its
//     pointwise standard error;
//   * the M-estimator score (Z S0 - S1) and the smoothed partial-likelihood
//     score (Z - S1/S0), their information matrices and influence
//     contributions;
//   * a damped Newton solver and plug-in covariance estimators;
//   * the unsmoothed calendar-time Cox score, kept as a comparator.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mrp/duration.hpp"
#include "mrp/kernels.hpp"
#include "mrp/types.hpp"

namespace mrp::estimate {

// Leave-one-out risk mass at or below this is treated as an empty risk set.
inline constexpr double kRiskEpsilon = 1e-10;
// Ratio increments (partial likelihood, A_hat) are also skipped when the
// at-risk kernel weights cancel: sum K / sum |K| below this floor. The test
// uses kernel weights only, so the skipped set does not move with beta.
inline constexpr double kKernelMassFloor = 0.5;

enum class EstimatorKind { MEstimator, PartialLikelihood, NaiveCox };

std::string to_string(EstimatorKind kind);
// Accepts "m", "pl", "naive" (and the long names).
EstimatorKind parse_estimator(const std::string& text);

struct TransitionFit {
    Transition transition;
    kernels::KernelSpec kernel;
    CovariateMap covariates;
};

struct RiskEval {
    double s0 = 0;
    Vector s1;
    Matrix s2;
};

// Direct evaluation of the kernel-weighted risk sums at (u, x). With an
// excluded subject the sums run over the other subjects and are divided
// by (n-1)a; otherwise over all subjects, divided by na.
RiskEval risk_eval(const DurationDataset& data, std::optional<int> exclude_subject, const TransitionFit& fit, double u,
                   const Vector& beta, double x);

// Records at risk for one transition type, sorted by mark, with the
// transition-specific covariates already scattered into coefficient space.
class RiskView {
public:
    RiskView(const DurationDataset& data, const TransitionFit& fit, int p);

    int size() const { return static_cast<int>(x_.size()); }
    int n_subjects() const { return n_; }
    int dimension() const { return p_; }
    const TransitionFit& fit() const { return fit_; }

    double x(int k) const { return x_[static_cast<std::size_t>(k)]; }
    double gap(int k) const { return gap_[static_cast<std::size_t>(k)]; }
    int subject(int k) const { return subject_[static_cast<std::size_t>(k)]; }
    bool is_event(int k) const { return event_[static_cast<std::size_t>(k)]; }
    auto z(int k) const { return z_.col(k); }
    const std::vector<int>& events() const { return events_; }

    // View positions whose mark lies in [lo, hi].
    std::pair<int, int> mark_range(double lo, double hi) const;
    // exp(beta' Z_k) for every position.
    std::vector<double> relative_risk(const Vector& beta) const;

private:
    TransitionFit fit_;
    int n_ = 0;
    int p_ = 0;
    std::vector<double> x_;
    std::vector<double> gap_;
    std::vector<int> subject_;
    std::vector<char> event_;
    Matrix z_;  // p x size
    std::vector<int> events_;
};

// Step function v -> A_hat(v; x) with its variance increments.
struct AalenNelsonCurve {
    double x = 0;
    kernels::BoundaryRegion region;
    double d_pq = 0;
    std::vector<double> times;       // event gaps of the used increments, sorted
    std::vector<double> increments;  // A_hat jumps
    std::vector<double> variance_increments;
    int events_in_support = 0;
    int skipped = 0;

    double value(double v) const;
    double variance(double v) const;
    double skip_fraction() const {
        return events_in_support == 0 ? 0.0 : static_cast<double>(skipped) / events_in_support;
    }
};

// Builds the risk view once and evaluates A_hat(.; x) at any mark and
// bandwidth for a fixed beta.
class HazardEstimator {
public:
    HazardEstimator(const DurationDataset& data, const TransitionFit& fit, const Vector& beta);

    // Throws BandwidthError when more than half of the increments in the
    // kernel support were skipped (unless `allow_skips`).
    AalenNelsonCurve curve(double x, const kernels::KernelSpec& kernel, bool allow_skips = false) const;
    AalenNelsonCurve curve(double x) const { return curve(x, view_.fit().kernel); }

private:
    RiskView view_;
    std::vector<double> risk_;
};

AalenNelsonCurve aalen_nelson(const DurationDataset& data, const TransitionFit& fit, const Vector& beta, double x);

// Pointwise standard errors of a curve on grid_v:
// sqrt( d_pq/(na) * sum over events <= v of dA_hat / S0_{-i} ).
std::vector<double> hazard_stderr(const AalenNelsonCurve& curve, const std::vector<double>& grid_v);

struct HazardSurface {
    Transition transition;
    std::vector<double> grid_v;
    std::vector<double> grid_x;
    Matrix values;  // grid_v x grid_x
    Matrix stderr_;
    std::vector<double> d_pq;  // per grid_x
    std::vector<int> skipped;  // per grid_x
    std::vector<std::string> warnings;
};

HazardSurface hazard_surface(const DurationDataset& data, const TransitionFit& fit, const Vector& beta,
                             const std::vector<double>& grid_v, const std::vector<double>& grid_x);

// Score, information and influence contributions of one smoothed score.
struct ScoreEval {
    Vector score;                  // n^-1 sum over events
    Matrix info;                   // negative derivative of score
    Matrix contributions;          // n x p, sums to n * score (PL) or 2n * score (M)
    std::vector<Matrix> per_transition;  // contributions split by transition
    std::vector<int> events;       // per transition
    std::vector<int> skipped;      // per transition (PL only)
};

// Sum over transition types of the smoothed scores. Kernel weights are
// computed once at construction; evaluate() only re-weights by exp(beta' Z).
class SmoothedScore {
public:
    SmoothedScore(const DurationDataset& data, std::vector<TransitionFit> fits, EstimatorKind kind, int p);

    ScoreEval evaluate(const Vector& beta, bool with_info = true, bool with_contributions = false) const;
    int dimension() const { return p_; }
    int n_subjects() const { return n_; }
    EstimatorKind kind() const { return kind_; }
    const std::vector<TransitionFit>& fits() const { return fits_; }

private:
    struct Pairs {
        std::vector<int> offsets;    // per event, into neighbor/weight
        std::vector<int> neighbor;   // view positions
        std::vector<double> weight;  // K_n(X_e, X_k)
        std::vector<char> cancelled; // per event, kernel mass below the floor
    };
    std::vector<TransitionFit> fits_;
    std::vector<RiskView> views_;
    std::vector<Pairs> pairs_;
    EstimatorKind kind_;
    int p_;
    int n_;
};

Vector score_m(const DurationDataset& data, const Vector& beta, const std::vector<TransitionFit>& fits);
Vector score_pl(const DurationDataset& data, const Vector& beta, const std::vector<TransitionFit>& fits);
Matrix info_m(const DurationDataset& data, const Vector& beta, const std::vector<TransitionFit>& fits);
Matrix info_pl(const DurationDataset& data, const Vector& beta, const std::vector<TransitionFit>& fits);

// Calendar-time Cox score with risk sets given by state occupancy, no
// kernel and no duration transform. Needs records with their full gaps.
class NaiveCoxScore {
public:
    NaiveCoxScore(const DurationDataset& data, std::vector<TransitionFit> fits, int p);
    ScoreEval evaluate(const Vector& beta, bool with_info = true) const;
    int dimension() const { return p_; }
    int n_subjects() const { return n_; }

private:
    struct Block {
        Matrix z;  // p x records at risk
        std::vector<double> entry;
        std::vector<double> exit;
        std::vector<int> by_exit;   // positions sorted by exit
        std::vector<int> by_entry;  // positions sorted by entry
        std::vector<int> events;    // positions of events, sorted by exit
    };
    std::vector<Block> blocks_;
    int p_;
    int n_;
};

Vector naive_cox_score(const DurationDataset& data, const Vector& beta, const std::vector<TransitionFit>& fits);

struct SolverOptions {
    double tol = 1e-8;
    int max_iter = 50;
    int max_halvings = 20;
};

struct TransitionDiagnostics {
    Transition transition;
    double bandwidth = 0;
    int events = 0;
    int skipped = 0;
};

struct FitResult {
    Vector beta_hat;
    Matrix covariance;
    Matrix information;  // at beta_hat
    EstimatorKind kind = EstimatorKind::PartialLikelihood;
    int iterations = 0;
    double final_score_norm = 0;  // sup norm
    bool converged = false;
    int n_subjects = 0;
    Matrix per_subject_scores;  // n x p influence contributions
    std::vector<Matrix> per_transition_scores;
    std::vector<TransitionDiagnostics> transitions;
    std::vector<double> trace;  // sup norm of the score per iteration
    std::vector<std::string> warnings;

    Vector standard_errors() const { return covariance.diagonal().cwiseMax(0.0).cwiseSqrt(); }
};

// Damped Newton on the chosen score: beta <- beta + step * info^-1 score,
// halving the step until the Euclidean score norm decreases.
FitResult solve(const DurationDataset& data, EstimatorKind kind, const std::vector<TransitionFit>& fits,
                const Vector& beta_init, const SolverOptions& options = {});

// n^-1 info^-1 Sigma2 info^-T with Sigma2 the empirical second moment of
// the centered influence contributions.
Matrix covariance_m(const Matrix& info, const Matrix& contributions, int n, std::vector<std::string>* warnings = nullptr);
// n^-1 info^-1.
Matrix covariance_pl(const Matrix& info, int n);

// a = c * sd(X) * n^(-1/3) (partial likelihood) or n^(-2/3) (M-estimator),
// with n and sd(X) taken over the subjects and records at risk for h.
double rule_bandwidth(const DurationDataset& data, Transition h, EstimatorKind kind, double tau, double scale = 1.0);

}  // namespace mrp::estimate
