#include "mrp/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/special_functions/binomial.hpp>

#include "mrp/error.hpp"

namespace mrp::kernels {

namespace {

void check_mu(int mu) {
    if (mu < 1 || mu > 3) {
        throw DomainError("kernel order mu must be 1, 2 or 3 (got " + std::to_string(mu) + ")");
    }
}

void check_pq(double p, double q) {
    if (!(p > 0.0 && p <= 1.0 && q > 0.0 && q <= 1.0)) {
        std::ostringstream os;
        os << "kernel support parameters must lie in (0, 1]: p=" << p << " q=" << q;
        throw DomainError(os.str());
    }
}

// Integrands are polynomials of degree at most 4*mu + 2 <= 14; ten
// Gauss-Legendre nodes integrate degree 19 exactly.
template <class F>
double integrate(F&& f, double lo, double hi) {
    return boost::math::quadrature::gauss<double, 10>::integrate(f, lo, hi);
}

}  // namespace

void KernelSpec::validate() const {
    check_mu(mu);
    if (!(tau > 0.0) || !std::isfinite(tau)) {
        throw DomainError("mark domain endpoint tau must be positive and finite");
    }
    if (!(bandwidth > 0.0) || !(2.0 * bandwidth < tau)) {
        std::ostringstream os;
        os << "bandwidth must satisfy 0 < 2a < tau (a=" << bandwidth << ", tau=" << tau << ")";
        throw DomainError(os.str());
    }
}

double normalizing_constant(int mu) {
    check_mu(mu);
    static const double table[3] = {
        2.0 * 3 * boost::math::binomial_coefficient<double>(1, 1),
        2.0 * 5 * boost::math::binomial_coefficient<double>(3, 2),
        2.0 * 7 * boost::math::binomial_coefficient<double>(5, 3),
    };
    return table[mu - 1];
}

BoundaryRegion classify_region(double x, const KernelSpec& spec) {
    const double a = spec.bandwidth;
    const double tau = spec.tau;
    if (!(x >= 0.0 && x <= tau)) {
        std::ostringstream os;
        os << "mark " << x << " outside [0, " << tau << "]";
        throw DomainError(os.str());
    }
    if (x > a && x < tau - a) return {Region::Interior, 1.0, 1.0};
    if (x <= a) {
        if (x <= 0.0) throw DomainError("mark at the left endpoint gives a degenerate boundary kernel (q = 0)");
        return {Region::Left, 1.0, std::min(1.0, x / a)};
    }
    if (x >= tau) throw DomainError("mark at the right endpoint gives a degenerate boundary kernel (p = 0)");
    // tau - a may round below x at the tie point.
    return {Region::Right, std::min(1.0, (tau - x) / a), 1.0};
}

double kernel_central(double r, int mu) {
    if (r < -1.0 || r > 1.0) return 0.0;
    const double c = normalizing_constant(mu);
    return 2.0 * c * std::pow(0.5, 2 * mu + 2) * std::pow((1.0 + r) * (1.0 - r), mu);
}

double kernel_left(double r, double p, double q, int mu) {
    check_pq(p, q);
    if (r < -p || r > q) return 0.0;
    const double c = normalizing_constant(mu);
    const double bracket = 2.0 * r * ((p - q) * mu - q) + mu * (p - q) * (p - q) + 2.0 * q * q;
    return c * std::pow(p + q, -2 * mu - 2) * std::pow(p + r, mu) * std::pow(q - r, mu - 1) * bracket;
}

double kernel_right(double r, double p, double q, int mu) {
    check_pq(p, q);
    if (r < -p || r > q) return 0.0;
    const double c = normalizing_constant(mu);
    const double bracket = 2.0 * r * ((p - q) * mu + p) + mu * (p - q) * (p - q) + 2.0 * p * p;
    return c * std::pow(p + q, -2 * mu - 2) * std::pow(p + r, mu - 1) * std::pow(q - r, mu) * bracket;
}

double kernel_pq(double r, double p, double q, int mu) {
    check_pq(p, q);
    if (p == 1.0 && q == 1.0) return kernel_central(r, mu);
    if (p >= q) return kernel_left(r, p, q, mu);
    return kernel_right(r, p, q, mu);
}

Support kernel_support(double x, const KernelSpec& spec) {
    const auto region = classify_region(x, spec);
    const double a = spec.bandwidth;
    switch (region.tag) {
        case Region::Interior: return {x - a, x + a};
        case Region::Left: return {0.0, x + a};
        case Region::Right: return {x - a, spec.tau};
    }
    return {x - a, x + a};
}

double kernel_weight(double x, double w, const KernelSpec& spec) {
    if (!(w >= 0.0 && w <= spec.tau)) {
        std::ostringstream os;
        os << "mark " << w << " outside [0, " << spec.tau << "]";
        throw DomainError(os.str());
    }
    const auto region = classify_region(x, spec);
    const double a = spec.bandwidth;
    switch (region.tag) {
        case Region::Interior:
            if (w < x - a || w > x + a) return 0.0;
            return kernel_central((x - w) / a, spec.mu);
        case Region::Left:
            if (w > x + a) return 0.0;
            return kernel_left(region.q - w / a, 1.0, region.q, spec.mu);
        case Region::Right:
            if (w < x - a) return 0.0;
            return kernel_right((spec.tau - w) / a - region.p, region.p, 1.0, spec.mu);
    }
    return 0.0;
}

double kernel_moment(double p, double q, int mu, int k) {
    check_pq(p, q);
    check_mu(mu);
    if (k < 0 || k > 2) throw DomainError("kernel_moment supports k = 0, 1, 2");
    return integrate([&](double u) { return std::pow(u, k) * kernel_pq(u, p, q, mu); }, -p, q);
}

double kernel_l2(double p, double q, int mu) {
    check_pq(p, q);
    check_mu(mu);
    return integrate(
        [&](double u) {
            const double k = kernel_pq(u, p, q, mu);
            return k * k;
        },
        -p, q);
}

}  // namespace mrp::kernels
