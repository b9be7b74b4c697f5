#pragma once

// Boundary-corrected polynomial kernels on a compact mark domain [0, tau].
//
// The family K_{pq} is supported on [-p, q] with unit mass and vanishing
// first moment. Interior points use the symmetric kernel K_{11}; points
// within one bandwidth of either endpoint use an asymmetric kernel whose
// support is cut at the endpoint. All functions are pure.

namespace mrp::kernels {

struct KernelSpec {
    int mu = 2;             // smoothness order, 1..3 (kernel degree 2*mu)
    double bandwidth = 0;   // a, in mark units
    double tau = 1;         // right endpoint of the mark domain

    // Throws DomainError unless mu in {1,2,3} and 0 < 2a < tau.
    void validate() const;
};

enum class Region { Interior, Left, Right };

struct BoundaryRegion {
    Region tag = Region::Interior;
    double p = 1;
    double q = 1;
};

// Normalizing constant C(mu) = 2(2mu+1) binom(2mu-1, mu).
double normalizing_constant(int mu);

BoundaryRegion classify_region(double x, const KernelSpec& spec);

// Symmetric interior kernel K_11 on [-1, 1].
double kernel_central(double r, int mu);
// Left-boundary kernel (support cut at the right end of [-p, q]).
double kernel_left(double r, double p, double q, int mu);
// Right-boundary kernel (support cut at the left end of [-p, q]).
double kernel_right(double r, double p, double q, int mu);

// Dispatches on (p, q): central when p = q = 1, the left formula when
// p >= q, the right formula otherwise. Zero outside [-p, q].
double kernel_pq(double r, double p, double q, int mu);

// K_n(x, w): the weight an observation with mark w receives when
// smoothing at x. Note the result is not divided by the bandwidth.
double kernel_weight(double x, double w, const KernelSpec& spec);

// Support of K_n(x, .) as a closed interval [lo, hi] within [0, tau].
struct Support {
    double lo;
    double hi;
};
Support kernel_support(double x, const KernelSpec& spec);

// Integral of u^k K_pq(u) over [-p, q], k in {0, 1, 2}.
double kernel_moment(double p, double q, int mu, int k);

// d_pq(K): integral of K_pq^2 over [-p, q].
double kernel_l2(double p, double q, int mu);

}  // namespace mrp::kernels
