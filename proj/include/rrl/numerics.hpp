#pragma once

#include <functional>
#include <stdexcept>

namespace rrl {

// Probability values live in [0,1]; functions taking one state their own
// open/closed domain requirements.
using Probability = double;

// Clamping rule applied before inverse-CDF calls on data that may contain
// exact zero or one cells (empirical transition rates routinely do).
// Clipping is always the caller's move; the normal kernel itself is total
// on its stated domain and never clips silently.
struct ClipPolicy {
    double epsilon = 1e-6;

    ClipPolicy() = default;
    explicit ClipPolicy(double eps) : epsilon(eps) {
        if (!(eps > 0.0 && eps < 0.5))
            throw std::invalid_argument("ClipPolicy: epsilon must be in (0, 0.5)");
    }

    double clip(Probability p) const {
        if (p < epsilon) return epsilon;
        if (p > 1.0 - epsilon) return 1.0 - epsilon;
        return p;
    }
    bool would_clip(Probability p) const {
        return p < epsilon || p > 1.0 - epsilon;
    }
};

// Standard normal density.
double norm_pdf(double x);

// Standard normal CDF. Absolute error below 1e-14 over the whole axis;
// saturates to 0/1 in the extreme tails instead of erroring.
Probability norm_cdf(double x);

// Right-tail (survival) function. Equals 1 - norm_cdf(x) for moderate x and
// switches to a cancellation-free complementary-error-function path in the
// right tail, where the naive subtraction would lose all digits.
Probability norm_sf(double x);

// Inverse CDF on the open interval (0,1). Rational approximation refined by
// one Newton step against norm_cdf; |norm_cdf(norm_inv_cdf(p)) - p| < 1e-12
// on [1e-10, 1-1e-10]. Throws std::domain_error at 0 and 1.
double norm_inv_cdf(Probability p);

// Inverse of norm_sf: strictly decreasing, norm_inv_sf(p) == -norm_inv_cdf(p).
double norm_inv_sf(Probability p);

struct ScalarMinResult {
    double x = 0.0;         // minimizer found
    double fx = 0.0;        // objective value there
    int evaluations = 0;    // objective calls spent
    bool converged = true;  // false when the iteration cap was hit
};

// One-dimensional minimization over a finite bracket: a coarse grid seed
// locates the best cell, then Brent (golden section with parabolic steps)
// refines inside it. For unimodal f the result is within tol of the true
// minimizer; for general f it is the best point found from the grid seed.
ScalarMinResult minimize_scalar(const std::function<double(double)>& f,
                                double lo, double hi, double tol = 1e-8,
                                int max_iter = 200, int grid_points = 33);

}  // namespace rrl
