#include "rrl/numerics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace rrl {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Peter J. Acklam's rational approximation to the normal quantile,
// relative error below 1.15e-9 everywhere; a Newton step pushes that to
// machine precision.
constexpr std::array<double, 6> kA = {-3.969683028665376e+01, 2.209460984245205e+02,
                                      -2.759285104469687e+02, 1.383577518672690e+02,
                                      -3.066479806614716e+01, 2.506628277459239e+00};
constexpr std::array<double, 6> kB = {-5.447609879822406e+01, 1.615858368580409e+02,
                                      -1.556989798598866e+02, 6.680131188771972e+01,
                                      -1.328068155288572e+01, 1.0};
constexpr std::array<double, 6> kC = {-7.784894002430293e-03, -3.223964580411365e-01,
                                      -2.400758277161838e+00, -2.549732539343734e+00,
                                      4.374664141464968e+00,  2.938163982698783e+00};
constexpr std::array<double, 5> kD = {7.784695709041462e-03, 3.224671290700398e-01,
                                      2.445134137142996e+00, 3.754408661907416e+00, 1.0};

template <std::size_t N>
double horner(double x, const std::array<double, N>& c) {
    double r = 0.0;
    for (double v : c) r = r * x + v;
    return r;
}

double acklam(double p) {
    constexpr double p_low = 0.02425;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        return horner(q, kC) / horner(q, kD);
    }
    if (p > 1.0 - p_low) {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        return -horner(q, kC) / horner(q, kD);
    }
    const double q = p - 0.5;
    const double r = q * q;
    return q * horner(r, kA) / horner(r, kB);
}

}  // namespace

double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

Probability norm_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

Probability norm_sf(double x) {
    // Below the switch point the subtraction is benign and keeps
    // norm_sf(x) == 1 - norm_cdf(x) bit-for-bit; past it erfc avoids the
    // catastrophic cancellation of 1 - (1 - tiny).
    if (x < 3.0) return 1.0 - norm_cdf(x);
    return 0.5 * std::erfc(x * kInvSqrt2);
}

double norm_inv_cdf(Probability p) {
    if (!(p > 0.0 && p < 1.0))
        throw std::domain_error("norm_inv_cdf: p must lie strictly inside (0,1)");
    double x = acklam(p);
    const double d = norm_pdf(x);
    if (d > 0.0) {
        // Newton step on norm_cdf(x) - p. In the left tail erfc keeps the
        // residual accurate in relative terms; in the right tail work on the
        // survival side for the same reason.
        const double r = (p < 0.5) ? (norm_cdf(x) - p) : ((1.0 - p) - norm_sf(x));
        x -= r / d;
    }
    return x;
}

double norm_inv_sf(Probability p) { return -norm_inv_cdf(p); }

namespace {

// Brent's minimization on a closed interval, Numerical Recipes shape.
// Returns through the result struct; `evals` accumulates across calls so the
// grid-seed phase counts against the same budget.
ScalarMinResult brent(const std::function<double(double)>& f, double a, double b,
                      double tol, int max_iter, int& evals) {
    constexpr double golden = 0.3819660112501051;
    const double eps = std::sqrt(std::numeric_limits<double>::epsilon());

    double x = a + golden * (b - a);
    double w = x, v = x;
    double fx = f(x);
    ++evals;
    double fw = fx, fv = fx;
    double delta = 0.0, delta_prev = 0.0;

    ScalarMinResult res;
    for (int iter = 0; iter < max_iter; ++iter) {
        const double mid = 0.5 * (a + b);
        // Absolute target accuracy: keep the location error under tol.
        const double tol1 = eps * std::abs(x) + 0.25 * tol;
        const double tol2 = 2.0 * tol1;
        if (std::abs(x - mid) <= tol2 - 0.5 * (b - a)) {
            res.x = x;
            res.fx = fx;
            res.evaluations = evals;
            res.converged = true;
            return res;
        }
        double d = 0.0;
        bool parabolic_ok = false;
        if (std::abs(delta_prev) > tol1) {
            // Trial parabola through (x,fx), (w,fw), (v,fv).
            const double r = (x - w) * (fx - fv);
            double q = (x - v) * (fx - fw);
            double pnum = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if (q > 0.0) pnum = -pnum;
            q = std::abs(q);
            const double delta_old = delta_prev;
            delta_prev = delta;
            if (std::abs(pnum) < std::abs(0.5 * q * delta_old) && pnum > q * (a - x) &&
                pnum < q * (b - x)) {
                d = pnum / q;
                const double u = x + d;
                if (u - a < tol2 || b - u < tol2) d = (mid > x) ? tol1 : -tol1;
                parabolic_ok = true;
            }
        }
        if (!parabolic_ok) {
            delta_prev = (x >= mid) ? a - x : b - x;
            d = golden * delta_prev;
        }
        delta = d;
        const double u = (std::abs(d) >= tol1) ? x + d : x + (d > 0 ? tol1 : -tol1);
        const double fu = f(u);
        ++evals;
        if (fu <= fx) {
            if (u >= x) a = x; else b = x;
            v = w; fv = fw;
            w = x; fw = fx;
            x = u; fx = fu;
        } else {
            if (u < x) a = u; else b = u;
            if (fu <= fw || w == x) {
                v = w; fv = fw;
                w = u; fw = fu;
            } else if (fu <= fv || v == x || v == w) {
                v = u; fv = fu;
            }
        }
    }
    res.x = x;
    res.fx = fx;
    res.evaluations = evals;
    res.converged = false;
    return res;
}

}  // namespace

ScalarMinResult minimize_scalar(const std::function<double(double)>& f, double lo,
                                double hi, double tol, int max_iter, int grid_points) {
    if (!(lo < hi)) throw std::invalid_argument("minimize_scalar: empty bracket");
    if (!(tol > 0.0)) throw std::invalid_argument("minimize_scalar: tol must be positive");
    if (grid_points < 3) grid_points = 3;

    int evals = 0;
    // Coarse scan picks the cell holding the best sample; Brent then works
    // inside the two neighbouring cells so a bracketing triple is preserved.
    int best = 0;
    double fbest = std::numeric_limits<double>::infinity();
    const double step = (hi - lo) / (grid_points - 1);
    for (int i = 0; i < grid_points; ++i) {
        const double xi = lo + step * i;
        const double fi = f(xi);
        ++evals;
        if (fi < fbest) {
            fbest = fi;
            best = i;
        }
    }
    const double a = (best == 0) ? lo : lo + step * (best - 1);
    const double b = (best == grid_points - 1) ? hi : lo + step * (best + 1);
    return brent(f, a, b, tol, max_iter, evals);
}

}  // namespace rrl
