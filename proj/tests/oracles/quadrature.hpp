#pragma once

// Adaptive Gauss-Legendre integration and weighted L^2 norms over balls in
// the (r, y) half plane of C x R.

#include <functional>

namespace oracle {

/// Adaptive 10-point Gauss-Legendre with panel bisection until two levels
/// agree to rel_tol (relative to the running total) or depth runs out.
double integrate(const std::function<double(double)>& f, double a, double b,
                 double rel_tol = 1e-13, int max_depth = 30);

/// int_{B_s} u^2 r^{n-2} dr dy over r > 0, divided by the mass
/// int cos^{n-2} of the half circle (the link measure of C x R).
double ball_norm_sq(int n, const std::function<double(double r, double y)>& u, double s);

/// Same weighted integral over the annulus s_lo < rho < s_hi with the extra
/// weight rho^{-n}, same normalization.
double annulus_norm_sq(int n, const std::function<double(double r, double y)>& u, double s_lo,
                       double s_hi);

}  // namespace oracle
