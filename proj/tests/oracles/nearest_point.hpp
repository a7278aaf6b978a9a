#pragma once

// Brute-force distance from a point of R^{p+1} x R^{q+1} to the cone over
// S^p(a) x S^q(b), a^2 = p/(p+q), b^2 = q/(p+q).

namespace oracle {

/// The point is (u e_1, v e_1); cone points are s (a w_1, b w_2) with w_1, w_2
/// unit vectors at angles phi_1, phi_2 from e_1.  Grid search over
/// (phi_1, phi_2, s) with a few rounds of zooming.
double distance_to_cone(int p, int q, double u, double v);

}  // namespace oracle
