#pragma once

// Finite-difference eigenvalues of -Delta on the S^p factor of the link,
// restricted to functions of the polar angle (invariant in the S^q factor).

#include <vector>

namespace oracle {

/// Lowest `count` eigenvalues of -(1/a^2) sin^{1-p} (sin^{p-1} f')' on (0, pi),
/// cell-centred grid of `points` cells, no-flux ends.
std::vector<double> sphere_polar_eigenvalues(int p, double a, int points, int count);

/// Smallest few eigenvalues of -L on the link S^p(a) x S^q(b) in the sector
/// invariant under the second factor: -Delta - 2(n-2).
std::vector<double> link_jacobi_eigenvalues(int p, int q, int points, int count);

}  // namespace oracle
