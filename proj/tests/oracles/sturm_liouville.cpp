#include "sturm_liouville.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>

namespace oracle {

std::vector<double> sphere_polar_eigenvalues(int p, double a, int points, int count) {
  const double h = std::numbers::pi / points;
  auto wt = [p](double th) { return std::pow(std::sin(th), p - 1); };
  Eigen::VectorXd diag(points), off(points - 1), m(points);
  for (int i = 0; i < points; ++i) m(i) = wt((i + 0.5) * h) * h;
  for (int i = 0; i < points; ++i) {
    const double fl = i == 0 ? 0.0 : wt(i * h) / h;
    const double fr = i == points - 1 ? 0.0 : wt((i + 1) * h) / h;
    diag(i) = (fl + fr) / m(i);
    if (i + 1 < points) off(i) = -fr / std::sqrt(m(i) * m(i + 1));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(diag, off, Eigen::EigenvaluesOnly);
  std::vector<double> out;
  for (int k = 0; k < count && k < points; ++k) out.push_back(es.eigenvalues()(k) / (a * a));
  return out;
}

std::vector<double> link_jacobi_eigenvalues(int p, int q, int points, int count) {
  const int n = p + q + 2;
  const double a = std::sqrt(static_cast<double>(p) / (p + q));
  auto ev = sphere_polar_eigenvalues(p, a, points, count);
  for (double& e : ev) e -= 2.0 * (n - 2);
  return ev;
}

}  // namespace oracle
