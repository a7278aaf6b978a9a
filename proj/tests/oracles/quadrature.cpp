#include "quadrature.hpp"

#include <array>
#include <cmath>
#include <numbers>

namespace oracle {

namespace {

constexpr std::array<double, 5> kX = {0.1488743389816312, 0.4333953941292472, 0.6794095682990244,
                                      0.8650633666889845, 0.9739065285171717};
constexpr std::array<double, 5> kW = {0.2955242247147529, 0.2692667193099963, 0.2190863625159820,
                                      0.1494513491505806, 0.0666713443086881};

double gl10(const std::function<double(double)>& f, double a, double b) {
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  double s = 0;
  for (int i = 0; i < 5; ++i) s += kW[i] * (f(c - h * kX[i]) + f(c + h * kX[i]));
  return s * h;
}

double refine(const std::function<double(double)>& f, double a, double b, double whole,
              double abs_tol, int depth) {
  const double m = 0.5 * (a + b);
  const double left = gl10(f, a, m), right = gl10(f, m, b);
  if (depth <= 0 || std::abs(left + right - whole) <= abs_tol) return left + right;
  return refine(f, a, m, left, 0.5 * abs_tol, depth - 1) +
         refine(f, m, b, right, 0.5 * abs_tol, depth - 1);
}

double half_plane(int n, const std::function<double(double, double)>& u, double lo, double hi,
                  double rho_power) {
  auto radial = [&](double rho) {
    auto ang = [&](double th) {
      const double val = u(rho * std::cos(th), rho * std::sin(th));
      return val * val * std::pow(std::cos(th), n - 2);
    };
    return std::pow(rho, n - 1 + rho_power) * integrate(ang, -0.5 * std::numbers::pi, 0.5 * std::numbers::pi);
  };
  return integrate(radial, lo, hi);
}

double link_mass(int n) {
  return integrate([n](double th) { return std::pow(std::cos(th), n - 2); }, -0.5 * std::numbers::pi,
                   0.5 * std::numbers::pi);
}

}  // namespace

double integrate(const std::function<double(double)>& f, double a, double b, double rel_tol,
                 int max_depth) {
  const double whole = gl10(f, a, b);
  return refine(f, a, b, whole, rel_tol * std::max(std::abs(whole), 1e-300), max_depth);
}

double ball_norm_sq(int n, const std::function<double(double, double)>& u, double s) {
  return half_plane(n, u, 0.0, s, 0.0) / link_mass(n);
}

double annulus_norm_sq(int n, const std::function<double(double, double)>& u, double s_lo,
                       double s_hi) {
  return half_plane(n, u, s_lo, s_hi, -n) / link_mass(n);
}

}  // namespace oracle
