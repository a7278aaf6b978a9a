#pragma once

// Small numerical building blocks shared by the modules.

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace cylcone::num {

struct Tolerances {
  double rtol = 1e-10;
  double atol = 1e-12;
  double h_init = 1e-4;
  double h_max = 1e300;
  long max_steps = 2'000'000;
};

/// Dormand-Prince 5(4) with standard PI-free step control.  `rhs(t, y)`
/// returns dy/dt; `on_step(t, y, dydt)` is called after every accepted step
/// and returns false to stop.  Returns the number of accepted steps, or -1 if
/// the step budget was exhausted.
template <std::size_t N, class Rhs, class OnStep>
long dopri5(Rhs&& rhs, double t, std::array<double, N> y, const Tolerances& tol,
            OnStep&& on_step) {
  using State = std::array<double, N>;
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                          b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                          e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

  auto axpy = [](const State& base, std::initializer_list<std::pair<double, const State*>> terms,
                 double h) {
    State out = base;
    for (auto& [c, k] : terms)
      for (std::size_t i = 0; i < N; ++i) out[i] += h * c * (*k)[i];
    return out;
  };

  double h = tol.h_init;
  State k1 = rhs(t, y);
  long steps = 0;
  for (long iter = 0; iter < tol.max_steps; ++iter) {
    h = std::min(h, tol.h_max);
    const State k2 = rhs(t + c2 * h, axpy(y, {{a21, &k1}}, h));
    const State k3 = rhs(t + c3 * h, axpy(y, {{a31, &k1}, {a32, &k2}}, h));
    const State k4 = rhs(t + c4 * h, axpy(y, {{a41, &k1}, {a42, &k2}, {a43, &k3}}, h));
    const State k5 =
        rhs(t + c5 * h, axpy(y, {{a51, &k1}, {a52, &k2}, {a53, &k3}, {a54, &k4}}, h));
    const State k6 = rhs(
        t + h, axpy(y, {{a61, &k1}, {a62, &k2}, {a63, &k3}, {a64, &k4}, {a65, &k5}}, h));
    const State y5 = axpy(y, {{b1, &k1}, {b3, &k3}, {b4, &k4}, {b5, &k5}, {b6, &k6}}, h);
    const State k7 = rhs(t + h, y5);
    double err = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const double e =
          h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
      const double sc = tol.atol + tol.rtol * std::max(std::abs(y[i]), std::abs(y5[i]));
      err = std::max(err, std::abs(e) / sc);
    }
    if (!std::isfinite(err)) {
      h *= 0.25;
      continue;
    }
    if (err <= 1.0) {
      t += h;
      y = y5;
      k1 = k7;
      ++steps;
      if (!on_step(t, y, k1)) return steps;
    }
    const double fac = err == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
    h *= fac;
  }
  return -1;
}

/// Fritsch-Carlson monotone piecewise cubic Hermite interpolant.
class MonotoneCubic {
 public:
  MonotoneCubic() = default;
  MonotoneCubic(std::vector<double> x, std::vector<double> y);

  double operator()(double x) const;
  double derivative(double x) const;
  double x_min() const { return x_.front(); }
  double x_max() const { return x_.back(); }
  bool empty() const { return x_.empty(); }
  const std::vector<double>& xs() const { return x_; }
  const std::vector<double>& ys() const { return y_; }

 private:
  std::size_t segment(double x) const;
  std::vector<double> x_, y_, d_;
};

/// Gauss-Legendre nodes and weights on [-1, 1].
struct GaussRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};
GaussRule gauss_legendre(int n);

/// Cubic Hermite value on [x0, x1] given values and slopes at the ends.
inline double hermite(double x0, double x1, double y0, double y1, double d0, double d1, double x) {
  const double h = x1 - x0;
  const double t = (x - x0) / h;
  const double t2 = t * t, t3 = t2 * t;
  return (2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + t) * h * d0 + (-2 * t3 + 3 * t2) * y1 +
         (t3 - t2) * h * d1;
}

/// Least-squares slope of y against x.
double fit_slope(std::span<const double> x, std::span<const double> y);

}  // namespace cylcone::num

namespace cylcone {

/// Threads used by parallel kernels (CYLCONE_THREADS caps it).
int kernel_threads();

}  // namespace cylcone
