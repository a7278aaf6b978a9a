#include "nearest_point.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace oracle {

double distance_to_cone(int p, int q, double u, double v) {
  const double a = std::sqrt(double(p) / (p + q)), b = std::sqrt(double(q) / (p + q));
  const double R = 2.0 * std::hypot(u, v) + 1.0;
  auto dist2 = [&](double f1, double f2, double s) {
    // |x - z|^2 with x = (u e1, v e1), z = s (a(cos f1, sin f1), b(cos f2, sin f2))
    const double dx1 = u - s * a * std::cos(f1), dy1 = -s * a * std::sin(f1);
    const double dx2 = v - s * b * std::cos(f2), dy2 = -s * b * std::sin(f2);
    return dx1 * dx1 + dy1 * dy1 + dx2 * dx2 + dy2 * dy2;
  };
  double c1 = 0.5 * std::numbers::pi, c2 = 0.5 * std::numbers::pi, cs = 0.5 * R;
  double h1 = 0.5 * std::numbers::pi, h2 = 0.5 * std::numbers::pi, hs = 0.5 * R;
  const int N = 40;
  double best = std::numeric_limits<double>::infinity();
  for (int round = 0; round < 40; ++round) {
    double b1 = c1, b2 = c2, bs = cs;
    for (int i = 0; i <= N; ++i) {
      const double f1 = std::clamp(c1 - h1 + 2 * h1 * i / N, 0.0, std::numbers::pi);
      for (int j = 0; j <= N; ++j) {
        const double f2 = std::clamp(c2 - h2 + 2 * h2 * j / N, 0.0, std::numbers::pi);
        for (int k = 0; k <= N; ++k) {
          const double s = std::max(0.0, cs - hs + 2 * hs * k / N);
          const double d = dist2(f1, f2, s);
          if (d < best) {
            best = d;
            b1 = f1;
            b2 = f2;
            bs = s;
          }
        }
      }
    }
    c1 = b1;
    c2 = b2;
    cs = bs;
    h1 *= 0.5;
    h2 *= 0.5;
    hs *= 0.5;
  }
  return std::sqrt(best);
}

}  // namespace oracle
