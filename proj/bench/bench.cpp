// Serial reference against OpenMP kernel for the three parallel hot spots.
#include "cylcone/continuation_lab.hpp"
#include "cylcone/glue_solver.hpp"
#include "cylcone/jacobi_fields.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>

using namespace cylcone;
using clk = std::chrono::steady_clock;

namespace {

double best_ms(int reps, const std::function<void()>& f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = clk::now();
    f();
    best = std::min(best, std::chrono::duration<double, std::milli>(clk::now() - t0).count());
  }
  return best;
}

void row(const char* name, double serial, double parallel, double diff) {
  std::printf("%-28s serial %9.2f ms  openmp %9.2f ms  speedup %5.2f  max diff %.3g\n", name, serial,
              parallel, serial / parallel, diff);
}

}  // namespace

int main() {
  std::printf("threads: %d\n", kernel_threads());
  const QuadraticCone c = make_cone(3, 3);
  LeafOptions o;
  o.s_max = 1e12;
  const auto table = std::make_shared<const FoliationTable>(build_foliation(c, o));

  const EquivariantSurface X = build_X(table, GlueParams{});
  std::vector<double> ms, mp;
  const double ts = best_ms(5, [&] { ms = discrete_mean_curvature_serial(X, X.w); });
  const double tp = best_ms(5, [&] { mp = discrete_mean_curvature(X, X.w); });
  double d = 0;
  for (std::size_t k = 0; k < ms.size(); ++k) d = std::max(d, std::abs(ms[k] - mp[k]));
  row("mean-curvature rows", ts, tp, d);

  QuantitativeSuite ss, sp;
  const double us = best_ms(3, [&] { ss = quantitative_suite_serial(c, 0.3, 1.0, 1000, 1); });
  const double up = best_ms(3, [&] { sp = quantitative_suite(c, 0.3, 1.0, 1000, 1); });
  d = 0;
  for (std::size_t k = 0; k < ss.cases.size(); ++k) d = std::max(d, std::abs(ss.cases[k].margin - sp.cases[k].margin));
  row("random-field suite (1000)", us, up, d);

  const auto P = jacobi_leaf_polynomial(ujacobi_coeffs(c, 5));
  GraphSampling g;
  g.n_rho = 320;
  g.n_angle = 128;
  const SampledVarifold M = leaf_graph_varifold(*table, [&](double r, double y) { return 1e-6 * P(r, y); }, g);
  double a = 0, b = 0;
  const double vs = best_ms(5, [&] { a = dist_to_cone_serial(M, *table, Region::ball(1.0)) + l2_distance_serial(M, 1.0); });
  const double vp = best_ms(5, [&] { b = dist_to_cone(M, *table, Region::ball(1.0)) + l2_distance(M, 1.0); });
  row("point distances", vs, vp, std::abs(a - b));
  return 0;
}
