#include "cylcone/errors.hpp"
#include "cylcone/glue_solver.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

using namespace cylcone;
using testing::table;

namespace {

/// u_7 on (3,3) from the recurrence, written out independently.
double u7_direct(double r, double y) {
  const double g = 2.0;
  auto c = [](double a) { return a * a + 5 * a + 6; };
  double a = 1.0, s = 0.0;
  for (int k = 0; 2 * k <= 7; ++k) {
    s += a * std::pow(y, 7 - 2 * k) * std::pow(r, 2 * k - g);
    a = -(7.0 - 2 * k) * (6.0 - 2 * k) * a / c(2.0 * (k + 1) - g);
  }
  return s;
}

double kappa_of(const EquivariantSurface& X) {
  return X.a_exp * (X.weights.tau - 1.0) + X.weights.delta - X.weights.tau;
}

}  // namespace

TEST_SUITE("glue_solver") {

TEST_CASE("default weights and their validation") {
  const auto c = make_cone(3, 3);
  const auto w = default_weights(c, 7);
  CHECK(w.delta == doctest::Approx(5.05));
  CHECK(w.tau <= -2.0);
  CHECK(w.tau >= -2.05);
  CHECK((7.0 / 3.0) * (w.tau - 1.0) + w.delta - w.tau > 0);
  WeightedNormSpec bad = w;
  bad.delta = 4.9;
  CHECK_THROWS_AS(validate_weights(c, 7, bad), Error);
  bad = w;
  bad.delta = 6.0;  // degree of u_8
  CHECK_THROWS_AS(validate_weights(c, 7, bad), Error);
  bad = w;
  bad.tau = -1.9;
  CHECK_THROWS_AS(validate_weights(c, 7, bad), Error);
}

TEST_CASE("cutoff is 1 below 1, 0 above 2, smooth and monotone") {
  CHECK(cutoff(0.3)[0] == 1.0);
  CHECK(cutoff(1.0)[0] == 1.0);
  CHECK(cutoff(2.0)[0] == 0.0);
  CHECK(cutoff(5.0)[0] == 0.0);
  double prev = 1.0;
  for (int k = 1; k < 200; ++k) {
    const double z = 1.0 + k / 200.0;
    const auto c = cutoff(z);
    CHECK(c[0] <= prev);
    prev = c[0];
    const double h = 1e-4;
    const double d1 = (cutoff(z + h)[0] - cutoff(z - h)[0]) / (2 * h);
    const double d2 = (cutoff(z + h)[1] - cutoff(z - h)[1]) / (2 * h);
    CHECK(std::abs(c[1] - d1) < 1e-5 * (1 + std::abs(d1)));
    CHECK(std::abs(c[2] - d2) < 1e-4 * (1 + std::abs(d2)));
  }
}

TEST_CASE("build_X rejects bad beta and small A") {
  GlueParams gp;
  gp.beta = 1.0;
  CHECK_THROWS_AS(build_X(table(), gp), Error);
  gp.beta = 7.0 / 3.0;
  try {
    build_X(table(), gp);
    FAIL("expected BadBeta");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::BadBeta);
  }
  gp = GlueParams{};
  gp.A = 0.05;
  try {
    build_X(table(), gp);
    FAIL("expected RegionOverflow");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::RegionOverflow);
  }
}

TEST_CASE("outer region of X is the graph of u_7") {
  const auto& X = testing::glued_X();
  for (double y : {1e-3, 5e-3, 2e-2}) {
    for (double z : {2.0, 3.0, 10.0}) {
      const double x = z * std::pow(y, X.params.beta);
      const GraphJet g = glued_height(X, x, y);
      CHECK(g.chi == 0.0);
      CHECK(g.G == doctest::Approx(u7_direct(x, y)).epsilon(1e-12));
    }
  }
}

TEST_CASE("inner region of X lies on H(y^l)") {
  const auto& X = testing::glued_X();
  const auto& tab = *X.table;
  double worst = 0;
  int checked = 0;
  for (int j = 0; j < X.ny; j += 5) {
    const double y = X.ys[j];
    for (int i = 0; i < X.nx; ++i) {
      const double x = X.frame_point(i, j)[0];
      if (x > std::pow(std::abs(y), X.params.beta)) continue;
      const auto p = X.position(i, j);
      if (p[0] == 0.0 || p[1] == 0.0) continue;
      const double t = tab.leaf_parameter(p[0], p[1]);
      worst = std::max(worst, std::abs(t / (X.base_coef * std::pow(y, 7)) - 1));
      ++checked;
    }
  }
  CHECK(checked > 100);
  CHECK(worst < 1e-3);
}

TEST_CASE("glued height is continuous across the cutoff boundaries") {
  const auto& X = testing::glued_X();
  for (double y : {2e-3, 1e-2}) {
    const double yb = std::pow(y, X.params.beta);
    for (double z : {1.0, 2.0}) {
      const double a = glued_height(X, (z - 1e-9) * yb, y).G;
      const double b = glued_height(X, (z + 1e-9) * yb, y).G;
      CHECK(std::abs(a - b) <= 1e-6 * std::abs(a) + 1e-300);
    }
  }
}

TEST_CASE("y = 0 slices: odd l vanishes, even l is the single top term") {
  const auto& X = testing::glued_X();
  for (double x : {0.01, 0.05}) CHECK(glued_height(X, x, 0.0).G == 0.0);
  GlueParams gp;
  gp.l = 6;
  gp.beta = 1.5;
  const auto X6 = build_X(table(), gp);
  const auto u6 = ujacobi_coeffs(make_cone(3, 3), 6);
  double top = 0;
  for (const auto& t : u6.terms)
    if (t.l == 0) top = t.coef;
  for (double x : {0.01, 0.05}) {
    CHECK(glued_height(X6, x, 0.0).G == doctest::Approx(top * std::pow(x, 4.0)).epsilon(1e-12));
  }
}

TEST_CASE("mean curvature vanishes on the cone and on leaves") {
  const auto cone = build_cylinder(table(), 0.0, -1, 1, 10, 32, 16, 0.1);
  CHECK(mean_curvature(cone).sup_interior() < 1e-10);
  const auto leaf = build_cylinder(table(), 1.0, -1, 1, 50, 64, 16);
  CHECK(mean_curvature(leaf).sup_interior() < 1e-6);
  const auto leaf2 = build_cylinder(table(), -0.3, -1, 1, 20, 48, 9);
  CHECK(mean_curvature(leaf2).sup_interior() < 1e-6);
}

TEST_CASE("sphere oracle: mean curvature of a round sphere is n/R") {
  const auto c = make_cone(3, 3);
  const double R = 2.0;
  const int nx = 81, ny = 81;
  std::vector<std::array<double, 3>> pts;
  for (int j = 0; j < ny; ++j) {
    const double chi = 0.3 + 0.9 * j / (ny - 1);  // polar angle from the y axis
    for (int i = 0; i < nx; ++i) {
      const double phi = 0.2 + 1.1 * i / (nx - 1);  // angle in the (u, v) quadrant
      pts.push_back({R * std::sin(chi) * std::cos(phi), R * std::sin(chi) * std::sin(phi), R * std::cos(chi)});
    }
  }
  const auto f = mean_curvature_positions(c, pts, nx, ny);
  double worst = 0;
  for (std::size_t k = 0; k < f.values.size(); ++k) {
    if (!f.interior[k]) continue;
    worst = std::max(worst, std::abs(std::abs(f.values[k]) / (c.n / R) - 1));
  }
  CHECK(worst < 0.01);
}

TEST_CASE("discrete mean curvature: serial and parallel agree") {
  const auto& X = testing::glued_X();
  const auto a = discrete_mean_curvature(X, X.w);
  const auto b = discrete_mean_curvature_serial(X, X.w);
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == b[k]);
}

TEST_CASE("weighted certificate") {
  const auto& X = testing::glued_X();
  CurvatureField zero = mean_curvature(X);
  std::fill(zero.values.begin(), zero.values.end(), 0.0);
  std::fill(zero.gradient_proxy.begin(), zero.gradient_proxy.end(), 0.0);
  for (double kappa : {0.01, 1.0, 10.0}) {
    const auto rep = weighted_certificate(zero, X, X.weights, kappa, X.params.A);
    CHECK(rep.pass);
    CHECK(rep.sup == 0.0);
  }
  const auto leaf = build_cylinder(table(), 1.0, -0.5, 0.5, 1, 64, 16);
  const auto lrep = weighted_certificate(mean_curvature(leaf), leaf, X.weights, 0.1, 10.0);
  CHECK(lrep.sup < 1e-6);
}

TEST_CASE("certificate sup decreases over three doublings of A") {
  double prev = std::numeric_limits<double>::infinity();
  for (double A : {10.0, 20.0, 40.0, 80.0}) {
    const auto& X = testing::glued_X(A);
    const auto rep = weighted_certificate(mean_curvature(X), X, X.weights, kappa_of(X), A);
    CHECK(rep.sup < prev);
    CHECK(rep.bound == doctest::Approx(std::pow(A, -kappa_of(X))));
    prev = rep.sup;
  }
}

TEST_CASE("Newton from an exact leaf does nothing") {
  const auto leaf = build_cylinder(table(), 1.0, -1, 1, 50, 64, 16);
  NewtonReport rep;
  const auto T = newton_solve_T(leaf, default_weights(leaf.cone, 7), {}, &rep);
  CHECK(rep.iterations <= 1);
  CHECK(rep.max_change < 1e-10);
}

TEST_CASE("Newton solve of X: convergence, descent and quadratic tail") {
  const auto& rep = testing::solved_T_report();
  CHECK(rep.converged);
  CHECK(rep.iterations <= 12);
  CHECK(rep.residuals.front() / rep.residuals.back() >= 1e4);
  for (std::size_t k = 0; k < rep.accepted.size(); ++k) {
    if (rep.accepted[k]) CHECK(rep.residuals[k + 1] < rep.residuals[k]);
  }
  // the last accepted steps contract quadratically
  const auto& r = rep.residuals;
  REQUIRE(r.size() >= 3);
  const double ratio = r[r.size() - 1] / (r[r.size() - 2] * r[r.size() - 2]);
  CHECK(ratio < 1e2);
}

TEST_CASE("quadratic remainder of the discrete operator") {
  const auto q = quadratic_remainder_check(testing::glued_X(), 20, 5);
  CHECK(q.sizes.size() == 20);
  CHECK(q.exponent >= 1.9);
}

TEST_CASE("graph over the base leaf of the solved surface") {
  const auto& T = testing::solved_T();
  int kappa_pos = 0;
  for (int j = 1; j < T.ny - 1; j += 7) {
    const auto g = graph_over_leaf(T, T.ys[j]);
    CHECK(std::isfinite(g.C1));
    CHECK(g.kappa > 0);
    for (std::size_t i = 0; i < g.f.size(); ++i) {
      CHECK(std::abs(g.f[i]) <= g.C1 * std::pow(g.rho[i], 7 - g.kappa) * std::pow(g.r[i], g.kappa - 2) * (1 + 1e-12));
    }
    ++kappa_pos;
  }
  CHECK(kappa_pos > 5);
  const auto g = graph_over_leaf(T, T.ys[60]);
  CHECK(std::abs(g.far_exponent - g.bound_exponent) < 0.15 * g.bound_exponent);
  CHECK_THROWS_AS(graph_over_leaf(T, 0.0), Error);
  CHECK_THROWS_AS(graph_over_leaf(T, 10.0), Error);
}

TEST_CASE("graph over the cone reads the offsets directly") {
  auto s = build_cylinder(table(), 0.0, -1, 1, 10, 32, 9, 0.1);
  for (int j = 0; j < s.ny; ++j)
    for (int i = 0; i < s.nx; ++i) s.w[s.idx(i, j)] = 1e-4 * std::sin(0.1 * i + j);
  const auto g = graph_over_leaf(s, s.ys[3]);
  for (int i = 0; i < s.nx; ++i) CHECK(g.f[i] == s.w[s.idx(i, 3)]);
}

TEST_CASE("scale_T: identity, factor and group law") {
  const auto& X = testing::glued_X();
  const auto same = scale_T(X, 1.0);
  for (int j = 0; j < X.ny; j += 9)
    for (int i = 0; i < X.nx; i += 5) {
      const auto a = X.position(i, j), b = same.position(i, j);
      for (int d = 0; d < 3; ++d) CHECK(b[d] == doctest::Approx(a[d]).epsilon(1e-13));
    }
  const double lam = 3.0;
  const double mu = std::pow(lam, -0.25);
  const auto S = scale_T(X, lam);
  for (int j = 0; j < X.ny; j += 9)
    for (int i = 0; i < X.nx; i += 5) {
      const auto a = X.position(i, j), b = S.position(i, j);
      for (int d = 0; d < 3; ++d) CHECK(b[d] == doctest::Approx(mu * a[d]).epsilon(1e-10).scale(1e-300));
    }
  const auto ab = scale_T(scale_T(X, 2.0), 5.0);
  const auto direct = scale_T(X, 10.0);
  for (int j = 0; j < X.ny; j += 9)
    for (int i = 0; i < X.nx; i += 5) {
      const auto a = ab.position(i, j), b = direct.position(i, j);
      for (int d = 0; d < 3; ++d) CHECK(a[d] == doctest::Approx(b[d]).epsilon(1e-10).scale(1e-300));
    }
  CHECK_THROWS_AS(scale_T(X, 0.0), Error);
}

TEST_CASE("negative branch of scale_T is the reflection y -> -y") {
  const auto& X = testing::glued_X();
  const auto N = scale_T(X, -1.0);
  for (int j = 0; j < X.ny; j += 9)
    for (int i = 0; i < X.nx; i += 5) {
      const auto a = X.position(i, j), b = N.position(i, j);
      CHECK(b[2] == doctest::Approx(-a[2]).epsilon(1e-13));
      CHECK(b[0] == doctest::Approx(a[0]).epsilon(1e-10).scale(1e-300));
      CHECK(b[1] == doctest::Approx(a[1]).epsilon(1e-10).scale(1e-300));
    }
}

TEST_CASE("p = q symmetry of X and T under the mirror with y -> -y") {
  GlueParams gp;
  const auto& X = testing::glued_X();
  gp.negative_y = true;
  const auto Xn = build_X(table(), gp);
  auto compare = [](const EquivariantSurface& a, const EquivariantSurface& b) {
    double worst = 0;
    for (int j = 0; j < a.ny; ++j)
      for (int i = 0; i < a.nx; ++i) {
        const auto p = a.position(i, j), q = b.position(i, j);
        const double sc = std::hypot(p[0], p[1]);
        worst = std::max(worst, std::abs(q[0] - p[1]) / sc);
        worst = std::max(worst, std::abs(q[1] - p[0]) / sc);
        worst = std::max(worst, std::abs(q[2] + p[2]) / std::abs(p[2]));
      }
    return worst;
  };
  CHECK(compare(X, Xn) < 1e-10);
  const auto Tn = newton_solve_T(Xn, Xn.weights);
  CHECK(compare(testing::solved_T(), Tn) < 1e-10);
}

TEST_CASE("norm comparison") {
  const auto& X = testing::glued_X();
  WeightedNormSpec spec = X.weights;
  spec.order = 0;
  std::vector<double> zero(X.w.size(), 0.0);
  CHECK(norm_comparison_check(X, zero, spec, X.params.A).C == 0.0);

  std::vector<double> w(X.w.size());
  double n11 = 0, ndt = 0;
  for (int j = 0; j < X.ny; ++j)
    for (int i = 0; i < X.nx; ++i) {
      const double r = X.r_of(i, j), rho = X.rho_of(i, j);
      const double v = std::pow(rho, spec.delta - spec.tau) * std::pow(r, spec.tau);
      w[X.idx(i, j)] = v;
      const double R = std::exp2(std::floor(std::log2(r))), S = std::exp2(std::floor(std::log2(rho)));
      n11 = std::max(n11, v / R);
      ndt = std::max(ndt, v * std::pow(R, -spec.tau) * std::pow(S, spec.tau - spec.delta));
    }
  const auto rep = norm_comparison_check(X, w, spec, X.params.A);
  const double expected = n11 / ndt * std::pow(X.params.A, rep.kappa);
  CHECK(rep.C == doctest::Approx(expected).epsilon(0.01));
  CHECK(rep.kappa > 0);

  const auto& X2 = testing::glued_X(20.0);
  WeightedNormSpec s2 = X2.weights;
  const auto a = norm_comparison_check(X, X.w, s2, 10.0);
  const auto b = norm_comparison_check(X2, X2.w, s2, 20.0);
  const double kfit = -std::log2((b.norm_11 / b.norm_dt) / (a.norm_11 / a.norm_dt));
  CHECK(kfit > 0);
}

TEST_CASE("surface and certificate files") {
  const auto& X = testing::glued_X();
  std::ostringstream os;
  write_surface_csv(os, X);
  CHECK(os.str().rfind("i,j,u,v,y,w\n", 0) == 0);
  const auto j = surface_sidecar(X);
  for (const char* k : {"p", "q", "l", "beta", "A", "delta", "tau", "grid"}) CHECK(j.contains(k));
  std::ostringstream cs;
  write_certificate_csv(cs, weighted_certificate(mean_curvature(X), X, X.weights, kappa_of(X), 10.0));
  CHECK(cs.str().rfind("R,S,sup_term,bound,pass\n", 0) == 0);
}

}
