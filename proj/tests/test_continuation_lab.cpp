#include "cylcone/continuation_lab.hpp"
#include "cylcone/errors.hpp"
#include "oracles/nearest_point.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

using namespace cylcone;
using testing::table;

namespace {

SampledVarifold cone_samples(const QuadraticCone& c, double y_abs_max = 1.0) {
  GraphSampling gs;
  gs.box = true;
  gs.y_abs_max = y_abs_max;
  gs.n_rho = 60;
  gs.n_angle = 33;
  return graph_varifold(c, [](double, double) { return 0.0; }, gs);
}

/// Graph over the cone of sum_l c_l u_l with random coefficients.
SampledVarifold random_graph(const QuadraticCone& c, SeededStream& rng, double amp = 1e-6) {
  std::vector<double> coef(6);
  for (double& x : coef) x = rng.uniform(-1.0, 1.0);
  std::vector<JacobiFieldExpansion> fields;
  for (int l = 1; l <= 6; ++l) fields.push_back(ujacobi_coeffs(c, l));
  GraphSampling gs;
  gs.n_rho = 40;
  gs.n_angle = 24;
  gs.r_min = 0.1;
  return graph_varifold(c, [=](double r, double y) {
    double s = 0.0;
    for (std::size_t k = 0; k < fields.size(); ++k) s += coef[k] * fields[k](r, y);
    return amp * s;
  }, gs);
}

/// Leaf-parameter graph of lam u_l r^gamma on the default sampling.
SampledVarifold mode_leaf_graph(int l, double lam = 1e-6) {
  const auto tab = table();
  const auto P = jacobi_leaf_polynomial(ujacobi_coeffs(tab->cone(), l));
  return leaf_graph_varifold(*tab, [=](double r, double y) { return lam * P(r, y); }, GraphSampling{});
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

}  // namespace

TEST_SUITE("continuation_lab") {

TEST_CASE("dist_to_cone: cone, leaf cylinders and growing regions") {
  const auto tab = table();
  const auto& c = tab->cone();
  CHECK(dist_to_cone(cone_samples(c), *tab, Region::ball(1.0)) <= 1e-14);

  for (double t : {1e-3, -1e-3, 0.2, -0.05}) {
    const auto M = leaf_cylinder_varifold(*tab, t, 1.0, 1.0);
    CHECK(dist_to_cone(M, *tab, Region::ball(10.0)) == doctest::Approx(std::abs(t)).epsilon(1e-3));
  }

  SeededStream rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const auto M = random_graph(c, rng);
    double prev = 0.0;
    for (double rho = 0.05; rho <= 1.0; rho += 0.05) {
      const double d = dist_to_cone(M, *tab, Region::ball(rho));
      CHECK(d >= prev);
      prev = d;
    }
    CHECK(dist_to_cone(M, *tab, Region::annulus(0.3, 0.6)) <= dist_to_cone(M, *tab, Region::annulus(0.2, 0.8)));
  }
}

TEST_CASE("l2_distance of a single point against brute-force nearest points") {
  for (int p : {3, 4, 5}) {
    SampledVarifold M;
    M.cone = make_cone(p, p);
    M.points = {{1.0, 0.0, 0.0}};
    M.weights = {1.0};
    M.rho_max = 2.0;
    const double d = l2_distance(M, 1.5);
    CHECK(d == doctest::Approx(std::sqrt(2.0) / 2).epsilon(1e-14));
    CHECK(std::abs(d - oracle::distance_to_cone(p, p, 1.0, 0.0)) < 1e-6);
  }
  SeededStream rng(5);
  for (auto pq : {std::pair{3, 3}, std::pair{2, 4}, std::pair{2, 5}}) {
    const auto c = make_cone(pq.first, pq.second);
    for (int k = 0; k < 12; ++k) {
      const double th = rng.uniform(0.0, 0.5 * std::numbers::pi), R = rng.uniform(0.1, 1.0);
      const double u = R * std::cos(th), v = R * std::sin(th);
      CHECK(std::abs(cone_distance(c, u, v) - oracle::distance_to_cone(c.p, c.q, u, v)) < 1e-6);
    }
  }
}

TEST_CASE("l2_distance scaling and cone samples") {
  const auto c = make_cone(3, 3);
  CHECK(l2_distance(cone_samples(c), 1.0) <= 1e-14);
  SeededStream rng(8);
  const auto M = random_graph(c, rng);
  for (double lam : {0.5, 2.0, 7.0}) {
    const auto LM = scale_varifold(M, lam);
    for (double rho : {0.3, 0.8}) {
      CHECK(l2_distance(LM, lam * rho) ==
            doctest::Approx(std::pow(lam, 1.0 + 0.5 * c.n) * l2_distance(M, rho)).epsilon(1e-10));
    }
  }
}

TEST_CASE("the two distances vanish together") {
  const auto tab = table();
  const auto& c = tab->cone();
  SampledVarifold M;
  M.cone = c;
  M.rho_max = 2.0;
  for (int k = 1; k <= 20; ++k) {
    const double s = 0.05 * k;
    M.points.push_back({s, s, 0.3 - 0.03 * k});
    M.weights.push_back(1.0);
  }
  CHECK(dist_to_cone(M, *tab, Region::ball(2.0)) == 0.0);
  CHECK(l2_distance(M, 2.0) == 0.0);
  for (int k : {0, 7, 19}) {
    auto N = M;
    N.points[k][1] *= 1.0 + 1e-12;
    CHECK(dist_to_cone(N, *tab, Region::ball(2.0)) > 0.0);
    CHECK(l2_distance(N, 2.0) > 0.0);
  }
}

TEST_CASE("dist_to_cone scale equivariance") {
  const auto tab = table();
  const auto& c = tab->cone();
  SeededStream rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    const auto M = random_graph(c, rng);
    for (double lam : {0.25, 3.0}) {
      const auto LM = scale_varifold(M, lam);
      const double a = dist_to_cone(LM, *tab, Region::annulus(0.2 * lam, 0.9 * lam));
      const double b = dist_to_cone(M, *tab, Region::annulus(0.2, 0.9));
      CHECK(a == doctest::Approx(std::pow(lam, c.gamma + 1.0) * b).epsilon(1e-3));
    }
  }
}

TEST_CASE("serial and parallel distance kernels agree") {
  const auto tab = table();
  SeededStream rng(2);
  const auto M = random_graph(tab->cone(), rng);
  for (double rho : {0.1, 0.5, 1.0}) {
    CHECK(dist_to_cone(M, *tab, Region::ball(rho)) == dist_to_cone_serial(M, *tab, Region::ball(rho)));
    CHECK(l2_distance(M, rho) == doctest::Approx(l2_distance_serial(M, rho)).epsilon(1e-12));
  }
}

TEST_CASE("d_regularized: cone and quasi-monotonicity") {
  const auto tab = table();
  const auto& c = tab->cone();
  CHECK(d_regularized(cone_samples(c), *tab, 1.0) <= 1e-14);
  CHECK(d_regularized(cone_samples(c), *tab, 0.3) <= 1e-14);

  const double q = 0.05;
  const double C1 = quasi_monotonicity_constant(c, q);
  auto suite = nonconcentration_suite(*tab, 3, 50);
  auto more = nonconcentration_suite(*tab, 4, 50);
  suite.insert(suite.end(), more.begin(), more.end());
  REQUIRE(suite.size() == 100);
  int worst_case = -1;
  double worst = 0.0;
  for (std::size_t m = 0; m < suite.size(); ++m) {
    for (double rho : {1.0, 0.4}) {
      const double base = d_regularized(suite[m], *tab, rho, q);
      REQUIRE(base > 0.0);
      for (double a : {0.5, 0.75, 1.0}) {
        const double r = d_regularized(suite[m], *tab, a * rho, q) / base;
        if (r > worst) {
          worst = r;
          worst_case = static_cast<int>(m);
        }
      }
    }
  }
  INFO("worst case " << worst_case);
  CHECK(worst <= C1);
}

TEST_CASE("d_regularized of a single mode graph follows its degree") {
  const auto tab = table();
  const double g = tab->cone().gamma;
  for (int l : {3, 5, 7}) {
    const auto M = mode_leaf_graph(l);
    std::vector<double> xs, ys;
    for (int k = 0; k <= 8; ++k) {
      const double rho = 0.8 * std::pow(0.7, k);
      xs.push_back(std::log(rho));
      ys.push_back(std::log(d_regularized(M, *tab, rho)));
    }
    const double mx = mean(xs), my = mean(ys);
    double sxy = 0, sxx = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      sxy += (xs[k] - mx) * (ys[k] - my);
      sxx += (xs[k] - mx) * (xs[k] - mx);
    }
    // heights of degree l - gamma, seen at unit scale after dividing by rho
    const double slope = sxy / sxx;
    CHECK(slope + 1.0 == doctest::Approx(l - g).epsilon(0.1));
  }
}

TEST_CASE("doubling: cone, single modes and the lower bound") {
  const auto tab = table();
  const auto& c = tab->cone();
  {
    const auto rep = doubling_sequence(cone_samples(c), *tab, 0.3, 8);
    CHECK(std::all_of(rep.ds.begin(), rep.ds.end(), [](double d) { return d == 0.0; }));
    CHECK(std::all_of(rep.flags.begin(), rep.flags.end(), [](char f) { return f != 0; }));
    CHECK(rep.doubling_constant == 1.0);
  }
  const double lam = 0.3;
  for (int l : {3, 5, 7}) {
    const auto M = mode_leaf_graph(l);
    DoublingOptions op;
    op.rho0 = 0.5;
    const auto rep = doubling_sequence(M, *tab, lam, 10, 0.05, op);
    CHECK(rep.degree_fit == doctest::Approx(l - c.gamma).epsilon(0.05));
    const double m = mean(rep.ratios);
    double var = 0.0;
    for (double r : rep.ratios) var += (r - m) * (r - m);
    var /= rep.ratios.size();
    CHECK(std::sqrt(var) / m < 0.05);
    CHECK(rep.doubling_constant == doctest::Approx(std::exp(lam * (l - c.gamma - 1.0))).epsilon(0.05));
    for (std::size_t k = 0; k < rep.ds.size(); ++k) {
      CHECK(rep.ds[k] >= std::pow(rep.doubling_constant, -double(k)) * rep.ds[0] * (1 - 1e-12));
    }
  }
}

TEST_CASE("doubling on the solved T recovers l - gamma") {
  const auto& T = testing::solved_T();
  const auto M = surface_varifold(T);
  DoublingOptions op;
  op.rho0 = 0.05;
  const auto rep = doubling_sequence(M, *table(), 0.25, 10, 0.05, op);
  CHECK(rep.degree_fit == doctest::Approx(T.params.l - T.cone.gamma).epsilon(0.15));
}

TEST_CASE("doubling refuses balls without enough samples") {
  const auto tab = table();
  GraphSampling gs;
  gs.n_rho = 12;
  gs.n_angle = 8;
  const auto M = graph_varifold(tab->cone(), [](double r, double y) { return 1e-4 * y * r; }, gs);
  try {
    doubling_sequence(M, *tab, 0.5, 10);
    FAIL("expected ResolutionExceeded");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ResolutionExceeded);
  }
}

TEST_CASE("barrier: defaults pass both certificates") {
  const auto X = build_barrier_Xeps(table(), BarrierSpec{}, true);
  CHECK(X.negativity_ok);
  CHECK(X.sandwich_ok);
  CHECK(X.tested_count > 0);
  CHECK(X.negative_count == X.tested_count);
  CHECK(X.negativity_certificate < 0.0);
  const auto& s = X.surface;
  for (int j = 0; j < s.ny; ++j) {
    const double t = X.spec.eps * std::pow(X.spec.f(s.ys[j])[0], X.spec.p_barrier);
    for (int i = 0; i < s.nx; ++i) {
      const double lp = X.leaf_param[s.idx(i, j)];
      CHECK(lp >= t - X.spec.eps);
      CHECK(lp <= t + X.spec.eps);
    }
  }
  const auto j = barrier_json(X);
  CHECK(j["negativity_ok"].get<bool>());
  CHECK(j["tested_nodes"].get<int>() == X.tested_count);
}

TEST_CASE("barrier slice offsets: linear in eps and -eps r near the cone") {
  const auto tab = table();
  BarrierSpec b;
  BarrierSpec half = b;
  half.eps = 0.5 * b.eps;
  std::vector<double> rs;
  for (int k = 0; k < 10; ++k) rs.push_back(1e-6 * std::pow(3.0, k));
  for (double f : {0.0, 4.0, -5.0}) {
    const auto o1 = barrier_slice_offsets(*tab, b, f, rs);
    const auto o2 = barrier_slice_offsets(*tab, half, f, rs);
    for (std::size_t k = 0; k < rs.size(); ++k) {
      CHECK(o2[k] / o1[k] == doctest::Approx(0.5).epsilon(0.05));
    }
  }
  std::vector<double> small;
  for (int k = 0; k < 8; ++k) small.push_back(1e-9 * std::pow(2.0, k));
  const auto o = barrier_slice_offsets(*tab, b, 0.0, small);
  std::vector<double> xs, ys;
  double num = 0, den = 0;
  for (std::size_t k = 0; k < small.size(); ++k) {
    num += o[k] * small[k];
    den += small[k] * small[k];
  }
  CHECK(num / den == doctest::Approx(-b.eps).epsilon(0.1));
}

TEST_CASE("barrier spec validation") {
  BarrierSpec b;
  b.p_barrier = 8;
  CHECK_THROWS_AS(build_barrier_Xeps(table(), b), Error);
  b = BarrierSpec{};
  b.K = 7.0;
  CHECK_THROWS_AS(build_barrier_Xeps(table(), b), Error);
}

TEST_CASE("nonconcentration: cone and leaf cylinders") {
  const auto tab = table();
  {
    const auto r = nonconcentration_experiment(cone_samples(tab->cone()), *tab, 1.0, 0.3);
    CHECK(r.lhs <= 1e-14);
    CHECK(r.holds);
    CHECK(r.fitted_A == r.A_grid.front());
  }
  for (double t : {1e-3, -2e-3}) {
    const auto M = leaf_cylinder_varifold(*tab, t, 1.0, 1.0);
    for (double s : {0.3, 0.1}) {
      const auto r = nonconcentration_experiment(M, *tab, 1.0, s);
      CHECK(r.lhs == doctest::Approx(std::abs(t)).epsilon(1e-3));
      CHECK(r.d_full == doctest::Approx(r.lhs).epsilon(1e-12));
      CHECK(r.holds);
      CHECK(r.fitted_A <= 1.0);
    }
  }
}

TEST_CASE("nonconcentration: one A covers the suite and is stable in s") {
  const auto tab = table();
  const auto suite = nonconcentration_suite(*tab, 7, 50);
  std::vector<double> covering;
  for (double s : {0.3, 0.1, 0.03}) {
    double A = 0.0;
    for (const auto& M : suite) {
      const auto r = nonconcentration_experiment(M, *tab, 1.0, s);
      REQUIRE(r.holds);
      A = std::max(A, r.fitted_A);
    }
    for (const auto& M : suite) {
      const auto r = nonconcentration_experiment(M, *tab, 1.0, s, {A});
      CHECK(r.holds);
    }
    covering.push_back(A);
  }
  const double m = mean(covering);
  for (double A : covering) CHECK(std::abs(A - m) <= 0.2 * m);
}

TEST_CASE("blowup degree of single modes and a perturbed u_7") {
  const auto tab = table();
  const auto& c = tab->cone();
  const double g = c.gamma;
  for (int l : {3, 5, 7}) {
    const auto u = ujacobi_coeffs(c, l);
    const auto P = jacobi_leaf_polynomial(u);
    GraphSampling gs;
    gs.r_min = 0.05;
    const auto M = graph_varifold(c, [&](double r, double y) { return 1e-6 * P(r, y) * std::pow(r, -g); }, gs);
    const auto br = blowup_degree(M, *tab, {1.0, 1.5});
    CHECK(br.m == l);
    CHECK(br.degree == doctest::Approx(l - g).epsilon(1e-12));
    double umax = 0.0;
    for (const auto& t : u.terms) umax = std::max(umax, std::abs(t.coef));
    for (const auto& t : u.terms) {
      bool found = false;
      for (const auto& f : br.expansion.terms) {
        if (f.k == t.k && f.l == t.l) {
          found = true;
          CHECK(f.coef == doctest::Approx(t.coef / umax).epsilon(1e-4));
        }
      }
      CHECK(found);
    }
  }
  {
    const auto P = jacobi_leaf_polynomial(ujacobi_coeffs(c, 7));
    GraphSampling gs;
    gs.r_min = 0.05;
    const auto M = graph_varifold(c, [&](double r, double y) {
      const double mix = std::pow(y, 8) + r * r * std::pow(y, 6);
      return 1e-6 * (P(r, y) + 1e-3 * mix) * std::pow(r, -g);
    }, gs);
    const auto br = blowup_degree(M, *tab, {1.0, 1.5});
    CHECK(br.m == 7);
    CHECK(br.degree == doctest::Approx(5.0));
  }
  try {
    GraphSampling gs;
    gs.r_min = 0.05;
    blowup_degree(graph_varifold(c, [](double, double) { return 0.0; }, gs), *tab, {1.0});
    FAIL("expected NoSignal");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NoSignal);
  }
}

TEST_CASE("dist_to_T: own samples, the case threshold and the cone") {
  const auto tab = table();
  const auto& T = testing::solved_T();
  const double D = T.params.l - T.cone.gamma;
  const double lam = std::pow(10.0, 1.0 - D);
  const auto T1 = scale_T(T, lam);
  TDistanceParams prm;
  prm.beta = 1e-3;
  const double bl = prm.beta * lam;
  const auto U = Region::annulus(0.5, 1.0);

  const auto own = dist_to_T(surface_varifold(T1), T1, lam, *tab, U, prm);
  CHECK(own.points > 0);
  CHECK(own.d == 0.0);
  CHECK_FALSE(own.case_a);

  auto T2 = T1;
  for (int j = 0; j < T2.ny; ++j) {
    for (int i = 0; i < T2.nx; ++i) T2.w[T2.idx(i, j)] += bl * std::pow(T1.r_of(i, j), -T.cone.gamma);
  }
  const auto thr = dist_to_T(surface_varifold(T2), T1, lam, *tab, U, prm);
  CHECK(thr.d == doctest::Approx(bl).epsilon(0.02));
  CHECK(thr.d_closed == doctest::Approx(thr.d).epsilon(1e-3));

  GraphSampling gs;
  gs.positive_y_only = true;
  gs.box = true;
  gs.y_abs_max = 0.5;
  gs.rho_lo = 0.3;
  gs.n_rho = 40;
  const auto Mc = graph_varifold(T.cone, [](double, double) { return 0.0; }, gs);
  const auto cr = dist_to_T(Mc, T1, lam, *tab, U, prm);
  CHECK(cr.case_a);
  CHECK(cr.d >= bl);
  CHECK(cr.d <= quasi_monotonicity_constant(T.cone, 0.05) * (cr.cone_distance + bl));
  CHECK(cr.d == doctest::Approx(cr.d_closed).epsilon(1e-3));

  TDistanceParams bad = prm;
  bad.gamma1 = T.cone.gamma - 0.1;
  CHECK_THROWS_AS(dist_to_T(Mc, T1, lam, *tab, U, bad), Error);
}

TEST_CASE("dt3annulus: vacuous on T, chain for a high mode, mass bound") {
  const auto tab = table();
  const auto& T = testing::solved_T();
  const auto& c = T.cone;
  const double D = T.params.l - c.gamma, L = 1.5;
  TDistanceParams prm;
  prm.beta = 1e-3;
  {
    const auto f = dt3annulus_experiment(surface_varifold(T), T, 1.0, *tab, L, D, 0.1, 0.5, prm);
    for (double v : f.D) CHECK(v == 0.0);
    CHECK(f.implication_i);
    CHECK(f.implication_ii);
    CHECK(f.mass <= f.mass_bound);
  }
  const double fac = std::pow(10 * L * L, 1 - D);
  const auto TB = scale_T(T, fac);
  const auto P9 = jacobi_leaf_polynomial(ujacobi_coeffs(c, 9));
  auto TM = TB;
  for (int j = 0; j < TM.ny; ++j) {
    for (int i = 0; i < TM.nx; ++i) {
      const auto p = TB.position(i, j);
      const double r = std::hypot(p[0], p[1]);
      TM.w[TM.idx(i, j)] += 1e-10 * P9(r, p[2]) * std::pow(r, -c.gamma);
    }
  }
  const auto M = surface_varifold(TM);
  const auto f = dt3annulus_experiment(M, TB, fac, *tab, L, 9.0, 0.1, 0.5, prm);
  CHECK(f.hyp_i);
  CHECK(f.concl_i);
  CHECK(f.implication_i);
  CHECK(f.implication_ii);

  GraphSampling gs;
  gs.box = true;
  gs.rho_hi = 2 * L * L;
  gs.y_abs_max = 2 * L * L;
  gs.n_rho = 60;
  gs.n_angle = 33;
  auto heavy = graph_varifold(c, [](double, double) { return 0.0; }, gs);
  double total = 0.0;
  for (double& w : heavy.weights) {
    w *= 10.0;
    total += w;
  }
  REQUIRE(total > 0.0);
  try {
    dt3annulus_experiment(heavy, TB, fac, *tab, L, 9.0, 0.1, 0.5, prm);
    FAIL("expected MassBoundFail");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MassBoundFail);
  }
}

TEST_CASE("varifold and doubling files") {
  const auto tab = table();
  SeededStream rng(3);
  const auto M = random_graph(tab->cone(), rng);
  std::ostringstream os;
  write_varifold_csv(os, M);
  CHECK(os.str().rfind("u,v,y,weight\n", 0) == 0);
  std::istringstream is(os.str());
  const auto back = read_varifold_csv(is, varifold_sidecar(M));
  REQUIRE(back.size() == M.size());
  for (std::size_t k = 0; k < M.size(); ++k) {
    CHECK(back.points[k] == M.points[k]);
    CHECK(back.weights[k] == M.weights[k]);
  }
  CHECK(back.cone.p == M.cone.p);
  CHECK(back.source == M.source);
  CHECK(back.rho_max == M.rho_max);

  const auto rep = doubling_sequence(mode_leaf_graph(5), *tab, 0.3, 6);
  std::ostringstream d1, d2;
  write_doubling_csv(d1, rep);
  write_doubling_csv(d2, rep);
  CHECK(d1.str().rfind("k,rho,d,flag\n", 0) == 0);
  CHECK(d1.str() == d2.str());
  CHECK(doubling_json(rep)["degree_fit"].get<double>() == rep.degree_fit);
}

TEST_CASE("varifold validation") {
  SampledVarifold M;
  M.cone = make_cone(3, 3);
  M.rho_max = 1.0;
  M.points = {{0.5, 0.5, 0.0}};
  M.weights = {0.0};
  CHECK_THROWS_AS(M.validate(), Error);
  M.weights = {1.0};
  CHECK_NOTHROW(M.validate());
  M.points = {{2.0, 0.5, 0.0}};
  CHECK_THROWS_AS(M.validate(), Error);
}

}  // TEST_SUITE
