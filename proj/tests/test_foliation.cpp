#include "cylcone/errors.hpp"
#include "cylcone/foliation.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <vector>

using namespace cylcone;

namespace {

double slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// Log-log slope of the normal distance to the cone over the last decade of radii.
double tail_decay(const LeafProfile& L) {
  const double Rmax = L.samples.back().R;
  std::vector<double> lx, ly;
  for (const auto& x : L.samples) {
    if (x.R < 0.1 * Rmax) continue;
    lx.push_back(std::log(x.R));
    ly.push_back(std::log(std::abs(x.R * std::sin(x.psi))));
  }
  return slope(lx, ly);
}

double height_at_foot(const LeafProfile& L, double x) {
  const LeafPoint pt = L.at(L.s_at_foot(x));
  return pt.R * std::sin(pt.psi);
}

}  // namespace

TEST_SUITE("foliation") {

TEST_CASE("the cone ray is an equilibrium of the profile equation") {
  for (auto [p, q] : {std::pair{3, 3}, {2, 4}, {2, 5}, {4, 4}}) {
    const auto c = make_cone(p, q);
    for (double R : {1e-3, 1.0, 1e3}) {
      const double u = R * c.link_a, v = R * c.link_b;
      CHECK(std::abs(profile_residual(c, u, v, c.alpha, 0.0)) * R < 1e-14);
    }
  }
}

TEST_CASE("shooting leaves: launch, arclength and curvature residual") {
  for (auto [p, q] : {std::pair{3, 3}, {2, 4}}) {
    const auto c = make_cone(p, q);
    for (Side side : {Side::plus, Side::minus}) {
      const LeafProfile L = solve_leaf(c, side);
      REQUIRE(L.samples.size() > 10);
      const auto& first = L.samples.front();
      CHECK(first.s == 0.0);
      if (side == Side::plus) {
        CHECK(first.u == 0.0);
        CHECK(std::abs(std::sin(first.theta)) < 1e-12);
      } else {
        CHECK(first.v == 0.0);
        CHECK(std::abs(std::cos(first.theta)) < 1e-12);
      }
      double worst_res = 0, worst_arc = 0;
      for (std::size_t k = 1; k < L.samples.size(); ++k) {
        const auto& a = L.samples[k - 1];
        const auto& b = L.samples[k];
        const LeafPoint pt = L.at(b.s);
        worst_res = std::max(worst_res, std::abs(profile_residual(c, b.u, b.v, b.theta, pt.dtheta)));
        const double h = b.s - a.s;
        const double chord = std::hypot(b.u - a.u, b.v - a.v);
        const double kappa = std::max(std::abs(L.at(a.s).dtheta), std::abs(pt.dtheta));
        const double allowed = std::max(1e-8, 0.1 * kappa * kappa * h * h);
        worst_arc = std::max(worst_arc, std::abs(chord / h - 1.0) / allowed);
      }
      CHECK(worst_res < 1e-6);
      CHECK(worst_arc <= 1.0);
      CHECK(std::abs(L.asymptotic_coef) == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(L.asymptotic_coef * side_sign(side) > 0);
    }
  }
}

TEST_CASE("fitted decay exponent is -gamma within 2 percent") {
  for (auto [p, q] : {std::pair{3, 3}, {2, 4}, {2, 5}}) {
    const auto c = make_cone(p, q);
    const LeafProfile L = solve_leaf(c, Side::plus);
    const double s = tail_decay(L);
    CHECK(std::abs(s + c.gamma) < 0.02 * c.gamma);
    CHECK(std::abs(L.decay_slope + c.gamma) < 0.02 * c.gamma);
  }
}

TEST_CASE("leaf scaling multiplies the asymptotic coefficient by lambda^(gamma+1)") {
  const auto c = make_cone(3, 3);
  const LeafProfile L = solve_leaf(c, Side::plus);
  const double base = fit_asymptotics(L).coef;
  for (double lam : {0.5, 2.0, 3.0}) {
    const auto fit = fit_asymptotics(scale_leaf(L, lam));
    CHECK(fit.coef / base == doctest::Approx(std::pow(lam, c.gamma + 1)).epsilon(1e-6));
  }
}

TEST_CASE("derivatives of the leaf graph decay at least like r^(-gamma-i)") {
  const auto tab = testing::table();
  const auto& L = tab->leaf(Side::plus);
  const double g = tab->cone().gamma;
  std::vector<double> lx, l0, l1, l2;
  for (int k = 0; k <= 40; ++k) {
    const double x = std::pow(10.0, 1.0 + 2.0 * k / 40);
    const double d = 1e-2 * x;
    const double hm = height_at_foot(L, x - d), h0 = height_at_foot(L, x), hp = height_at_foot(L, x + d);
    lx.push_back(std::log(x));
    l0.push_back(std::log(std::abs(h0)));
    l1.push_back(std::log(std::abs((hp - hm) / (2 * d))));
    l2.push_back(std::log(std::abs((hp - 2 * h0 + hm) / (d * d))));
  }
  CHECK(slope(lx, l0) <= -g + 0.1);
  CHECK(slope(lx, l1) <= -g - 1 + 0.1);
  CHECK(slope(lx, l2) <= -g - 2 + 0.1);
}

TEST_CASE("mirror symmetry for p = q") {
  const auto tab = testing::table();
  const auto& P = tab->leaf(Side::plus);
  const auto& M = tab->leaf(Side::minus);
  REQUIRE(P.samples.size() == M.samples.size());
  for (std::size_t k = 0; k < P.samples.size(); k += 37) {
    CHECK(M.samples[k].u == P.samples[k].v);
    CHECK(M.samples[k].v == P.samples[k].u);
  }
  CHECK_THROWS_AS(mirror_leaf(solve_leaf(make_cone(2, 4), Side::plus)), Error);
}

TEST_CASE("leaf_H examples") {
  const auto tab = testing::table();
  const LeafProfile ray = leaf_H(*tab, 0.0);
  for (const auto& x : ray.samples) CHECK(x.psi == 0.0);
  const LeafProfile one = leaf_H(*tab, 1.0);
  const auto& P = tab->leaf(Side::plus);
  CHECK(one.axis_radius() == doctest::Approx(P.axis_radius()).epsilon(1e-15));
  const LeafProfile eight = leaf_H(*tab, 8.0);
  CHECK(eight.axis_radius() / P.axis_radius() == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(tab->scale_of(8.0) == doctest::Approx(2.0).epsilon(1e-14));
  const LeafProfile neg = leaf_H(*tab, -8.0);
  CHECK(neg.side == Side::minus);
}

TEST_CASE("leaf_parameter: cone, round trip and covariance") {
  const auto tab = testing::table();
  const auto c = tab->cone();
  CHECK(tab->leaf_parameter(2 * c.link_a, 2 * c.link_b) == 0.0);
  for (double t : {0.5, -0.5, 1e-6, 3.0, -40.0}) {
    const LeafProfile H = leaf_H(*tab, t);
    double worst = 0;
    for (std::size_t k = 1; k < H.samples.size(); k += 11) {
      const auto& x = H.samples[k];
      if (x.R > 100 * tab->scale_of(t)) break;
      worst = std::max(worst, std::abs(tab->leaf_parameter(x.u, x.v) / t - 1.0));
    }
    CHECK(worst < 1e-3);
  }
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ang(0.05, 0.5 * std::numbers::pi - 0.05), rad(0.1, 10.0);
  for (int k = 0; k < 200; ++k) {
    const double phi = ang(rng), R = rad(rng);
    const double u = R * std::cos(phi), v = R * std::sin(phi);
    const double t = tab->leaf_parameter(u, v);
    for (double lam : {0.5, 3.0}) {
      const double tl = tab->leaf_parameter(lam * u, lam * v);
      CHECK(std::abs(tl - std::pow(lam, c.gamma + 1) * t) <= 1e-3 * std::abs(tl) + 1e-300);
    }
  }
  CHECK_THROWS_AS(tab->leaf_parameter(0.0, 0.0), Error);
  CHECK_THROWS_AS(tab->leaf_parameter(-1.0, 1.0), Error);
}

TEST_CASE("leaves are disjoint: leaf parameter is monotone along rays") {
  for (auto [p, q] : {std::pair{3, 3}, {2, 4}}) {
    const auto tab = testing::table(p, q);
    const auto c = tab->cone();
    int violations = 0;
    for (int a = 0; a < 1000; ++a) {
      const double phi = 1e-3 + (0.5 * std::numbers::pi - 2e-3) * (a + 0.5) / 1000.0;
      if (std::abs(phi - c.alpha) < 1e-9) continue;
      double prev = 0;
      for (int k = 0; k < 100; ++k) {
        const double R = std::pow(10.0, -2.0 + 4.0 * k / 99);
        const double t = std::abs(tab->leaf_parameter(R * std::cos(phi), R * std::sin(phi)));
        if (k > 0 && !(t > prev)) ++violations;
        prev = t;
      }
    }
    CHECK(violations == 0);
  }
}

TEST_CASE("separation constant") {
  const auto tab = testing::table();
  const double g = tab->cone().gamma;
  const std::vector<double> radii = {0.5, 1, 2, 4, 8, 16};
  const double c0 = separation_constant(*tab, 0.0, 0.1, radii);
  CHECK(c0 > 0);
  std::vector<double> scaled;
  for (double r : radii) scaled.push_back(2 * r);
  const double f = std::pow(2.0, g + 1);
  const double c1 = separation_constant(*tab, 0.0, 0.1 * f, scaled);
  CHECK(std::abs(c1 / c0 - 1) < 0.01);
  const double t = 0.3;
  const double ct = separation_constant(*tab, t, 0.1, radii);
  const double cts = separation_constant(*tab, t * f, 0.1 * f, scaled);
  CHECK(ct > 0);
  CHECK(std::abs(cts / ct - 1) < 0.01);
  CHECK_THROWS_AS(separation_constant(*tab, 0.0, -1.0, radii), Error);
}

TEST_CASE("offset over lambda has a finite positive limit as lambda goes to 0") {
  const auto tab = testing::table();
  const double r = 2.0;
  std::vector<double> q;
  for (double lam : {1e-2, 5e-3, 2.5e-3, 1.25e-3}) q.push_back(leaf_offset(*tab, 0.0, lam, r) / lam);
  for (double v : q) CHECK(v > 0);
  // differences shrink geometrically at an unknown rate; extrapolate with the observed ratio
  const double d1 = q[1] - q[0], d2 = q[2] - q[1], d3 = q[3] - q[2];
  const double k1 = d2 / d1, k2 = d3 / d2;
  CHECK(k1 > 0);
  CHECK(k1 < 1);
  CHECK(std::abs(k2 / k1 - 1) < 0.1);
  const double limit = q[3] + d3 * k2 / (1 - k2);
  CHECK(std::isfinite(limit));
  CHECK(limit > 0);
  // the homothety field of the unit leaf is r^-gamma to leading order
  CHECK(limit == doctest::Approx(std::pow(r, -tab->cone().gamma)).epsilon(0.02));
}

TEST_CASE("barrier functions F_a") {
  const auto tab = testing::table();
  const auto c = tab->cone();
  const auto F = build_Fa(c, tab->leaf(Side::plus), 2.0 - c.gamma, BarrierVariant::subsolution);
  CHECK(F.sign_certificate > 0);
  CHECK(std::abs(F.far_field_ratio - 1.0) < 1e-3);
  const auto F1 = build_Fa(c, tab->leaf(Side::plus), 1.0, BarrierVariant::subsolution);
  CHECK(F1.sign_certificate > 0);
  CHECK(std::abs(F1.far_field_ratio - 1.0) < 1e-3);
}

TEST_CASE("L_C r^a on the cone ray: closed form vs finite differences") {
  const auto c = make_cone(3, 3);
  for (double a : {-2.5, -1.0, 0.0, 1.0, 2.0}) {
    for (double R : {0.5, 1.0, 3.0}) {
      LeafPoint pt;
      pt.u = R * c.link_a;
      pt.v = R * c.link_b;
      pt.theta = c.alpha;
      pt.R = R;
      const double h = 1e-4 * R;
      auto f = [a](double x) { return std::pow(x, a); };
      const double d1 = (f(R + h) - f(R - h)) / (2 * h);
      const double d2 = (f(R + h) - 2 * f(R) + f(R - h)) / (h * h);
      const double fd = leaf_jacobi_radial(c, pt, f(R), d1, d2);
      CHECK(fd == doctest::Approx(cone_jacobi_constant(c, a) * std::pow(R, a - 2)).epsilon(1e-6));
    }
  }
}

TEST_CASE("leaf CSV and sidecar") {
  const auto tab = testing::table();
  std::ostringstream os;
  write_leaf_csv(os, tab->leaf(Side::plus));
  const std::string s = os.str();
  CHECK(s.rfind("s,u,v,theta\n", 0) == 0);
  const auto j = leaf_sidecar(tab->leaf(Side::minus));
  CHECK(j["side"] == "minus");
  CHECK(j["p"] == 3);
  CHECK(j["normalized"] == true);
}

}
