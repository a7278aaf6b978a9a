#include "cylcone/foliation.hpp"

#include "cylcone/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>

namespace cylcone {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kLaunch = 1e-4;  // Taylor launch arclength relative to the axis distance

// Offset of the polar angle from the cone ray, accurate when it is tiny.
double psi_of(const QuadraticCone& c, double u, double v) {
  const double ca = c.link_a, sa = c.link_b;
  return std::atan2(v * ca - u * sa, u * ca + v * sa);
}

// q cot(phi) - p tan(phi) at phi = alpha + psi, without cancellation near psi = 0.
double g_field(const QuadraticCone& c, double psi) {
  const double T = c.tan_alpha;
  const double tp = std::tan(psi);
  const double den = 1.0 - T * tp;
  const double tphi = (T + tp) / den;
  const double diff = tp * (1.0 + T * T) / den;
  return -c.p * diff * (T + tphi) / tphi;
}

LeafSample make_sample(const QuadraticCone& c, double s, double u, double v, double theta) {
  LeafSample x;
  x.s = s;
  x.u = u;
  x.v = v;
  x.theta = theta;
  x.R = std::hypot(u, v);
  x.psi = psi_of(c, u, v);
  x.w = theta - (c.alpha + x.psi);
  return x;
}

LeafSample make_polar_sample(const QuadraticCone& c, double s, double R, double psi, double w) {
  LeafSample x;
  x.s = s;
  x.R = R;
  x.psi = psi;
  x.w = w;
  const double phi = c.alpha + psi;
  x.u = R * std::cos(phi);
  x.v = R * std::sin(phi);
  x.theta = phi + w;
  return x;
}

struct SampleDerivs {
  double dR, dpsi, dw;
};

SampleDerivs derivs(const LeafProfile& L, const LeafSample& x) {
  const double k = L.curvature(x.u, x.v, x.theta, x.R, x.psi, x.w);
  const double sw = std::sin(x.w);
  return {std::cos(x.w), sw / x.R, k - sw / x.R};
}

// Inverts a monotone sample key along the profile; `key` maps a sample to
// (value, d value/ds).  Bisection on the Hermite interpolant of the segment.
template <class Key>
double invert_profile(const LeafProfile& L, double target, Key&& key) {
  const auto& S = L.samples;
  const std::size_t n = S.size();
  const double k0 = key(S.front()).first, k1 = key(S.back()).first;
  const bool inc = k1 > k0;
  auto before = [&](double val) { return inc ? val < target : val > target; };
  if (!before(k0)) return S.front().s;
  if (before(k1)) return S.back().s;
  std::size_t lo = 0, hi = n - 1;
  while (hi - lo > 1) {
    const std::size_t mid = (lo + hi) / 2;
    (before(key(S[mid]).first) ? lo : hi) = mid;
  }
  const auto a = key(S[lo]), b = key(S[hi]);
  double sl = S[lo].s, sh = S[hi].s;
  for (int it = 0; it < 80 && sh - sl > 1e-15 * std::abs(sh); ++it) {
    const double sm = 0.5 * (sl + sh);
    const double val = num::hermite(S[lo].s, S[hi].s, a.first, b.first, a.second, b.second, sm);
    (before(val) ? sl : sh) = sm;
  }
  return 0.5 * (sl + sh);
}

}  // namespace

double profile_residual(const QuadraticCone& cone, double u, double v, double theta,
                        double dtheta) {
  return dtheta + cone.p * std::sin(theta) / u - cone.q * std::cos(theta) / v;
}

double LeafProfile::curvature(double u, double v, double theta, double R, double psi,
                              double w) const {
  const int p = cone.p, q = cone.q;
  if (u >= 0.05 * R && v >= 0.05 * R) {
    return (g_field(cone, psi) * std::cos(w) - (cone.n - 2) * std::sin(w)) / R;
  }
  if (u < 1e-9 * R) return q * std::cos(theta) / ((p + 1.0) * v);
  if (v < 1e-9 * R) return -p * std::sin(theta) / ((q + 1.0) * u);
  return -p * std::sin(theta) / u + q * std::cos(theta) / v;
}

LeafPoint LeafProfile::at(double s) const {
  const auto& S = samples;
  s = std::clamp(s, S.front().s, S.back().s);
  auto it = std::upper_bound(S.begin(), S.end(), s,
                             [](double x, const LeafSample& a) { return x < a.s; });
  std::size_t i = it == S.begin() ? 0 : static_cast<std::size_t>(it - S.begin()) - 1;
  i = std::min(i, S.size() - 2);
  const LeafSample& a = S[i];
  const LeafSample& b = S[i + 1];
  const SampleDerivs da = derivs(*this, a), db = derivs(*this, b);
  LeafPoint pt;
  pt.R = num::hermite(a.s, b.s, a.R, b.R, da.dR, db.dR, s);
  pt.psi = num::hermite(a.s, b.s, a.psi, b.psi, da.dpsi, db.dpsi, s);
  pt.w = num::hermite(a.s, b.s, a.w, b.w, da.dw, db.dw, s);
  const double phi = cone.alpha + pt.psi;
  pt.u = pt.R * std::cos(phi);
  pt.v = pt.R * std::sin(phi);
  if (i == 0 && s == a.s) {
    pt.u = a.u;
    pt.v = a.v;
  }
  pt.theta = phi + pt.w;
  pt.dtheta = curvature(pt.u, pt.v, pt.theta, pt.R, pt.psi, pt.w);
  // Second derivative by differencing the ODE curvature along the profile.
  const double h = 1e-4 * std::max(pt.R, 1e-300);
  auto k_at = [&](double ss) {
    ss = std::clamp(ss, S.front().s, S.back().s);
    auto jt = std::upper_bound(S.begin(), S.end(), ss,
                               [](double x, const LeafSample& c) { return x < c.s; });
    std::size_t j = jt == S.begin() ? 0 : static_cast<std::size_t>(jt - S.begin()) - 1;
    j = std::min(j, S.size() - 2);
    const LeafSample& c0 = S[j];
    const LeafSample& c1 = S[j + 1];
    const SampleDerivs d0 = derivs(*this, c0), d1 = derivs(*this, c1);
    const double R = num::hermite(c0.s, c1.s, c0.R, c1.R, d0.dR, d1.dR, ss);
    const double ps = num::hermite(c0.s, c1.s, c0.psi, c1.psi, d0.dpsi, d1.dpsi, ss);
    const double w = num::hermite(c0.s, c1.s, c0.w, c1.w, d0.dw, d1.dw, ss);
    const double ph = cone.alpha + ps;
    return curvature(R * std::cos(ph), R * std::sin(ph), ph + w, R, ps, w);
  };
  const double lo = std::max(S.front().s, s - h), hi = std::min(S.back().s, s + h);
  pt.ddtheta = hi > lo ? (k_at(hi) - k_at(lo)) / (hi - lo) : 0.0;
  return pt;
}

double LeafProfile::s_at_radius(double R) const {
  return invert_profile(*this, R, [&](const LeafSample& x) {
    return std::pair{x.R, std::cos(x.w)};
  });
}

double LeafProfile::s_at_psi(double psi) const {
  return invert_profile(*this, psi, [&](const LeafSample& x) {
    return std::pair{x.psi, std::sin(x.w) / x.R};
  });
}

double LeafProfile::s_at_foot(double x) const {
  return invert_profile(*this, x, [&](const LeafSample& a) {
    return std::pair{a.R * std::cos(a.psi), std::cos(a.theta - cone.alpha)};
  });
}

LeafProfile solve_leaf(const QuadraticCone& cone, Side side, const LeafOptions& opt) {
  if (!(opt.s_max > 0)) throw Error(ErrorKind::InvalidArgument, "s_max must be positive");
  LeafProfile L;
  L.cone = cone;
  L.side = side;
  const int p = cone.p, q = cone.q;
  const double r0 = 1.0;  // axis distance of the launch point
  const double s0 = kLaunch * r0;

  // Phase 1: arclength form from the axis.
  double u, v, th;
  if (side == Side::plus) {
    const double k = q / ((p + 1.0) * r0);
    L.samples.push_back(make_sample(cone, 0.0, 0.0, r0, 0.0));
    u = s0 - k * k * s0 * s0 * s0 / 6.0;
    v = r0 + 0.5 * k * s0 * s0;
    th = k * s0;
  } else {
    const double k = -p / ((q + 1.0) * r0);
    L.samples.push_back(make_sample(cone, 0.0, r0, 0.0, 0.5 * std::numbers::pi));
    u = r0 - 0.5 * k * s0 * s0;
    v = s0 - k * k * s0 * s0 * s0 / 6.0;
    th = 0.5 * std::numbers::pi + k * s0;
  }
  L.samples.push_back(make_sample(cone, s0, u, v, th));

  const double sgn = side_sign(side);
  bool blew_up = false, crossed = false, switched = false;
  auto rhs1 = [&](double, const std::array<double, 3>& y) {
    return std::array<double, 3>{std::cos(y[2]), std::sin(y[2]),
                                 -p * std::sin(y[2]) / y[0] + q * std::cos(y[2]) / y[1]};
  };
  num::Tolerances t1 = opt.tol;
  t1.h_max = std::min(t1.h_max, 0.005 * r0);
  t1.h_init = std::min(t1.h_init, s0);
  num::dopri5<3>(rhs1, s0, std::array<double, 3>{u, v, th}, t1,
                 [&](double s, const std::array<double, 3>& y, const std::array<double, 3>&) {
                   if (!(y[0] > 0 && y[1] > 0)) {
                     blew_up = true;
                     return false;
                   }
                   LeafSample x = make_sample(cone, s, y[0], y[1], y[2]);
                   if (x.psi * sgn <= 0) {
                     crossed = true;
                     return false;
                   }
                   L.samples.push_back(x);
                   if (x.R > 2.0 * r0 && std::abs(x.w) < 1.0) {
                     switched = true;
                     return false;
                   }
                   return s < opt.s_max;
                 });
  if (blew_up) throw Error(ErrorKind::BlowUp, "leaf profile left the quadrant");
  if (crossed) throw Error(ErrorKind::NoConvergence, "leaf profile crossed the cone ray");
  if (!switched) throw Error(ErrorKind::NoConvergence, "leaf angle did not approach alpha");

  // Phase 2: log-polar form, t = ln R, state (psi, w, s).
  const double n1 = cone.n - 1.0;
  auto rhs2 = [&](double t, const std::array<double, 3>& y) {
    const double tw = std::tan(y[1]);
    return std::array<double, 3>{tw, g_field(cone, y[0]) - n1 * tw,
                                 std::exp(t) / std::cos(y[1])};
  };
  const LeafSample& last = L.samples.back();
  num::Tolerances t2 = opt.tol;
  t2.atol = 1e-300;
  t2.h_max = 0.005;
  t2.h_init = 1e-3;
  bool bad = false;
  num::dopri5<3>(rhs2, std::log(last.R), std::array<double, 3>{last.psi, last.w, last.s}, t2,
                 [&](double t, const std::array<double, 3>& y, const std::array<double, 3>&) {
                   if (y[0] * sgn <= 0 || std::abs(y[1]) >= 0.5 * std::numbers::pi) {
                     bad = true;
                     return false;
                   }
                   L.samples.push_back(make_polar_sample(cone, y[2], std::exp(t), y[0], y[1]));
                   return y[2] < opt.s_max;
                 });
  if (bad) throw Error(ErrorKind::NoConvergence, "far-field profile crossed the cone ray");

  const double ratio = L.samples.back().R / L.samples.front().R;
  if (ratio < 1e3) {
    L.warning = "radius ratio " + std::to_string(ratio) + " below 1e3; asymptotic fit is unreliable";
  }

  const AsymptoticFit fit = fit_asymptotics(L);
  L.raw_coef = fit.coef;
  L.asymptotic_coef = fit.coef;
  L.remainder_coef = fit.remainder_coef;
  L.remainder_exp = fit.remainder_exp;
  L.decay_slope = fit.decay_slope;
  if (opt.normalize) {
    if (!(std::abs(fit.coef) > 0)) throw Error(ErrorKind::NoConvergence, "zero asymptotic coefficient");
    const double factor = std::pow(std::abs(fit.coef), -1.0 / (1.0 + cone.gamma));
    L = scale_leaf(L, factor);
    L.asymptotic_coef = sgn;
    L.normalized = true;
  }
  return L;
}

AsymptoticFit fit_asymptotics(const LeafProfile& L) {
  const QuadraticCone& c = L.cone;
  AsymptoticFit fit;
  const double R_end = L.samples.back().R;
  auto g_at = [&](double R) {
    const LeafPoint pt = L.at(L.s_at_radius(R));
    const double h = pt.R * std::sin(pt.psi);
    const double r = pt.R * std::cos(pt.psi);
    return std::pair{h * std::pow(r, c.gamma), r};
  };
  const double k = std::sqrt(10.0);
  auto aitken = [&](double R3, double& A, double& B, double& cexp) {
    const auto [g1, r1] = g_at(R3 / 10.0);
    const auto [g2, r2] = g_at(R3 / k);
    const auto [g3, r3] = g_at(R3);
    const double d12 = g1 - g2, d23 = g2 - g3;
    A = g3;
    B = 0.0;
    cexp = kNaN;
    if (d23 == 0.0 || d12 / d23 <= 1.0 || !std::isfinite(d12 / d23)) return false;
    if (std::abs(d12) < 1e-7 * std::abs(g3)) return false;
    cexp = std::log(d12 / d23) / std::log(k);
    const double kc = std::pow(k, cexp);
    A = g3 - d23 / (kc - 1.0);
    B = (g3 - A) * std::pow(r3, cexp);
    return true;
  };

  double A = 0, B = 0, ce = kNaN;
  aitken(R_end, A, B, ce);
  fit.coef = A;
  fit.remainder_coef = B;
  fit.remainder_exp = ce;
  if (!std::isfinite(ce)) {
    // The remainder is below resolution at the end; look for it further in.
    double R3 = R_end / 10.0;
    const double R_min = 10.0 * L.axis_radius();
    for (; R3 >= R_min; R3 /= 10.0) {
      double A2, B2, c2;
      if (aitken(R3, A2, B2, c2)) {
        fit.remainder_exp = c2;
        fit.remainder_coef = B2 * fit.coef / A2;
        break;
      }
    }
  }

  std::vector<double> lx, ly;
  for (const auto& x : L.samples) {
    if (x.R < R_end / 10.0) continue;
    lx.push_back(std::log(x.R * std::cos(x.psi)));
    ly.push_back(std::log(std::abs(x.R * std::sin(x.psi))));
  }
  fit.decay_slope = num::fit_slope(lx, ly);
  return fit;
}

LeafProfile scale_leaf(const LeafProfile& leaf, double f) {
  LeafProfile out = leaf;
  for (auto& x : out.samples) {
    x.s *= f;
    x.u *= f;
    x.v *= f;
    x.R *= f;
  }
  const double g1 = leaf.cone.gamma + 1.0;
  out.asymptotic_coef = leaf.asymptotic_coef * std::pow(f, g1);
  if (std::isfinite(leaf.remainder_exp)) {
    out.remainder_coef = leaf.remainder_coef * std::pow(f, g1 + leaf.remainder_exp);
  }
  out.scale = leaf.scale * f;
  return out;
}

FoliationTable::FoliationTable(const QuadraticCone& cone, LeafProfile plus, LeafProfile minus,
                               int table_size)
    : cone_(cone), plus_(std::move(plus)), minus_(std::move(minus)) {
  if (table_size < 4) throw Error(ErrorKind::InvalidArgument, "table needs >= 4 nodes");
  for (const LeafProfile* L : {&plus_, &minus_}) {
    const double sg = side_sign(L->side);
    for (std::size_t i = 1; i < L->samples.size(); ++i) {
      const auto& a = L->samples[i - 1];
      const auto& b = L->samples[i];
      if (!(b.R > a.R) || !(sg * b.psi < sg * a.psi)) {
        throw Error(ErrorKind::NoConvergence,
                    "leaf polar radius is not monotone in the angle at s=" + std::to_string(b.s));
      }
    }
  }
  auto build = [&](const LeafProfile& L, num::MonotoneCubic& table, double& psi_end) {
    const double sg = side_sign(L.side);
    psi_end = L.samples.back().psi;
    const double x_lo = std::log(sg * psi_end);
    const double x_hi = std::log(sg * L.samples.front().psi);
    std::vector<double> xs(table_size), ys(table_size);
    for (int k = 0; k < table_size; ++k) {
      const double c = -std::cos(std::numbers::pi * k / (table_size - 1));
      xs[k] = 0.5 * (x_lo + x_hi) + 0.5 * (x_hi - x_lo) * c;
    }
    xs.front() = x_lo;
    xs.back() = x_hi;
    for (int k = 0; k < table_size; ++k) {
      const double s = L.s_at_psi(sg * std::exp(xs[k]));
      ys[k] = std::log(L.at(s).R);
    }
    table = num::MonotoneCubic(std::move(xs), std::move(ys));
  };
  build(plus_, table_plus_, psi_end_plus_);
  build(minus_, table_minus_, psi_end_minus_);
}

double FoliationTable::radius_from_psi(Side s, double psi) const {
  const auto& table = s == Side::plus ? table_plus_ : table_minus_;
  const LeafProfile& L = leaf(s);
  const double x = std::log(std::abs(psi));
  if (x > table.x_max() + 1e-12 || x < table.x_min() - 1e-12) {
    throw Error(ErrorKind::OutOfTable, "angle outside the tabulated range");
  }
  double R = std::exp(table(std::clamp(x, table.x_min(), table.x_max())));
  // Newton refinement of the crossing on the profile itself.
  double sv = L.s_at_radius(R);
  for (int it = 0; it < 3; ++it) {
    const LeafPoint pt = L.at(sv);
    const double dpsi = std::sin(pt.w) / pt.R;
    if (dpsi == 0.0) break;
    const double ds = (psi - pt.psi) / dpsi;
    sv = std::clamp(sv + ds, L.samples.front().s, L.samples.back().s);
    if (std::abs(ds) < 1e-14 * std::max(1.0, sv)) break;
  }
  R = L.at(sv).R;
  return R;
}

double FoliationTable::polar_radius(Side s, double phi) const {
  return radius_from_psi(s, phi - cone_.alpha);
}

double FoliationTable::scale_of(double t) const {
  return std::pow(std::abs(t), 1.0 / (cone_.gamma + 1.0));
}

double FoliationTable::tail_parameter(Side s, double R, double psi) const {
  const LeafProfile& L = leaf(s);
  const double g = cone_.gamma;
  const double h = R * std::sin(psi);
  const double r = R * std::cos(psi);
  double t = h * std::pow(r, g) / std::abs(L.asymptotic_coef);
  if (std::isfinite(L.remainder_exp) && L.remainder_coef != 0.0) {
    const double c = L.remainder_exp;
    const double B = L.remainder_coef / std::abs(L.asymptotic_coef);
    for (int it = 0; it < 6; ++it) {
      const double mu = std::pow(std::abs(t), 1.0 / (g + 1.0));
      t = h * std::pow(r, g) / (std::abs(L.asymptotic_coef) + B * std::pow(mu, c) * std::pow(r, -c));
    }
  }
  return t;
}

double FoliationTable::leaf_parameter(double u, double v) const {
  if (!(u >= 0 && v >= 0) || (u == 0 && v == 0) || !std::isfinite(u) || !std::isfinite(v)) {
    throw Error(ErrorKind::OutOfTable, "point outside the closed quadrant or at the origin");
  }
  const double psi = psi_of(cone_, u, v);
  if (psi == 0.0) return 0.0;
  const Side s = psi > 0 ? Side::plus : Side::minus;
  const double R = std::hypot(u, v);
  const double psi_end = s == Side::plus ? psi_end_plus_ : psi_end_minus_;
  if (std::abs(psi) < std::abs(psi_end)) return tail_parameter(s, R, psi);
  const double g = radius_from_psi(s, psi);
  return side_sign(s) * std::pow(R / g, cone_.gamma + 1.0);
}

LeafProfile mirror_leaf(const LeafProfile& leaf) {
  if (leaf.cone.p != leaf.cone.q) {
    throw Error(ErrorKind::InvalidArgument, "mirror image is a leaf only when p = q");
  }
  LeafProfile out = leaf;
  out.side = leaf.side == Side::plus ? Side::minus : Side::plus;
  for (auto& x : out.samples) {
    std::swap(x.u, x.v);
    x.theta = 0.5 * std::numbers::pi - x.theta;
    x.psi = -x.psi;
    x.w = -x.w;
  }
  out.asymptotic_coef = -leaf.asymptotic_coef;
  out.remainder_coef = -leaf.remainder_coef;
  out.raw_coef = -leaf.raw_coef;
  return out;
}

FoliationTable build_foliation(const QuadraticCone& cone, const LeafOptions& opt) {
  LeafProfile plus = solve_leaf(cone, Side::plus, opt);
  if (cone.p == cone.q) {
    LeafProfile minus = mirror_leaf(plus);
    return FoliationTable(cone, std::move(plus), std::move(minus));
  }
  return FoliationTable(cone, std::move(plus), solve_leaf(cone, Side::minus, opt));
}

LeafProfile leaf_H(const FoliationTable& table, double t) {
  if (t != 0.0) {
    const Side s = t > 0 ? Side::plus : Side::minus;
    return scale_leaf(table.leaf(s), table.scale_of(t));
  }
  const QuadraticCone& c = table.cone();
  LeafProfile ray;
  ray.cone = c;
  ray.side = Side::plus;
  ray.normalized = true;
  ray.asymptotic_coef = 0.0;
  ray.remainder_exp = kNaN;
  for (const auto& x : table.leaf(Side::plus).samples) {
    ray.samples.push_back(make_polar_sample(c, x.R, x.R, 0.0, 0.0));
  }
  return ray;
}

double leaf_offset(const FoliationTable& table, double t, double lam, double r) {
  const QuadraticCone& c = table.cone();
  double px, py, nx, ny;
  if (t == 0.0) {
    px = r * c.link_a;
    py = r * c.link_b;
    nx = -c.link_b;
    ny = c.link_a;
  } else {
    const Side s = t > 0 ? Side::plus : Side::minus;
    const LeafProfile& L = table.leaf(s);
    const double mu = table.scale_of(t);
    if (r / mu < L.axis_radius()) return kNaN;
    const LeafPoint pt = L.at(L.s_at_radius(r / mu));
    px = mu * pt.u;
    py = mu * pt.v;
    nx = -std::sin(pt.theta);
    ny = std::cos(pt.theta);
  }
  const double target = t + lam;
  auto f = [&](double o) { return table.leaf_parameter(px + o * nx, py + o * ny) - target; };
  auto inside = [&](double o) { return px + o * nx >= 0 && py + o * ny >= 0; };
  double lo = 0.0, hi = 1e-12 * r;
  while (f(hi) < 0) {
    lo = hi;
    hi *= 2.0;
    if (!inside(hi) || hi > 1e6 * r) return kNaN;
  }
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) < 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double separation_constant(const FoliationTable& table, double t, double lam,
                           std::span<const double> sample_radii) {
  if (!(lam > 0)) throw Error(ErrorKind::InvalidArgument, "lam must be positive");
  const double g = table.cone().gamma;
  double c0 = std::numeric_limits<double>::infinity();
  int used = 0;
  for (double r : sample_radii) {
    const double o = leaf_offset(table, t, lam, r);
    if (!std::isfinite(o)) continue;
    ++used;
    c0 = std::min(c0, o / std::min(lam * std::pow(r, -g), r));
  }
  if (used == 0) throw Error(ErrorKind::InvalidArgument, "no sample radius lies on H(t)");
  return c0;
}

double leaf_secfund_sq(const QuadraticCone& cone, const LeafPoint& pt) {
  const double k = pt.dtheta;
  const double su = pt.u < 1e-9 * pt.R ? k : std::sin(pt.theta) / pt.u;
  const double cv = pt.v < 1e-9 * pt.R ? -k : std::cos(pt.theta) / pt.v;
  return k * k + cone.p * su * su + cone.q * cv * cv;
}

double leaf_jacobi_radial(const QuadraticCone& cone, const LeafPoint& pt, double f, double df,
                          double d2f) {
  const double c = -std::sin(pt.w);
  const double c2 = c * c;
  return d2f * (1.0 - c2) + df * (cone.n - 2.0 + c2) / pt.R + leaf_secfund_sq(cone, pt) * f;
}

double BarrierFunction::value_at(const LeafProfile& leaf, double s_) const {
  if (method == "candidate") {
    const double R = leaf.at(s_).R;
    return std::pow(R * R + sigma * sigma, 0.5 * a);
  }
  if (s_ <= s.front()) return values.front();
  if (s_ >= s.back()) {
    const double R = leaf.at(s_).R;
    return std::pow(R, a);
  }
  auto it = std::upper_bound(s.begin(), s.end(), s_);
  const std::size_t i = static_cast<std::size_t>(it - s.begin()) - 1;
  const double t = (s_ - s[i]) / (s[i + 1] - s[i]);
  return (1 - t) * values[i] + t * values[i + 1];
}

double BarrierFunction::jacobi_at(const LeafProfile& leaf, double s_) const {
  const LeafPoint pt = leaf.at(s_);
  const double R = pt.R;
  if (method == "candidate" || s_ >= s.back()) {
    const double s2 = method == "candidate" ? sigma * sigma : 0.0;
    const double Q = R * R + s2;
    const double f = std::pow(Q, 0.5 * a);
    const double df = a * R * f / Q;
    const double d2f = a * f / Q + a * (a - 2.0) * R * R * f / (Q * Q);
    return leaf_jacobi_radial(leaf.cone, pt, f, df, d2f);
  }
  if (s_ <= s.front()) return jacobi.front();
  auto it = std::upper_bound(s.begin(), s.end(), s_);
  const std::size_t i = static_cast<std::size_t>(it - s.begin()) - 1;
  const double t = (s_ - s[i]) / (s[i + 1] - s[i]);
  return (1 - t) * jacobi[i] + t * jacobi[i + 1];
}

namespace {

void finish_barrier(BarrierFunction& B, const std::vector<LeafPoint>& pts) {
  B.matching_radius = pts.back().R;
  for (std::size_t i = pts.size(); i-- > 0;) {
    if (std::abs(B.values[i] / std::pow(pts[i].R, B.a) - 1.0) >= 1e-3) break;
    B.matching_radius = pts[i].R;
  }
  B.far_field_ratio = B.values.back() / std::pow(pts.back().R, B.a);
}

double candidate_certificate(const QuadraticCone& cone, const std::vector<LeafPoint>& pts,
                             double a, double sgn, double sigma, BarrierFunction* out) {
  double cert = std::numeric_limits<double>::infinity();
  if (out) {
    out->values.resize(pts.size());
    out->jacobi.resize(pts.size());
  }
  const double s2 = sigma * sigma;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double R = pts[i].R;
    const double Q = R * R + s2;
    const double f = std::pow(Q, 0.5 * a);
    const double df = a * R * f / Q;
    const double d2f = a * f / Q + a * (a - 2.0) * R * R * f / (Q * Q);
    const double LF = leaf_jacobi_radial(cone, pts[i], f, df, d2f);
    cert = std::min(cert, sgn * LF / std::pow(R, a - 2.0));
    if (out) {
      out->values[i] = f;
      out->jacobi[i] = LF;
    }
  }
  return cert;
}

}  // namespace

BarrierFunction build_Fa(const QuadraticCone& cone, const LeafProfile& leaf, double a,
                         BarrierVariant variant) {
  const double g = cone.gamma;
  if (variant == BarrierVariant::subsolution && !(a > -g)) {
    throw Error(ErrorKind::InvalidArgument, "subsolution barrier needs a > -gamma");
  }
  if (variant == BarrierVariant::supersolution && !(a > 3.0 - cone.n + g && a < -g)) {
    throw Error(ErrorKind::InvalidArgument, "supersolution barrier needs 3-n+gamma < a < -gamma");
  }
  const double sgn = variant == BarrierVariant::subsolution ? 1.0 : -1.0;
  BarrierFunction B;
  B.a = a;
  B.side = leaf.side;
  B.variant = variant;
  std::vector<LeafPoint> pts;
  pts.reserve(leaf.samples.size());
  for (const auto& x : leaf.samples) {
    B.s.push_back(x.s);
    LeafPoint pt = leaf.at(x.s);
    pt.u = x.u;
    pt.v = x.v;
    pts.push_back(pt);
  }

  // Candidate (R^2 + sigma^2)^{a/2}: coarse scan in log sigma, then golden-section refinement.
  const double lo = std::log(1e-3 * leaf.scale), hi = std::log(1e3 * leaf.scale);
  const int coarse = 61;
  double best = -std::numeric_limits<double>::infinity();
  int best_k = 0;
  for (int k = 0; k < coarse; ++k) {
    const double ls = lo + (hi - lo) * k / (coarse - 1);
    const double c = candidate_certificate(cone, pts, a, sgn, std::exp(ls), nullptr);
    if (c > best) {
      best = c;
      best_k = k;
    }
  }
  const double step = (hi - lo) / (coarse - 1);
  double xa = lo + step * std::max(0, best_k - 1), xb = lo + step * std::min(coarse - 1, best_k + 1);
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = xb - phi * (xb - xa), x2 = xa + phi * (xb - xa);
  double f1 = candidate_certificate(cone, pts, a, sgn, std::exp(x1), nullptr);
  double f2 = candidate_certificate(cone, pts, a, sgn, std::exp(x2), nullptr);
  for (int it = 0; it < 60; ++it) {
    if (f1 > f2) {
      xb = x2;
      x2 = x1;
      f2 = f1;
      x1 = xb - phi * (xb - xa);
      f1 = candidate_certificate(cone, pts, a, sgn, std::exp(x1), nullptr);
    } else {
      xa = x1;
      x1 = x2;
      f1 = f2;
      x2 = xa + phi * (xb - xa);
      f2 = candidate_certificate(cone, pts, a, sgn, std::exp(x2), nullptr);
    }
  }
  double ls_best = lo + step * best_k;
  if (std::max(f1, f2) > best) {
    ls_best = f1 > f2 ? x1 : x2;
    best = std::max(f1, f2);
  }
  if (best > 0) {
    B.method = "candidate";
    B.sigma = std::exp(ls_best);
    B.sign_certificate = candidate_certificate(cone, pts, a, sgn, B.sigma, &B);
    finish_barrier(B, pts);
    return B;
  }

  // Fallback: L_H F = c_a (1 + R^2)^{(a-2)/2} with an even axis condition and F = R^a at the end.
  const double ca = cone_jacobi_constant(cone, a);
  const std::size_t N = pts.size();
  std::vector<double> sub(N, 0.0), diag(N, 0.0), sup(N, 0.0), rhs(N, 0.0);
  std::vector<double> A2(N), bcoef(N);
  const bool plus = leaf.side == Side::plus;
  for (std::size_t i = 0; i < N; ++i) {
    const LeafPoint& pt = pts[i];
    A2[i] = leaf_secfund_sq(cone, pt);
    if (i == 0) {
      bcoef[i] = 0.0;
    } else {
      bcoef[i] = cone.p * std::cos(pt.theta) / pt.u + cone.q * std::sin(pt.theta) / pt.v;
    }
    rhs[i] = ca * std::pow(1.0 + pt.R * pt.R / (leaf.scale * leaf.scale), 0.5 * (a - 2.0)) *
             std::pow(leaf.scale, a - 2.0);
  }
  const std::vector<double>& s = B.s;
  {
    const double h = s[1] - s[0];
    const double axis_mult = 1.0 + (plus ? cone.p : cone.q);
    diag[0] = -2.0 * axis_mult / (h * h) + A2[0];
    sup[0] = 2.0 * axis_mult / (h * h);
  }
  for (std::size_t i = 1; i + 1 < N; ++i) {
    const double hm = s[i] - s[i - 1], hp = s[i + 1] - s[i];
    const double cm = 2.0 / (hm * (hm + hp)), cp = 2.0 / (hp * (hm + hp)), c0 = -2.0 / (hm * hp);
    const double dm = -hp / (hm * (hm + hp)), dp = hm / (hp * (hm + hp)), d0 = (hp - hm) / (hm * hp);
    sub[i] = cm + bcoef[i] * dm;
    diag[i] = c0 + bcoef[i] * d0 + A2[i];
    sup[i] = cp + bcoef[i] * dp;
  }
  diag[N - 1] = 1.0;
  rhs[N - 1] = std::pow(pts[N - 1].R, a);
  // Thomas algorithm.
  std::vector<double> cprime(N), dprime(N), F(N);
  cprime[0] = sup[0] / diag[0];
  dprime[0] = rhs[0] / diag[0];
  for (std::size_t i = 1; i < N; ++i) {
    const double m = diag[i] - sub[i] * cprime[i - 1];
    cprime[i] = sup[i] / m;
    dprime[i] = (rhs[i] - sub[i] * dprime[i - 1]) / m;
  }
  F[N - 1] = dprime[N - 1];
  for (std::size_t i = N - 1; i-- > 0;) F[i] = dprime[i] - cprime[i] * F[i + 1];

  B.method = "bvp";
  B.values = F;
  B.jacobi.assign(N, 0.0);
  double cert = std::numeric_limits<double>::infinity();
  std::size_t worst = 0;
  for (std::size_t i = 0; i + 1 < N; ++i) {
    double LF = diag[i] * F[i] + sup[i] * F[i + 1];
    if (i > 0) LF += sub[i] * F[i - 1];
    B.jacobi[i] = LF;
    const double c = sgn * LF / std::pow(pts[i].R, a - 2.0);
    if (c < cert || !(F[i] > 0)) {
      cert = F[i] > 0 ? c : -1.0;
      worst = i;
    }
  }
  B.jacobi[N - 1] = B.jacobi[N - 2];
  B.sign_certificate = cert;
  if (!(cert > 0)) {
    throw Error(ErrorKind::NoBarrier,
                "no barrier for a=" + std::to_string(a) + "; worst sample R=" +
                    std::to_string(pts[worst].R) + " (candidate best " + std::to_string(best) +
                    ", bvp " + std::to_string(cert) + ")");
  }
  finish_barrier(B, pts);
  return B;
}

void write_leaf_csv(std::ostream& os, const LeafProfile& leaf) {
  os << "s,u,v,theta\n";
  char buf[128];
  for (const auto& x : leaf.samples) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", x.s, x.u, x.v, x.theta);
    os << buf;
  }
}

nlohmann::json leaf_sidecar(const LeafProfile& leaf) {
  nlohmann::json j;
  j["p"] = leaf.cone.p;
  j["q"] = leaf.cone.q;
  j["gamma"] = leaf.cone.gamma;
  j["side"] = leaf.side == Side::plus ? "plus" : "minus";
  j["asymptotic_coef"] = leaf.asymptotic_coef;
  if (std::isfinite(leaf.remainder_exp)) {
    j["remainder_exp"] = leaf.remainder_exp;
  } else {
    j["remainder_exp"] = nullptr;
  }
  j["raw_coef"] = leaf.raw_coef;
  j["decay_slope"] = leaf.decay_slope;
  j["normalized"] = leaf.normalized;
  if (!leaf.warning.empty()) j["warning"] = leaf.warning;
  return j;
}

}  // namespace cylcone
