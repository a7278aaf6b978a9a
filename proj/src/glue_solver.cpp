#include "cylcone/glue_solver.hpp"

#include "cylcone/errors.hpp"

#include <Eigen/Dense>
#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>

extern "C" void dgbsv_(const int* n, const int* kl, const int* ku, const int* nrhs, double* ab,
                       const int* ldab, int* ipiv, double* b, const int* ldb, int* info);

namespace cylcone {

namespace {

struct V3 {
  double x = 0, h = 0, y = 0;
};
V3 operator+(V3 a, V3 b) { return {a.x + b.x, a.h + b.h, a.y + b.y}; }
V3 operator*(double c, V3 a) { return {c * a.x, c * a.h, c * a.y}; }
double dot(V3 a, V3 b) { return a.x * b.x + a.h * b.h + a.y * b.y; }
V3 cross(V3 a, V3 b) {
  return {a.h * b.y - a.y * b.h, a.y * b.x - a.x * b.y, a.x * b.h - a.h * b.x};
}

// -p nu_u/u - q nu_v/v in the cone frame, with the cone's own terms cancelled
// analytically.  g = h/x; (nx, nh) the in-plane part of the unit normal.
double pq_term(const QuadraticCone& c, double x, double h, double nx, double nh) {
  const double t = c.tan_alpha;
  const double g = h / x;
  const double num = t * nx + g * (1.0 - t * t) * nx - t * g * nh;
  return -(c.n - 2.0) / x * num / ((1.0 - t * g) * (t + g));
}

void frame_to_uv(const QuadraticCone& c, double x, double h, double& u, double& v) {
  const double ca = c.link_a, sa = c.link_b;
  u = x * ca - h * sa;
  v = x * sa + h * ca;
}

struct WJet {
  double xi = 0, xixi = 0, y = 0, yy = 0, xiy = 0;
};

// First and second derivative of f at k on a uniform grid of n >= 4 points.
template <class F>
void stencil(F&& f, int k, int n, double h, bool even_ghost, double& d1, double& d2) {
  if (k > 0 && k < n - 1) {
    d1 = (f(k + 1) - f(k - 1)) / (2 * h);
    d2 = (f(k + 1) - 2 * f(k) + f(k - 1)) / (h * h);
  } else if (k == 0) {
    if (even_ghost) {
      d1 = 0.0;
      d2 = 2.0 * (f(1) - f(0)) / (h * h);
    } else {
      d1 = (-3 * f(0) + 4 * f(1) - f(2)) / (2 * h);
      d2 = (2 * f(0) - 5 * f(1) + 4 * f(2) - f(3)) / (h * h);
    }
  } else {
    d1 = (3 * f(n - 1) - 4 * f(n - 2) + f(n - 3)) / (2 * h);
    d2 = (2 * f(n - 1) - 5 * f(n - 2) + 4 * f(n - 3) - f(n - 4)) / (h * h);
  }
}

double eta_y(const EquivariantSurface& s, int j) { return s.log_y ? 1.0 / s.ys[j] : 1.0; }
double eta_yy(const EquivariantSurface& s, int j) {
  return s.log_y ? -1.0 / (s.ys[j] * s.ys[j]) : 0.0;
}

WJet fd_jet(const EquivariantSurface& s, const std::vector<double>& w, int i, int j) {
  const int nx = s.nx, ny = s.ny;
  const double hx = 1.0 / (nx - 1);
  const double he = s.etas[1] - s.etas[0];
  const bool ghost = s.has_axis();
  WJet d;
  double d1, d2;
  stencil([&](int k) { return w[s.idx(k, j)]; }, i, nx, hx, ghost, d.xi, d.xixi);
  double we, wee;
  stencil([&](int k) { return w[s.idx(i, k)]; }, j, ny, he, false, we, wee);
  auto wxi_row = [&](int k) {
    stencil([&](int m) { return w[s.idx(m, k)]; }, i, nx, hx, ghost, d1, d2);
    return d1;
  };
  double wxe, unused;
  stencil(wxi_row, j, ny, he, false, wxe, unused);
  const double ey = eta_y(s, j), eyy = eta_yy(s, j);
  d.y = we * ey;
  d.yy = wee * ey * ey + we * eyy;
  d.xiy = wxe * ey;
  return d;
}

struct NodeEval {
  double m = 0, lxi = 0, ly = 0;
  bool degenerate = false;
};

NodeEval eval_node(const EquivariantSurface& s, int i, int j, double w, const WJet& d) {
  const BaseNode& b = s.base[s.idx(i, j)];
  const QuadraticCone& c = s.cone;
  const V3 T{b.Tx, b.Th, 0}, N{-b.Th, b.Tx, 0}, P{b.Px, b.Ph, 0};
  const double c1 = b.S - w * b.k;
  const V3 V1 = c1 * T;
  const V3 V2 = (-w * b.dk) * T + (b.k * c1) * N;
  const V3 Ns = (-b.k) * T;
  const V3 Bsy = b.S_y * T;
  const V3 By = b.S_y * P + V3{0, 0, 1};
  const V3 Byy = b.S_yy * P;

  const V3 Xxi = b.s_xi * V1 + d.xi * N;
  const V3 Xy = b.s_y * V1 + By + d.y * N;
  const V3 Xxixi = (b.s_xi * b.s_xi) * V2 + (2 * d.xi * b.s_xi) * Ns + b.s_xixi * V1 + d.xixi * N;
  const V3 Xxiy = (b.s_xi * b.s_y) * V2 + b.s_xi * Bsy + (d.y * b.s_xi) * Ns + (d.xi * b.s_y) * Ns +
                  b.s_xiy * V1 + d.xiy * N;
  const V3 Xyy = (b.s_y * b.s_y) * V2 + (2 * b.s_y) * Bsy + (2 * d.y * b.s_y) * Ns + b.s_yy * V1 +
                 Byy + d.yy * N;

  V3 nu = cross(Xy, Xxi);
  const double nn = std::sqrt(dot(nu, nu));
  nu = (1.0 / nn) * nu;
  const double E = dot(Xxi, Xxi), F = dot(Xxi, Xy), G = dot(Xy, Xy);
  const double L = dot(Xxixi, nu), M = dot(Xxiy, nu), Nn = dot(Xyy, nu);
  const double H = (E * Nn - 2 * F * M + G * L) / (E * G - F * F);

  const double x = b.S * b.Px + w * N.x;
  const double h = b.S * b.Ph + w * N.h;
  NodeEval out;
  out.lxi = std::sqrt(E);
  out.ly = std::sqrt(G);
  double term;
  if (b.axis) {
    out.degenerate = true;
    double u, v, nu_u, nu_v;
    frame_to_uv(c, x, h, u, v);
    frame_to_uv(c, nu.x, nu.h, nu_u, nu_v);
    const double LE = L / E;
    if (s.sides[j] == Side::plus) {
      term = c.p * LE - c.q * nu_v / v;
    } else {
      term = c.q * LE - c.p * nu_u / u;
    }
  } else {
    term = pq_term(c, x, h, nu.x, nu.h);
  }
  out.m = H + term;
  return out;
}

struct GridEval {
  std::vector<double> m, lxi, ly;
  std::vector<char> degenerate;
};

GridEval eval_grid(const EquivariantSurface& s, const std::vector<double>& w, bool parallel) {
  GridEval g;
  const std::size_t N = static_cast<std::size_t>(s.nx) * s.ny;
  g.m.resize(N);
  g.lxi.resize(N);
  g.ly.resize(N);
  g.degenerate.assign(N, 0);
  auto row = [&](int j) {
    for (int i = 0; i < s.nx; ++i) {
      const std::size_t k = s.idx(i, j);
      WJet d;
      if (!s.w_jet.empty()) {
        const auto& a = s.w_jet[k];
        d = {a[0], a[1], a[2], a[3], a[4]};
      } else {
        d = fd_jet(s, w, i, j);
      }
      const NodeEval e = eval_node(s, i, j, w[k], d);
      g.m[k] = e.m;
      g.lxi[k] = e.lxi;
      g.ly[k] = e.ly;
      g.degenerate[k] = e.degenerate;
    }
  };
  if (parallel) {
#pragma omp parallel for schedule(static) num_threads(kernel_threads())
    for (int j = 0; j < s.ny; ++j) row(j);
  } else {
    for (int j = 0; j < s.ny; ++j) row(j);
  }
  return g;
}

// Slice data shared by all nodes of a slice.
struct SliceMap {
  double S = 0, S_y = 0, S_yy = 0;
  double K = 0, K_y = 0, K_yy = 0, sig_lo = 0, sig_c = 0;
  Side side = Side::plus;
  bool ray = false;
};

// Slice data at height y; j selects the stored slice of a family surface.
SliceMap slice_map_at(const EquivariantSurface& s, double y, int j) {
  SliceMap m;
  const double g1 = s.cone.gamma + 1.0;
  m.sig_c = s.params.sigma_c;
  if (s.kind == SurfaceKind::family) {
    const auto& tj = s.slice_t[j];
    const double t = tj[0], r1 = tj[1] / t, r2 = tj[2] / t;
    m.side = t > 0 ? Side::plus : Side::minus;
    m.S = std::pow(std::abs(t), 1.0 / g1);
    m.S_y = m.S * r1 / g1;
    m.S_yy = m.S * ((1.0 / g1) * (1.0 / g1 - 1.0) * r1 * r1 + r2 / g1);
    m.sig_lo = 0.0;
    m.K = std::asinh(s.sigma_hi / m.sig_c);
  } else if (s.kind == SurfaceKind::glued) {
    const double a = s.a_exp;
    const double t = s.base_coef * std::pow(y, s.params.l);
    m.side = t > 0 ? Side::plus : Side::minus;
    m.S = std::pow(std::abs(s.base_coef), 1.0 / g1) * std::pow(std::abs(y), a);
    m.S_y = a * m.S / y;
    m.S_yy = a * (a - 1.0) * m.S / (y * y);
    const double rm2 = s.rho_max * s.rho_max;
    const double gg = std::sqrt(rm2 - y * y);
    const double g_y = -y / gg, g_yy = -rm2 / (gg * gg * gg);
    const double Hs = 1.0 / m.S;
    const double H_y = -m.S_y / (m.S * m.S);
    const double H_yy = -m.S_yy / (m.S * m.S) + 2.0 * m.S_y * m.S_y / (m.S * m.S * m.S);
    const double D = gg * Hs;
    const double D_y = g_y * Hs + gg * H_y;
    const double D_yy = g_yy * Hs + 2 * g_y * H_y + gg * H_yy;
    const double Q = std::sqrt(m.sig_c * m.sig_c + D * D);
    m.K = std::asinh(D / m.sig_c);
    m.K_y = D_y / Q;
    m.K_yy = D_yy / Q - D * D_y * D_y / (Q * Q * Q);
  } else {
    m.ray = s.t_cyl == 0.0;
    m.side = s.t_cyl >= 0 ? Side::plus : Side::minus;
    m.S = m.ray ? 1.0 : s.table->scale_of(s.t_cyl);
    m.sig_lo = s.sigma_lo;
    m.K = std::asinh((s.sigma_hi - s.sigma_lo) / m.sig_c);
  }
  return m;
}

SliceMap slice_map(const EquivariantSurface& s, int j) { return slice_map_at(s, s.ys[j], j); }

// Graph height of u_l: value and derivatives.
void ujac_jet(const std::vector<MonomialTerm>& terms, double gamma, double x, double y, GraphJet& J) {
  for (const auto& t : terms) {
    const double e = 2.0 * t.k - gamma;
    const int m = t.l;
    const double re = t.coef * std::pow(x, e);
    const double ym = m == 0 ? 1.0 : std::pow(y, m);
    const double ym1 = m >= 1 ? (m == 1 ? 1.0 : std::pow(y, m - 1)) : 0.0;
    const double ym2 = m >= 2 ? (m == 2 ? 1.0 : std::pow(y, m - 2)) : 0.0;
    J.G += re * ym;
    J.Gx += e * re / x * ym;
    J.Gxx += e * (e - 1.0) * re / (x * x) * ym;
    J.Gy += re * m * ym1;
    J.Gyy += re * m * (m - 1.0) * ym2;
    J.Gxy += e * re / x * m * ym1;
  }
}

}  // namespace

int kernel_threads() {
  int t = omp_get_max_threads();
  if (const char* e = std::getenv("CYLCONE_THREADS")) {
    const int v = std::atoi(e);
    if (v > 0) t = std::min(t, v);
  }
  return std::max(1, t);
}

WeightedNormSpec default_weights(const QuadraticCone& cone, int l) {
  const double g = cone.gamma;
  const double a = l / (1.0 + g);
  WeightedNormSpec w;
  w.delta = (l - g) + 0.05;
  double eps = 0.05;
  if (a > 1.0) eps = std::min(eps, 0.5 * (w.delta - (l - g)) / (a - 1.0));
  w.tau = -g - eps;
  validate_weights(cone, l, w);
  return w;
}

void validate_weights(const QuadraticCone& cone, int l, const WeightedNormSpec& spec) {
  const double g = cone.gamma;
  if (!(spec.delta > l - g)) throw Error(ErrorKind::InvalidArgument, "delta must exceed l - gamma");
  if (!(spec.tau <= -g && spec.tau > -g - 0.5)) {
    throw Error(ErrorKind::InvalidArgument, "tau must lie in (-gamma - 0.5, -gamma]");
  }
  if (spec.order < 0 || spec.order > 2) throw Error(ErrorKind::InvalidArgument, "order must be 0, 1 or 2");
  if (!(spec.holder > 0 && spec.holder <= 1)) throw Error(ErrorKind::InvalidArgument, "holder exponent in (0,1]");
  const GrowthRateTable table = invariant_growth_rates(cone, spec.delta + 2.0);
  for (double d : table.degrees) {
    if (std::abs(d - spec.delta) < 1e-6) {
      throw Error(ErrorKind::InvalidArgument, "delta is an indicial degree");
    }
  }
}

std::array<double, 3> cutoff(double z) {
  auto psi = [](double t, double& d1, double& d2) {
    if (t <= 1e-3) {
      d1 = d2 = 0.0;
      return 0.0;
    }
    const double e = std::exp(-1.0 / t);
    const double t2 = t * t;
    d1 = e / t2;
    d2 = e * (1.0 / (t2 * t2) - 2.0 / (t2 * t));
    return e;
  };
  if (z <= 1.0) return {1.0, 0.0, 0.0};
  if (z >= 2.0) return {0.0, 0.0, 0.0};
  double a1, a2, b1, b2;
  const double a = psi(2.0 - z, a1, a2);
  const double b = psi(z - 1.0, b1, b2);
  const double da = -a1, dda = a2, db = b1, ddb = b2;
  const double D = a + b, Dp = da + db;
  const double Nm = da * b - a * db;
  const double Np = dda * b - a * ddb;
  return {a / D, Nm / (D * D), Np / (D * D) - 2.0 * Nm * Dp / (D * D * D)};
}

bool EquivariantSurface::has_axis() const {
  return !(kind == SurfaceKind::cylinder && (t_cyl == 0.0 || sigma_lo > 0.0));
}

std::array<double, 2> EquivariantSurface::frame_point(int i, int j) const {
  const BaseNode& b = base[idx(i, j)];
  const double ww = w[idx(i, j)];
  return {b.S * b.Px - ww * b.Th, b.S * b.Ph + ww * b.Tx};
}

std::array<double, 3> EquivariantSurface::position(int i, int j) const {
  const auto f = frame_point(i, j);
  double u, v;
  frame_to_uv(cone, f[0], f[1], u, v);
  if (base[idx(i, j)].axis) {
    if (sides[j] == Side::plus) {
      u = 0.0;
    } else {
      v = 0.0;
    }
  }
  return {std::max(u, 0.0), std::max(v, 0.0), ys[j]};
}

double EquivariantSurface::r_of(int i, int j) const {
  const auto f = frame_point(i, j);
  return std::hypot(f[0], f[1]);
}

double EquivariantSurface::rho_of(int i, int j) const { return std::hypot(r_of(i, j), ys[j]); }

double EquivariantSurface::local_scale(int i, int j) const { return r_of(i, j); }

bool EquivariantSurface::dirichlet(int i, int j) const {
  return i == nx - 1 || j == 0 || j == ny - 1 || (i == 0 && !has_axis());
}

double CurvatureField::sup_interior() const {
  double m = 0.0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (interior[k]) m = std::max(m, std::abs(values[k]));
  }
  return m;
}

void rebuild_base(EquivariantSurface& s) {
  const std::size_t N = static_cast<std::size_t>(s.nx) * s.ny;
  s.base.assign(N, BaseNode{});
  s.sides.assign(s.ny, Side::plus);
  s.etas.resize(s.ny);
  for (int j = 0; j < s.ny; ++j) {
    s.etas[j] = s.log_y ? std::log(std::abs(s.ys[j])) : s.ys[j];
  }
  for (int j = 0; j < s.ny; ++j) {
    const SliceMap sm = slice_map(s, j);
    s.sides[j] = sm.side;
    const bool mirrored = !sm.ray && sm.side == Side::minus && s.cone.p == s.cone.q;
    const LeafProfile* leaf = sm.ray ? nullptr : &s.table->leaf(mirrored ? Side::plus : sm.side);
    const double sig_end = sm.sig_lo + sm.sig_c * std::sinh(sm.K);
    if (leaf && sig_end > leaf->s_max() * (1 + 1e-12)) {
      throw Error(ErrorKind::InvalidArgument,
                  "slice needs leaf arclength " + std::to_string(sig_end) +
                      " but the foliation table ends at " + std::to_string(leaf->s_max()) +
                      "; rebuild it with a larger s_max");
    }
    for (int i = 0; i < s.nx; ++i) {
      BaseNode& b = s.base[s.idx(i, j)];
      const double xi = static_cast<double>(i) / (s.nx - 1);
      const double sh = std::sinh(xi * sm.K), ch = std::cosh(xi * sm.K);
      const double sc = sm.sig_c;
      b.sigma = sm.sig_lo + sc * sh;
      b.s_xi = sc * sm.K * ch;
      b.s_xixi = sc * sm.K * sm.K * sh;
      b.s_y = sc * xi * sm.K_y * ch;
      b.s_yy = sc * (xi * sm.K_yy * ch + xi * xi * sm.K_y * sm.K_y * sh);
      b.s_xiy = sc * (sm.K_y * ch + xi * sm.K * sm.K_y * sh);
      b.S = sm.S;
      b.S_y = sm.S_y;
      b.S_yy = sm.S_yy;
      if (!leaf) {
        b.Px = b.sigma;
        b.Ph = 0.0;
        b.Tx = 1.0;
        b.Th = 0.0;
        b.k = b.dk = 0.0;
        b.R = b.sigma;
        b.axis = false;
        continue;
      }
      const LeafPoint pt = leaf->at(b.sigma);
      b.Px = pt.R * std::cos(pt.psi);
      b.Ph = pt.R * std::sin(pt.psi);
      b.Tx = std::cos(pt.psi + pt.w);
      b.Th = std::sin(pt.psi + pt.w);
      b.k = pt.dtheta;
      b.dk = pt.ddtheta;
      b.R = pt.R;
      b.axis = b.sigma == 0.0;
      if (b.axis) b.dk = 0.0;
      if (mirrored) {
        b.Ph = -b.Ph;
        b.Th = -b.Th;
        b.k = -b.k;
        b.dk = -b.dk;
      }
    }
  }
}

namespace {

// Leaf-family mean curvature for S(y) P(sigma), free of the leaf's own cancellation.
double family_mean_curvature(const BaseNode& b) {
  const double a = b.Px * b.Tx + b.Ph * b.Th;
  const double bn = -b.Px * b.Th + b.Ph * b.Tx;
  const double W = std::sqrt(1.0 + b.S_y * b.S_y * bn * bn);
  return (b.S_yy * bn + b.k * b.S_y * b.S_y * a * a / b.S) / (W * W * W);
}

void attach_reference(EquivariantSurface& s) {
  const GridEval g = eval_grid(s, s.w_ref, true);
  s.m_shift.resize(g.m.size());
  for (std::size_t k = 0; k < g.m.size(); ++k) s.m_shift[k] = s.m_ref[k] - g.m[k];
}

}  // namespace

GraphJet glued_height(const EquivariantSurface& X, double x, double y) {
  const QuadraticCone& c = X.cone;
  const double ay = std::abs(y);
  const double yb = std::pow(ay, X.params.beta);
  const double z = x / yb;
  GraphJet u;
  ujac_jet(X.ujac, c.gamma, x, y, u);
  const auto ch = cutoff(z);
  if (ch[0] == 0.0) {
    u.chi = 0.0;
    return u;
  }
  const double a = X.a_exp;
  const double S = std::pow(std::abs(X.base_coef), 1.0 / (c.gamma + 1.0)) * std::pow(ay, a);
  const double S_y = a * S / y, S_yy = a * (a - 1.0) * S / (y * y);
  const double t = X.base_coef * std::pow(y, X.params.l);
  const bool mirrored = t < 0 && c.p == c.q;
  const LeafProfile& leaf = X.table->leaf(t > 0 || mirrored ? Side::plus : Side::minus);
  const double zeta = x / S;
  const LeafPoint pt = leaf.at(leaf.s_at_foot(zeta));
  const double ang = pt.psi + pt.w;
  const double ca = std::cos(ang);
  const double sg = mirrored ? -1.0 : 1.0;
  const double h1 = sg * pt.R * std::sin(pt.psi);
  const double h1p = sg * std::tan(ang);
  const double h1pp = sg * pt.dtheta / (ca * ca * ca);
  GraphJet f;
  f.G = S * h1;
  f.Gx = h1p;
  f.Gxx = h1pp / S;
  f.Gy = S_y * (h1 - zeta * h1p);
  f.Gxy = -h1pp * zeta * S_y / S;
  f.Gyy = S_yy * (h1 - zeta * h1p) + S_y * S_y * zeta * zeta * h1pp / S;
  if (ch[0] == 1.0) {
    f.chi = 1.0;
    return f;
  }
  const double beta = X.params.beta;
  const double zx = 1.0 / yb, zy = -beta * z / y;
  const double zxy = -beta / (y * yb), zyy = beta * (beta + 1.0) * z / (y * y);
  const double cx = ch[1] * zx, cy = ch[1] * zy;
  const double cxx = ch[2] * zx * zx, cxy = ch[2] * zx * zy + ch[1] * zxy;
  const double cyy = ch[2] * zy * zy + ch[1] * zyy;
  const double D = f.G - u.G, Dx = f.Gx - u.Gx, Dy = f.Gy - u.Gy;
  const double Dxx = f.Gxx - u.Gxx, Dxy = f.Gxy - u.Gxy, Dyy = f.Gyy - u.Gyy;
  const double chi = ch[0];
  GraphJet G;
  G.chi = chi;
  G.G = u.G + chi * D;
  G.Gx = u.Gx + cx * D + chi * Dx;
  G.Gy = u.Gy + cy * D + chi * Dy;
  G.Gxx = u.Gxx + cxx * D + 2 * cx * Dx + chi * Dxx;
  G.Gyy = u.Gyy + cyy * D + 2 * cy * Dy + chi * Dyy;
  G.Gxy = u.Gxy + cxy * D + cx * Dy + cy * Dx + chi * Dxy;
  return G;
}

double graph_mean_curvature(const QuadraticCone& cone, double x, const GraphJet& g) {
  const double W2 = 1.0 + g.Gx * g.Gx + g.Gy * g.Gy;
  const double W = std::sqrt(W2);
  const double H = ((1 + g.Gx * g.Gx) * g.Gyy - 2 * g.Gx * g.Gy * g.Gxy + (1 + g.Gy * g.Gy) * g.Gxx) /
                   (W2 * W);
  const double t = cone.tan_alpha;
  const double gg = g.G / x;
  const double pq = (cone.n - 2.0) / x * (t * (g.Gx + gg) + (1.0 - t * t) * g.Gx * gg) /
                    ((1.0 - t * gg) * (t + gg)) / W;
  return H + pq;
}

EquivariantSurface build_X(std::shared_ptr<const FoliationTable> table, const GlueParams& params) {
  if (!table) throw Error(ErrorKind::InvalidArgument, "missing foliation table");
  const QuadraticCone& c = table->cone();
  const double a = params.l / (1.0 + c.gamma);
  if (params.l < 1) throw Error(ErrorKind::InvalidArgument, "l must be positive");
  if (!(params.beta > 1.0 && params.beta < a)) {
    throw Error(ErrorKind::BadBeta, "beta must lie in (1, " + std::to_string(a) + ")");
  }
  if (!(params.A > 0)) throw Error(ErrorKind::InvalidArgument, "A must be positive");
  if (params.nx < 8 || params.ny < 5) throw Error(ErrorKind::InvalidArgument, "grid too small");
  if (!(params.decades > 0) || !(params.y_hi_frac > 0 && params.y_hi_frac < 1)) {
    throw Error(ErrorKind::InvalidArgument, "bad y range");
  }
  EquivariantSurface s;
  s.cone = c;
  s.table = std::move(table);
  s.kind = SurfaceKind::glued;
  s.params = params;
  s.weights = default_weights(c, params.l);
  s.a_exp = a;
  s.base_coef = 1.0;
  s.rho_max = 1.0 / params.A;
  s.nx = params.nx;
  s.ny = params.ny;
  s.log_y = true;
  s.ujac = ujacobi_coeffs(c, params.l).terms;
  const double lo = std::log(s.rho_max * std::pow(10.0, -params.decades));
  const double hi = std::log(params.y_hi_frac * s.rho_max);
  s.ys.resize(s.ny);
  for (int j = 0; j < s.ny; ++j) {
    const double y = std::exp(lo + (hi - lo) * j / (s.ny - 1));
    s.ys[j] = params.negative_y ? -y : y;
  }
  rebuild_base(s);

  const std::size_t N = static_cast<std::size_t>(s.nx) * s.ny;
  s.w.assign(N, 0.0);
  s.m_ref.assign(N, 0.0);
  double overflow = 0.0;
  int over_i = -1, over_j = -1;
  // Graph condition at the base feet, before any offset is solved for.
  for (int j = 0; j < s.ny; ++j) {
    const double yb = std::pow(std::abs(s.ys[j]), params.beta);
    for (int i = 0; i < s.nx; ++i) {
      const BaseNode& b = s.base[s.idx(i, j)];
      const double xb = b.S * b.Px;
      if (xb <= yb) continue;
      const double ratio = std::abs(glued_height(s, xb, s.ys[j]).G) / xb;
      if (ratio > overflow) {
        overflow = ratio;
        over_i = i;
        over_j = j;
      }
    }
  }
  if (overflow > 0.2) {
    throw Error(ErrorKind::RegionOverflow,
                "graph of the glued height leaves 0.2 r of the cone at node (" +
                    std::to_string(over_i) + "," + std::to_string(over_j) + "), ratio " +
                    std::to_string(overflow) + "; increase A");
  }
  overflow = 0.0;
  for (int j = 0; j < s.ny; ++j) {
    const double y = s.ys[j];
    const double yb = std::pow(std::abs(y), params.beta);
    for (int i = 0; i < s.nx; ++i) {
      const std::size_t k = s.idx(i, j);
      const BaseNode& b = s.base[k];
      const double xb = b.S * b.Px, hb = b.S * b.Ph;
      if (xb <= yb) {
        s.w[k] = 0.0;
        s.m_ref[k] = family_mean_curvature(b);
        continue;
      }
      const double Nx = -b.Th, Nh = b.Tx;
      double w = 0.0;
      bool ok = false;
      for (int it = 0; it < 60; ++it) {
        const GraphJet J = glued_height(s, xb + w * Nx, y);
        const double F = hb + w * Nh - J.G;
        const double dF = Nh - J.Gx * Nx;
        const double dw = -F / dF;
        w += dw;
        if (std::abs(dw) <= 1e-15 * (std::abs(hb) + std::abs(w)) + 1e-300) {
          ok = true;
          break;
        }
      }
      if (!ok) {
        throw Error(ErrorKind::NoConvergence,
                    "offset of X not found at node (" + std::to_string(i) + "," + std::to_string(j) + ")");
      }
      s.w[k] = w;
      const double x = xb + w * Nx;
      const GraphJet J = glued_height(s, x, y);
      s.m_ref[k] = graph_mean_curvature(c, x, J);
      const double ratio = std::abs(J.G) / x;
      if (ratio > overflow) {
        overflow = ratio;
        over_i = i;
        over_j = j;
      }
    }
  }
  if (overflow > 0.2) {
    throw Error(ErrorKind::RegionOverflow,
                "graph of the glued height leaves 0.2 r of the cone at node (" +
                    std::to_string(over_i) + "," + std::to_string(over_j) + "), ratio " +
                    std::to_string(overflow) + "; increase A");
  }
  s.w_ref = s.w;
  attach_reference(s);
  return s;
}

EquivariantSurface build_cylinder(std::shared_ptr<const FoliationTable> table, double t,
                                  double y_lo, double y_hi, double r_hi, int nx, int ny,
                                  double r_lo) {
  if (!table) throw Error(ErrorKind::InvalidArgument, "missing foliation table");
  if (nx < 8 || ny < 5) throw Error(ErrorKind::InvalidArgument, "grid too small");
  if (!(y_hi > y_lo)) throw Error(ErrorKind::InvalidArgument, "empty y range");
  EquivariantSurface s;
  s.cone = table->cone();
  s.table = std::move(table);
  s.kind = SurfaceKind::cylinder;
  s.weights = {};
  s.t_cyl = t;
  s.nx = nx;
  s.ny = ny;
  s.log_y = false;
  s.rho_max = std::hypot(r_hi, std::max(std::abs(y_lo), std::abs(y_hi)));
  if (t == 0.0) {
    if (!(r_lo > 0 && r_hi > r_lo)) throw Error(ErrorKind::InvalidArgument, "cone cylinder needs 0 < r_lo < r_hi");
    s.sigma_lo = r_lo;
    s.sigma_hi = r_hi;
    s.params.sigma_c = r_lo;
  } else {
    const double S = s.table->scale_of(t);
    s.sigma_lo = 0.0;
    s.sigma_hi = r_hi / S;
    s.params.sigma_c = 0.25;
  }
  s.ys.resize(ny);
  for (int j = 0; j < ny; ++j) s.ys[j] = y_lo + (y_hi - y_lo) * j / (ny - 1);
  rebuild_base(s);
  s.w.assign(static_cast<std::size_t>(nx) * ny, 0.0);
  return s;
}

EquivariantSurface build_leaf_family(std::shared_ptr<const FoliationTable> table,
                                     std::vector<double> ys,
                                     std::vector<std::array<double, 3>> t_jets, double sigma_hi,
                                     int nx) {
  if (!table) throw Error(ErrorKind::InvalidArgument, "missing foliation table");
  const int ny = static_cast<int>(ys.size());
  if (nx < 8 || ny < 5) throw Error(ErrorKind::InvalidArgument, "grid too small");
  if (t_jets.size() != ys.size()) throw Error(ErrorKind::InvalidArgument, "one t jet per slice");
  for (int j = 1; j < ny; ++j) {
    const double h0 = ys[1] - ys[0], h = ys[j] - ys[j - 1];
    if (!(h > 0) || std::abs(h - h0) > 1e-9 * std::abs(h0)) {
      throw Error(ErrorKind::InvalidArgument, "family slices must be uniformly spaced in y");
    }
  }
  for (const auto& t : t_jets) {
    if (!(t[0] != 0.0) || !std::isfinite(t[0])) {
      throw Error(ErrorKind::InvalidArgument, "family slices need t != 0");
    }
  }
  if (!(sigma_hi > 0)) throw Error(ErrorKind::InvalidArgument, "sigma_hi must be positive");
  EquivariantSurface s;
  s.cone = table->cone();
  s.table = std::move(table);
  s.kind = SurfaceKind::family;
  s.nx = nx;
  s.ny = ny;
  s.log_y = false;
  s.ys = std::move(ys);
  s.slice_t = std::move(t_jets);
  s.sigma_lo = 0.0;
  s.sigma_hi = sigma_hi;
  s.params.sigma_c = 0.25;
  rebuild_base(s);
  const std::size_t N = static_cast<std::size_t>(nx) * ny;
  s.w.assign(N, 0.0);
  s.w_ref = s.w;
  s.m_ref.resize(N);
  double rmax = 0.0;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      s.m_ref[s.idx(i, j)] = family_mean_curvature(s.base[s.idx(i, j)]);
    }
    rmax = std::max(rmax, std::hypot(s.r_of(nx - 1, j), s.ys[j]));
  }
  s.rho_max = rmax;
  attach_reference(s);
  return s;
}

SurfaceProjection project_to_surface(const EquivariantSurface& s, double u, double v, double y) {
  SurfaceProjection out;
  if (s.kind == SurfaceKind::family) {
    throw Error(ErrorKind::InvalidArgument, "projection onto leaf families is not supported");
  }
  const QuadraticCone& c = s.cone;
  const double x = u * c.link_a + v * c.link_b;
  const double h = v * c.link_a - u * c.link_b;
  out.r = std::hypot(u, v);
  double eta;
  if (s.log_y) {
    if (y == 0.0 || (y > 0) != (s.ys.front() > 0)) return out;
    eta = std::log(std::abs(y));
  } else {
    eta = y;
  }
  const double e0 = std::min(s.etas.front(), s.etas.back());
  const double e1 = std::max(s.etas.front(), s.etas.back());
  const double etol = 1e-12 * (1.0 + e1 - e0);
  if (eta < e0 - etol || eta > e1 + etol) return out;
  eta = std::clamp(eta, e0, e1);
  const bool up = s.etas.back() > s.etas.front();
  int j = 0;
  while (j + 2 < s.ny && (up ? s.etas[j + 1] <= eta : s.etas[j + 1] >= eta)) ++j;
  const double fy = std::clamp((eta - s.etas[j]) / (s.etas[j + 1] - s.etas[j]), 0.0, 1.0);

  const SliceMap sm = slice_map_at(s, y, j);
  double sigma, delta;
  if (sm.ray) {
    sigma = x;
    delta = h;
  } else {
    const bool mirrored = sm.side == Side::minus && c.p == c.q;
    const LeafProfile& leaf = s.table->leaf(mirrored ? Side::plus : sm.side);
    const double qx = x / sm.S, qh = (mirrored ? -h : h) / sm.S;
    sigma = std::clamp(leaf.s_at_foot(qx), 0.0, leaf.s_max());
    double dn = 0.0;
    bool ok = false;
    for (int it = 0; it < 60; ++it) {
      const LeafPoint pt = leaf.at(sigma);
      const double Px = pt.R * std::cos(pt.psi), Ph = pt.R * std::sin(pt.psi);
      const double Tx = std::cos(pt.psi + pt.w), Th = std::sin(pt.psi + pt.w);
      const double dx = qx - Px, dh = qh - Ph;
      const double g = dx * Tx + dh * Th;
      dn = -dx * Th + dh * Tx;
      const double dg = -1.0 + pt.dtheta * dn;
      if (!(dg < -0.25)) return out;
      double step = -g / dg;
      if (sigma + step < 0.0) step = -sigma;
      sigma += step;
      if (std::abs(step) <= 1e-14 * (1.0 + sigma)) {
        ok = true;
        break;
      }
    }
    if (!ok || sigma > leaf.s_max()) return out;
    delta = (mirrored ? -dn : dn) * sm.S;
    if (sigma == 0.0 && std::abs(qx) > 1e-9 * (1.0 + std::abs(qh))) return out;
  }
  if (sigma < sm.sig_lo) return out;
  const double xi = std::asinh((sigma - sm.sig_lo) / sm.sig_c) / sm.K;
  if (xi > 1.0 + 1e-12) return out;
  const double fi = std::min(xi, 1.0) * (s.nx - 1);
  const int i = std::min(static_cast<int>(fi), s.nx - 2);
  const double fx = fi - i;
  auto W = [&](int a, int b) { return s.w[s.idx(a, b)]; };
  const double w = (1 - fy) * ((1 - fx) * W(i, j) + fx * W(i + 1, j)) +
                   fy * ((1 - fx) * W(i, j + 1) + fx * W(i + 1, j + 1));
  out.ok = true;
  out.sigma = sigma;
  out.offset = delta - w;
  return out;
}

std::vector<double> discrete_mean_curvature(const EquivariantSurface& surface,
                                            const std::vector<double>& w,
                                            std::vector<char>* degenerate) {
  GridEval g = eval_grid(surface, w, true);
  if (degenerate) *degenerate = std::move(g.degenerate);
  return g.m;
}

std::vector<double> discrete_mean_curvature_serial(const EquivariantSurface& surface,
                                                   const std::vector<double>& w) {
  return eval_grid(surface, w, false).m;
}

CurvatureField mean_curvature(const EquivariantSurface& s) {
  GridEval g = eval_grid(s, s.w, true);
  CurvatureField f;
  f.nx = s.nx;
  f.ny = s.ny;
  if (!s.m_ref.empty() && s.w == s.w_ref) {
    f.values = s.m_ref;
  } else {
    f.values = g.m;
    if (!s.m_shift.empty()) {
      for (std::size_t k = 0; k < f.values.size(); ++k) f.values[k] += s.m_shift[k];
    }
  }
  f.degenerate = g.degenerate;
  f.interior.assign(f.values.size(), 0);
  f.gradient_proxy.assign(f.values.size(), 0.0);
  const double hx = 1.0 / (s.nx - 1);
  const double he = s.etas[1] - s.etas[0];
  for (int j = 0; j < s.ny; ++j) {
    for (int i = 0; i < s.nx; ++i) {
      const std::size_t k = s.idx(i, j);
      f.interior[k] = !s.dirichlet(i, j);
      double mx, my, d2;
      stencil([&](int m) { return f.values[s.idx(m, j)]; }, i, s.nx, hx, s.has_axis(), mx, d2);
      stencil([&](int m) { return f.values[s.idx(i, m)]; }, j, s.ny, he, false, my, d2);
      my *= eta_y(s, j);
      const double gx = mx / g.lxi[k], gy = my / g.ly[k];
      f.gradient_proxy[k] = std::sqrt(gx * gx + gy * gy);
    }
  }
  return f;
}

CurvatureField mean_curvature_positions(const QuadraticCone& cone,
                                        const std::vector<std::array<double, 3>>& pts, int nx,
                                        int ny) {
  if (static_cast<std::size_t>(nx) * ny != pts.size() || nx < 3 || ny < 3) {
    throw Error(ErrorKind::InvalidArgument, "point grid does not match its dimensions");
  }
  CurvatureField f;
  f.nx = nx;
  f.ny = ny;
  const std::size_t N = pts.size();
  f.values.assign(N, std::numeric_limits<double>::quiet_NaN());
  f.gradient_proxy.assign(N, 0.0);
  f.degenerate.assign(N, 0);
  f.interior.assign(N, 0);
  auto P = [&](int i, int j) {
    const auto& a = pts[static_cast<std::size_t>(i) + static_cast<std::size_t>(nx) * j];
    return V3{a[0], a[1], a[2]};
  };
  for (int j = 1; j + 1 < ny; ++j) {
    for (int i = 1; i + 1 < nx; ++i) {
      const V3 c = P(i, j);
      const V3 Xi = 0.5 * (P(i + 1, j) + (-1.0) * P(i - 1, j));
      const V3 Xj = 0.5 * (P(i, j + 1) + (-1.0) * P(i, j - 1));
      const V3 Xii = P(i + 1, j) + (-2.0) * c + P(i - 1, j);
      const V3 Xjj = P(i, j + 1) + (-2.0) * c + P(i, j - 1);
      const V3 Xij = 0.25 * (P(i + 1, j + 1) + (-1.0) * P(i + 1, j - 1) + (-1.0) * P(i - 1, j + 1) +
                             P(i - 1, j - 1));
      V3 nu = cross(Xj, Xi);
      nu = (1.0 / std::sqrt(dot(nu, nu))) * nu;
      const double E = dot(Xi, Xi), F = dot(Xi, Xj), G = dot(Xj, Xj);
      const double L = dot(Xii, nu), M = dot(Xij, nu), Nn = dot(Xjj, nu);
      const double H = (E * Nn - 2 * F * M + G * L) / (E * G - F * F);
      const std::size_t k = static_cast<std::size_t>(i) + static_cast<std::size_t>(nx) * j;
      f.values[k] = H - cone.p * nu.x / c.x - cone.q * nu.h / c.h;
      f.interior[k] = 1;
    }
  }
  return f;
}

CertificateReport weighted_certificate(const CurvatureField& field,
                                       const EquivariantSurface& surface,
                                       const WeightedNormSpec& spec, double kappa, double A) {
  CertificateReport rep;
  rep.bound = std::pow(A, -kappa);
  std::map<std::pair<int, int>, double> boxes;
  for (int j = 0; j < surface.ny; ++j) {
    for (int i = 0; i < surface.nx; ++i) {
      const std::size_t k = surface.idx(i, j);
      if (!field.interior[k] || !std::isfinite(field.values[k])) continue;
      const double r = surface.r_of(i, j), rho = surface.rho_of(i, j);
      const double term = (std::abs(field.values[k]) + r * field.gradient_proxy[k]) *
                          std::pow(rho, spec.tau - spec.delta) * std::pow(r, 2.0 - spec.tau);
      const std::pair<int, int> key{static_cast<int>(std::floor(std::log2(r))),
                                    static_cast<int>(std::floor(std::log2(rho)))};
      auto it = boxes.find(key);
      if (it == boxes.end()) {
        boxes.emplace(key, term);
      } else {
        it->second = std::max(it->second, term);
      }
    }
  }
  rep.pass = true;
  for (const auto& [key, sup] : boxes) {
    BoxReport b;
    b.kr = key.first;
    b.ks = key.second;
    b.sup_term = sup;
    b.bound = rep.bound;
    b.pass = sup <= rep.bound;
    rep.pass = rep.pass && b.pass;
    if (rep.boxes.empty() || sup > rep.sup) {
      rep.sup = sup;
      rep.worst_kr = b.kr;
      rep.worst_ks = b.ks;
    }
    rep.boxes.push_back(b);
  }
  return rep;
}

std::vector<std::pair<int, int>> newton_unknowns(const EquivariantSurface& s) {
  std::vector<std::pair<int, int>> out;
  for (int j = 0; j < s.ny; ++j) {
    for (int i = 0; i < s.nx; ++i) {
      if (!s.dirichlet(i, j)) out.emplace_back(i, j);
    }
  }
  return out;
}

namespace {

std::vector<double> full_residual(const EquivariantSurface& s, const std::vector<double>& w) {
  std::vector<double> m = eval_grid(s, w, true).m;
  if (!s.m_shift.empty()) {
    for (std::size_t k = 0; k < m.size(); ++k) m[k] += s.m_shift[k];
  }
  return m;
}

double sup_at(const EquivariantSurface& s, const std::vector<double>& m) {
  double r = 0.0;
  for (int j = 0; j < s.ny; ++j) {
    for (int i = 0; i < s.nx; ++i) {
      if (!s.dirichlet(i, j)) r = std::max(r, std::abs(m[s.idx(i, j)]));
    }
  }
  return r;
}

struct Layout {
  int i0 = 0, ncols = 0;
  int index(int i, int j) const { return (i - i0) + ncols * (j - 1); }
};

Layout layout_of(const EquivariantSurface& s) {
  Layout L;
  L.i0 = s.has_axis() ? 0 : 1;
  L.ncols = s.nx - 1 - L.i0;
  return L;
}

}  // namespace

std::vector<double> newton_residual(const EquivariantSurface& s, const std::vector<double>& w) {
  const std::vector<double> m = full_residual(s, w);
  std::vector<double> out;
  for (const auto& [i, j] : newton_unknowns(s)) out.push_back(m[s.idx(i, j)]);
  return out;
}

BandedJacobian assemble_jacobian(const EquivariantSurface& s, const std::vector<double>& w,
                                 double fd_step) {
  const Layout lay = layout_of(s);
  BandedJacobian J;
  J.n = lay.ncols * (s.ny - 2);
  J.kl = J.ku = lay.ncols + 1;
  const int ldab = 2 * J.kl + J.ku + 1;
  J.ab.assign(static_cast<std::size_t>(ldab) * J.n, 0.0);
  for (int j = 1; j + 1 < s.ny; ++j) {
    for (int i = lay.i0; i < s.nx - 1; ++i) {
      J.rows_i.push_back(i);
      J.rows_j.push_back(j);
    }
  }
  for (int ci = 0; ci < 3; ++ci) {
    for (int cj = 0; cj < 3; ++cj) {
      std::vector<double> wp = w, wm = w;
      std::vector<std::pair<int, int>> cols;
      for (int j = 1; j + 1 < s.ny; ++j) {
        if (j % 3 != cj) continue;
        for (int i = lay.i0; i < s.nx - 1; ++i) {
          if (i % 3 != ci) continue;
          const double d = fd_step * s.local_scale(i, j);
          wp[s.idx(i, j)] += d;
          wm[s.idx(i, j)] -= d;
          cols.emplace_back(i, j);
        }
      }
      if (cols.empty()) continue;
      const std::vector<double> mp = eval_grid(s, wp, true).m;
      const std::vector<double> mm = eval_grid(s, wm, true).m;
      for (const auto& [i, j] : cols) {
        const double d = wp[s.idx(i, j)] - w[s.idx(i, j)];
        const double dm = w[s.idx(i, j)] - wm[s.idx(i, j)];
        const int col = lay.index(i, j);
        for (int dj = -1; dj <= 1; ++dj) {
          for (int di = -1; di <= 1; ++di) {
            const int ri = i + di, rj = j + dj;
            if (ri < lay.i0 || ri > s.nx - 2 || rj < 1 || rj > s.ny - 2) continue;
            const int row = lay.index(ri, rj);
            const std::size_t k = s.idx(ri, rj);
            J.ab[static_cast<std::size_t>(J.kl + J.ku + row - col) + static_cast<std::size_t>(col) * ldab] =
                (mp[k] - mm[k]) / (d + dm);
          }
        }
      }
    }
  }
  return J;
}

std::vector<double> band_multiply(const BandedJacobian& J, const std::vector<double>& x) {
  const int ldab = 2 * J.kl + J.ku + 1;
  std::vector<double> y(J.n, 0.0);
  for (int c = 0; c < J.n; ++c) {
    for (int r = std::max(0, c - J.ku); r <= std::min(J.n - 1, c + J.kl); ++r) {
      y[r] += J.ab[static_cast<std::size_t>(J.kl + J.ku + r - c) + static_cast<std::size_t>(c) * ldab] * x[c];
    }
  }
  return y;
}

namespace {

// Boundary data directions r^{-gamma} P_m(|y|) carried by the leaf variation,
// P_m Chebyshev of degree m < l on [0, max|y|].
std::vector<std::vector<double>> low_mode_data(const EquivariantSurface& s) {
  std::vector<std::vector<double>> out;
  if (s.kind != SurfaceKind::glued) return out;
  const double g = s.cone.gamma;
  double ymax = 0.0;
  for (double y : s.ys) ymax = std::max(ymax, std::abs(y));
  for (int m = 0; m < s.params.l; ++m) {
    std::vector<double> d(s.w.size(), 0.0);
    double mx = 0.0;
    for (int j = 1; j < s.ny; ++j) {
      for (int i = 0; i < s.nx; ++i) {
        if (!s.dirichlet(i, j)) continue;
        const BaseNode& b = s.base[s.idx(i, j)];
        const double sup = b.Ph * b.Tx - b.Px * b.Th;
        const double cheb = std::cos(m * std::acos(2.0 * std::abs(s.ys[j]) / ymax - 1.0));
        const double v = cheb * sup * std::pow(b.S, -g) / (1.0 + g);
        d[s.idx(i, j)] = v;
        mx = std::max(mx, std::abs(v) / s.local_scale(i, j));
      }
    }
    if (mx == 0.0) continue;
    for (double& v : d) v /= mx;
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace

EquivariantSurface newton_solve_T(const EquivariantSurface& X, const WeightedNormSpec& spec,
                                  const NewtonOptions& opt, NewtonReport* report) {
  if (!X.w_jet.empty()) throw Error(ErrorKind::InvalidArgument, "surface with analytic offsets cannot be solved");
  EquivariantSurface T = X;
  T.weights = spec;
  const Layout lay = layout_of(T);
  const std::vector<std::vector<double>> modes = low_mode_data(T);
  const int K = static_cast<int>(modes.size());
  NewtonReport rep;
  std::vector<double> m = full_residual(T, T.w);
  double res = sup_at(T, m);
  const double initial = res;
  rep.residuals.push_back(res);
  double inv_r = 0.0;
  std::vector<double> scale2;
  for (int j = 1; j + 1 < T.ny; ++j) {
    for (int i = lay.i0; i < T.nx - 1; ++i) {
      const double r = T.local_scale(i, j);
      inv_r = std::max(inv_r, 1.0 / r);
      scale2.push_back(r * r);
    }
  }
  const double noise = 64.0 * std::numeric_limits<double>::epsilon() * inv_r;
  int increases = 0;
  for (int it = 1; it <= opt.max_iter; ++it) {
    BandedJacobian J = assemble_jacobian(T, T.w, opt.fd_step);
    const int ldab = 2 * J.kl + J.ku + 1;
    for (int c = 0; c < J.n; ++c) {
      for (int r = std::max(0, c - J.ku); r <= std::min(J.n - 1, c + J.kl); ++r) {
        J.ab[static_cast<std::size_t>(J.kl + J.ku + r - c) + static_cast<std::size_t>(c) * ldab] *=
            scale2[r] * std::sqrt(scale2[c]);
      }
    }
    const int nrhs = 1 + K;
    std::vector<double> rhs(static_cast<std::size_t>(J.n) * nrhs);
    for (int r = 0; r < J.n; ++r) rhs[r] = -m[T.idx(J.rows_i[r], J.rows_j[r])] * scale2[r];
    for (int k = 0; k < K; ++k) {
      std::vector<double> wp = T.w;
      for (std::size_t q = 0; q < wp.size(); ++q) wp[q] += opt.fd_step * modes[k][q];
      const std::vector<double> mp = full_residual(T, wp);
      for (int r = 0; r < J.n; ++r) {
        const std::size_t q = T.idx(J.rows_i[r], J.rows_j[r]);
        rhs[static_cast<std::size_t>(k + 1) * J.n + r] = -(mp[q] - m[q]) / opt.fd_step * scale2[r];
      }
    }
    std::vector<int> ipiv(J.n);
    int info = 0;
    dgbsv_(&J.n, &J.kl, &J.ku, &nrhs, J.ab.data(), &ldab, ipiv.data(), rhs.data(), &J.n, &info);
    if (info > 0) {
      throw Error(ErrorKind::SingularJacobian,
                  "zero pivot at node (" + std::to_string(J.rows_i[info - 1]) + "," +
                      std::to_string(J.rows_j[info - 1]) + ")");
    }
    if (info < 0) throw Error(ErrorKind::InvalidArgument, "dgbsv rejected its arguments");
    for (int k = 0; k < nrhs; ++k) {
      for (int r = 0; r < J.n; ++r) rhs[static_cast<std::size_t>(k) * J.n + r] *= std::sqrt(scale2[r]);
    }
    std::vector<double> step(rhs.begin(), rhs.begin() + J.n);
    Eigen::VectorXd coef = Eigen::VectorXd::Zero(K);
    if (K > 0) {
      Eigen::MatrixXd Z(J.n, K);
      Eigen::VectorXd b(J.n);
      for (int r = 0; r < J.n; ++r) {
        const double wr = 1.0 / T.local_scale(J.rows_i[r], J.rows_j[r]);
        b(r) = -step[r] * wr;
        for (int k = 0; k < K; ++k) Z(r, k) = rhs[static_cast<std::size_t>(k + 1) * J.n + r] * wr;
      }
      Eigen::VectorXd cn = Z.colwise().norm().transpose();
      for (int k = 0; k < K; ++k) Z.col(k) /= cn(k);
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(Z, Eigen::ComputeThinU | Eigen::ComputeThinV);
      const Eigen::VectorXd& sv = svd.singularValues();
      for (int q = 0; q < K && sv(q) > 1e-12 * sv(0); ++q) {
        coef += svd.matrixV().col(q) * (svd.matrixU().col(q).dot(b) / sv(q));
      }
      coef = coef.cwiseQuotient(cn);
      for (int r = 0; r < J.n; ++r) {
        for (int k = 0; k < K; ++k) step[r] += coef(k) * rhs[static_cast<std::size_t>(k + 1) * J.n + r];
      }
    }
    auto take = [&](double lam) {
      std::vector<double> out = T.w;
      for (int k = 0; k < K; ++k) {
        for (std::size_t q = 0; q < out.size(); ++q) out[q] += lam * coef(k) * modes[k][q];
      }
      for (int r = 0; r < J.n; ++r) out[T.idx(J.rows_i[r], J.rows_j[r])] = T.w[T.idx(J.rows_i[r], J.rows_j[r])] + lam * step[r];
      return out;
    };
    double lam = 1.0;
    bool accepted = false;
    std::vector<double> trial;
    std::vector<double> mt;
    double rt = 0.0;
    for (int bt = 0; bt <= opt.max_backtrack; ++bt, lam *= 0.5) {
      trial = take(lam);
      mt = full_residual(T, trial);
      rt = sup_at(T, mt);
      if (rt < res || rt <= noise) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      trial = take(1.0);
      mt = full_residual(T, trial);
      rt = sup_at(T, mt);
      if (++increases >= 2) {
        throw Error(ErrorKind::NewtonDiverged,
                    "residual increased twice in a row (" + std::to_string(rt) + ")");
      }
    } else {
      increases = 0;
    }
    T.w = std::move(trial);
    m = std::move(mt);
    res = rt;
    rep.residuals.push_back(res);
    rep.accepted.push_back(accepted ? 1 : 0);
    rep.iterations = it;
    if (res <= opt.reduction * initial || res <= noise) {
      rep.converged = true;
      break;
    }
  }
  for (std::size_t k = 0; k < T.w.size(); ++k) {
    rep.max_change = std::max(rep.max_change, std::abs(T.w[k] - X.w[k]));
  }
  if (report) *report = rep;
  return T;
}

QuadraticCheck quadratic_remainder_check(const EquivariantSurface& X, int samples,
                                         std::uint64_t seed, double fd_step) {
  if (samples < 3) throw Error(ErrorKind::InvalidArgument, "need at least 3 samples");
  const BandedJacobian J = assemble_jacobian(X, X.w, fd_step);
  const std::vector<double> m0 = full_residual(X, X.w);
  SeededStream rng(seed);
  QuadraticCheck out;
  std::vector<double> lx, ly;
  for (int k = 0; k < samples; ++k) {
    const double eps = std::pow(10.0, -2.0 - 2.0 * k / (samples - 1));
    const int k1 = rng.integer(1, 3), k2 = rng.integer(1, 3);
    const double p1 = rng.uniform(0, 2 * std::numbers::pi), p2 = rng.uniform(0, 2 * std::numbers::pi);
    std::vector<double> d(J.n);
    std::vector<double> w = X.w;
    double size = 0.0;
    for (int r = 0; r < J.n; ++r) {
      const int i = J.rows_i[r], j = J.rows_j[r];
      const double xi = static_cast<double>(i) / (X.nx - 1);
      const double et = static_cast<double>(j) / (X.ny - 1);
      const double rr = X.local_scale(i, j);
      d[r] = eps * rr * std::sin(2 * std::numbers::pi * k1 * xi + p1) *
             std::cos(2 * std::numbers::pi * k2 * et + p2);
      w[X.idx(i, j)] += d[r];
      size = std::max(size, std::abs(d[r]) / rr);
    }
    const std::vector<double> m1 = full_residual(X, w);
    const std::vector<double> Jd = band_multiply(J, d);
    double rem = 0.0;
    for (int r = 0; r < J.n; ++r) {
      const std::size_t kk = X.idx(J.rows_i[r], J.rows_j[r]);
      rem = std::max(rem, X.local_scale(J.rows_i[r], J.rows_j[r]) * std::abs(m1[kk] - m0[kk] - Jd[r]));
    }
    out.sizes.push_back(size);
    out.remainders.push_back(rem);
    lx.push_back(std::log(size));
    ly.push_back(std::log(rem));
  }
  out.exponent = num::fit_slope(lx, ly);
  return out;
}

SliceGraph graph_over_leaf(const EquivariantSurface& T, double y0) {
  if (y0 == 0.0) {
    throw Error(ErrorKind::InvalidArgument, "the y = 0 slice is not part of the grid");
  }
  int j = 0;
  for (int k = 1; k < T.ny; ++k) {
    if (std::abs(T.ys[k] - y0) < std::abs(T.ys[j] - y0)) j = k;
  }
  const double ylo = std::min(T.ys.front(), T.ys.back()), yhi = std::max(T.ys.front(), T.ys.back());
  const double tol = 1e-12 * std::max(std::abs(ylo), std::abs(yhi));
  if (y0 < ylo - tol || y0 > yhi + tol) throw Error(ErrorKind::InvalidArgument, "y0 outside the grid");
  const QuadraticCone& c = T.cone;
  SliceGraph g;
  g.j = j;
  g.y0 = T.ys[j];
  const int l = T.params.l;
  g.bound_exponent = l - c.gamma;
  g.slice_exponent = 2 * (l / 2) - c.gamma;
  for (int i = 0; i < T.nx; ++i) {
    const BaseNode& b = T.base[T.idx(i, j)];
    const double f = T.w[T.idx(i, j)];
    if (std::abs(f * b.k) >= b.S) {
      throw Error(ErrorKind::NotGraphical,
                  "offset exceeds the focal distance at node " + std::to_string(i));
    }
    if (i + 1 < T.nx) {
      const auto p0 = T.frame_point(i, j), p1 = T.frame_point(i + 1, j);
      if ((p1[0] - p0[0]) * b.Tx + (p1[1] - p0[1]) * b.Th <= 0) {
        throw Error(ErrorKind::NotGraphical, "normal projection folds at node " + std::to_string(i));
      }
    }
    g.r.push_back(T.r_of(i, j));
    g.rho.push_back(T.rho_of(i, j));
    g.f.push_back(f);
  }
  g.C1 = std::numeric_limits<double>::infinity();
  for (int kk = 1; kk <= 50; ++kk) {
    const double kappa = 0.02 * kk;
    double C = 0.0;
    for (std::size_t i = 0; i < g.f.size(); ++i) {
      C = std::max(C, std::abs(g.f[i]) /
                          (std::pow(g.rho[i], l - kappa) * std::pow(g.r[i], kappa - c.gamma)));
    }
    g.kappas.push_back(kappa);
    g.C1s.push_back(C);
    if (C < g.C1) {
      g.C1 = C;
      g.kappa = kappa;
    }
  }
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < g.f.size(); ++i) {
    if (g.r[i] > std::abs(g.y0) && g.f[i] != 0.0) {
      lx.push_back(std::log(g.r[i]));
      ly.push_back(std::log(std::abs(g.f[i])));
    }
  }
  g.far_exponent = lx.size() >= 2 ? num::fit_slope(lx, ly) : std::numeric_limits<double>::quiet_NaN();
  return g;
}

double diagonal_growth_exponent(const EquivariantSurface& T, double ratio) {
  std::vector<double> lx, ly;
  for (int j = 0; j < T.ny; ++j) {
    const double target = ratio * std::abs(T.ys[j]);
    for (int i = 0; i + 1 < T.nx; ++i) {
      const double r0 = T.r_of(i, j), r1 = T.r_of(i + 1, j);
      const double f0 = std::abs(T.w[T.idx(i, j)]), f1 = std::abs(T.w[T.idx(i + 1, j)]);
      if (r0 <= target && target < r1 && f0 > 0 && f1 > 0) {
        const double t = std::log(target / r0) / std::log(r1 / r0);
        lx.push_back(std::log(target));
        ly.push_back((1 - t) * std::log(f0) + t * std::log(f1));
        break;
      }
    }
  }
  if (lx.size() < 3) throw Error(ErrorKind::InvalidArgument, "ratio leaves too few slices");
  return num::fit_slope(lx, ly);
}

EquivariantSurface scale_T(const EquivariantSurface& T, double lam) {
  if (lam == 0.0 || !std::isfinite(lam)) throw Error(ErrorKind::InvalidArgument, "lam must be nonzero");
  const double g = T.cone.gamma;
  const int l = T.params.l;
  const double mu = std::pow(std::abs(lam), 1.0 / (1.0 - (l - g)));
  const double sg = lam > 0 ? 1.0 : -1.0;
  if (lam < 0 && l % 2 == 0) {
    throw Error(ErrorKind::InvalidArgument, "the negative branch is a reflection only for odd l");
  }
  if (T.kind == SurfaceKind::family) throw Error(ErrorKind::InvalidArgument, "scale_T needs a glued or cylinder surface");
  EquivariantSurface s = T;
  for (double& y : s.ys) y *= sg * mu;
  s.rho_max *= mu;
  if (s.kind == SurfaceKind::glued) {
    s.base_coef *= lam;
  } else if (s.t_cyl == 0.0) {
    s.sigma_lo *= mu;
    s.sigma_hi *= mu;
    s.params.sigma_c *= mu;
  } else {
    s.t_cyl *= std::pow(mu, g + 1.0);
  }
  rebuild_base(s);
  for (double& x : s.w) x *= mu;
  for (double& x : s.w_ref) x *= mu;
  for (double& x : s.m_ref) x /= mu;
  for (auto& a : s.w_jet) {
    a[0] *= mu;
    a[1] *= mu;
    a[2] *= sg;
    a[3] /= mu;
    a[4] *= sg;
  }
  if (!s.m_ref.empty()) attach_reference(s);
  return s;
}

NormComparison norm_comparison_check(const EquivariantSurface& s, const std::vector<double>& w,
                                     const WeightedNormSpec& spec, double A) {
  NormComparison out;
  out.kappa = s.a_exp * (spec.tau - 1.0) + spec.delta - spec.tau;
  const GridEval geo = eval_grid(s, s.w, false);
  std::map<std::pair<int, int>, double> boxes;
  for (int j = 0; j < s.ny; ++j) {
    for (int i = 0; i < s.nx; ++i) {
      const std::size_t k = s.idx(i, j);
      const double r = s.r_of(i, j), rho = s.rho_of(i, j);
      double n = std::abs(w[k]);
      if (spec.order >= 1) {
        const WJet d = fd_jet(s, w, i, j);
        const double lx = geo.lxi[k], ly = geo.ly[k];
        n += r * std::hypot(d.xi / lx, d.y / ly);
        if (spec.order >= 2) {
          n += r * r * (std::abs(d.xixi) / (lx * lx) + std::abs(d.yy) / (ly * ly) +
                        2 * std::abs(d.xiy) / (lx * ly));
        }
      }
      const std::pair<int, int> key{static_cast<int>(std::floor(std::log2(r))),
                                    static_cast<int>(std::floor(std::log2(rho)))};
      auto it = boxes.find(key);
      if (it == boxes.end()) {
        boxes.emplace(key, n);
      } else {
        it->second = std::max(it->second, n);
      }
    }
  }
  for (const auto& [key, n] : boxes) {
    const double R = std::ldexp(1.0, key.first), S = std::ldexp(1.0, key.second);
    out.norm_11 = std::max(out.norm_11, n / R);
    out.norm_dt = std::max(out.norm_dt, n * std::pow(R, -spec.tau) * std::pow(S, spec.tau - spec.delta));
    out.box_max = std::max(out.box_max, std::pow(R, spec.tau - 1.0) * std::pow(S, spec.delta - spec.tau));
  }
  out.C = out.norm_dt > 0 ? out.norm_11 / out.norm_dt * std::pow(A, out.kappa) : 0.0;
  return out;
}

void write_surface_csv(std::ostream& os, const EquivariantSurface& s) {
  os << "i,j,u,v,y,w\n";
  char buf[192];
  for (int j = 0; j < s.ny; ++j) {
    for (int i = 0; i < s.nx; ++i) {
      const auto p = s.position(i, j);
      std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g,%.17g\n", i, j, p[0], p[1], p[2],
                    s.w[s.idx(i, j)]);
      os << buf;
    }
  }
}

nlohmann::json surface_sidecar(const EquivariantSurface& s) {
  nlohmann::json j;
  j["p"] = s.cone.p;
  j["q"] = s.cone.q;
  j["l"] = s.params.l;
  j["beta"] = s.params.beta;
  j["A"] = s.params.A;
  j["delta"] = s.weights.delta;
  j["tau"] = s.weights.tau;
  j["grid"] = {s.nx, s.ny};
  j["kind"] = s.kind == SurfaceKind::glued ? "glued"
              : s.kind == SurfaceKind::family ? "family"
                                              : "cylinder";
  j["base_coef"] = s.base_coef;
  j["rho_max"] = s.rho_max;
  return j;
}

void write_certificate_csv(std::ostream& os, const CertificateReport& rep) {
  os << "R,S,sup_term,bound,pass\n";
  char buf[192];
  for (const auto& b : rep.boxes) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%d\n", std::ldexp(1.0, b.kr),
                  std::ldexp(1.0, b.ks), b.sup_term, b.bound, b.pass ? 1 : 0);
    os << buf;
  }
}

}  // namespace cylcone
