#include "cylcone/continuation_lab.hpp"

#include "cylcone/errors.hpp"
#include "cylcone/numerics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>

namespace cylcone {

std::string to_string(VarifoldSource s) {
  switch (s) {
    case VarifoldSource::exact_surface: return "exact-surface";
    case VarifoldSource::synthetic_graph: return "synthetic-graph";
    case VarifoldSource::perturbed: return "perturbed";
  }
  return "synthetic-graph";
}

VarifoldSource varifold_source_from_string(const std::string& s) {
  if (s == "exact-surface") return VarifoldSource::exact_surface;
  if (s == "synthetic-graph") return VarifoldSource::synthetic_graph;
  if (s == "perturbed") return VarifoldSource::perturbed;
  throw Error(ErrorKind::Schema, "unknown varifold source '" + s + "'");
}

void SampledVarifold::validate() const {
  if (points.size() != weights.size()) {
    throw Error(ErrorKind::InvalidArgument, "one weight per point");
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (!(weights[i] > 0) || !std::isfinite(weights[i])) {
      throw Error(ErrorKind::InvalidArgument, "weight " + std::to_string(i) + " is not positive");
    }
    if (!(p[0] >= 0 && p[1] >= 0)) {
      throw Error(ErrorKind::InvalidArgument, "point " + std::to_string(i) + " leaves the quadrant");
    }
    const double rho = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    if (rho > rho_max * (1 + 1e-12)) {
      throw Error(ErrorKind::InvalidArgument, "point " + std::to_string(i) + " outside B_rho_max");
    }
  }
}

bool Region::contains(double u, double v, double y) const {
  const double r = std::hypot(u, v);
  const double rho = std::hypot(r, y);
  return rho >= rho_lo && rho <= rho_hi && r >= r_lo && r <= r_hi && std::abs(y) <= y_abs_hi;
}

SampledVarifold scale_varifold(const SampledVarifold& M, double lambda) {
  if (!(lambda > 0)) throw Error(ErrorKind::InvalidArgument, "scale must be positive");
  SampledVarifold out = M;
  const double wf = std::pow(lambda, M.cone.n);
  for (auto& p : out.points) {
    for (double& c : p) c *= lambda;
  }
  for (double& w : out.weights) w *= wf;
  out.rho_max *= lambda;
  return out;
}

namespace {

double point_leaf_param(const FoliationTable& table, const std::array<double, 3>& p) {
  if (p[0] == 0.0 && p[1] == 0.0) return 0.0;
  return table.leaf_parameter(p[0], p[1]);
}

// Per-point kernels fill an array; reductions run serially in index order so
// results do not depend on the thread count.
template <class F>
std::vector<double> per_point(std::size_t n, bool parallel, F&& f) {
  std::vector<double> out(n);
  const long N = static_cast<long>(n);
  if (parallel) {
#pragma omp parallel for schedule(static) num_threads(kernel_threads())
    for (long i = 0; i < N; ++i) out[i] = f(static_cast<std::size_t>(i));
  } else {
    for (long i = 0; i < N; ++i) out[i] = f(static_cast<std::size_t>(i));
  }
  return out;
}

double dist_to_cone_impl(const SampledVarifold& M, const FoliationTable& table, const Region& U,
                         bool parallel) {
  const auto v = per_point(M.size(), parallel, [&](std::size_t i) {
    const auto& p = M.points[i];
    if (!U.contains(p[0], p[1], p[2])) return 0.0;
    return std::abs(point_leaf_param(table, p));
  });
  double m = 0.0;
  for (double x : v) m = std::max(m, x);
  return m;
}

double l2_impl(const SampledVarifold& M, double rho, bool parallel) {
  const auto v = per_point(M.size(), parallel, [&](std::size_t i) {
    const auto& p = M.points[i];
    if (p[0] * p[0] + p[1] * p[1] + p[2] * p[2] > rho * rho) return 0.0;
    const double d = cone_distance(M.cone, p[0], p[1]);
    return d * d * M.weights[i];
  });
  double s = 0.0;
  for (double x : v) s += x;
  return std::sqrt(s);
}

std::size_t count_in_ball(const SampledVarifold& M, double rho) {
  std::size_t c = 0;
  for (const auto& p : M.points) {
    if (p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= rho * rho) ++c;
  }
  return c;
}

void frame_to_uv(const QuadraticCone& c, double x, double h, double& u, double& v) {
  u = x * c.link_a - h * c.link_b;
  v = x * c.link_b + h * c.link_a;
}

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

double dist_to_cone(const SampledVarifold& M, const FoliationTable& table, const Region& U) {
  return dist_to_cone_impl(M, table, U, true);
}

double dist_to_cone_serial(const SampledVarifold& M, const FoliationTable& table,
                           const Region& U) {
  return dist_to_cone_impl(M, table, U, false);
}

double l2_distance(const SampledVarifold& M, double rho) { return l2_impl(M, rho, true); }

double l2_distance_serial(const SampledVarifold& M, double rho) { return l2_impl(M, rho, false); }

double d_regularized(const SampledVarifold& M, const FoliationTable& table, double rho,
                     double q_reg) {
  if (!(q_reg > 0 && q_reg < 0.5)) throw Error(ErrorKind::InvalidArgument, "q_reg must lie in (0, 1/2)");
  if (!(rho > 0)) throw Error(ErrorKind::InvalidArgument, "rho must be positive");
  const QuadraticCone& c = M.cone;
  const double l2 = std::pow(rho, -(1.0 + 0.5 * c.n)) * l2_distance(M, rho);
  const double D = std::pow(rho, -(c.gamma + 1.0)) * dist_to_cone(M, table, Region::ball(rho));
  return l2 + std::pow(D, 1.0 + q_reg * q_reg);
}

double quasi_monotonicity_constant(const QuadraticCone& cone, double q_reg) {
  return std::max(std::pow(2.0, 1.0 + 0.5 * cone.n),
                  std::pow(2.0, (cone.gamma + 1.0) * (1.0 + q_reg * q_reg)));
}

DoublingReport doubling_sequence(const SampledVarifold& M, const FoliationTable& table,
                                 double lambda, int K, double q_reg, const DoublingOptions& opt) {
  if (!(lambda > 0) || K < 1) throw Error(ErrorKind::InvalidArgument, "need lambda > 0 and K >= 1");
  DoublingReport rep;
  rep.lambda = lambda;
  rep.q_reg = q_reg;
  rep.rho0 = opt.rho0;
  const double inner = opt.rho0 * std::exp(-K * lambda);
  const std::size_t have = count_in_ball(M, inner);
  if (have < static_cast<std::size_t>(opt.min_samples)) {
    throw Error(ErrorKind::ResolutionExceeded,
                "ball of radius " + fmt17(inner) + " holds " + std::to_string(have) +
                    " samples (need " + std::to_string(opt.min_samples) + ")");
  }
  if (opt.rho0 > M.rho_max * (1 + 1e-12)) rep.warning = "rho0 exceeds the declared ball";
  for (int k = 0; k <= K; ++k) {
    const double rho = opt.rho0 * std::exp(-k * lambda);
    rep.rhos.push_back(rho);
    rep.ds.push_back(d_regularized(M, table, rho, q_reg));
  }
  rep.doubling_constant = 0.0;
  for (int k = 0; k < K; ++k) {
    rep.flags.push_back(rep.ds[k + 1] >= 0.5 * rep.ds[k]);
    const double ratio = rep.ds[k + 1] > 0 ? rep.ds[k] / rep.ds[k + 1]
                         : rep.ds[k] > 0   ? std::numeric_limits<double>::infinity()
                                           : 1.0;
    rep.ratios.push_back(ratio);
    rep.doubling_constant = std::max(rep.doubling_constant, ratio);
  }
  std::vector<double> xs, ys;
  for (int k = 0; k <= K; ++k) {
    if (rep.ds[k] > 0) {
      xs.push_back(-k * lambda);
      ys.push_back(std::log(rep.ds[k]));
    }
  }
  if (xs.size() >= 2) {
    rep.log_slope = num::fit_slope(xs, ys);
    rep.degree_fit = rep.log_slope + 1.0;
  } else {
    rep.log_slope = rep.degree_fit = std::numeric_limits<double>::quiet_NaN();
  }
  return rep;
}

// ---- synthetic varifolds ----------------------------------------------------

namespace {

using PosFn = std::function<bool(double r, double y, double& u, double& v)>;

// Samples pos over a log-r polar or box grid; weights from |X_a x X_b| u^p v^q.
SampledVarifold sample_surface(const QuadraticCone& cone, const PosFn& pos,
                               const GraphSampling& g, VarifoldSource source, bool box) {
  if (g.n_rho < 2 || g.n_angle < 2 || !(g.rho_lo > 0 && g.rho_hi > g.rho_lo)) {
    throw Error(ErrorKind::InvalidArgument, "bad graph sampling grid");
  }
  SampledVarifold M;
  M.cone = cone;
  M.source = source;
  const double l0 = std::log(g.rho_lo), l1 = std::log(g.rho_hi);
  const double ds = (l1 - l0) / (g.n_rho - 1);
  const double ylim = std::isfinite(g.y_abs_max) ? g.y_abs_max : 1.0;
  const double a0 = box ? (g.positive_y_only ? 0.0 : -ylim) : (g.positive_y_only ? 0.0 : -0.5 * std::numbers::pi);
  const double a1 = box ? ylim : 0.5 * std::numbers::pi;
  const double da = (a1 - a0) / g.n_angle;
  auto map = [&](double s, double a, double& r, double& y) {
    const double e = std::exp(s);
    if (box) {
      r = e;
      y = a;
    } else {
      r = e * std::cos(a);
      y = e * std::sin(a);
    }
  };
  auto point = [&](double s, double a, std::array<double, 3>& P) {
    double r, y, u, v;
    map(s, a, r, y);
    if (!pos(r, y, u, v)) return false;
    P = {u, v, y};
    return true;
  };
  for (int i = 0; i < g.n_rho; ++i) {
    const double s = l0 + ds * i;
    const double wi = (i == 0 || i == g.n_rho - 1) ? 0.5 : 1.0;
    for (int k = 0; k < g.n_angle; ++k) {
      const double a = a0 + da * (k + 0.5);
      double r, y;
      map(s, a, r, y);
      if (r < g.r_min || std::abs(y) > g.y_abs_max) continue;
      std::array<double, 3> P, Sp, Sm, Ap, Am;
      if (!point(s, a, P)) continue;
      const double hs = 1e-5, ha = 1e-5 * (box ? std::max(1.0, ylim) : 1.0);
      if (!point(s + hs, a, Sp) || !point(s - hs, a, Sm) || !point(s, a + ha, Ap) ||
          !point(s, a - ha, Am)) {
        continue;
      }
      double Xs[3], Xa[3];
      for (int c = 0; c < 3; ++c) {
        Xs[c] = (Sp[c] - Sm[c]) / (2 * hs);
        Xa[c] = (Ap[c] - Am[c]) / (2 * ha);
      }
      const double cx = Xs[1] * Xa[2] - Xs[2] * Xa[1];
      const double cy = Xs[2] * Xa[0] - Xs[0] * Xa[2];
      const double cz = Xs[0] * Xa[1] - Xs[1] * Xa[0];
      const double dA = std::sqrt(cx * cx + cy * cy + cz * cz) * ds * da * wi;
      const double wt = dA * std::pow(P[0], cone.p) * std::pow(P[1], cone.q);
      if (!(wt > 0)) continue;
      M.points.push_back(P);
      M.weights.push_back(wt);
      M.rho_max = std::max(M.rho_max, std::sqrt(P[0] * P[0] + P[1] * P[1] + P[2] * P[2]));
    }
  }
  return M;
}

}  // namespace

SampledVarifold graph_varifold(const QuadraticCone& cone, const GraphFunction& h,
                               const GraphSampling& grid, VarifoldSource source) {
  bool bad = false;
  PosFn pos = [&](double r, double y, double& u, double& v) {
    frame_to_uv(cone, r, h(r, y), u, v);
    if (!(u > 0 && v > 0)) {
      bad = true;
      return false;
    }
    return true;
  };
  SampledVarifold M = sample_surface(cone, pos, grid, source, grid.box);
  if (bad) throw Error(ErrorKind::NotGraphical, "graph leaves the open quadrant");
  return M;
}

SampledVarifold surface_varifold(const EquivariantSurface& s) {
  SampledVarifold M;
  M.cone = s.cone;
  M.source = VarifoldSource::exact_surface;
  std::vector<std::array<double, 3>> P(static_cast<std::size_t>(s.nx) * s.ny);
  for (int j = 0; j < s.ny; ++j) {
    for (int i = 0; i < s.nx; ++i) P[s.idx(i, j)] = s.position(i, j);
  }
  auto diff = [&](int i, int j, int di, int dj) {
    int i0 = i - di, i1 = i + di, j0 = j - dj, j1 = j + dj;
    i0 = std::max(i0, 0);
    j0 = std::max(j0, 0);
    i1 = std::min(i1, s.nx - 1);
    j1 = std::min(j1, s.ny - 1);
    const auto& a = P[s.idx(i1, j1)];
    const auto& b = P[s.idx(i0, j0)];
    const double span = di ? (i1 - i0) : (j1 - j0);
    return std::array<double, 3>{(a[0] - b[0]) / span, (a[1] - b[1]) / span, (a[2] - b[2]) / span};
  };
  for (int j = 0; j < s.ny; ++j) {
    for (int i = 0; i < s.nx; ++i) {
      const auto Xi = diff(i, j, 1, 0), Xj = diff(i, j, 0, 1);
      const double cx = Xi[1] * Xj[2] - Xi[2] * Xj[1];
      const double cy = Xi[2] * Xj[0] - Xi[0] * Xj[2];
      const double cz = Xi[0] * Xj[1] - Xi[1] * Xj[0];
      const double wi = (i == 0 || i == s.nx - 1) ? 0.5 : 1.0;
      const double wj = (j == 0 || j == s.ny - 1) ? 0.5 : 1.0;
      const auto& p = P[s.idx(i, j)];
      const double wt = std::sqrt(cx * cx + cy * cy + cz * cz) * wi * wj *
                        std::pow(p[0], s.cone.p) * std::pow(p[1], s.cone.q);
      if (!(wt > 0)) continue;
      M.points.push_back(p);
      M.weights.push_back(wt);
      M.rho_max = std::max(M.rho_max, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
    }
  }
  return M;
}

SampledVarifold leaf_cylinder_varifold(const FoliationTable& table, double t, double r_hi,
                                       double y_hi, int n_sigma, int n_y) {
  if (!(r_hi > 0 && y_hi > 0) || n_sigma < 4 || n_y < 2) {
    throw Error(ErrorKind::InvalidArgument, "bad leaf cylinder sampling");
  }
  const QuadraticCone& c = table.cone();
  SampledVarifold M;
  M.cone = c;
  M.source = VarifoldSource::exact_surface;
  std::vector<double> us, vs, ls;  // profile points and arclength weights
  if (t == 0.0) {
    const double l0 = std::log(1e-3 * r_hi), l1 = std::log(r_hi);
    const double dl = (l1 - l0) / (n_sigma - 1);
    for (int i = 0; i < n_sigma; ++i) {
      const double r = std::exp(l0 + dl * i);
      us.push_back(r * c.link_a);
      vs.push_back(r * c.link_b);
      ls.push_back(r * dl * ((i == 0 || i == n_sigma - 1) ? 0.5 : 1.0));
    }
  } else {
    const Side side = t > 0 ? Side::plus : Side::minus;
    const LeafProfile& leaf = table.leaf(side);
    const double S = table.scale_of(t);
    const double sig_hi = leaf.s_at_radius(r_hi / S);
    const double sc = 0.25, K = std::asinh(sig_hi / sc);
    for (int i = 1; i < n_sigma; ++i) {
      const double xi = static_cast<double>(i) / (n_sigma - 1);
      const double sig = sc * std::sinh(K * xi);
      const double dsig = sc * K * std::cosh(K * xi) / (n_sigma - 1);
      const LeafPoint pt = leaf.at(sig);
      us.push_back(S * pt.u);
      vs.push_back(S * pt.v);
      ls.push_back(S * dsig * (i == n_sigma - 1 ? 0.5 : 1.0));
    }
  }
  const double dy = 2.0 * y_hi / (n_y - 1);
  for (int j = 0; j < n_y; ++j) {
    const double y = -y_hi + dy * j;
    const double wj = (j == 0 || j == n_y - 1) ? 0.5 : 1.0;
    for (std::size_t i = 0; i < us.size(); ++i) {
      const double wt = ls[i] * dy * wj * std::pow(us[i], c.p) * std::pow(vs[i], c.q);
      if (!(wt > 0)) continue;
      M.points.push_back({us[i], vs[i], y});
      M.weights.push_back(wt);
      M.rho_max = std::max(M.rho_max, std::sqrt(us[i] * us[i] + vs[i] * vs[i] + y * y));
    }
  }
  return M;
}

SampledVarifold leaf_graph_varifold(const FoliationTable& table, const GraphFunction& tau,
                                    const GraphSampling& grid) {
  const QuadraticCone& c = table.cone();
  PosFn pos = [&](double r, double y, double& u, double& v) {
    const double t = tau(r, y);
    if (t == 0.0) {
      u = r * c.link_a;
      v = r * c.link_b;
      return true;
    }
    const Side side = t > 0 ? Side::plus : Side::minus;
    const LeafProfile& leaf = table.leaf(side);
    const double S = table.scale_of(t);
    const LeafSample& a0 = leaf.samples.front();
    const double foot0 = a0.R * std::cos(a0.psi);
    if (r < 2.0 * S * foot0) return false;
    const LeafPoint pt = leaf.at(leaf.s_at_foot(r / S));
    u = S * pt.u;
    v = S * pt.v;
    return u > 0 && v > 0;
  };
  return sample_surface(c, pos, grid, VarifoldSource::synthetic_graph, grid.box);
}

GraphFunction jacobi_leaf_polynomial(const JacobiFieldExpansion& field) {
  const JacobiFieldExpansion mono = field.form == FieldForm::mode ? to_monomial(field) : field;
  std::vector<MonomialTerm> terms = mono.terms;
  return [terms](double r, double y) {
    double s = 0.0;
    for (const auto& t : terms) s += t.coef * std::pow(r, 2 * t.k) * std::pow(y, t.l);
    return s;
  };
}

void write_varifold_csv(std::ostream& os, const SampledVarifold& M) {
  os << "u,v,y,weight\n";
  for (std::size_t i = 0; i < M.size(); ++i) {
    const auto& p = M.points[i];
    os << fmt17(p[0]) << ',' << fmt17(p[1]) << ',' << fmt17(p[2]) << ',' << fmt17(M.weights[i])
       << '\n';
  }
}

nlohmann::json varifold_sidecar(const SampledVarifold& M) {
  nlohmann::json j;
  j["p"] = M.cone.p;
  j["q"] = M.cone.q;
  j["source"] = to_string(M.source);
  j["rho_max"] = M.rho_max;
  j["points"] = M.size();
  return j;
}

SampledVarifold read_varifold_csv(std::istream& is, const nlohmann::json& sidecar) {
  SampledVarifold M;
  try {
    M.cone = make_cone(sidecar.at("p").get<int>(), sidecar.at("q").get<int>());
    M.source = varifold_source_from_string(sidecar.value("source", std::string("synthetic-graph")));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Schema, std::string("varifold sidecar: ") + e.what());
  }
  std::string line;
  if (!std::getline(is, line) || line.rfind("u,v,y,weight", 0) != 0) {
    throw Error(ErrorKind::Schema, "varifold CSV must start with the header u,v,y,weight");
  }
  int row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::array<double, 4> a{};
    for (int c = 0; c < 4; ++c) {
      std::string cell;
      if (!std::getline(ss, cell, ',')) {
        throw Error(ErrorKind::Schema, "row " + std::to_string(row) + ": expected 4 columns");
      }
      try {
        a[c] = std::stod(cell);
      } catch (const std::exception&) {
        throw Error(ErrorKind::Schema, "row " + std::to_string(row) + ": bad number '" + cell + "'");
      }
    }
    M.points.push_back({a[0], a[1], a[2]});
    M.weights.push_back(a[3]);
    M.rho_max = std::max(M.rho_max, std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]));
  }
  if (sidecar.contains("rho_max")) M.rho_max = std::max(M.rho_max, sidecar["rho_max"].get<double>());
  M.validate();
  return M;
}

void write_doubling_csv(std::ostream& os, const DoublingReport& rep) {
  os << "k,rho,d,flag\n";
  for (std::size_t k = 0; k < rep.ds.size(); ++k) {
    os << k << ',' << fmt17(rep.rhos[k]) << ',' << fmt17(rep.ds[k]) << ',';
    if (k < rep.flags.size()) os << (rep.flags[k] ? 1 : 0);
    os << '\n';
  }
}

nlohmann::json doubling_json(const DoublingReport& rep) {
  nlohmann::json j;
  j["lambda"] = rep.lambda;
  j["q_reg"] = rep.q_reg;
  j["rho0"] = rep.rho0;
  j["K"] = static_cast<int>(rep.ds.size()) - 1;
  j["doubling_constant"] = rep.doubling_constant;
  j["log_slope"] = rep.log_slope;
  j["degree_fit"] = rep.degree_fit;
  j["all_zero"] = std::all_of(rep.ds.begin(), rep.ds.end(), [](double d) { return d == 0.0; });
  std::vector<int> flags(rep.flags.begin(), rep.flags.end());
  j["flags"] = flags;
  if (!rep.warning.empty()) j["warning"] = rep.warning;
  return j;
}

// ---- barrier ------------------------------------------------------------------

namespace {

void check_barrier_spec(const QuadraticCone& c, const BarrierSpec& b) {
  if (!(b.eps > 0 && b.eps < 1.0 / b.Q)) throw Error(ErrorKind::InvalidArgument, "need 0 < eps < 1/Q");
  if (!(b.K > b.Q)) throw Error(ErrorKind::InvalidArgument, "need K > Q");
  if (b.p_barrier < 1 || b.p_barrier % 2 == 0) {
    throw Error(ErrorKind::InvalidArgument, "p_barrier must be an odd positive integer");
  }
  if (!(2.0 - c.gamma > -c.gamma)) throw Error(ErrorKind::InvalidArgument, "bad cone");
  if (!(b.y_hi > b.y_lo) || b.ny < 5 || b.nx < 8 || !(b.reach >= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "bad barrier grid");
  }
}

struct BarrierPair {
  BarrierFunction low, one;
};

}  // namespace

std::vector<double> barrier_slice_offsets(const FoliationTable& table, const BarrierSpec& spec,
                                          double f_value, const std::vector<double>& radii) {
  const QuadraticCone& c = table.cone();
  check_barrier_spec(c, spec);
  const double g = c.gamma, a = 2.0 - g;
  const int p = spec.p_barrier;
  const double coef =
      std::pow(spec.K, spec.Q) * spec.eps * std::pow(std::abs(f_value), g * p / (g + 1.0));
  std::vector<double> out;
  out.reserve(radii.size());
  if (f_value == 0.0) {
    for (double r : radii) out.push_back(-coef * std::pow(r, a) - spec.eps * r);
    return out;
  }
  const double t = spec.eps * std::pow(f_value, p);
  const Side side = t > 0 ? Side::plus : Side::minus;
  const bool mirrored = side == Side::minus && c.p == c.q;
  const LeafProfile& leaf = table.leaf(mirrored ? Side::plus : side);
  const BarrierFunction Flow = build_Fa(c, leaf, a, BarrierVariant::subsolution);
  const BarrierFunction Fone = build_Fa(c, leaf, 1.0, BarrierVariant::subsolution);
  const double S = table.scale_of(t);
  for (double r : radii) {
    if (r / S > leaf.at(leaf.s_max()).R) {
      // far field of both barrier functions is R^a
      out.push_back(-coef * std::pow(r, a) - spec.eps * r);
      continue;
    }
    const double sig = leaf.s_at_radius(std::max(r / S, leaf.axis_radius()));
    out.push_back(-coef * std::pow(S, a) * Flow.value_at(leaf, sig) -
                  spec.eps * S * Fone.value_at(leaf, sig));
  }
  return out;
}

BarrierSurfaceX build_barrier_Xeps(std::shared_ptr<const FoliationTable> table,
                                   const BarrierSpec& spec, bool check) {
  if (!table) throw Error(ErrorKind::InvalidArgument, "missing foliation table");
  const QuadraticCone& c = table->cone();
  check_barrier_spec(c, spec);
  const double g = c.gamma, g1 = g + 1.0, a = 2.0 - g;
  const int p = spec.p_barrier;
  BarrierSurfaceX X;
  X.spec = spec;
  X.a_low = a;
  X.test_radius = std::pow(spec.K, -spec.Q);

  std::vector<double> ys(spec.ny);
  std::vector<std::array<double, 3>> jets(spec.ny);
  std::vector<double> fv(spec.ny);
  double Smin = std::numeric_limits<double>::infinity();
  for (int j = 0; j < spec.ny; ++j) {
    ys[j] = spec.y_lo + (spec.y_hi - spec.y_lo) * j / (spec.ny - 1);
    const auto f = spec.f(ys[j]);
    if (!(f[0] != 0.0)) throw Error(ErrorKind::InvalidArgument, "f vanishes on a slice");
    fv[j] = f[0];
    const double fp1 = std::pow(f[0], p - 1);
    jets[j] = {spec.eps * fp1 * f[0], spec.eps * p * fp1 * f[1],
               spec.eps * p * ((p - 1) * std::pow(f[0], p - 2) * f[1] * f[1] + fp1 * f[2])};
    Smin = std::min(Smin, table->scale_of(jets[j][0]));
  }
  double sig_hi = 0.0;
  for (Side sd : {Side::plus, Side::minus}) {
    const LeafProfile& leaf = table->leaf(sd);
    const double R = spec.reach * X.test_radius / Smin;
    if (R > leaf.at(leaf.s_max()).R) {
      throw Error(ErrorKind::OutOfTable, "barrier slices need the unit leaf out to radius " + fmt17(R));
    }
    sig_hi = std::max(sig_hi, leaf.s_at_radius(R));
  }
  X.surface = build_leaf_family(table, ys, jets, sig_hi, spec.nx);
  EquivariantSurface& s = X.surface;

  BarrierPair plus{build_Fa(c, table->leaf(Side::plus), a, BarrierVariant::subsolution),
                   build_Fa(c, table->leaf(Side::plus), 1.0, BarrierVariant::subsolution)};
  BarrierPair minus = plus;
  if (c.p != c.q) {
    minus = {build_Fa(c, table->leaf(Side::minus), a, BarrierVariant::subsolution),
             build_Fa(c, table->leaf(Side::minus), 1.0, BarrierVariant::subsolution)};
  }
  X.F_low_method = plus.low.method;
  X.F_one_method = plus.one.method;

  const std::size_t N = static_cast<std::size_t>(s.nx) * s.ny;
  X.m_linear.assign(N, 0.0);
  X.leaf_param.assign(N, 0.0);
  X.tested.assign(N, 0);
  const double KQ = std::pow(spec.K, spec.Q);
  for (int j = 0; j < s.ny; ++j) {
    const double t = jets[j][0];
    const bool minus_side = s.sides[j] == Side::minus;
    const bool mirrored = minus_side && c.p == c.q;
    const LeafProfile& leaf = table->leaf(minus_side && !mirrored ? Side::minus : Side::plus);
    const BarrierPair& F = minus_side && !mirrored ? minus : plus;
    const double coef = KQ * spec.eps * std::pow(std::abs(fv[j]), g * p / g1);
    for (int i = 0; i < s.nx; ++i) {
      const std::size_t k = s.idx(i, j);
      const BaseNode& b = s.base[k];
      const double S = b.S;
      const double w = -coef * std::pow(S, a) * F.low.value_at(leaf, b.sigma) -
                       spec.eps * S * F.one.value_at(leaf, b.sigma);
      s.w[k] = w;
      X.m_linear[k] = -coef * std::pow(S, a - 2.0) * F.low.jacobi_at(leaf, b.sigma) -
                      spec.eps / S * F.one.jacobi_at(leaf, b.sigma);
      const double bn = -b.Px * b.Th + b.Ph * b.Tx;
      X.leaf_param[k] = t + w * g1 * t / (S * bn);
    }
  }
  const CurvatureField field = mean_curvature(s);
  X.m = field.values;

  X.negativity_certificate = -std::numeric_limits<double>::infinity();
  X.sandwich_margin = std::numeric_limits<double>::infinity();
  for (int j = 0; j < s.ny; ++j) {
    const double t = jets[j][0];
    for (int i = 0; i < s.nx; ++i) {
      const std::size_t k = s.idx(i, j);
      const double margin = spec.eps - std::abs(X.leaf_param[k] - t);
      if (margin < X.sandwich_margin) {
        X.sandwich_margin = margin;
        X.sandwich_slice = j;
      }
      if (s.r_of(i, j) >= X.test_radius) continue;
      X.tested[k] = 1;
      ++X.tested_count;
      if (X.m[k] < 0) ++X.negative_count;
      if (X.m[k] > X.negativity_certificate) {
        X.negativity_certificate = X.m[k];
        X.worst_i = i;
        X.worst_j = j;
      }
      if (X.m_linear[k] != 0.0) {
        X.quadratic_ratio =
            std::max(X.quadratic_ratio, std::abs(X.m[k] - X.m_linear[k]) / std::abs(X.m_linear[k]));
      }
    }
  }
  X.negativity_ok = X.tested_count > 0 && X.negative_count == X.tested_count;
  X.sandwich_ok = X.sandwich_margin >= 0.0;
  if (check && !X.negativity_ok) {
    throw Error(ErrorKind::NegativityFail,
                "mean curvature " + fmt17(X.negativity_certificate) + " at node (" +
                    std::to_string(X.worst_i) + "," + std::to_string(X.worst_j) + ")");
  }
  if (check && !X.sandwich_ok) {
    throw Error(ErrorKind::SandwichFail, "slice " + std::to_string(X.sandwich_slice) +
                                             " leaves the leaf band by " + fmt17(-X.sandwich_margin));
  }
  return X;
}

nlohmann::json barrier_json(const BarrierSurfaceX& X) {
  nlohmann::json j;
  const BarrierSpec& b = X.spec;
  j["f"] = b.f_label;
  j["K"] = b.K;
  j["Q"] = b.Q;
  j["p_barrier"] = b.p_barrier;
  j["eps"] = b.eps;
  j["y_range"] = {b.y_lo, b.y_hi};
  j["grid"] = {b.nx, b.ny};
  j["test_radius"] = X.test_radius;
  j["F_low"] = {{"a", X.a_low}, {"method", X.F_low_method}};
  j["F_one"] = {{"a", 1.0}, {"method", X.F_one_method}};
  j["tested_nodes"] = X.tested_count;
  j["negative_nodes"] = X.negative_count;
  j["negativity_certificate"] = X.negativity_certificate;
  j["worst_node"] = {X.worst_i, X.worst_j};
  j["sandwich_margin"] = X.sandwich_margin;
  j["sandwich_slice"] = X.sandwich_slice;
  j["quadratic_ratio"] = X.quadratic_ratio;
  j["negativity_ok"] = X.negativity_ok;
  j["sandwich_ok"] = X.sandwich_ok;
  return j;
}

// ---- non-concentration --------------------------------------------------------

std::vector<double> default_A_grid() {
  std::vector<double> g;
  for (int k = 1; k <= 400; ++k) g.push_back(0.25 * k);
  return g;
}

NonconcentrationResult nonconcentration_experiment(const SampledVarifold& M,
                                                   const FoliationTable& table, double b,
                                                   double s, const std::vector<double>& A_grid) {
  if (!(s > 0 && s < 0.5)) throw Error(ErrorKind::InvalidArgument, "s must lie in (0, 1/2)");
  if (!(b > 0)) throw Error(ErrorKind::InvalidArgument, "b must be positive");
  NonconcentrationResult out;
  out.b = b;
  out.s = s;
  out.A_grid = A_grid;
  const auto tabs = per_point(M.size(), true, [&](std::size_t i) {
    const auto& p = M.points[i];
    return std::abs(p[2]) <= b ? std::abs(point_leaf_param(table, p)) : 0.0;
  });
  // (r, |t|) over the slab sorted by r, with suffix maxima for the outer regions
  std::vector<std::pair<double, double>> rt;
  for (std::size_t i = 0; i < M.size(); ++i) {
    const auto& p = M.points[i];
    if (std::abs(p[2]) > b) continue;
    out.d_full = std::max(out.d_full, tabs[i]);
    if (std::abs(p[2]) <= 0.5 * b) out.lhs = std::max(out.lhs, tabs[i]);
    rt.push_back({std::hypot(p[0], p[1]), tabs[i]});
  }
  std::sort(rt.begin(), rt.end());
  std::vector<double> suffix(rt.size() + 1, 0.0);
  for (std::size_t k = rt.size(); k-- > 0;) suffix[k] = std::max(suffix[k + 1], rt[k].second);
  for (double A : A_grid) {
    const double r_lo = b * std::pow(s, A);
    const auto it = std::lower_bound(rt.begin(), rt.end(), std::make_pair(r_lo, -1.0));
    const double d2 = suffix[static_cast<std::size_t>(it - rt.begin())];
    out.d_outer.push_back(d2);
    if (!out.holds && out.lhs <= A * d2 + s * out.d_full) {
      out.holds = true;
      out.fitted_A = A;
    }
  }
  return out;
}

std::vector<SampledVarifold> nonconcentration_suite(const FoliationTable& table,
                                                    std::uint64_t seed, int count) {
  const QuadraticCone& c = table.cone();
  std::vector<GraphFunction> polys;
  for (int l = 0; l <= 6; ++l) polys.push_back(jacobi_leaf_polynomial(ujacobi_coeffs(c, l)));
  std::vector<SampledVarifold> out;
  SeededStream rng(seed);
  GraphSampling grid;
  grid.rho_lo = 1e-3;
  grid.rho_hi = 1.0;
  grid.n_rho = 48;
  grid.n_angle = 41;
  grid.y_abs_max = 1.0;
  grid.box = true;
  for (int n = 0; n < count; ++n) {
    std::vector<double> coef(polys.size(), 0.0);
    const int terms = rng.integer(1, 4);
    for (int t = 0; t < terms; ++t) coef[rng.integer(0, static_cast<int>(polys.size()) - 1)] = rng.uniform(-1.0, 1.0);
    const double amp = 1e-9;
    GraphFunction tau = [&polys, coef, amp](double r, double y) {
      double sum = 0.0;
      for (std::size_t l = 0; l < polys.size(); ++l) {
        if (coef[l] != 0.0) sum += coef[l] * polys[l](r, y);
      }
      return amp * sum;
    };
    out.push_back(leaf_graph_varifold(table, tau, grid));
  }
  return out;
}

// ---- blowup degree ------------------------------------------------------------

BlowupResult blowup_degree(const SampledVarifold& M, const FoliationTable& table,
                           const std::vector<double>& scales, const BlowupOptions& opt) {
  const QuadraticCone& c = M.cone;
  const double g = c.gamma;
  if (scales.empty()) throw Error(ErrorKind::InvalidArgument, "no scales");
  std::vector<std::pair<int, int>> basis;  // (k, l)
  for (int m = 0; m <= opt.max_m; ++m) {
    for (int k = 0; 2 * k <= m; ++k) basis.push_back({k, m - 2 * k});
  }
  const int P = static_cast<int>(basis.size());
  BlowupResult res;
  res.cluster_rms.assign(opt.max_m + 1, 0.0);
  std::vector<double> coef_sum(P, 0.0);
  double floor_sum = 0.0;
  for (double Lam : scales) {
    const SampledVarifold LM = scale_varifold(M, Lam);
    const double a = dist_to_cone(LM, table, Region::ball(opt.ball));
    std::vector<double> rs, ys, hs;
    for (const auto& p : LM.points) {
      const double x = p[0] * c.link_a + p[1] * c.link_b;
      const double h = p[1] * c.link_a - p[0] * c.link_b;
      const double r = std::hypot(p[0], p[1]);
      if (r < opt.r_min || std::hypot(r, p[2]) > opt.ball) continue;
      if (!(x > 0) || std::abs(h) > opt.graph_slope * x) {
        throw Error(ErrorKind::NotGraphical, "scale " + fmt17(Lam) + ": point not graphical over the cone");
      }
      rs.push_back(x);
      ys.push_back(p[2]);
      hs.push_back(h);
    }
    if (!(a > 0)) throw Error(ErrorKind::NoSignal, "scale " + fmt17(Lam) + ": M coincides with the cone");
    if (static_cast<int>(rs.size()) < 2 * P) {
      throw Error(ErrorKind::ResolutionExceeded, "scale " + fmt17(Lam) + ": too few samples in the fit annulus");
    }
    const Eigen::Index n = static_cast<Eigen::Index>(rs.size());
    Eigen::MatrixXd A(n, P);
    Eigen::VectorXd rhs(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      rhs(i) = hs[i] / a;
      for (int b = 0; b < P; ++b) {
        A(i, b) = std::pow(rs[i], 2 * basis[b].first - g) * std::pow(ys[i], basis[b].second);
      }
    }
    Eigen::VectorXd colnorm = A.colwise().norm().transpose();
    for (int b = 0; b < P; ++b) {
      if (colnorm(b) == 0.0) colnorm(b) = 1.0;
      A.col(b) /= colnorm(b);
    }
    const Eigen::VectorXd z = A.colPivHouseholderQr().solve(rhs);
    const Eigen::VectorXd resid = rhs - A * z;
    const double rms_data = rhs.norm() / std::sqrt(static_cast<double>(n));
    const double floor =
        std::max(resid.norm() / std::sqrt(static_cast<double>(n)), opt.floor_rel * rms_data);
    std::vector<double> cl(opt.max_m + 1, 0.0);
    for (int m = 0; m <= opt.max_m; ++m) {
      Eigen::VectorXd part = Eigen::VectorXd::Zero(n);
      for (int b = 0; b < P; ++b) {
        if (basis[b].first * 2 + basis[b].second == m) part += z(b) * A.col(b);
      }
      cl[m] = part.norm() / std::sqrt(static_cast<double>(n));
      res.cluster_rms[m] += cl[m] / scales.size();
    }
    int ms = -1;
    for (int m = 0; m <= opt.max_m; ++m) {
      if (cl[m] > opt.signal_factor * floor) {
        ms = m;
        break;
      }
    }
    res.per_scale_m.push_back(ms);
    floor_sum += floor / scales.size();
    const double zmax = (z.array() / colnorm.array()).abs().maxCoeff();
    for (int b = 0; b < P; ++b) coef_sum[b] += z(b) / colnorm(b) / zmax / scales.size();
  }
  res.noise_floor = floor_sum;
  for (int m = 0; m <= opt.max_m; ++m) {
    if (res.cluster_rms[m] > opt.signal_factor * res.noise_floor) {
      res.m = m;
      break;
    }
  }
  if (res.m < 0) throw Error(ErrorKind::NoSignal, "every coefficient cluster is below the noise floor");
  res.degree = res.m - g;
  std::vector<MonomialTerm> terms;
  double cmax = 0.0;
  for (int b = 0; b < P; ++b) {
    const int m = 2 * basis[b].first + basis[b].second;
    if (res.cluster_rms[m] > opt.signal_factor * res.noise_floor) cmax = std::max(cmax, std::abs(coef_sum[b]));
  }
  for (int b = 0; b < P; ++b) {
    const int m = 2 * basis[b].first + basis[b].second;
    if (res.cluster_rms[m] > opt.signal_factor * res.noise_floor && coef_sum[b] != 0.0) {
      terms.push_back({basis[b].first, basis[b].second, coef_sum[b] / cmax});
    }
  }
  res.expansion = monomial_field(c, terms);
  return res;
}

// ---- distance to T_lambda -------------------------------------------------------

double default_gamma1(const QuadraticCone& cone) {
  const double g = cone.gamma, top = 0.5 * (cone.n - 3.0);
  return std::min(g + 0.1, 0.5 * (g + top));
}

TDistance dist_to_T(const SampledVarifold& M, const EquivariantSurface& T_lam, double lam,
                    const FoliationTable& table, const Region& U, const TDistanceParams& prm) {
  const QuadraticCone& c = M.cone;
  const double g = c.gamma;
  const double g1 = std::isnan(prm.gamma1) ? default_gamma1(c) : prm.gamma1;
  if (!(g1 > g && g1 < 0.5 * (c.n - 3.0))) {
    throw Error(ErrorKind::InvalidArgument, "gamma1 must lie in (gamma, (n-3)/2)");
  }
  if (!(prm.beta > 0)) throw Error(ErrorKind::InvalidArgument, "beta must be positive");
  const double bl = prm.beta * std::abs(lam);

  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < M.size(); ++i) {
    const auto& p = M.points[i];
    if (U.contains(p[0], p[1], p[2])) idx.push_back(i);
  }
  TDistance out;
  out.points = static_cast<int>(idx.size());
  if (idx.empty()) return out;

  std::vector<double> tabs = per_point(idx.size(), true, [&](std::size_t k) {
    return std::abs(point_leaf_param(table, M.points[idx[k]]));
  });
  std::vector<double> off(idx.size()), rr(idx.size());
  std::vector<double> okv = per_point(idx.size(), true, [&](std::size_t k) {
    const auto& p = M.points[idx[k]];
    const SurfaceProjection pr = project_to_surface(T_lam, p[0], p[1], p[2]);
    // offsets at the rounding level of the coordinates count as zero
    const double scale = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    off[k] = std::abs(pr.offset) <= 1e-12 * scale ? 0.0 : std::abs(pr.offset);
    rr[k] = pr.r;
    return pr.ok ? 1.0 : 0.0;
  });
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (okv[k] == 0.0) {
      const auto& p = M.points[idx[k]];
      throw Error(ErrorKind::NotGraphical, "no normal projection onto T for point (" + fmt17(p[0]) +
                                               ", " + fmt17(p[1]) + ", " + fmt17(p[2]) + ")");
    }
  }
  double D = 0.0;
  for (double t : tabs) D = std::max(D, t);
  out.cone_distance = D;

  auto member_b = [&](double d) {
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const double bound =
          std::min((bl + d) * std::pow(rr[k], -g), d * std::pow(rr[k], -g1));
      if (off[k] > bound) return false;
    }
    return true;
  };
  auto member_a = [&](double d) { return d >= bl && D <= d / (prm.beta * prm.beta); };

  // Closed form of the same minimum, as a cross-check of the bisection.
  double db = 0.0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    db = std::max(db, std::max(off[k] * std::pow(rr[k], g1), off[k] * std::pow(rr[k], g) - bl));
  }
  out.d_closed = db < bl ? db : std::max(bl, prm.beta * prm.beta * D);

  auto bisect = [&](auto&& member, double lo, double hi) {
    for (int it = 0; it < prm.max_iter && hi - lo > prm.rtol * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (member(mid)) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    return hi;
  };
  if (bl > 0 && member_b(0.0)) {
    out.d = 0.0;
    return out;
  }
  const double below = bl * (1.0 - 1e-15);
  if (bl > 0 && member_b(below)) {
    out.d = bisect(member_b, 0.0, below);
    return out;
  }
  out.case_a = true;
  if (member_a(bl)) {
    out.d = bl;
    return out;
  }
  double hi = std::max(bl, 1e-300) * 2.0;
  while (!member_a(hi)) hi *= 2.0;
  out.d = bisect(member_a, std::max(bl, 0.5 * hi), hi);
  return out;
}

double cone_weighted_area(const QuadraticCone& cone, double R) {
  const int m = cone.p + cone.q;
  const double I = std::sqrt(std::numbers::pi) * std::tgamma(0.5 * (m + 1)) / std::tgamma(0.5 * m + 1.0);
  return std::pow(cone.link_a, cone.p) * std::pow(cone.link_b, cone.q) * std::pow(R, cone.n) /
         cone.n * I;
}

DT3AnnulusFlags dt3annulus_experiment(const SampledVarifold& M, const EquivariantSurface& T_lam,
                                      double lam, const FoliationTable& table, double L,
                                      double d, double alpha, double rho0,
                                      const TDistanceParams& prm) {
  if (!(L > 1)) throw Error(ErrorKind::InvalidArgument, "L must exceed 1");
  if (!(rho0 > 0 && rho0 < 1)) throw Error(ErrorKind::InvalidArgument, "rho0 must lie in (0, 1)");
  DT3AnnulusFlags out;
  out.L = L;
  out.d = d;
  out.alpha = alpha;
  const double R = 2.0 * L * L;
  for (std::size_t i = 0; i < M.size(); ++i) {
    const auto& p = M.points[i];
    if (p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= R * R) out.mass += M.weights[i];
  }
  out.mass_bound = 1.1 * cone_weighted_area(M.cone, R);
  if (out.mass > out.mass_bound) {
    throw Error(ErrorKind::MassBoundFail, "mass " + fmt17(out.mass) + " exceeds 11/10 of the cone's " +
                                              fmt17(out.mass_bound / 1.1));
  }
  const double D = T_lam.params.l - T_lam.cone.gamma;
  for (int k = -2; k <= 2; ++k) {
    const double Lam = std::pow(L, k);
    const double fac = std::pow(Lam, 1.0 - D);
    const SampledVarifold LM = scale_varifold(M, Lam);
    const EquivariantSurface LT = k == 0 ? T_lam : scale_T(T_lam, fac);
    const double lam_k = lam * fac;
    double v = dist_to_T(LM, LT, lam_k, table, Region::annulus(rho0, 1.0), prm).d;
    if (v <= 1e-12 * prm.beta * std::abs(lam_k)) v = 0.0;
    out.D[k + 2] = v;
  }
  const double up = std::pow(L, 1.0 - d + alpha), dn = std::pow(L, d - 1.0 + alpha);
  out.hyp_i = out.D[3] >= up * out.D[2];
  out.concl_i = out.D[4] >= up * out.D[3];
  out.implication_i = !out.hyp_i || out.concl_i;
  out.hyp_ii = out.D[1] >= dn * out.D[2];
  out.concl_ii = out.D[0] >= dn * out.D[1];
  out.implication_ii = !out.hyp_ii || out.concl_ii;
  return out;
}

}  // namespace cylcone
