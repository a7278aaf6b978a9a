#pragma once

// The glued approximate solution X over C x R, its mean curvature, weighted
// certificates, the Newton-corrected surface T and slice diagnostics.
//
// A surface is stored slice by slice: in the slice at height y_j the base
// curve is the profile of H(c y_j^l) (or a fixed profile for cylinders),
// parametrized by unit-leaf arclength sigma = sigma_lo + sigma_c sinh(xi K(y)),
// xi in [0, 1], and the surface point is base + w N with N the base normal.
// Coordinates in the (u, v) quadrant are kept in the cone frame
// x = component along the cone ray, h = component across it.

#include "cylcone/foliation.hpp"
#include "cylcone/jacobi_fields.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace cylcone {

struct GlueParams {
  int l = 7;
  double beta = 1.5;
  double A = 10.0;
  int nx = 64;            // nodes along each slice
  int ny = 96;            // slices
  double decades = 2.5;   // rho span of the y grid
  double y_hi_frac = 0.5; // top slice at y = y_hi_frac / A
  double sigma_c = 0.25;  // clustering scale of the slice map near the tip
  bool negative_y = false;
};

struct WeightedNormSpec {
  double delta = 0.0;
  double tau = 0.0;
  int order = 2;
  double holder = 0.5;
};

/// Defaults delta = (l - gamma) + 0.05, tau = -gamma - 0.05, validated.
WeightedNormSpec default_weights(const QuadraticCone& cone, int l);
void validate_weights(const QuadraticCone& cone, int l, const WeightedNormSpec& spec);

/// C-infinity cutoff: 1 below 1, 0 above 2; returns value and two derivatives.
std::array<double, 3> cutoff(double z);

/// Per-node base data, fixed for the life of a surface.
struct BaseNode {
  double sigma = 0, s_xi = 0, s_xixi = 0, s_y = 0, s_yy = 0, s_xiy = 0;
  double S = 0, S_y = 0, S_yy = 0;
  double Px = 0, Ph = 0;  // unit-leaf point in the cone frame
  double Tx = 0, Th = 0;  // unit tangent
  double k = 0, dk = 0;   // curvature of the unit leaf and its arclength derivative
  double R = 0;           // polar radius of the unit-leaf point
  bool axis = false;
};

enum class SurfaceKind { glued, cylinder, family };

class EquivariantSurface {
 public:
  EquivariantSurface() = default;

  QuadraticCone cone;
  std::shared_ptr<const FoliationTable> table;
  SurfaceKind kind = SurfaceKind::glued;
  GlueParams params;
  WeightedNormSpec weights;
  double a_exp = 0;       // l / (1 + gamma)
  double base_coef = 1;   // slices are H(base_coef * y^l)
  double rho_max = 0;
  double t_cyl = 0;       // leaf parameter of a cylinder surface
  double sigma_lo = 0, sigma_hi = 0;  // slice arclength range of a cylinder surface
  int nx = 0, ny = 0;
  bool log_y = true;
  std::vector<double> ys;   // slice heights
  std::vector<double> etas; // uniform slice coordinate (ln|y| or y)
  std::vector<Side> sides;  // base leaf per slice
  std::vector<BaseNode> base;
  std::vector<double> w;      // normal offsets, index i + nx j
  std::vector<double> w_ref;  // offsets of X (empty when no reference)
  std::vector<double> m_ref;  // analytic mean curvature of X at the nodes
  std::vector<double> m_shift;  // m_ref minus the discrete curvature of w_ref
  std::vector<MonomialTerm> ujac;  // u_l in monomial form
  std::vector<std::array<double, 5>> w_jet;  // analytic (w_xi, w_xixi, w_y, w_yy, w_xiy) if set
  std::vector<std::array<double, 3>> slice_t;  // family slices: (t, t_y, t_yy)

  std::size_t idx(int i, int j) const { return static_cast<std::size_t>(i) + static_cast<std::size_t>(nx) * j; }
  double y(int j) const { return ys[j]; }
  bool has_axis() const;

  /// Cone-frame position (x, h) of node (i, j).
  std::array<double, 2> frame_point(int i, int j) const;
  /// (u, v, y) of node (i, j).
  std::array<double, 3> position(int i, int j) const;
  /// Polar radius r = |(u, v)| and rho = |(u, v, y)| of a node.
  double r_of(int i, int j) const;
  double rho_of(int i, int j) const;
  /// Length scale used for Jacobian steps and row scaling.
  double local_scale(int i, int j) const;
  bool dirichlet(int i, int j) const;
};

struct CurvatureField {
  int nx = 0, ny = 0;
  std::vector<double> values;
  std::vector<double> gradient_proxy;  // |grad m| from first differences along the grid
  std::vector<char> degenerate;        // axis nodes where a one-sided limit was used
  double sup_interior() const;
  std::vector<char> interior;
};

/// The glued surface X for (cone, l, beta, A).
EquivariantSurface build_X(std::shared_ptr<const FoliationTable> table, const GlueParams& params);

/// H(t) x R over y in [y_lo, y_hi] (t = 0 gives the cone over [r_lo, r_hi]).
EquivariantSurface build_cylinder(std::shared_ptr<const FoliationTable> table, double t,
                                  double y_lo, double y_hi, double r_hi, int nx, int ny,
                                  double r_lo = 0.0);

/// Slices H(t(y_j)) on a fixed unit-leaf arclength range [0, sigma_hi].
/// y must be uniform; t_jets holds (t, t_y, t_yy) per slice with t != 0.
/// The analytic family curvature is attached as the reference of w = 0.
EquivariantSurface build_leaf_family(std::shared_ptr<const FoliationTable> table,
                                     std::vector<double> ys,
                                     std::vector<std::array<double, 3>> t_jets, double sigma_hi,
                                     int nx);

/// Foot of (u, v, y) on the base slice at height y and its signed offset
/// from the surface, measured along the base normal.  ok is false outside
/// the sampled region or where the foot is not unique.
struct SurfaceProjection {
  bool ok = false;
  double offset = 0, r = 0, sigma = 0;
};
SurfaceProjection project_to_surface(const EquivariantSurface& s, double u, double v, double y);

/// Height over the cone ray of the glued slice at foot x and height y
/// (value and first and second derivatives in x, y, and xy).
struct GraphJet {
  double G = 0, Gx = 0, Gy = 0, Gxx = 0, Gyy = 0, Gxy = 0;
  double chi = 0;
};
GraphJet glued_height(const EquivariantSurface& X, double x, double y);

/// Mean curvature of the graph of a height function over C x R, written
/// without the cancellation of the cone's own terms.
double graph_mean_curvature(const QuadraticCone& cone, double x, const GraphJet& g);

/// Discrete weighted mean curvature of the surface.  Uses the analytic value
/// of X corrected by the change of the discrete operator when a reference is
/// attached.
CurvatureField mean_curvature(const EquivariantSurface& surface);

/// Discrete mean curvature from the base jets and finite differences of w only.
std::vector<double> discrete_mean_curvature(const EquivariantSurface& surface,
                                            const std::vector<double>& w,
                                            std::vector<char>* degenerate = nullptr);
/// Serial reference of discrete_mean_curvature.
std::vector<double> discrete_mean_curvature_serial(const EquivariantSurface& surface,
                                                   const std::vector<double>& w);

/// Mean curvature of an arbitrary logically rectangular grid of (u, v, y)
/// points using central differences on positions (interior nodes only).
CurvatureField mean_curvature_positions(const QuadraticCone& cone,
                                        const std::vector<std::array<double, 3>>& pts, int nx,
                                        int ny);

struct BoxReport {
  int kr = 0, ks = 0;   // dyadic indices: r in [2^kr, 2^{kr+1}), rho in [2^ks, 2^{ks+1})
  double sup_term = 0;  // sup of (|m| + r|grad m|) rho^{tau-delta} r^{2-tau}
  double bound = 0;
  bool pass = false;
};

struct CertificateReport {
  double sup = 0;
  double bound = 0;  // A^{-kappa}
  bool pass = false;
  int worst_kr = 0, worst_ks = 0;
  std::vector<BoxReport> boxes;
};

CertificateReport weighted_certificate(const CurvatureField& field,
                                       const EquivariantSurface& surface,
                                       const WeightedNormSpec& spec, double kappa, double A);

struct NewtonOptions {
  int max_iter = 12;
  double reduction = 1e-4;
  double fd_step = 1e-6;
  int max_backtrack = 12;
};

struct NewtonReport {
  std::vector<double> residuals;  // sup |m| at each iterate, starting with the initial
  std::vector<char> accepted;     // per step: passed the backtracking test
  int iterations = 0;
  bool converged = false;
  double max_change = 0;          // max |w - w_initial|
};

struct BandedJacobian {
  int n = 0, kl = 0, ku = 0;
  std::vector<double> ab;  // LAPACK band storage, ldab = 2 kl + ku + 1
  std::vector<int> rows_i, rows_j;
};

/// Unknowns: all non-Dirichlet nodes.
std::vector<std::pair<int, int>> newton_unknowns(const EquivariantSurface& s);
/// Residual vector (mean curvature at the unknowns) for offsets w.
std::vector<double> newton_residual(const EquivariantSurface& s, const std::vector<double>& w);
BandedJacobian assemble_jacobian(const EquivariantSurface& s, const std::vector<double>& w,
                                 double fd_step);
/// y = J x for the assembled band.
std::vector<double> band_multiply(const BandedJacobian& J, const std::vector<double>& x);

EquivariantSurface newton_solve_T(const EquivariantSurface& X, const WeightedNormSpec& spec,
                                  const NewtonOptions& opt = {}, NewtonReport* report = nullptr);

/// Fitted exponent of ||m(w) - m(0) - J w|| against ||w|| over seeded random offsets.
struct QuadraticCheck {
  std::vector<double> sizes, remainders;
  double exponent = 0;
};
QuadraticCheck quadratic_remainder_check(const EquivariantSurface& X, int samples,
                                         std::uint64_t seed, double fd_step = 1e-6);

struct SliceGraph {
  int j = 0;
  double y0 = 0;
  std::vector<double> r, rho, f;
  double C1 = 0, kappa = 0;       // smallest C1 over the kappa grid and its kappa
  std::vector<double> kappas, C1s;
  double far_exponent = 0;        // log-log slope of |f| against r where r > |y0|
  double bound_exponent = 0;      // l - gamma
  double slice_exponent = 0;      // 2 floor(l/2) - gamma, the fixed-slice growth of u_l
};

SliceGraph graph_over_leaf(const EquivariantSurface& T, double y0);

/// Log-log slope of |w| against r sampled where r = ratio |y| on every slice.
double diagonal_growth_exponent(const EquivariantSurface& T, double ratio);

/// Recomputes the per-node base data from the slice description.
void rebuild_base(EquivariantSurface& s);

EquivariantSurface scale_T(const EquivariantSurface& T, double lam);

struct NormComparison {
  double norm_11 = 0, norm_dt = 0;
  double kappa = 0;  // a (tau - 1) + delta - tau
  double C = 0;      // (norm_11 / norm_dt) A^{kappa}
  double box_max = 0;  // sup over occupied boxes of R^{tau-1} S^{delta-tau}
};

/// `order` 0 uses |w| only; order 2 adds r|grad w| + r^2|hess w| proxies.
NormComparison norm_comparison_check(const EquivariantSurface& s, const std::vector<double>& w,
                                     const WeightedNormSpec& spec, double A);

void write_surface_csv(std::ostream& os, const EquivariantSurface& s);
nlohmann::json surface_sidecar(const EquivariantSurface& s);
void write_certificate_csv(std::ostream& os, const CertificateReport& rep);

}  // namespace cylcone
