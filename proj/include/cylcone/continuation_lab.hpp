#pragma once

// Distances of sampled equivariant varifolds to C x R and to T_lambda, the
// regularized distance d(M, rho), doubling sequences, the barrier surfaces
// X_eps, non-concentration scans and blowup degree extraction.
//
// A varifold is a cloud of (u, v, y) points in the quadrant picture with
// per-point weights dA u^p v^q.

#include "cylcone/foliation.hpp"
#include "cylcone/glue_solver.hpp"
#include "cylcone/jacobi_fields.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace cylcone {

enum class VarifoldSource { exact_surface, synthetic_graph, perturbed };

std::string to_string(VarifoldSource s);
VarifoldSource varifold_source_from_string(const std::string& s);

struct SampledVarifold {
  QuadraticCone cone;
  std::vector<std::array<double, 3>> points;
  std::vector<double> weights;
  VarifoldSource source = VarifoldSource::synthetic_graph;
  double rho_max = 0;  // declared ball

  std::size_t size() const { return points.size(); }
  /// Throws InvalidArgument on non-positive weights or points outside B_rho_max.
  void validate() const;
};

/// Closed region: every bound is inclusive.
struct Region {
  double rho_lo = 0, rho_hi = std::numeric_limits<double>::infinity();
  double r_lo = 0, r_hi = std::numeric_limits<double>::infinity();
  double y_abs_hi = std::numeric_limits<double>::infinity();

  static Region ball(double rho) { return Region{0.0, rho}; }
  static Region annulus(double lo, double hi) { return Region{lo, hi}; }
  static Region slab(double b) {
    Region R;
    R.y_abs_hi = b;
    return R;
  }
  bool contains(double u, double v, double y) const;
};

/// lambda M: positions times lambda, weights times lambda^n.
SampledVarifold scale_varifold(const SampledVarifold& M, double lambda);

/// max |leaf parameter| over the points in U (0 when U holds no point).
double dist_to_cone(const SampledVarifold& M, const FoliationTable& table, const Region& U);
double dist_to_cone_serial(const SampledVarifold& M, const FoliationTable& table,
                           const Region& U);

/// Euclidean distance of a quadrant point to C x R.
inline double cone_distance(const QuadraticCone& c, double u, double v) {
  return std::abs(v * c.link_a - u * c.link_b);
}

/// (sum over points in B_rho of d^2 weight)^{1/2}.
double l2_distance(const SampledVarifold& M, double rho);
double l2_distance_serial(const SampledVarifold& M, double rho);

/// d(M, rho) = l2_distance(M/rho, 1) + dist_to_cone(M/rho, B_1)^{1 + q_reg^2}.
double d_regularized(const SampledVarifold& M, const FoliationTable& table, double rho,
                     double q_reg = 0.05);

/// C1 with d(M, a rho) <= C1 d(M, rho) for a in [1/2, 1], from the scaling laws.
double quasi_monotonicity_constant(const QuadraticCone& cone, double q_reg);

struct DoublingOptions {
  double rho0 = 1.0;  // outermost radius; radii are rho0 e^{-k lambda}
  int min_samples = 100;
};

struct DoublingReport {
  double lambda = 0;
  double q_reg = 0;
  double rho0 = 1;
  std::vector<double> rhos;
  std::vector<double> ds;
  std::vector<char> flags;    // flags[k]: d(rho_{k+1}) >= d(rho_k) / 2
  std::vector<double> ratios; // d(rho_k) / d(rho_{k+1})
  double doubling_constant = 0;
  double log_slope = 0;       // slope of ln d against -k lambda
  double degree_fit = 0;      // log_slope + 1
  std::string warning;
};

/// ResolutionExceeded when the innermost ball holds fewer than min_samples points.
DoublingReport doubling_sequence(const SampledVarifold& M, const FoliationTable& table,
                                 double lambda, int K, double q_reg = 0.05,
                                 const DoublingOptions& opt = {});

// ---- synthetic varifolds ----------------------------------------------------

/// Height function h(r, y) of a normal graph over C x R.
using GraphFunction = std::function<double(double r, double y)>;

struct GraphSampling {
  double rho_lo = 1e-3, rho_hi = 1.0;
  int n_rho = 160;      // log-spaced radii
  int n_angle = 64;     // angles in (-pi/2, pi/2) of (r, y)
  double r_min = 0.0;   // drop nodes with r below it
  double y_abs_max = std::numeric_limits<double>::infinity();
  bool positive_y_only = false;
  bool box = false;     // r log-spaced in [rho_lo, rho_hi], y uniform in |y| <= y_abs_max
};

/// Normal graph of h over C x R: (r, y) -> r e_ray + h e_perp.  Weights are
/// the exact area element of the parametrization times u^p v^q.
SampledVarifold graph_varifold(const QuadraticCone& cone, const GraphFunction& h,
                               const GraphSampling& grid,
                               VarifoldSource source = VarifoldSource::synthetic_graph);

/// Nodes of a surface with area weights from the grid parametrization.
SampledVarifold surface_varifold(const EquivariantSurface& s);

/// H(t) x R sampled by unit-leaf arclength up to radius r_hi and |y| <= y_hi.
SampledVarifold leaf_cylinder_varifold(const FoliationTable& table, double t, double r_hi,
                                       double y_hi, int n_sigma = 160, int n_y = 65);

/// Leaf-parameter graph: the point at foot r on the leaf H(tau(r, y)).  Nodes
/// with r below twice the leaf's axis foot are dropped.
SampledVarifold leaf_graph_varifold(const FoliationTable& table, const GraphFunction& tau,
                                    const GraphSampling& grid);

/// u_l r^gamma, the leaf-parameter polynomial of u_l.
GraphFunction jacobi_leaf_polynomial(const JacobiFieldExpansion& field);

void write_varifold_csv(std::ostream& os, const SampledVarifold& M);
nlohmann::json varifold_sidecar(const SampledVarifold& M);
SampledVarifold read_varifold_csv(std::istream& is, const nlohmann::json& sidecar);

void write_doubling_csv(std::ostream& os, const DoublingReport& rep);
nlohmann::json doubling_json(const DoublingReport& rep);

// ---- barrier ------------------------------------------------------------------

/// f and its first two derivatives.
using ProfileJet = std::function<std::array<double, 3>(double y)>;

struct BarrierSpec {
  ProfileJet f = [](double) { return std::array<double, 3>{4.0, 0.0, 0.0}; };
  std::string f_label = "constant 4";
  double K = 9.0;
  double Q = 8.0;
  int p_barrier = 9;
  double eps = 1e-33;
  double y_lo = -1.0, y_hi = 1.0;
  int nx = 64, ny = 33;
  double reach = 2.0;  // slices reach radius reach * K^{-Q}
};

struct BarrierSurfaceX {
  BarrierSpec spec;
  double test_radius = 0;          // K^{-Q}
  double a_low = 0;                // 2 - gamma
  std::string F_low_method, F_one_method;
  EquivariantSurface surface;      // base slices H(eps f^p) with w the barrier offsets
  std::vector<double> m;           // mean curvature at the nodes
  std::vector<double> m_linear;    // slice Jacobi operator applied to the offsets
  std::vector<double> leaf_param;  // first-order leaf parameter of each node
  std::vector<char> tested;        // r < K^{-Q}
  int tested_count = 0, negative_count = 0;
  double negativity_certificate = 0;  // max m over tested nodes
  int worst_i = -1, worst_j = -1;
  double sandwich_margin = 0;      // min over nodes of eps - |leaf_param - eps f^p|
  int sandwich_slice = -1;
  double quadratic_ratio = 0;      // max |m - m_linear| / |m_linear| over tested nodes
  bool negativity_ok = false, sandwich_ok = false;
};

/// Throws NegativityFail / SandwichFail when `check` is set and a test fails.
BarrierSurfaceX build_barrier_Xeps(std::shared_ptr<const FoliationTable> table,
                                   const BarrierSpec& spec, bool check = true);

/// Offsets -K^Q eps |f|^{gamma p/(gamma+1)} F_{2-gamma} - eps F_1 of one slice
/// H(eps f^p) at the given polar radii (the cone with F_a = r^a when f = 0).
std::vector<double> barrier_slice_offsets(const FoliationTable& table, const BarrierSpec& spec,
                                          double f_value, const std::vector<double>& radii);

nlohmann::json barrier_json(const BarrierSurfaceX& X);

// ---- non-concentration --------------------------------------------------------

struct NonconcentrationResult {
  double b = 0, s = 0;
  double lhs = 0;        // D(M; |y| < b/2)
  double d_full = 0;     // D(M; |y| < b)
  std::vector<double> A_grid, d_outer;  // D(M; r >= b s^A, |y| < b) along the grid
  double fitted_A = std::numeric_limits<double>::infinity();  // least grid A that holds
  bool holds = false;
};

std::vector<double> default_A_grid();

NonconcentrationResult nonconcentration_experiment(const SampledVarifold& M,
                                                   const FoliationTable& table, double b,
                                                   double s,
                                                   const std::vector<double>& A_grid = default_A_grid());

/// Seeded leaf-parameter graphs sum_l c_l lam u_l r^gamma over |y| < 1.
std::vector<SampledVarifold> nonconcentration_suite(const FoliationTable& table,
                                                    std::uint64_t seed, int count = 50);

// ---- blowup degree ------------------------------------------------------------

struct BlowupOptions {
  double r_min = 0.1;
  double ball = 1.0;
  int max_m = 10;         // monomials r^{2k-gamma} y^l with 2k + l <= max_m
  double signal_factor = 3.0;
  double floor_rel = 1e-9;  // noise floor never below this fraction of the data RMS
  double graph_slope = 0.5; // |h|/r above it is NotGraphical
};

struct BlowupResult {
  JacobiFieldExpansion expansion;   // fitted monomials, normalized by max |coef|
  int m = -1;                       // smallest signalled total degree
  double degree = 0;                // m - gamma
  std::vector<double> cluster_rms;  // per total degree m, averaged over scales
  double noise_floor = 0;
  std::vector<int> per_scale_m;
};

BlowupResult blowup_degree(const SampledVarifold& M, const FoliationTable& table,
                           const std::vector<double>& scales, const BlowupOptions& opt = {});

// ---- distance to T_lambda -------------------------------------------------------

struct TDistanceParams {
  double beta = 0.01;
  double gamma1 = std::numeric_limits<double>::quiet_NaN();  // default_gamma1 when NaN
  double rtol = 1e-4;
  int max_iter = 60;
};

/// min(gamma + 0.1, (gamma + (n-3)/2) / 2).
double default_gamma1(const QuadraticCone& cone);

struct TDistance {
  double d = 0;
  bool case_a = false;     // d >= beta |lambda|
  double d_closed = 0;     // the same minimum from the pointwise closed form
  int points = 0;
  double cone_distance = 0;  // D_{CxR}(M; U)
};

/// U is an annulus in absolute coordinates.
TDistance dist_to_T(const SampledVarifold& M, const EquivariantSurface& T_lam, double lam,
                    const FoliationTable& table, const Region& U, const TDistanceParams& prm = {});

struct DT3AnnulusFlags {
  double L = 0, d = 0, alpha = 0;
  std::array<double, 5> D{};  // scales L^{-2}, L^{-1}, 1, L, L^2
  bool hyp_i = false, concl_i = false, implication_i = false;
  bool hyp_ii = false, concl_ii = false, implication_ii = false;
  double mass = 0, mass_bound = 0;
};

/// Weighted area of C x R in B_R: cos^p sin^q R^n / n * int cos^{p+q}.
double cone_weighted_area(const QuadraticCone& cone, double R);

/// D_{Lambda T}(Lambda M; B_1 \ B_rho0) at Lambda = L^k, k = -2..2.
DT3AnnulusFlags dt3annulus_experiment(const SampledVarifold& M, const EquivariantSurface& T_lam,
                                      double lam, const FoliationTable& table, double L,
                                      double d, double alpha, double rho0 = 0.5,
                                      const TDistanceParams& prm = {});

}  // namespace cylcone
