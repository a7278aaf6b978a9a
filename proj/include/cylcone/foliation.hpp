#pragma once

// Hardt-Simon leaves H_+/H_- of a quadratic cone, the foliation H(t), the
// leaf-parameter coordinate and the barrier functions F_a.

#include "cylcone/cone_spectra.hpp"
#include "cylcone/numerics.hpp"

#include <nlohmann/json.hpp>

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace cylcone {

enum class Side { plus, minus };

inline double side_sign(Side s) { return s == Side::plus ? 1.0 : -1.0; }

/// One profile sample.  (u, v) are the orbit radii, theta the tangent angle.
/// R, psi, w duplicate the position in cone-adapted polar form
/// (psi = polar angle - alpha, w = theta - polar angle) so far-field
/// quantities keep full relative precision.
struct LeafSample {
  double s = 0, u = 0, v = 0, theta = 0;
  double R = 0, psi = 0, w = 0;
};

/// Profile point with the curvature data needed by the surface code.
struct LeafPoint {
  double u = 0, v = 0, theta = 0;
  double dtheta = 0;   // d theta / ds
  double ddtheta = 0;  // d^2 theta / ds^2
  double R = 0, psi = 0, w = 0;
};

struct AsymptoticFit {
  double coef = 0;          // A in h r^gamma = A + B r^{-c}
  double remainder_coef = 0;  // B
  double remainder_exp = 0;   // c (NaN when unresolved)
  double decay_slope = 0;     // log-log slope of the normal distance to C against r
};

struct LeafProfile {
  QuadraticCone cone;
  Side side = Side::plus;
  std::vector<LeafSample> samples;
  double asymptotic_coef = 0;
  double remainder_exp = 0;
  double remainder_coef = 0;
  double decay_slope = 0;
  double raw_coef = 0;   // coefficient before normalization
  double scale = 1;      // spatial factor applied by normalization
  bool normalized = false;
  std::string warning;

  /// Interpolated point at arclength s (clamped to the sampled range).
  LeafPoint at(double s) const;
  /// Arclength at which the polar radius equals R (R >= R at the axis).
  double s_at_radius(double R) const;
  /// Arclength at which the polar offset from the cone ray equals psi.
  double s_at_psi(double psi) const;
  /// Cone-graph coordinates: foot x along the ray, height h = R sin psi.
  /// Returns the arclength at which the foot coordinate equals x.
  double s_at_foot(double x) const;
  double s_max() const { return samples.back().s; }
  double axis_radius() const { return samples.front().R; }

  /// d theta/ds from the profile ODE at a point, written without cancellation
  /// near the cone ray.
  double curvature(double u, double v, double theta, double R, double psi, double w) const;
};

struct LeafOptions {
  double s_max = 1e5;  // total arclength to integrate (leaf launched at unit axis distance)
  num::Tolerances tol{};
  bool normalize = true;
};

/// Residual of the profile ODE  theta' + p sin(theta)/u - q cos(theta)/v.
double profile_residual(const QuadraticCone& cone, double u, double v, double theta,
                        double dtheta);

LeafProfile solve_leaf(const QuadraticCone& cone, Side side, const LeafOptions& opt = {});

AsymptoticFit fit_asymptotics(const LeafProfile& leaf);

/// Returns a copy of the leaf with every length multiplied by `factor`.
LeafProfile scale_leaf(const LeafProfile& leaf, double factor);

class FoliationTable {
 public:
  FoliationTable() = default;
  FoliationTable(const QuadraticCone& cone, LeafProfile plus, LeafProfile minus,
                 int table_size = 4096);

  const QuadraticCone& cone() const { return cone_; }
  const LeafProfile& leaf(Side s) const { return s == Side::plus ? plus_ : minus_; }

  /// Polar radius g_+(phi) / g_-(phi) at which the unit leaf crosses polar angle phi.
  double polar_radius(Side s, double phi) const;

  /// The unique t with (u, v) on H(t).
  double leaf_parameter(double u, double v) const;

  /// Spatial scale |t|^{1/(gamma+1)} of H(t).
  double scale_of(double t) const;

 private:
  double radius_from_psi(Side s, double psi) const;
  double tail_parameter(Side s, double R, double psi) const;

  QuadraticCone cone_;
  LeafProfile plus_, minus_;
  num::MonotoneCubic table_plus_, table_minus_;  // ln|psi| -> ln R
  double psi_end_plus_ = 0, psi_end_minus_ = 0;
};

/// Image under (u, v) -> (v, u); a leaf of the other side when p = q.
LeafProfile mirror_leaf(const LeafProfile& leaf);

/// Solves both leaves; for p = q the minus leaf is the mirror of the plus leaf.
FoliationTable build_foliation(const QuadraticCone& cone, const LeafOptions& opt = {});

/// Profile of H(t): the unit leaf scaled by |t|^{1/(gamma+1)}; for t = 0 the
/// cone ray sampled on the radii of the plus leaf.
LeafProfile leaf_H(const FoliationTable& table, double t);

/// Largest c0 with offset(H(t) -> H(t+lam)) >= c0 min{lam r^-gamma, r} at the radii.
double separation_constant(const FoliationTable& table, double t, double lam,
                           std::span<const double> sample_radii);

/// Normal offset from H(t) to H(t+lam) measured at polar radius r on H(t).
double leaf_offset(const FoliationTable& table, double t, double lam, double r);

enum class BarrierVariant { subsolution, supersolution };

struct BarrierFunction {
  double a = 0;
  Side side = Side::plus;
  BarrierVariant variant = BarrierVariant::subsolution;
  std::string method;       // "candidate" or "bvp"
  double sigma = 0;         // smoothing radius of the candidate (R^2 + sigma^2)^{a/2}
  std::vector<double> s;    // sample arclengths (the leaf's)
  std::vector<double> values;
  std::vector<double> jacobi;      // L_H F at the samples
  double sign_certificate = 0;     // min of +-L_H F / R^{a-2}
  double matching_radius = 0;      // beyond it |F/R^a - 1| < 1e-3
  double far_field_ratio = 0;      // F/R^a at the last sample

  /// F at arclength s on the unit leaf; candidate form is analytic, the BVP form
  /// is interpolated.
  double value_at(const LeafProfile& leaf, double s_) const;
  /// L_H F at arclength s on the unit leaf.
  double jacobi_at(const LeafProfile& leaf, double s_) const;
};

/// L_H of an invariant function F(R) = f(R) on a leaf point, computed from the
/// ambient Hessian of f:  f''(1-c^2) + f'(n-2+c^2)/R + |A|^2 f,  c = nu . x/R.
double leaf_jacobi_radial(const QuadraticCone& cone, const LeafPoint& pt, double f, double df,
                          double d2f);

/// |A|^2 of the hypersurface at a profile point.
double leaf_secfund_sq(const QuadraticCone& cone, const LeafPoint& pt);

BarrierFunction build_Fa(const QuadraticCone& cone, const LeafProfile& leaf, double a,
                         BarrierVariant variant);

void write_leaf_csv(std::ostream& os, const LeafProfile& leaf);
nlohmann::json leaf_sidecar(const LeafProfile& leaf);

}  // namespace cylcone
