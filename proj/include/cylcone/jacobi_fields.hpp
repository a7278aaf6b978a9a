#pragma once

// Invariant Jacobi fields on C x R: the u_l family, general monomial and
// homogeneous-mode expansions, exact L^2 norms and the three-annulus tests.

#include "cylcone/cone_spectra.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cylcone {

/// coef * r^{2k - gamma} * y^l.  k may be negative in images of L.
struct MonomialTerm {
  int k = 0;
  int l = 0;
  double coef = 0.0;
};

/// coef * rho^{degree} * Phi, Phi the normalized invariant link profile of that degree.
struct Mode {
  double degree = 0.0;
  double coef = 0.0;
};

enum class FieldForm { monomial, mode };

struct JacobiFieldExpansion {
  QuadraticCone cone;
  FieldForm form = FieldForm::monomial;
  std::vector<MonomialTerm> terms;
  std::vector<Mode> modes;
  std::string warning;
  double residual = 0.0;  // max |L coefficient| / max |coef| for u_l

  double coef_norm() const;
  /// Value at (r, y), r > 0; monomial form only.
  double operator()(double r, double y) const;
};

JacobiFieldExpansion monomial_field(const QuadraticCone& cone, std::vector<MonomialTerm> terms);
/// Degrees must be members of the invariant growth-rate table.
JacobiFieldExpansion mode_field(const QuadraticCone& cone, std::vector<Mode> modes);

JacobiFieldExpansion ujacobi_coeffs(const QuadraticCone& cone, int l);

JacobiFieldExpansion apply_cylinder_jacobi(const JacobiFieldExpansion& field);

/// True when every coefficient is below tol * reference.
bool is_zero(const JacobiFieldExpansion& field, double tol, double reference = 1.0);

/// Squared link norm of u_l restricted to the unit sphere, in the invariant
/// link measure normalized to total mass one (closed form via Beta integrals).
double ujacobi_link_norm_sq(const QuadraticCone& cone, int l);

/// Mode form -> monomial form (each mode m - gamma becomes a multiple of u_m).
JacobiFieldExpansion to_monomial(const JacobiFieldExpansion& field);

/// Link volume constant; the degree-0 mode with unit coefficient has unit ball norm.
double link_volume(const QuadraticCone& cone);

double ball_norm(const JacobiFieldExpansion& field, double s);
/// ln of the squared ball norm, evaluated without underflow.
double log_ball_norm_sq(const JacobiFieldExpansion& field, double log_s);

struct AnnulusNormSeq {
  double rho0 = 0.0;
  std::vector<double> norms;
};

AnnulusNormSeq annulus_norms(const JacobiFieldExpansion& field, double rho0, int imax);

enum class AnnulusCase { CaseI, CaseII, Both, Neither };

struct ThreeAnnulusReport {
  bool hyp_i = false, concl_i = false;
  bool hyp_ii = false, concl_ii = false;
  bool implication_i = false, implication_ii = false;
  AnnulusCase which = AnnulusCase::Neither;  // which conclusions hold
};

ThreeAnnulusReport three_annulus_check(const AnnulusNormSeq& seq, double d, double alpha0,
                                       double alpha0p);

/// Constants for which the lemma holds for a degree d lying a distance `gap`
/// from every other table degree.
struct ThreeAnnulusConstants {
  double alpha0 = 0, alpha0p = 0, rho0 = 0;
};
ThreeAnnulusConstants three_annulus_constants(double gap);

struct QuantitativeReport {
  double norm_b1 = 0, norm_inner = 0, norm_mid = 0;
  double bound = 0;   // (1 - lambda^A) e^{-(n+2) lambda/2}
  double margin = 0;  // bound - norm_mid
  bool holds = false;
};

QuantitativeReport quantitative_three_annulus(const JacobiFieldExpansion& field, double lambda,
                                              double A);

/// Smallest A for which the conclusion holds for every hypothesis-satisfying
/// field built from the table degrees (worst case over the two-constraint
/// linear program, attained on at most two modes).
struct ExponentCertificate {
  double A = 0;
  double worst_ratio = 0;  // sqrt(max) e^{(n+2) lambda / 2}
  double degree_lo = 0, degree_hi = 0;
};
ExponentCertificate certify_exponent(const GrowthRateTable& table, int n, double lambda);

std::vector<double> log_convexity_profile(const JacobiFieldExpansion& field,
                                          std::span<const double> t_grid);

/// Seeded random mode field with up to max_modes modes of degree m - gamma,
/// 0 <= m <= max_m, coefficients in [-1, 1].
JacobiFieldExpansion random_mode_field(const QuadraticCone& cone, std::uint64_t seed,
                                       int max_modes = 12, int max_m = 12);

/// sup over a polar grid of B_{1/2} of |r^gamma u| divided by ||u||_{L^2(B_1)}.
double l2_linfty_ratio(const JacobiFieldExpansion& mode_form, int grid = 64);

/// Largest multiple of a mode-form field that meets both ball-norm
/// hypotheses of quantitative_three_annulus at lambda.
JacobiFieldExpansion saturate_hypotheses(const JacobiFieldExpansion& field, double lambda);

struct SuiteCase {
  int index = 0;
  double margin = 0;
  bool pass = false;
};

struct QuantitativeSuite {
  double lambda = 0, gap = 0, A = 0;
  std::uint64_t seed = 0;
  std::vector<SuiteCase> cases;
  int failures = 0;
};

/// lambda from select_lambda(lambda0, C1), A from certify_exponent; fields
/// random_mode_field(seed + i) scaled by saturate_hypotheses.
QuantitativeSuite quantitative_suite(const QuadraticCone& cone, double lambda0, double C1,
                                     int count, std::uint64_t seed);
QuantitativeSuite quantitative_suite_serial(const QuadraticCone& cone, double lambda0, double C1,
                                            int count, std::uint64_t seed);

nlohmann::json field_json(const JacobiFieldExpansion& field);
JacobiFieldExpansion field_from_json(const QuadraticCone& cone, const nlohmann::json& j);

/// Seeded uniform draws on top of std::mt19937_64.
class SeededStream {
 public:
  explicit SeededStream(std::uint64_t seed) : eng_(seed) {}
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int integer(int lo, int hi) {
    return lo + static_cast<int>(eng_() % static_cast<std::uint64_t>(hi - lo + 1));
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace cylcone
