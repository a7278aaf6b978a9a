#pragma once

// Geometry and invariant-sector spectral data of the quadratic cones
// C(S^p x S^q) in R^{p+q+2}.

#include <nlohmann/json.hpp>

#include <vector>

namespace cylcone {

struct QuadraticCone {
  int p = 0;
  int q = 0;
  int n = 0;               // ambient dimension of C, p + q + 2
  double alpha = 0.0;      // half-angle of the cone ray in the (u,v) quadrant
  double tan_alpha = 0.0;  // sqrt(q/p); cos and sin of alpha are link_a and link_b
  double link_a = 0.0;     // radius of the S^p factor of the link
  double link_b = 0.0;     // radius of the S^q factor of the link
  double secfund_sq = 0.0; // |A_Sigma|^2 on the link, equals n - 2
  double gamma = 0.0;      // principal decay rate; r^{-gamma} is the slowest Jacobi field
  double lambda1 = 0.0;    // first invariant link eigenvalue of -L_Sigma, -2(n-2)
};

/// Indicial roots of gamma^2 - (n-3) gamma - (n-2+lambda) = 0.  When the
/// discriminant is negative the pair is complex: gamma_minus/gamma_plus hold
/// the common real part and `imag` the imaginary part.
struct IndicialPair {
  double lambda = 0.0;
  double gamma_minus = 0.0;
  double gamma_plus = 0.0;
  bool real = true;
  double imag = 0.0;
  int j = 0;  // harmonic degree on S^p (0 when built from a bare eigenvalue)
  int k = 0;  // harmonic degree on S^q
};

struct StabilityMargin {
  double margin = 0.0;        // (n-3)^2 + 4(n-2+lambda1)
  double forbidden_lo = 0.0;  // 3 - n + gamma
  double forbidden_hi = 0.0;  // -gamma
};

/// Homogeneous degrees of invariant Jacobi fields on C x R: {m - gamma}.
struct GrowthRateTable {
  std::vector<double> degrees;
  double cutoff = 0.0;
};

struct LambdaSelection {
  double lambda = 0.0;
  double gap = 0.0;     // min_k |ln2/lambda + 1 - degree_k| over the relevant degrees
  double bound = 0.0;   // lambda^{n-2} / C1
  int candidates = 0;
  int relevant_degrees = 0;
};

QuadraticCone make_cone(int p, int q);

/// c_a in L_C(r^a) = c_a r^{a-2} for the invariant (constant) link mode.
double cone_jacobi_constant(const QuadraticCone& cone, double a);

IndicialPair indicial_roots(const QuadraticCone& cone, double lambda);

/// Product-sphere spectrum of -L_Sigma, sorted by eigenvalue.
std::vector<IndicialPair> link_eigenvalues(const QuadraticCone& cone, int j_max, int k_max);

StabilityMargin stability_margin(const QuadraticCone& cone);

GrowthRateTable invariant_growth_rates(const QuadraticCone& cone, double cutoff);

/// Scans a uniform grid of `candidates` + 1 values of lambda in
/// [lambda0/2, lambda0] and returns the one that keeps ln2/lambda + 1
/// furthest from every relevant table degree.  Throws GapUnattainable when the
/// best gap is below lambda^{n-2}/C1.
LambdaSelection select_lambda(const GrowthRateTable& table, int n, double lambda0, double C1,
                              int candidates = 10000);

/// Gap objective of select_lambda at one candidate (infinity if no degree is relevant).
double lambda_gap(const GrowthRateTable& table, double lambda0, double lambda);

nlohmann::json spectrum_json(const QuadraticCone& cone, const std::vector<IndicialPair>& pairs);

}  // namespace cylcone
