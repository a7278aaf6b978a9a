#include "cylcone/cone_spectra.hpp"

#include "cylcone/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace cylcone {

QuadraticCone make_cone(int p, int q) {
  if (p < 1 || q < 1) {
    throw Error(ErrorKind::InvalidDimension,
                "sphere dimensions must be >= 1, got p=" + std::to_string(p) +
                    " q=" + std::to_string(q));
  }
  QuadraticCone c;
  c.p = p;
  c.q = q;
  c.n = p + q + 2;
  const double n = c.n;
  const double disc = (n - 3.0) * (n - 3.0) - 4.0 * (n - 2.0);
  if (disc <= 0.0) {
    throw Error(ErrorKind::UnstableCone,
                "indicial discriminant " + std::to_string(disc) + " <= 0 (need p+q >= 6)");
  }
  c.link_a = std::sqrt(static_cast<double>(p) / (p + q));
  c.link_b = std::sqrt(static_cast<double>(q) / (p + q));
  c.tan_alpha = std::sqrt(static_cast<double>(q) / p);
  c.alpha = std::atan(c.tan_alpha);
  const double ba = c.link_b / c.link_a;
  c.secfund_sq = p * ba * ba + q / (ba * ba);
  c.lambda1 = -2.0 * (n - 2.0);
  // Smaller root, written to avoid cancellation: gamma = 2(n-2) / ((n-3) + sqrt(disc)).
  c.gamma = 2.0 * (n - 2.0) / ((n - 3.0) + std::sqrt(disc));
  return c;
}

double cone_jacobi_constant(const QuadraticCone& cone, double a) {
  const double n = cone.n;
  return a * a + (n - 3.0) * a - (n - 2.0 + cone.lambda1);
}

IndicialPair indicial_roots(const QuadraticCone& cone, double lambda) {
  const double n = cone.n;
  const double b = n - 3.0;
  const double c = n - 2.0 + lambda;  // roots of g^2 - b g - c
  const double disc = b * b + 4.0 * c;
  IndicialPair out;
  out.lambda = lambda;
  if (disc < 0.0) {
    out.real = false;
    out.gamma_minus = out.gamma_plus = 0.5 * b;
    out.imag = 0.5 * std::sqrt(-disc);
    return out;
  }
  const double s = std::sqrt(disc);
  // Stable quadratic formula: compute the larger-magnitude root first.
  const double big = 0.5 * (b + (b >= 0 ? s : -s));
  const double other = big != 0.0 ? -c / big : 0.0;
  out.gamma_minus = std::min(big, other);
  out.gamma_plus = std::max(big, other);
  return out;
}

std::vector<IndicialPair> link_eigenvalues(const QuadraticCone& cone, int j_max, int k_max) {
  if (j_max < 0 || k_max < 0) throw Error(ErrorKind::InvalidArgument, "j_max, k_max must be >= 0");
  const double a2 = cone.link_a * cone.link_a;
  const double b2 = cone.link_b * cone.link_b;
  std::vector<IndicialPair> out;
  out.reserve(static_cast<std::size_t>(j_max + 1) * (k_max + 1));
  for (int j = 0; j <= j_max; ++j) {
    for (int k = 0; k <= k_max; ++k) {
      const double lambda = j * (j + cone.p - 1.0) / a2 + k * (k + cone.q - 1.0) / b2 +
                            cone.lambda1;
      IndicialPair pair = indicial_roots(cone, lambda);
      pair.j = j;
      pair.k = k;
      out.push_back(pair);
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const IndicialPair& x, const IndicialPair& y) { return x.lambda < y.lambda; });
  return out;
}

StabilityMargin stability_margin(const QuadraticCone& cone) {
  const double n = cone.n;
  StabilityMargin m;
  m.margin = (n - 3.0) * (n - 3.0) + 4.0 * (n - 2.0 + cone.lambda1);
  m.forbidden_lo = 3.0 - n + cone.gamma;
  m.forbidden_hi = -cone.gamma;
  return m;
}

GrowthRateTable invariant_growth_rates(const QuadraticCone& cone, double cutoff) {
  if (cutoff < -cone.gamma - 1e-12) {
    throw Error(ErrorKind::InvalidArgument, "cutoff must be >= -gamma");
  }
  GrowthRateTable t;
  t.cutoff = cutoff;
  const int count = static_cast<int>(std::floor(cutoff + cone.gamma + 1e-12)) + 1;
  t.degrees.reserve(count);
  for (int m = 0; m < count; ++m) t.degrees.push_back(m - cone.gamma);
  return t;
}

double lambda_gap(const GrowthRateTable& table, double lambda0, double lambda) {
  const double relevant = std::log(2.0) / lambda0 + 2.0;
  const double target = std::log(2.0) / lambda + 1.0;
  double gap = std::numeric_limits<double>::infinity();
  for (double d : table.degrees) {
    if (d > relevant) continue;
    gap = std::min(gap, std::abs(target - d));
  }
  return gap;
}

LambdaSelection select_lambda(const GrowthRateTable& table, int n, double lambda0, double C1,
                              int candidates) {
  if (!(lambda0 > 0.0 && lambda0 < 0.5)) {
    throw Error(ErrorKind::InvalidArgument, "lambda0 must lie in (0, 1/2)");
  }
  if (!(C1 > 0.0)) throw Error(ErrorKind::InvalidArgument, "C1 must be positive");
  if (candidates < 1) throw Error(ErrorKind::InvalidArgument, "need at least one candidate");

  LambdaSelection best;
  best.candidates = candidates + 1;
  best.gap = -1.0;
  const double relevant = std::log(2.0) / lambda0 + 2.0;
  best.relevant_degrees = static_cast<int>(
      std::count_if(table.degrees.begin(), table.degrees.end(),
                    [&](double d) { return d <= relevant; }));
  // Scan from lambda0 downwards so ties keep the larger lambda.
  for (int i = 0; i <= candidates; ++i) {
    const double lambda = lambda0 - 0.5 * lambda0 * static_cast<double>(i) / candidates;
    const double g = lambda_gap(table, lambda0, lambda);
    if (g > best.gap) {
      best.gap = g;
      best.lambda = lambda;
    }
  }
  best.bound = std::pow(best.lambda, n - 2) / C1;
  if (!(best.gap >= best.bound)) {
    throw Error(ErrorKind::GapUnattainable,
                "best gap " + std::to_string(best.gap) + " at lambda=" +
                    std::to_string(best.lambda) + " below bound " + std::to_string(best.bound));
  }
  return best;
}

nlohmann::json spectrum_json(const QuadraticCone& cone, const std::vector<IndicialPair>& pairs) {
  nlohmann::json j;
  j["p"] = cone.p;
  j["q"] = cone.q;
  j["gamma"] = cone.gamma;
  auto arr = nlohmann::json::array();
  for (const auto& pr : pairs) {
    nlohmann::json e{{"lambda", pr.lambda}, {"gm", pr.gamma_minus}, {"gp", pr.gamma_plus}};
    if (!pr.real) e["im"] = pr.imag;
    arr.push_back(std::move(e));
  }
  j["pairs"] = std::move(arr);
  return j;
}

}  // namespace cylcone
