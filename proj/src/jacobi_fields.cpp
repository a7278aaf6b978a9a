#include "cylcone/jacobi_fields.hpp"

#include "cylcone/errors.hpp"
#include "cylcone/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>

namespace cylcone {

namespace {

using i128 = __int128;

i128 gcd128(i128 a, i128 b) {
  if (a < 0) a = -a;
  if (b < 0) b = -b;
  while (b != 0) {
    const i128 t = a % b;
    a = b;
    b = t;
  }
  return a;
}

struct Rational {
  i128 num = 0, den = 1;
  void reduce() {
    if (den < 0) {
      num = -num;
      den = -den;
    }
    const i128 g = gcd128(num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
  }
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

bool integral_gamma(const QuadraticCone& c, long& g) {
  const double r = std::round(c.gamma);
  if (std::abs(c.gamma - r) > 1e-12) return false;
  g = static_cast<long>(r);
  return true;
}

// Integral of cos^A sin^B over (-pi/2, pi/2).
double trig_moment(double A, int B) {
  if (B % 2 != 0) return 0.0;
  const double x = 0.5 * (A + 1.0), y = 0.5 * (B + 1.0);
  return std::exp(std::lgamma(x) + std::lgamma(y) - std::lgamma(x + y));
}

double link_mass(const QuadraticCone& c) { return trig_moment(c.n - 2.0, 0); }

double log_sum_exp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

double JacobiFieldExpansion::coef_norm() const {
  double m = 0.0;
  for (const auto& t : terms) m = std::max(m, std::abs(t.coef));
  for (const auto& t : modes) m = std::max(m, std::abs(t.coef));
  return m;
}

double JacobiFieldExpansion::operator()(double r, double y) const {
  if (form != FieldForm::monomial) throw Error(ErrorKind::InvalidArgument, "evaluation needs monomial form");
  double s = 0.0;
  for (const auto& t : terms) s += t.coef * std::pow(r, 2.0 * t.k - cone.gamma) * std::pow(y, t.l);
  return s;
}

JacobiFieldExpansion monomial_field(const QuadraticCone& cone, std::vector<MonomialTerm> terms) {
  for (const auto& t : terms) {
    if (t.l < 0) throw Error(ErrorKind::InvalidArgument, "monomial y-power must be >= 0");
  }
  JacobiFieldExpansion f;
  f.cone = cone;
  f.form = FieldForm::monomial;
  f.terms = std::move(terms);
  return f;
}

JacobiFieldExpansion mode_field(const QuadraticCone& cone, std::vector<Mode> modes) {
  for (const auto& m : modes) {
    const double k = m.degree + cone.gamma;
    if (std::abs(k - std::round(k)) > 1e-9 || std::round(k) < 0) {
      throw Error(ErrorKind::InvalidArgument,
                  "mode degree " + std::to_string(m.degree) + " is not in the growth-rate table");
    }
  }
  JacobiFieldExpansion f;
  f.cone = cone;
  f.form = FieldForm::mode;
  f.modes = std::move(modes);
  return f;
}

JacobiFieldExpansion ujacobi_coeffs(const QuadraticCone& cone, int l) {
  if (l < 0) throw Error(ErrorKind::InvalidArgument, "l must be >= 0");
  std::vector<MonomialTerm> terms;
  long g = 0;
  if (integral_gamma(cone, g)) {
    const long nm3 = cone.n - 3, cst = cone.n - 2 + static_cast<long>(std::lround(cone.lambda1));
    Rational a{1, 1};
    terms.push_back({0, l, 1.0});
    for (int k = 0; 2 * (k + 1) <= l; ++k) {
      const long aa = 2L * (k + 1) - g;
      const long c = aa * aa + nm3 * aa - cst;
      if (c == 0) throw Error(ErrorKind::DegenerateRecurrence, "c_a vanishes at a=" + std::to_string(aa));
      a.num *= -static_cast<i128>(l - 2 * k) * (l - 2 * k - 1);
      a.den *= c;
      a.reduce();
      terms.push_back({k + 1, l - 2 * (k + 1), a.value()});
    }
  } else {
    double a = 1.0;
    terms.push_back({0, l, 1.0});
    for (int k = 0; 2 * (k + 1) <= l; ++k) {
      const double c = cone_jacobi_constant(cone, 2.0 * (k + 1) - cone.gamma);
      if (std::abs(c) < 1e-14) {
        throw Error(ErrorKind::DegenerateRecurrence, "c_a vanishes at k=" + std::to_string(k + 1));
      }
      a *= -static_cast<double>(l - 2 * k) * (l - 2 * k - 1) / c;
      terms.push_back({k + 1, l - 2 * (k + 1), a});
    }
  }
  JacobiFieldExpansion f = monomial_field(cone, std::move(terms));
  if (l - cone.gamma <= 1.0) f.warning = "l - gamma <= 1";
  const JacobiFieldExpansion Lf = apply_cylinder_jacobi(f);
  f.residual = Lf.coef_norm() / f.coef_norm();
  return f;
}

JacobiFieldExpansion apply_cylinder_jacobi(const JacobiFieldExpansion& field) {
  if (field.form != FieldForm::monomial) {
    throw Error(ErrorKind::InvalidArgument, "L acts on monomial expansions");
  }
  std::map<std::pair<int, int>, double> acc;
  for (const auto& t : field.terms) {
    // r^{-gamma} is annihilated exactly by construction of gamma.
    const double ca = t.k == 0 ? 0.0 : cone_jacobi_constant(field.cone, 2.0 * t.k - field.cone.gamma);
    if (ca != 0.0) acc[{t.k - 1, t.l}] += ca * t.coef;
    if (t.l >= 2) acc[{t.k, t.l - 2}] += static_cast<double>(t.l) * (t.l - 1) * t.coef;
  }
  std::vector<MonomialTerm> out;
  for (const auto& [key, c] : acc) out.push_back({key.first, key.second, c});
  return monomial_field(field.cone, std::move(out));
}

bool is_zero(const JacobiFieldExpansion& field, double tol, double reference) {
  return field.coef_norm() <= tol * reference;
}

double link_volume(const QuadraticCone& cone) { return static_cast<double>(cone.n); }

double ujacobi_link_norm_sq(const QuadraticCone& cone, int l) {
  const JacobiFieldExpansion u = ujacobi_coeffs(cone, l);
  double s = 0.0;
  for (const auto& a : u.terms) {
    for (const auto& b : u.terms) {
      const double A = 2.0 * (a.k + b.k) - 2.0 * cone.gamma + cone.n - 2.0;
      s += a.coef * b.coef * trig_moment(A, a.l + b.l);
    }
  }
  return s / link_mass(cone);
}

JacobiFieldExpansion to_monomial(const JacobiFieldExpansion& field) {
  if (field.form == FieldForm::monomial) return field;
  std::map<std::pair<int, int>, double> acc;
  const double V = link_volume(field.cone);
  for (const auto& m : field.modes) {
    const int deg = static_cast<int>(std::lround(m.degree + field.cone.gamma));
    const JacobiFieldExpansion u = ujacobi_coeffs(field.cone, deg);
    const double scale = m.coef * std::sqrt(V / ujacobi_link_norm_sq(field.cone, deg));
    for (const auto& t : u.terms) acc[{t.k, t.l}] += scale * t.coef;
  }
  std::vector<MonomialTerm> out;
  for (const auto& [key, c] : acc) out.push_back({key.first, key.second, c});
  return monomial_field(field.cone, std::move(out));
}

double log_ball_norm_sq(const JacobiFieldExpansion& field, double log_s) {
  const QuadraticCone& c = field.cone;
  const double n = c.n;
  if (field.form == FieldForm::mode) {
    std::vector<double> logs;
    const double V = link_volume(c);
    for (const auto& m : field.modes) {
      const double e = 2.0 * m.degree + n;
      if (!(e > 0)) throw Error(ErrorKind::DivergentNorm, "2 degree + n <= 0 for degree " + std::to_string(m.degree));
      if (m.coef == 0.0) continue;
      logs.push_back(std::log(V * m.coef * m.coef / e) + e * log_s);
    }
    return log_sum_exp(logs);
  }
  double s = 0.0;
  const double W = link_mass(c);
  const double sv = std::exp(log_s);
  for (const auto& a : field.terms) {
    for (const auto& b : field.terms) {
      const double A = 2.0 * (a.k + b.k) - 2.0 * c.gamma + n - 2.0;
      const double h = 2.0 * (a.k + b.k) - 2.0 * c.gamma + a.l + b.l + n;
      if (!(A > -1.0) || !(h > 0)) throw Error(ErrorKind::DivergentNorm, "monomial pair not square integrable");
      s += a.coef * b.coef * trig_moment(A, a.l + b.l) * std::pow(sv, h) / h;
    }
  }
  return std::log(s / W);
}

double ball_norm(const JacobiFieldExpansion& field, double s) {
  if (!(s > 0 && s <= 1.0)) throw Error(ErrorKind::InvalidArgument, "ball radius must lie in (0, 1]");
  const double l = log_ball_norm_sq(field, std::log(s));
  return std::isfinite(l) ? std::exp(0.5 * l) : 0.0;
}

AnnulusNormSeq annulus_norms(const JacobiFieldExpansion& field, double rho0, int imax) {
  if (!(rho0 > 0 && rho0 < 1)) throw Error(ErrorKind::InvalidArgument, "rho0 must lie in (0,1)");
  if (imax < 0) throw Error(ErrorKind::InvalidArgument, "imax must be >= 0");
  const QuadraticCone& c = field.cone;
  AnnulusNormSeq seq;
  seq.rho0 = rho0;
  const double lr = std::log(rho0);
  if (field.form == FieldForm::mode) {
    const double V = link_volume(c);
    for (const auto& m : field.modes) {
      if (!(2.0 * m.degree + c.n > 0)) throw Error(ErrorKind::DivergentNorm, "2 degree + n <= 0");
    }
    for (int i = 0; i <= imax; ++i) {
      double s = 0.0;
      for (const auto& m : field.modes) {
        const double d = m.degree;
        double radial;
        if (std::abs(d) < 1e-300) {
          radial = -lr;
        } else {
          radial = -std::exp(2.0 * d * i * lr) * std::expm1(2.0 * d * lr) / (2.0 * d);
        }
        s += V * m.coef * m.coef * radial;
      }
      seq.norms.push_back(std::sqrt(s));
    }
    return seq;
  }
  // Tensor Gauss-Legendre in (ln rho, polar angle off the cone factor).
  const num::GaussRule g = num::gauss_legendre(64);
  const double W = link_mass(c);
  for (int i = 0; i <= imax; ++i) {
    const double t_hi = i * lr, t_lo = (i + 1) * lr;
    double s = 0.0;
    for (int a = 0; a < 64; ++a) {
      const double t = 0.5 * (t_hi + t_lo) + 0.5 * (t_hi - t_lo) * g.nodes[a];
      const double rho = std::exp(t);
      for (int b = 0; b < 64; ++b) {
        const double phi = 0.5 * std::numbers::pi * g.nodes[b];
        const double r = rho * std::cos(phi), y = rho * std::sin(phi);
        const double u = field(r, y);
        s += g.weights[a] * g.weights[b] * u * u * std::pow(std::cos(phi), c.n - 2.0);
      }
    }
    s *= 0.5 * (t_hi - t_lo) * 0.5 * std::numbers::pi / W;
    seq.norms.push_back(std::sqrt(s));
  }
  return seq;
}

ThreeAnnulusReport three_annulus_check(const AnnulusNormSeq& seq, double d, double alpha0,
                                       double alpha0p) {
  if (seq.norms.size() < 3) throw Error(ErrorKind::InvalidArgument, "need at least 3 annulus norms");
  const double r = seq.rho0;
  const double N0 = seq.norms[0], N1 = seq.norms[1], N2 = seq.norms[2];
  ThreeAnnulusReport rep;
  rep.hyp_i = N1 >= std::pow(r, d - alpha0) * N0;
  rep.concl_i = N2 >= std::pow(r, d - alpha0p) * N1;
  rep.hyp_ii = N1 >= std::pow(r, -d - alpha0) * N2;
  rep.concl_ii = N0 >= std::pow(r, -d - alpha0p) * N1;
  rep.implication_i = !rep.hyp_i || rep.concl_i;
  rep.implication_ii = !rep.hyp_ii || rep.concl_ii;
  if (rep.concl_i && rep.concl_ii) {
    rep.which = AnnulusCase::Both;
  } else if (rep.concl_i) {
    rep.which = AnnulusCase::CaseI;
  } else if (rep.concl_ii) {
    rep.which = AnnulusCase::CaseII;
  } else {
    rep.which = AnnulusCase::Neither;
  }
  return rep;
}

ThreeAnnulusConstants three_annulus_constants(double gap) {
  if (!(gap > 0)) throw Error(ErrorKind::InvalidArgument, "degree gap must be positive");
  return {0.25 * gap, 0.5 * gap, std::min(0.5, std::pow(2.0, -1.0 / gap))};
}

QuantitativeReport quantitative_three_annulus(const JacobiFieldExpansion& field, double lambda,
                                              double A) {
  if (field.form != FieldForm::mode) throw Error(ErrorKind::InvalidArgument, "mode form required");
  if (!(lambda > 0 && lambda < 0.5)) throw Error(ErrorKind::InvalidArgument, "lambda must lie in (0, 1/2)");
  const double n = field.cone.n;
  QuantitativeReport rep;
  rep.norm_b1 = ball_norm(field, 1.0);
  rep.norm_inner = ball_norm(field, std::exp(-2.0 * lambda));
  rep.norm_mid = ball_norm(field, std::exp(-lambda));
  const double tol = 1e-12;
  if (rep.norm_b1 > 2.0 * (1.0 + tol)) {
    throw Error(ErrorKind::HypothesisFail, "||u||_{B_1} = " + std::to_string(rep.norm_b1) + " > 2");
  }
  const double inner_bound = 0.5 * std::exp(-(n + 2.0) * lambda);
  if (rep.norm_inner > inner_bound * (1.0 + tol)) {
    throw Error(ErrorKind::HypothesisFail, "inner ball norm " + std::to_string(rep.norm_inner) +
                                               " exceeds " + std::to_string(inner_bound));
  }
  rep.bound = (1.0 - std::pow(lambda, A)) * std::exp(-0.5 * (n + 2.0) * lambda);
  rep.margin = rep.bound - rep.norm_mid;
  rep.holds = rep.norm_mid <= rep.bound * (1.0 + tol);
  return rep;
}

ExponentCertificate certify_exponent(const GrowthRateTable& table, int n, double lambda) {
  if (!(lambda > 0 && lambda < 0.5)) throw Error(ErrorKind::InvalidArgument, "lambda must lie in (0, 1/2)");
  const double critical = std::log(2.0) / lambda + 1.0;
  if (table.degrees.empty() || table.degrees.back() <= critical) {
    throw Error(ErrorKind::InvalidArgument, "table must extend past ln2/lambda + 1");
  }
  const double b = 0.25 * std::exp(-2.0 * (n + 2.0) * lambda);
  std::vector<double> x;
  for (double d : table.degrees) x.push_back(std::exp(-lambda * (2.0 * d + n)));
  double best = 0.0;
  ExponentCertificate cert;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = std::min(4.0, b / (x[i] * x[i]));
    if (w * x[i] > best) {
      best = w * x[i];
      cert.degree_lo = cert.degree_hi = table.degrees[i];
    }
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double xi2 = x[i] * x[i], xj2 = x[j] * x[j];
      if (xi2 == xj2) continue;
      const double wi = (b - 4.0 * xj2) / (xi2 - xj2);
      const double wj = 4.0 - wi;
      if (wi < 0 || wj < 0) continue;
      const double val = wi * x[i] + wj * x[j];
      if (val > best) {
        best = val;
        cert.degree_lo = table.degrees[i];
        cert.degree_hi = table.degrees[j];
      }
    }
  }
  cert.worst_ratio = std::sqrt(best) * std::exp(0.5 * (n + 2.0) * lambda);
  if (!(cert.worst_ratio < 1.0)) {
    throw Error(ErrorKind::GapUnattainable, "a table degree sits at ln2/lambda + 1; no exponent works");
  }
  cert.A = std::log1p(-cert.worst_ratio) / std::log(lambda);
  return cert;
}

std::vector<double> log_convexity_profile(const JacobiFieldExpansion& field,
                                          std::span<const double> t_grid) {
  std::vector<double> f;
  for (double t : t_grid) f.push_back(log_ball_norm_sq(field, -t));
  std::vector<double> out;
  for (std::size_t i = 1; i + 1 < f.size(); ++i) {
    const double h1 = t_grid[i] - t_grid[i - 1], h2 = t_grid[i + 1] - t_grid[i];
    out.push_back(((f[i + 1] - f[i]) / h2 - (f[i] - f[i - 1]) / h1) * 2.0 * h1 * h2 / (h1 + h2));
  }
  return out;
}

JacobiFieldExpansion saturate_hypotheses(const JacobiFieldExpansion& field, double lambda) {
  if (field.form != FieldForm::mode) throw Error(ErrorKind::InvalidArgument, "mode form required");
  const double n = field.cone.n;
  const double b1 = ball_norm(field, 1.0);
  const double inner = ball_norm(field, std::exp(-2.0 * lambda));
  if (b1 == 0.0) return field;
  const double f = std::min(2.0 / b1, 0.5 * std::exp(-(n + 2.0) * lambda) / inner);
  JacobiFieldExpansion out = field;
  for (auto& m : out.modes) m.coef *= f;
  return out;
}

namespace {

QuantitativeSuite run_suite(const QuadraticCone& cone, double lambda0, double C1, int count,
                            std::uint64_t seed, bool parallel) {
  const GrowthRateTable table = invariant_growth_rates(cone, 40.0);
  const LambdaSelection sel = select_lambda(table, cone.n, lambda0, C1);
  const ExponentCertificate cert = certify_exponent(table, cone.n, sel.lambda);
  QuantitativeSuite out;
  out.lambda = sel.lambda;
  out.gap = sel.gap;
  out.A = cert.A;
  out.seed = seed;
  out.cases.resize(count);
  auto one = [&](int i) {
    try {
      const JacobiFieldExpansion u = saturate_hypotheses(
          random_mode_field(cone, seed + static_cast<std::uint64_t>(i)), sel.lambda);
      const QuantitativeReport rep = quantitative_three_annulus(u, sel.lambda, cert.A);
      out.cases[i] = {i, rep.margin, rep.holds};
    } catch (const Error&) {
      out.cases[i] = {i, std::numeric_limits<double>::quiet_NaN(), false};
    }
  };
  if (parallel) {
#pragma omp parallel for schedule(dynamic, 16) num_threads(kernel_threads())
    for (int i = 0; i < count; ++i) one(i);
  } else {
    for (int i = 0; i < count; ++i) one(i);
  }
  for (const auto& k : out.cases) out.failures += k.pass ? 0 : 1;
  return out;
}

}  // namespace

QuantitativeSuite quantitative_suite(const QuadraticCone& cone, double lambda0, double C1,
                                     int count, std::uint64_t seed) {
  return run_suite(cone, lambda0, C1, count, seed, true);
}

QuantitativeSuite quantitative_suite_serial(const QuadraticCone& cone, double lambda0, double C1,
                                            int count, std::uint64_t seed) {
  return run_suite(cone, lambda0, C1, count, seed, false);
}

JacobiFieldExpansion random_mode_field(const QuadraticCone& cone, std::uint64_t seed,
                                       int max_modes, int max_m) {
  SeededStream rng(seed);
  const int count = rng.integer(1, max_modes);
  std::map<int, double> acc;
  for (int i = 0; i < count; ++i) {
    const int m = rng.integer(0, max_m);
    acc[m] += rng.uniform(-1.0, 1.0);
  }
  std::vector<Mode> modes;
  for (const auto& [m, c] : acc) modes.push_back({m - cone.gamma, c});
  return mode_field(cone, std::move(modes));
}

double l2_linfty_ratio(const JacobiFieldExpansion& field, int grid) {
  const JacobiFieldExpansion mono = to_monomial(field);
  const double denom = ball_norm(field, 1.0);
  if (denom == 0.0) return 0.0;
  double sup = 0.0;
  for (int i = 0; i <= grid; ++i) {
    const double rho = 0.5 * i / grid;
    for (int j = 0; j <= grid; ++j) {
      const double phi = std::numbers::pi * (static_cast<double>(j) / grid - 0.5);
      const double r = rho * std::cos(phi), y = rho * std::sin(phi);
      double v = 0.0;
      for (const auto& t : mono.terms) {
        v += t.coef * (t.k == 0 ? 1.0 : std::pow(r, 2 * t.k)) * (t.l == 0 ? 1.0 : std::pow(y, t.l));
      }
      sup = std::max(sup, std::abs(v));
    }
  }
  return sup / denom;
}

nlohmann::json field_json(const JacobiFieldExpansion& field) {
  nlohmann::json j;
  auto arr = nlohmann::json::array();
  if (field.form == FieldForm::monomial) {
    j["form"] = "monomial";
    for (const auto& t : field.terms) arr.push_back({{"k", t.k}, {"l", t.l}, {"coef", t.coef}});
  } else {
    j["form"] = "mode";
    for (const auto& m : field.modes) arr.push_back({{"degree", m.degree}, {"coef", m.coef}});
  }
  j["terms"] = std::move(arr);
  return j;
}

JacobiFieldExpansion field_from_json(const QuadraticCone& cone, const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("form") || !j.contains("terms") || !j["terms"].is_array()) {
    throw Error(ErrorKind::Schema, "field JSON needs 'form' and 'terms'");
  }
  const std::string form = j["form"].get<std::string>();
  if (form == "monomial") {
    std::vector<MonomialTerm> terms;
    for (const auto& t : j["terms"]) terms.push_back({t.at("k").get<int>(), t.at("l").get<int>(), t.at("coef").get<double>()});
    return monomial_field(cone, std::move(terms));
  }
  if (form == "mode") {
    std::vector<Mode> modes;
    for (const auto& t : j["terms"]) modes.push_back({t.at("degree").get<double>(), t.at("coef").get<double>()});
    return mode_field(cone, std::move(modes));
  }
  throw Error(ErrorKind::Schema, "/form must be 'monomial' or 'mode'");
}

}  // namespace cylcone
