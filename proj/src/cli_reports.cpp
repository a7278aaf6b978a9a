#include "cylcone/cli_reports.hpp"

#include "cylcone/cone_spectra.hpp"
#include "cylcone/continuation_lab.hpp"
#include "cylcone/foliation.hpp"
#include "cylcone/glue_solver.hpp"
#include "cylcone/jacobi_fields.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

#ifndef CYLCONE_VERSION
#define CYLCONE_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace cylcone::cli {

const char* version() { return CYLCONE_VERSION; }

namespace {

json num_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

// One entry per config key: reader from JSON, writer to JSON.
struct Field {
  std::function<void(const json&, RunConfig&, const std::string&)> read;
  std::function<json(const RunConfig&)> write;
};

template <class T>
T get_typed(const json& v, const std::string& path) {
  if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError(path, "expected a string");
    return v.get<std::string>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (v.is_number_unsigned()) return v.get<T>();
      if (v.get<long long>() < 0) throw ConfigError(path, "expected a non-negative integer");
      return static_cast<T>(v.get<long long>());
    } else {
      return v.get<T>();
    }
  } else {
    if (v.is_null()) return std::numeric_limits<double>::quiet_NaN();
    if (!v.is_number()) throw ConfigError(path, "expected a number");
    return v.get<double>();
  }
}

template <class T>
Field field(T RunConfig::*m) {
  return {[m](const json& v, RunConfig& c, const std::string& path) { c.*m = get_typed<T>(v, path); },
          [m](const RunConfig& c) -> json {
            if constexpr (std::is_floating_point_v<T>) {
              return num_or_null(c.*m);
            } else {
              return json(c.*m);
            }
          }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> f = {
      {"command", field(&RunConfig::command)}, {"p", field(&RunConfig::p)},
      {"q", field(&RunConfig::q)},             {"l", field(&RunConfig::l)},
      {"beta", field(&RunConfig::beta)},       {"A", field(&RunConfig::A)},
      {"delta", field(&RunConfig::delta)},     {"tau", field(&RunConfig::tau)},
      {"lambda0", field(&RunConfig::lambda0)}, {"qreg", field(&RunConfig::qreg)},
      {"seed", field(&RunConfig::seed)},       {"out", field(&RunConfig::out)},
      {"j_max", field(&RunConfig::j_max)},     {"k_max", field(&RunConfig::k_max)},
      {"count", field(&RunConfig::count)},     {"C1", field(&RunConfig::C1)},
      {"nx", field(&RunConfig::nx)},           {"ny", field(&RunConfig::ny)},
      {"eps", field(&RunConfig::eps)},         {"barrier_K", field(&RunConfig::barrier_K)},
      {"Q", field(&RunConfig::Q)},             {"p_barrier", field(&RunConfig::p_barrier)},
      {"input", field(&RunConfig::input)},     {"synthetic", field(&RunConfig::synthetic)},
      {"lambda", field(&RunConfig::lambda)},   {"steps", field(&RunConfig::steps)},
      {"rho0", field(&RunConfig::rho0)},
  };
  return f;
}

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw ConfigError(path, what);
}

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

json to_json(const RunConfig& c) {
  json j = json::object();
  for (const auto& [k, f] : fields()) j[k] = f.write(c);
  return j;
}

RunConfig config_from_json(const json& j, RunConfig base) {
  if (!j.is_object()) throw ConfigError("$", "expected a JSON object");
  for (const auto& [k, v] : j.items()) {
    const auto it = fields().find(k);
    if (it == fields().end()) throw ConfigError("$." + k, "unknown field");
    it->second.read(v, base, "$." + k);
  }
  return base;
}

void validate(const RunConfig& c) {
  require(std::find(std::begin(kCommands), std::end(kCommands), c.command) != std::end(kCommands),
          "$.command", "unknown command '" + c.command + "'");
  require(c.p >= 1, "$.p", "must be >= 1");
  require(c.q >= 1, "$.q", "must be >= 1");
  require(c.l >= 0 && c.l <= 40, "$.l", "must lie in [0, 40]");
  require(c.qreg > 0 && c.qreg < 0.5, "$.qreg", "must lie in (0, 1/2)");
  require(c.lambda0 > 0 && c.lambda0 < 0.5, "$.lambda0", "must lie in (0, 1/2)");
  require(!c.out.empty(), "$.out", "must be a directory path");
  require(c.j_max >= 0 && c.k_max >= 0, "$.j_max", "harmonic cutoffs must be >= 0");
  require(c.count >= 1, "$.count", "must be >= 1");
  require(c.C1 > 0, "$.C1", "must be positive");
  require(c.nx >= 8, "$.nx", "must be >= 8");
  require(c.ny >= 8, "$.ny", "must be >= 8");
  require(c.beta > 0, "$.beta", "must be positive");
  require(c.A > 1, "$.A", "must exceed 1");
  require(c.eps > 0, "$.eps", "must be positive");
  require(c.p_barrier >= 1 && c.p_barrier % 2 == 1, "$.p_barrier", "must be an odd positive integer");
  require(c.lambda > 0, "$.lambda", "must be positive");
  require(c.steps >= 1, "$.steps", "must be >= 1");
  require(std::isnan(c.rho0) || c.rho0 > 0, "$.rho0", "must be positive");
  if (c.command == "doubling" || c.command == "degree") {
    require(!c.input.empty() || !c.synthetic.empty(), "$.input", "give an input varifold or a synthetic source");
    if (c.input.empty()) {
      const bool ok = c.synthetic == "cone" || c.synthetic == "graph" ||
                      (c.command == "doubling" && c.synthetic == "T");
      require(ok, "$.synthetic", "unknown synthetic source '" + c.synthetic + "'");
    }
  }
}

json error_json(const std::exception& e) {
  json j;
  json err;
  if (const auto* ce = dynamic_cast<const ConfigError*>(&e)) {
    err["kind"] = "Schema";
    err["field"] = ce->field();
  } else if (const auto* le = dynamic_cast<const Error*>(&e)) {
    err["kind"] = std::string(to_string(le->kind()));
  } else {
    err["kind"] = "Internal";
  }
  err["message"] = e.what();
  j["error"] = err;
  j["version"] = version();
  return j;
}

namespace {

struct Context {
  const RunConfig& cfg;
  std::ostream& log;
  fs::path dir;

  std::ofstream open(const std::string& name) const {
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) throw Error(ErrorKind::Io, "cannot write " + (dir / name).string());
    return f;
  }
  void write_json(const std::string& name, json body) const {
    body["config"] = to_json(cfg);
    body["version"] = version();
    auto f = open(name);
    f << body.dump(2) << '\n';
  }
};

std::shared_ptr<const FoliationTable> long_table(const QuadraticCone& c) {
  LeafOptions o;
  o.s_max = 1e12;
  return std::make_shared<const FoliationTable>(build_foliation(c, o));
}

WeightedNormSpec weights_of(const RunConfig& cfg, const QuadraticCone& c) {
  WeightedNormSpec w = default_weights(c, cfg.l);
  if (!std::isnan(cfg.delta)) w.delta = cfg.delta;
  if (!std::isnan(cfg.tau)) w.tau = cfg.tau;
  try {
    validate_weights(c, cfg.l, w);
  } catch (const Error& e) {
    throw ConfigError(std::isnan(cfg.tau) ? "$.delta" : "$.tau", e.what());
  }
  return w;
}

GlueParams glue_params(const RunConfig& cfg) {
  GlueParams gp;
  gp.l = cfg.l;
  gp.beta = cfg.beta;
  gp.A = cfg.A;
  gp.nx = cfg.nx;
  gp.ny = cfg.ny;
  return gp;
}

int cmd_spectrum(const Context& cx, const QuadraticCone& c) {
  const auto pairs = link_eigenvalues(c, cx.cfg.j_max, cx.cfg.k_max);
  json j = spectrum_json(c, pairs);
  const StabilityMargin sm = stability_margin(c);
  j["lambda1"] = c.lambda1;
  j["stability_margin"] = sm.margin;
  j["forbidden_interval"] = {sm.forbidden_lo, sm.forbidden_hi};
  cx.write_json("spectrum.json", j);
  cx.log << "spectrum (" << c.p << "," << c.q << "): gamma = " << fmt17(c.gamma) << ", "
         << pairs.size() << " eigenvalues\n";
  return kPass;
}

int cmd_leaf(const Context& cx, const QuadraticCone& c) {
  const FoliationTable table = build_foliation(c);
  for (Side s : {Side::plus, Side::minus}) {
    const LeafProfile& leaf = table.leaf(s);
    const std::string name = s == Side::plus ? "leaf_plus" : "leaf_minus";
    auto f = cx.open(name + ".csv");
    write_leaf_csv(f, leaf);
    cx.write_json(name + ".json", leaf_sidecar(leaf));
    cx.log << name << ": " << leaf.samples.size() << " samples, asymptotic coefficient "
           << fmt17(leaf.asymptotic_coef) << ", decay slope " << fmt17(leaf.decay_slope) << "\n";
  }
  return kPass;
}

int cmd_jacobi(const Context& cx, const QuadraticCone& c) {
  const JacobiFieldExpansion u = ujacobi_coeffs(c, cx.cfg.l);
  const JacobiFieldExpansion Lu = apply_cylinder_jacobi(u);
  double res = 0.0;
  for (const auto& t : Lu.terms) res = std::max(res, std::abs(t.coef));
  res /= std::max(u.coef_norm(), 1e-300);
  json j;
  j["l"] = cx.cfg.l;
  j["degree"] = cx.cfg.l - c.gamma;
  j["field"] = field_json(u);
  j["jacobi_residual"] = res;
  cx.write_json("jacobi.json", j);
  cx.log << "u_" << cx.cfg.l << ": " << u.terms.size() << " monomials, residual " << fmt17(res) << "\n";
  return res < 1e-10 ? kPass : kCertificateFail;
}

int cmd_three_annulus(const Context& cx, const QuadraticCone& c) {
  const QuantitativeSuite s = quantitative_suite(c, cx.cfg.lambda0, cx.cfg.C1, cx.cfg.count, cx.cfg.seed);
  auto f = cx.open("three_annulus.csv");
  f << "case,margin,pass\n";
  for (const auto& k : s.cases) f << k.index << ',' << fmt17(k.margin) << ',' << (k.pass ? 1 : 0) << '\n';
  json j;
  j["lambda"] = s.lambda;
  j["gap"] = s.gap;
  j["A"] = s.A;
  j["cases"] = s.cases.size();
  j["failures"] = s.failures;
  cx.write_json("three_annulus.json", j);
  cx.log << "three-annulus: lambda " << fmt17(s.lambda) << ", A " << fmt17(s.A) << ", "
         << s.failures << " failures in " << s.cases.size() << " cases\n";
  return s.failures == 0 ? kPass : kCertificateFail;
}

int cmd_glue(const Context& cx, const QuadraticCone& c) {
  const WeightedNormSpec w = weights_of(cx.cfg, c);
  EquivariantSurface X = build_X(long_table(c), glue_params(cx.cfg));
  X.weights = w;
  const CurvatureField m = mean_curvature(X);
  const double kappa = X.a_exp * (w.tau - 1.0) + w.delta - w.tau;
  const CertificateReport cert = weighted_certificate(m, X, w, kappa, cx.cfg.A);
  {
    auto f = cx.open("surface_X.csv");
    write_surface_csv(f, X);
  }
  cx.write_json("surface_X.json", surface_sidecar(X));
  {
    auto f = cx.open("certificate.csv");
    write_certificate_csv(f, cert);
  }
  json j;
  j["delta"] = w.delta;
  j["tau"] = w.tau;
  j["sup_m"] = m.sup_interior();
  j["kappa"] = kappa;
  j["certificate_sup"] = cert.sup;
  j["certificate_bound"] = cert.bound;
  j["pass"] = cert.pass;
  j["worst_box"] = {cert.worst_kr, cert.worst_ks};
  cx.write_json("glue.json", j);
  cx.log << "glue: sup|m| " << fmt17(m.sup_interior()) << ", weighted certificate " << fmt17(cert.sup)
         << " against bound " << fmt17(cert.bound) << (cert.pass ? " (pass)\n" : " (fail)\n");
  return cert.pass ? kPass : kCertificateFail;
}

int cmd_solve(const Context& cx, const QuadraticCone& c) {
  const WeightedNormSpec w = weights_of(cx.cfg, c);
  EquivariantSurface X = build_X(long_table(c), glue_params(cx.cfg));
  X.weights = w;
  NewtonReport nr;
  const EquivariantSurface T = newton_solve_T(X, w, {}, &nr);
  {
    auto f = cx.open("surface_T.csv");
    write_surface_csv(f, T);
  }
  cx.write_json("surface_T.json", surface_sidecar(T));
  const double drop = nr.residuals.front() / nr.residuals.back();
  json j;
  j["delta"] = w.delta;
  j["tau"] = w.tau;
  j["residuals"] = nr.residuals;
  j["iterations"] = nr.iterations;
  j["converged"] = nr.converged;
  j["residual_drop"] = drop;
  j["max_change"] = nr.max_change;
  cx.write_json("newton.json", j);
  cx.log << "solve: residual " << fmt17(nr.residuals.front()) << " -> " << fmt17(nr.residuals.back())
         << " in " << nr.iterations << " iterations (drop " << fmt17(drop) << ")\n";
  return nr.converged && drop >= 1e4 ? kPass : kCertificateFail;
}

int cmd_barrier(const Context& cx, const QuadraticCone& c) {
  BarrierSpec b;
  b.eps = cx.cfg.eps;
  b.K = cx.cfg.barrier_K;
  b.Q = cx.cfg.Q;
  b.p_barrier = cx.cfg.p_barrier;
  const BarrierSurfaceX X = build_barrier_Xeps(long_table(c), b, false);
  cx.write_json("barrier.json", barrier_json(X));
  cx.log << "barrier: " << X.negative_count << " of " << X.tested_count
         << " tested nodes negative, certificate " << fmt17(X.negativity_certificate)
         << ", sandwich margin " << fmt17(X.sandwich_margin) << "\n";
  return X.negativity_ok && X.sandwich_ok ? kPass : kCertificateFail;
}

fs::path sidecar_path(const std::string& input) {
  fs::path p(input);
  p.replace_extension(".json");
  return p;
}

SampledVarifold load_varifold(const Context& cx, const QuadraticCone& c,
                              std::shared_ptr<const FoliationTable> table, double& rho0) {
  const RunConfig& cfg = cx.cfg;
  SampledVarifold M;
  if (!cfg.input.empty()) {
    std::ifstream f(cfg.input, std::ios::binary);
    if (!f) throw ConfigError("$.input", "cannot read " + cfg.input);
    std::ifstream sf(sidecar_path(cfg.input));
    if (!sf) throw ConfigError("$.input", "missing sidecar " + sidecar_path(cfg.input).string());
    json side;
    try {
      sf >> side;
    } catch (const json::exception& e) {
      throw ConfigError("$.input", std::string("sidecar is not JSON: ") + e.what());
    }
    M = read_varifold_csv(f, side);
    if (M.cone.p != c.p || M.cone.q != c.q) {
      throw ConfigError("$.p", "varifold sidecar is for cone (" + std::to_string(M.cone.p) + "," +
                                   std::to_string(M.cone.q) + ")");
    }
    rho0 = std::isnan(cfg.rho0) ? M.rho_max : cfg.rho0;
    return M;
  }
  if (cfg.synthetic == "cone") {
    M = graph_varifold(c, [](double, double) { return 0.0; }, GraphSampling{});
    rho0 = std::isnan(cfg.rho0) ? 1.0 : cfg.rho0;
  } else if (cfg.synthetic == "T") {
    const WeightedNormSpec w = weights_of(cfg, c);
    EquivariantSurface X = build_X(table, glue_params(cfg));
    X.weights = w;
    M = surface_varifold(newton_solve_T(X, w));
    rho0 = std::isnan(cfg.rho0) ? 0.5 / cfg.A : cfg.rho0;
  } else if (cx.cfg.command == "doubling") {
    const GraphFunction P = jacobi_leaf_polynomial(ujacobi_coeffs(c, cfg.l));
    M = leaf_graph_varifold(*table, [&](double r, double y) { return 1e-6 * P(r, y); }, GraphSampling{});
    rho0 = std::isnan(cfg.rho0) ? 1.0 : cfg.rho0;
  } else {
    const GraphFunction P = jacobi_leaf_polynomial(ujacobi_coeffs(c, cfg.l));
    const double g = c.gamma;
    GraphSampling gs;
    gs.r_min = 0.05;
    M = graph_varifold(c, [&](double r, double y) { return 1e-6 * P(r, y) * std::pow(r, -g); }, gs);
    rho0 = 1.0;
  }
  auto f = cx.open("varifold.csv");
  write_varifold_csv(f, M);
  auto sf = cx.open("varifold.json");
  sf << varifold_sidecar(M).dump(2) << '\n';
  return M;
}

int cmd_doubling(const Context& cx, const QuadraticCone& c) {
  const auto table = long_table(c);
  double rho0 = 1.0;
  const SampledVarifold M = load_varifold(cx, c, table, rho0);
  DoublingOptions opt;
  opt.rho0 = rho0;
  const DoublingReport rep = doubling_sequence(M, *table, cx.cfg.lambda, cx.cfg.steps, cx.cfg.qreg, opt);
  {
    auto f = cx.open("doubling.csv");
    write_doubling_csv(f, rep);
  }
  json j = doubling_json(rep);
  j["quasi_monotonicity_constant"] = quasi_monotonicity_constant(c, cx.cfg.qreg);
  j["points"] = M.size();
  cx.write_json("doubling.json", j);
  cx.log << "doubling: " << rep.ds.size() << " radii, doubling constant " << fmt17(rep.doubling_constant)
         << ", degree fit " << fmt17(rep.degree_fit) << "\n";
  return kPass;
}

int cmd_degree(const Context& cx, const QuadraticCone& c) {
  const auto table = long_table(c);
  double rho0 = 1.0;
  const SampledVarifold M = load_varifold(cx, c, table, rho0);
  const BlowupResult br = blowup_degree(M, *table, {1.0, 1.5});
  json j;
  j["m"] = br.m;
  j["degree"] = br.degree;
  j["expansion"] = field_json(br.expansion);
  j["cluster_rms"] = br.cluster_rms;
  j["noise_floor"] = br.noise_floor;
  j["per_scale_m"] = br.per_scale_m;
  cx.write_json("degree.json", j);
  cx.log << "degree: m = " << br.m << ", degree " << fmt17(br.degree) << "\n";
  return kPass;
}

}  // namespace

int run(const RunConfig& cfg, std::ostream& log) {
  validate(cfg);
  QuadraticCone c;
  try {
    c = make_cone(cfg.p, cfg.q);
  } catch (const Error& e) {
    throw ConfigError("$.p", e.what());
  }
  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + cfg.out + ": " + ec.message());
  const Context cx{cfg, log, fs::path(cfg.out)};
  int code = kPass;
  if (cfg.command == "spectrum") code = cmd_spectrum(cx, c);
  else if (cfg.command == "leaf") code = cmd_leaf(cx, c);
  else if (cfg.command == "jacobi") code = cmd_jacobi(cx, c);
  else if (cfg.command == "three-annulus") code = cmd_three_annulus(cx, c);
  else if (cfg.command == "glue") code = cmd_glue(cx, c);
  else if (cfg.command == "solve") code = cmd_solve(cx, c);
  else if (cfg.command == "barrier") code = cmd_barrier(cx, c);
  else if (cfg.command == "doubling") code = cmd_doubling(cx, c);
  else if (cfg.command == "degree") code = cmd_degree(cx, c);
  std::ofstream summary(cx.dir / "summary.txt", std::ios::binary);
  summary << cfg.command << " exit " << code << "\n";
  return code;
}

int main_entry(int argc, char** argv, std::ostream& log, std::ostream& err) {
  RunConfig cfg;
  try {
    CLI::App app{"Equivariant minimal surfaces near C x R: spectra, leaves, gluing and continuation"};
    app.set_version_flag("--version", std::string(version()));
    std::string command, config_path;
    app.add_option("command", command, "spectrum | leaf | jacobi | three-annulus | glue | solve | barrier | doubling | degree");
    app.add_option("--config", config_path, "JSON config; flags override its values");

    // Flag values are collected as strings and applied through the JSON schema.
    std::map<std::string, std::string> given;
    const std::vector<std::pair<std::string, std::string>> flags = {
        {"--p", "p"},           {"--q", "q"},         {"--l", "l"},
        {"--beta", "beta"},     {"--A", "A"},         {"--delta", "delta"},
        {"--tau", "tau"},       {"--lambda0", "lambda0"}, {"--qreg", "qreg"},
        {"--seed", "seed"},     {"--out", "out"},     {"--j-max", "j_max"},
        {"--k-max", "k_max"},   {"--count", "count"}, {"--C1", "C1"},
        {"--nx", "nx"},         {"--ny", "ny"},       {"--eps", "eps"},
        {"--barrier-K", "barrier_K"}, {"--Q", "Q"},   {"--p-barrier", "p_barrier"},
        {"--input", "input"},   {"--synthetic", "synthetic"}, {"--lambda", "lambda"},
        {"--steps", "steps"},   {"--rho0", "rho0"},
    };
    std::map<std::string, std::string> values;
    for (const auto& [flag, key] : flags) app.add_option(flag, values[key]);
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e, log, err);
    } catch (const CLI::CallForVersion& e) {
      return app.exit(e, log, err);
    } catch (const CLI::ParseError& e) {
      throw ConfigError("$", e.what());
    }

    if (app.count("--out") > 0) cfg.out = values["out"];
    if (!config_path.empty()) {
      std::ifstream f(config_path);
      if (!f) throw ConfigError("$", "cannot read config " + config_path);
      json j;
      try {
        f >> j;
      } catch (const json::exception& e) {
        throw ConfigError("$", std::string("config is not JSON: ") + e.what());
      }
      cfg = config_from_json(j, cfg);
    }
    if (app.count("--out") > 0) cfg.out = values["out"];
    json overrides = json::object();
    for (const auto& [flag, key] : flags) {
      if (app.count(flag) == 0) continue;
      const std::string& v = values[key];
      const json probe = to_json(RunConfig{})[key];
      if (probe.is_string()) {
        overrides[key] = v;
      } else {
        try {
          overrides[key] = json::parse(v);
        } catch (const json::exception&) {
          throw ConfigError("$." + key, "cannot parse '" + v + "'");
        }
      }
    }
    cfg = config_from_json(overrides, cfg);
    if (!command.empty()) cfg.command = command;
    if (cfg.command.empty()) throw ConfigError("$.command", "missing command");
    return run(cfg, log);
  } catch (const std::exception& e) {
    const json j = error_json(e);
    err << j.dump() << '\n';
    std::error_code ec;
    if (!cfg.out.empty() && fs::is_directory(cfg.out, ec)) {
      std::ofstream f(fs::path(cfg.out) / "error.json", std::ios::binary);
      f << j.dump(2) << '\n';
    }
    return kError;
  }
}

}  // namespace cylcone::cli
