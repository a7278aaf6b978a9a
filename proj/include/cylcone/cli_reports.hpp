#pragma once

// Command-line front end: configuration, command dispatch and report files.

#include "cylcone/errors.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

namespace cylcone::cli {

inline constexpr const char* kCommands[] = {"spectrum", "leaf",    "jacobi",   "three-annulus", "glue",
                                            "solve",    "barrier", "doubling", "degree"};

struct RunConfig {
  std::string command;
  int p = 3, q = 3, l = 7;
  double beta = 1.5;
  double A = 10.0;
  double delta = std::numeric_limits<double>::quiet_NaN();  // default_weights when NaN
  double tau = std::numeric_limits<double>::quiet_NaN();
  double lambda0 = 0.3;
  double qreg = 0.05;
  std::uint64_t seed = 1;
  std::string out = ".";
  // spectrum
  int j_max = 4, k_max = 4;
  // three-annulus
  int count = 1000;
  double C1 = 1.0;
  // glue / solve
  int nx = 64, ny = 96;
  // barrier
  double eps = 1e-33;
  double barrier_K = 9.0;
  double Q = 8.0;
  int p_barrier = 9;
  // doubling / degree
  std::string input;       // varifold CSV, sidecar next to it with extension .json
  std::string synthetic;   // "cone", "T" or "graph" when no input is given
  double lambda = 0.25;
  int steps = 10;
  double rho0 = std::numeric_limits<double>::quiet_NaN();
};

/// Thrown for schema violations; `field` is a JSON path such as "$.qreg".
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(ErrorKind::Schema, field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

nlohmann::json to_json(const RunConfig& c);
/// Applies the keys of j on top of base; unknown keys and wrong types throw ConfigError.
RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {});
/// Range checks for the selected command.
void validate(const RunConfig& c);

const char* version();

/// Exit codes.
inline constexpr int kPass = 0, kError = 1, kCertificateFail = 2;

/// Runs one command; files go to c.out, a summary to `log`.
int run(const RunConfig& c, std::ostream& log);

/// Parses argv (command, flags, --config), runs, and reports errors as JSON on `err`.
int main_entry(int argc, char** argv, std::ostream& log, std::ostream& err);

/// {"error": {"kind", "message", "field"?}}.
nlohmann::json error_json(const std::exception& e);

}  // namespace cylcone::cli
