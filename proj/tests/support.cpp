#include "support.hpp"

#include <fstream>
#include <map>
#include <mutex>
#include <sstream>

namespace testing {

using namespace cylcone;

std::shared_ptr<const FoliationTable> table(int p, int q) {
  static std::map<std::pair<int, int>, std::shared_ptr<const FoliationTable>> cache;
  static std::mutex mu;
  std::lock_guard lock(mu);
  auto& slot = cache[{p, q}];
  if (!slot) {
    LeafOptions o;
    o.s_max = 1e12;
    slot = std::make_shared<const FoliationTable>(build_foliation(make_cone(p, q), o));
  }
  return slot;
}

const EquivariantSurface& glued_X(double A) {
  static std::map<double, EquivariantSurface> cache;
  auto it = cache.find(A);
  if (it == cache.end()) {
    GlueParams gp;
    gp.A = A;
    it = cache.emplace(A, build_X(table(), gp)).first;
  }
  return it->second;
}

namespace {
struct Solved {
  EquivariantSurface T;
  NewtonReport rep;
};
const Solved& solved() {
  static const Solved s = [] {
    Solved out;
    const EquivariantSurface& X = glued_X(10.0);
    out.T = newton_solve_T(X, X.weights, {}, &out.rep);
    return out;
  }();
  return s;
}
}  // namespace

const EquivariantSurface& solved_T() { return solved().T; }
const NewtonReport& solved_T_report() { return solved().rep; }

std::filesystem::path scratch_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("cylcone_test_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace testing
