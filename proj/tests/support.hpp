#pragma once

#include "cylcone/continuation_lab.hpp"
#include "cylcone/glue_solver.hpp"

#include <filesystem>
#include <memory>
#include <string>

namespace testing {

/// Foliation of (p, q) with long leaves, built once per process.
std::shared_ptr<const cylcone::FoliationTable> table(int p = 3, int q = 3);

/// X for (3,3), l = 7, beta = 1.5 at the given A on the default grid.
const cylcone::EquivariantSurface& glued_X(double A = 10.0);

/// Newton-corrected T from glued_X(10), with its report.
const cylcone::EquivariantSurface& solved_T();
const cylcone::NewtonReport& solved_T_report();

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

std::string read_file(const std::filesystem::path& p);

}  // namespace testing
