#include "cylcone/cli_reports.hpp"

#include <iostream>

int main(int argc, char** argv) { return cylcone::cli::main_entry(argc, argv, std::cout, std::cerr); }
