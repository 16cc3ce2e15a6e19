#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pivotmt::cli {

// Runs one command line (without the program name). Exit status: 0 on
// success, 1 on usage or configuration errors, 2 on internal failures.
int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

// Subcommand names in help order.
std::vector<std::string> subcommands();

// Long flag names ("--seed") accepted by a subcommand, "--help" included.
std::vector<std::string> flag_names(const std::string& subcommand);

}  // namespace pivotmt::cli
