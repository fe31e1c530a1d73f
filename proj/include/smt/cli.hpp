#pragma once
// Command-line surface. `run_cli` parses arguments, dispatches one command,
// and maps the error taxonomy onto distinct exit codes:
//   0 success, 1 runtime/data, 2 config, 3 shape/bounds, 4 empty selection,
//   5 filesystem.
// The SMT_OUT_ROOT environment variable re-roots relative output directories,
// which keeps tests and batch jobs out of the working tree.

#include <string>
#include <vector>

namespace smt {

// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

}  // namespace smt
